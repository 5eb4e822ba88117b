"""Time the numba kernels against their numpy twins, then a full stream run per backend.

    python3 benchmarks/bench_kernels.py [--repeat 20]

Kernel timings import both implementations directly. The end-to-end timing
runs a subprocess per backend because the choice is fixed at import.
"""
import os
import subprocess
import sys
import time

import click
import numpy as np

from motiongate._kernels import _numba, _numpy

END_TO_END = """
import time
from motiongate import decoder, gating, motion_cue, synthscene
s = synthscene.generate(synthscene.SceneConfig())
w, b = decoder.init(decoder.DecoderConfig(seed=42))
cue, gate = motion_cue.CueConfig(), gating.GatingConfig()
decoder.run_stream(w, b, s.frames[:1], cue, gate)
t0 = time.perf_counter()
decoder.run_stream(w, b, s.frames, cue, gate)
print(time.perf_counter() - t0)
"""


def _cases(rng):
    f32 = lambda *s: rng.standard_normal(s).astype(np.float32)
    sym = rng.standard_normal((64, 64))
    return {
        "matmul 97x64 @ 64x64": (f32(97, 64), f32(64, 64)),
        "softmax_rows 388x97": (rng.standard_normal((388, 97)),),
        "attend 4 heads, 97 tokens": (f32(4, 97, 16), f32(4, 97, 16), f32(4, 97, 16),
                                      -rng.uniform(0, 5, (97, 97)), 0.25),
        "self_bias 96x96": (rng.uniform(1e-3, 1, 96), rng.uniform(1e-3, 1, 96), 1.0, -30.0),
        "jacobi_eigh 64x64": (sym + sym.T, 1e-12, 50),
        "pair_auc 16 x 80": (rng.standard_normal(16), rng.standard_normal(80)),
    }


def _best(fn, args, repeat):
    fn(*args)
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        times.append(time.perf_counter() - t0)
    return min(times)


@click.command()
@click.option("--repeat", default=20, show_default=True)
def main(repeat):
    rng = np.random.default_rng(0)
    click.echo(f"{'kernel':30s} {'numba ms':>10s} {'numpy ms':>10s} {'speedup':>8s}")
    for name, args in _cases(rng).items():
        kernel = name.split()[0]
        tn = _best(getattr(_numba, kernel), args, repeat)
        tp = _best(getattr(_numpy, kernel), args, repeat)
        click.echo(f"{name:30s} {tn * 1e3:10.3f} {tp * 1e3:10.3f} {tp / tn:8.2f}")

    click.echo("\nfull 10-frame gated run, 12 layers (after warm-up)")
    for backend in ("numba", "numpy"):
        env = dict(os.environ, MOTIONGATE_BACKEND=backend)
        out = subprocess.run([sys.executable, "-c", END_TO_END], env=env, check=True,
                             capture_output=True, text=True).stdout
        click.echo(f"  {backend:6s} {float(out):.3f} s")


if __name__ == "__main__":
    main()
