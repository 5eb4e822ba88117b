"""Run, ablate and inspect on top of the decoder; the CLI is a thin shell over this."""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .decoder import DecoderConfig, dynamic_key_mass, embedding_pca, init, run_stream
from .gating import GATES, GatingConfig
from .motion_cue import AttentionStack, CueConfig
from .synthscene import separation_metrics

METRICS_VERSION = 1
FRAME_COLUMNS = (
    "frame", "rank_auc", "mean_gap", "g_min", "g_max",
    "dyn_mass_ungated", "dyn_mass_gated", "mass_ratio",
)
ABLATION_COLUMNS = ("layers", "gates", "beta", "rank_auc", "mean_gap", "dyn_mass", "baseline_dyn_mass", "mass_ratio")
DEFAULT_RANGES = ((0, 2), (0, 6), (0, 8), (0, 12), (6, 12))
GATE_SUBSETS = {
    "all": frozenset(GATES),
    "-self": frozenset(GATES) - {"self"},
    "-state": frozenset(GATES) - {"state"},
    "-img": frozenset(GATES) - {"img"},
}


def square_grid(n: int) -> tuple:
    """Most square factorisation ``h x w`` of ``n`` with ``h >= w``."""
    w = max(d for d in range(1, int(n**0.5) + 1) if n % d == 0)
    return n // w, w


def mass_layers(gate_cfg: GatingConfig, num_layers: int) -> range:
    """Layers over which suppression mass is summed: the gated range, or every layer if it is empty."""
    r = gate_cfg.gated_layers(num_layers)
    return r if len(r) else range(num_layers)


def fmt(x) -> str:
    if x is None or (isinstance(x, float) and np.isnan(x)):
        return ""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return f"{float(x):.9g}"


def to_csv(columns, rows) -> bytes:
    lines = [f"# motiongate-metrics v{METRICS_VERSION}", ",".join(columns)]
    lines += [",".join(fmt(r[c]) if not isinstance(r[c], str) else r[c] for c in columns) for r in rows]
    return ("\n".join(lines) + "\n").encode()


@dataclass
class RunOutput:
    results: list
    rows: list
    totals: dict


def run_experiment(frames, labels, dec_cfg: DecoderConfig, cue_cfg: CueConfig, gate_cfg: GatingConfig,
                   oracle: bool = False, cue_source: str = "fresh_pass") -> RunOutput:
    weights, bundle = init(dec_cfg)
    if oracle and labels is None:
        raise ValueError("oracle scores need a labelled stream")
    results, _ = run_stream(weights, bundle, frames, cue_cfg, gate_cfg,
                            oracle_labels=labels if oracle else None, cue_source=cue_source)
    layers = mass_layers(gate_cfg, dec_cfg.num_layers)
    rows = []
    tot_u = tot_g = 0.0
    for r in results:
        row = dict.fromkeys(FRAME_COLUMNS)
        row.update(frame=r.frame, g_min=float(r.g.g.min()), g_max=float(r.g.g.max()))
        if labels is not None and labels.any() and not labels.all():
            sep = separation_metrics(r.g, labels)
            row.update(rank_auc=sep.rank_auc, mean_gap=sep.mean_gap)
            mg = dynamic_key_mass(r.i2s_gated, labels, layers)
            row["dyn_mass_gated"] = mg
            tot_g += mg
            if r.i2s_ungated is not None:
                mu = dynamic_key_mass(r.i2s_ungated, labels, layers)
                row.update(dyn_mass_ungated=mu, mass_ratio=mg / mu)
                tot_u += mu
        rows.append(row)
    totals = {"dyn_mass_ungated": tot_u, "dyn_mass_gated": tot_g,
              "mass_ratio": tot_g / tot_u if tot_u > 0 else None}
    return RunOutput(results, rows, totals)


def _threads() -> int:
    n = int(os.environ.get("MUT3R_THREADS", "0") or 0)
    return n if n > 0 else (os.cpu_count() or 1)


def ablate(frames, labels, dec_cfg, cue_cfg, beta=1.0, ranges=DEFAULT_RANGES, subsets=tuple(GATE_SUBSETS),
           oracle=False, include_baseline=False):
    """One row per (layer range, gate subset), sorted by that key.

    Suppression is measured against a separate ungated run of the whole
    stream, summed over each row's gated layers.
    """
    if labels is None or labels.all() or not labels.any():
        raise ValueError("ablation needs a stream with both static and dynamic labels")
    L = dec_cfg.num_layers
    configs = {("baseline", "none"): GatingConfig(beta=beta, layer_range=(0, 0), gates=())}
    for lo, hi in ranges:
        for name in subsets:
            configs[(f"{lo}:{hi}", name)] = GatingConfig(beta=beta, layer_range=(lo, hi), gates=GATE_SUBSETS[name])
    for cfg in configs.values():
        cfg.validate_depth(L)

    def _one(cfg):
        return run_experiment(frames, labels, dec_cfg, cue_cfg, cfg, oracle=oracle).results

    with ThreadPoolExecutor(max_workers=_threads()) as pool:
        runs = dict(zip(configs, pool.map(_one, configs.values())))
    base = runs[("baseline", "none")]

    rows = []
    for key, cfg in configs.items():
        if key[0] == "baseline" and not include_baseline:
            continue
        layers = mass_layers(cfg, L)
        res = runs[key]
        seps = [separation_metrics(r.g, labels) for r in res]
        m = sum(dynamic_key_mass(r.i2s_gated, labels, layers) for r in res)
        mb = sum(dynamic_key_mass(r.i2s_gated, labels, layers) for r in base)
        rows.append({
            "layers": key[0], "gates": key[1], "beta": beta,
            "rank_auc": float(np.mean([s.rank_auc for s in seps])),
            "mean_gap": float(np.mean([s.mean_gap for s in seps])),
            "dyn_mass": m, "baseline_dyn_mass": mb, "mass_ratio": m / mb,
        })
    rows.sort(key=_row_key)
    return rows


def _row_key(row):
    if row["layers"] == "baseline":
        return (-1, -1, "")
    lo, hi = (int(x) for x in row["layers"].split(":"))
    return (lo, hi, row["gates"])


def received_per_layer(stack: AttentionStack) -> np.ndarray:
    """``(L, N)`` attention received per token, averaged over heads and queries, per layer."""
    return stack.as_array().astype(np.float64).mean(axis=(1, 2))


def dump_arrays(results, grid) -> dict:
    """Arrays kept for ``inspect``: per-layer received attention, gated-pass snapshots, scores."""
    recv = [received_per_layer(r.stack if r.stack is not None else r.gated_stack) for r in results]
    return {
        "grid": np.asarray(grid, dtype=np.int64),
        "received": np.stack(recv),
        "snapshots": np.stack([r.snapshots for r in results]),
        "g": np.stack([r.g.g for r in results]),
    }


def inspect_maps(dump, frame: int = -1, k: int = 3) -> dict:
    """Named 2-D maps for one frame: per-layer and averaged received attention, per-snapshot PCA intensity."""
    grid = tuple(int(x) for x in dump["grid"])
    recv = np.asarray(dump["received"])[frame]
    maps = {f"attn_layer_{i:02d}": recv[i].reshape(grid) for i in range(recv.shape[0])}
    maps["attn_mean"] = recv.mean(axis=0).reshape(grid)
    pca = embedding_pca(np.asarray(dump["snapshots"])[frame], grid, k)
    maps.update({f"pca_{i:02d}": pca[i] for i in range(pca.shape[0])})
    return maps
