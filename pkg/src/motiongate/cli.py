"""Command-line entry point: ``motiongate {gen,run,ablate,inspect}``.

Exit codes: 0 success, 2 usage/config error, 3 data error. Every output file
is written to a temp file and renamed into place.
"""
from __future__ import annotations

import io as _stdio
import json
import zipfile
from pathlib import Path

import click
import numpy as np

from . import io
from .decoder import CUE_SOURCES, DecoderConfig
from .experiment import (
    ABLATION_COLUMNS, DEFAULT_RANGES, FRAME_COLUMNS, GATE_SUBSETS,
    ablate as run_ablation, dump_arrays, inspect_maps, run_experiment, square_grid, to_csv,
)
from .gating import GATES, GatingConfig
from .motion_cue import AGGREGATIONS, CueConfig
from .numerics import ContractError
from .synthscene import SceneConfig, generate

MANIFEST_VERSION = 1


class DataError(click.ClickException):
    exit_code = 3


def _parse_grid(text):
    try:
        h, w = (int(x) for x in text.lower().split("x"))
    except ValueError:
        raise click.BadParameter(f"expected HxW, got {text!r}") from None
    return h, w


def _parse_range(text):
    try:
        lo, hi = (int(x) for x in text.split(":"))
    except ValueError:
        raise click.BadParameter(f"expected LO:HI, got {text!r}") from None
    return lo, hi


def _parse_gates(text):
    if text.strip().lower() in ("", "none"):
        return frozenset()
    gates = frozenset(g.strip() for g in text.split(","))
    if gates - set(GATES):
        raise click.BadParameter(f"gates must be drawn from {','.join(GATES)}")
    return gates


def _parse_rect(text):
    if text.strip().lower() == "none":
        return None
    try:
        rect = tuple(int(x) for x in text.split(","))
    except ValueError:
        rect = ()
    if len(rect) != 4:
        raise click.BadParameter(f"expected ROW,COL,HEIGHT,WIDTH, got {text!r}")
    return rect


def _apply_config(ctx: click.Context, params: dict, mapping: dict) -> dict:
    """Fill parameters still at their defaults from a JSON mapping of flag names."""
    by_name = {p.name: p for p in ctx.command.params}
    for key, value in mapping.items():
        name = key.lstrip("-").replace("-", "_")
        if name not in by_name:
            raise click.UsageError(f"unknown config key {key!r}")
        if ctx.get_parameter_source(name) in (click.core.ParameterSource.DEFAULT, None):
            params[name] = by_name[name].type_cast_value(ctx, value)
    return params


def _load_json(path):
    try:
        obj = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise click.UsageError(f"cannot read {path}: {exc}") from None
    if not isinstance(obj, dict):
        raise click.UsageError(f"{path} must hold a JSON object")
    return obj


def _load_stream(path):
    try:
        return io.read_stream(path)
    except OSError as exc:
        raise DataError(f"cannot read stream {path}: {exc}") from None
    except io.StreamFormatError as exc:
        raise DataError(f"corrupt stream {path}: {exc}") from None


def _dump_json(obj) -> bytes:
    return (json.dumps(obj, indent=2, sort_keys=True) + "\n").encode()


def _npz_bytes(arrays: dict) -> bytes:
    """``.npz`` archive with fixed member timestamps so identical data gives identical bytes."""
    buf = _stdio.BytesIO()
    with zipfile.ZipFile(buf, "w", compression=zipfile.ZIP_STORED) as zf:
        for name in sorted(arrays):
            member = _stdio.BytesIO()
            np.lib.format.write_array(member, np.ascontiguousarray(arrays[name]), allow_pickle=False)
            zf.writestr(zipfile.ZipInfo(f"{name}.npy", date_time=(1980, 1, 1, 0, 0, 0)), member.getvalue())
    return buf.getvalue()


@click.group(context_settings={"help_option_names": ["-h", "--help"], "show_default": True})
def main():
    """Streaming attention engine with motion-cue gating on synthetic token streams."""


@main.command()
@click.option("--grid", default="12x8", help="Patch grid HxW.")
@click.option("--dim", default=64, type=int, help="Token dimension C.")
@click.option("--frames", default=10, type=int, help="Number of frames T.")
@click.option("--dyn-rect", default="2,2,4,4", help="Dynamic rectangle ROW,COL,HEIGHT,WIDTH or 'none'.")
@click.option("--rho", default=0.6, type=float, help="Weight of the shared static basis.")
@click.option("--drift", default=0.05, type=float, help="Per-frame static noise scale.")
@click.option("--churn", default=1.0, type=float, help="Per-frame dynamic noise scale.")
@click.option("--seed", type=int, default=None, help="Generator seed (required).")
@click.option("-o", "--output", required=True, type=click.Path(dir_okay=False), help="Output .tok file.")
def gen(grid, dim, frames, dyn_rect, rho, drift, churn, seed, output):
    """Generate a labelled synthetic token stream."""
    if seed is None:
        raise click.UsageError("--seed is required; seeds are never taken from the clock")
    h, w = _parse_grid(grid)
    try:
        cfg = SceneConfig(h, w, dim, frames, _parse_rect(dyn_rect), None, rho, drift, churn, seed)
    except ContractError as exc:
        raise click.UsageError(str(exc)) from None
    stream = generate(cfg)
    scene = {"grid": f"{h}x{w}", "dim": dim, "frames": frames, "dyn_rect": dyn_rect,
             "rho": rho, "drift": drift, "churn": churn, "seed": seed}
    io.atomic_write(output + ".json", _dump_json({"scene": scene}))
    io.write_stream(output, stream.frames, stream.labels)
    click.echo(f"wrote {output}: T={frames} N={h * w} C={dim}, {int(stream.labels.sum())} dynamic tokens")


def _model_options(fn):
    opts = [
        click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None,
                     help="JSON object of flag values; explicit flags win."),
        click.option("--seed", type=int, default=None, help="Decoder weight seed (required)."),
        click.option("--grid", default=None, help="Patch grid HxW; default: most square factorisation of N."),
        click.option("--num-layers", default=12, type=int, help="Decoder layers L."),
        click.option("--heads", default=4, type=int, help="Attention heads H."),
        click.option("--state-tokens", default=16, type=int, help="State tokens."),
        click.option("--untied-qk", is_flag=True, help="Independent image self-attention key projection."),
        click.option("--aggregation", type=click.Choice(AGGREGATIONS), default="query_mean",
                     help="Attention stack reduction."),
        click.option("--no-standardize", is_flag=True, help="Skip z-scoring before the sigmoid."),
        click.option("--no-invert", is_flag=True, help="High received attention maps to high score."),
        click.option("--tau", default=4.0, type=float, help="Sigmoid temperature."),
        click.option("--eps", default=1e-3, type=float, help="Score clamp epsilon."),
        click.option("--beta", default=1.0, type=float, help="Gating sharpness."),
        click.option("--oracle-g", is_flag=True, help="Use ground-truth labels as scores."),
    ]
    for opt in reversed(opts):
        fn = opt(fn)
    return fn


def _configs(p, n_tokens, dim):
    grid = _parse_grid(p["grid"]) if p["grid"] else square_grid(n_tokens)
    if grid[0] * grid[1] != n_tokens:
        raise click.UsageError(f"grid {grid} does not match {n_tokens} tokens")
    if p["seed"] is None:
        raise click.UsageError("--seed is required")
    try:
        dec = DecoderConfig(p["num_layers"], p["heads"], dim, p["state_tokens"], grid, p["seed"], not p["untied_qk"])
        cue = CueConfig(p["aggregation"], not p["no_standardize"], not p["no_invert"], p["tau"], p["eps"])
    except ContractError as exc:
        raise click.UsageError(str(exc)) from None
    return dec, cue


def _describe(dec: DecoderConfig, cue: CueConfig, gate: GatingConfig | None = None) -> dict:
    out = {
        "decoder": {"num_layers": dec.num_layers, "heads": dec.heads, "dim": dec.dim,
                    "state_tokens": dec.state_tokens, "grid": list(dec.grid), "seed": dec.seed,
                    "tied_qk": dec.tied_qk},
        "cue": {"aggregation": cue.aggregation, "standardize": cue.standardize, "invert": cue.invert,
                "temperature": cue.temperature, "eps": cue.eps},
    }
    if gate is not None:
        out["gating"] = {"beta": gate.beta, "layer_range": list(gate.layer_range),
                         "gates": sorted(gate.gates), "bias_floor": gate.bias_floor}
    return out


def _scene_echo(stream_path):
    side = Path(str(stream_path) + ".json")
    if side.exists():
        return _load_json(side).get("scene")
    return None


@main.command()
@click.argument("stream", required=False, type=click.Path(dir_okay=False))
@_model_options
@click.option("--layers", default="0:6", help="Gated layer range LO:HI (half-open).")
@click.option("--gates", default="self,state,img", help="Comma list of gates, or 'none'.")
@click.option("--no-gates", is_flag=True, help="Disable every gate.")
@click.option("--cue-source", type=click.Choice(CUE_SOURCES), default="fresh_pass",
              help="Where the per-frame scores come from.")
@click.option("--dump", is_flag=True, help="Also write dump.npz for `inspect`.")
@click.option("--manifest", "manifest_path", type=click.Path(dir_okay=False), default=None,
              help="Replay the flags recorded in a previous manifest.")
@click.option("-o", "--out", default="run_out", type=click.Path(file_okay=False), help="Output directory.")
@click.pass_context
def run(ctx, stream, config_path, manifest_path, out, **params):
    """Stream every frame through the two-pass decoder and write scores and metrics."""
    if manifest_path:
        recorded = _load_json(manifest_path)
        params = _apply_config(ctx, params, recorded.get("flags", {}))
        stream = stream or recorded.get("stream")
    if config_path:
        params = _apply_config(ctx, params, _load_json(config_path))
    if not stream:
        raise click.UsageError("missing STREAM (or --manifest)")
    frames, labels = _load_stream(stream)
    dec, cue = _configs(params, frames.shape[1], frames.shape[2])
    gates = frozenset() if params["no_gates"] else _parse_gates(params["gates"])
    try:
        gate = GatingConfig(params["beta"], _parse_range(params["layers"]), gates)
        gate.validate_depth(dec.num_layers)
    except ContractError as exc:
        raise click.UsageError(str(exc)) from None
    if params["oracle_g"] and labels is None:
        raise DataError("--oracle-g needs a stream with a label block")

    out = Path(out)
    artifacts = {"metrics": "metrics.csv",
                 "scores": [f"scores/g_{t:03d}.pgm" for t in range(len(frames))]}
    if params["dump"]:
        artifacts["dump"] = "dump.npz"
    manifest = {
        "version": MANIFEST_VERSION,
        "command": "run",
        "stream": str(stream),
        "seed": dec.seed,
        "flags": {k: v for k, v in sorted(params.items())},
        "config": {**_describe(dec, cue, gate), "scene": _scene_echo(stream),
                   "cue_source": params["cue_source"], "oracle_g": params["oracle_g"]},
        "artifacts": artifacts,
        "status": "pending",
    }
    io.atomic_write(out / "manifest.json", _dump_json(manifest))

    res = run_experiment(frames, labels, dec, cue, gate, oracle=params["oracle_g"], cue_source=params["cue_source"])
    for r, rel in zip(res.results, artifacts["scores"]):
        io.write_pgm(out / rel, r.g.g.reshape(dec.grid))
    io.atomic_write(out / "metrics.csv", to_csv(FRAME_COLUMNS, res.rows))
    if params["dump"]:
        io.atomic_write(out / "dump.npz", _npz_bytes(dump_arrays(res.results, dec.grid)))

    manifest.update(status="complete", frames=res.rows, totals=res.totals)
    io.atomic_write(out / "manifest.json", _dump_json(manifest))
    ratio = res.totals["mass_ratio"]
    click.echo(f"{len(frames)} frames -> {out}" + (f"; dynamic-key mass ratio {ratio:.6f}" if ratio is not None else ""))


@main.command()
@click.argument("stream", type=click.Path(dir_okay=False))
@_model_options
@click.option("--ranges", default=",".join(f"{lo}:{hi}" for lo, hi in DEFAULT_RANGES),
              help="Comma list of LO:HI layer ranges.")
@click.option("--subsets", default=",".join(GATE_SUBSETS), help=f"Comma list from {', '.join(GATE_SUBSETS)}.")
@click.option("--include-baseline", is_flag=True, help="Add the ungated baseline as a row.")
@click.option("-o", "--output", required=True, type=click.Path(dir_okay=False), help="Output CSV.")
@click.pass_context
def ablate(ctx, stream, config_path, output, **params):
    """Sweep layer ranges x gate subsets; one CSV row per configuration."""
    if config_path:
        params = _apply_config(ctx, params, _load_json(config_path))
    frames, labels = _load_stream(stream)
    if labels is None or labels.all() or not labels.any():
        raise DataError("ablation needs a stream whose labels contain both classes")
    dec, cue = _configs(params, frames.shape[1], frames.shape[2])
    ranges = tuple(_parse_range(r) for r in params["ranges"].split(","))
    subsets = tuple(s.strip() for s in params["subsets"].split(","))
    if set(subsets) - set(GATE_SUBSETS):
        raise click.UsageError(f"subsets must be drawn from {', '.join(GATE_SUBSETS)}")
    try:
        rows = run_ablation(frames, labels, dec, cue, params["beta"], ranges, subsets,
                            oracle=params["oracle_g"], include_baseline=params["include_baseline"])
    except ContractError as exc:
        raise click.UsageError(str(exc)) from None
    io.atomic_write(output, to_csv(ABLATION_COLUMNS, rows))
    click.echo(f"{len(rows)} rows -> {output}")


@main.command()
@click.argument("dump", type=click.Path())
@click.option("--frame", default=-1, type=int, help="Frame index (negative counts from the end).")
@click.option("--k", "k", default=3, type=int, help="PCA components averaged per token.")
@click.option("-o", "--out", default="inspect_out", type=click.Path(file_okay=False), help="Output directory.")
def inspect(dump, frame, k, out):
    """Write per-layer attention-received and PCA intensity maps as PGM images."""
    path = Path(dump)
    if path.is_dir():
        path = path / "dump.npz"
    try:
        with np.load(path, allow_pickle=False) as data:
            arrays = {name: data[name] for name in data.files}
    except (OSError, ValueError, zipfile.BadZipFile) as exc:
        raise DataError(f"cannot read dump {path}: {exc}") from None
    missing = {"grid", "received", "snapshots"} - set(arrays)
    if missing:
        raise DataError(f"dump {path} lacks {sorted(missing)}")
    n_frames = arrays["received"].shape[0]
    if not -n_frames <= frame < n_frames:
        raise click.UsageError(f"frame {frame} out of range for {n_frames} frames")
    try:
        maps = inspect_maps(arrays, frame, k)
    except ContractError as exc:
        raise click.UsageError(str(exc)) from None
    out = Path(out)
    rows = []
    for name, values in maps.items():
        lo, hi = io.write_pgm(out / f"{name}.pgm", values)
        rows.append({"name": name, "min": lo, "max": hi})
    io.atomic_write(out / "maps.csv", to_csv(("name", "min", "max"), rows))
    click.echo(f"{len(maps)} maps -> {out}")
