"""Recurrent streaming decoder with a two-pass, gated frame step.

Each layer runs, in order: image self-attention (image tokens plus the pose
token), state self-attention, image->state cross-attention (state queries,
image keys), state->image cross-attention (image and pose queries, state
keys), then a feed-forward block on both streams. Every sublayer is pre-normed
(parameter-free layer norm) and wrapped in a residual connection.

A frame step first runs all layers ungated to collect image self-attention,
turns that into a dynamic score map, then reruns the layers from the same
inputs with the gating biases. Only the gated pass updates the memory.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .attention import AttentionWeights, attend
from .gating import UNGATED, GatingConfig, LayerBiases, active_biases, build_biases
from .motion_cue import AttentionStack, CueConfig, DynamicScoreMap, accumulate, extract
from .numerics import ContractError, RngState, ShapeError, gaussian_fill, matmul, pca_scores

CUE_SOURCES = ("fresh_pass", "previous_frame")
_LN_EPS = 1e-5


@dataclass(frozen=True)
class DecoderConfig:
    num_layers: int = 12
    heads: int = 4
    dim: int = 64
    state_tokens: int = 16
    grid: tuple = (12, 8)
    seed: int = 0
    tied_qk: bool = True

    def __post_init__(self):
        if min(self.num_layers, self.heads, self.dim, self.state_tokens, *self.grid) < 1:
            raise ContractError("all decoder sizes must be >= 1")
        if self.dim % self.heads:
            raise ContractError(f"dim {self.dim} not divisible by {self.heads} heads")

    @property
    def image_tokens(self) -> int:
        return self.grid[0] * self.grid[1]


@dataclass(frozen=True)
class FeedForward:
    w1: np.ndarray
    w2: np.ndarray

    def __call__(self, x):
        return matmul(gelu(matmul(x, self.w1)), self.w2)


@dataclass(frozen=True)
class DecoderLayerWeights:
    img_self: AttentionWeights
    state_self: AttentionWeights
    img_to_state: AttentionWeights
    state_to_img: AttentionWeights
    ffn_img: FeedForward
    ffn_state: FeedForward


@dataclass(frozen=True)
class DecoderWeights:
    config: DecoderConfig
    layers: tuple
    head: np.ndarray  # C x 3 pointmap projection


@dataclass(frozen=True)
class StateBundle:
    state: np.ndarray  # N_state x C
    pose: np.ndarray  # C, the pose token fed with every frame
    frame: int = 0
    cue_stack: AttentionStack | None = field(default=None, compare=False)


class LayerOutput(NamedTuple):
    img: np.ndarray
    state: np.ndarray
    pose: np.ndarray
    img_self_maps: np.ndarray  # H x N x N, image tokens only, rows renormalised
    img_to_state_maps: np.ndarray  # H x N_state x N


@dataclass
class FrameResult:
    frame: int
    img: np.ndarray  # F', N x C
    pose: np.ndarray  # z', C
    g: DynamicScoreMap
    stack: AttentionStack | None  # ungated image self-attention (pass A)
    snapshots: np.ndarray  # (L+1) x N x C, gated pass
    i2s_ungated: np.ndarray | None  # L x H x N_state x N
    i2s_gated: np.ndarray
    gated_stack: AttentionStack
    pointmap: np.ndarray  # N x 3


def gelu(x):
    x = np.asarray(x, dtype=np.float64)
    y = 0.5 * x * (1.0 + np.tanh(math.sqrt(2.0 / math.pi) * (x + 0.044715 * x**3)))
    return y.astype(np.float32)


def layer_norm(x):
    x = np.asarray(x, dtype=np.float64)
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    return ((x - mu) / np.sqrt(var + _LN_EPS)).astype(np.float32)


def init(cfg: DecoderConfig):
    """Seeded weights and initial memory.

    Draw order from one stream: per layer the four attention blocks
    (q, k, v, o each), image FFN (w1, w2), state FFN (w1, w2); then the state
    tokens, the pose token and the pointmap head. All at scale 1/sqrt(C).

    With ``tied_qk`` the image self-attention key projection reuses the query
    projection (w_k is still drawn, so the stream layout does not change).
    This makes Q K^T positive semi-definite, so tokens sharing a component
    attend to each other; with independent projections that attraction
    vanishes in expectation and the attention-received cue loses its sign.
    """
    rng = RngState(cfg.seed)
    c, h = cfg.dim, cfg.heads
    scale = 1.0 / math.sqrt(c)
    layers = []
    for _ in range(cfg.num_layers):
        attn = [AttentionWeights.random(rng, c, h) for _ in range(4)]
        if cfg.tied_qk:
            a = attn[0]
            attn[0] = AttentionWeights(a.w_q, a.w_q, a.w_v, a.w_o, h)
        ffns = [FeedForward(gaussian_fill(rng, c, c, scale), gaussian_fill(rng, c, c, scale)) for _ in range(2)]
        layers.append(DecoderLayerWeights(*attn, *ffns))
    state = gaussian_fill(rng, cfg.state_tokens, c, scale)
    pose = gaussian_fill(rng, 1, c, scale)[0]
    head = gaussian_fill(rng, c, 3, scale)
    return DecoderWeights(cfg, tuple(layers), head), StateBundle(state, pose)


def _renormalize(maps):
    m = maps.astype(np.float64)
    return (m / m.sum(axis=-1, keepdims=True)).astype(np.float32)


def layer_forward(lw: DecoderLayerWeights, img, state, pose, biases: LayerBiases = UNGATED) -> LayerOutput:
    img = np.asarray(img, dtype=np.float32)
    state = np.asarray(state, dtype=np.float32)
    c = lw.img_self.dim
    if img.ndim != 2 or img.shape[1] != c or state.ndim != 2 or state.shape[1] != c or pose.shape != (c,):
        raise ShapeError(f"token shapes img{img.shape} state{state.shape} pose{pose.shape} vs dim {c}")
    n = img.shape[0]
    x = np.concatenate([img, pose[None, :]])

    xn = layer_norm(x)
    upd, self_maps = attend(xn, xn, lw.img_self, biases.img_self)
    x = x + upd

    sn = layer_norm(state)
    upd, _ = attend(sn, sn, lw.state_self, biases.state_self)
    state = state + upd

    upd, i2s_maps = attend(layer_norm(state), layer_norm(x[:n]), lw.img_to_state, biases.img_to_state)
    state = state + upd

    upd, _ = attend(layer_norm(x), layer_norm(state), lw.state_to_img, biases.state_to_img)
    x = x + upd

    x = x + lw.ffn_img(layer_norm(x))
    state = state + lw.ffn_state(layer_norm(state))
    return LayerOutput(x[:n], state, x[n], _renormalize(self_maps[:, :n, :n]), i2s_maps)


class _Pass(NamedTuple):
    img: np.ndarray
    state: np.ndarray
    pose: np.ndarray
    stack: AttentionStack
    snapshots: np.ndarray
    i2s: np.ndarray


def _run_layers(weights: DecoderWeights, bundle: StateBundle, frame, gate_cfg=None, biases=None) -> _Pass:
    img, state, pose = frame, bundle.state, bundle.pose
    stack = AttentionStack()
    snaps = [img]
    i2s = []
    for idx, lw in enumerate(weights.layers):
        lb = active_biases(idx, gate_cfg, biases) if gate_cfg is not None else UNGATED
        out = layer_forward(lw, img, state, pose, lb)
        img, state, pose = out.img, out.state, out.pose
        accumulate(stack, out.img_self_maps)
        snaps.append(img)
        i2s.append(out.img_to_state_maps)
    return _Pass(img, state, pose, stack, np.stack(snaps), np.stack(i2s))


def frame_step(
    weights: DecoderWeights,
    bundle: StateBundle,
    frame,
    cue_cfg: CueConfig,
    gate_cfg: GatingConfig,
    g_override: DynamicScoreMap | None = None,
    cue_source: str = "fresh_pass",
):
    """Process one frame; returns ``(FrameResult, new StateBundle)``.

    ``g_override`` injects a score map (e.g. ground truth) in place of the
    extracted cue. With ``cue_source="previous_frame"`` the cue comes from the
    previous frame's gated pass and the ungated pass is skipped, except on the
    first frame or when an override is given.
    """
    cfg = weights.config
    frame = np.asarray(frame, dtype=np.float32)
    if frame.shape != (cfg.image_tokens, cfg.dim):
        raise ShapeError(f"frame must be {cfg.image_tokens}x{cfg.dim}, got {frame.shape}")
    if cue_source not in CUE_SOURCES:
        raise ContractError(f"cue_source must be one of {CUE_SOURCES}")
    gate_cfg.validate_depth(cfg.num_layers)

    reuse_previous = cue_source == "previous_frame" and bundle.cue_stack is not None and g_override is None
    ungated = None if reuse_previous else _run_layers(weights, bundle, frame)

    if g_override is not None:
        g = g_override
    else:
        g = extract(bundle.cue_stack if reuse_previous else ungated.stack, cue_cfg, frame=bundle.frame)
    if len(g) != cfg.image_tokens:
        raise ShapeError(f"score map has {len(g)} entries, expected {cfg.image_tokens}")

    if gate_cfg.is_noop and ungated is not None:
        gated = ungated
    else:
        gated = _run_layers(weights, bundle, frame, gate_cfg, build_biases(g, gate_cfg))

    result = FrameResult(
        frame=bundle.frame,
        img=gated.img,
        pose=gated.pose,
        g=g,
        stack=None if ungated is None else ungated.stack,
        snapshots=gated.snapshots,
        i2s_ungated=None if ungated is None else ungated.i2s,
        i2s_gated=gated.i2s,
        gated_stack=gated.stack,
        pointmap=pointmap_stub(weights, gated.img),
    )
    new_bundle = StateBundle(gated.state, bundle.pose, bundle.frame + 1, cue_stack=gated.stack)
    return result, new_bundle


def run_stream(weights, bundle, frames, cue_cfg, gate_cfg, oracle_labels=None, cue_source="fresh_pass"):
    """Sequential ``frame_step`` over a ``(T, N, C)`` stream."""
    results = []
    for t in range(len(frames)):
        g = None
        if oracle_labels is not None:
            g = DynamicScoreMap.from_labels(oracle_labels, eps=cue_cfg.eps, frame=bundle.frame)
        res, bundle = frame_step(weights, bundle, frames[t], cue_cfg, gate_cfg, g, cue_source)
        results.append(res)
    return results, bundle


def pointmap_stub(weights: DecoderWeights, img) -> np.ndarray:
    """Shape-only stand-in for a pointmap head: a fixed linear map C -> 3."""
    return matmul(img, weights.head)


def dynamic_key_mass(i2s_maps, labels, layers=None) -> float:
    """Attention mass state queries put on dynamic image keys, summed over layers, heads and queries."""
    m = np.asarray(i2s_maps, dtype=np.float64)
    sel = m if layers is None else m[list(layers)]
    return float(sel[..., np.asarray(labels, dtype=bool)].sum())


def embedding_pca(result, grid, k: int = 3) -> np.ndarray:
    """Per-snapshot intensity maps: mean of the top-``k`` PCA scores per token, shaped ``(L+1, h, w)``.

    ``result`` is a :class:`FrameResult` or its ``(L+1, N, C)`` snapshot array.
    """
    snaps = getattr(result, "snapshots", result)
    if snaps is None or len(snaps) == 0:
        raise ContractError("frame result carries no snapshots")
    if k > snaps.shape[2]:
        raise ContractError(f"k={k} exceeds token dim {snaps.shape[2]}")
    return np.stack([pca_scores(s, k)[0].mean(axis=1).reshape(grid) for s in snaps])
