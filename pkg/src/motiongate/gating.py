"""Turn a dynamic score map into directional log-biases and schedule them by layer.

Three gates exist:

* ``self``  image self-attention, pairwise ``beta * log(1 - (1 - g_q) g_k)``
* ``state`` image -> state cross-attention, per image key ``beta * log(1 - g_k)``
* ``img``   state -> image cross-attention, per image query ``beta * log(1 - g_q)``

State self-attention is never gated. Note that a per-query bias shifts a whole
softmax row by a constant, so the ``img`` gate leaves attention maps unchanged
up to rounding.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .attention import BIAS_FLOOR, NO_BIAS, LogitBias
from .motion_cue import DynamicScoreMap
from .numerics import ContractError

GATES = ("self", "state", "img")


@dataclass(frozen=True)
class GatingConfig:
    beta: float = 1.0
    layer_range: tuple = (0, 6)
    gates: frozenset = frozenset(GATES)
    bias_floor: float = BIAS_FLOOR

    def __post_init__(self):
        lo, hi = (int(x) for x in self.layer_range)
        object.__setattr__(self, "layer_range", (lo, hi))
        object.__setattr__(self, "gates", frozenset(self.gates))
        if not self.beta >= 0:
            raise ContractError("beta must be non-negative")
        if not 0 <= lo <= hi:
            raise ContractError(f"invalid layer range [{lo}, {hi})")
        unknown = self.gates - set(GATES)
        if unknown:
            raise ContractError(f"unknown gates {sorted(unknown)}")
        if self.bias_floor > 0:
            raise ContractError("bias_floor must be <= 0")

    def validate_depth(self, num_layers: int):
        if self.layer_range[1] > num_layers:
            raise ContractError(f"layer range {self.layer_range} exceeds {num_layers} layers")

    @property
    def is_noop(self) -> bool:
        lo, hi = self.layer_range
        return self.beta == 0 or lo == hi or not self.gates

    def gated_layers(self, num_layers: int) -> range:
        lo, hi = self.layer_range
        return range(lo, min(hi, num_layers))


def _scores(g) -> np.ndarray:
    return g.g if isinstance(g, DynamicScoreMap) else np.asarray(g, dtype=np.float64)


def self_bias(g, beta: float, floor: float = BIAS_FLOOR, g_keys=None) -> np.ndarray:
    """Pairwise ``(N_q, N_k)`` bias; ``g_keys`` defaults to the query scores."""
    gq = np.ascontiguousarray(_scores(g))
    gk = gq if g_keys is None else np.ascontiguousarray(_scores(g_keys))
    return _kernels.self_bias(gq, gk, float(beta), float(floor))


def _log_complement(g, beta: float, floor: float) -> np.ndarray:
    val = beta * np.log(1.0 - _scores(g))
    return np.maximum(val, floor).astype(np.float32)


def state_bias(g, beta: float, floor: float = BIAS_FLOOR) -> np.ndarray:
    """Per-key bias, broadcast over every state query."""
    return _log_complement(g, beta, floor)


def img_bias(g, beta: float, floor: float = BIAS_FLOOR) -> np.ndarray:
    """Per-query bias, broadcast along the state keys."""
    return _log_complement(g, beta, floor)


@dataclass(frozen=True)
class GatingBiasSet:
    self_bias: np.ndarray
    state_bias: np.ndarray
    img_bias: np.ndarray


@dataclass(frozen=True)
class LayerBiases:
    img_self: LogitBias = NO_BIAS
    state_self: LogitBias = NO_BIAS
    img_to_state: LogitBias = NO_BIAS
    state_to_img: LogitBias = NO_BIAS


UNGATED = LayerBiases()


def build_biases(g: DynamicScoreMap, cfg: GatingConfig, pose_tokens: int = 1) -> GatingBiasSet:
    """Biases for one frame.

    ``pose_tokens`` extra never-suppressed tokens (score ``eps``) are appended
    to the image side of the self and state->image directions.
    """
    gs = _scores(g)
    eps = g.eps if isinstance(g, DynamicScoreMap) else 1e-3
    ext = np.concatenate([gs, np.full(pose_tokens, eps)])
    return GatingBiasSet(
        self_bias=self_bias(ext, cfg.beta, cfg.bias_floor),
        state_bias=state_bias(gs, cfg.beta, cfg.bias_floor),
        img_bias=img_bias(ext, cfg.beta, cfg.bias_floor),
    )


def active_biases(layer_idx: int, cfg: GatingConfig, biases: GatingBiasSet | None) -> LayerBiases:
    lo, hi = cfg.layer_range
    if biases is None or not lo <= layer_idx < hi:
        return UNGATED
    return LayerBiases(
        img_self=LogitBias("full", biases.self_bias) if "self" in cfg.gates else NO_BIAS,
        img_to_state=LogitBias("per_key", biases.state_bias) if "state" in cfg.gates else NO_BIAS,
        state_to_img=LogitBias("per_query", biases.img_bias) if "img" in cfg.gates else NO_BIAS,
    )
