"""Per-token dynamic scores from stacked image self-attention maps."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .numerics import ContractError, ShapeError, ZeroVarianceError, sigmoid, zscore

AGGREGATIONS = ("query_mean", "key_mean")


@dataclass
class AttentionStack:
    """Ungated image self-attention maps, one ``(H, N, N)`` array per layer."""

    layers: list = field(default_factory=list)

    def __len__(self):
        return len(self.layers)

    @property
    def heads(self):
        return self.layers[0].shape[0] if self.layers else None

    @property
    def tokens(self):
        return self.layers[0].shape[1] if self.layers else None

    def as_array(self) -> np.ndarray:
        if not self.layers:
            raise ContractError("attention stack is empty")
        return np.stack(self.layers)


def accumulate(stack: AttentionStack, maps) -> AttentionStack:
    """Append one layer's maps (in place) and return the stack."""
    maps = np.asarray(maps, dtype=np.float32)
    if maps.ndim != 3 or maps.shape[1] != maps.shape[2]:
        raise ShapeError(f"self-attention maps must be (H, N, N), got {maps.shape}")
    if stack.layers and maps.shape != stack.layers[0].shape:
        raise ShapeError(f"maps {maps.shape} do not match stack layers {stack.layers[0].shape}")
    stack.layers.append(maps)
    return stack


def aggregate(stack: AttentionStack, mode: str = "query_mean") -> np.ndarray:
    """Average the stack down to one value per token.

    ``key_mean`` averages each query's row over keys, layers and heads. On
    row-stochastic maps this is exactly ``1/N_k`` for every token, so it
    carries no information; it is kept to make that fact checkable.
    ``query_mean`` averages each key's column instead, i.e. the attention a
    token receives.
    """
    a = stack.as_array().astype(np.float64)
    if mode == "key_mean":
        return a.mean(axis=(0, 1, 3))
    if mode == "query_mean":
        return a.mean(axis=(0, 1, 2))
    raise ContractError(f"unknown aggregation {mode!r}")


@dataclass(frozen=True)
class CueConfig:
    aggregation: str = "query_mean"
    standardize: bool = True
    invert: bool = True
    temperature: float = 4.0
    eps: float = 1e-3

    def __post_init__(self):
        if self.aggregation not in AGGREGATIONS:
            raise ContractError(f"aggregation must be one of {AGGREGATIONS}")
        if not self.temperature > 0:
            raise ContractError("temperature must be positive")
        if not 0 < self.eps < 0.5:
            raise ContractError("eps must lie in (0, 0.5)")


@dataclass(frozen=True)
class DynamicScoreMap:
    g: np.ndarray
    frame: int = 0
    eps: float = 1e-3

    def __post_init__(self):
        g = np.asarray(self.g, dtype=np.float64)
        if g.ndim != 1:
            raise ShapeError("score map must be a vector")
        if np.any(g < self.eps) or np.any(g > 1.0 - self.eps):
            raise ContractError(f"scores must lie in [{self.eps}, {1 - self.eps}]")
        object.__setattr__(self, "g", g)

    def __len__(self):
        return self.g.shape[0]

    @classmethod
    def from_labels(cls, labels, eps: float = 1e-3, frame: int = 0) -> "DynamicScoreMap":
        """Ground-truth scores: dynamic tokens at 1-eps, static at eps."""
        lab = np.asarray(labels, dtype=bool)
        return cls(np.where(lab, 1.0 - eps, eps), frame=frame, eps=eps)


def normalize(a_bar, cfg: CueConfig, frame: int = 0) -> DynamicScoreMap:
    """``g = clip(sigmoid(tau * s), eps, 1 - eps)`` with ``s`` the signed, optionally standardised input."""
    a_bar = np.asarray(a_bar, dtype=np.float64)
    if not np.all(np.isfinite(a_bar)):
        raise ContractError("aggregate contains non-finite values")
    s = a_bar
    if cfg.standardize:
        try:
            s = zscore(a_bar)
        except ZeroVarianceError:
            s = np.zeros_like(a_bar)
    if cfg.invert:
        s = -s
    g = np.clip(sigmoid(cfg.temperature * s), cfg.eps, 1.0 - cfg.eps)
    return DynamicScoreMap(g, frame=frame, eps=cfg.eps)


def extract(stack: AttentionStack, cfg: CueConfig, frame: int = 0) -> DynamicScoreMap:
    return normalize(aggregate(stack, cfg.aggregation), cfg, frame=frame)
