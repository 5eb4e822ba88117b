"""Seeded token streams with known static/dynamic labels.

Static token ``i`` at frame ``t`` is ``rho * b + (1 - rho) * u_i + drift * n_it``
with a basis ``b`` shared by all static tokens and a per-token identity
``u_i``, both fixed for the whole stream. Dynamic tokens are
``texture[(j + t) mod D] + churn * n_jt``: a texture that slides by one patch
per frame through the dynamic region (row-major order, wrapping), plus fresh
noise. Labels therefore stay fixed while dynamic content changes every frame.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import _kernels
from .numerics import ContractError, RngState, ShapeError


@dataclass(frozen=True)
class SceneConfig:
    grid_h: int = 12
    grid_w: int = 8
    dim: int = 64
    frames: int = 10
    dyn_rect: tuple | None = (2, 2, 4, 4)  # row, col, height, width
    dyn_mask: tuple | None = None
    rho: float = 0.6
    drift: float = 0.05
    churn: float = 1.0
    seed: int = 42

    def __post_init__(self):
        if min(self.grid_h, self.grid_w, self.dim, self.frames) < 1:
            raise ContractError("grid, dim and frames must be >= 1")
        if not 0.0 <= self.rho <= 1.0:
            raise ContractError("rho must lie in [0, 1]")
        if not 0.0 <= self.drift < self.churn:
            raise ContractError("need 0 <= drift < churn")
        if self.dyn_rect is not None and self.dyn_mask is not None:
            raise ContractError("give dyn_rect or dyn_mask, not both")
        if self.dyn_rect is not None:
            r, c, h, w = self.dyn_rect
            if min(r, c, h, w) < 0 or r + h > self.grid_h or c + w > self.grid_w:
                raise ContractError(f"dynamic rectangle {self.dyn_rect} outside {self.grid_h}x{self.grid_w} grid")
        if self.dyn_mask is not None and len(self.dyn_mask) != self.tokens:
            raise ContractError("dyn_mask length must equal grid_h * grid_w")

    @property
    def tokens(self) -> int:
        return self.grid_h * self.grid_w

    def labels(self) -> np.ndarray:
        if self.dyn_mask is not None:
            return np.asarray(self.dyn_mask, dtype=bool)
        lab = np.zeros((self.grid_h, self.grid_w), dtype=bool)
        if self.dyn_rect is not None:
            r, c, h, w = self.dyn_rect
            lab[r:r + h, c:c + w] = True
        return lab.ravel()


@dataclass
class LabeledStream:
    frames: np.ndarray  # (T, N, C) float32
    labels: np.ndarray | None  # (N,) bool
    grid: tuple
    config: SceneConfig | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.frames.ndim != 3:
            raise ShapeError("frames must be (T, N, C)")
        if self.grid[0] * self.grid[1] != self.frames.shape[1]:
            raise ShapeError(f"grid {self.grid} does not match {self.frames.shape[1]} tokens")
        if self.labels is not None and self.labels.shape != (self.frames.shape[1],):
            raise ShapeError("labels must have one entry per token")


def generate(cfg: SceneConfig) -> LabeledStream:
    rng = RngState(cfg.seed)
    n, c = cfg.tokens, cfg.dim
    labels = cfg.labels()
    dyn = np.flatnonzero(labels)
    basis = rng.normal(c)
    ident = rng.normal(n * c).reshape(n, c)
    texture = rng.normal(max(len(dyn), 1) * c).reshape(-1, c)
    base = cfg.rho * basis[None, :] + (1.0 - cfg.rho) * ident
    frames = np.empty((cfg.frames, n, c), dtype=np.float32)
    for t in range(cfg.frames):
        noise = rng.normal(n * c).reshape(n, c)
        frame = base + cfg.drift * noise
        if len(dyn):
            shifted = texture[(np.arange(len(dyn)) + t) % len(dyn)]
            frame[dyn] = shifted + cfg.churn * noise[dyn]
        frames[t] = frame.astype(np.float32)
    return LabeledStream(frames, labels, (cfg.grid_h, cfg.grid_w), cfg)


class Separation(NamedTuple):
    mean_gap: float
    rank_auc: float


def separation_metrics(g, labels) -> Separation:
    """Mean score gap (dynamic minus static) and exhaustive-pair rank AUC."""
    g = np.asarray(getattr(g, "g", g), dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    if g.shape != labels.shape:
        raise ShapeError(f"{g.shape[0]} scores vs {labels.shape[0]} labels")
    pos, neg = g[labels], g[~labels]
    if not len(pos) or not len(neg):
        raise ContractError("separation metrics need both dynamic and static tokens")
    return Separation(float(pos.mean() - neg.mean()), float(_kernels.pair_auc(pos, neg)))


def frame_similarity(stream: LabeledStream):
    """Mean cosine similarity between consecutive frames for static and dynamic tokens."""
    f = stream.frames.astype(np.float64)
    a, b = f[:-1], f[1:]
    cos = (a * b).sum(-1) / (np.linalg.norm(a, axis=-1) * np.linalg.norm(b, axis=-1))
    lab = stream.labels
    return float(cos[:, ~lab].mean()), float(cos[:, lab].mean())
