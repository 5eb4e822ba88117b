"""Multi-head scaled dot-product attention with an additive logit bias.

One primitive serves image self-attention, state self-attention and both
cross-attention directions; they differ only in where queries and keys come
from and which bias kind is supplied.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .numerics import ContractError, RngState, ShapeError, gaussian_fill, matmul

BIAS_FLOOR = -30.0

BIAS_KINDS = ("full", "per_key", "per_query", "none")


@dataclass(frozen=True)
class AttentionWeights:
    w_q: np.ndarray
    w_k: np.ndarray
    w_v: np.ndarray
    w_o: np.ndarray
    heads: int

    def __post_init__(self):
        c = self.w_q.shape[0]
        if c % self.heads:
            raise ContractError(f"token dim {c} not divisible by {self.heads} heads")
        for name in ("w_q", "w_k", "w_v", "w_o"):
            w = getattr(self, name)
            if w.shape != (c, c):
                raise ShapeError(f"{name} must be {c}x{c}, got {w.shape}")
            if not np.all(np.isfinite(w)):
                raise ContractError(f"{name} has non-finite entries")

    @property
    def dim(self) -> int:
        return self.w_q.shape[0]

    @property
    def head_dim(self) -> int:
        return self.dim // self.heads

    @classmethod
    def random(cls, rng: RngState, dim: int, heads: int) -> "AttentionWeights":
        """Gaussian weights at scale 1/sqrt(dim), drawn in q, k, v, o order."""
        scale = 1.0 / math.sqrt(dim)
        ws = [gaussian_fill(rng, dim, dim, scale) for _ in range(4)]
        return cls(*ws, heads=heads)


@dataclass(frozen=True)
class LogitBias:
    """Non-positive additive logit bias.

    ``values`` is ``(N_q, N_k)`` for ``full``, ``(N_k,)`` for ``per_key``,
    ``(N_q,)`` for ``per_query`` and ignored for ``none``.
    """

    kind: str = "none"
    values: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in BIAS_KINDS:
            raise ContractError(f"unknown bias kind {self.kind!r}")
        if self.kind == "none":
            return
        v = np.asarray(self.values, dtype=np.float32)
        want = 2 if self.kind == "full" else 1
        if v.ndim != want:
            raise ShapeError(f"{self.kind} bias must be {want}-D, got shape {v.shape}")
        if not np.all(np.isfinite(v)) or v.max(initial=0.0) > 0.0 or v.min(initial=0.0) < BIAS_FLOOR:
            raise ContractError(f"bias entries must lie in [{BIAS_FLOOR}, 0]")
        object.__setattr__(self, "values", v)

    def expand(self, n_q: int, n_k: int) -> np.ndarray:
        """Materialise the bias as a dense ``(n_q, n_k)`` float32 matrix."""
        if self.kind == "none":
            return np.zeros((n_q, n_k), dtype=np.float32)
        v = self.values
        if self.kind == "full":
            if v.shape != (n_q, n_k):
                raise ShapeError(f"full bias {v.shape} vs logits {(n_q, n_k)}")
            return v
        if self.kind == "per_key":
            if v.shape != (n_k,):
                raise ShapeError(f"per-key bias {v.shape} vs {n_k} keys")
            return np.ascontiguousarray(np.broadcast_to(v[None, :], (n_q, n_k)))
        if v.shape != (n_q,):
            raise ShapeError(f"per-query bias {v.shape} vs {n_q} queries")
        return np.ascontiguousarray(np.broadcast_to(v[:, None], (n_q, n_k)))


NO_BIAS = LogitBias()


def split_heads(x: np.ndarray, heads: int) -> np.ndarray:
    n, c = x.shape
    return np.ascontiguousarray(x.reshape(n, heads, c // heads).transpose(1, 0, 2))


def merge_heads(x: np.ndarray) -> np.ndarray:
    h, n, ch = x.shape
    return np.ascontiguousarray(x.transpose(1, 0, 2).reshape(n, h * ch))


def project_qkv(tokens_q, tokens_kv, w: AttentionWeights):
    """Per-head Q, K, V, each ``(H, N, C_h)``; head h owns columns [h*C_h, (h+1)*C_h)."""
    tokens_q = np.asarray(tokens_q, dtype=np.float32)
    tokens_kv = np.asarray(tokens_kv, dtype=np.float32)
    for name, t in (("query tokens", tokens_q), ("key/value tokens", tokens_kv)):
        if t.ndim != 2 or t.shape[1] != w.dim:
            raise ShapeError(f"{name} must be N x {w.dim}, got {t.shape}")
    q = split_heads(matmul(tokens_q, w.w_q), w.heads)
    k = split_heads(matmul(tokens_kv, w.w_k), w.heads)
    v = split_heads(matmul(tokens_kv, w.w_v), w.heads)
    return q, k, v


def attention_forward(q, k, v, w_o, bias: LogitBias | None = None):
    """Return ``(out_tokens, maps)``.

    ``maps[h] = softmax(Q_h K_h^T / sqrt(C_h) + bias)`` row-wise, and
    ``out = concat_h(maps[h] V_h) @ w_o``.
    """
    if q.ndim != 3 or k.shape != v.shape or q.shape[0] != k.shape[0] or q.shape[2] != k.shape[2]:
        raise ShapeError(f"incompatible head tensors q{q.shape} k{k.shape} v{v.shape}")
    bias = NO_BIAS if bias is None else bias
    dense = bias.expand(q.shape[1], k.shape[1])
    scale = 1.0 / math.sqrt(q.shape[2])
    heads_out, maps = _kernels.attend(
        np.ascontiguousarray(q, dtype=np.float32),
        np.ascontiguousarray(k, dtype=np.float32),
        np.ascontiguousarray(v, dtype=np.float32),
        dense,
        scale,
    )
    return matmul(merge_heads(heads_out), w_o), maps


def attend(tokens_q, tokens_kv, w: AttentionWeights, bias: LogitBias | None = None):
    """Project then attend; convenience wrapper used by the decoder."""
    q, k, v = project_qkv(tokens_q, tokens_kv, w)
    return attention_forward(q, k, v, w.w_o, bias)
