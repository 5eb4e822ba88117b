"""Dense float32 linear algebra with float64 reductions.

Matrices are plain 2-D ``numpy.float32`` arrays. Every reduction is carried
out in float64 and rounded once on output.

Random numbers come from SplitMix64. For a seed ``s`` the ``i``-th 64-bit
output (``i`` counted from 1) is::

    x = (s + i * 0x9E3779B97F4A7C15) mod 2**64
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9 mod 2**64
    x = (x ^ (x >> 27)) * 0x94D049BB133111EB mod 2**64
    x = x ^ (x >> 31)

A uniform in [0, 1) is ``(x >> 11) * 2**-53``. Each normal sample consumes two
consecutive outputs ``x1, x2`` via Box-Muller,
``sqrt(-2 ln(1 - u1)) * cos(2 pi u2)``, and is scaled then rounded to float32.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels

GOLDEN_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_MASK64 = (1 << 64) - 1


class ShapeError(ValueError):
    """Operand shapes are incompatible."""


class ContractError(ValueError):
    """An input violates a documented precondition (NaN, bad range, ...)."""


class ZeroVarianceError(ValueError):
    """Standardisation of a vector with (numerically) no spread."""


def as_matrix(x, name="matrix") -> np.ndarray:
    m = np.asarray(x, dtype=np.float32)
    if m.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {m.shape}")
    return np.ascontiguousarray(m)


def matmul(a, b) -> np.ndarray:
    """``a @ b`` in float32 with a sequential float64 accumulator."""
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"inner dimensions differ: {a.shape} x {b.shape}")
    return _kernels.matmul(a, b)


def row_softmax(m) -> np.ndarray:
    x = np.asarray(m, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeError(f"row_softmax expects a 2-D matrix, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ContractError("row_softmax input contains non-finite entries")
    return _kernels.softmax_rows(np.ascontiguousarray(x))


def sigmoid(x):
    """Logistic function, evaluated without overflow for either sign."""
    x = np.asarray(x, dtype=np.float64)
    ex = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1.0 / (1.0 + ex), ex / (1.0 + ex))
    return out if out.ndim else float(out)


def zscore(v, rtol: float = 1e-6, atol: float = 1e-12) -> np.ndarray:
    """Centre to mean 0 and scale to population std 1.

    A vector whose std is below ``rtol * |mean| + atol`` is treated as
    constant and raises :class:`ZeroVarianceError`; the relative term catches
    vectors that are constant up to accumulation noise.
    """
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1 or v.shape[0] < 2:
        raise ShapeError("zscore needs a vector of length >= 2")
    mean = v.mean()
    std = v.std()
    if std <= rtol * abs(mean) + atol:
        raise ZeroVarianceError(f"zero variance (std={std:.3g}, mean={mean:.3g})")
    return (v - mean) / std


def symmetric_eigh(a, tol: float = 1e-14, max_sweeps: int = 100):
    """Cyclic Jacobi eigendecomposition, eigenvalues sorted descending.

    Ties keep their original index order (stable sort).
    """
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ShapeError(f"expected a square matrix, got {a.shape}")
    w, v = _kernels.jacobi_eigh(np.ascontiguousarray(a), tol, max_sweeps)
    order = np.argsort(-w, kind="stable")
    return w[order], v[:, order]


def fix_signs(components: np.ndarray) -> np.ndarray:
    """Flip each column so its largest-magnitude entry is positive."""
    idx = np.argmax(np.abs(components), axis=0)
    signs = np.sign(components[idx, np.arange(components.shape[1])])
    signs[signs == 0] = 1.0
    return components * signs


def pca_scores(x, k: int):
    """Project rows of ``x`` onto its top-``k`` principal directions.

    Returns ``(scores[N x k], components[C x k])`` as float64 arrays. The
    covariance is ``X_c^T X_c / N`` of the mean-centred data.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeError(f"pca_scores expects a 2-D matrix, got {x.shape}")
    n, c = x.shape
    if not 1 <= k <= min(n, c):
        raise ContractError(f"k={k} out of range for a {n}x{c} matrix")
    xc = x - x.mean(axis=0)
    _, vecs = symmetric_eigh(xc.T @ xc / n)
    comps = fix_signs(vecs[:, :k])
    return xc @ comps, comps


@dataclass
class RngState:
    """SplitMix64 stream; ``counter`` is the number of outputs consumed."""

    seed: int
    counter: int = 0

    def __post_init__(self):
        self.seed = int(self.seed) & _MASK64

    def next_u64(self, n: int) -> np.ndarray:
        idx = np.arange(self.counter + 1, self.counter + 1 + n, dtype=np.uint64)
        self.counter += n
        with np.errstate(over="ignore"):
            x = np.uint64(self.seed) + idx * GOLDEN_GAMMA
            x = (x ^ (x >> np.uint64(30))) * _MIX1
            x = (x ^ (x >> np.uint64(27))) * _MIX2
        return x ^ (x >> np.uint64(31))

    def uniform(self, n: int) -> np.ndarray:
        return (self.next_u64(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53

    def normal(self, n: int) -> np.ndarray:
        u = self.uniform(2 * n).reshape(n, 2)
        return np.sqrt(-2.0 * np.log1p(-u[:, 0])) * np.cos(2.0 * np.pi * u[:, 1])


def gaussian_fill(rng: RngState, rows: int, cols: int, scale: float) -> np.ndarray:
    if not scale > 0:
        raise ContractError(f"scale must be positive, got {scale}")
    z = rng.normal(rows * cols) * scale
    return z.astype(np.float32).reshape(rows, cols)
