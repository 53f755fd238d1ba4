"""Dense float64 vector/matrix primitives and weight initializers.

Everything in the package runs on plain numpy float64 arrays: vectors are
1-d, matrices 2-d row-major.  Double precision is deliberate -- the
central-difference gradient oracle is too noisy in float32.

All stochastic functions take an explicit numpy Generator so a run is fully
determined by (seed, config).
"""

from __future__ import annotations

import numpy as np

from .errors import ShapeError


def make_rng(seed: int) -> np.random.Generator:
    """Seedable 64-bit generator (PCG64) used everywhere randomness appears."""
    return np.random.Generator(np.random.PCG64(seed))


def matvec(w: np.ndarray, x: np.ndarray) -> np.ndarray:
    """out[i] = sum_j w[i,j] * x[j]."""
    if w.ndim != 2 or x.ndim != 1 or w.shape[1] != x.shape[0]:
        raise ShapeError(
            f"matvec: incompatible shapes {w.shape} x {x.shape}"
        )
    return w @ x


def sigmoid(x: np.ndarray) -> np.ndarray:
    """Elementwise 1/(1+e^-x), saturating (never NaN/inf on finite input)."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    neg = ~pos
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[neg])
    out[neg] = ex / (1.0 + ex)
    return out


def tanh(x: np.ndarray) -> np.ndarray:
    """Elementwise tanh."""
    return np.tanh(np.asarray(x, dtype=np.float64))


def softmax(h: np.ndarray) -> np.ndarray:
    """Shifted softmax: exp(h - max h) / sum exp(h - max h)."""
    h = np.asarray(h, dtype=np.float64)
    e = np.exp(h - h.max())
    return e / e.sum()


def gaussian_init(
    rows: int, cols: int, fan_in: int, rng: np.random.Generator
) -> np.ndarray:
    """Gaussian N(0, 1/sqrt(fan_in)) entries scaled by 0.1.

    1/sqrt(fan_in) is the variance, so the resulting std is
    0.1 * fan_in**-0.25.
    """
    if fan_in < 1:
        raise ValueError(f"fan_in must be >= 1, got {fan_in}")
    sd = float(fan_in) ** -0.25
    return 0.1 * rng.normal(0.0, sd, size=(rows, cols))


def orthogonal_init(n: int, rng: np.random.Generator) -> np.ndarray:
    """Random n x n orthogonal matrix from the SVD of a Gaussian matrix."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    g = rng.normal(0.0, 1.0, size=(n, n))
    u, _, vt = np.linalg.svd(g)
    return u @ vt
