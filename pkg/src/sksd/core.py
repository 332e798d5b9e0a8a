"""Deterministic numerical substrate: seeded RNG, Adam, bandwidths, sphere projection.

Everything here is pure given its inputs; the only mutable state is the
numpy generator owned by an :class:`Rng`, which must not be shared across
concurrent consumers (derive substreams with :meth:`Rng.split`).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_MASK64 = (1 << 64) - 1


class DegenerateBandwidthError(ValueError):
    """All pairwise distances are zero, so no length-scale can be inferred."""


def splitmix64(seed: int, stream: int = 0) -> int:
    """Mix (seed, stream) into a decorrelated 64-bit seed (splitmix64 finalizer)."""
    z = (seed + (stream + 1) * 0x9E3779B97F4A7C15) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (z ^ (z >> 31)) & _MASK64


class Rng:
    """Seeded random stream backed by the counter-based Philox generator.

    The same seed reproduces the same stream on every platform (bit-exact
    integer draws; float draws reproducible to representation precision).
    Gaussian variates come from numpy's ziggurat implementation; this choice
    is fixed so that results are repeatable run to run.
    """

    def __init__(self, seed: int):
        self.seed = int(seed) & _MASK64
        self.gen = np.random.Generator(np.random.Philox(key=self.seed))

    def split(self, stream: int) -> "Rng":
        """Independent substream; deterministic in (seed, stream)."""
        return Rng(splitmix64(self.seed, stream))

    def __repr__(self) -> str:  # pragma: no cover
        return f"Rng(seed={self.seed})"


def lower_median(values: np.ndarray) -> float:
    """Median that never averages: for even lengths take the smaller middle element."""
    v = np.sort(np.asarray(values, dtype=np.float64).ravel())
    if v.size == 0:
        raise ValueError("median of empty array")
    return float(v[(v.size - 1) // 2])


def median_heuristic(values: np.ndarray, factor: float = 1.0,
                     floor: float | None = None) -> float:
    """Kernel length-scale from the median of pairwise absolute differences.

    Returns ``factor * lower-median(|v_i - v_j|, i<j)``, the sigma in
    ``k(a, b) = exp(-(a-b)^2 / (2 sigma^2))``.

    Args:
        values: 1-d array with at least two entries.
        factor: positive multiplier applied to the median distance.
        floor: optional lower bound on the returned sigma. Without a floor,
            an all-identical input raises :class:`DegenerateBandwidthError`.
    """
    v = np.asarray(values, dtype=np.float64).ravel()
    if v.size < 2:
        raise ValueError("median_heuristic needs at least 2 values")
    if not factor > 0:
        raise ValueError("factor must be positive")
    diff = np.abs(v[:, None] - v[None, :])
    med = lower_median(diff[np.triu_indices(v.size, k=1)])
    sigma = factor * med
    if floor is not None:
        return max(sigma, float(floor))
    if sigma <= 0.0:
        raise DegenerateBandwidthError("all values identical; pass floor= to substitute")
    return sigma


def median_distance(x: np.ndarray, factor: float = 1.0,
                    floor: float | None = None) -> float:
    """Multivariate analogue: lower-median of pairwise Euclidean distances."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    n = x.shape[0]
    if n < 2:
        raise ValueError("median_distance needs at least 2 points")
    sq = np.sum(x * x, axis=1)
    d2 = np.maximum(sq[:, None] + sq[None, :] - 2.0 * (x @ x.T), 0.0)
    med = lower_median(np.sqrt(d2[np.triu_indices(n, k=1)]))
    sigma = factor * med
    if floor is not None:
        return max(sigma, float(floor))
    if sigma <= 0.0:
        raise DegenerateBandwidthError("all points identical; pass floor= to substitute")
    return sigma


@dataclass(frozen=True)
class AdamState:
    """Adam moments for one parameter array. Immutable; adam_step returns a new state."""
    m: np.ndarray
    v: np.ndarray
    step: int
    lr: float
    beta1: float
    beta2: float
    eps: float

    @classmethod
    def zeros(cls, shape, lr: float = 1e-3, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> "AdamState":
        return cls(m=np.zeros(shape), v=np.zeros(shape), step=0,
                   lr=lr, beta1=beta1, beta2=beta2, eps=eps)


def adam_step(state: AdamState, grad: np.ndarray) -> tuple[np.ndarray, AdamState]:
    """One bias-corrected Adam update.

    Returns ``(delta, new_state)`` where ``delta`` is the additive parameter
    change that descends along ``grad`` (negate the gradient to ascend).
    """
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != state.m.shape:
        raise ValueError(f"gradient shape {grad.shape} != state shape {state.m.shape}")
    if not np.all(np.isfinite(grad)):
        idx = np.argwhere(~np.isfinite(grad))[0]
        raise ValueError(f"non-finite gradient at index {tuple(int(i) for i in idx)}")
    t = state.step + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    v = state.beta2 * state.v + (1.0 - state.beta2) * grad * grad
    m_hat = m / (1.0 - state.beta1 ** t)
    v_hat = v / (1.0 - state.beta2 ** t)
    delta = -state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return delta, AdamState(m=m, v=v, step=t, lr=state.lr, beta1=state.beta1,
                            beta2=state.beta2, eps=state.eps)


def project_rows_to_sphere(g: np.ndarray) -> np.ndarray:
    """Rescale every row of ``g`` to unit Euclidean norm. Zero rows are an error."""
    g = np.atleast_2d(np.asarray(g, dtype=np.float64))
    norms = np.linalg.norm(g, axis=1)
    bad = np.nonzero(norms == 0.0)[0]
    if bad.size:
        raise ValueError(f"row {int(bad[0])} has zero norm")
    return g / norms[:, None]


def multinomial_bootstrap_weights(n: int, rng: Rng, size: int | None = None) -> np.ndarray:
    """Bootstrap weight vectors w ~ Multinomial(n; 1/n, ..., 1/n) / n.

    Each weight is a multiple of 1/n and every vector sums to one. With
    ``size`` set, returns a (size, n) matrix of independent draws.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    p = np.full(n, 1.0 / n)
    counts = rng.gen.multinomial(n, p, size=size)
    return counts / float(n)
