"""Kernel Stein discrepancies on one-dimensional slices, plus the KSD baseline.

The pairwise building block for the sliced family is

    h(x, y; r, g) = s(x) k(a, b) s(y) + (r'g) s(y) dk/da + (r'g) s(x) dk/db
                    + (r'g)^2 d2k/dadb,

with a = x'g, b = y'g, s(.) = r' score(.), and a 1-d RBF kernel
k(a, b) = exp(-(a-b)^2 / (2 sigma^2)). Sigma comes from the median heuristic
on the projected scalars unless overridden, and is treated as a constant by
every gradient here. Summing h over slices gives the U-/V-statistics, the
bootstrap null draws, and the analytic gradients used to optimize the test
directions g (and, in the "rg" variant, the slicing directions r).
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import _kernels
from .core import (AdamState, Rng, adam_step, median_distance, median_heuristic,
                   project_rows_to_sphere)
from .targets import ScoreModel

_UNIT_TOL = 1e-8


def rbf_1d(a, b, sigma: float):
    """1-d RBF kernel with analytic derivatives.

    Returns (k, dk_da, dk_db, d2k_dadb) for k = exp(-(a-b)^2 / (2 sigma^2)).
    Accepts scalars or broadcastable arrays.
    """
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    t = 1.0 / (sigma * sigma)
    d = np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)
    k = np.exp(-0.5 * d * d * t)
    dk_da = -d * t * k
    d2k = (t - d * d * t * t) * k
    return k, dk_da, -dk_da, d2k


def _check_unit(v: np.ndarray, name: str):
    n = np.linalg.norm(v)
    if abs(n - 1.0) > _UNIT_TOL:
        raise ValueError(f"{name} must be unit-norm (|{name}| = {n:.6g})")


def ksd_up(model: ScoreModel, x: np.ndarray, y: np.ndarray, sigma: float) -> float:
    """KSD pair term u_p(x, y) with the multivariate RBF kernel.

    u_p = s(x)'s(y) k + s(x)' grad_y k + s(y)' grad_x k + tr(grad_x grad_y k).
    """
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    t = 1.0 / (sigma * sigma)
    d = x - y
    sq = float(d @ d)
    k = np.exp(-0.5 * sq * t)
    sx = model.score(x)
    sy = model.score(y)
    # grad_x k = -d t k, grad_y k = +d t k
    return float(sx @ sy * k + (sx @ d) * t * k - (sy @ d) * t * k
                 + (model.dim * t - sq * t * t) * k)


def ksd_stein_matrix(model: ScoreModel, x: np.ndarray, sigma: float) -> np.ndarray:
    """Full (n, n) matrix of u_p values for samples x (vectorized)."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    n, dim = x.shape
    t = 1.0 / (sigma * sigma)
    s = model.score(x)
    sq = np.sum(x * x, axis=1)
    d2 = np.maximum(sq[:, None] + sq[None, :] - 2.0 * (x @ x.T), 0.0)
    k = np.exp(-0.5 * d2 * t)
    sxy = s @ s.T
    # P_ij = s_i'(x_i - x_j), giving the s(x)' grad_y k term; its transpose gives the other
    p = np.sum(s * x, axis=1)[:, None] - s @ x.T
    return (sxy + (p + p.T) * t + (dim * t - d2 * t * t)) * k


def h_slice(model: ScoreModel, x: np.ndarray, y: np.ndarray,
            r: np.ndarray, g: np.ndarray, sigma: float) -> float:
    """Sliced Stein pair term h(x, y; r, g); symmetric in (x, y)."""
    r = np.asarray(r, dtype=np.float64).ravel()
    g = np.asarray(g, dtype=np.float64).ravel()
    _check_unit(r, "r")
    _check_unit(g, "g")
    a = float(np.asarray(x, dtype=np.float64).ravel() @ g)
    b = float(np.asarray(y, dtype=np.float64).ravel() @ g)
    sx = float(r @ model.score(x))
    sy = float(r @ model.score(y))
    c = float(r @ g)
    k, ka, kb, kab = rbf_1d(a, b, sigma)
    return float(sx * k * sy + c * sy * ka + c * sx * kb + c * c * kab)


def xi_slice(model: ScoreModel, x: np.ndarray, z: float,
             r: np.ndarray, g: np.ndarray, sigma: float) -> float:
    """Stein feature xi(x, .; r, g) evaluated at projected point z."""
    r = np.asarray(r, dtype=np.float64).ravel()
    g = np.asarray(g, dtype=np.float64).ravel()
    _check_unit(r, "r")
    _check_unit(g, "g")
    a = float(np.asarray(x, dtype=np.float64).ravel() @ g)
    sx = float(r @ model.score(x))
    c = float(r @ g)
    k, ka, _, _ = rbf_1d(a, z, sigma)
    return float(sx * k + c * ka)


@dataclass
class SliceConfig:
    """Slicing directions: basis rows r (O_r) and one test direction g per r.

    variant "g" keeps the basis fixed (must be orthonormal; the default is the
    one-hot basis) and optimizes only g. variant "rg" also optimizes the basis
    rows, which then need not be orthogonal (typically m << dim of them).
    """

    basis: np.ndarray       # (R, D) unit rows
    directions: np.ndarray  # (R, D) unit rows
    variant: str = "g"
    bandwidths: np.ndarray | None = None  # optional per-slice sigma overrides

    def __post_init__(self):
        self.basis = np.atleast_2d(np.asarray(self.basis, dtype=np.float64))
        self.directions = np.atleast_2d(np.asarray(self.directions, dtype=np.float64))
        if self.basis.shape != self.directions.shape:
            raise ValueError("basis and directions must have equal shapes")
        if self.variant not in ("g", "rg"):
            raise ValueError("variant must be 'g' or 'rg'")
        for name, m in (("basis", self.basis), ("directions", self.directions)):
            norms = np.linalg.norm(m, axis=1)
            if np.any(np.abs(norms - 1.0) > 1e-6):
                raise ValueError(f"{name} rows must be unit-norm")
        if self.variant == "g":
            gram = self.basis @ self.basis.T
            if not np.allclose(gram, np.eye(self.basis.shape[0]), atol=1e-8):
                raise ValueError("g variant requires an orthonormal basis")
        if self.bandwidths is not None:
            self.bandwidths = np.asarray(self.bandwidths, dtype=np.float64)
            if self.bandwidths.shape != (self.basis.shape[0],):
                raise ValueError("bandwidths must have one entry per slice")

    @property
    def n_slices(self) -> int:
        return self.basis.shape[0]

    @property
    def dim(self) -> int:
        return self.basis.shape[1]

    @classmethod
    def onehot(cls, directions: np.ndarray, variant: str = "g",
               bandwidths: np.ndarray | None = None) -> "SliceConfig":
        """One-hot basis r_d = e_d with the given test directions."""
        directions = np.atleast_2d(np.asarray(directions, dtype=np.float64))
        return cls(basis=np.eye(directions.shape[1]), directions=directions,
                   variant=variant, bandwidths=bandwidths)

    @classmethod
    def random(cls, dim: int, rng: Rng, variant: str = "g",
               n_slices: int | None = None) -> "SliceConfig":
        """Directions drawn i.i.d. N(0, 1) then row-normalized.

        For the g variant the basis is the one-hot basis with dim slices; for
        rg the basis rows are random unit vectors too (default one slice).
        """
        if variant == "g":
            m = dim if n_slices is None else n_slices
            if m != dim:
                raise ValueError("g variant uses the full one-hot basis")
            basis = np.eye(dim)
        else:
            m = 1 if n_slices is None else n_slices
            basis = project_rows_to_sphere(rng.gen.standard_normal((m, dim)))
        g = project_rows_to_sphere(rng.gen.standard_normal((m, dim)))
        return cls(basis=basis, directions=g, variant=variant)

    def to_config(self) -> dict:
        cfg = {"variant": self.variant, "O_r": self.basis.tolist(),
               "G": self.directions.tolist()}
        if self.bandwidths is not None:
            cfg["bandwidths"] = self.bandwidths.tolist()
        return cfg

    @classmethod
    def from_config(cls, cfg: dict) -> "SliceConfig":
        return cls(basis=np.asarray(cfg["O_r"], dtype=np.float64),
                   directions=np.asarray(cfg["G"], dtype=np.float64),
                   variant=cfg.get("variant", "g"),
                   bandwidths=None if cfg.get("bandwidths") is None
                   else np.asarray(cfg["bandwidths"], dtype=np.float64))


@dataclass
class DiscrepancyEstimate:
    """Estimator value with per-slice decomposition and the bandwidths used."""
    value: float
    variant: str          # "ksd" | "maxsksd-g" | "maxsksd-rg"
    statistic: str        # "U" | "V"
    per_slice: np.ndarray
    bandwidths: np.ndarray
    n: int


def _median_sigmas(a: np.ndarray, factor: float, floor: float | None) -> np.ndarray:
    """Per-column median-heuristic sigmas (lower median over pairs, fused loop)."""
    n = a.shape[0]
    if n < 2:
        raise ValueError("median heuristic needs at least 2 values")
    sig = factor * _kernels.pair_median_columns(np.ascontiguousarray(a))
    if floor is not None:
        return np.maximum(sig, floor)
    if np.any(sig <= 0.0):
        bad = int(np.nonzero(sig <= 0.0)[0][0])
        raise DegenerateBandwidthError(
            f"projected values identical in slice {bad}; pass floor= to substitute")
    return sig


def slice_bandwidths(x: np.ndarray, slices: SliceConfig, factor: float = 1.0,
                     floor: float | None = None) -> np.ndarray:
    """Median-heuristic sigma per slice from the projected scalars x'g_r."""
    return _median_sigmas(x @ slices.directions.T, factor, floor)


def _slice_inputs(model: ScoreModel, x: np.ndarray, slices: SliceConfig,
                  factor: float, floor: float | None):
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if x.shape[1] != slices.dim:
        raise ValueError("sample dimension does not match slices")
    a = x @ slices.directions.T                      # (N, R) projections
    scores = model.score(x)                          # (N, D)
    s = scores @ slices.basis.T                      # (N, R) projected scores
    c = np.sum(slices.basis * slices.directions, axis=1)
    if slices.bandwidths is not None:
        sig = slices.bandwidths.copy()
    else:
        sig = _median_sigmas(a, factor, floor)
    return x, a, scores, s, c, sig


def _variant_name(slices: SliceConfig) -> str:
    return "maxsksd-rg" if slices.variant == "rg" else "maxsksd-g"


def sksd_ustat(model: ScoreModel, x: np.ndarray, slices: SliceConfig,
               factor: float = 1.0, floor: float | None = None) -> DiscrepancyEstimate:
    """Unbiased U-statistic: off-diagonal mean of the slice-summed h matrix."""
    x, a, _, s, c, sig = _slice_inputs(model, x, slices, factor, floor)
    n = x.shape[0]
    if n < 2:
        raise ValueError("U-statistic needs at least 2 samples")
    total, diag, _, _, _ = _kernels.slice_pack(a, s, c, sig)
    per = (total - diag) / (n * (n - 1))
    return DiscrepancyEstimate(value=float(per.sum()), variant=_variant_name(slices),
                               statistic="U", per_slice=per, bandwidths=sig, n=n)


def sksd_vstat(model: ScoreModel, x: np.ndarray, slices: SliceConfig,
               factor: float = 1.0, floor: float | None = None) -> DiscrepancyEstimate:
    """Biased nonnegative V-statistic: full mean including the diagonal."""
    x, a, _, s, c, sig = _slice_inputs(model, x, slices, factor, floor)
    n = x.shape[0]
    total, _, _, _, _ = _kernels.slice_pack(a, s, c, sig)
    per = total / (n * n)
    return DiscrepancyEstimate(value=float(per.sum()), variant=_variant_name(slices),
                               statistic="V", per_slice=per, bandwidths=sig, n=n)


def ksd_stat(model: ScoreModel, x: np.ndarray, statistic: str = "U",
             factor: float = 1.0, sigma: float | None = None,
             floor: float | None = None) -> DiscrepancyEstimate:
    """KSD U- or V-statistic with the multivariate RBF kernel."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    n = x.shape[0]
    if sigma is None:
        sigma = median_distance(x, factor=factor, floor=floor)
    h = ksd_stein_matrix(model, x, sigma)
    if statistic == "U":
        if n < 2:
            raise ValueError("U-statistic needs at least 2 samples")
        value = (h.sum() - np.trace(h)) / (n * (n - 1))
    elif statistic == "V":
        value = h.sum() / (n * n)
    else:
        raise ValueError("statistic must be 'U' or 'V'")
    return DiscrepancyEstimate(value=float(value), variant="ksd", statistic=statistic,
                               per_slice=np.array([float(value)]),
                               bandwidths=np.array([sigma]), n=n)


def stein_matrix(model: ScoreModel, x: np.ndarray, slices: SliceConfig | None,
                 factor: float = 1.0, sigma: float | None = None,
                 floor: float | None = None):
    """Slice-summed (or KSD) Stein matrix H plus per-slice U contributions.

    Returns (H, per_slice_u, bandwidths). With slices=None this is the KSD
    matrix of u_p values; otherwise H_ij = sum_r h(x_i, x_j; r, g_r).
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    n = x.shape[0]
    if slices is None:
        if sigma is None:
            sigma = median_distance(x, factor=factor, floor=floor)
        h = ksd_stein_matrix(model, x, sigma)
        per = np.array([(h.sum() - np.trace(h)) / (n * (n - 1))]) if n > 1 \
            else np.array([0.0])
        return h, per, np.array([sigma])
    x, a, _, s, c, sig = _slice_inputs(model, x, slices, factor, floor)
    h, total, diag = _kernels.slice_hmatrix(a, s, c, sig)
    per = (total - diag) / (n * (n - 1)) if n > 1 else np.zeros_like(total)
    return h, per, sig


def bootstrap_null_samples(h: np.ndarray, m: int, rng: Rng) -> np.ndarray:
    """Multinomial-weighted bootstrap draws of the degenerate null distribution.

    For each draw, with v = w - 1/n: sum_{i != j} v_i v_j H_ij, computed as
    v'Hv minus the diagonal part. Reuses the precomputed H for all draws.
    """
    if m < 1:
        raise ValueError("need at least one bootstrap draw")
    h = np.asarray(h, dtype=np.float64)
    n = h.shape[0]
    p = np.full(n, 1.0 / n)
    w = rng.gen.multinomial(n, p, size=m) / float(n)
    v = w - 1.0 / n
    quad = np.einsum("mi,mi->m", v @ h, v)
    return quad - (v * v) @ np.diag(h)


@dataclass
class DirectionGradients:
    """Gradient of the V-statistic in the slicing parameters (sigma held fixed)."""
    grad_g: np.ndarray
    grad_r: np.ndarray | None
    value: float
    per_slice: np.ndarray
    bandwidths: np.ndarray


def grad_wrt_directions(model: ScoreModel, x: np.ndarray, slices: SliceConfig,
                        factor: float = 1.0, floor: float | None = None) -> DirectionGradients:
    """Analytic gradient of the V-statistic w.r.t. each g_r (and r in the rg variant).

    The chain rule runs through the projections x'g and r'g and, for the rg
    variant, the projected scores r's(x); the per-slice bandwidth is treated
    as a constant (no gradient through the median heuristic).
    """
    x, a, scores, s, c, sig = _slice_inputs(model, x, slices, factor, floor)
    n = x.shape[0]
    total, _, a1, mmat, csum = _kernels.slice_pack(a, s, c, sig)
    inv = 1.0 / (n * n)
    grad_g = (2.0 * (a1 @ x) + csum[:, None] * slices.basis) * inv
    grad_r = None
    if slices.variant == "rg":
        grad_r = (2.0 * (mmat @ scores) + csum[:, None] * slices.directions) * inv
        if not np.all(np.isfinite(grad_r)):
            raise FloatingPointError("non-finite gradient w.r.t. slicing directions")
    if not np.all(np.isfinite(grad_g)):
        raise FloatingPointError("non-finite gradient w.r.t. test directions")
    return DirectionGradients(grad_g=grad_g, grad_r=grad_r, value=float(total.sum() * inv),
                              per_slice=total * inv, bandwidths=sig)


def score_sensitivities(model: ScoreModel, x: np.ndarray, slices: SliceConfig,
                        statistic: str = "V", factor: float = 1.0,
                        floor: float | None = None):
    """d(statistic)/d(projected score) per slice: gamma[r, i] = dStat/ds_i^(r).

    Used by model-learning gradients, which chain these through the score's
    parameter dependence. Returns (gamma (R, N), value, bandwidths).
    """
    x, a, _, s, c, sig = _slice_inputs(model, x, slices, factor, floor)
    n = x.shape[0]
    total, diag, _, mmat, _ = _kernels.slice_pack(a, s, c, sig)
    if statistic == "V":
        gamma = 2.0 * mmat / (n * n)
        value = float(total.sum() / (n * n))
    elif statistic == "U":
        if n < 2:
            raise ValueError("U-statistic needs at least 2 samples")
        # remove the diagonal contribution M_ii = s_i (from h_ii = s_i^2 + c^2 t)
        gamma = 2.0 * (mmat - s.T) / (n * (n - 1))
        value = float((total - diag).sum() / (n * (n - 1)))
    else:
        raise ValueError("statistic must be 'U' or 'V'")
    return gamma, value, sig


def warmstart_rg_slices(model: ScoreModel, x: np.ndarray, n_slices: int = 1,
                        factor: float = 1.0, floor: float = 1e-6) -> SliceConfig:
    """Initialize an rg configuration at the most discriminating coordinate slices.

    Scores every axis-aligned slice (r = g = e_d) by its V-statistic on x and
    seeds the basis and test directions with the top ``n_slices`` coordinates.
    Gradient ascent then refines both off-axis. Random initialization is a
    poor starting point for the rg variant: when the signal concentrates on
    one coordinate, a random basis row sits in a noise-dominated region
    separated from the optimum by a valley.
    """
    eye = SliceConfig.onehot(np.eye(model.dim))
    per = sksd_vstat(model, x, eye, factor=factor, floor=floor).per_slice
    top = np.argsort(per)[::-1][:n_slices]
    rows = np.eye(model.dim)[top]
    return SliceConfig(basis=rows.copy(), directions=rows.copy(), variant="rg")


class DirectionOptimizer:
    """Adam ascent of the V-statistic in the slicing directions.

    Keeps optimizer state across calls so that interleaved schedules (one
    direction update per sampler or Gibbs step) continue the same trajectory.
    Every step recomputes per-slice median bandwidths from the current
    projections (constant within the step), updates G (and O_r for the rg
    variant), and reprojects rows to the unit sphere.
    """

    def __init__(self, model: ScoreModel, slices: SliceConfig, lr: float = 1e-3,
                 betas: tuple[float, float] = (0.9, 0.999), factor: float = 1.0,
                 floor: float = 1e-6):
        self.model = model
        self.slices = slices
        self.factor = factor
        self.floor = floor
        self._lr = lr
        self._betas = betas
        self._reset_adam()
        self.last_value: float | None = None

    def _reset_adam(self):
        self._adam_g = AdamState.zeros(self.slices.directions.shape, lr=self._lr,
                                       beta1=self._betas[0], beta2=self._betas[1])
        self._adam_r = AdamState.zeros(self.slices.basis.shape, lr=self._lr,
                                       beta1=self._betas[0], beta2=self._betas[1]) \
            if self.slices.variant == "rg" else None

    def reinitialize(self, slices: SliceConfig):
        """Swap in new slices and reset the optimizer moments."""
        self.slices = slices
        self._reset_adam()

    def step(self, x: np.ndarray) -> float:
        """One ascent step on samples x; returns the V-statistic before the move."""
        grads = grad_wrt_directions(self.model, x, self.slices,
                                    factor=self.factor, floor=self.floor)
        delta_g, self._adam_g = adam_step(self._adam_g, -grads.grad_g)
        new_g = project_rows_to_sphere(self.slices.directions + delta_g)
        new_basis = self.slices.basis
        if self._adam_r is not None:
            delta_r, self._adam_r = adam_step(self._adam_r, -grads.grad_r)
            new_basis = project_rows_to_sphere(self.slices.basis + delta_r)
        self.slices = replace(self.slices, directions=new_g, basis=new_basis)
        self.last_value = grads.value
        return grads.value


def optimize_directions(model: ScoreModel, x: np.ndarray, slices: SliceConfig,
                        steps: int, lr: float = 1e-3,
                        betas: tuple[float, float] = (0.9, 0.999),
                        factor: float = 1.0, floor: float = 1e-6,
                        callback=None) -> SliceConfig:
    """Run ``steps`` direction-ascent updates on a fixed training sample.

    Returns the best configuration seen along the trajectory as measured by
    the training objective. Adam's normalized steps random-walk once the
    surface flattens, so the last iterate can sit well below the best one,
    especially when the ascent starts at or near a maximizer.
    """
    opt = DirectionOptimizer(model, slices, lr=lr, betas=betas, factor=factor, floor=floor)
    best_slices, best_value = slices, -np.inf
    for step in range(steps):
        before = opt.slices
        value = opt.step(x)
        if value > best_value:
            best_slices, best_value = before, value
        if callback is not None:
            callback(step, opt.slices, value)
    final_value = sksd_vstat(model, x, opt.slices, factor=factor, floor=floor).value
    if final_value > best_value:
        best_slices = opt.slices
    return best_slices
