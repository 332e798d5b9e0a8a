"""Particle inference: SVGD, sliced SVGD, the PARF diagnostic, and SGHMC.

SVGD perturbs every particle along the kernel-smoothed score plus a repulsive
kernel-gradient term, both evaluated on full D-dimensional inputs. The sliced
variant (S-SVGD) instead applies one univariate perturbation per coordinate,
with kernels evaluated on the 1-d projections x'g_d, which keeps the
repulsive force alive in high dimensions. Its slice matrix G is re-optimized
on a configurable schedule by ascending the sliced V-statistic.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import _kernels
from .core import Rng, median_distance, median_heuristic, splitmix64
from .discrepancy import (DirectionOptimizer, SliceConfig, ksd_stat, sksd_ustat,
                          warmstart_rg_slices)
from .targets import Gaussian, ScoreModel

_BW_FLOOR = 1e-6


class SamplerDivergedError(RuntimeError):
    """A chain or particle system left the numerically trustworthy region."""


@dataclass
class SamplerConfig:
    """Knobs shared by the particle samplers.

    ``g_update_every``/``g_adam_steps`` schedule the S-SVGD direction updates;
    ``staleness_delta`` switches to updating only once the particles have
    moved that far (mean L2) since the last update ("auto" = 0.1 sqrt(D) eps).
    ``repulsive_coef`` scales the repulsive term (default 1: untuned).
    """
    bandwidth_factor: float = 1.0
    g_update_every: int = 1
    g_adam_steps: int = 1
    g_lr: float = 1e-3
    repulsive_coef: float = 1.0
    staleness_delta: float | str | None = None

    def __post_init__(self):
        if self.g_update_every < 1 or self.g_adam_steps < 1:
            raise ValueError("schedule counts must be >= 1")
        if not 0.0 < self.repulsive_coef <= 1.0:
            raise ValueError("repulsive_coef must lie in (0, 1]")


@dataclass
class ParticleEnsemble:
    """Particle matrix plus step size and running diagnostics."""
    x: np.ndarray
    step_size: float
    iteration: int = 0
    parf_history: list = field(default_factory=list)
    var_history: list = field(default_factory=list)

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def dim(self) -> int:
        return self.x.shape[1]

    def var_avg(self) -> float:
        """Average over dimensions of the per-dimension sample variance."""
        if self.n < 2:
            return 0.0
        return float(np.mean(np.var(self.x, axis=0, ddof=1)))


def _check_finite(x: np.ndarray, what: str):
    if not np.all(np.isfinite(x)):
        idx = int(np.argwhere(~np.isfinite(x).all(axis=1)).ravel()[0])
        raise SamplerDivergedError(f"non-finite {what} for particle {idx}")


def svgd_direction(model: ScoreModel, x: np.ndarray, bandwidth_factor: float = 1.0,
                   repulsive_coef: float = 1.0) -> np.ndarray:
    """phi_i = (1/N) sum_j [ s(x_j) k(x_j, x_i) + grad_{x_j} k(x_j, x_i) ].

    Multivariate RBF kernel with median-heuristic bandwidth on full inputs.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    n = x.shape[0]
    s = model.score(x)
    if n == 1:
        return s
    sigma = median_distance(x, factor=bandwidth_factor, floor=_BW_FLOOR)
    t = 1.0 / (sigma * sigma)
    sq = np.sum(x * x, axis=1)
    d2 = np.maximum(sq[:, None] + sq[None, :] - 2.0 * (x @ x.T), 0.0)
    k = np.exp(-0.5 * d2 * t)
    drift = k @ s
    repulsion = (x * k.sum(axis=1)[:, None] - k @ x) * t
    return (drift + repulsive_coef * repulsion) / n


def svgd_step(model: ScoreModel, ensemble: ParticleEnsemble,
              config: SamplerConfig | None = None) -> ParticleEnsemble:
    """One synchronous SVGD update of all particles."""
    cfg = config or SamplerConfig()
    phi = svgd_direction(model, ensemble.x, cfg.bandwidth_factor, cfg.repulsive_coef)
    x = ensemble.x + ensemble.step_size * phi
    _check_finite(x, "svgd update")
    return replace(ensemble, x=x, iteration=ensemble.iteration + 1)


def _ssvgd_inputs(x: np.ndarray, slices: SliceConfig, factor: float):
    from .discrepancy import _median_sigmas
    a = x @ slices.directions.T
    gdiag = np.diagonal(slices.directions).copy()
    sig = _median_sigmas(a, factor, _BW_FLOOR) if x.shape[0] > 1 else np.ones(a.shape[1])
    return a, gdiag, sig


def ssvgd_direction(model: ScoreModel, x: np.ndarray, slices: SliceConfig,
                    bandwidth_factor: float = 1.0, repulsive_coef: float = 1.0) -> np.ndarray:
    """Coordinate-wise S-SVGD update directions.

    phi_d(x_i) = (1/N) sum_j [ s_d(x_j) k(x_j'g_d, x_i'g_d)
                               + g_dd d/d(x_j'g_d) k(x_j'g_d, x_i'g_d) ].
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if slices.variant != "g" or slices.n_slices != x.shape[1]:
        raise ValueError("S-SVGD needs the one-hot basis with one slice per coordinate")
    s = model.score(x)
    if x.shape[0] == 1:
        return s
    a, gdiag, sig = _ssvgd_inputs(x, slices, bandwidth_factor)
    return _kernels.ssvgd_phi(a, s, gdiag, sig, repulsive_coef)


def ssvgd_step(model: ScoreModel, ensemble: ParticleEnsemble, slices: SliceConfig,
               config: SamplerConfig | None = None) -> ParticleEnsemble:
    """One synchronous S-SVGD update of all particles (G held fixed)."""
    cfg = config or SamplerConfig()
    phi = ssvgd_direction(model, ensemble.x, slices, cfg.bandwidth_factor,
                          cfg.repulsive_coef)
    x = ensemble.x + ensemble.step_size * phi
    _check_finite(x, "ssvgd update")
    return replace(ensemble, x=x, iteration=ensemble.iteration + 1)


def update_slices_for_sampler(model: ScoreModel, x: np.ndarray,
                              optimizer: DirectionOptimizer,
                              adam_steps: int = 1) -> SliceConfig:
    """Ascend the sliced V-statistic (the KL-decrease magnitude) in G."""
    for _ in range(adam_steps):
        optimizer.step(x)
    return optimizer.slices


def parf(x: np.ndarray, mode: str, slices: SliceConfig | None = None,
         bandwidth_factor: float = 1.0) -> float:
    """Particle-averaged repulsive force (1/N) sum_n |R(x_n)|_inf.

    mode "svgd": R(x) = E_y[grad_y k(x, y)] with the multivariate kernel.
    mode "ssvgd": R_d(x) = E_y[g_dd d/d(y'g_d) k(x'g_d, y'g_d)] per coordinate.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    n = x.shape[0]
    if n == 1:
        return 0.0
    if mode == "svgd":
        sigma = median_distance(x, factor=bandwidth_factor, floor=_BW_FLOOR)
        t = 1.0 / (sigma * sigma)
        sq = np.sum(x * x, axis=1)
        d2 = np.maximum(sq[:, None] + sq[None, :] - 2.0 * (x @ x.T), 0.0)
        k = np.exp(-0.5 * d2 * t)
        r = (x * k.sum(axis=1)[:, None] - k @ x) * t / n
    elif mode == "ssvgd":
        if slices is None:
            raise ValueError("ssvgd mode needs slices")
        a, gdiag, sig = _ssvgd_inputs(x, slices, bandwidth_factor)
        r = _kernels.ssvgd_phi(a, np.zeros_like(x), gdiag, sig, 1.0)
    else:
        raise ValueError("mode must be 'svgd' or 'ssvgd'")
    return float(np.mean(np.max(np.abs(r), axis=1)))


def run_svgd(model: ScoreModel, x0: np.ndarray, steps: int, step_size: float,
             config: SamplerConfig | None = None, record_every: int = 0) -> ParticleEnsemble:
    """Drive SVGD for a fixed number of steps, optionally recording diagnostics."""
    cfg = config or SamplerConfig()
    ens = ParticleEnsemble(x=np.array(x0, dtype=np.float64), step_size=step_size)
    for i in range(steps):
        ens = svgd_step(model, ens, cfg)
        if record_every and (i + 1) % record_every == 0:
            ens.parf_history.append((ens.iteration, parf(ens.x, "svgd", None,
                                                         cfg.bandwidth_factor)))
            ens.var_history.append((ens.iteration, ens.var_avg()))
    return ens


def run_ssvgd(model: ScoreModel, x0: np.ndarray, steps: int, step_size: float,
              rng: Rng, config: SamplerConfig | None = None,
              slices: SliceConfig | None = None,
              record_every: int = 0) -> tuple[ParticleEnsemble, SliceConfig]:
    """Drive S-SVGD, interleaving particle moves with G updates.

    The slice matrix starts from normalized Gaussian rows (unless given) and
    is re-optimized per ``config``: every ``g_update_every`` steps, or, with
    ``staleness_delta`` set, only once the particles moved far enough since
    the previous update.
    """
    cfg = config or SamplerConfig()
    x0 = np.array(x0, dtype=np.float64)
    dim = x0.shape[1]
    if slices is None:
        slices = SliceConfig.random(dim, rng, variant="g")
    opt = DirectionOptimizer(model, slices, lr=cfg.g_lr, factor=cfg.bandwidth_factor,
                             floor=_BW_FLOOR)
    delta = cfg.staleness_delta
    if delta == "auto":
        delta = 0.1 * np.sqrt(dim) * step_size
    ens = ParticleEnsemble(x=x0, step_size=step_size)
    x_at_update = ens.x.copy()
    for i in range(steps):
        ens = ssvgd_step(model, ens, opt.slices, cfg)
        due = (i + 1) % cfg.g_update_every == 0
        if delta is not None:
            due = float(np.mean(np.linalg.norm(ens.x - x_at_update, axis=1))) > delta
        if due:
            update_slices_for_sampler(model, ens.x, opt, cfg.g_adam_steps)
            x_at_update = ens.x.copy()
        if record_every and (i + 1) % record_every == 0:
            ens.parf_history.append((ens.iteration, parf(ens.x, "ssvgd", opt.slices,
                                                         cfg.bandwidth_factor)))
            ens.var_history.append((ens.iteration, ens.var_avg()))
    return ens, opt.slices


@dataclass
class VarianceSpec:
    """Variance-collapse study: standard-normal target, particles from N(2, 2I)."""
    dims: tuple = (2, 20, 50, 100)
    n_particles: tuple = (50,)
    steps: int = 6000
    step_size: float = 0.1
    samplers: tuple = ("svgd", "ssvgd")
    bandwidth_factor: float = 1.0
    staleness_delta: float | str | None = "auto"
    g_lr: float = 1e-3
    record_every: int = 500


@dataclass
class VarianceRecord:
    sampler: str
    dim: int
    n_particles: int
    var_avg: float
    parf_final: float
    mean_avg: float


def _variance_run(spec: VarianceSpec, sampler: str, dim: int, n: int,
                  seed: int) -> VarianceRecord:
    rng = Rng(seed)
    model = Gaussian(mean=np.zeros(dim), cov_diag=np.ones(dim))
    x0 = 2.0 + np.sqrt(2.0) * rng.split(0).gen.standard_normal((n, dim))
    cfg = SamplerConfig(bandwidth_factor=spec.bandwidth_factor,
                        staleness_delta=spec.staleness_delta if sampler == "ssvgd" else None,
                        g_lr=spec.g_lr)
    if sampler == "svgd":
        ens = run_svgd(model, x0, spec.steps, spec.step_size, cfg,
                       record_every=spec.record_every)
        final_parf = parf(ens.x, "svgd", None, spec.bandwidth_factor)
    else:
        ens, slices = run_ssvgd(model, x0, spec.steps, spec.step_size,
                                rng.split(1), cfg, record_every=spec.record_every)
        final_parf = parf(ens.x, "ssvgd", slices, spec.bandwidth_factor)
    return VarianceRecord(sampler=sampler, dim=dim, n_particles=n,
                          var_avg=ens.var_avg(), parf_final=final_parf,
                          mean_avg=float(np.mean(ens.x)))


def run_variance_experiment(spec: VarianceSpec, seed: int,
                            workers: int = 1) -> list[VarianceRecord]:
    """Average estimated variance per (sampler, dim, n_particles) configuration."""
    from .goftest import _run_trials
    args = []
    idx = 0
    for sampler in spec.samplers:
        for dim in spec.dims:
            for n in spec.n_particles:
                args.append((spec, sampler, dim, n, splitmix64(seed, idx)))
                idx += 1
    return _run_trials(_variance_run, args, workers)


def sghmc_chain(model: ScoreModel, step_size: float, n_samples: int, rng: Rng,
                friction: float = 0.1, n_chains: int = 100, burn_in: int = 2000,
                thinning: int = 5, callback=None,
                init: np.ndarray | None = None) -> np.ndarray:
    """Parallel SGHMC chains on the exact score.

    Euler discretization of underdamped Langevin dynamics with unit mass:

        v <- (1 - friction h) v + h s(x) + N(0, 2 friction h I)
        x <- x + h v

    so the injected noise exactly balances the friction at stationarity.
    After burn-in, every ``thinning``-th sweep contributes all chain states
    until ``n_samples`` rows are collected. ``callback(sweep, x)`` fires after
    each burn-in sweep.
    """
    if step_size <= 0:
        raise ValueError("step_size must be positive")
    if friction * step_size >= 1.0:
        raise ValueError("friction * step_size must stay below 1")
    h = float(step_size)
    x = rng.gen.standard_normal((n_chains, model.dim)) if init is None \
        else np.array(init, dtype=np.float64)
    v = rng.gen.standard_normal((n_chains, model.dim))
    noise_scale = np.sqrt(2.0 * friction * h)

    def sweep(x, v):
        v = (1.0 - friction * h) * v + h * model.score(x) \
            + noise_scale * rng.gen.standard_normal(x.shape)
        x = x + h * v
        if np.max(np.abs(x)) > 1e8 or not np.all(np.isfinite(x)):
            raise SamplerDivergedError(f"SGHMC diverged at step size {h}")
        return x, v

    for s in range(burn_in):
        x, v = sweep(x, v)
        if callback is not None:
            callback(s, x)
    chunks = []
    collected = 0
    first = True
    while collected < n_samples:
        loops = 1 if (first and burn_in == 0) else (0 if first else thinning)
        for _ in range(loops):
            x, v = sweep(x, v)
        first = False
        chunks.append(x.copy())
        collected += n_chains
    return np.vstack(chunks)[:n_samples]


def gaussian_kl_oracle(samples: np.ndarray, target: Gaussian) -> float:
    """KL( N(sample mean, sample cov) || target ); the selection ground truth."""
    x = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    d = x.shape[1]
    mu = x.mean(axis=0)
    cov = np.cov(x, rowvar=False)
    cov_p = np.diag(target.cov_diag) if target.cov_diag is not None else target.cov
    prec_p = np.linalg.inv(cov_p)
    _, logdet_q = np.linalg.slogdet(cov)
    _, logdet_p = np.linalg.slogdet(cov_p)
    dm = mu - target.mean
    return 0.5 * (np.trace(prec_p @ cov) + dm @ prec_p @ dm - d + logdet_p - logdet_q)


@dataclass
class SghmcSpec:
    """Step-size selection study configuration."""
    n_chains: int = 100
    burn_in: int = 2000
    thinning: int = 5
    n_samples: int = 1500
    friction: float = 0.1
    g_update_every: int = 2
    train_lr: float = 0.01
    bandwidth_factor: float = 1.0
    rg_slices: int = 1


@dataclass
class StepSizeRecord:
    step_size: float
    discrepancy: float
    kl: float


@dataclass
class StepSizeSelection:
    method: str
    records: list[StepSizeRecord]
    chosen: float
    kl_chosen: float


def select_step_size(model: Gaussian, candidates, method: str, rng: Rng,
                     spec: SghmcSpec | None = None) -> StepSizeSelection:
    """Pick the SGHMC step size with the lowest discrepancy U-statistic.

    Runs one chain set per candidate; trained methods update their directions
    during burn-in on the current chain states and are then frozen for the
    final discrepancy evaluation. The Gaussian-KL oracle column is recorded
    for every candidate as the ground-truth reference.
    """
    candidates = [float(c) for c in candidates]
    if len(candidates) < 1:
        raise ValueError("need at least one candidate")
    spec = spec or SghmcSpec()
    records = []
    for ci, h in enumerate(candidates):
        crng = rng.split(ci)
        optimizer = None
        callback = None
        if method != "ksd":
            rg = method == "maxsksd-rg"
            slices = SliceConfig.random(model.dim, crng.split(1), variant="g") if not rg \
                else SliceConfig.random(model.dim, crng.split(1), variant="rg",
                                        n_slices=spec.rg_slices)
            optimizer = DirectionOptimizer(model, slices, lr=spec.train_lr,
                                           factor=spec.bandwidth_factor, floor=_BW_FLOOR)
            restart_at = spec.burn_in // 2

            def callback(sweep, x, opt=optimizer, is_rg=rg):
                if is_rg and sweep == restart_at:
                    opt.reinitialize(warmstart_rg_slices(
                        model, x, n_slices=spec.rg_slices,
                        factor=spec.bandwidth_factor))
                if sweep % spec.g_update_every == 0:
                    opt.step(x)

        try:
            samples = sghmc_chain(model, h, spec.n_samples, crng.split(2),
                                  friction=spec.friction, n_chains=spec.n_chains,
                                  burn_in=spec.burn_in, thinning=spec.thinning,
                                  callback=callback)
        except SamplerDivergedError:
            # a diverged candidate is maximally non-converged
            records.append(StepSizeRecord(step_size=h, discrepancy=float("inf"),
                                          kl=float("inf")))
            continue
        if method == "ksd":
            value = ksd_stat(model, samples, statistic="U",
                             factor=spec.bandwidth_factor).value
        else:
            value = sksd_ustat(model, samples, optimizer.slices,
                               factor=spec.bandwidth_factor).value
        records.append(StepSizeRecord(step_size=h, discrepancy=float(value),
                                      kl=float(gaussian_kl_oracle(samples, model))))
    chosen = min(records, key=lambda r: r.discrepancy).step_size
    kl_chosen = min(records, key=lambda r: r.kl).step_size
    return StepSizeSelection(method=method, records=records, chosen=chosen,
                             kl_chosen=kl_chosen)
