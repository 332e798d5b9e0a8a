"""Bootstrap goodness-of-fit tests and the Gaussian / RBM experiment harnesses.

The test statistic is the U-statistic of the chosen discrepancy on held-out
test samples; the null distribution comes from multinomial-weighted bootstrap
draws that reuse one precomputed Stein matrix. Methods needing training
("maxsksd-g", "maxsksd-rg") optimize their directions on a disjoint training
split before the statistic ever sees the test data.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import Rng, splitmix64
from .discrepancy import (DirectionOptimizer, SliceConfig, bootstrap_null_samples,
                          optimize_directions, stein_matrix, warmstart_rg_slices)
from .targets import (FactorizedLaplace, FactorizedStudentT, ScoreModel,
                      diffusion_gaussian, perturb_rbm, random_rbm, rbm_gibbs,
                      standard_gaussian)

METHODS = ("ksd", "maxsksd-g", "maxsksd-rg")


@dataclass
class GofOutcome:
    """One test: statistic, bootstrap null draws, p-value and decision."""
    statistic: float
    bootstrap_samples: np.ndarray
    p_value: float
    reject: bool
    alpha: float
    config: dict = field(default_factory=dict)


def gof_test(model: ScoreModel, samples: np.ndarray, slices: SliceConfig | None,
             rng: Rng, alpha: float = 0.05, n_bootstrap: int = 1000,
             bandwidth_factor: float = 1.0) -> GofOutcome:
    """Bootstrap GOF test of H0: samples ~ model.

    With ``slices`` the statistic is the sliced U-statistic; with
    ``slices=None`` it is plain KSD. The p-value is the proportion of
    bootstrap draws strictly exceeding the observed statistic; H0 is rejected
    when it falls below alpha.
    """
    if n_bootstrap < 1:
        raise ValueError("n_bootstrap must be >= 1")
    samples = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    n = samples.shape[0]
    if n < 2:
        raise ValueError("need at least 2 test samples")
    h, per_slice, sigmas = stein_matrix(model, samples, slices, factor=bandwidth_factor)
    stat = float((h.sum() - np.trace(h)) / (n * (n - 1)))
    draws = bootstrap_null_samples(h, n_bootstrap, rng)
    p = float(np.mean(draws > stat))
    return GofOutcome(statistic=stat, bootstrap_samples=draws, p_value=p,
                      reject=bool(p < alpha), alpha=alpha,
                      config={"n": n, "n_bootstrap": n_bootstrap,
                              "bandwidth_factor": bandwidth_factor,
                              "variant": "ksd" if slices is None else slices.variant,
                              "bandwidths": np.asarray(sigmas).tolist(),
                              "per_slice_u": np.asarray(per_slice).tolist()})


@dataclass
class BenchmarkSpec:
    """Gaussian benchmark configuration (one alternative at one dimension)."""
    alternative: str            # null | laplace | multivariate-t | diffusion
    dim: int
    trials: int = 200
    n_samples: int = 1000
    n_train: int = 200
    n_test: int = 800
    alpha: float = 0.05
    n_bootstrap: int = 1000
    train_steps: int = 400
    train_lr: float = 0.01
    bandwidth_factor: float = 1.0
    rg_slices: int = 1

    def __post_init__(self):
        if self.alternative not in ("null", "laplace", "multivariate-t", "diffusion"):
            raise ValueError(f"unknown alternative {self.alternative!r}")
        if self.n_train + self.n_test > self.n_samples:
            raise ValueError("train + test exceeds n_samples")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")


def benchmark_models(alternative: str, dim: int) -> tuple[ScoreModel, ScoreModel]:
    """(null model p, sampling distribution q) for one benchmark.

    Mean and variance of q are matched to p; in the multivariate-t case the
    null model's variance is raised to dof/(dof-2) instead of rescaling q.
    """
    if alternative == "null":
        p = standard_gaussian(dim)
        return p, p
    if alternative == "laplace":
        return standard_gaussian(dim), FactorizedLaplace(dim, scale=1.0 / np.sqrt(2.0))
    if alternative == "multivariate-t":
        dof = 5.0
        return standard_gaussian(dim, variance=dof / (dof - 2.0)), FactorizedStudentT(dim, dof)
    if alternative == "diffusion":
        return standard_gaussian(dim), diffusion_gaussian(dim, first_var=0.3)
    raise ValueError(alternative)


def train_directions(model: ScoreModel, train: np.ndarray, method: str, rng: Rng,
                     steps: int, lr: float, factor: float = 1.0,
                     rg_slices: int = 1) -> SliceConfig | None:
    """Direction training for one method; None for methods without training.

    Test directions start from normalized Gaussian rows; the rg basis is
    warm-started at the best coordinate slices (see warmstart_rg_slices).
    """
    if method == "ksd":
        return None
    if method == "maxsksd-g":
        slices = SliceConfig.random(model.dim, rng, variant="g")
    elif method == "maxsksd-rg":
        slices = warmstart_rg_slices(model, train, n_slices=rg_slices, factor=factor)
    else:
        raise ValueError(f"unknown method {method!r}")
    return optimize_directions(model, train, slices, steps=steps, lr=lr, factor=factor)


@dataclass
class TrialRecord:
    method: str
    benchmark: str
    dim: int
    trial: int
    statistic: float
    p_value: float
    reject: bool


def _benchmark_trial(spec: BenchmarkSpec, method: str, seed: int, trial: int) -> TrialRecord:
    rng = Rng(seed ^ trial)
    data_rng, train_rng, boot_rng = rng.split(1), rng.split(2), rng.split(3)
    p, q = benchmark_models(spec.alternative, spec.dim)
    samples = q.sample(spec.n_samples, data_rng)
    train, test = samples[:spec.n_train], samples[spec.n_train:spec.n_train + spec.n_test]
    slices = train_directions(p, train, method, train_rng, steps=spec.train_steps,
                              lr=spec.train_lr, factor=spec.bandwidth_factor,
                              rg_slices=spec.rg_slices)
    out = gof_test(p, test, slices, boot_rng, alpha=spec.alpha,
                   n_bootstrap=spec.n_bootstrap, bandwidth_factor=spec.bandwidth_factor)
    return TrialRecord(method=method, benchmark=spec.alternative, dim=spec.dim,
                       trial=trial, statistic=out.statistic, p_value=out.p_value,
                       reject=out.reject)


@dataclass
class BenchmarkResult:
    spec: BenchmarkSpec
    method: str
    records: list[TrialRecord]

    @property
    def rejection_rate(self) -> float:
        return float(np.mean([r.reject for r in self.records]))

    @property
    def mean_statistic(self) -> float:
        return float(np.mean([r.statistic for r in self.records]))

    @property
    def sd_statistic(self) -> float:
        return float(np.std([r.statistic for r in self.records], ddof=1)) \
            if len(self.records) > 1 else 0.0


def _run_trials(worker, args_list, workers: int):
    if workers <= 1 or len(args_list) <= 1:
        return [worker(*a) for a in args_list]
    import multiprocessing as mp
    ctx = mp.get_context("fork")
    with ctx.Pool(processes=workers) as pool:
        return pool.starmap(worker, args_list, chunksize=1)


def run_benchmark(spec: BenchmarkSpec, method: str, seed: int,
                  workers: int = 1) -> BenchmarkResult:
    """All trials of one benchmark for one method.

    Per-trial seeds derive as ``seed XOR trial``, so two methods run with the
    same seed see identical q samples. Only trained methods touch the training
    split; the statistic uses the disjoint test split. Results are
    deterministic in (spec, method, seed) regardless of the worker count.
    """
    if method not in METHODS:
        raise ValueError(f"method must be one of {METHODS}")
    args = [(spec, method, seed, t) for t in range(spec.trials)]
    records = _run_trials(_benchmark_trial, args, workers)
    return BenchmarkResult(spec=spec, method=method, records=records)


@dataclass
class RbmGofSpec:
    """RBM goodness-of-fit study configuration."""
    dim: int = 20
    hidden: int = 15
    levels: tuple = (0.0, 0.01, 0.1)
    trials: int = 50
    n_train: int = 200
    n_test: int = 800
    burn_in: int = 2000
    thinning: int = 1
    alpha: float = 0.05
    n_bootstrap: int = 1000
    g_update_every: int = 4
    train_lr: float = 0.01
    bandwidth_factor: float = 1.0
    rg_slices: int = 1
    weight_scale: float = 1.0

    def __post_init__(self):
        if 0.0 not in tuple(float(l) for l in self.levels):
            raise ValueError("levels must include 0 (the null case)")


@dataclass
class RbmTrialRecord:
    method: str
    level: float
    trial: int
    statistic: float
    p_value: float
    reject: bool


def _rbm_trial(spec: RbmGofSpec, method: str, level: float, seed: int,
               trial: int) -> RbmTrialRecord:
    rng = Rng(seed ^ trial)
    model_rng, noise_rng, gibbs_rng, train_rng, boot_rng = (rng.split(i) for i in range(5))
    p = random_rbm(spec.dim, spec.hidden, model_rng, weight_scale=spec.weight_scale)
    q = perturb_rbm(p, level, noise_rng) if level > 0 else p

    optimizer = None
    callback = None
    if method != "ksd":
        rg = method == "maxsksd-rg"
        slices = SliceConfig.random(spec.dim, train_rng, variant="g") if not rg \
            else SliceConfig.random(spec.dim, train_rng, variant="rg",
                                    n_slices=spec.rg_slices)
        optimizer = DirectionOptimizer(p, slices, lr=spec.train_lr,
                                       factor=spec.bandwidth_factor)
        restart_at = spec.burn_in // 2

        def callback(sweep, x):
            # train directions on held-out chains while the sampler mixes; the
            # rg basis warm-starts once the chains look reasonably mixed
            if rg and sweep == restart_at:
                optimizer.reinitialize(warmstart_rg_slices(
                    p, x[:spec.n_train], n_slices=spec.rg_slices,
                    factor=spec.bandwidth_factor))
            if sweep % spec.g_update_every == 0:
                optimizer.step(x[:spec.n_train])

    n_chains = spec.n_train + spec.n_test
    samples = rbm_gibbs(q, n_samples=n_chains, rng=gibbs_rng, n_chains=n_chains,
                        burn_in=spec.burn_in, thinning=spec.thinning,
                        callback=callback)
    test = samples[spec.n_train:]
    slices = optimizer.slices if optimizer is not None else None
    out = gof_test(p, test, slices, boot_rng, alpha=spec.alpha,
                   n_bootstrap=spec.n_bootstrap, bandwidth_factor=spec.bandwidth_factor)
    return RbmTrialRecord(method=method, level=level, trial=trial,
                          statistic=out.statistic, p_value=out.p_value,
                          reject=out.reject)


@dataclass
class RbmGofResult:
    spec: RbmGofSpec
    method: str
    records: list[RbmTrialRecord]

    def rejection_rate(self, level: float) -> float:
        hits = [r.reject for r in self.records if r.level == level]
        return float(np.mean(hits)) if hits else float("nan")


def run_rbm_gof(spec: RbmGofSpec, method: str, seed: int,
                workers: int = 1) -> RbmGofResult:
    """RBM study: p is a random clean RBM, q its weight-perturbed copy.

    q is sampled with parallel block Gibbs; trained methods update their
    directions during burn-in using the held-out training chains. The clean
    model, the perturbation and the Gibbs path depend only on (seed, level,
    trial), so methods compare on identical samples.
    """
    if method not in METHODS:
        raise ValueError(f"method must be one of {METHODS}")
    args = [(spec, method, float(level), splitmix64(seed, li), t)
            for li, level in enumerate(spec.levels) for t in range(spec.trials)]
    records = _run_trials(_rbm_trial, args, workers)
    return RbmGofResult(spec=spec, method=method, records=records)
