"""Score models: distributions exposing an (unnormalized) log density and its gradient.

Covers every target used by the experiment harnesses: Gaussians (diagonal or
full covariance), factorized Laplace and Student-t, the Gauss-Bernoulli RBM,
and the Laplace-prior linear ICA model. Tractable families also expose exact
samplers; the RBM is sampled with a parallel block Gibbs chain.

Models are immutable after construction; ``score`` and ``logp`` are pure and
safe to call concurrently.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Rng


class UnsupportedSamplerError(RuntimeError):
    """Raised when exact sampling is requested from a model without one."""


def _rows(x: np.ndarray, dim: int) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        if x.shape[0] != dim:
            raise ValueError(f"expected vectors of length {dim}, got {x.shape}")
        return x[None, :], True
    if x.ndim != 2 or x.shape[1] != dim:
        raise ValueError(f"expected (n, {dim}) array, got {x.shape}")
    return x, False


class ScoreModel:
    """Base class. Subclasses set ``dim`` and ``variant`` and implement the ops."""

    dim: int
    variant: str

    def score(self, x: np.ndarray) -> np.ndarray:
        """Gradient of log density at x; accepts (dim,) or (n, dim)."""
        raise NotImplementedError

    def logp(self, x: np.ndarray) -> np.ndarray:
        """Log density at x, up to an additive constant where noted per family."""
        raise NotImplementedError

    def sample(self, n: int, rng: Rng) -> np.ndarray:
        raise UnsupportedSamplerError(f"{self.variant} has no exact sampler")

    def to_config(self) -> dict:
        raise NotImplementedError

    @staticmethod
    def from_config(cfg: dict) -> "ScoreModel":
        variant = cfg.get("variant")
        if variant == "gaussian":
            return Gaussian(mean=np.asarray(cfg["mean"], dtype=np.float64),
                            cov=None if cfg.get("cov") is None else np.asarray(cfg["cov"]),
                            cov_diag=None if cfg.get("cov_diag") is None else np.asarray(cfg["cov_diag"]))
        if variant == "laplace":
            return FactorizedLaplace(dim=int(cfg["dim"]), scale=float(cfg["scale"]))
        if variant == "student_t":
            return FactorizedStudentT(dim=int(cfg["dim"]), dof=float(cfg["dof"]))
        if variant == "rbm":
            return GaussBernoulliRbm(B=np.asarray(cfg["B"], dtype=np.float64),
                                     b_v=np.asarray(cfg["b_v"], dtype=np.float64),
                                     b_h=np.asarray(cfg["b_h"], dtype=np.float64))
        if variant == "ica":
            return IcaLaplace(W=np.asarray(cfg["W"], dtype=np.float64))
        raise ValueError(f"unknown model variant {variant!r}")


class Gaussian(ScoreModel):
    """N(mean, cov). Pass either a full covariance or its diagonal."""

    variant = "gaussian"

    def __init__(self, mean: np.ndarray, cov: np.ndarray | None = None,
                 cov_diag: np.ndarray | None = None):
        self.mean = np.asarray(mean, dtype=np.float64).ravel()
        self.dim = self.mean.shape[0]
        if (cov is None) == (cov_diag is None):
            raise ValueError("pass exactly one of cov or cov_diag")
        if cov_diag is not None:
            d = np.asarray(cov_diag, dtype=np.float64).ravel()
            if d.shape[0] != self.dim or np.any(d <= 0):
                raise ValueError("cov_diag must be positive with length dim")
            self.cov_diag = d
            self.cov = None
            self._logdet = float(np.sum(np.log(d)))
        else:
            c = np.asarray(cov, dtype=np.float64)
            if c.shape != (self.dim, self.dim) or not np.allclose(c, c.T):
                raise ValueError("cov must be symmetric (dim, dim)")
            self.cov = c
            self.cov_diag = None
            self._chol = np.linalg.cholesky(c)  # raises if not SPD
            self._prec = np.linalg.inv(c)
            self._logdet = 2.0 * float(np.sum(np.log(np.diag(self._chol))))

    def score(self, x):
        xb, single = _rows(x, self.dim)
        d = xb - self.mean
        s = -d / self.cov_diag if self.cov_diag is not None else -(d @ self._prec)
        return s[0] if single else s

    def logp(self, x):
        xb, single = _rows(x, self.dim)
        d = xb - self.mean
        if self.cov_diag is not None:
            quad = np.sum(d * d / self.cov_diag, axis=1)
        else:
            quad = np.sum(d * (d @ self._prec), axis=1)
        lp = -0.5 * (quad + self._logdet + self.dim * np.log(2.0 * np.pi))
        return lp[0] if single else lp

    def sample(self, n, rng):
        z = rng.gen.standard_normal((n, self.dim))
        if self.cov_diag is not None:
            return self.mean + z * np.sqrt(self.cov_diag)
        return self.mean + z @ self._chol.T

    def to_config(self):
        cfg = {"variant": "gaussian", "mean": self.mean.tolist()}
        if self.cov_diag is not None:
            cfg["cov_diag"] = self.cov_diag.tolist()
        else:
            cfg["cov"] = self.cov.tolist()
        return cfg


def standard_gaussian(dim: int, variance: float = 1.0) -> Gaussian:
    return Gaussian(mean=np.zeros(dim), cov_diag=np.full(dim, variance))


def diffusion_gaussian(dim: int, first_var: float = 0.3) -> Gaussian:
    """Isotropic Gaussian except the first coordinate, whose variance differs."""
    d = np.ones(dim)
    d[0] = first_var
    return Gaussian(mean=np.zeros(dim), cov_diag=d)


class FactorizedLaplace(ScoreModel):
    """Product of dim independent Laplace(0, scale) marginals.

    The score uses sign(0) := 0, a valid subgradient at the kink.
    """

    variant = "laplace"

    def __init__(self, dim: int, scale: float):
        if scale <= 0:
            raise ValueError("scale must be positive")
        self.dim = int(dim)
        self.scale = float(scale)

    def score(self, x):
        xb, single = _rows(x, self.dim)
        s = -np.sign(xb) / self.scale
        return s[0] if single else s

    def logp(self, x):
        xb, single = _rows(x, self.dim)
        lp = -np.sum(np.abs(xb), axis=1) / self.scale - self.dim * np.log(2.0 * self.scale)
        return lp[0] if single else lp

    def sample(self, n, rng):
        return rng.gen.laplace(0.0, self.scale, size=(n, self.dim))

    def to_config(self):
        return {"variant": "laplace", "dim": self.dim, "scale": self.scale}


class FactorizedStudentT(ScoreModel):
    """Product of dim independent standard Student-t(dof) marginals, dof > 2."""

    variant = "student_t"

    def __init__(self, dim: int, dof: float):
        if dof <= 2:
            raise ValueError("dof must exceed 2 so the variance exists")
        self.dim = int(dim)
        self.dof = float(dof)

    def score(self, x):
        xb, single = _rows(x, self.dim)
        s = -(self.dof + 1.0) * xb / (self.dof + xb * xb)
        return s[0] if single else s

    def logp(self, x):
        # up to the additive normalization constant
        xb, single = _rows(x, self.dim)
        lp = -0.5 * (self.dof + 1.0) * np.sum(np.log1p(xb * xb / self.dof), axis=1)
        return lp[0] if single else lp

    def sample(self, n, rng):
        return rng.gen.standard_t(self.dof, size=(n, self.dim))

    def to_config(self):
        return {"variant": "student_t", "dim": self.dim, "dof": self.dof}


class GaussBernoulliRbm(ScoreModel):
    """Gauss-Bernoulli RBM with hidden units in {-1, +1}.

    Energy E(x, h) = -x'Bh - b_v'x - b_h'h + |x|^2/2, so the visible marginal is
    log p(x) = b_v'x - |x|^2/2 + sum_j log cosh((B'x + b_h)_j) + const.
    """

    variant = "rbm"

    def __init__(self, B: np.ndarray, b_v: np.ndarray, b_h: np.ndarray):
        self.B = np.asarray(B, dtype=np.float64)
        self.b_v = np.asarray(b_v, dtype=np.float64).ravel()
        self.b_h = np.asarray(b_h, dtype=np.float64).ravel()
        if self.B.ndim != 2:
            raise ValueError("B must be (dim, hidden)")
        self.dim, self.hidden = self.B.shape
        if self.b_v.shape[0] != self.dim or self.b_h.shape[0] != self.hidden:
            raise ValueError("bias shapes do not match B")

    def score(self, x):
        xb, single = _rows(x, self.dim)
        t = xb @ self.B + self.b_h
        s = self.b_v - xb + np.tanh(t) @ self.B.T
        return s[0] if single else s

    def logp(self, x):
        # up to the additive normalization constant
        xb, single = _rows(x, self.dim)
        t = xb @ self.B + self.b_h
        logcosh = np.logaddexp(t, -t) - np.log(2.0)
        lp = xb @ self.b_v - 0.5 * np.sum(xb * xb, axis=1) + np.sum(logcosh, axis=1)
        return lp[0] if single else lp

    def sample(self, n, rng):
        raise UnsupportedSamplerError("RBM has no exact sampler; use rbm_gibbs")

    def to_config(self):
        return {"variant": "rbm", "B": self.B.tolist(),
                "b_v": self.b_v.tolist(), "b_h": self.b_h.tolist()}


def random_rbm(dim: int, hidden: int, rng: Rng, weight_scale: float = 1.0) -> GaussBernoulliRbm:
    """RBM with i.i.d. N(0, weight_scale^2) weights and N(0, 1) biases."""
    return GaussBernoulliRbm(B=weight_scale * rng.gen.standard_normal((dim, hidden)),
                             b_v=rng.gen.standard_normal(dim),
                             b_h=rng.gen.standard_normal(hidden))


def perturb_rbm(model: GaussBernoulliRbm, noise_level: float, rng: Rng) -> GaussBernoulliRbm:
    """Copy of the RBM with i.i.d. N(0, noise_level^2) noise added to the weights."""
    if noise_level < 0:
        raise ValueError("noise_level must be >= 0")
    eps = rng.gen.standard_normal(model.B.shape)
    return GaussBernoulliRbm(B=model.B + noise_level * eps, b_v=model.b_v.copy(),
                             b_h=model.b_h.copy())


@dataclass
class RbmChainState:
    """Block Gibbs chain state: visible batch and matching {-1,+1} hidden batch."""
    visible: np.ndarray
    hidden: np.ndarray


def rbm_gibbs(model: GaussBernoulliRbm, n_samples: int, rng: Rng,
              n_chains: int | None = None, burn_in: int = 2000, thinning: int = 1,
              callback=None, init: np.ndarray | None = None) -> np.ndarray:
    """Parallel block Gibbs sampling of the RBM visible marginal.

    Alternates h_j ~ +-1 with P(h_j=+1 | x) = sigmoid(2 (B'x + b_h)_j) and
    x ~ N(Bh + b_v, I). After ``burn_in`` sweeps, every ``thinning``-th sweep
    contributes one snapshot of all chains until ``n_samples`` rows are
    collected.

    ``callback(sweep, visible)`` fires after each burn-in sweep, which lets a
    caller train slicing directions on held-out chains while the sampler mixes.
    """
    if burn_in < 0 or thinning < 1 or n_samples < 1:
        raise ValueError("need burn_in >= 0, thinning >= 1, n_samples >= 1")
    n_chains = n_samples if n_chains is None else int(n_chains)
    x = rng.gen.standard_normal((n_chains, model.dim)) if init is None \
        else np.array(init, dtype=np.float64)
    if x.shape != (n_chains, model.dim):
        raise ValueError("init must be (n_chains, dim)")

    def sweep(x):
        logits = x @ model.B + model.b_h
        p_plus = 1.0 / (1.0 + np.exp(-2.0 * logits))
        h = np.where(rng.gen.random(p_plus.shape) < p_plus, 1.0, -1.0)
        x = h @ model.B.T + model.b_v + rng.gen.standard_normal((x.shape[0], model.dim))
        return x, h

    h = np.ones((n_chains, model.hidden))
    for s in range(burn_in):
        x, h = sweep(x)
        if callback is not None:
            callback(s, x)

    chunks = []
    collected = 0
    first = True
    while collected < n_samples:
        if not first:
            for _ in range(thinning):
                x, h = sweep(x)
        elif burn_in == 0:
            x, h = sweep(x)
        first = False
        chunks.append(x.copy())
        collected += n_chains
    return np.vstack(chunks)[:n_samples]


class IcaLaplace(ScoreModel):
    """Linear ICA with Laplace(0, 1) sources: z ~ Lap(0,1), x = W z.

    Normalized log density: sum_d log Lap(z_d; 0, 1) - log|det W| with
    z = W^-1 x. The score is -W^-T sign(W^-1 x), with sign(0) := 0.
    """

    variant = "ica"

    def __init__(self, W: np.ndarray):
        self.W = np.asarray(W, dtype=np.float64)
        if self.W.ndim != 2 or self.W.shape[0] != self.W.shape[1]:
            raise ValueError("W must be square")
        self.dim = self.W.shape[0]
        sign, logabsdet = np.linalg.slogdet(self.W)
        if sign == 0 or not np.isfinite(logabsdet):
            raise ValueError("W is singular")
        self.logabsdet = float(logabsdet)
        self.W_inv = np.linalg.inv(self.W)

    def unmix(self, x):
        xb, single = _rows(x, self.dim)
        z = xb @ self.W_inv.T
        return z[0] if single else z

    def score(self, x):
        xb, single = _rows(x, self.dim)
        e = np.sign(xb @ self.W_inv.T)
        s = -(e @ self.W_inv)
        return s[0] if single else s

    def logp(self, x):
        xb, single = _rows(x, self.dim)
        z = xb @ self.W_inv.T
        lp = -np.sum(np.abs(z), axis=1) - self.dim * np.log(2.0) - self.logabsdet
        return lp[0] if single else lp

    def sample(self, n, rng):
        z = rng.gen.laplace(0.0, 1.0, size=(n, self.dim))
        return z @ self.W.T

    def to_config(self):
        return {"variant": "ica", "W": self.W.tolist()}
