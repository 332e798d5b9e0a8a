import json

import numpy as np
import pytest

from sksd.core import Rng
from sksd.discrepancy import xi_slice
from sksd.targets import (FactorizedLaplace, FactorizedStudentT, Gaussian,
                          GaussBernoulliRbm, IcaLaplace, ScoreModel,
                          UnsupportedSamplerError, diffusion_gaussian,
                          perturb_rbm, random_rbm, rbm_gibbs, standard_gaussian)


def fd_score(model, x, h=1e-5):
    """Central finite difference of logp, the score oracle."""
    x = np.asarray(x, dtype=np.float64)
    out = np.zeros_like(x)
    for d in range(x.size):
        xp = x.copy(); xp[d] += h
        xm = x.copy(); xm[d] -= h
        out[d] = (model.logp(xp) - model.logp(xm)) / (2 * h)
    return out


def all_models(rng):
    d = 4
    a = rng.gen.standard_normal((d, d))
    return [
        standard_gaussian(d),
        Gaussian(mean=rng.gen.standard_normal(d), cov=a @ a.T / d + 0.5 * np.eye(d)),
        diffusion_gaussian(d),
        FactorizedLaplace(d, scale=0.7),
        FactorizedStudentT(d, dof=5.0),
        random_rbm(d, 3, rng.split(1), weight_scale=0.4),
        IcaLaplace(0.8 * np.eye(d) + 0.1 * rng.split(2).gen.standard_normal((d, d))),
    ]


class TestScores:
    def test_standard_gaussian(self):
        m = standard_gaussian(2)
        assert np.allclose(m.score(np.array([1.0, -2.0])), [-1.0, 2.0])

    def test_diffusion_first_coordinate(self):
        m = diffusion_gaussian(5, first_var=0.3)
        e1 = np.zeros(5); e1[0] = 1.0
        s = m.score(e1)
        assert s[0] == pytest.approx(-1.0 / 0.3)
        assert np.allclose(s[1:], 0.0)

    def test_student_t_formula(self):
        m = FactorizedStudentT(3, dof=5.0)
        x = np.array([1.0, 0.0, 0.0])
        assert m.score(x)[0] == pytest.approx(-1.0)

    def test_laplace_sign_zero_convention(self):
        m = FactorizedLaplace(2, scale=1.0)
        assert np.allclose(m.score(np.zeros(2)), 0.0)

    def test_ica_subgradient_at_zero(self):
        m = IcaLaplace(np.eye(2))
        assert np.all(np.isfinite(m.score(np.zeros(2))))

    def test_score_matches_finite_difference_everywhere(self):
        rng = Rng(0)
        for model in all_models(rng.split(10)):
            pts = rng.gen.standard_normal((20, model.dim)) * 1.5 + 0.1
            for x in pts:
                want = fd_score(model, x)
                got = model.score(x)
                denom = max(1.0, np.linalg.norm(want))
                assert np.linalg.norm(got - want) / denom < 1e-4, model.variant

    def test_batched_equals_single(self):
        rng = Rng(4)
        for model in all_models(rng.split(1)):
            xs = rng.gen.standard_normal((5, model.dim))
            batched = model.score(xs)
            for i, x in enumerate(xs):
                assert np.allclose(batched[i], model.score(x))


class TestLogDensity:
    def test_ica_identity_at_zero(self):
        m = IcaLaplace(np.eye(2))
        assert m.logp(np.zeros(2)) == pytest.approx(2 * np.log(0.5))

    def test_gaussian_difference(self):
        m = standard_gaussian(3)
        x = np.array([0.5, -1.0, 2.0])
        assert m.logp(x) - m.logp(np.zeros(3)) == pytest.approx(-0.5 * x @ x)

    def test_rbm_logp_matches_score(self):
        rng = Rng(2)
        m = random_rbm(4, 3, rng, weight_scale=0.3)
        for x in rng.gen.standard_normal((5, 4)):
            rel = np.linalg.norm(m.score(x) - fd_score(m, x)) / max(1.0, np.linalg.norm(m.score(x)))
            assert rel < 1e-5


class TestSampling:
    def test_laplace_variance(self):
        m = FactorizedLaplace(3, scale=1.0 / np.sqrt(2.0))
        x = m.sample(100_000, Rng(1))
        assert np.var(x[:, 0]) == pytest.approx(1.0, abs=0.02)

    def test_student_t_variance(self):
        m = FactorizedStudentT(2, dof=5.0)
        x = m.sample(100_000, Rng(2))
        assert np.var(x[:, 0]) == pytest.approx(5.0 / 3.0, abs=0.05)

    def test_ica_scaling_law(self):
        m = IcaLaplace(np.array([[2.0]]))
        x = m.sample(100_000, Rng(3))
        assert np.var(x) == pytest.approx(8.0, abs=0.3)

    def test_gaussian_full_cov(self):
        a = Rng(4).gen.standard_normal((3, 3))
        cov = a @ a.T + np.eye(3)
        m = Gaussian(mean=np.ones(3), cov=cov)
        x = m.sample(200_000, Rng(5))
        assert np.allclose(np.cov(x, rowvar=False), cov, atol=0.05)

    def test_rbm_exact_sampler_refused(self):
        m = random_rbm(3, 2, Rng(0))
        with pytest.raises(UnsupportedSamplerError, match="rbm_gibbs"):
            m.sample(10, Rng(1))

    def test_determinism(self):
        m = FactorizedLaplace(2, scale=1.0)
        assert np.array_equal(m.sample(10, Rng(7)), m.sample(10, Rng(7)))


class TestRbmGibbs:
    def test_decoupled_model_is_standard_normal(self):
        m = GaussBernoulliRbm(B=np.zeros((3, 2)), b_v=np.zeros(3), b_h=np.zeros(2))
        x = rbm_gibbs(m, n_samples=4000, rng=Rng(0), n_chains=400, burn_in=50)
        se = 1.0 / np.sqrt(4000)
        assert np.all(np.abs(x.mean(axis=0)) < 3 * se + 0.05)
        assert np.allclose(x.var(axis=0), 1.0, atol=0.1)

    def test_two_state_mixture_moments(self):
        # H=1, D=1: p(x) is a mixture of N(b_v +- B, 1) with weights
        # proportional to exp(+-b_h + (b_v +- B)^2 / 2)
        B, bv, bh = 0.8, 0.3, 0.2
        m = GaussBernoulliRbm(B=np.array([[B]]), b_v=np.array([bv]), b_h=np.array([bh]))
        lw_plus = bh + 0.5 * (bv + B) ** 2
        lw_minus = -bh + 0.5 * (bv - B) ** 2
        z = np.exp(lw_plus) + np.exp(lw_minus)
        w_plus = np.exp(lw_plus) / z
        mean = w_plus * (bv + B) + (1 - w_plus) * (bv - B)
        second = w_plus * (1 + (bv + B) ** 2) + (1 - w_plus) * (1 + (bv - B) ** 2)
        n = 40000
        x = rbm_gibbs(m, n_samples=n, rng=Rng(3), n_chains=200, burn_in=500, thinning=2)
        assert x.mean() == pytest.approx(mean, abs=4 * np.sqrt(second) / np.sqrt(n) + 0.02)
        assert np.mean(x**2) == pytest.approx(second, rel=0.05)

    def test_stein_identity_on_chain(self):
        # E_q[xi_q(x, z0)] ~ 0 when samples come from the model itself
        rng = Rng(8)
        m = random_rbm(3, 2, rng, weight_scale=0.3)
        x = rbm_gibbs(m, n_samples=3000, rng=rng.split(1), n_chains=300, burn_in=800,
                      thinning=3)
        r = np.array([1.0, 0.0, 0.0])
        g = np.array([0.0, 1.0, 0.0])
        vals = np.array([xi_slice(m, xi, 0.3, r, g, 1.0) for xi in x[:2000]])
        assert abs(vals.mean()) < 4 * vals.std() / np.sqrt(len(vals))

    def test_exact_sample_count_without_burnin(self):
        m = GaussBernoulliRbm(B=np.zeros((2, 1)), b_v=np.zeros(2), b_h=np.zeros(1))
        x = rbm_gibbs(m, n_samples=17, rng=Rng(0), n_chains=5, burn_in=0, thinning=1)
        assert x.shape == (17, 2)

    def test_callback_sees_every_burnin_sweep(self):
        m = GaussBernoulliRbm(B=np.zeros((2, 1)), b_v=np.zeros(2), b_h=np.zeros(1))
        seen = []
        rbm_gibbs(m, n_samples=5, rng=Rng(0), n_chains=5, burn_in=7,
                  callback=lambda s, x: seen.append((s, x.shape)))
        assert [s for s, _ in seen] == list(range(7))
        assert all(shape == (5, 2) for _, shape in seen)


class TestPerturbRbm:
    def test_zero_level_identical(self):
        m = random_rbm(4, 3, Rng(0))
        q = perturb_rbm(m, 0.0, Rng(1))
        assert np.array_equal(q.B, m.B)

    def test_frobenius_magnitude(self):
        m = random_rbm(30, 20, Rng(0))
        q = perturb_rbm(m, 0.01, Rng(1))
        expect = 0.01 * np.sqrt(30 * 20)
        assert np.linalg.norm(q.B - m.B) == pytest.approx(expect, rel=0.2)

    def test_same_seed_same_perturbation(self):
        m = random_rbm(4, 3, Rng(0))
        assert np.array_equal(perturb_rbm(m, 0.05, Rng(9)).B,
                              perturb_rbm(m, 0.05, Rng(9)).B)


class TestSerialization:
    def test_round_trip_all_variants(self):
        rng = Rng(6)
        for model in all_models(rng):
            doc = json.loads(json.dumps(model.to_config()))
            clone = ScoreModel.from_config(doc)
            x = rng.gen.standard_normal((3, model.dim))
            assert np.allclose(clone.score(x), model.score(x))
            assert np.allclose(clone.logp(x), model.logp(x))

    def test_field_names(self):
        cfg = random_rbm(2, 2, Rng(0)).to_config()
        assert set(cfg) == {"variant", "B", "b_v", "b_h"}
        cfg = IcaLaplace(np.eye(2)).to_config()
        assert set(cfg) == {"variant", "W"}
        cfg = standard_gaussian(2).to_config()
        assert set(cfg) == {"variant", "mean", "cov_diag"}
