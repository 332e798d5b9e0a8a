import numpy as np
import pytest

from sksd.core import Rng
from sksd.discrepancy import DirectionOptimizer, SliceConfig, sksd_vstat
from sksd.samplers import (ParticleEnsemble, SamplerConfig, SamplerDivergedError,
                           SghmcSpec, gaussian_kl_oracle, parf, run_ssvgd, run_svgd,
                           select_step_size, sghmc_chain, ssvgd_direction, ssvgd_step,
                           svgd_direction, svgd_step, update_slices_for_sampler)
from sksd.targets import Gaussian, standard_gaussian


def unit_slices(d):
    return SliceConfig.onehot(np.eye(d))


class TestSvgdStep:
    def test_single_particle_is_gradient_ascent(self):
        m = Gaussian(mean=np.array([1.0, -2.0]), cov_diag=np.ones(2))
        x = np.array([[0.0, 0.0]])
        assert np.allclose(svgd_direction(m, x), m.score(x))

    def test_symmetric_set_stays_symmetric(self):
        m = standard_gaussian(1)
        x = np.array([[-1.5], [-0.3], [0.3], [1.5]])
        ens = ParticleEnsemble(x=x, step_size=0.1)
        for _ in range(20):
            ens = svgd_step(m, ens)
        assert np.allclose(ens.x, -ens.x[::-1], atol=1e-12)

    def test_low_dim_long_run_recovers_moments(self):
        m = standard_gaussian(2)
        rng = Rng(0)
        x0 = 2.0 + rng.gen.standard_normal((100, 2))
        ens = run_svgd(m, x0, steps=1500, step_size=0.1)
        assert np.all(np.abs(ens.x.mean(axis=0)) < 0.1)
        assert abs(ens.var_avg() - 1.0) < 0.15

    def test_fixed_point_at_target_samples(self):
        # at exact draws from p the mean update vanishes at the CLT rate,
        # and it dwarfs under a mean-shifted cloud of the same size
        m = standard_gaussian(3)
        n = 2000
        x = m.sample(n, Rng(1))
        at_target = np.linalg.norm(svgd_direction(m, x).mean(axis=0))
        assert at_target < 4 / np.sqrt(n)
        shifted = np.linalg.norm(svgd_direction(m, x + 0.5).mean(axis=0))
        assert shifted > 10 * at_target
        bigger = m.sample(4 * n, Rng(2))
        assert np.linalg.norm(svgd_direction(m, bigger).mean(axis=0)) < at_target


class TestSsvgdStep:
    def test_single_particle_matches_svgd(self):
        m = Gaussian(mean=np.array([0.5, 0.5]), cov_diag=np.ones(2))
        x = np.array([[2.0, -1.0]])
        assert np.allclose(ssvgd_direction(m, x, unit_slices(2)), m.score(x))

    def test_1d_identity_slices_equal_svgd(self):
        m = Gaussian(mean=np.array([0.3]), cov_diag=np.array([1.2]))
        x = Rng(2).gen.standard_normal((25, 1))
        d1 = svgd_direction(m, x)
        d2 = ssvgd_direction(m, x, unit_slices(1))
        assert np.max(np.abs(d1 - d2)) < 1e-12

    def test_1d_trajectory_matches_svgd(self):
        m = standard_gaussian(1)
        x0 = Rng(3).gen.standard_normal((15, 1)) + 1.0
        a = ParticleEnsemble(x=x0.copy(), step_size=0.05)
        b = ParticleEnsemble(x=x0.copy(), step_size=0.05)
        sl = unit_slices(1)
        for _ in range(50):
            a = svgd_step(m, a)
            b = ssvgd_step(m, b, sl)
        assert np.max(np.abs(a.x - b.x)) < 1e-12

    def test_requires_full_coordinate_slices(self):
        m = standard_gaussian(3)
        with pytest.raises(ValueError):
            ssvgd_direction(m, np.zeros((4, 3)), SliceConfig.random(3, Rng(0), "rg", 1))


class TestSliceUpdates:
    def test_ascends_objective_on_average(self):
        m = standard_gaussian(4)
        x = Rng(4).gen.standard_normal((60, 4)) + 1.0
        wins = 0
        for seed in range(10):
            sl = SliceConfig.random(4, Rng(seed))
            opt = DirectionOptimizer(m, sl, lr=0.01)
            v0 = sksd_vstat(m, x, sl).value
            update_slices_for_sampler(m, x, opt, adam_steps=30)
            v1 = sksd_vstat(m, x, opt.slices).value
            wins += v1 >= v0 - 1e-6
        assert wins >= 9

    def test_schedule_honored(self):
        m = standard_gaussian(2)
        rng = Rng(5)
        x0 = rng.gen.standard_normal((10, 2))
        init = SliceConfig.random(2, rng.split(1))
        cfg = SamplerConfig(g_update_every=10)
        _, sl9 = run_ssvgd(m, x0, 9, 0.05, rng.split(2), cfg, slices=init)
        assert np.array_equal(sl9.directions, init.directions)
        _, sl10 = run_ssvgd(m, x0, 10, 0.05, rng.split(2), cfg, slices=init)
        assert not np.array_equal(sl10.directions, init.directions)

    def test_kl_decrease_magnitude_nonnegative(self):
        m = standard_gaussian(3)
        for seed in range(20):
            x = Rng(seed).gen.standard_normal((15, 3)) * 2.0
            sl = SliceConfig.random(3, Rng(seed + 1000))
            assert sksd_vstat(m, x, sl).value >= -1e-10


class TestParf:
    def test_single_particle_zero(self):
        assert parf(np.zeros((1, 3)), "svgd") == 0.0

    def test_coincident_particles_zero(self):
        x = np.tile([0.7, -0.2], (5, 1))
        assert parf(x, "svgd") == pytest.approx(0.0, abs=1e-12)
        assert parf(x, "ssvgd", unit_slices(2)) == pytest.approx(0.0, abs=1e-12)

    def test_dimension_trend(self):
        # SVGD repulsion fades with dimension; sliced repulsion holds its
        # scale (the coordinate-max grows only like sqrt(log D) on iid clouds)
        rng = Rng(6)
        svgd_vals, ssvgd_vals = [], []
        for d in (2, 20, 50, 100):
            x = rng.gen.standard_normal((50, d))
            svgd_vals.append(parf(x, "svgd"))
            ssvgd_vals.append(parf(x, "ssvgd", unit_slices(d)))
        assert all(a > b for a, b in zip(svgd_vals, svgd_vals[1:]))
        assert svgd_vals[-1] < svgd_vals[0] / 10
        ref = ssvgd_vals[0]
        assert all(0.5 * ref < v < 2.0 * ref for v in ssvgd_vals)
        # the svgd/ssvgd gap widens by an order of magnitude
        assert svgd_vals[-1] / ssvgd_vals[-1] < 0.1 * svgd_vals[0] / ssvgd_vals[0]


class TestSghmc:
    def test_small_step_recovers_gaussian(self):
        a = Rng(7).gen.standard_normal((4, 4))
        cov = a @ a.T / 4 + 0.5 * np.eye(4)
        m = Gaussian(mean=np.zeros(4), cov=cov)
        s = sghmc_chain(m, step_size=0.01, n_samples=20000, rng=Rng(8),
                        friction=0.3, n_chains=100, burn_in=3000, thinning=2)
        emp = np.cov(s, rowvar=False)
        assert np.max(np.abs(emp - cov)) / np.max(np.abs(cov)) < 0.1

    def test_divergence_names_step_size(self):
        m = Gaussian(mean=np.zeros(2), cov_diag=np.full(2, 1e-4))
        with pytest.raises(SamplerDivergedError, match="2.5"):
            sghmc_chain(m, step_size=2.5, n_samples=100, rng=Rng(9),
                        n_chains=10, burn_in=500)

    def test_exact_count_no_burnin(self):
        m = standard_gaussian(2)
        s = sghmc_chain(m, 0.05, n_samples=23, rng=Rng(10), n_chains=7,
                        burn_in=0, thinning=1)
        assert s.shape == (23, 2)

    def test_callback_during_burnin(self):
        m = standard_gaussian(2)
        seen = []
        sghmc_chain(m, 0.05, n_samples=5, rng=Rng(11), n_chains=5, burn_in=4,
                    callback=lambda s, x: seen.append(s))
        assert seen == [0, 1, 2, 3]


class TestStepSizeSelection:
    def test_single_candidate_trivial(self):
        m = standard_gaussian(2)
        spec = SghmcSpec(n_chains=20, burn_in=50, thinning=1, n_samples=100)
        sel = select_step_size(m, [0.05], "ksd", Rng(12), spec)
        assert sel.chosen == 0.05

    def test_gross_bias_separation(self):
        # stiff target: the huge step blows past the integrator's stability
        # limit while the small step stays usable
        cov = np.diag([1e-3, 1.0, 1.0, 1.0, 1e-3])
        m = Gaussian(mean=np.zeros(5), cov=cov)
        spec = SghmcSpec(n_chains=50, burn_in=800, thinning=2, n_samples=500)
        sel = select_step_size(m, [1e-4, 1e-1], "ksd", Rng(13), spec)
        assert sel.chosen == pytest.approx(1e-4)
        by_step = {r.step_size: r for r in sel.records}
        assert not np.isfinite(by_step[0.1].discrepancy)

    def test_kl_oracle_zero_at_truth(self):
        m = Gaussian(mean=np.zeros(3), cov=np.diag([1.0, 2.0, 0.5]))
        s = m.sample(100_000, Rng(14))
        assert gaussian_kl_oracle(s, m) < 5e-4


class TestEnsembleContracts:
    def test_particle_count_preserved(self):
        m = standard_gaussian(2)
        ens = ParticleEnsemble(x=Rng(15).gen.standard_normal((13, 2)), step_size=0.1)
        out = svgd_step(m, ens)
        assert out.x.shape == (13, 2)
        assert out.iteration == 1

    def test_repulsive_coef_validated(self):
        with pytest.raises(ValueError):
            SamplerConfig(repulsive_coef=0.0)
