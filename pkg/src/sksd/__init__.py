"""Sliced kernelized Stein discrepancy toolkit.

Discrepancy estimation on optimized one-dimensional projections, bootstrap
goodness-of-fit testing, sliced Stein variational gradient descent, and
discrepancy-minimizing model learning, with deterministic seeded experiment
harnesses behind the ``sksd`` CLI.
"""
from .core import (AdamState, DegenerateBandwidthError, Rng, adam_step, lower_median,
                   median_distance, median_heuristic, multinomial_bootstrap_weights,
                   project_rows_to_sphere, splitmix64)
from .discrepancy import (DirectionGradients, DiscrepancyEstimate, SliceConfig,
                          bootstrap_null_samples, grad_wrt_directions, h_slice,
                          ksd_stat, ksd_stein_matrix, ksd_up, optimize_directions,
                          rbf_1d, sksd_ustat, sksd_vstat, slice_bandwidths,
                          stein_matrix, warmstart_rg_slices, xi_slice)
from .goftest import (BenchmarkSpec, GofOutcome, RbmGofSpec, benchmark_models,
                      gof_test, run_benchmark, run_rbm_gof, train_directions)
from .ica import (IcaConfig, IcaTrainState, grad_ica_wrt_w, ica_objective,
                  ica_random_matrix, make_ica_dataset, test_nll, train_ica)
from .samplers import (ParticleEnsemble, SamplerConfig, SamplerDivergedError,
                       SghmcSpec, VarianceSpec, gaussian_kl_oracle, parf,
                       run_ssvgd, run_svgd, run_variance_experiment,
                       select_step_size, sghmc_chain, ssvgd_direction, ssvgd_step,
                       svgd_direction, svgd_step, update_slices_for_sampler)
from .targets import (FactorizedLaplace, FactorizedStudentT, Gaussian,
                      GaussBernoulliRbm, IcaLaplace, ScoreModel,
                      UnsupportedSamplerError, diffusion_gaussian, perturb_rbm,
                      random_rbm, rbm_gibbs, standard_gaussian)

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
