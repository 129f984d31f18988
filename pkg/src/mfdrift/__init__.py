"""Stochastic macroscopic fundamental diagram toolkit.

Simulates Wiener-driven exit-flow variation on one or more traffic
reservoirs, solves the matching one-dimensional Fokker-Planck problems,
evaluates Lyapunov stability bounds on the noise level, and calibrates the
diffusion parameter from accumulation observations.
"""

from .analysis import (exit_flow_distribution_at, gridlock_probability, hysteresis_curve,
                       joint_heatmap, marginal_at_time, pearson_correlation, sample_skewness)
from .calibration import CalibrationResult, ObservationSeries, calibrate, log_likelihood
from .dynamics import (RegionParams, RegionState, TransferMatrix, diffusion_vector,
                       drift_vector, effective_inflow, outflow_split, psi)
from .fokker_planck import DensityField, Grid1D, fpe_coefficients_1d, fpe_residual_full, solve_fpe_1d
from .integrator import EnsembleResult, PathRecord, run_ensemble, run_frozen_band, run_path
from .mfd import (BoundarySpec, GammaDelta, MfdCurveSpec, characteristic_curves,
                  critical_accumulation, eval_curve, gamma_delta)
from .rng import SeedTree, derive_stream, standard_normal
from .scenario import (DemandProfile, ScenarioConfig, SimConfig, eval_demand, list_presets,
                       load_preset, load_scenario, serialize)
from .stability import EquilibriumPoint, LvReport, find_equilibrium, lv_terms, lv_total, sigma_bound
from .variation import (DriftMode, anchor_w, drift_diffusion, inverse_transform,
                        step_latent_w, transform_w_to_z)

__version__ = "0.1.0"
