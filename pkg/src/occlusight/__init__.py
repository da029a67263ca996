"""Occluder-assisted non-line-of-sight imaging from single-photon counts."""

__version__ = "0.1.0"

from .analysis import (SpectrumReport, SweepReport, bar_dip, bars_resolved, rmse,
                       singular_spectrum, sweep_bars, sweep_lambda, sweep_occluder, sweep_ppp)
from .artifacts import read_counts, read_pgm, render_pgm, write_counts, write_reflectivity
from .config import ConfigError, ScenarioConfig, bundled, load_config, parse_config
from .photoncount import (AcquisitionParams, CountError, CountMatrix, binomial_log_pmf,
                          detection_probability, p0, pulses_for_ppp, rate_estimate,
                          simulate_counts)
from .recon import (ReconstructionConfig, ReconstructionError, ReconstructionResult,
                    StepRule, matched_gaussian_lambda, nll_binomial, nll_binomial_grad,
                    nll_gaussian, nll_gaussian_grad, reconstruct, tv_prox, tv_seminorm)
from .scene import (Detector, DiskOccluder, PlanarPatchGrid, SceneError, SceneGeometry,
                    geometric_factor, shadow, visible_hidden_set)
from .transport import (ForwardOperator, OperatorError, apply_adjoint, apply_forward,
                        build_operator, kernel_entry)
