"""Stochastic phase-space simulation of long-range interacting lattice bosons.

Positive-P and gauged-P trajectory ensembles for bosonic lattice fields with
pairwise long-range interactions, plus the analytic sampling-variance toolbox
(gauge optimization, useful-simulation-time estimates) and small exact
reference solvers.
"""

from .analytics import (InitialMoments, StrategyReport, TsimEstimate,
                        VarianceReport, gauge_strategy, tsim, v_gauge_p,
                        v_no_drift_gauged, v_positive_p, variance_report)
from .errors import (ConfigurationError, EstimatorDegenerateError, GaugepError,
                     OracleGuardError, RunFailedError)
from .gauges import (GaugeConfig, GaugeIntegrals, a_approx, a_opt_diffusion_only,
                     gauge_integrals, global_O, nonlocal_A, nonlocal_O,
                     optimize_O_numeric)
from .model import (InteractionPotential, LatticeSpec, ModelSpec,
                    build_potential_matrix, kinetic_omega, potential_spectrum,
                    rectified_U, symmetric_sqrt, tunneling_omega)

__version__ = "0.1.0"

__all__ = [
    "ConfigurationError", "EstimatorDegenerateError", "GaugepError",
    "OracleGuardError", "RunFailedError",
    "InteractionPotential", "LatticeSpec", "ModelSpec",
    "build_potential_matrix", "kinetic_omega", "potential_spectrum",
    "rectified_U", "symmetric_sqrt", "tunneling_omega",
    "GaugeConfig", "GaugeIntegrals", "a_approx", "a_opt_diffusion_only",
    "gauge_integrals", "global_O", "nonlocal_A", "nonlocal_O",
    "optimize_O_numeric",
    "InitialMoments", "StrategyReport", "TsimEstimate", "VarianceReport",
    "gauge_strategy", "tsim", "v_gauge_p", "v_no_drift_gauged", "v_positive_p",
    "variance_report",
    "__version__",
]
