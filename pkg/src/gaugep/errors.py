"""Exception types shared across the package.

The CLI maps these onto process exit codes:

* :class:`ConfigurationError` -> 2 (bad config / bad arguments)
* :class:`RunFailedError`     -> 3 (ensemble unusable: too many divergent
  trajectories, or the weighted estimator denominator degenerated)
* :class:`OracleGuardError`   -> 4 (a reference-solver guard refused to run:
  dimension cap exceeded, truncation tail too fat, or preconditions violated)
"""


class GaugepError(Exception):
    """Base class for package errors."""


class ConfigurationError(GaugepError):
    """Invalid configuration, parameters, or preconditions of an operation."""


class RunFailedError(GaugepError):
    """A stochastic run produced an unusable ensemble."""


class EstimatorDegenerateError(RunFailedError):
    """Weighted-estimator denominator indistinguishable from zero."""


class OracleGuardError(GaugepError):
    """A reference solver refused: guard limits or preconditions not met."""
