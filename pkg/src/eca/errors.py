"""Exception types shared across the pipeline."""


class EcaError(Exception):
    """Base class for all analysis errors."""


class CohortParseError(EcaError):
    """Malformed cohort file (bad dates, duplicate lines, unknown arm, ...)."""


class SchemaViolationError(CohortParseError):
    """Structural violation of the cohort schema (e.g. multi-line trial patient)."""


class DataError(EcaError):
    """Inconsistent clinical data (e.g. event date before line start)."""


class ConfigError(EcaError):
    """Fatal configuration problem (empty arm after filtering, bad plan)."""


class PlanError(ConfigError):
    """Invalid analysis plan file."""


class SeparationError(EcaError):
    """Monotone likelihood: a covariate (or treatment) perfectly separates groups."""

    def __init__(self, message, covariates=()):
        super().__init__(message)
        self.covariates = tuple(covariates)


class SingularityError(EcaError):
    """Singular normal equations during model fitting."""


class NonConvergenceError(EcaError):
    """Iteration cap reached without meeting the convergence criteria."""


class ExtremeWeightError(EcaError):
    """Propensity score so close to 1 that the odds weight is unusable."""
