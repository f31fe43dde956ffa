"""Exception hierarchy shared across the package."""


class MomentbandError(Exception):
    """Base class for all package errors."""


# -- data ingestion ----------------------------------------------------------

class SchemaError(MomentbandError):
    """A named column is missing or the schema is internally inconsistent."""


class ParseError(MomentbandError):
    """A cell in a used column is non-numeric, NaN, or infinite."""


class EmptyData(MomentbandError):
    """Fewer than two data rows."""


class BadBounds(MomentbandError):
    """Grid axis with lo >= hi."""


class ZeroResolution(MomentbandError):
    """Grid axis with resolution < 1."""


# -- kernels -----------------------------------------------------------------

class BadSize(MomentbandError):
    """Subsample size outside [2, n]."""


class ZeroReplicates(MomentbandError):
    """Requested zero subsamples or replicates."""


class TooSmall(MomentbandError):
    """Subsample too small for an honest split at the configured min_leaf."""


class BadK(MomentbandError):
    """k-NN neighbor count outside [1, subsample size]."""


class EmptySupport(MomentbandError):
    """No unit receives positive kernel weight at the query."""


# -- moments -----------------------------------------------------------------

class MissingNuisance(MomentbandError):
    """Moment requires a nuisance value that was not supplied."""


class MissingTreatment(MomentbandError):
    """Moment requires a treatment indicator absent from the data."""


class UnsupportedLaw(MomentbandError):
    """Operation requires a finite discrete law."""


# -- nuisance ----------------------------------------------------------------

class EmptyArm(MomentbandError):
    """A treatment arm has too few units to fit on."""


class BadScheme(MomentbandError):
    """Unknown or invalid nuisance fitting scheme."""


# -- estimator ---------------------------------------------------------------

class IllPosed(MomentbandError):
    """|sum(K * m1)| below the ill-posedness floor."""


# -- bootstrap ---------------------------------------------------------------

class OddN(MomentbandError):
    """Half-sampling requires an even resampling universe (strict mode)."""


class OddFold(MomentbandError):
    """Cross-split half-sampling requires even fold sizes (strict mode)."""


class DegenerateQ(MomentbandError):
    """Binomial draw stuck at 0 or n after repeated redraws."""


class TooFewReplicates(MomentbandError):
    """Not enough bootstrap replicates for the requested quantity."""


class BadAlpha(MomentbandError):
    """Level alpha outside (0, 1)."""


# -- ustat -------------------------------------------------------------------

class BudgetExceeded(MomentbandError):
    """Enumeration would exceed the evaluation budget."""


class BadOrder(MomentbandError):
    """Kernel order incompatible with the sample."""


class NotCentered(MomentbandError):
    """Operation requires a kernel declared centered under the working law."""


class OrderTooHigh(MomentbandError):
    """Hoeffding decomposition implemented only for orders <= 3."""


# -- cli / config ------------------------------------------------------------

class ConfigError(MomentbandError):
    """Invalid or unknown configuration key/value."""
