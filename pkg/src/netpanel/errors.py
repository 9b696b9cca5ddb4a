"""Exception taxonomy shared across the package.

Every error raised on a user-facing code path derives from
:class:`NetpanelError`, so callers (and the CLI) can distinguish
data/numerical failures (exit code 1) from configuration mistakes
(exit code 2, :class:`ConfigError`).
"""


class NetpanelError(Exception):
    """Base class for all package errors."""


# ---------------------------------------------------------------------------
# panel loading / validation


class BalanceError(NetpanelError):
    """A unit/period cell expected in a balanced panel is missing."""


class DuplicateError(NetpanelError):
    """The same (unit, period) cell appears more than once."""


class ParseError(NetpanelError):
    """A CSV field could not be parsed (bad number, bad header, bad meta)."""


# ---------------------------------------------------------------------------
# network construction


class DomainError(NetpanelError):
    """An input lies outside its mathematical domain."""


class DegenerateDistanceError(NetpanelError):
    """Two distinct units share coordinates where an inverse distance is needed."""


class MetadataError(NetpanelError):
    """Required facility metadata (labels, coordinates) is missing."""


class NormalizationError(NetpanelError):
    """A network row cannot be normalized (zero weight sum with links present)."""


# ---------------------------------------------------------------------------
# linear algebra / dimensions


class DimensionError(NetpanelError):
    """Array shapes or requested dimensions are incompatible."""


class SingularDesignError(NetpanelError):
    """A regression design or moment matrix is numerically rank deficient."""


class WeakInstrumentError(NetpanelError):
    """A first-stage fit is degenerate (fitted instrument identically zero)."""


class UnderidentifiedError(NetpanelError):
    """Fewer instruments than regressors in an IV system."""


class InsufficientUnitsError(NetpanelError):
    """Too few cross-section units contribute to a mean-group average."""


class DegenerateGroupError(NetpanelError):
    """A fixed-effect or cluster group has too few observations."""


# ---------------------------------------------------------------------------
# impact analysis


class StabilityError(NetpanelError):
    """The spatial system is explosive: spectral radius of Psi*W is >= 1."""


class SingularityError(NetpanelError):
    """A matrix that must be inverted is singular."""


class UnreliableSEError(NetpanelError):
    """Too many simulation draws were discarded to report standard errors."""


class QuantileError(NetpanelError):
    """A quantile grouping cannot be formed (too few units or degenerate sizes)."""


# ---------------------------------------------------------------------------
# homophily diagnostics


class DegenerateLabelsError(NetpanelError):
    """A categorical attribute has a single distinct value."""


class ConvergenceError(NetpanelError):
    """An iterative fit failed to converge within the iteration budget."""


# ---------------------------------------------------------------------------
# simulation / configuration


class ConfigError(NetpanelError):
    """Invalid or inconsistent configuration values."""
