"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid or inconsistent configuration values."""


class StatisticsError(RuntimeError):
    """Channel statistics are unusable (e.g. indefinite correlation matrix)."""


class DivergentMomentError(ArithmeticError):
    """An inverse moment E{1/zeta^k} does not exist for the given spectrum.

    Raised when the rank of the quadratic form is too small (rank <= 1 for the
    first inverse moment, rank <= 2 for the second). Callers that search over
    selections catch this and treat the candidate as unusable; direct rate
    queries propagate it so the caller can fall back to Monte Carlo.
    """


class PrecoderError(RuntimeError):
    """Zero-forcing precoder could not be formed (rank-deficient channel)."""


class SelectionError(ValueError):
    """A port selection violates its structural constraints."""


class FeasibilityError(ValueError):
    """Requested per-BS port counts cannot be satisfied."""


class SimulationError(RuntimeError):
    """A Monte Carlo run failed its own sanity policies (e.g. reject rate)."""
