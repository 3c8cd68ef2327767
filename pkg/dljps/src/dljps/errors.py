"""Exception types shared across the package."""


class DataError(ValueError):
    """Dataset file is malformed or internally inconsistent."""


class TrainingError(RuntimeError):
    """Training failed its own sanity policies (e.g. non-finite loss)."""


class ModelError(ValueError):
    """Model artifact is missing, malformed, or incompatible with the data."""


class AccuracyError(ValueError):
    """Selection masks cannot be scored (shape mismatch, empty label set)."""
