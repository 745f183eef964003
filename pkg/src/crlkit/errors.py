class CRLError(Exception):
    """Base class for all errors raised by crlkit."""


class ConfigurationError(CRLError, ValueError):
    """Dimension mismatch, unknown option, or otherwise invalid setup."""


class PreconditionError(CRLError, ValueError):
    """An operation was called on data that does not satisfy its precondition."""


class StateError(CRLError, RuntimeError):
    """Learner state is inconsistent with the requested operation."""


class TrainingDivergence(CRLError, FloatingPointError):
    """A loss or gradient became non-finite."""


class PlannerFailure(CRLError, RuntimeError):
    """Every candidate action sequence produced a non-finite rollout."""


class DataError(CRLError, ValueError):
    """Training data references an unknown task or violates isolation rules."""


class CheckpointError(CRLError, IOError):
    """Checkpoint is corrupt, truncated, or from an incompatible format version."""
