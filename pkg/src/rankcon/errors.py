"""Exception hierarchy shared across the package."""


class RankconError(Exception):
    """Base class for every error raised on purpose by rankcon."""


class ValidationError(RankconError, ValueError):
    """Invalid user-supplied configuration or data."""


class ContractError(RankconError, ValueError):
    """A caller broke a documented precondition."""


class ShapeError(ContractError):
    """Operand shapes are incompatible for an operation."""

    def __init__(self, op, *shapes):
        self.op = op
        self.shapes = tuple(tuple(s) for s in shapes)
        desc = " vs ".join(str(s) for s in self.shapes)
        super().__init__(f"{op}: incompatible shapes {desc}")


class DomainError(ContractError):
    """Input outside the mathematical domain of an operation (log of <=0, division by 0, overflow)."""


class DegenerateInputError(ContractError):
    """Input the operation cannot handle meaningfully, e.g. a zero-norm vector."""


class ResolutionError(ValidationError):
    """A name could not be resolved against the dataset's label map."""


class IngestionError(RankconError, IOError):
    """A data file is missing, truncated or malformed."""


class CheckpointError(RankconError, IOError):
    """A checkpoint or container file is corrupt or does not match the requested architecture."""


class TrainingDiverged(RankconError, RuntimeError):
    """Loss became non-finite during training."""

    def __init__(self, step, indices, message="non-finite loss"):
        self.step = step
        self.indices = list(indices)
        super().__init__(f"{message} at step {step}")
