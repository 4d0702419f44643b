"""Exception hierarchy.

Every error carries a short ``kind`` string; the CLI prints it as
``ERROR:<kind>:<message>`` so scripts can match on failure classes.
"""


class ResaError(Exception):
    kind = "Resa"


class ShapeMismatch(ResaError, ValueError):
    kind = "ShapeMismatch"


class ZeroRow(ResaError, ValueError):
    kind = "ZeroRow"

    def __init__(self, index):
        super().__init__(f"row {index} has (near) zero norm")
        self.index = index


class NotNormalized(ResaError, ValueError):
    kind = "NotNormalized"

    def __init__(self, index):
        super().__init__(f"row {index} is not L2-normalized")
        self.index = index


class NonPositiveTau(ResaError, ValueError):
    kind = "NonPositiveTau"


class NonSquareInput(ResaError, ValueError):
    kind = "NonSquareInput"


class NonPositiveEpsilon(ResaError, ValueError):
    kind = "NonPositiveEpsilon"


class RowsNotStochastic(ResaError, ValueError):
    kind = "RowsNotStochastic"


class TooFewPrototypes(ResaError, ValueError):
    kind = "TooFewPrototypes"


class StaleTape(ResaError, RuntimeError):
    kind = "StaleTape"


class CoefficientOutOfRange(ResaError, ValueError):
    kind = "CoefficientOutOfRange"


class SingleCluster(ResaError, ValueError):
    kind = "SingleCluster"


class EmptyInput(ResaError, ValueError):
    kind = "EmptyInput"


class LengthMismatch(ResaError, ValueError):
    kind = "LengthMismatch"


class KTooLarge(ResaError, ValueError):
    kind = "KTooLarge"


class DegenerateSpec(ResaError, ValueError):
    kind = "DegenerateSpec"


class MalformedFile(ResaError, ValueError):
    kind = "MalformedFile"

    def __init__(self, message, line=None, offset=None):
        where = ""
        if line is not None:
            where = f" (line {line})"
        elif offset is not None:
            where = f" (offset {offset})"
        super().__init__(message + where)
        self.line = line
        self.offset = offset


class DimensionOverflow(ResaError, ValueError):
    kind = "DimensionOverflow"


class BatchTooSmall(ResaError, ValueError):
    kind = "BatchTooSmall"


class NonFiniteLoss(ResaError, FloatingPointError):
    kind = "NonFiniteLoss"

    def __init__(self, step, dump=None):
        super().__init__(f"non-finite loss at step {step}")
        self.step = step
        self.dump = dump or {}


class CorruptCheckpoint(ResaError, ValueError):
    kind = "CorruptCheckpoint"


class ConfigMismatch(ResaError, ValueError):
    kind = "ConfigMismatch"


class ConfigError(ResaError, ValueError):
    kind = "Config"
