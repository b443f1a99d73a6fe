"""Exception hierarchy shared by every stage of the solver."""


class FTFLError(Exception):
    """Base class for all package errors."""


class ParseError(FTFLError, ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class InfeasibleError(FTFLError):
    """The instance or LP admits no feasible solution."""


class SolverError(FTFLError):
    """The LP solver failed (iteration limit, unboundedness, numerical breakdown)."""


class SizeError(FTFLError, ValueError):
    """Input exceeds a hard size bound (e.g. exact enumeration)."""


class StructureError(FTFLError, ValueError):
    """A set family is not laminar or violates its ordering contract."""


class ContractError(FTFLError, ValueError):
    """A function was called outside its precondition."""


class InternalConsistencyError(FTFLError):
    """An invariant that the algorithm guarantees was found violated.

    ``stage`` names the pipeline stage that detected the problem.
    """

    def __init__(self, message: str, stage: str | None = None):
        self.stage = stage
        if stage is not None:
            message = f"[{stage}] {message}"
        super().__init__(message)
