"""Shared exception types."""


class PosslogError(Exception):
    """Base class for all library errors."""


class ParseError(PosslogError):
    """Malformed input text; carries a line number when available."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class SignatureError(ParseError):
    """Conflicting arities for one predicate name."""


class DomainError(PosslogError):
    """Argument outside the admissible domain (bad subset, width, variable)."""


class SizeError(PosslogError):
    """Instance exceeds a hard size ceiling of an exact method."""


class EvidenceError(PosslogError):
    """Evidence literal set is self-contradictory."""


class InfeasibleError(PosslogError):
    """Optimization or generation problem has no feasible point."""


class BudgetExhausted(PosslogError):
    """A work budget ran out; carries whatever partial state was reached."""

    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial


class PipelineError(PosslogError):
    """A pipeline stage failed; names the stage and wraps the cause."""

    def __init__(self, stage, cause):
        super().__init__(f"stage {stage}: {cause}")
        self.stage = stage
        self.cause = cause
