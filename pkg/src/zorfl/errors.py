"""Exception hierarchy.

Anything deriving from :class:`NumericalFailure` is a numerical abort (CLI exit
code 3); configuration and I/O problems map to exit code 2.
"""


class ZorflError(Exception):
    pass


class NumericalFailure(ZorflError, ArithmeticError):
    """A numerical routine failed or left its domain of validity."""


class DegenerateProjection(NumericalFailure):
    """The nearest-point projection is undefined or not unique for the input."""


class TubeEscape(NumericalFailure):
    """An iterate left the tube around the manifold where projection is well behaved."""


class MembershipViolation(ZorflError, ValueError):
    pass


class NonTangentDirection(ZorflError, ValueError):
    pass


class SmoothingOutOfTube(ZorflError, ValueError):
    pass


class MissingExactGradient(ZorflError):
    pass


class InvalidScheme(ZorflError, ValueError):
    pass


class ConfigError(ZorflError, ValueError):
    pass


class ParseError(ZorflError, ValueError):
    def __init__(self, message, line=None, col=None):
        self.line = line
        self.col = col
        where = ""
        if line is not None:
            where = f" (line {line}" + (f", column {col})" if col is not None else ")")
        super().__init__(message + where)


class RaggedRows(ParseError):
    pass
