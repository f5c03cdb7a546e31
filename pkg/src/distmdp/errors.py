"""Exception hierarchy.

Each class carries an ``exit_code`` so the command line front end can map a
failure category to a process status without string matching.
"""


class DistMdpError(Exception):
    exit_code = 1


class ModelValidationError(DistMdpError, ValueError):
    """Malformed model: non-stochastic rows, bad shapes, bad spec files."""

    exit_code = 2

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class BudgetExceededError(DistMdpError):
    exit_code = 3


class NumericError(DistMdpError, ArithmeticError):
    exit_code = 4


class StructuralError(DistMdpError):
    """A graph lacks the complement-transitivity a product-form input guarantees."""

    exit_code = 5


class InfeasiblePairError(DistMdpError):
    """The control map cannot be recovered from the messages of an encoder."""

    exit_code = 6
