"""Exception hierarchy shared across the package.

Every error carries a short machine-readable ``category`` used by the CLI
for its exit diagnostics.
"""


class TreePolyaError(Exception):
    category = "error"


class DomainError(TreePolyaError, ValueError):
    """Arguments outside the mathematical domain of an operation."""

    category = "domain"


class UsageError(TreePolyaError, ValueError):
    """Structurally invalid call (wrong shapes, wrong node kinds, ...)."""

    category = "usage"


class ConvergenceError(TreePolyaError, RuntimeError):
    """An iterative routine failed to converge within its budget."""

    category = "convergence"


class ValidationError(TreePolyaError, ValueError):
    """A tree or model violates a structural invariant."""

    category = "validation"

    def __init__(self, message, violations=None):
        super().__init__(message)
        self.violations = list(violations) if violations else [message]


class ParseError(TreePolyaError, ValueError):
    """Malformed input file (CSV data or model document)."""

    category = "parse"
