"""Exception hierarchy shared by all malab modules.

Every error carries a JSON-serializable payload so the CLI can emit it
verbatim on stderr.
"""

from __future__ import annotations


class MalabError(Exception):
    """Base class; `details` must stay JSON-serializable."""

    def __init__(self, message, **details):
        super().__init__(message)
        self.message = message
        self.details = details

    def to_json(self):
        return {
            "error": type(self).__name__,
            "message": self.message,
            "details": self.details,
        }


class DomainError(MalabError):
    """Domain empty, unbounded or otherwise unusable."""


class ConvergenceError(MalabError):
    """An iteration cap was hit; details carry the final gap / history."""


class StencilError(MalabError):
    """A finite-difference stencil does not fit at the requested node."""


class ConvexityError(MalabError):
    """A Hessian that must be positive definite is not."""


class DegeneracyError(MalabError):
    """A pointwise quantity is singular (non-PD Hessian at a probe)."""


class ExtrapolationError(MalabError):
    """Dual nodes fall outside the sampled gradient hull."""


class WindowError(MalabError):
    """A sublevel section is not compactly contained in the window."""


class UnboundedSectionError(MalabError):
    """A level-set ray leaves the potential's domain before the level."""


class PreconditionError(MalabError):
    """An operation's stated precondition failed its gate check."""


class CounterexampleError(MalabError):
    """A probe violated a bound the theory guarantees on valid inputs."""


class UsageError(MalabError):
    """Bad configuration or command line; maps to exit code 2."""
