"""Exception hierarchy.

Validation-type errors subclass ``ValueError`` so plain callers can catch them
the usual way; the CLI maps them onto exit codes.
"""


class DRError(Exception):
    """Base class for every error raised by this package."""


class DomainError(DRError, ValueError):
    """An argument lies outside the domain of a mathematical operation."""


class ContractError(DRError, ValueError):
    """An operation was called outside the preconditions it guarantees."""


class RecruitmentError(DRError, ValueError):
    """The population cannot be partitioned into the requested groups."""


class ScenarioError(DRError, ValueError):
    """A scenario file failed to parse or validate."""


class SolverError(DRError, RuntimeError):
    """A numerical solve failed to bracket or converge.

    Attributes:
        residual: last residual seen (``nan`` when no evaluation happened)
        interval: the interval that was scanned or bisected
    """

    def __init__(self, message, residual=float("nan"), interval=None):
        super().__init__(message)
        self.residual = residual
        self.interval = interval
