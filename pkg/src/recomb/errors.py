"""Exception hierarchy.

Every error carries the process exit code the command-line tool maps it to:
2 for malformed input, 3 for integration failures, 4 for violated
preconditions.
"""


class RecombError(Exception):
    exit_code = 4


class InputError(RecombError, ValueError):
    exit_code = 2


class NonPositivePayoff(InputError):
    pass


class ShapeMismatch(InputError):
    pass


class InvalidState(InputError):
    pass


class ScenarioError(InputError):
    pass


class UnknownTrait(InputError, KeyError):
    def __str__(self):
        # KeyError quotes its message; keep it readable.
        return str(self.args[0]) if self.args else ""


class StepUnstable(RecombError):
    exit_code = 3


class PreconditionError(RecombError):
    exit_code = 4


class ZeroMarginal(PreconditionError):
    pass


class ZeroWeight(PreconditionError):
    pass


class InvalidTrait(PreconditionError):
    pass


class RequiresPositiveR(PreconditionError):
    pass


class NotStationary(PreconditionError):
    pass


class SingularState(PreconditionError):
    pass


class NoConvergence(PreconditionError):
    pass


class SupportCollapse(PreconditionError):
    pass


class NotRegular(PreconditionError):
    pass


class AssumptionUnverified(PreconditionError):
    pass
