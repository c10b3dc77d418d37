"""Exception hierarchy shared by all modules.

Every error names the component that raised it so CLI messages can point at
the failing stage.
"""


class VgpmilError(Exception):
    component = "vgpmil"

    def __init__(self, message, component=None):
        if component is not None:
            self.component = component
        super().__init__(message)

    def __str__(self):
        return f"[{self.component}] {super().__str__()}"


class InputError(VgpmilError, ValueError):
    """Malformed or inconsistent input (CLI exit code 1)."""


class NumericalError(VgpmilError, ArithmeticError):
    """Factorization failure or other numerical breakdown (CLI exit code 2)."""


class OracleInfeasibleError(NumericalError):
    """Rejection sampler acceptance rate too low to give a usable estimate."""
