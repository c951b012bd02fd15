"""Exception hierarchy. The CLI maps ConfigurationError to exit status 2
and every other ChemostatError to exit status 3."""


class ChemostatError(Exception):
    pass


class ConfigurationError(ChemostatError, ValueError):
    """Malformed model, state or settings."""


class DomainError(ChemostatError, ValueError):
    """Inputs outside the hypotheses an operation needs."""


class NoCoexistenceError(DomainError):
    """u >= u_c(eps): the washout is the only steady state."""


class NumericError(ChemostatError, ArithmeticError):
    pass


class StiffnessError(NumericError):
    pass


class DegeneracyError(NumericError):
    """Dominant eigenvalue is not simple."""


class InternalConsistencyError(NumericError):
    pass
