"""Exception hierarchy shared by every backend."""


class SpinChainError(Exception):
    """Base class for all package errors."""


class ModelValidationError(SpinChainError, ValueError):
    pass


class NonSymmetric(ModelValidationError):
    def __init__(self, i, j, m_ij, m_ji):
        self.index = (i, j)
        super().__init__(f"couplings not symmetric at ({i}, {j}): M[{i},{j}]={m_ij!r} != M[{j},{i}]={m_ji!r}")


class NotBanded(ModelValidationError):
    def __init__(self, i, j, R):
        self.index = (i, j)
        super().__init__(f"nonzero coupling at ({i}, {j}) beyond range R={R}")


class NotDiagonallyDominant(ModelValidationError):
    def __init__(self, i, delta):
        self.index = i
        self.delta = delta
        super().__init__(f"row {i} is not strictly diagonally dominant (margin {delta!r} <= 0)")


class DimensionMismatch(ModelValidationError):
    def __init__(self, what, expected, got):
        super().__init__(f"{what}: expected length {expected}, got {got}")


class SameSite(SpinChainError, ValueError):
    pass


class ConstraintViolation(SpinChainError, ValueError):
    pass


class PotentialNotGaussian(SpinChainError):
    pass


class FactorizationError(SpinChainError):
    pass


class DimensionTooLarge(SpinChainError):
    pass


class RangeNotSupported(SpinChainError):
    pass


class NonContiguousSupport(SpinChainError):
    pass


class FourierTruncationInsufficient(SpinChainError):
    pass


class BracketNotFound(SpinChainError):
    pass


class NoConvergence(SpinChainError):
    pass


class BackendInapplicable(SpinChainError):
    pass


class DriftTooLarge(SpinChainError):
    pass


class TooFewSamples(SpinChainError, ValueError):
    pass


class TooFewPoints(SpinChainError, ValueError):
    pass


class NonPositiveValue(SpinChainError, ValueError):
    pass


class ConfigError(SpinChainError):
    """Config file problem; ``line`` is 1-based when known."""

    def __init__(self, message, line=None, path=None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}"
        if line is not None:
            where += f":{line}"
        super().__init__(f"{where}: {message}" if where else message)
