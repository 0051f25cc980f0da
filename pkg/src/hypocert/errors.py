"""Exception types raised across the package."""


class HypocertError(Exception):
    """Base class for every error raised by this package."""


class NonFiniteField(HypocertError):
    pass


class ToleranceExceeded(HypocertError):
    def __init__(self, message, point=None, residual=None):
        super().__init__(message)
        self.point = point
        self.residual = residual


class RankDeficientSpan(HypocertError):
    pass


class SingularFrame(HypocertError):
    pass


class StructureConditionViolated(HypocertError):
    def __init__(self, message, point=None, residual=None):
        super().__init__(message)
        self.point = point
        self.residual = residual


class NonPositiveDiffusion(HypocertError):
    pass


class StencilOutOfDomain(HypocertError):
    pass


class NonPositiveDensity(HypocertError):
    pass


class SingularMass(HypocertError):
    pass


class SingularBlock(HypocertError):
    pass


class EmptyRange(HypocertError):
    pass


class CflViolation(HypocertError):
    pass


class NegativeDensity(HypocertError):
    pass


class ConfigParse(HypocertError):
    def __init__(self, message, path=""):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path
