"""Exception hierarchy shared by every stage of the pipeline."""


class KoopmanBoundaryError(Exception):
    """Base class; the CLI reports the concrete class name on failure."""


class NumericalDomainError(KoopmanBoundaryError, ArithmeticError):
    pass


class UnknownModelError(KoopmanBoundaryError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class ConfigError(KoopmanBoundaryError, ValueError):
    pass


class NonHyperbolicError(KoopmanBoundaryError, ValueError):
    pass


class NotTypeOneError(KoopmanBoundaryError, ValueError):
    pass


class UnsupportedSpectrumError(KoopmanBoundaryError, ValueError):
    pass


class PathIntegralError(KoopmanBoundaryError, RuntimeError):
    pass


class EmptySampleSetError(KoopmanBoundaryError, ValueError):
    pass


class FitError(KoopmanBoundaryError, ValueError):
    pass


class NoCrossingError(KoopmanBoundaryError, RuntimeError):
    pass


class MissingArtifactError(KoopmanBoundaryError, FileNotFoundError):
    pass
