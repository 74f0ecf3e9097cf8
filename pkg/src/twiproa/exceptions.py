"""Exception hierarchy shared across the package."""


class TwipRoaError(Exception):
    """Base class for errors raised by this package."""


class SynthesisError(TwipRoaError):
    """A controller or set could not be synthesized from the given data."""


class CertificationError(TwipRoaError):
    """The invariant set could not be certified or is not admissible."""


class DependencyError(TwipRoaError):
    """A pipeline stage ran before the artifacts it needs exist."""


class ConfigError(TwipRoaError, ValueError):
    """The pipeline configuration is invalid."""
