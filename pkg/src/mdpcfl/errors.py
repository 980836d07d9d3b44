"""Exception hierarchy."""


class MdpcflError(Exception):
    pass


class InvalidParams(MdpcflError, ValueError):
    pass


# code construction / decoding
class InfeasibleDegree(InvalidParams):
    pass


class SingularBlock(MdpcflError):
    pass


class ScheduleMismatch(MdpcflError, ValueError):
    pass


class StoppingSet(MdpcflError):
    """Peeling stalled; the erased positions contain a stopping set."""


# supports
class InfeasibleParameters(InvalidParams):
    pass


class OddDistance(InvalidParams):
    pass


# crypto
class SupportSizeMismatch(InvalidParams):
    pass


class DegenerateSpec(InvalidParams):
    pass


class DimensionMismatch(MdpcflError, ValueError):
    pass


class KeyMismatch(MdpcflError, ValueError):
    pass


# learning / protocol
class NonFiniteGradient(MdpcflError, FloatingPointError):
    pass


class ConservationViolation(MdpcflError):
    pass


# data / config
class BadMagic(MdpcflError, ValueError):
    pass


class TruncatedFile(MdpcflError, ValueError):
    pass


class ConfigError(MdpcflError, ValueError):
    pass
