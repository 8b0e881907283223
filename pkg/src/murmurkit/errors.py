"""Exception hierarchy shared by all murmurkit modules."""


class MurmurkitError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(MurmurkitError, ValueError):
    """Invalid parameters or configuration (CLI exit code 2)."""


# audio_io
class NotWav(MurmurkitError):
    pass


class UnsupportedEncoding(MurmurkitError):
    pass


class EmptyAudio(MurmurkitError):
    pass


class InvalidRate(ConfigError):
    pass


# preprocess
class EmptySignal(MurmurkitError, ValueError):
    pass


class InvalidBand(ConfigError):
    pass


# scalogram
class InvalidFrequency(ConfigError):
    pass


class EmptySegment(MurmurkitError, ValueError):
    pass


class InvalidHop(ConfigError):
    pass


class DegenerateShape(ConfigError):
    pass


# dataset
class MissingColumn(MurmurkitError):
    pass


class UnreadableRow(MurmurkitError):
    pass


class UnknownLabel(MurmurkitError):
    pass


class EmptyManifest(ConfigError):
    pass


class TooFewSamples(MurmurkitError, ValueError):
    pass


class DegenerateFeatures(MurmurkitError, ValueError):
    pass


class ClassTooSmall(MurmurkitError, ValueError):
    pass


class BadFeatureStore(MurmurkitError):
    pass


# funnelcnn
class ShapeUnderflow(ConfigError):
    pass


class ShapeMismatch(MurmurkitError, ValueError):
    pass


class NonFiniteInput(MurmurkitError, ValueError):
    pass


class NoCachedForward(MurmurkitError, RuntimeError):
    pass


class BadModelFile(MurmurkitError):
    pass


# trainer
class ConfigMismatch(MurmurkitError, ValueError):
    pass


class NonFiniteLoss(MurmurkitError, RuntimeError):
    pass


class EmptyEvalSet(MurmurkitError, ValueError):
    pass


# quantkit
class EmptyRepresentativeSet(MurmurkitError, ValueError):
    pass
