"""Exception hierarchy shared by every stage of the pipeline.

Each exception carries an ``exit_code`` so the command line front-end can map
failures to process status without inspecting types one by one.
"""


class ThermavatarError(Exception):
    exit_code = 1


class ConfigError(ThermavatarError):
    exit_code = 2


class ConfigInvalid(ConfigError):
    pass


class DataError(ThermavatarError):
    exit_code = 3


class MissingFrames(DataError):
    pass


class DimensionMismatch(DataError):
    pass


class UnreadableFile(DataError):
    pass


class ShapeInconsistent(DataError):
    pass


class InvalidSequence(DataError):
    pass


class InvalidMask(DataError):
    pass


class MissingReference(DataError):
    pass


class MissingUpstreamArtifact(DataError):
    pass


class EmptyMatrix(DataError):
    pass


class TooFewPixels(DataError):
    pass


class NoValidPairs(DataError):
    pass


class BadOffset(DataError):
    pass


class ImageTooSmall(DataError):
    pass


class EmptySample(DataError):
    pass


class EmptyRegion(DataError):
    pass


class SingleClass(DataError):
    pass


class TooFewCases(DataError):
    pass


class SizeMismatch(DataError):
    pass


class LesionOutOfBounds(DataError):
    pass


class NumericalError(ThermavatarError):
    exit_code = 4


class RankTooLarge(NumericalError):
    pass


class NegativeInput(NumericalError):
    pass


class NegativeLambda(NumericalError):
    pass


class BadLayerSizes(NumericalError):
    pass


class NotNormalized(NumericalError):
    pass


class DegenerateKernel(NumericalError):
    pass


class NonPositiveBandwidth(NumericalError):
    pass


class BlockTooSmall(NumericalError):
    pass


class AllFeaturesDegenerate(NumericalError):
    pass


class ZeroNoiseStd(NumericalError):
    pass


class UnstableTimestep(NumericalError):
    pass
