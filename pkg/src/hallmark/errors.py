"""Exception taxonomy shared across the package.

Exit-code mapping used by the CLI: ConfigError -> 1, DataError -> 2,
TrainingAbort -> 3.
"""


class HallmarkError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(HallmarkError):
    """Problems with configuration or model/checkpoint compatibility."""


class InvalidConfig(ConfigError):
    """A configuration field violates its constraint. Names the first violation."""


class CheckpointMismatch(ConfigError):
    """Checkpoint config or tensor shapes disagree with the running config."""


class PhaseViolation(ConfigError):
    """Training phases requested out of their declared order or without prerequisites."""


class DataError(HallmarkError):
    """Problems with datasets, annotations, or input tensors."""


class ShapeMismatch(DataError):
    """Tensor shapes disagree with the operation's contract."""


class MissingAnnotation(DataError):
    """An image has no matching landmark or bbox annotation."""


class MalformedLandmarkFile(DataError):
    """A landmark file could not be parsed; message reports the line number."""


class EmptyVideo(DataError):
    """A video directory contains no usable frames."""


class TooFewFrames(EmptyVideo):
    """A video has fewer frames than pair sampling needs (at least 2)."""


class LandmarkOutOfFrame(DataError):
    """Augmentation pushed too many landmarks outside the crop after max retries."""


class InvalidSigma(DataError):
    """Heatmap rendering requested with sigma <= 0."""


class DegenerateHeatmap(DataError):
    """A heatmap is constant, so no unique maximum exists to decode."""


class DegenerateNormalizer(DataError):
    """An NME normalizer evaluated to a non-positive distance."""


class LandmarkCountMismatch(DataError):
    """Prediction and ground truth carry different landmark counts."""


class EmptyErrorList(DataError):
    """A metric over per-image errors received an empty list."""


class ImageTooSmall(DataError):
    """Image smaller than the metric's local window."""


class ScoreOutOfRange(DataError):
    """A discriminator score left (0, 1) despite the clamping contract."""


class TrainingAbort(HallmarkError):
    """Unrecoverable runtime failures during training."""


class NonFiniteLoss(TrainingAbort):
    """A loss component evaluated to NaN/Inf; reports the component name."""


class NonFiniteActivation(TrainingAbort):
    """A network activation became NaN/Inf during a forward pass."""


class ExtractorUnavailable(TrainingAbort):
    """Configured perceptual-extractor weights could not be loaded."""


class CheckpointWriteError(TrainingAbort):
    """A checkpoint could not be written to disk."""
