"""Exception hierarchy shared across the package."""


class FloodgenError(Exception):
    """Base class for every package-specific error."""


# --- dataset / array plumbing ---

class OutOfRange(FloodgenError):
    """A value violates its documented numeric range."""


class MissingFile(FloodgenError):
    """A required file is absent from a sample directory or dataset tree."""


class DimensionMismatch(FloodgenError):
    """Arrays that must share spatial dimensions do not."""


class MaskInconsistent(FloodgenError):
    """Stored binary water mask disagrees with the water-class pixels."""


class EmptyDomain(FloodgenError):
    """A required dataset domain contains zero images."""


class DuplicateId(FloodgenError):
    """Two samples declare the same id."""


class LabelOutOfRange(FloodgenError):
    """A segmentation label falls outside the configured class set."""


# --- geometry ---

class NoReferenceObjects(FloodgenError):
    """Scale estimation was asked to run on an empty detection list."""


class AlreadyMetric(FloodgenError):
    """Metric conversion applied to a height map that is already metric."""


class NotMetric(FloodgenError):
    """An operation requiring metric values received relative ones."""


class DepthProviderFailure(FloodgenError):
    """The pluggable depth provider raised while producing a depth map."""


# --- networks ---

class BadDims(FloodgenError):
    """Input spatial dimensions are incompatible with the encoder stride."""


class ShapeMismatch(FloodgenError):
    """Tensor shapes do not satisfy the architecture contract."""


class ModelLoadError(FloodgenError):
    """A checkpoint could not be read or has an incompatible format."""


# --- losses / training ---

class NonFiniteLoss(FloodgenError):
    """A loss component evaluated to NaN or infinity."""


class MissingMetadata(FloodgenError):
    """A simulated sample lacks the camera metadata an operation needs."""


# --- inference / service ---

class BadRequest(FloodgenError):
    """Mutually exclusive or missing request parameters."""


class EmptyInput(FloodgenError):
    """A batch operation received no usable inputs."""


class MissingApiKey(FloodgenError):
    """The live imagery client was constructed without an API key."""


class UpstreamUnavailable(FloodgenError):
    """The external imagery service failed or timed out."""

    retryable = True


class NoImagery(FloodgenError):
    """No street-level imagery exists for the requested location."""
