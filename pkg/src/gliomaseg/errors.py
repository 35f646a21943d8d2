"""Exception hierarchy shared across the package."""


class GliomasegError(Exception):
    """Base class for all library errors."""


# --- volume I/O ---

class BadMagic(GliomasegError):
    pass


class UnsupportedDatatype(GliomasegError):
    def __init__(self, code):
        super().__init__(f"unsupported NIfTI datatype code {code}")
        self.code = code


class TruncatedPayload(GliomasegError):
    pass


class NonFiniteVoxel(GliomasegError):
    pass


class SidecarParse(GliomasegError):
    pass


class LengthMismatch(GliomasegError):
    pass


class MissingModality(GliomasegError):
    pass


class DimsMismatch(GliomasegError):
    pass


class UnknownLabelValue(GliomasegError):
    def __init__(self, value):
        super().__init__(f"label value {value} not in the declared alphabet")
        self.value = value


class IoFailure(GliomasegError):
    pass


class ConstantRegionWarning(UserWarning):
    """Z-score normalization hit a region with (near-)zero variance."""


# --- augmentation ---

class NonPositiveSigma(GliomasegError):
    pass


class NonPositiveMagnitude(GliomasegError):
    pass


class BadVariantId(GliomasegError):
    pass


# --- autodiff / layers / models ---

class ShapeMismatch(GliomasegError):
    pass


class UnsupportedKernel(GliomasegError):
    pass


class NonScalarLoss(GliomasegError):
    pass


class DomainError(GliomasegError):
    pass


class DegenerateSpatial(GliomasegError):
    pass


class IndivisibleDims(GliomasegError):
    pass


class PatchLargerThanVolume(GliomasegError):
    pass


class CheckpointMismatch(GliomasegError):
    pass


# --- losses / metrics ---

class GridMismatch(GliomasegError):
    pass


# --- ROI ---

class EmptyBox(GliomasegError):
    pass


class RecordMismatch(GliomasegError):
    pass


# --- pipeline / CLI ---

class ConfigError(GliomasegError):
    pass


class DataError(GliomasegError):
    pass


class MissingPrediction(GliomasegError):
    pass


class NumericFailure(GliomasegError):
    pass
