"""Exception types raised across the pipeline.

Every error carries a plain message naming the offending value, path or field.
"""


class MRTumorError(Exception):
    """Base class for all package errors."""


# --- volume I/O ---------------------------------------------------------------

class NiftiError(MRTumorError, ValueError):
    """Base class for NIfTI parsing and writing failures."""


class BadMagic(NiftiError):
    pass


class UnsupportedDatatype(NiftiError):
    pass


class TruncatedFile(NiftiError):
    pass


class MalformedHeader(NiftiError):
    """Header fields are internally inconsistent (dims, offsets, sizes)."""


class NonFiniteVolume(NiftiError):
    pass


class IoFailure(NiftiError, OSError):
    pass


# --- numerical preconditions --------------------------------------------------

class DegenerateInput(MRTumorError, ValueError):
    pass


class BadDims(MRTumorError, ValueError):
    pass


class WrongSliceCount(BadDims):
    pass


class DimensionMismatch(MRTumorError, ValueError):
    pass


class SingleClass(MRTumorError, ValueError):
    pass


class InvalidSpec(MRTumorError, ValueError):
    pass


class NoConvergenceWarning(UserWarning):
    """The SVM solver hit its iteration cap before meeting its tolerance."""


# --- metrics ------------------------------------------------------------------

class EmptyCounts(MRTumorError, ValueError):
    pass


class NoPositives(MRTumorError, ValueError):
    pass


class NoNegatives(MRTumorError, ValueError):
    pass


# --- orchestration ------------------------------------------------------------

class MissingModel(MRTumorError, FileNotFoundError):
    pass


class MissingTemplate(MRTumorError, FileNotFoundError):
    pass


class ConfigInvalid(MRTumorError, ValueError):
    pass
