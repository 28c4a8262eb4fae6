"""Exception hierarchy.

Usage errors (bad shapes, wrong noise domain, invalid labels) derive from
``ValueError`` so ordinary callers can catch them the usual way.
"""


class ChromaShapeError(Exception):
    pass


class ShapeMismatchError(ChromaShapeError, ValueError):
    pass


class DomainError(ChromaShapeError, ValueError):
    """Noise field carries the wrong colour-domain tag."""


class LabelError(ChromaShapeError, ValueError):
    pass


class PngError(ChromaShapeError):
    pass


class PngNotFoundError(PngError, FileNotFoundError):
    pass


class MalformedPngError(PngError):
    pass


class UnsupportedPngError(PngError):
    pass


class ModelFileError(ChromaShapeError):
    pass


class CorruptModelError(ModelFileError):
    pass


class ModelVersionError(ModelFileError):
    pass


class TrainingDivergedError(ChromaShapeError):
    pass


class DegenerateGradientError(ChromaShapeError):
    """An iterative attack met an all-zero gradient."""


class NumericFailureError(ChromaShapeError):
    pass


class DatasetError(ChromaShapeError):
    pass
