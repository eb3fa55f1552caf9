"""Exception hierarchy shared by every module of the package."""


class SceneCtxError(Exception):
    """Base class for all package errors."""


class DegenerateLookAt(SceneCtxError, ValueError):
    pass


class NotARotation(SceneCtxError, ValueError):
    pass


class LengthMismatch(SceneCtxError, ValueError):
    pass


class ShapeMismatch(SceneCtxError, ValueError):
    pass


class BadFov(SceneCtxError, ValueError):
    pass


class EmptyOutput(SceneCtxError, ValueError):
    pass


class BadDirection(SceneCtxError, ValueError):
    pass


class MagnitudeOutOfRange(SceneCtxError, ValueError):
    pass


class FactorOutOfRange(SceneCtxError, ValueError):
    pass


class SubjectAtEye(SceneCtxError, ValueError):
    pass


class EyeInsideGeometry(SceneCtxError, ValueError):
    pass


class BadDims(SceneCtxError, ValueError):
    pass


class FormatError(SceneCtxError, ValueError):
    """A file on disk does not follow the expected layout."""
