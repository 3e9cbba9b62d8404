"""Exception types raised across the package.

Everything derives from :class:`FocalError` so the CLI can map failures to
exit codes without catching unrelated bugs.
"""


class FocalError(Exception):
    """Base class for all package errors."""


class TensorFileError(FocalError, ValueError):
    """A tensor file violates the on-disk layout.

    ``offset`` is the byte offset at which parsing failed.
    """

    def __init__(self, message, offset):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class BadMagic(TensorFileError):
    pass


class UnsupportedVersion(TensorFileError):
    pass


class UnsupportedDtype(TensorFileError):
    pass


class TruncatedPayload(TensorFileError):
    pass


class IoFailure(FocalError, OSError):
    pass


class ShapeMismatch(FocalError, ValueError):
    pass


class ChannelMismatch(ShapeMismatch):
    pass


class MaskShapeMismatch(ShapeMismatch):
    pass


class ParseError(FocalError, ValueError):
    def __init__(self, message, line=None, column=None):
        where = f" (line {line}, column {column})" if line is not None else ""
        super().__init__(message + where)
        self.line = line
        self.column = column


class ShapeCompositionError(FocalError, ValueError):
    def __init__(self, message, layer_index):
        super().__init__(f"layer {layer_index}: {message}")
        self.layer_index = layer_index


class MissingTensorFile(FocalError, FileNotFoundError):
    pass


class NoConvAfterK(FocalError, ValueError):
    pass


class IndexOutOfRange(FocalError, IndexError):
    pass


class NotAConvLayer(FocalError, ValueError):
    pass


class EmptyCalibrationSet(FocalError, ValueError):
    pass


class InfeasibleBudget(FocalError):
    """No split point satisfies the energy budget."""


class EmptyDataset(FocalError, ValueError):
    pass


class LabelMismatch(FocalError, ValueError):
    pass
