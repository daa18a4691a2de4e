"""Exception types raised across the package."""


class RectAttnError(Exception):
    """Base class for all package errors."""


class ShapeError(RectAttnError):
    """Operands have inconsistent or invalid dimensions."""


class BlockSizeError(RectAttnError):
    """Video token count is not divisible by the block size, or the block size is invalid."""


class EmptyRowError(RectAttnError):
    """A sparse mask row retains no key blocks."""


class MissingGridError(RectAttnError):
    """An operation needs (t, h, w) grid dimensions that were not provided."""


class DegenerateRowError(RectAttnError):
    """A reallocation denominator collapsed to zero."""


class ConfigError(RectAttnError):
    """A sparsity or experiment configuration is out of range or inconsistent."""


class ZeroReferenceError(RectAttnError):
    """The reference matrix of a normalized metric is all zero."""


class ZeroVectorError(RectAttnError):
    """An argument of cosine similarity is the zero vector."""


class IoError(RectAttnError):
    """A file could not be read, parsed, or written."""


class SchemaError(RectAttnError):
    """A CSV/JSON input does not match the expected schema."""
