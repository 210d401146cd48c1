"""Exception types shared across the package."""


class SqparseError(Exception):
    """Base class for all sqparse errors."""


class ZeroQuaternion(SqparseError):
    """Quaternion with (near-)zero norm cannot define a rotation."""


class InvalidShape(SqparseError):
    """Superquadric shape parameters outside the supported range."""


class DegenerateMesh(SqparseError):
    """Mesh has no triangle with positive area."""


class TooManyPrimitives(SqparseError):
    """Exhaustive existence enumeration refused (2^M blowup guard)."""


class NonFiniteLoss(SqparseError):
    """Forward pass produced NaN or Inf."""


class TooFewPoints(SqparseError):
    """Point cloud smaller than the number of requested primitives."""


class AllRestartsFailed(SqparseError):
    """Every fitting restart aborted with a non-finite loss."""


class NoActivePrimitives(SqparseError):
    """No primitive passes the existence threshold."""


class OpenMesh(SqparseError):
    """Ray-parity containment test is inconsistent; mesh is not watertight."""


class ParseError(SqparseError):
    """Malformed mesh file; message carries path and line/offset."""


class UnsupportedFormat(SqparseError):
    """File extension or encoding this reader does not handle."""


class SchemaError(SqparseError):
    """Ensemble JSON document missing required fields."""


class UnsupportedVersion(SqparseError):
    """Ensemble JSON document with an unknown schema version."""
