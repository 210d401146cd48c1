"""sqparse: superquadric ensemble fitting to 3D point clouds.

Fits a variable-size set of posed superquadrics to a target point cloud by
direct gradient descent on a bi-directional reconstruction loss whose
expectation over per-primitive Bernoulli existence variables is evaluated
analytically, plus a parsimony regularizer on the existence probabilities.
"""

from .errors import (
    AllRestartsFailed,
    DegenerateMesh,
    InvalidShape,
    NoActivePrimitives,
    NonFiniteLoss,
    OpenMesh,
    ParseError,
    SchemaError,
    SqparseError,
    TooFewPoints,
    TooManyPrimitives,
    UnsupportedFormat,
    UnsupportedVersion,
    ZeroQuaternion,
)
from .geometry import Ensemble, Pose, ShapeParams, Superquadric
from .io import Mesh, NormalizationRecord, PointCloud
from .loss import DistanceMatrix, LossConfig, LossReport
from .metrics import EvalConfig
from .sampler import AngleGrid, SurfaceSamples

__version__ = "0.1.0"

__all__ = [
    "AllRestartsFailed", "AngleGrid", "DegenerateMesh", "DistanceMatrix",
    "Ensemble", "EvalConfig", "InvalidShape", "LossConfig", "LossReport",
    "Mesh", "NoActivePrimitives", "NonFiniteLoss", "NormalizationRecord",
    "OpenMesh", "ParseError", "PointCloud", "Pose", "SchemaError",
    "ShapeParams", "SqparseError", "Superquadric", "SurfaceSamples",
    "TooFewPoints", "TooManyPrimitives", "UnsupportedFormat",
    "UnsupportedVersion", "ZeroQuaternion", "__version__",
]
