"""Feed-forward compression of 3D Gaussian Splatting scenes.

The usual entry points::

    from fcgs import parse_ply, gen_test_weights, encode_scene, decode_scene

    cloud = parse_ply(open("scene.ply", "rb").read())
    weights = gen_test_weights()
    data = encode_scene(cloud, weights, seed=0)
    back = decode_scene(data, weights)
"""

from .errors import (
    CoderError,
    CorruptionError,
    FcgsError,
    FormatError,
    SchemaError,
    SerializationError,
    TruncationError,
    WeightsError,
    WeightsMismatchError,
)
from .model_io import GaussianCloud, SceneBBox, compute_bbox, parse_ply, write_ply
from .neural import ModelWeights, gen_test_weights, load_weights
from .pipeline import decode_scene, encode_scene, estimate, inspect
from .report import RateReport

__version__ = "0.1.0"

__all__ = [
    "CoderError",
    "CorruptionError",
    "FcgsError",
    "FormatError",
    "GaussianCloud",
    "ModelWeights",
    "RateReport",
    "SceneBBox",
    "SchemaError",
    "SerializationError",
    "TruncationError",
    "WeightsError",
    "WeightsMismatchError",
    "compute_bbox",
    "decode_scene",
    "encode_scene",
    "estimate",
    "gen_test_weights",
    "inspect",
    "load_weights",
    "parse_ply",
    "write_ply",
]
