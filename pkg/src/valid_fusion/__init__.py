"""Late-fusion verification of LiDAR 2D detections against camera detections.

A small MLP looks at each LiDAR box next to its best-matching camera box(es)
and decides whether to keep it. The package also ships a KITTI-style 2D AP
evaluator and a seeded synthetic-scene generator.
"""

from .geometry import Box2D, ImageDims, NormalizedBox, iou
from .kitti_io import Detection, Difficulty, GroundTruthObject, Modality
from .matching import FeatureLayout, MatchConfig
from .verifier import MlpModel, TrainConfig

__all__ = [
    "Box2D", "ImageDims", "NormalizedBox", "iou",
    "Detection", "Difficulty", "GroundTruthObject", "Modality",
    "FeatureLayout", "MatchConfig",
    "MlpModel", "TrainConfig",
]

__version__ = "0.1.0"
