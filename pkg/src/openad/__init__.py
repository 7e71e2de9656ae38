"""Open-world driving detection toolkit: dual-threshold evaluation, general /
specialized model fusion, and a vision-centric 2-D to 3-D box converter."""

from .core import (Box2D, Box3D, CameraCalib, CameraView, Domain, GroundTruthObject, MetricsReport, Prediction,
                   Scene, SemanticLabel, Task, Violation, normalize_yaw, validate_scene)
from .evaluation import ThresholdGrid, average_precision, evaluate, match, pr_curve, subgroup_recall
from .fusion import FusionConfig, align_confidences, dual_threshold_nms, fuse
from .semantics import EmbeddingTable, LexicalProvider, TableProvider, embed, semantic_similarity

__version__ = "0.1.0"
