"""Self-supervised semantic annotation of lidar frames from multi-session SLAM and ray tracing."""

from .annotate import AnnotateParams, annotate_session, filter_frame
from .core import GtClass, PointCloud, Pose, SemanticLabel
from .pointmap import IcpConfig, NormalParams, PointMap, icp_align, pointmap_slam
from .pointray import RayParams, pointray_session

__version__ = "0.1.0"

__all__ = [
    "AnnotateParams",
    "GtClass",
    "IcpConfig",
    "NormalParams",
    "PointCloud",
    "PointMap",
    "Pose",
    "RayParams",
    "SemanticLabel",
    "annotate_session",
    "filter_frame",
    "icp_align",
    "pointmap_slam",
    "pointray_session",
]
