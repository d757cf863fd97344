"""Two-image stitching: a global homography from points and lines, refined by a
mesh warp that balances feature alignment, shape preservation and photometric
agreement."""
from .energy import EnergySystem, EnergyWeights, solve
from .features import (
    CorrespondenceError, CorrespondenceSet, DetectorConfig, LineMatch, LineSegment, PointMatch,
    detect_correspondences, load_correspondences, save_correspondences,
)
from .geometry import (
    GeometryError, Homography, Mesh, RankDeficientError, RansacConfig, dlt_estimate, ransac_homography,
)
from .imaging import RasterImage, build_pyramid, gradient_magnitude, load_image, save_image
from .metrics import MetricConfig, MetricResult, evaluate, rmse_ncc
from .pipeline import StitchConfig, StitchError, StitchReport, stitch

__version__ = "0.1.0"

__all__ = [
    "CorrespondenceError", "CorrespondenceSet", "DetectorConfig", "EnergySystem", "EnergyWeights",
    "GeometryError", "Homography", "LineMatch", "LineSegment", "Mesh", "MetricConfig", "MetricResult",
    "PointMatch", "RankDeficientError", "RansacConfig", "RasterImage", "StitchConfig", "StitchError",
    "StitchReport", "build_pyramid", "detect_correspondences", "dlt_estimate", "evaluate",
    "gradient_magnitude", "load_image", "load_correspondences", "ransac_homography", "rmse_ncc",
    "save_correspondences", "save_image", "solve", "stitch",
]
