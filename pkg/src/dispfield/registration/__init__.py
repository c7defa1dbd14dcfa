"""Feature detection, descriptor matching and homography estimation."""

from .homography import (
    dlt_homography,
    homography_from_4,
    ransac_homography,
    ransac_points,
    reprojection_errors,
)
from .kdtree import KdTree, Match, brute_force_2nn, build_kdtree, match_features
from .sift import DetectorParams, Keypoint, detect_features, write_keypoints_csv, write_matches_csv

__all__ = [
    "DetectorParams",
    "KdTree",
    "Keypoint",
    "Match",
    "brute_force_2nn",
    "build_kdtree",
    "detect_features",
    "dlt_homography",
    "homography_from_4",
    "match_features",
    "ransac_homography",
    "ransac_points",
    "reprojection_errors",
    "write_keypoints_csv",
    "write_matches_csv",
]
