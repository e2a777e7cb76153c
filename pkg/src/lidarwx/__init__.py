"""Adverse-weather LiDAR robustness toolkit.

Corruption synthesis (point drop, occlusion, geometric and intensity noise),
Selective Jittering, Learnable Point Drop with a small DQN, and a desk-scale
surrogate segmenter to close the training loop.
"""

from .pointcloud import LabelArray, PointCloud, decode_labels, decode_scan, encode_labels, encode_scan

__version__ = "0.1.0"
__all__ = ["PointCloud", "LabelArray", "decode_scan", "encode_scan", "decode_labels",
           "encode_labels"]
