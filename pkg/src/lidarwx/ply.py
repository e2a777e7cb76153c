"""ASCII PLY export with per-point correctness colours."""

from __future__ import annotations

import numpy as np

from .errors import ShapeError
from .metrics import CORRECT, IGNORED, INCORRECT
from .pointcloud import PointCloud

COLORS = {CORRECT: (0, 255, 0), INCORRECT: (255, 0, 0), IGNORED: (128, 128, 128)}


def export_ply(cloud: PointCloud, flags) -> bytes:
    flags = np.asarray(flags).reshape(-1)
    if flags.shape[0] != cloud.n:
        raise ShapeError(f"{flags.shape[0]} flags for {cloud.n} points")
    lines = ["ply", "format ascii 1.0", f"element vertex {cloud.n}",
             "property float x", "property float y", "property float z",
             "property uchar red", "property uchar green", "property uchar blue",
             "end_header"]
    for x, y, z, f in zip(cloud.x.tolist(), cloud.y.tolist(), cloud.z.tolist(), flags.tolist()):
        r, g, b = COLORS[int(f)]
        lines.append(f"{x:.6g} {y:.6g} {z:.6g} {r} {g} {b}")
    return ("\n".join(lines) + "\n").encode("ascii")
