"""Atomic file writes and the on-disk dataset layout.

A dataset directory mirrors SemanticKITTI: ``velodyne/NNNNNN.bin`` scans with
matching ``labels/NNNNNN.label`` files.
"""

from __future__ import annotations

import os
import tempfile
from pathlib import Path

from .errors import DataError
from .pointcloud import (DEFAULT_IGNORE_LABEL, LabelArray, PointCloud, decode_labels,
                         decode_scan, encode_labels, encode_scan)

SCAN_DIR = "velodyne"
LABEL_DIR = "labels"


def atomic_write_bytes(path, data: bytes) -> None:
    """Write via a temp file in the same directory, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except FileNotFoundError:
            pass
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def read_scan(path) -> PointCloud:
    return decode_scan(Path(path).read_bytes())


def read_labels(path, ignore_label: int = DEFAULT_IGNORE_LABEL) -> LabelArray:
    return decode_labels(Path(path).read_bytes(), ignore_label)


def scan_name(index: int) -> str:
    return f"{index:06d}"


def list_scans(root) -> list[Path]:
    root = Path(root)
    scan_dir = root / SCAN_DIR
    if not scan_dir.is_dir():
        raise DataError(f"{root} has no {SCAN_DIR}/ directory")
    return sorted(scan_dir.glob("*.bin"))


def label_path_for(scan_path) -> Path:
    scan_path = Path(scan_path)
    return scan_path.parent.parent / LABEL_DIR / (scan_path.stem + ".label")


def load_dataset(root, ignore_label: int = DEFAULT_IGNORE_LABEL,
                 require_labels: bool = True) -> list[tuple[str, PointCloud, LabelArray | None]]:
    out = []
    for sp in list_scans(root):
        cloud = read_scan(sp)
        lp = label_path_for(sp)
        labels = None
        if lp.exists():
            labels = read_labels(lp, ignore_label)
            if len(labels) != cloud.n:
                raise DataError(f"{lp.name}: {len(labels)} labels for {cloud.n} points")
        elif require_labels:
            raise DataError(f"missing label file {lp}")
        out.append((sp.stem, cloud, labels))
    return out


def write_sample(root, name: str, cloud: PointCloud, labels: LabelArray | None) -> None:
    root = Path(root)
    atomic_write_bytes(root / SCAN_DIR / f"{name}.bin", encode_scan(cloud))
    if labels is not None:
        atomic_write_bytes(root / LABEL_DIR / f"{name}.label", encode_labels(labels))
