"""Dataset ingestion: CSV rows and the big-endian IDX image/label format."""

from __future__ import annotations

import csv
import struct
from pathlib import Path

import numpy as np

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


def load_csv_dataset(path) -> tuple[np.ndarray, np.ndarray]:
    """Read rows of `label,f1,...,fd`; a non-numeric first row is a header.

    Returns (features, labels) with labels mapped to {-1.0, +1.0} when the
    file carries exactly two label values, else left as parsed floats.
    """
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        for lineno, row in enumerate(reader):
            if not row:
                continue
            try:
                rows.append([float(v) for v in row])
            except ValueError:
                if lineno == 0:
                    continue  # header
                raise ValueError(f"{path}: non-numeric value on line {lineno + 1}")
    if not rows:
        raise ValueError(f"{path}: no data rows")
    data = np.asarray(rows, dtype=np.float64)
    labels, features = data[:, 0], data[:, 1:]
    uniques = np.unique(labels)
    if uniques.shape[0] == 2:
        labels = np.where(labels == uniques[0], -1.0, 1.0)
    return features, labels


def load_idx_images(path) -> np.ndarray:
    """Read an IDX3 image file; pixels scaled to [0, 1], flattened per image."""
    raw = Path(path).read_bytes()
    magic, count, h, w = struct.unpack(">IIII", raw[:16])
    if magic != IDX_IMAGES_MAGIC:
        raise ValueError(f"{path}: bad IDX3 magic {magic:#010x}")
    pixels = np.frombuffer(raw, dtype=np.uint8, offset=16)
    if pixels.shape[0] != count * h * w:
        raise ValueError(f"{path}: truncated image payload")
    return pixels.reshape(count, h * w).astype(np.float64) / 255.0


def load_idx_labels(path) -> np.ndarray:
    """Read an IDX1 label file."""
    raw = Path(path).read_bytes()
    magic, count = struct.unpack(">II", raw[:8])
    if magic != IDX_LABELS_MAGIC:
        raise ValueError(f"{path}: bad IDX1 magic {magic:#010x}")
    labels = np.frombuffer(raw, dtype=np.uint8, offset=8)
    if labels.shape[0] != count:
        raise ValueError(f"{path}: truncated label payload")
    return labels.astype(np.int64)
