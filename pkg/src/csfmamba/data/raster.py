"""Raster containers and the on-disk dataset format.

A dataset directory holds ``dataset.json`` plus three raw little-endian
binaries: ``hsi.f32`` and ``lidar.f32`` (band-sequential float32) and
``labels.u16`` (row-major uint16, 0 = unlabeled).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

KINDS = ("hsi", "lidar", "derived")


class DatasetFormatError(ValueError):
    pass


@dataclass
class RasterCube:
    values: np.ndarray  # (H, W, C)
    kind: str = "derived"

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.ndim == 2:
            v = v[:, :, None]
        if v.ndim != 3 or min(v.shape) < 1:
            raise ValueError(f"raster must be H x W x C with positive sizes, got {v.shape}")
        if self.kind not in KINDS:
            raise ValueError(f"unknown raster kind {self.kind!r}")
        if not np.all(np.isfinite(v)):
            raise ValueError("raster contains non-finite values")
        self.values = v

    @property
    def height(self):
        return self.values.shape[0]

    @property
    def width(self):
        return self.values.shape[1]

    @property
    def channels(self):
        return self.values.shape[2]


@dataclass
class LabelMap:
    labels: np.ndarray  # (H, W) ints, 0 = unlabeled
    num_classes: int

    def __post_init__(self):
        lab = np.asarray(self.labels)
        if lab.ndim != 2:
            raise ValueError("label map must be 2-D")
        if lab.size and (lab.min() < 0 or lab.max() > self.num_classes):
            raise ValueError(f"labels must lie in [0, {self.num_classes}]")
        self.labels = lab.astype(np.int64)

    @property
    def shape(self):
        return self.labels.shape

    def coords(self) -> np.ndarray:
        """(n, 2) row/col of labeled pixels in row-major order."""
        return np.argwhere(self.labels > 0)

    def counts(self) -> np.ndarray:
        return np.bincount(self.labels.reshape(-1), minlength=self.num_classes + 1)[1:]


def write_dataset(path, hsi: RasterCube, lidar: RasterCube, labels: LabelMap, name: str = "dataset") -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    H, W = labels.shape
    if hsi.values.shape[:2] != (H, W) or lidar.values.shape[:2] != (H, W):
        raise ValueError("hsi, lidar and labels must share H x W")
    header = {
        "name": name, "height": H, "width": W,
        "hsi_bands": hsi.channels, "lidar_channels": lidar.channels,
        "num_classes": labels.num_classes, "dtype": "f32le", "layout": "band-sequential",
    }
    # band-sequential: (C, H, W)
    np.moveaxis(hsi.values, 2, 0).astype("<f4").tofile(path / "hsi.f32")
    np.moveaxis(lidar.values, 2, 0).astype("<f4").tofile(path / "lidar.f32")
    labels.labels.astype("<u2").tofile(path / "labels.u16")
    (path / "dataset.json").write_text(json.dumps(header, indent=2))
    return path


def _read_raw(file: Path, dtype, count: int) -> np.ndarray:
    if not file.exists():
        raise DatasetFormatError(f"missing {file.name}")
    arr = np.fromfile(file, dtype=dtype)
    if arr.size != count:
        raise DatasetFormatError(f"{file.name}: expected {count} values from header, found {arr.size}")
    return arr


def read_dataset(path):
    """Return (hsi RasterCube, lidar RasterCube, LabelMap, header dict)."""
    path = Path(path)
    try:
        header = json.loads((path / "dataset.json").read_text())
    except FileNotFoundError:
        raise DatasetFormatError(f"{path} has no dataset.json") from None
    required = ("height", "width", "hsi_bands", "lidar_channels", "num_classes")
    missing = [k for k in required if k not in header]
    if missing:
        raise DatasetFormatError(f"dataset.json lacks keys {missing}")
    if header.get("dtype", "f32le") != "f32le" or header.get("layout", "band-sequential") != "band-sequential":
        raise DatasetFormatError("only f32le band-sequential rasters are supported")
    H, W = int(header["height"]), int(header["width"])
    nb, nl = int(header["hsi_bands"]), int(header["lidar_channels"])
    hsi = _read_raw(path / "hsi.f32", "<f4", H * W * nb).reshape(nb, H, W)
    lidar = _read_raw(path / "lidar.f32", "<f4", H * W * nl).reshape(nl, H, W)
    labels = _read_raw(path / "labels.u16", "<u2", H * W).reshape(H, W)
    return (RasterCube(np.moveaxis(hsi, 0, 2).astype(np.float64), "hsi"),
            RasterCube(np.moveaxis(lidar, 0, 2).astype(np.float64), "lidar"),
            LabelMap(labels, int(header["num_classes"])),
            header)
