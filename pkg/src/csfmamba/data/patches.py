from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .raster import LabelMap, RasterCube


@dataclass
class PatchSet:
    patch_size: int
    patches: np.ndarray  # (N, s, s, C)
    labels: np.ndarray   # (N,) in 1..K, 0 for unlabeled pixels in all-pixels mode
    coords: np.ndarray   # (N, 2)

    def __len__(self):
        return len(self.labels)

    @property
    def channels(self):
        return self.patches.shape[-1]

    def subset(self, idx) -> "PatchSet":
        idx = np.asarray(idx, dtype=np.int64)
        return PatchSet(self.patch_size, self.patches[idx], self.labels[idx], self.coords[idx])


def pad_cube(values: np.ndarray, s: int) -> np.ndarray:
    r = s // 2
    return np.pad(values, ((r, r), (r, r), (0, 0)))


def gather_patches(padded: np.ndarray, coords: np.ndarray, s: int) -> np.ndarray:
    """Patches centred on ``coords`` from a cube zero-padded by s // 2."""
    coords = np.asarray(coords, dtype=np.int64).reshape(-1, 2)
    off = np.arange(s)
    rows = coords[:, 0, None] + off  # (N, s)
    cols = coords[:, 1, None] + off
    return padded[rows[:, :, None], cols[:, None, :]]


def extract_patches(cube: RasterCube, labels: LabelMap, s: int, which: str = "labeled") -> PatchSet:
    """One s x s patch per selected pixel, zero outside the image.

    ``which`` is "labeled" (nonzero labels, row-major) or "all".
    """
    if s < 1 or s % 2 == 0:
        raise ValueError(f"patch size must be odd, got {s}")
    if s > 2 * max(cube.height, cube.width):
        raise ValueError(f"patch size {s} is too large for a {cube.height}x{cube.width} raster")
    if cube.values.shape[:2] != labels.shape:
        raise ValueError("cube and labels must share H x W")
    if which == "labeled":
        coords = labels.coords()
    elif which == "all":
        coords = np.argwhere(np.ones(labels.shape, dtype=bool))
    else:
        raise ValueError(f"unknown selection {which!r}")
    patches = gather_patches(pad_cube(cube.values, s), coords, s)
    return PatchSet(s, patches, labels.labels[coords[:, 0], coords[:, 1]], coords)


@dataclass
class SplitSpec:
    """Per-class training count or global training fraction, plus the seed."""
    train_fraction: float | None = None
    per_class_count: int | None = None
    seed: int = 0

    def __post_init__(self):
        if (self.train_fraction is None) == (self.per_class_count is None):
            raise ValueError("give exactly one of train_fraction or per_class_count")
        if self.train_fraction is not None and not 0 < self.train_fraction < 1:
            raise ValueError("train_fraction must lie in (0, 1)")
        if self.per_class_count is not None and self.per_class_count < 1:
            raise ValueError("per_class_count must be >= 1")

    def to_dict(self):
        return asdict(self)


def split_indices(labels: np.ndarray, spec: SplitSpec):
    """Disjoint (train, val) index arrays covering every labeled sample, sorted."""
    labels = np.asarray(labels)
    rng = np.random.default_rng(spec.seed)
    train = []
    for k in np.unique(labels):
        idx = np.flatnonzero(labels == k)
        if spec.per_class_count is not None:
            n = spec.per_class_count
            if n > len(idx):
                raise ValueError(f"class {k} has {len(idx)} samples, fewer than per_class_count={n}")
        else:
            n = max(1, int(np.floor(spec.train_fraction * len(idx))))
        train.append(idx[rng.permutation(len(idx))[:n]])
    train = np.sort(np.concatenate(train)) if train else np.zeros(0, dtype=np.int64)
    val = np.setdiff1d(np.arange(len(labels)), train)
    return train, val


def stratified_split(patches: PatchSet, spec: SplitSpec):
    train, val = split_indices(patches.labels, spec)
    return patches.subset(train), patches.subset(val)
