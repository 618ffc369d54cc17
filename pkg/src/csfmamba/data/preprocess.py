"""HSI band scoring and reduction, LiDAR feature derivation, standardization."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, fields

import numpy as np
from scipy import ndimage

from .raster import LabelMap, RasterCube

log = logging.getLogger(__name__)

LIDAR_CHANNELS = ("height", "gradient", "curvature", "local_mean", "local_variance")


@dataclass
class PreprocessConfig:
    mi_top_bands: int = 48
    pca_components: int = 30
    mi_histogram_bins: int = 32
    lidar_window: int = 3
    standardize: bool = True

    def __post_init__(self):
        if self.pca_components > self.mi_top_bands:
            raise ValueError("pca_components must not exceed mi_top_bands")
        if self.mi_histogram_bins < 2:
            raise ValueError("mi_histogram_bins must be >= 2")
        if self.lidar_window < 3 or self.lidar_window % 2 == 0:
            raise ValueError("lidar_window must be odd and >= 3")

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        if set(d) - known:
            raise ValueError(f"unknown preprocess keys: {sorted(set(d) - known)}")
        return cls(**d)

    def to_dict(self):
        return asdict(self)


def _entropy(p):
    p = p[p > 0]
    return float(-(p * np.log(p)).sum())


def mutual_information(values: np.ndarray, classes: np.ndarray, bins: int) -> float:
    """I(band; class) in nats from an equal-width histogram over [min, max]."""
    lo, hi = values.min(), values.max()
    if hi == lo:
        return 0.0
    idx = np.minimum(((values - lo) / (hi - lo) * bins).astype(np.int64), bins - 1)
    _, cls = np.unique(classes, return_inverse=True)
    joint = np.zeros((bins, cls.max() + 1))
    np.add.at(joint, (idx, cls), 1.0)
    joint /= joint.sum()
    mi = _entropy(joint.sum(axis=1)) + _entropy(joint.sum(axis=0)) - _entropy(joint.reshape(-1))
    return max(mi, 0.0)


def mi_band_select(cube: RasterCube, labels: LabelMap, cfg: PreprocessConfig):
    """Keep the ``cfg.mi_top_bands`` bands with the highest MI against the labels.

    Returns (reduced cube, scores for every input band, kept band indices).
    Kept bands stay in their original order; ties go to the lower index.
    """
    if cube.values.shape[:2] != labels.shape:
        raise ValueError("cube and labels must share H x W")
    mask = labels.labels > 0
    if not mask.any():
        raise ValueError("no labeled pixels to score bands against")
    if cube.channels < cfg.mi_top_bands:
        raise ValueError(f"cube has {cube.channels} bands, fewer than mi_top_bands={cfg.mi_top_bands}")
    pix = cube.values[mask]
    cls = labels.labels[mask]
    scores = np.array([mutual_information(pix[:, b], cls, cfg.mi_histogram_bins) for b in range(cube.channels)])
    order = np.lexsort((np.arange(len(scores)), -scores))
    keep = np.sort(order[:cfg.mi_top_bands])
    return RasterCube(cube.values[:, :, keep], cube.kind), scores, keep


@dataclass
class PcaModel:
    mean: np.ndarray
    components: np.ndarray  # (C1, C)
    explained: np.ndarray

    def transform(self, values: np.ndarray) -> np.ndarray:
        return (values - self.mean) @ self.components.T


def fit_pca(pixels: np.ndarray, n_components: int) -> PcaModel:
    n, c = pixels.shape
    if n_components > c:
        raise ValueError(f"cannot keep {n_components} components of {c} channels")
    if n < 2:
        raise ValueError("PCA needs at least 2 pixels")
    mean = pixels.mean(axis=0)
    xc = pixels - mean
    cov = xc.T @ xc / (n - 1)
    evals, evecs = np.linalg.eigh(cov)
    evals = np.clip(evals, 0.0, None)
    # stable descending order keeps zero-eigenvalue directions last
    order = np.argsort(-evals, kind="stable")
    evals, evecs = evals[order], evecs[:, order]
    # sign convention: largest-magnitude loading positive
    flip = np.sign(evecs[np.argmax(np.abs(evecs), axis=0), np.arange(c)])
    evecs = evecs * np.where(flip == 0, 1.0, flip)
    total = evals.sum()
    explained = evals / total if total > 0 else np.zeros_like(evals)
    return PcaModel(mean, evecs[:, :n_components].T, explained[:n_components])


def pca_reduce(cube: RasterCube, n_components: int):
    """Project the cube onto its top principal components; returns (cube, explained fractions)."""
    if n_components > cube.channels:
        raise ValueError(f"cannot keep {n_components} components of {cube.channels} channels")
    pix = cube.values.reshape(-1, cube.channels)
    model = fit_pca(pix, n_components)
    out = model.transform(pix).reshape(cube.height, cube.width, n_components)
    return RasterCube(out, "derived"), model.explained


def derive_lidar_channels(height: RasterCube, cfg: PreprocessConfig) -> RasterCube:
    """[height, gradient magnitude, 5-point Laplacian, local mean, local variance].

    Derivatives use replicated edges; the local statistics use a
    ``lidar_window`` square window, also with replicated edges.
    """
    if height.channels != 1:
        raise ValueError("derive_lidar_channels expects a single-channel raster")
    h = height.values[:, :, 0]
    w = cfg.lidar_window
    if w > min(h.shape):
        raise ValueError(f"lidar window {w} exceeds raster size {h.shape}")
    p = np.pad(h, 1, mode="edge")
    gy = (p[2:, 1:-1] - p[:-2, 1:-1]) / 2.0
    gx = (p[1:-1, 2:] - p[1:-1, :-2]) / 2.0
    grad = np.hypot(gx, gy)
    lap = p[2:, 1:-1] + p[:-2, 1:-1] + p[1:-1, 2:] + p[1:-1, :-2] - 4.0 * h
    mean = ndimage.uniform_filter(h, size=w, mode="nearest")
    hc = h - h.mean()
    mc = ndimage.uniform_filter(hc, size=w, mode="nearest")
    var = np.clip(ndimage.uniform_filter(hc * hc, size=w, mode="nearest") - mc * mc, 0.0, None)
    return RasterCube(np.stack([h, grad, lap, mean, var], axis=-1), "derived")


@dataclass
class Standardizer:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, values: np.ndarray) -> "Standardizer":
        flat = values.reshape(-1, values.shape[-1])
        std = flat.std(axis=0)
        return cls(flat.mean(axis=0), np.where(std > 0, std, 1.0))

    def __call__(self, values):
        return (values - self.mean) / self.std


@dataclass
class PreprocessState:
    """Everything needed to replay preprocessing on the same scene."""
    enabled: bool
    c1: int
    selected_bands: list = field(default_factory=list)
    pca_mean: list = field(default_factory=list)
    pca_components: list = field(default_factory=list)
    explained: list = field(default_factory=list)
    hsi_mean: list = field(default_factory=list)
    hsi_std: list = field(default_factory=list)
    lidar_mean: list = field(default_factory=list)
    lidar_std: list = field(default_factory=list)
    lidar_window: int = 3

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def _lidar_height(lidar: RasterCube) -> RasterCube:
    if lidar.channels > 1:
        log.info("lidar raster has %d channels; deriving features from channel 0", lidar.channels)
    return RasterCube(lidar.values[:, :, :1], "lidar")


def fit_preprocess(hsi: RasterCube, lidar: RasterCube, train_labels: LabelMap, cfg: PreprocessConfig,
                   enabled: bool = True, c1: int | None = None):
    """Fit preprocessing and return (X_H, X_L, PreprocessState).

    Band scoring only sees ``train_labels``; PCA and standardization are
    fit over the whole scene. ``enabled=False`` is the ablation path: the
    first ``c1`` raw bands and the raw height, standardized.
    """
    c1 = cfg.pca_components if c1 is None else c1
    if enabled:
        _, _, keep = mi_band_select(hsi, train_labels, cfg)
        sel = hsi.values[:, :, keep].reshape(-1, len(keep))
        pca = fit_pca(sel, c1)
        xh = pca.transform(sel).reshape(hsi.height, hsi.width, c1)
        xl = derive_lidar_channels(_lidar_height(lidar), cfg).values
        state = PreprocessState(True, c1, keep.tolist(), pca.mean.tolist(), pca.components.tolist(),
                                pca.explained.tolist(), lidar_window=cfg.lidar_window)
    else:
        if c1 > hsi.channels:
            raise ValueError(f"c1={c1} exceeds the {hsi.channels} raw bands")
        xh = hsi.values[:, :, :c1]
        xl = _lidar_height(lidar).values
        state = PreprocessState(False, c1, list(range(c1)), lidar_window=cfg.lidar_window)
    if cfg.standardize:
        sh, sl = Standardizer.fit(xh), Standardizer.fit(xl)
        xh, xl = sh(xh), sl(xl)
        state.hsi_mean, state.hsi_std = sh.mean.tolist(), sh.std.tolist()
        state.lidar_mean, state.lidar_std = sl.mean.tolist(), sl.std.tolist()
    return xh, xl, state


def apply_preprocess(hsi: RasterCube, lidar: RasterCube, state: PreprocessState):
    keep = np.asarray(state.selected_bands, dtype=np.int64)
    if keep.size and keep.max() >= hsi.channels:
        raise ValueError("stored band selection does not fit this raster")
    if state.enabled:
        sel = hsi.values[:, :, keep].reshape(-1, len(keep))
        pca = PcaModel(np.asarray(state.pca_mean), np.asarray(state.pca_components), np.asarray(state.explained))
        xh = pca.transform(sel).reshape(hsi.height, hsi.width, state.c1)
        xl = derive_lidar_channels(_lidar_height(lidar), PreprocessConfig(
            mi_top_bands=len(keep), pca_components=state.c1, lidar_window=state.lidar_window)).values
    else:
        xh = hsi.values[:, :, keep]
        xl = _lidar_height(lidar).values
    if state.hsi_mean:
        xh = Standardizer(np.asarray(state.hsi_mean), np.asarray(state.hsi_std))(xh)
        xl = Standardizer(np.asarray(state.lidar_mean), np.asarray(state.lidar_std))(xl)
    return xh, xl
