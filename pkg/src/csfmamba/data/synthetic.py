"""Small HSI/LiDAR scenes with known structure, for tests and desk-scale runs."""

from __future__ import annotations

import numpy as np

from .raster import LabelMap, RasterCube


def _balanced_regions(rng, H, W, K, iters=500):
    """Power-diagram partition of the grid into K roughly equal convex blobs.

    Each pixel goes to argmin_k |p - c_k|^2 - w_k; the weights are nudged
    until every region holds about H*W/K pixels.
    """
    centers = rng.uniform([0, 0], [H, W], size=(K, 2))
    rr, cc = np.mgrid[0:H, 0:W]
    pix = np.stack([rr.ravel(), cc.ravel()], axis=1).astype(float)
    d2 = ((pix[:, None, :] - centers[None]) ** 2).sum(-1)
    target = H * W / K
    w = np.zeros(K)
    step = 0.5 * (H * W) / K
    for _ in range(iters):
        assign = np.argmin(d2 - w, axis=1)
        counts = np.bincount(assign, minlength=K)
        if np.all(np.abs(counts - target) <= 0.05 * target):
            break
        w += step * (target - counts) / target
        step *= 0.99  # damp oscillation between neighbouring regions
    return assign.reshape(H, W)


def class_signatures(K: int, bands: int) -> np.ndarray:
    """Smooth, pairwise distinct spectra in [0.1, 0.9]."""
    b = np.linspace(0.0, 1.0, bands)
    sig = [0.5 + 0.25 * np.sin(2 * np.pi * (0.5 + 0.35 * k) * b + 1.3 * k) + 0.15 * np.cos(np.pi * (k + 1) * b)
           for k in range(K)]
    return np.clip(np.array(sig), 0.1, 0.9)


def make_synthetic(seed: int, H: int, W: int, K: int, hsi_bands: int, noise_sigma: float = 0.05,
                   unlabeled_fraction: float = 0.05):
    """Returns (hsi cube, lidar height cube, label map).

    Classes occupy K balanced spatial blobs, each with a distinct spectral
    signature and a distinct mean height, plus Gaussian noise. A small
    random fraction of pixels is left unlabeled.
    """
    if K < 2:
        raise ValueError("need at least 2 classes")
    if hsi_bands < K:
        raise ValueError("hsi_bands must be >= K")
    if H * W < 9 * K or min(H, W) < 3:
        raise ValueError(f"a {H}x{W} image is too small to host {K} blobs")
    rng = np.random.default_rng(seed)
    regions = _balanced_regions(rng, H, W, K)
    counts = np.bincount(regions.ravel(), minlength=K)
    if np.any(np.abs(counts - H * W / K) > 0.2 * H * W / K):
        raise ValueError(f"could not balance {K} blobs on a {H}x{W} grid")
    sig = class_signatures(K, hsi_bands)
    hsi = sig[regions] + noise_sigma * rng.standard_normal((H, W, hsi_bands))
    heights = np.arange(K, dtype=float) * 2.0 + 1.0
    lidar = heights[regions] + noise_sigma * 4.0 * rng.standard_normal((H, W))
    labels = regions + 1
    labels[rng.random((H, W)) < unlabeled_fraction] = 0
    return RasterCube(hsi, "hsi"), RasterCube(lidar[:, :, None], "lidar"), LabelMap(labels, K)
