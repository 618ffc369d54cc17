import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from csfmamba.data import (DatasetFormatError, LabelMap, PreprocessConfig, RasterCube, SplitSpec,
                           apply_preprocess, derive_lidar_channels, extract_patches, fit_pca, fit_preprocess,
                           make_synthetic, mi_band_select, mutual_information, pca_reduce, read_dataset,
                           split_indices, stratified_split, write_dataset)


def _two_class_map(H=8, W=8):
    lab = np.ones((H, W), dtype=int)
    lab[:, W // 2:] = 2
    return LabelMap(lab, 2)


def test_mi_identity_band_is_label_entropy():
    labels = LabelMap(np.array([[1, 2, 3, 3], [1, 1, 2, 3]]), 3)
    rng = np.random.default_rng(0)
    cube = RasterCube(np.stack([rng.standard_normal((2, 4)), labels.labels.astype(float),
                                np.full((2, 4), 7.0)], axis=-1), "hsi")
    cfg = PreprocessConfig(mi_top_bands=1, pca_components=1, mi_histogram_bins=3)
    _, scores, keep = mi_band_select(cube, labels, cfg)
    p = labels.counts() / labels.counts().sum()
    assert keep.tolist() == [1]
    assert scores[1] == pytest.approx(-(p * np.log(p)).sum(), abs=1e-12)
    assert scores[2] == 0.0


def test_mi_binary_band_ln2():
    labels = _two_class_map()
    mi = mutual_information(labels.labels.reshape(-1).astype(float), labels.labels.reshape(-1), 2)
    assert mi == pytest.approx(np.log(2.0), abs=1e-12)


def test_mi_ignores_unlabeled_pixels():
    lab = _two_class_map().labels.copy()
    lab[0, :] = 0
    band = lab.astype(float)
    band[0, :] = 100.0  # huge values on unlabeled pixels must not widen the histogram
    cube = RasterCube(band[:, :, None], "hsi")
    _, scores, _ = mi_band_select(cube, LabelMap(lab, 2), PreprocessConfig(1, 1, mi_histogram_bins=2))
    assert scores[0] == pytest.approx(np.log(2.0), abs=1e-12)


def test_mi_select_errors():
    labels = _two_class_map()
    cube = RasterCube(np.zeros((8, 8, 3)), "hsi")
    with pytest.raises(ValueError):
        mi_band_select(cube, labels, PreprocessConfig(mi_top_bands=4, pca_components=2))
    with pytest.raises(ValueError):
        mi_band_select(cube, LabelMap(np.zeros((8, 8), dtype=int), 2), PreprocessConfig(2, 2))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(2, 16))
def test_mi_bounds(seed, bins):
    r = np.random.default_rng(seed)
    cls = r.integers(1, 4, 200)
    mi = mutual_information(r.standard_normal(200), cls, bins)
    p = np.bincount(cls)[1:] / 200
    assert 0.0 <= mi <= -(p[p > 0] * np.log(p[p > 0])).sum() + 1e-12


def test_pca_axis_aligned():
    rng = np.random.default_rng(0)
    z = rng.standard_normal((4000, 3))
    z = (z - z.mean(0)) / z.std(0, ddof=1)
    # whiten exactly so the sample covariance is diagonal
    L = np.linalg.cholesky(np.cov(z.T))
    z = z @ np.linalg.inv(L).T
    x = z * np.sqrt([4.0, 1.0, 0.25])
    model = fit_pca(x, 2)
    np.testing.assert_allclose(model.explained, [4 / 5.25, 1 / 5.25], atol=1e-9)
    np.testing.assert_allclose(np.abs(model.components), [[1, 0, 0], [0, 1, 0]], atol=1e-9)


def test_pca_full_rank_preserves_variance(rng):
    cube = RasterCube(rng.standard_normal((6, 7, 4)) @ rng.standard_normal((4, 4)))
    out, explained = pca_reduce(cube, 4)
    v0 = cube.values.reshape(-1, 4).var(axis=0).sum()
    v1 = out.values.reshape(-1, 4).var(axis=0).sum()
    assert abs(v0 - v1) <= 1e-6 * v0
    assert explained.sum() == pytest.approx(1.0, abs=1e-9)


def test_pca_identical_pixels():
    out, explained = pca_reduce(RasterCube(np.full((3, 3, 4), 2.5)), 2)
    np.testing.assert_array_equal(out.values, 0.0)
    np.testing.assert_array_equal(explained, 0.0)


def test_pca_too_many_components(rng):
    with pytest.raises(ValueError):
        pca_reduce(RasterCube(rng.standard_normal((3, 3, 2))), 3)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 5))
def test_pca_properties(seed, k):
    r = np.random.default_rng(seed)
    cube = RasterCube(r.standard_normal((5, 6, 5)) * r.uniform(0.1, 3, 5))
    out, ex = pca_reduce(cube, k)
    np.testing.assert_allclose(out.values.reshape(-1, k).mean(axis=0), 0.0, atol=1e-6)
    assert ex.sum() <= 1 + 1e-12
    assert np.all(np.diff(ex) <= 1e-12)


def test_pca_sign_convention_stable(rng):
    x = rng.standard_normal((50, 4))
    a = fit_pca(x, 3).components
    b = fit_pca(x[::-1].copy(), 3).components
    np.testing.assert_allclose(a, b, atol=1e-10)


def test_lidar_constant_plane():
    out = derive_lidar_channels(RasterCube(np.full((5, 6, 1), 3.0)), PreprocessConfig())
    assert out.channels == 5
    for ch, want in enumerate([3.0, 0.0, 0.0, 3.0, 0.0]):
        np.testing.assert_allclose(out.values[:, :, ch], want, atol=1e-12)


def test_lidar_ramp():
    h = np.tile(np.arange(7, dtype=float), (6, 1))
    out = derive_lidar_channels(RasterCube(h[:, :, None]), PreprocessConfig()).values
    np.testing.assert_allclose(out[1:-1, 1:-1, 1], 1.0, atol=1e-12)
    np.testing.assert_allclose(out[1:-1, 1:-1, 2], 0.0, atol=1e-12)


def test_lidar_checkerboard():
    h = (np.indices((6, 6)).sum(axis=0) % 2).astype(float)
    out = derive_lidar_channels(RasterCube(h[:, :, None]), PreprocessConfig()).values
    inner_mean = out[1:-1, 1:-1, 3]
    ones = h[1:-1, 1:-1] == 1
    np.testing.assert_allclose(inner_mean[ones], 5 / 9, atol=1e-12)
    np.testing.assert_allclose(inner_mean[~ones], 4 / 9, atol=1e-12)
    np.testing.assert_allclose(out[1:-1, 1:-1, 4], 20 / 81, atol=1e-12)


def test_lidar_errors():
    with pytest.raises(ValueError):
        derive_lidar_channels(RasterCube(np.zeros((2, 8, 1))), PreprocessConfig())
    with pytest.raises(ValueError):
        derive_lidar_channels(RasterCube(np.zeros((4, 4, 2))), PreprocessConfig())


def test_patch_zero_padding_corner():
    cube = RasterCube(np.arange(1, 13 * 13 * 2 + 1, dtype=float).reshape(13, 13, 2))
    labels = LabelMap(np.ones((13, 13), dtype=int), 1)
    ps = extract_patches(cube, labels, 11, which="all")
    p = ps.patches[0]
    assert tuple(ps.coords[0]) == (0, 0)
    np.testing.assert_array_equal(p[:5], 0.0)
    np.testing.assert_array_equal(p[:, :5], 0.0)
    np.testing.assert_array_equal(p[5, 5], cube.values[0, 0])
    np.testing.assert_array_equal(p[5:, 5:], cube.values[:6, :6])


def test_patch_interior_is_subwindow(rng):
    cube = RasterCube(rng.standard_normal((15, 15, 3)))
    lab = np.zeros((15, 15), dtype=int)
    lab[7, 8] = 1
    lab[2, 2] = 1
    lab[10, 5] = 1
    ps = extract_patches(cube, LabelMap(lab, 1), 5)
    assert len(ps) == 3
    i = [tuple(c) for c in ps.coords].index((7, 8))
    np.testing.assert_array_equal(ps.patches[i], cube.values[5:10, 6:11])


def test_patch_errors(rng):
    cube = RasterCube(rng.standard_normal((4, 4, 1)))
    labels = LabelMap(np.ones((4, 4), dtype=int), 1)
    with pytest.raises(ValueError):
        extract_patches(cube, labels, 4)
    with pytest.raises(ValueError):
        extract_patches(cube, labels, 11)


def test_split_fraction_deterministic():
    y = np.ones(100, dtype=int)
    a_tr, a_va = split_indices(y, SplitSpec(train_fraction=0.2, seed=7))
    b_tr, _ = split_indices(y, SplitSpec(train_fraction=0.2, seed=7))
    assert len(a_tr) == 20 and len(a_va) == 80
    np.testing.assert_array_equal(a_tr, b_tr)
    c_tr, _ = split_indices(y, SplitSpec(train_fraction=0.2, seed=8))
    assert len(c_tr) == 20 and not np.array_equal(a_tr, c_tr)


def test_split_per_class_count():
    y = np.array([1] * 5 + [2] * 50)
    tr, va = split_indices(y, SplitSpec(per_class_count=5))
    assert np.bincount(y[tr]).tolist() == [0, 5, 5]
    with pytest.raises(ValueError):
        split_indices(y, SplitSpec(per_class_count=6))
    with pytest.raises(ValueError):
        SplitSpec(train_fraction=0.1, per_class_count=3)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.integers(1, 4), min_size=4, max_size=80), st.floats(0.05, 0.95), st.integers(0, 1000))
def test_split_is_partition(y, frac, seed):
    y = np.array(y)
    tr, va = split_indices(y, SplitSpec(train_fraction=frac, seed=seed))
    assert len(np.intersect1d(tr, va)) == 0
    np.testing.assert_array_equal(np.sort(np.concatenate([tr, va])), np.arange(len(y)))
    for k in np.unique(y):
        assert np.sum(y[tr] == k) >= 1


def test_stratified_split_patchsets(rng):
    cube = RasterCube(rng.standard_normal((6, 6, 2)))
    ps = extract_patches(cube, _two_class_map(6, 6), 3)
    tr, va = stratified_split(ps, SplitSpec(per_class_count=4, seed=1))
    assert len(tr) == 8 and len(va) == 28
    assert tr.patches.shape == (8, 3, 3, 2)


def test_synthetic_noiseless_separable():
    hsi, _, labels = make_synthetic(3, 20, 20, 5, 12, noise_sigma=0.0)
    from csfmamba.data import class_signatures
    sig = class_signatures(5, 12)
    mask = labels.labels > 0
    d = ((hsi.values[mask][:, None, :] - sig[None]) ** 2).sum(-1)
    assert np.all(np.argmin(d, axis=1) + 1 == labels.labels[mask])


def test_synthetic_deterministic_and_balanced():
    a = make_synthetic(0, 32, 32, 4, 16)
    b = make_synthetic(0, 32, 32, 4, 16)
    for x, y in zip(a[:2], b[:2]):
        assert x.values.tobytes() == y.values.tobytes()
    assert a[2].labels.tobytes() == b[2].labels.tobytes()
    assert np.all(a[2].counts() >= (32 * 32 / 4) * 0.8)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 11))
def test_synthetic_balance_property(seed, K):
    _, _, labels = make_synthetic(seed, 24, 24, K, max(K, 8))
    c = labels.counts()
    assert np.all(c >= 0.95 * 0.8 * 24 * 24 / K)


def test_synthetic_errors():
    with pytest.raises(ValueError):
        make_synthetic(0, 4, 4, 4, 8)
    with pytest.raises(ValueError):
        make_synthetic(0, 16, 16, 1, 8)


def test_dataset_round_trip(tmp_path):
    hsi, lidar, labels = make_synthetic(1, 9, 11, 3, 6)
    write_dataset(tmp_path, hsi, lidar, labels, name="demo")
    h2, l2, y2, header = read_dataset(tmp_path)
    np.testing.assert_array_equal(h2.values, hsi.values.astype(np.float32))
    np.testing.assert_array_equal(l2.values, lidar.values.astype(np.float32))
    np.testing.assert_array_equal(y2.labels, labels.labels)
    assert header["name"] == "demo" and header["num_classes"] == 3
    # band-sequential layout: the first H*W floats are band 0
    raw = np.fromfile(tmp_path / "hsi.f32", dtype="<f4")
    np.testing.assert_array_equal(raw[:99].reshape(9, 11), hsi.values[:, :, 0].astype(np.float32))


def test_dataset_format_errors(tmp_path):
    with pytest.raises(DatasetFormatError):
        read_dataset(tmp_path)
    hsi, lidar, labels = make_synthetic(1, 9, 9, 3, 6)
    write_dataset(tmp_path, hsi, lidar, labels)
    (tmp_path / "labels.u16").write_bytes(b"\0\0")
    with pytest.raises(DatasetFormatError):
        read_dataset(tmp_path)
    header = json.loads((tmp_path / "dataset.json").read_text())
    del header["num_classes"]
    (tmp_path / "dataset.json").write_text(json.dumps(header))
    with pytest.raises(DatasetFormatError):
        read_dataset(tmp_path)


def test_raster_validation():
    with pytest.raises(ValueError):
        RasterCube(np.array([[[np.nan]]]))
    with pytest.raises(ValueError):
        LabelMap(np.array([[3]]), 2)


def test_preprocess_replay_matches_fit(rng):
    hsi, lidar, labels = make_synthetic(2, 16, 16, 3, 20)
    cfg = PreprocessConfig(mi_top_bands=10, pca_components=6)
    xh, xl, state = fit_preprocess(hsi, lidar, labels, cfg, c1=6)
    assert xh.shape == (16, 16, 6) and xl.shape == (16, 16, 5)
    yh, yl = apply_preprocess(hsi, lidar, state)
    np.testing.assert_allclose(yh, xh, atol=1e-12)
    np.testing.assert_allclose(yl, xl, atol=1e-12)
    np.testing.assert_allclose(xh.reshape(-1, 6).mean(0), 0.0, atol=1e-9)


def test_preprocess_disabled_keeps_raw_bands(rng):
    hsi, lidar, labels = make_synthetic(2, 16, 16, 3, 20)
    xh, xl, state = fit_preprocess(hsi, lidar, labels, PreprocessConfig(10, 6), enabled=False, c1=6)
    assert xl.shape == (16, 16, 1) and not state.enabled
    raw = hsi.values[:, :, :6]
    np.testing.assert_allclose(xh, (raw - raw.reshape(-1, 6).mean(0)) / raw.reshape(-1, 6).std(0), atol=1e-12)
