"""Training, evaluation and full-scene prediction on datasets in the on-disk format."""

from __future__ import annotations

import colorsys
import csv
import json
import logging
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import plotting
from .autodiff import AdamState, Tape, adam_step, backward, get_dtype, no_record, precision
from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig
from .data import (LabelMap, PreprocessState, apply_preprocess, fit_preprocess, gather_patches, pad_cube,
                   read_dataset, split_indices)
from .metrics import confusion_and_metrics
from .model import CSFMamba, ModelConfig

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class Scene:
    """Preprocessed, zero-padded scene plus labeled coordinates and the split."""
    pad_h: np.ndarray
    pad_l: np.ndarray
    labels: LabelMap
    coords: np.ndarray
    y: np.ndarray
    train_idx: np.ndarray
    val_idx: np.ndarray
    state: PreprocessState
    header: dict

    def batch(self, idx, s):
        c = self.coords[idx]
        return gather_patches(self.pad_h, c, s), gather_patches(self.pad_l, c, s)


def _check_dims(cfg: RunConfig, header: dict):
    m = cfg.model
    if m.num_classes != int(header["num_classes"]):
        raise ValueError(f"model num_classes={m.num_classes} but dataset has {header['num_classes']}")
    want_c2 = 5 if m.preprocess else 1
    if m.c2 != want_c2:
        raise ValueError(f"model c2={m.c2}; the LiDAR branch yields {want_c2} channels "
                         f"with preprocessing {'on' if m.preprocess else 'off'}")


def prepare_scene(data_dir, cfg: RunConfig, state: PreprocessState | None = None) -> Scene:
    hsi, lidar, labels, header = read_dataset(data_dir)
    _check_dims(cfg, header)
    coords = labels.coords()
    y = labels.labels[coords[:, 0], coords[:, 1]]
    train_idx, val_idx = split_indices(y, cfg.split)
    if state is None:
        train_mask = np.zeros(labels.shape, dtype=np.int64)
        tc = coords[train_idx]
        train_mask[tc[:, 0], tc[:, 1]] = y[train_idx]
        pre = cfg.preprocess
        if pre.pca_components != cfg.model.c1:
            pre = type(pre)(**{**pre.to_dict(), "pca_components": cfg.model.c1})
        xh, xl, state = fit_preprocess(hsi, lidar, LabelMap(train_mask, labels.num_classes), pre,
                                       enabled=cfg.model.preprocess, c1=cfg.model.c1)
    else:
        xh, xl = apply_preprocess(hsi, lidar, state)
    if xh.shape[2] != cfg.model.c1 or xl.shape[2] != cfg.model.c2:
        raise ValueError(f"preprocessed channels ({xh.shape[2]}, {xl.shape[2]}) do not match the model "
                         f"({cfg.model.c1}, {cfg.model.c2})")
    s = cfg.model.patch_size
    dt = get_dtype()
    return Scene(pad_cube(xh, s).astype(dt), pad_cube(xl, s).astype(dt), labels, coords, y,
                 train_idx, val_idx, state, header)


def predict_indices(model: CSFMamba, scene: Scene, idx, batch_size: int) -> np.ndarray:
    s = model.config.patch_size
    out = np.empty(len(idx), dtype=np.int64)
    with no_record():
        for start in range(0, len(idx), batch_size):
            sl = idx[start:start + batch_size]
            ph, pl = scene.batch(sl, s)
            out[start:start + len(sl)] = np.argmax(model(ph, pl, training=False).logits.data, axis=1) + 1
    return out


def _batches(perm, batch_size):
    chunks = [perm[i:i + batch_size] for i in range(0, len(perm), batch_size)]
    # batchnorm needs >= 2 samples per training batch
    if len(chunks) > 1 and len(chunks[-1]) == 1:
        last = chunks.pop()
        chunks[-1] = np.concatenate([chunks[-1], last])
    return chunks


def _meta(cfg: RunConfig, scene: Scene, history, best_epoch):
    return {"config": cfg.to_dict(), "preprocess_state": scene.state.to_dict(),
            "dataset": {k: scene.header[k] for k in ("name", "height", "width", "hsi_bands",
                                                     "lidar_channels", "num_classes") if k in scene.header},
            "metrics_history": history, "best_epoch": best_epoch}


def train(data_dir, cfg: RunConfig, out_dir, progress=None):
    """Train and keep the best-validation checkpoint in ``out_dir/checkpoint``.

    Writes ``log.jsonl`` (one record per epoch), ``last/`` (final weights)
    and ``curves.png``. Returns (model, history).
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    tc = cfg.train
    with precision(tc.precision):
        scene = prepare_scene(data_dir, cfg)
        if len(scene.train_idx) < 2:
            raise ValueError("need at least 2 training samples")
        model = CSFMamba(cfg.model)
        s = cfg.model.patch_size
        adam = AdamState(lr=tc.lr)
        rng = np.random.default_rng(tc.seed)
        history, best, best_epoch = [], -1.0, None
        t0 = time.perf_counter()
        # overflow surfaces through the finite-value checks as TrainingDiverged
        with open(out_dir / "log.jsonl", "w") as logf, np.errstate(over="ignore", invalid="ignore"):
            for epoch in range(tc.epochs):
                adam.lr = tc.lr_at(epoch)
                perm = scene.train_idx[rng.permutation(len(scene.train_idx))]
                total, seen = 0.0, 0
                for bi, idx in enumerate(_batches(perm, tc.batch_size)):
                    ph, pl = scene.batch(idx, s)
                    try:
                        model.store.zero_grad()
                        with Tape() as tape:
                            loss = model.loss(model(ph, pl, training=True), scene.y[idx])
                        if not np.isfinite(loss.data):
                            raise FloatingPointError("non-finite loss")
                        backward(loss, tape)
                    except FloatingPointError as err:
                        raise TrainingDiverged(f"epoch {epoch} batch {bi}: {err}") from err
                    adam_step(model.store, model.store.grads(), adam)
                    total += float(loss.data) * len(idx)
                    seen += len(idx)
                try:
                    train_pred = predict_indices(model, scene, scene.train_idx, tc.eval_batch_size)
                    val_pred = predict_indices(model, scene, scene.val_idx, tc.eval_batch_size)
                except FloatingPointError as err:
                    raise TrainingDiverged(f"epoch {epoch} evaluation: {err}") from err
                train_acc = float(np.mean(train_pred == scene.y[scene.train_idx]))
                if len(scene.val_idx):
                    val_oa = float(np.mean(val_pred == scene.y[scene.val_idx]))
                else:
                    val_oa = train_acc
                rec = {"epoch": epoch, "lr": adam.lr, "train_loss": total / seen,
                       "train_acc": train_acc, "val_oa": val_oa}
                history.append(rec)
                logf.write(json.dumps({**rec, "elapsed_s": round(time.perf_counter() - t0, 3)}) + "\n")
                logf.flush()
                if progress:
                    progress(rec)
                if val_oa > best:
                    best, best_epoch = val_oa, epoch
                    save_checkpoint(out_dir / "checkpoint", model.store, _meta(cfg, scene, history, best_epoch))
                if tc.stop_at_train_acc is not None and train_acc >= tc.stop_at_train_acc:
                    break
        if best_epoch is None:
            save_checkpoint(out_dir / "checkpoint", model.store, _meta(cfg, scene, history, None))
        save_checkpoint(out_dir / "last", model.store, _meta(cfg, scene, history, best_epoch))
    if history:
        plotting.plot_training_curves(history, out_dir / "curves.png")
    return model, history


def load_model(checkpoint, precision_bits: int | None = None):
    """Rebuild (model, RunConfig, manifest) from a checkpoint directory."""
    manifest, tensors = load_checkpoint(checkpoint)
    cfg = RunConfig.from_dict(manifest["config"])
    bits = cfg.train.precision if precision_bits is None else precision_bits
    with precision(bits):
        model = CSFMamba(ModelConfig.from_dict(manifest["config"]["model"]))
        model.store.load_state(tensors)
    return model, cfg, manifest


def evaluate(checkpoint, data_dir, split: str = "val", batch_size: int = 256, out_dir=None):
    """Metrics over one split. Writes metrics JSON, per-class CSV and a confusion figure."""
    if split not in ("train", "val"):
        raise ValueError("split must be 'train' or 'val'")
    model, cfg, manifest = load_model(checkpoint)
    with precision(cfg.train.precision):
        scene = prepare_scene(data_dir, cfg, PreprocessState.from_dict(manifest["preprocess_state"]))
        idx = scene.train_idx if split == "train" else scene.val_idx
        if len(idx) == 0:
            raise ValueError(f"the {split} split is empty")
        pred = predict_indices(model, scene, idx, batch_size)
    K = cfg.model.num_classes
    cm, report = confusion_and_metrics(scene.y[idx], pred, K)
    result = {**report.to_dict(), "confusion": cm.tolist(), "split": split, "samples": int(len(idx)),
              "note": "val is the held-out remainder of the labeled pixels; no separate test split"}
    out_dir = Path(checkpoint if out_dir is None else out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / f"metrics_{split}.json").write_text(json.dumps(result, indent=2))
    with open(out_dir / f"per_class_{split}.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["class", "support", "correct", "recall"])
        for k in range(K):
            r = report.per_class[k]
            w.writerow([k + 1, int(cm[k].sum()), int(cm[k, k]), "" if r is None else f"{r:.6f}"])
    plotting.plot_confusion(cm, out_dir / f"confusion_{split}.png", title=f"{split} OA={report.oa:.4f}")
    return report, cm


def palette(K: int) -> np.ndarray:
    """(K+1, 3) uint8 colours; class k gets hue k/K, index 0 (unlabeled) is black."""
    cols = [(0, 0, 0)]
    for k in range(1, K + 1):
        r, g, b = colorsys.hsv_to_rgb((k / K) % 1.0, 0.85, 0.95)
        cols.append((round(r * 255), round(g * 255), round(b * 255)))
    return np.array(cols, dtype=np.uint8)


def write_ppm(path, rgb: np.ndarray) -> None:
    H, W, _ = rgb.shape
    with open(path, "wb") as f:
        f.write(f"P6\n{W} {H}\n255\n".encode("ascii"))
        f.write(np.ascontiguousarray(rgb, dtype=np.uint8).tobytes())


def predict_map(checkpoint, data_dir, out_ppm, tile_size: int = 4096, batch_size: int = 256):
    """Classify every pixel; writes FILE.ppm, FILE.u16 and FILE.legend.json. Returns the class raster."""
    out_ppm = Path(out_ppm)
    out_ppm.parent.mkdir(parents=True, exist_ok=True)
    model, cfg, manifest = load_model(checkpoint)
    with precision(cfg.train.precision):
        scene = prepare_scene(data_dir, cfg, PreprocessState.from_dict(manifest["preprocess_state"]))
        H, W = scene.labels.shape
        all_coords = np.argwhere(np.ones((H, W), dtype=bool))
        pred = np.empty(H * W, dtype=np.int64)
        s = cfg.model.patch_size
        for start in range(0, H * W, tile_size):
            tile = all_coords[start:start + tile_size]
            with no_record():
                for b in range(0, len(tile), batch_size):
                    c = tile[b:b + batch_size]
                    logits = model(gather_patches(scene.pad_h, c, s), gather_patches(scene.pad_l, c, s)).logits
                    pred[start + b:start + b + len(c)] = np.argmax(logits.data, axis=1) + 1
    raster = pred.reshape(H, W).astype(np.uint16)
    K = cfg.model.num_classes
    pal = palette(K)
    write_ppm(out_ppm, pal[raster])
    raster.astype("<u2").tofile(out_ppm.with_suffix(".u16"))
    legend = {"height": H, "width": W, "num_classes": K, "raster": out_ppm.with_suffix(".u16").name,
              "classes": [{"id": k, "rgb": pal[k].tolist()} for k in range(1, K + 1)]}
    out_ppm.with_suffix(".legend.json").write_text(json.dumps(legend, indent=2))
    return raster
