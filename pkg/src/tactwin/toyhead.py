"""A linear per-cell head trained with the full detection loss.

This stands in for a learned decoder so the loss, assignment, and gradients
can be exercised end to end as an optimization objective. Features are
deterministic image statistics pooled per grid cell (local window, 3x3
context, and global deviation summaries); one affine map per output channel
is trained by full-batch gradient descent.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .assignment import (BOX_FD_STEP, PredictionField, _decode_raw,
                         _gt_targets, bce, bce_grad, simota_assign, smooth_l1,
                         smooth_l1_grad)
from .encoding import CSL_BINS, RegionGrid
from .errors import ConfigError
from .geometry import rotated_iou_pairs
from .render import TactileImage

HEAD_VERSION = 1


def cell_features(image: TactileImage, reference: TactileImage,
                  grid: RegionGrid, threshold: float = 0.01) -> np.ndarray:
    """Per-cell feature matrix (n_cells, 20), deterministic in the image.

    Local statistics are taken over each cell's own stride window, context
    over the 3x3 cell neighborhood, and the global columns summarize the
    whole deviation map (identical across cells of one image). The global
    products and powers give a linear head enough reach to express
    indentation laws such as force ~ area * sqrt(contrast).
    """
    if image.pixels.shape != reference.pixels.shape:
        raise ConfigError("image and reference shapes differ")
    dev = np.abs(image.pixels - reference.pixels)
    gy, gx = np.gradient(image.pixels)
    grad = np.hypot(gx, gy)
    above = dev >= threshold

    g_area = float(above.mean())
    g_area_hi = float((dev >= 4 * threshold).mean())
    g_mean = float(dev.mean())
    g_p98 = float(np.percentile(dev, 98))
    g_p999 = float(np.percentile(dev, 99.9))
    global_cols = np.array([
        g_area, g_area_hi, g_mean, g_p98, g_p999,
        g_area * np.sqrt(g_p98),
        g_area * g_p98,
        g_area_hi * g_p98,
        g_area * g_mean,
        np.sqrt(g_area * g_p98),
        g_area ** 1.5,
        g_area_hi * np.sqrt(g_p999),
    ])

    size = image.pixels.shape[0]
    rows = []
    for stride in grid.strides:
        m = size // stride
        win = dev.reshape(m, stride, m, stride)
        mean_map = win.mean(axis=(1, 3))
        std_map = win.std(axis=(1, 3))
        max_map = win.max(axis=(1, 3))
        grad_map = grad.reshape(m, stride, m, stride).mean(axis=(1, 3))
        frac_map = above.reshape(m, stride, m, stride).mean(axis=(1, 3))
        ctx_mean = ndimage.uniform_filter(mean_map, size=3, mode="nearest")
        ctx_max = ndimage.maximum_filter(max_map, size=3, mode="nearest")
        ctx_frac = ndimage.uniform_filter(frac_map, size=3, mode="nearest")
        local = np.stack([
            mean_map, std_map, max_map, grad_map, frac_map,
            ctx_mean, ctx_max, ctx_frac,
        ], axis=-1).reshape(m * m, 8)
        rows.append(np.concatenate(
            [local, np.tile(global_cols, (m * m, 1))], axis=1))
    return np.concatenate(rows, axis=0)


FEATURE_DIM = 20


def _sigmoid(z):
    return 1.0 / (1.0 + np.exp(-z))


@dataclass
class ToyHead:
    """Affine map per output channel over whitened features.

    feature_transform decorrelates the raw features (PCA whitening computed
    from the training set), which keeps plain gradient descent well
    conditioned across all output channels.
    """

    classes: list
    feature_mean: np.ndarray
    feature_transform: np.ndarray   # (F, F)
    weights: np.ndarray             # (F, D_total)
    bias: np.ndarray                # (D_total,)
    window_radius: float = 6.0
    sigma: float = 4.0

    @property
    def n_classes(self) -> int:
        return len(self.classes)

    def _slices(self):
        k = self.n_classes
        return {
            "obj": slice(0, 1),
            "cls": slice(1, 1 + k),
            "csl": slice(1 + k, 1 + k + CSL_BINS),
            "force": slice(1 + k + CSL_BINS, 2 + k + CSL_BINS),
            "box": slice(2 + k + CSL_BINS, 7 + k + CSL_BINS),
        }

    @classmethod
    def zeros(cls, classes, feature_mean, feature_transform,
              window_radius: float = 6.0, sigma: float = 4.0) -> "ToyHead":
        d_total = 7 + len(classes) + CSL_BINS
        f = feature_mean.shape[0]
        return cls(list(classes), feature_mean, feature_transform,
                   np.zeros((f, d_total)), np.zeros(d_total),
                   window_radius, sigma)

    def standardize(self, features: np.ndarray) -> np.ndarray:
        return (features - self.feature_mean) @ self.feature_transform.T

    def predict(self, features: np.ndarray, grid: RegionGrid,
                scale_mm_per_px: float) -> PredictionField:
        z = self.standardize(features) @ self.weights + self.bias
        s = self._slices()
        return PredictionField(
            grid=grid,
            scale_mm_per_px=scale_mm_per_px,
            obj=_sigmoid(z[:, s["obj"]])[:, 0],
            cls=_sigmoid(z[:, s["cls"]]),
            csl=_sigmoid(z[:, s["csl"]]),
            force=z[:, s["force"]][:, 0],
            box_raw=z[:, s["box"]],
        )

    def to_json(self) -> dict:
        return {
            "version": HEAD_VERSION,
            "classes": self.classes,
            "window_radius": self.window_radius,
            "sigma": self.sigma,
            "feature_mean": [float(v) for v in self.feature_mean],
            "feature_transform": [[float(v) for v in row]
                                  for row in self.feature_transform],
            "weights": [[float(v) for v in row] for row in self.weights],
            "bias": [float(v) for v in self.bias],
        }

    @classmethod
    def from_json(cls, data: dict) -> "ToyHead":
        if data.get("version") != HEAD_VERSION:
            raise ConfigError(f"unsupported head version {data.get('version')}")
        return cls(
            classes=list(data["classes"]),
            feature_mean=np.array(data["feature_mean"]),
            feature_transform=np.array(data["feature_transform"]),
            weights=np.array(data["weights"]),
            bias=np.array(data["bias"]),
            window_radius=data["window_radius"],
            sigma=data["sigma"],
        )

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh, sort_keys=True, indent=2)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "ToyHead":
        with open(path) as fh:
            return cls.from_json(json.load(fh))


@dataclass
class FitResult:
    head: ToyHead
    losses: list
    diverged: bool


def fit_toy_head(features_per_sample, gts_per_sample, grid: RegionGrid,
                 scale_mm_per_px: float, classes, learning_rate: float = 0.02,
                 epochs: int = 200, init_head: ToyHead | None = None,
                 window_radius: float = 6.0, sigma: float = 4.0,
                 channel_lr_scales: dict | None = None) -> FitResult:
    """Full-batch gradient descent of the detection loss over a linear head.

    Assignments come from the epoch-0 (uniform) predictions and stay frozen so
    the objective is a fixed function of the weights; an epoch's loss equals
    the sum of per-scene detection losses divided by the sample count.
    channel_lr_scales multiplies the step per output channel (the channels
    are independent affine maps, so each may carry its own rate).
    Divergence stops training early and flags the result: five consecutive
    loss increases (the plain reading), or five consecutive epochs whose
    trailing-5 mean loss exceeds twice the best loss seen. The second rule
    catches oscillating blowup (saturated sigmoids flip-flop instead of
    growing monotonically) without tripping on transient plateaus.
    """
    if learning_rate < 0 or epochs < 0:
        raise ConfigError("learning_rate and epochs must be nonnegative")
    n_samples = len(features_per_sample)
    if n_samples == 0 or n_samples != len(gts_per_sample):
        raise ConfigError("need matching nonempty feature and ground-truth lists")
    stacked = np.concatenate(features_per_sample, axis=0)
    if init_head is not None:
        head = init_head
    else:
        mean = stacked.mean(axis=0)
        centered = stacked - mean
        cov = centered.T @ centered / max(stacked.shape[0] - 1, 1)
        evals, evecs = np.linalg.eigh(cov)
        scale = 1.0 / np.sqrt(np.maximum(evals, 1e-9 * evals.max()))
        transform = (evecs * scale) @ evecs.T
        head = ToyHead.zeros(classes, mean, transform, window_radius, sigma)
    s = head._slices()
    n_cells = grid.n_cells

    # Freeze assignments from the initial predictions, then flatten all
    # positives of all samples into one batch.
    pos_rows, gt_cls, gt_csl, gt_force, gt_boxes = [], [], [], [], []
    obj_t = np.zeros(n_samples * n_cells)
    for i, (feats, gts) in enumerate(zip(features_per_sample, gts_per_sample)):
        preds = head.predict(feats, grid, scale_mm_per_px)
        asn = simota_assign(preds, gts, classes)
        obj_t[i * n_cells:(i + 1) * n_cells] = asn.obj_targets()
        pos = np.nonzero(asn.cell_to_gt >= 0)[0]
        if pos.size == 0:
            continue
        cls_t, csl_t, force_t, boxes_t = _gt_targets(
            gts, classes, head.n_classes, window_radius, sigma)
        gt_of = asn.cell_to_gt[pos]
        pos_rows.append(i * n_cells + pos)
        gt_cls.append(cls_t[gt_of])
        gt_csl.append(csl_t[gt_of])
        gt_force.append(force_t[gt_of])
        gt_boxes.append(boxes_t[gt_of])
    pos_rows = np.concatenate(pos_rows) if pos_rows else np.zeros(0, dtype=int)
    gt_cls = np.concatenate(gt_cls) if len(gt_cls) else np.zeros((0, head.n_classes))
    gt_csl = np.concatenate(gt_csl) if len(gt_csl) else np.zeros((0, CSL_BINS))
    gt_force = np.concatenate(gt_force) if len(gt_force) else np.zeros(0)
    gt_boxes = np.concatenate(gt_boxes) if len(gt_boxes) else np.zeros((0, 5))

    x_all = head.standardize(stacked)
    x_pos = x_all[pos_rows]
    cell_idx = pos_rows % n_cells
    centers_pos = grid.centers_mm(scale_mm_per_px)[cell_idx]
    strides_pos = grid.strides_mm(scale_mm_per_px)[cell_idx]
    b_total = pos_rows.size
    fd_offsets = np.zeros((10, 5))
    for j in range(5):
        fd_offsets[2 * j, j] = BOX_FD_STEP
        fd_offsets[2 * j + 1, j] = -BOX_FD_STEP

    w_obj = s["obj"]
    rest = slice(w_obj.stop, head.bias.shape[0])
    lr_per_output = np.full(head.bias.shape[0], learning_rate)
    for name, factor in (channel_lr_scales or {}).items():
        if name not in s:
            raise ConfigError(f"unknown channel {name!r} in channel_lr_scales")
        lr_per_output[s[name]] = learning_rate * factor

    losses = []
    diverged = False
    best = math.inf
    rising = 0
    blowup = 0
    for epoch in range(epochs):
        z_obj = x_all @ head.weights[:, w_obj] + head.bias[w_obj]
        p_obj = _sigmoid(z_obj[:, 0])
        z_pos = x_pos @ head.weights[:, rest] + head.bias[rest]
        off = w_obj.stop
        p_cls = _sigmoid(z_pos[:, s["cls"].start - off:s["cls"].stop - off])
        p_csl = _sigmoid(z_pos[:, s["csl"].start - off:s["csl"].stop - off])
        force = z_pos[:, s["force"].start - off]
        box_raw = z_pos[:, s["box"].start - off:s["box"].stop - off]

        loss = float(bce(p_obj, obj_t).sum())
        loss += float(bce(p_cls, gt_cls).sum())
        loss += float(bce(p_csl, gt_csl).sum())
        ferr = force - gt_force
        loss += float(smooth_l1(ferr).sum())
        boxes = _decode_raw(box_raw, centers_pos, strides_pos)
        ious = rotated_iou_pairs(boxes, gt_boxes)
        loss += float(np.sum(1.0 - ious ** 2))
        losses.append(loss / n_samples)
        rising = rising + 1 if (len(losses) >= 2 and losses[-1] > losses[-2]) else 0
        stuck_high = (len(losses) >= 5
                      and float(np.mean(losses[-5:])) > 2.0 * best)
        blowup = blowup + 1 if stuck_high else 0
        if rising >= 5 or blowup >= 5:
            diverged = True
            break
        best = min(best, losses[-1])

        gz_obj = (bce_grad(p_obj, obj_t) * p_obj * (1.0 - p_obj))[:, None]
        gz_pos = np.zeros_like(z_pos)
        gz_pos[:, s["cls"].start - off:s["cls"].stop - off] = (
            bce_grad(p_cls, gt_cls) * p_cls * (1.0 - p_cls))
        gz_pos[:, s["csl"].start - off:s["csl"].stop - off] = (
            bce_grad(p_csl, gt_csl) * p_csl * (1.0 - p_csl))
        gz_pos[:, s["force"].start - off] = smooth_l1_grad(ferr)
        if b_total:
            reps = box_raw[:, None, :] + fd_offsets[None, :, :]
            dec = _decode_raw(reps.reshape(-1, 5),
                              np.repeat(centers_pos, 10, axis=0),
                              np.repeat(strides_pos, 10))
            fd = (1.0 - rotated_iou_pairs(dec, np.repeat(gt_boxes, 10, axis=0)) ** 2)
            fd = fd.reshape(b_total, 5, 2)
            gz_pos[:, s["box"].start - off:s["box"].stop - off] = (
                (fd[:, :, 0] - fd[:, :, 1]) / (2.0 * BOX_FD_STEP))

        grad_w = np.zeros_like(head.weights)
        grad_b = np.zeros_like(head.bias)
        grad_w[:, w_obj] = x_all.T @ gz_obj
        grad_b[w_obj] = gz_obj.sum(axis=0)
        if b_total:
            grad_w[:, rest] = x_pos.T @ gz_pos
            grad_b[rest] = gz_pos.sum(axis=0)
        head.weights = head.weights - lr_per_output * grad_w / n_samples
        head.bias = head.bias - lr_per_output * grad_b / n_samples
    return FitResult(head=head, losses=losses, diverged=diverged)


def predict_sample_force(head: ToyHead, features: np.ndarray, grid: RegionGrid,
                         scale_mm_per_px: float) -> float:
    """Force readout at the most confident cell."""
    preds = head.predict(features, grid, scale_mm_per_px)
    return float(preds.force[int(np.argmax(preds.obj))])
