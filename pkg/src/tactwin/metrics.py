"""Detection evaluation: matching, MAE metrics, PR/AP, confusion, reports.

Matching is greedy in descending score; a detection takes the highest-IoU
still-unmatched ground truth at or above the IoU threshold. Average precision
uses all-point interpolation of the precision envelope. Undefined metrics
(empty denominators) are reported as None, never silently as 0 or 1.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geometry import angle_error, rotated_iou

REPORT_SCHEMA_VERSION = 1
MISSED_LABEL = "missed"


@dataclass(frozen=True)
class MatchResult:
    """Per-sample geometric matching between detections and ground truths."""

    pairs: list                  # (det_index, gt_index, iou)
    unmatched_dets: list         # false positives
    unmatched_gts: list          # false negatives


def match_detections(dets, gts, iou_threshold: float = 0.5) -> MatchResult:
    """Greedy class-agnostic matching by descending detection score."""
    order = sorted(range(len(dets)), key=lambda i: (-dets[i].score, i))
    taken = set()
    pairs = []
    for di in order:
        best_iou, best_gi = 0.0, None
        for gi, gt in enumerate(gts):
            if gi in taken:
                continue
            iou = rotated_iou(dets[di].box, gt.box)
            if iou >= iou_threshold and iou > best_iou:
                best_iou, best_gi = iou, gi
        if best_gi is not None:
            taken.add(best_gi)
            pairs.append((di, best_gi, best_iou))
    matched_dets = {p[0] for p in pairs}
    return MatchResult(
        pairs=pairs,
        unmatched_dets=[i for i in range(len(dets)) if i not in matched_dets],
        unmatched_gts=[i for i in range(len(gts)) if i not in taken],
    )


def mae(pred_values, gt_values, kind: str = "force"):
    """Mean absolute error over matched pairs; None when the set is empty.

    kind selects the metric: "force" (|difference| in N), "location"
    (euclidean mm over (x, y) pairs), or "angle" (rotation-matrix angle error
    in degrees, folding the 180-degree ambiguity).
    """
    pred_values = list(pred_values)
    gt_values = list(gt_values)
    if len(pred_values) != len(gt_values):
        raise ValueError("prediction and ground-truth value counts differ")
    if not pred_values:
        return None
    if kind == "force":
        errs = [abs(p - g) for p, g in zip(pred_values, gt_values)]
    elif kind == "location":
        errs = [math.hypot(p[0] - g[0], p[1] - g[1])
                for p, g in zip(pred_values, gt_values)]
    elif kind == "angle":
        errs = [angle_error(p, g) for p, g in zip(pred_values, gt_values)]
    else:
        raise ValueError(f"unknown MAE kind {kind!r}")
    return float(np.mean(errs))


@dataclass(frozen=True)
class PRResult:
    precision: float | None
    recall: float | None
    ap: float | None
    f1: float | None
    n_gt: int
    n_det: int
    tp: int
    pr_points: tuple = ()        # (recall, precision) per ranked detection


def _interpolated_ap(tp_stream: np.ndarray, n_gt: int) -> float:
    """All-point interpolated area under the precision-recall curve."""
    tp_cum = np.cumsum(tp_stream)
    fp_cum = np.cumsum(1 - tp_stream)
    recall = tp_cum / n_gt
    precision = tp_cum / np.maximum(tp_cum + fp_cum, 1)
    mrec = np.concatenate([[0.0], recall, [recall[-1] if recall.size else 0.0]])
    mpre = np.concatenate([[1.0], precision, [0.0]])
    for i in range(mpre.size - 2, -1, -1):
        mpre[i] = max(mpre[i], mpre[i + 1])
    idx = np.nonzero(mrec[1:] != mrec[:-1])[0]
    return float(np.sum((mrec[idx + 1] - mrec[idx]) * mpre[idx + 1]))


def precision_recall_ap(samples, iou_threshold: float = 0.5) -> PRResult:
    """Evaluate a scored detection set over many samples.

    samples: list of (detections, ground_truths) pairs; detections and ground
    truths here are assumed pre-filtered to one class (or pooled for a
    class-agnostic summary). Detections are ranked globally by score;
    each matches the highest-IoU free ground truth of its own sample.
    """
    n_gt = sum(len(gts) for _, gts in samples)
    ranked = []
    for si, (dets, _) in enumerate(samples):
        for di, det in enumerate(dets):
            ranked.append((-det.score, si, di))
    ranked.sort()
    used = [set() for _ in samples]
    tp_stream = np.zeros(len(ranked), dtype=int)
    for k, (_, si, di) in enumerate(ranked):
        det = samples[si][0][di]
        gts = samples[si][1]
        best_iou, best_gi = 0.0, None
        for gi, gt in enumerate(gts):
            if gi in used[si]:
                continue
            iou = rotated_iou(det.box, gt.box)
            if iou >= iou_threshold and iou > best_iou:
                best_iou, best_gi = iou, gi
        if best_gi is not None:
            used[si].add(best_gi)
            tp_stream[k] = 1
    n_det = len(ranked)
    tp = int(tp_stream.sum())
    precision = tp / n_det if n_det else None
    recall = tp / n_gt if n_gt else None
    ap = _interpolated_ap(tp_stream, n_gt) if (n_gt and n_det) else (0.0 if n_gt else None)
    f1 = None
    if precision is not None and recall is not None and precision + recall > 0:
        f1 = 2 * precision * recall / (precision + recall)
    elif precision is not None and recall is not None:
        f1 = 0.0
    if n_gt and n_det:
        tp_cum = np.cumsum(tp_stream)
        fp_cum = np.cumsum(1 - tp_stream)
        points = tuple(zip((tp_cum / n_gt).tolist(),
                           (tp_cum / np.maximum(tp_cum + fp_cum, 1)).tolist()))
    else:
        points = ()
    return PRResult(precision, recall, ap, f1, n_gt, n_det, tp, points)


@dataclass
class ConfusionMatrix:
    """Rows: ground-truth class; columns: detected class plus a missed column."""

    labels: list
    matrix: np.ndarray           # (K, K + 1) counts

    def to_json(self) -> dict:
        return {
            "labels": list(self.labels) + [MISSED_LABEL],
            "rows": {lbl: [int(v) for v in row]
                     for lbl, row in zip(self.labels, self.matrix)},
        }

    def diagonal_recall(self) -> dict:
        out = {}
        for i, lbl in enumerate(self.labels):
            total = self.matrix[i].sum()
            out[lbl] = float(self.matrix[i, i] / total) if total else None
        return out


def confusion_matrix(per_sample_matches, classes) -> ConfusionMatrix:
    """Counts over class-agnostic matched pairs plus per-class misses.

    per_sample_matches: list of (dets, gts, MatchResult).
    """
    classes = list(classes)
    index = {c: i for i, c in enumerate(classes)}
    mat = np.zeros((len(classes), len(classes) + 1), dtype=int)
    for dets, gts, match in per_sample_matches:
        for di, gi, _ in match.pairs:
            g = index[gts[gi].class_name]
            d = index.get(dets[di].class_name)
            if d is None:
                continue
            mat[g, d] += 1
        for gi in match.unmatched_gts:
            mat[index[gts[gi].class_name], -1] += 1
    return ConfusionMatrix(classes, mat)


@dataclass
class MetricsReport:
    iou_threshold: float
    classes: list
    overall: dict
    per_class: dict
    confusion: ConfusionMatrix

    def to_json(self) -> dict:
        return {
            "schema_version": REPORT_SCHEMA_VERSION,
            "iou_threshold": self.iou_threshold,
            "classes": list(self.classes),
            "overall": self.overall,
            "per_class": self.per_class,
            "confusion": self.confusion.to_json(),
        }


_ROW_FIELDS = (
    ("n_gt", "gt", "{:d}"),
    ("n_det", "det", "{:d}"),
    ("tp", "tp", "{:d}"),
    ("precision", "prec", "{:.4f}"),
    ("recall", "recall", "{:.4f}"),
    ("ap_at_iou", "ap@50", "{:.4f}"),
    ("f1_at_iou", "f1@50", "{:.4f}"),
    ("force_mae_n", "maeF(N)", "{:.4f}"),
    ("angle_mae_deg", "maeAng(deg)", "{:.4f}"),
    ("location_mae_mm", "maeLoc(mm)", "{:.4f}"),
)


def evaluate_detections(per_sample, classes, iou_threshold: float = 0.5,
                        angle_classes=None) -> MetricsReport:
    """Aggregate a split: per_sample is a list of (detections, ground_truths).

    angle_classes optionally restricts the angle MAE to classes whose pose is
    observable (anisotropic footprints); None means all matched pairs count.
    """
    classes = sorted(classes)
    matches = [(dets, gts, match_detections(dets, gts, iou_threshold))
               for dets, gts in per_sample]

    def collect(cls=None):
        force_p, force_g, loc_p, loc_g, ang_p, ang_g = [], [], [], [], [], []
        for dets, gts, match in matches:
            for di, gi, _ in match.pairs:
                gt = gts[gi]
                if cls is not None and gt.class_name != cls:
                    continue
                det = dets[di]
                force_p.append(det.force_n)
                force_g.append(gt.force_n)
                loc_p.append((det.box.cx, det.box.cy))
                loc_g.append((gt.box.cx, gt.box.cy))
                if angle_classes is None or gt.class_name in angle_classes:
                    ang_p.append(det.theta_deg)
                    ang_g.append(gt.theta_deg)
        return {
            "force_mae_n": mae(force_p, force_g, "force"),
            "location_mae_mm": mae(loc_p, loc_g, "location"),
            "angle_mae_deg": mae(ang_p, ang_g, "angle"),
        }

    def pr_for(cls=None):
        filtered = []
        for dets, gts in per_sample:
            fd = [d for d in dets if cls is None or d.class_name == cls]
            fg = [g for g in gts if cls is None or g.class_name == cls]
            filtered.append((fd, fg))
        return precision_recall_ap(filtered, iou_threshold)

    per_class = {}
    for cls in classes:
        pr = pr_for(cls)
        row = collect(cls)
        row.update({"n_gt": pr.n_gt, "n_det": pr.n_det, "tp": pr.tp,
                    "precision": pr.precision, "recall": pr.recall,
                    "ap_at_iou": pr.ap, "f1_at_iou": pr.f1,
                    "pr_points": [[r, p] for r, p in pr.pr_points]})
        per_class[cls] = row

    pr = pr_for(None)
    overall = collect(None)
    aps = [v["ap_at_iou"] for v in per_class.values() if v["ap_at_iou"] is not None]
    overall.update({
        "n_gt": pr.n_gt, "n_det": pr.n_det, "tp": pr.tp,
        "precision": pr.precision, "recall": pr.recall,
        "ap_at_iou": float(np.mean(aps)) if aps else None,
        "f1_at_iou": pr.f1,
        "pr_points": [[r, p] for r, p in pr.pr_points],
    })
    confusion = confusion_matrix(matches, classes)
    return MetricsReport(iou_threshold, classes, overall, per_class, confusion)


def format_report_table(report: MetricsReport) -> str:
    """Fixed-width text summary, stable for diffing."""
    headers = ["class"] + [h for _, h, _ in _ROW_FIELDS]
    widths = [12] + [11] * len(_ROW_FIELDS)

    def fmt_row(name, row):
        cells = [name.ljust(widths[0])]
        for (key, _, spec), w in zip(_ROW_FIELDS, widths[1:]):
            val = row.get(key)
            cells.append(("n/a" if val is None else spec.format(val)).rjust(w))
        return " ".join(cells)

    lines = [" ".join(h.ljust(w) if i == 0 else h.rjust(w)
                      for i, (h, w) in enumerate(zip(headers, widths)))]
    lines.append("-" * len(lines[0]))
    for cls in report.classes:
        lines.append(fmt_row(cls, report.per_class[cls]))
    lines.append("-" * len(lines[0]))
    lines.append(fmt_row("overall", report.overall))
    lines.append("")
    lines.append("confusion (rows: ground truth, cols: detected + missed)")
    labels = list(report.confusion.labels) + [MISSED_LABEL]
    head = "".ljust(12) + " ".join(l.rjust(9) for l in labels)
    lines.append(head)
    for lbl, row in zip(report.confusion.labels, report.confusion.matrix):
        lines.append(lbl.ljust(12) + " ".join(str(int(v)).rjust(9) for v in row))
    return "\n".join(lines) + "\n"


def write_report(report: MetricsReport, base_path) -> tuple:
    """Write <base>.json and <base>.txt with deterministic content."""
    base = Path(base_path)
    json_path = base.with_suffix(".json")
    txt_path = base.with_suffix(".txt")
    try:
        with open(json_path, "w") as fh:
            json.dump(report.to_json(), fh, sort_keys=True, indent=2)
            fh.write("\n")
        with open(txt_path, "w") as fh:
            fh.write(format_report_table(report))
    except OSError as exc:
        raise IOError(f"cannot write report to {base}: {exc}") from exc
    return json_path, txt_path
