"""Mean average precision over temporal IoU thresholds.

Detections are matched per class and video: walking down by score, each
detection claims the unmatched ground-truth span with the highest IoU at or
above the threshold. AP integrates the precision-recall curve with the
all-point precision envelope; mAP averages classes that have at least one
ground-truth instance.
"""

from __future__ import annotations

import json
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from .detections import Detection, temporal_iou
from .targets import ActionInstance

DEFAULT_THRESHOLDS = (0.3, 0.4, 0.5, 0.6, 0.7)


@dataclass
class EvalReport:
    thresholds: tuple[float, ...]
    per_class_ap: dict[float, dict[int, float]]
    map_at: dict[float, float]
    classes: list[int]
    gt_counts: dict[int, int]
    n_detections: int
    n_gt: int
    interpolation: str = "all_point_envelope"
    no_gt: bool = False

    def to_dict(self) -> dict:
        return {
            "thresholds": list(self.thresholds),
            "per_class_ap": {f"{t:g}": {str(c): ap for c, ap in cls_ap.items()}
                             for t, cls_ap in self.per_class_ap.items()},
            "map_at": {f"{t:g}": v for t, v in self.map_at.items()},
            "classes": self.classes,
            "gt_counts": {str(c): n for c, n in self.gt_counts.items()},
            "n_detections": self.n_detections,
            "n_gt": self.n_gt,
            "interpolation": self.interpolation,
            "no_gt": self.no_gt,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def format_table(self) -> str:
        """Aligned text table: one AP row per class plus the mAP row."""
        header = ["class".ljust(8)] + [f"{t:>8.2f}" for t in self.thresholds]
        lines = ["".join(header)]
        for c in self.classes:
            row = [str(c).ljust(8)] + [f"{self.per_class_ap[t].get(c, 0.0):>8.4f}" for t in self.thresholds]
            lines.append("".join(row))
        map_row = ["mAP".ljust(8)] + [f"{self.map_at[t]:>8.4f}" for t in self.thresholds]
        lines.append("".join(map_row))
        return "\n".join(lines) + "\n"


def average_precision(recall: np.ndarray, precision: np.ndarray) -> float:
    """Area under the PR curve using the all-point precision envelope."""
    mrec = np.concatenate(([0.0], recall, [1.0]))
    mpre = np.concatenate(([0.0], precision, [0.0]))
    for i in range(mpre.size - 1, 0, -1):
        mpre[i - 1] = max(mpre[i - 1], mpre[i])
    changed = np.nonzero(mrec[1:] != mrec[:-1])[0]
    return float(((mrec[changed + 1] - mrec[changed]) * mpre[changed + 1]).sum())


def _match_class(
    dets: list[tuple[str, Detection]],
    gt_by_video: dict[str, list[ActionInstance]],
    threshold: float,
) -> float:
    n_gt = sum(len(v) for v in gt_by_video.values())
    if n_gt == 0:
        return 0.0
    if not dets:
        return 0.0
    order = sorted(range(len(dets)), key=lambda i: (-dets[i][1].score, dets[i][0], dets[i][1].start))
    matched: dict[str, list[bool]] = {vid: [False] * len(g) for vid, g in gt_by_video.items()}
    tp = np.zeros(len(dets))
    fp = np.zeros(len(dets))
    for rank, i in enumerate(order):
        vid, det = dets[i]
        gts = gt_by_video.get(vid, [])
        best_iou, best_j = 0.0, -1
        for j, gt in enumerate(gts):
            if matched[vid][j]:
                continue
            iou = temporal_iou((det.start, det.end), (gt.start, gt.end))
            if iou > best_iou:
                best_iou, best_j = iou, j
        if best_j >= 0 and best_iou >= threshold:
            matched[vid][best_j] = True
            tp[rank] = 1.0
        else:
            fp[rank] = 1.0
    tp_cum = np.cumsum(tp)
    fp_cum = np.cumsum(fp)
    recall = tp_cum / n_gt
    precision = tp_cum / np.maximum(tp_cum + fp_cum, 1e-12)
    return average_precision(recall, precision)


def mean_average_precision(
    detections_by_video: dict[str, list[Detection]],
    gt_by_video: dict[str, list[ActionInstance]],
    thresholds: tuple[float, ...] = DEFAULT_THRESHOLDS,
) -> EvalReport:
    """Score detections against ground truth at each IoU threshold.

    Classes absent from the ground truth are excluded from the mean; an
    evaluation set with no ground truth at all is flagged in the report.
    """
    gt_counts: dict[int, int] = defaultdict(int)
    gt_split: dict[int, dict[str, list[ActionInstance]]] = defaultdict(lambda: defaultdict(list))
    for vid, instances in gt_by_video.items():
        for inst in instances:
            gt_counts[inst.label] += 1
            gt_split[inst.label][vid].append(inst)

    det_split: dict[int, list[tuple[str, Detection]]] = defaultdict(list)
    n_detections = 0
    for vid, dets in detections_by_video.items():
        for det in dets:
            det_split[det.label].append((vid, det))
            n_detections += 1

    classes = sorted(gt_counts)
    per_class_ap: dict[float, dict[int, float]] = {}
    map_at: dict[float, float] = {}
    for t in thresholds:
        aps = {c: _match_class(det_split.get(c, []), gt_split[c], t) for c in classes}
        per_class_ap[t] = aps
        map_at[t] = float(np.mean([aps[c] for c in classes])) if classes else 0.0

    return EvalReport(
        thresholds=tuple(thresholds),
        per_class_ap=per_class_ap,
        map_at=map_at,
        classes=classes,
        gt_counts=dict(gt_counts),
        n_detections=n_detections,
        n_gt=sum(gt_counts.values()),
        no_gt=not classes,
    )
