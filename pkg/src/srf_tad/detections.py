"""Proposal decoding, score thresholding, NMS, and top-k selection.

Each temporal location yields one candidate interval per class; the ranking
score multiplies the class probability by the center-ness probability.
Suppression runs per class with deterministic tie-breaking so the pipeline
output is invariant to input order.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass

import numpy as np

from .kernels import sigmoid_forward
from .model import HeadOutputs, decode_offsets
from .targets import centerness_target, location_to_frame


@dataclass(frozen=True)
class Detection:
    """A scored predicted action span, in frames."""

    start: float
    end: float
    label: int
    score: float

    @property
    def duration(self) -> float:
        return self.end - self.start


def _sort_key(det: Detection):
    return (-det.score, det.start, det.label)


def decode(
    outputs: HeadOutputs,
    stride: int,
    window_offset: float = 0.0,
    video_length: float | None = None,
    score_floor: float = 0.0,
    ctr_mode: str = "learned",
) -> list[Detection]:
    """Turn head outputs into candidate detections.

    Location x maps to frame stride/2 + x*stride; the interval spans the
    decoded left/right offsets around it, shifted by the window offset and
    clipped to the video extent. ``ctr_mode`` selects where the center-ness
    factor comes from: the learned branch, a value derived from the
    predicted offsets, or none (factor 1).
    """
    n_classes, n_locations = outputs.cls.shape
    frames = location_to_frame(np.arange(n_locations), stride) + window_offset
    offsets = decode_offsets(outputs.reg, stride)
    cls_prob = sigmoid_forward(outputs.cls)
    if ctr_mode == "learned":
        ctr_factor = sigmoid_forward(outputs.ctr)[0]
    elif ctr_mode == "derived":
        ctr_factor = centerness_target(offsets[0], offsets[1])
    elif ctr_mode == "none":
        ctr_factor = np.ones(n_locations)
    else:
        raise ValueError(f"unknown ctr_mode {ctr_mode!r}")

    scores = cls_prob * ctr_factor[None, :]
    starts = frames - offsets[0]
    ends = frames + offsets[1]
    if video_length is not None:
        starts = np.clip(starts, 0.0, video_length)
        ends = np.clip(ends, 0.0, video_length)

    dets = []
    for c in range(n_classes):
        for x in range(n_locations):
            if scores[c, x] >= score_floor and ends[x] > starts[x]:
                dets.append(Detection(float(starts[x]), float(ends[x]), c + 1, float(scores[c, x])))
    return dets


def filter_threshold(dets: list[Detection], alpha: float) -> list[Detection]:
    """Keep detections whose ranking score is at least alpha."""
    return [d for d in dets if d.score >= alpha]


def temporal_iou(a: tuple[float, float], b: tuple[float, float]) -> float:
    """1D Jaccard overlap of two intervals; 0 when disjoint or degenerate."""
    inter = min(a[1], b[1]) - max(a[0], b[0])
    if inter <= 0.0:
        return 0.0
    union = (a[1] - a[0]) + (b[1] - b[0]) - inter
    return inter / union if union > 0.0 else 0.0


def nms(dets: list[Detection], delta: float) -> list[Detection]:
    """Greedy per-class suppression of overlaps above the Jaccard threshold.

    Within a class, detections are visited by descending score (ties:
    earlier start); a detection is dropped when it overlaps an already-kept
    one with IoU strictly greater than delta.
    """
    by_label: dict[int, list[Detection]] = defaultdict(list)
    for d in dets:
        by_label[d.label].append(d)
    kept: list[Detection] = []
    for label in sorted(by_label):
        pending = sorted(by_label[label], key=_sort_key)
        kept_cls: list[Detection] = []
        for d in pending:
            span = (d.start, d.end)
            if all(temporal_iou(span, (k.start, k.end)) <= delta for k in kept_cls):
                kept_cls.append(d)
        kept.extend(kept_cls)
    return sorted(kept, key=_sort_key)


def top_k(dets: list[Detection], k: int) -> list[Detection]:
    """Highest-scored k detections (deterministic tie-breaking)."""
    return sorted(dets, key=_sort_key)[:k]
