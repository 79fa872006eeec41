"""Per-location supervision targets and the multi-task training loss.

A temporal location is positive when its mapped frame falls inside a
ground-truth instance; among containing instances the one whose center is
nearest wins (ties: earlier start, then shorter duration). Positives carry
offset targets (distance to the instance's start and end) and a center-ness
target sqrt(min(l,r)/max(l,r)).

The total loss sums a per-class sigmoid focal loss over all locations, a
-log(temporal IoU) loss over positives, and a binary cross entropy on
center-ness over positives, each divided by the positive count.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .kernels import sigmoid_forward
from .model import HeadOutputs, decode_offsets

FOCAL_GAMMA = 2.0
FOCAL_ALPHA = 0.25
MIN_OFFSET_TARGET = 1e-3  # frames; keeps the IoU log defined at instance edges


@dataclass(frozen=True)
class ActionInstance:
    """A ground-truth or predicted action span, in frames."""

    start: float
    end: float
    label: int
    score: float | None = None

    def __post_init__(self):
        if not self.end > self.start:
            raise ValueError(f"instance end must exceed start, got [{self.start}, {self.end}]")
        if self.start < 0:
            raise ValueError(f"instance start must be >= 0, got {self.start}")
        if self.label < 1:
            raise ValueError(f"instance label must be >= 1 (0 is background), got {self.label}")

    @property
    def center(self) -> float:
        return 0.5 * (self.start + self.end)

    @property
    def duration(self) -> float:
        return self.end - self.start


@dataclass
class LocationTargets:
    """Per-location class ids (0 = background), offset targets (2 x T,
    rows left/right, zero-filled at negatives), and center-ness targets."""

    c_star: np.ndarray
    t_star: np.ndarray
    ctr_star: np.ndarray

    @property
    def positive_mask(self) -> np.ndarray:
        return self.c_star > 0

    @property
    def n_positive(self) -> int:
        return int(np.count_nonzero(self.c_star))


def location_to_frame(x, stride: int):
    """Frame coordinate of a temporal location: the center of its stride
    window, stride/2 + x*stride. Accepts scalars or arrays."""
    return 0.5 * stride + np.asarray(x, dtype=np.float64) * stride


def centerness_target(l_star, r_star):
    """sqrt(min / max) of the two offsets; 0 for the degenerate case where
    both are 0. Accepts scalars or arrays."""
    l = np.asarray(l_star, dtype=np.float64)
    r = np.asarray(r_star, dtype=np.float64)
    mn = np.minimum(l, r)
    mx = np.maximum(l, r)
    ratio = np.divide(mn, mx, out=np.zeros_like(mx), where=mx > 0.0)
    out = np.sqrt(ratio)
    return float(out) if out.ndim == 0 else out


def assign_targets(instances: list[ActionInstance], n_locations: int, stride: int) -> LocationTargets:
    """Build per-location supervision from a window's instances.

    Tie-breaking for locations inside several instances is deterministic:
    nearest center, then earlier start, then shorter duration.
    """
    frames = location_to_frame(np.arange(n_locations), stride)
    c_star = np.zeros(n_locations, dtype=np.int64)
    t_star = np.zeros((2, n_locations))
    ctr_star = np.zeros(n_locations)
    if not instances:
        return LocationTargets(c_star, t_star, ctr_star)

    horizon = n_locations * stride
    for inst in instances:
        if inst.end > horizon:
            raise ValueError(f"instance [{inst.start}, {inst.end}] exceeds window extent {horizon}")

    # argmin picks the first minimum, so pre-sorting by (start, duration)
    # realizes the tie-break order
    order = sorted(range(len(instances)), key=lambda i: (instances[i].start, instances[i].duration))
    starts = np.array([instances[i].start for i in order])
    ends = np.array([instances[i].end for i in order])
    labels = np.array([instances[i].label for i in order], dtype=np.int64)
    centers = 0.5 * (starts + ends)

    contains = (starts[:, None] <= frames[None, :]) & (frames[None, :] <= ends[:, None])
    dist = np.abs(frames[None, :] - centers[:, None])
    dist = np.where(contains, dist, np.inf)
    best = dist.argmin(axis=0)
    positive = contains.any(axis=0)

    idx = best[positive]
    f_pos = frames[positive]
    c_star[positive] = labels[idx]
    l_pos = f_pos - starts[idx]
    r_pos = ends[idx] - f_pos
    t_star[0, positive] = l_pos
    t_star[1, positive] = r_pos
    ctr_star[positive] = centerness_target(l_pos, r_pos)
    return LocationTargets(c_star, t_star, ctr_star)


def _softplus(x: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, x)


def focal_loss(
    cls_logits: np.ndarray,
    c_star: np.ndarray,
    gamma: float = FOCAL_GAMMA,
    alpha: float = FOCAL_ALPHA,
) -> tuple[float, np.ndarray]:
    """Summed per-class binary focal loss on sigmoid probabilities.

    Class c at a location is a positive pair iff c_star there equals c;
    all other (class, location) pairs are negatives. Returns the summed
    loss and its gradient w.r.t. the logits; normalization is the caller's
    job.
    """
    n_classes, n_locations = cls_logits.shape
    if c_star.shape != (n_locations,):
        raise ShapeError("focal_loss", "locations", (n_locations,), c_star.shape)
    if np.any(c_star > n_classes):
        raise ValueError(f"class id {int(c_star.max())} exceeds n_classes {n_classes}")
    target = np.zeros_like(cls_logits)
    pos = c_star > 0
    target[c_star[pos] - 1, np.nonzero(pos)[0]] = 1.0

    z = cls_logits
    p = sigmoid_forward(z)
    log_p = -_softplus(-z)
    log_1mp = -_softplus(z)

    one_m_p = 1.0 - p
    loss_pos = -alpha * one_m_p**gamma * log_p
    loss_neg = -(1.0 - alpha) * p**gamma * log_1mp
    loss = float(np.where(target == 1.0, loss_pos, loss_neg).sum())

    grad_pos = alpha * (gamma * p * one_m_p**gamma * log_p - one_m_p**(gamma + 1.0))
    grad_neg = (1.0 - alpha) * (p**(gamma + 1.0) - gamma * p**gamma * one_m_p * log_1mp)
    grad = np.where(target == 1.0, grad_pos, grad_neg)
    return loss, grad


def tiou_loss(
    offsets: np.ndarray, offsets_star: np.ndarray
) -> tuple[float, np.ndarray]:
    """Summed -log(intersection / union) between predicted and target
    offset pairs, with intersection = min(l, l*) + min(r, r*).

    Both arrays are 2 x N with strictly positive entries (targets are
    clamped upstream). Returns the sum and the gradient w.r.t. offsets.
    """
    if offsets.shape != offsets_star.shape or offsets.shape[0] != 2:
        raise ShapeError("tiou_loss", "offsets", offsets_star.shape, offsets.shape)
    if offsets.size and (offsets.min() <= 0.0 or offsets_star.min() <= 0.0):
        raise ValueError("tiou_loss requires strictly positive offsets")
    inter = np.minimum(offsets, offsets_star).sum(axis=0)
    union = offsets_star.sum(axis=0) + offsets.sum(axis=0) - inter
    loss = float((np.log(union) - np.log(inter)).sum())
    # each offset contributes to exactly one of intersection or union:
    # below its target it moves the intersection, above it only the union
    is_min = (offsets <= offsets_star).astype(np.float64)
    grad = (1.0 - is_min) / union - is_min / inter
    return loss, grad


def centerness_loss(ctr_logits: np.ndarray, ctr_star: np.ndarray) -> tuple[float, np.ndarray]:
    """Summed binary cross entropy in logit space: softplus(z) - z*y."""
    if ctr_logits.shape != ctr_star.shape:
        raise ShapeError("centerness_loss", "locations", ctr_star.shape, ctr_logits.shape)
    loss = float((_softplus(ctr_logits) - ctr_logits * ctr_star).sum())
    grad = sigmoid_forward(ctr_logits) - ctr_star
    return loss, grad


@dataclass
class LossBreakdown:
    total: float
    cls: float
    loc: float
    ctr: float
    n_positive: int


def total_loss(
    outputs: HeadOutputs,
    targets: LocationTargets,
    stride: int,
    lambda_loc: float = 1.0,
    beta_ctr: float = 1.0,
    gamma: float = FOCAL_GAMMA,
    alpha: float = FOCAL_ALPHA,
    ctr_mode: str = "learned",
) -> tuple[LossBreakdown, HeadOutputs]:
    """Combine the three loss terms and their gradients w.r.t. raw outputs.

    The classification term runs over every location; localization and
    center-ness only over positives. All terms divide by max(n_positive, 1).
    Offset decoding (exp * stride) is chained into the regression gradient.
    Modes without a supervised center-ness branch drop that term.
    """
    n_pos = targets.n_positive
    norm = float(max(n_pos, 1))
    pos = targets.positive_mask

    cls_sum, grad_cls = focal_loss(outputs.cls, targets.c_star, gamma, alpha)
    grad_cls /= norm
    cls_term = cls_sum / norm

    grad_reg = np.zeros_like(outputs.reg)
    grad_ctr = np.zeros_like(outputs.ctr)
    loc_term = 0.0
    ctr_term = 0.0
    if n_pos:
        decoded = decode_offsets(outputs.reg[:, pos], stride)
        star = np.maximum(targets.t_star[:, pos], MIN_OFFSET_TARGET)
        loc_sum, grad_decoded = tiou_loss(decoded, star)
        loc_term = lambda_loc * loc_sum / norm
        # d loss / d reg = d loss / d offset * offset (exp chain rule)
        grad_reg[:, pos] = (lambda_loc / norm) * grad_decoded * decoded

        if ctr_mode == "learned" and beta_ctr != 0.0:
            ctr_sum, grad_ctr_pos = centerness_loss(outputs.ctr[0, pos], targets.ctr_star[pos])
            ctr_term = beta_ctr * ctr_sum / norm
            grad_ctr[0, pos] = (beta_ctr / norm) * grad_ctr_pos

    breakdown = LossBreakdown(cls_term + loc_term + ctr_term, cls_term, loc_term, ctr_term, n_pos)
    return breakdown, HeadOutputs(grad_cls, grad_reg, grad_ctr)
