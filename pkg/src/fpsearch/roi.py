"""ROI handling: boxes, IoU, guided category rejection, and mAP evaluation.

The detector itself is pluggable; this module ships the evaluation protocol
and a deterministic fixture-backed stub. Guided filtering is the post-step
that rejects detections whose class does not match the caller's category,
which is what drives the false-positive reduction measured by
:func:`evaluate_map`.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol

import numpy as np


@dataclass(frozen=True)
class Box:
    """Axis-aligned rectangle, top-left origin, pixel units."""

    x: float
    y: float
    w: float
    h: float

    def __post_init__(self) -> None:
        if self.x < 0 or self.y < 0:
            raise ValueError(f"box origin must be non-negative: ({self.x}, {self.y})")
        if self.w <= 0 or self.h <= 0:
            raise ValueError(f"box extents must be positive: ({self.w}, {self.h})")

    @property
    def area(self) -> float:
        return self.w * self.h


@dataclass(frozen=True)
class Detection:
    box: Box
    category: str
    score: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"detection score out of [0,1]: {self.score}")


@dataclass(frozen=True)
class GroundTruthBox:
    box: Box
    category: str
    image_id: str


class Detector(Protocol):
    """Anything that yields detections for all categories at once.

    Implementations must be deterministic for a fixed input. ``image_id``
    lets file-backed stubs key their fixtures without decoding pixels.
    """

    def detect(
        self, image: np.ndarray | None, image_id: str | None = None
    ) -> list[Detection]: ...


class FixtureDetector:
    """Deterministic detector stub reading detections from a JSON Lines file.

    Each line is ``{image_id, x, y, w, h, category, score}``. Unknown image
    ids yield no detections, which downstream code treats as the
    full-image-ROI fallback.
    """

    def __init__(self, by_image: dict[str, list[Detection]]):
        self._by_image = by_image

    @classmethod
    def from_file(cls, path: str | Path) -> "FixtureDetector":
        return cls(load_detections(path))

    def detect(
        self, image: np.ndarray | None, image_id: str | None = None
    ) -> list[Detection]:
        if image_id is None:
            return []
        return list(self._by_image.get(image_id, []))


def load_detections(path: str | Path) -> dict[str, list[Detection]]:
    by_image: dict[str, list[Detection]] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            det = Detection(
                box=Box(rec["x"], rec["y"], rec["w"], rec["h"]),
                category=rec["category"],
                score=rec["score"],
            )
            by_image.setdefault(rec["image_id"], []).append(det)
    return by_image


def load_ground_truth(path: str | Path) -> list[GroundTruthBox]:
    out: list[GroundTruthBox] = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            out.append(
                GroundTruthBox(
                    box=Box(rec["x"], rec["y"], rec["w"], rec["h"]),
                    category=rec["category"],
                    image_id=rec["image_id"],
                )
            )
    return out


def iou(a: Box, b: Box) -> float:
    """Intersection area over union area; 0 for disjoint boxes."""
    ix = min(a.x + a.w, b.x + b.w) - max(a.x, b.x)
    iy = min(a.y + a.h, b.y + b.h) - max(a.y, b.y)
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    return inter / (a.area + b.area - inter)


def guided_filter(
    detections: list[Detection], guided: str | None = None
) -> list[Detection]:
    """Reject detections whose class does not match the guided category.

    With no guide this is the identity. An empty result is a valid outcome;
    callers fall back to the full-image ROI.
    """
    if guided is None:
        return list(detections)
    return [d for d in detections if d.category == guided]


def select_roi(detections: list[Detection], image_bounds: Box) -> Box:
    """Highest-score detection's box; full image when nothing survived.

    Score ties resolve to the earliest detection in input order.
    """
    if not detections:
        return image_bounds
    best = detections[0]
    for det in detections[1:]:
        if det.score > best.score:
            best = det
    return best.box


def _average_precision(
    ranked: list[tuple[str, Box]],
    gt_by_image: dict[str, list[GroundTruthBox]],
    num_gt: int,
    threshold: float,
) -> float:
    """AP for one category: greedy best-IoU matching in rank order, then the
    exact area under the monotonized precision-recall curve."""
    matched: dict[str, set[int]] = {img: set() for img in gt_by_image}
    tp = np.zeros(len(ranked))
    for rank, (image_id, box) in enumerate(ranked):
        candidates = gt_by_image.get(image_id, [])
        best_iou, best_idx = 0.0, -1
        for idx, gt in enumerate(candidates):
            if idx in matched.get(image_id, set()):
                continue
            overlap = iou(box, gt.box)
            if overlap > best_iou:
                best_iou, best_idx = overlap, idx
        if best_idx >= 0 and best_iou >= threshold:
            matched[image_id].add(best_idx)
            tp[rank] = 1.0

    if num_gt == 0:
        return 0.0
    cum_tp = np.cumsum(tp)
    precision = cum_tp / (np.arange(len(ranked)) + 1)
    recall = cum_tp / num_gt

    # All-point interpolation: integrate max-precision-to-the-right over recall.
    ap = 0.0
    prev_recall = 0.0
    for i in range(len(ranked)):
        if tp[i]:
            p = float(np.max(precision[i:]))
            ap += (recall[i] - prev_recall) * p
            prev_recall = recall[i]
    return ap


def evaluate_map(
    predictions: dict[str, list[Detection]],
    ground_truth: list[GroundTruthBox],
    iou_thresholds: list[float],
) -> dict[float, float]:
    """mAP per IoU threshold over the categories present in ground truth.

    Detections are ranked per category by descending score (ties broken by
    image id, then input order, for determinism) and greedily matched to the
    highest-IoU unmatched ground truth of the same category in the same
    image; a match is a true positive iff its IoU clears the threshold.
    """
    if not ground_truth:
        raise ValueError("ground truth is empty")

    categories = sorted({gt.category for gt in ground_truth})
    gt_by_cat_image: dict[str, dict[str, list[GroundTruthBox]]] = {
        c: {} for c in categories
    }
    for gt in ground_truth:
        gt_by_cat_image[gt.category].setdefault(gt.image_id, []).append(gt)

    ranked_by_cat: dict[str, list[tuple[str, Box]]] = {c: [] for c in categories}
    for image_id in sorted(predictions):
        for order, det in enumerate(predictions[image_id]):
            if det.category in ranked_by_cat:
                ranked_by_cat[det.category].append(
                    (-det.score, image_id, order, det.box)
                )
    result: dict[float, float] = {}
    for threshold in iou_thresholds:
        aps = []
        for cat in categories:
            ranked = [
                (image_id, box)
                for _, image_id, _, box in sorted(
                    ranked_by_cat[cat], key=lambda t: (t[0], t[1], t[2])
                )
            ]
            num_gt = sum(len(v) for v in gt_by_cat_image[cat].values())
            aps.append(
                _average_precision(ranked, gt_by_cat_image[cat], num_gt, threshold)
            )
        result[threshold] = float(np.mean(aps))
    return result
