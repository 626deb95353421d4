"""Detection evaluation: greedy IoU matching and difficulty-binned AP.

Protocol: ground truth is classified into Easy/Moderate/Hard; at evaluation
level L a ground-truth box is *required* when its difficulty is <= L and it
is not DontCare, otherwise it is *ignore*. Detections are matched greedily in
descending score order against the unmatched ground truth with the highest
IoU at or above the threshold, preferring required over ignore boxes. A match
to a required box is a true positive; a match to an ignore box counts neither
way; everything else is a false positive.

AP defaults to the classic 11-point interpolation (mean over recalls
0, 0.1, ..., 1.0 of the maximum precision at or beyond each recall); the
all-point variant integrates the precision envelope over recall instead. A
level with zero required ground truth reports no AP at all rather than 0.0,
distinguishing "nothing to find" from "found nothing".

Every ordering is total (score ties break on box left coordinate, then top),
so results are identical across platforms and worker counts.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

from .errors import ValidationError
from .kitti_labels import (
    CAR_TYPE,
    DEFAULT_THRESHOLDS,
    DONTCARE_TYPE,
    Difficulty,
    DifficultyThresholds,
    classify_difficulty,
    read_label_dir,
)

DEFAULT_IOU_THRESHOLD = 0.7

Box = tuple[float, float, float, float]


class Outcome(enum.Enum):
    TP = "TP"
    FP = "FP"
    IGNORED = "Ignored"


@dataclass(frozen=True)
class Detection:
    frame_id: str
    box: Box
    score: float


@dataclass(frozen=True)
class GroundTruth:
    frame_id: str
    box: Box
    difficulty: Difficulty
    dontcare: bool = False

    def required(self, level: Difficulty) -> bool:
        return not self.dontcare and self.difficulty <= level


@dataclass(frozen=True)
class ScoredOutcome:
    """One detection's fate, with the keys AP sorting needs."""

    score: float
    box: Box
    outcome: Outcome


@dataclass
class LevelResult:
    ap: Optional[float]
    tp: int
    fp: int
    fn: int
    gt_count: int
    pr_points: list[tuple[float, float]]  # (recall, precision) per counted detection


@dataclass
class EvalReport:
    iou_threshold: float
    method: str
    levels: dict[Difficulty, LevelResult]


def _box_area(box: Box) -> float:
    return (box[2] - box[0]) * (box[3] - box[1])


def iou(a: Box, b: Box) -> float:
    """Intersection over union with continuous areas; 0 when disjoint."""
    if _box_area(a) <= 0.0 or _box_area(b) <= 0.0:
        raise ValueError(f"zero-area box in IoU: {a}, {b}")
    iw = min(a[2], b[2]) - max(a[0], b[0])
    ih = min(a[3], b[3]) - max(a[1], b[1])
    if iw <= 0.0 or ih <= 0.0:
        return 0.0
    inter = iw * ih
    return inter / (_box_area(a) + _box_area(b) - inter)


def _det_sort_key(det: Detection) -> tuple:
    return (-det.score, det.box[0], det.box[1])


def match_frame(
    dets: Sequence[Detection],
    gts: Sequence[GroundTruth],
    iou_thr: float,
    level: Difficulty,
) -> tuple[list[tuple[Detection, Outcome]], list[bool]]:
    """Greedy single-match assignment for one frame.

    Returns per-detection outcomes (in descending-score order) and per-GT
    matched flags aligned with ``gts``.
    """
    matched = [False] * len(gts)
    outcomes = []
    for det in sorted(dets, key=_det_sort_key):
        best_required = -1
        best_required_iou = 0.0
        best_ignore = -1
        best_ignore_iou = 0.0
        for j, gt in enumerate(gts):
            if matched[j]:
                continue
            overlap = iou(det.box, gt.box)
            if overlap < iou_thr:
                continue
            if gt.required(level):
                if overlap > best_required_iou:
                    best_required, best_required_iou = j, overlap
            elif overlap > best_ignore_iou:
                best_ignore, best_ignore_iou = j, overlap
        if best_required >= 0:
            matched[best_required] = True
            outcomes.append((det, Outcome.TP))
        elif best_ignore >= 0:
            matched[best_ignore] = True
            outcomes.append((det, Outcome.IGNORED))
        else:
            outcomes.append((det, Outcome.FP))
    return outcomes, matched


def precision_recall_points(
    outcomes: Sequence[ScoredOutcome], gt_count: int
) -> list[tuple[float, float]]:
    """Cumulative (recall, precision) after each counted detection, in global
    descending-score order; ignored detections do not contribute points."""
    counted = sorted(
        (o for o in outcomes if o.outcome is not Outcome.IGNORED),
        key=lambda o: (-o.score, o.box[0], o.box[1]),
    )
    points = []
    tp = fp = 0
    for o in counted:
        if o.outcome is Outcome.TP:
            tp += 1
        else:
            fp += 1
        recall = tp / gt_count if gt_count > 0 else 0.0
        points.append((recall, tp / (tp + fp)))
    return points


def average_precision(
    outcomes: Sequence[ScoredOutcome], gt_count: int, method: str = "11pt"
) -> Optional[float]:
    """AP over pooled outcomes; None when there is no required ground truth."""
    if gt_count == 0:
        return None
    points = precision_recall_points(outcomes, gt_count)
    if method == "11pt":
        total = 0.0
        for i in range(11):
            r = i / 10.0
            total += max((p for rec, p in points if rec >= r), default=0.0)
        return total / 11.0
    if method == "all":
        # integrate the monotone precision envelope over recall
        total = 0.0
        prev_recall = 0.0
        for i, (recall, _) in enumerate(points):
            if recall == prev_recall:
                continue
            envelope = max(p for _, p in points[i:])
            total += (recall - prev_recall) * envelope
            prev_recall = recall
        return total
    raise ValueError(f"unknown AP method {method!r}; use '11pt' or 'all'")


def _load_ground_truth(
    labels_by_frame, thresholds: DifficultyThresholds
) -> dict[str, list[GroundTruth]]:
    gts: dict[str, list[GroundTruth]] = {}
    for frame_id, labels in labels_by_frame.items():
        rows = []
        for label in labels:
            if label.type == CAR_TYPE:
                rows.append(
                    GroundTruth(frame_id, label.bbox, classify_difficulty(label, thresholds))
                )
            elif label.type == DONTCARE_TYPE:
                rows.append(GroundTruth(frame_id, label.bbox, Difficulty.UNKNOWN, dontcare=True))
        gts[frame_id] = rows
    return gts


def _load_detections(labels_by_frame) -> dict[str, list[Detection]]:
    dets: dict[str, list[Detection]] = {}
    for frame_id, labels in labels_by_frame.items():
        dets[frame_id] = [
            Detection(frame_id, label.bbox, label.score if label.score is not None else 1.0)
            for label in labels
            if label.type == CAR_TYPE
        ]
    return dets


def evaluate(
    det_dir: str | Path,
    gt_dir: str | Path,
    iou_thr: float = DEFAULT_IOU_THRESHOLD,
    method: str = "11pt",
    thresholds: DifficultyThresholds = DEFAULT_THRESHOLDS,
) -> EvalReport:
    """Evaluate a detection label directory against a ground-truth directory."""
    det_labels = read_label_dir(det_dir)
    gt_labels = read_label_dir(gt_dir)
    if set(det_labels) != set(gt_labels):
        missing_det = sorted(set(gt_labels) - set(det_labels))
        missing_gt = sorted(set(det_labels) - set(gt_labels))
        raise ValidationError(
            f"frame sets differ: missing in det dir {missing_det}, missing in gt dir {missing_gt}"
        )
    detections = _load_detections(det_labels)
    ground_truth = _load_ground_truth(gt_labels, thresholds)

    levels = {}
    for level in (Difficulty.EASY, Difficulty.MODERATE, Difficulty.HARD):
        pooled: list[ScoredOutcome] = []
        gt_count = 0
        for frame_id in sorted(ground_truth):
            gts = ground_truth[frame_id]
            gt_count += sum(1 for g in gts if g.required(level))
            outcomes, _ = match_frame(detections[frame_id], gts, iou_thr, level)
            pooled.extend(ScoredOutcome(d.score, d.box, o) for d, o in outcomes)
        tp = sum(1 for o in pooled if o.outcome is Outcome.TP)
        fp = sum(1 for o in pooled if o.outcome is Outcome.FP)
        levels[level] = LevelResult(
            ap=average_precision(pooled, gt_count, method),
            tp=tp,
            fp=fp,
            fn=gt_count - tp,
            gt_count=gt_count,
            pr_points=precision_recall_points(pooled, gt_count),
        )
    return EvalReport(iou_threshold=iou_thr, method=method, levels=levels)


def format_ap(ap: Optional[float]) -> str:
    return "n/a" if ap is None else f"{ap:.6f}"


def report_text(report: EvalReport) -> str:
    lines = [
        f"IoU threshold: {report.iou_threshold:g}   AP method: {report.method}",
        f"{'Level':<10}{'AP':>10}{'TP':>8}{'FP':>8}{'FN':>8}{'GT':>8}",
    ]
    for level, result in report.levels.items():
        lines.append(
            f"{level.label:<10}{format_ap(result.ap):>10}"
            f"{result.tp:>8}{result.fp:>8}{result.fn:>8}{result.gt_count:>8}"
        )
    return "\n".join(lines) + "\n"


def report_csv(report: EvalReport) -> str:
    lines = ["level,ap,tp,fp,fn,gt_count"]
    for level, result in report.levels.items():
        lines.append(
            f"{level.label},{format_ap(result.ap)},{result.tp},{result.fp},{result.fn},{result.gt_count}"
        )
    return "\n".join(lines) + "\n"
