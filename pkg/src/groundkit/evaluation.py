"""Per-image grounding metrics: mAP, mAP@0.5, R@1, R@10.

Grounding has no consistent global class labels, so AP is computed per
image (classes = the image's unique normalized ground-truth phrases) and
the per-image scores are averaged unweighted. AP uses 101-point
interpolation; the IoU sweep is 0.50:0.05:0.95.

Matching protocol: each class is matched independently by greedy descent
over confidence, taking the unmatched ground-truth box with the highest
IoU among those clearing the IoU gate and the phrase gate. Predictions
matched to a class count as its true positives; unmatched predictions
count as false positives for the class their own (exact-normalized)
phrase names. Keeping false-positive attribution independent of the match
policy is what makes fuzzy matching a strict relaxation of exact matching.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Literal, Sequence

import numpy as np

from .core import AnnotationRecord, GroundkitError, Region, ValidationError, iou
from .matchers import MatchPolicy, normalization_name, normalize_phrase, phrases_match

__all__ = [
    "EvalConfig",
    "EvalReport",
    "ImageScores",
    "MatchResult",
    "PredictionOutcome",
    "match_predictions",
    "average_precision",
    "evaluate",
]

DEFAULT_IOU_SWEEP = tuple(round(0.50 + 0.05 * i, 2) for i in range(10))
RECALL_POINTS = 101


@dataclass(frozen=True)
class EvalConfig:
    match_policy: MatchPolicy = MatchPolicy()
    iou_thresholds_map: tuple[float, ...] = DEFAULT_IOU_SWEEP
    iou_threshold_single: float = 0.5
    recall_ks: tuple[int, ...] = (1, 10)
    recall_variant: Literal["pooled", "per_class"] = "pooled"

    def __post_init__(self):
        thresholds = self.iou_thresholds_map
        if not thresholds:
            raise ValidationError("iou_thresholds_map is empty")
        for lo, hi in zip(thresholds, thresholds[1:]):
            if lo >= hi:
                raise ValidationError("iou thresholds must be strictly increasing")
        for t in (*thresholds, self.iou_threshold_single):
            if not 0.0 < t <= 1.0:
                raise ValidationError(f"iou threshold {t} outside (0, 1]")
        if self.recall_variant not in ("pooled", "per_class"):
            raise ValidationError(f"unknown recall variant {self.recall_variant!r}")


@dataclass(frozen=True)
class PredictionOutcome:
    """One prediction's fate within a matching pass, in rank order."""

    prediction: Region
    is_tp: bool
    gt_index: int | None


@dataclass(frozen=True)
class MatchResult:
    outcomes: tuple[PredictionOutcome, ...]
    matched_gt: frozenset[int]


def _pred_rank_key(region: Region):
    return (-region.confidence, region.box.as_tuple(), region.phrase)


def _require_confidences(predictions: Sequence[Region]) -> None:
    for pred in predictions:
        if pred.confidence is None:
            raise ValidationError(
                f"prediction {pred.phrase!r} has no confidence; "
                "ground-truth-only records cannot be scored as predictions"
            )


def _greedy_match(
    gt: Sequence[Region],
    predictions: Sequence[Region],
    pred_indices: Sequence[int],
    iou_threshold: float,
    policy: MatchPolicy,
    taken: set[int] | None = None,
) -> dict[int, int]:
    """Greedy matching over a subset of predictions; maps pred index -> gt index."""
    ranked = sorted(pred_indices, key=lambda i: _pred_rank_key(predictions[i]))
    taken = set() if taken is None else taken
    assignment: dict[int, int] = {}
    for i in ranked:
        pred = predictions[i]
        best_idx = None
        best_iou = 0.0
        for idx, gt_region in enumerate(gt):
            if idx in taken:
                continue
            overlap = iou(pred.box, gt_region.box)
            if overlap < iou_threshold or overlap <= best_iou:
                continue
            if phrases_match(pred.phrase, gt_region.phrase, policy):
                best_idx = idx
                best_iou = overlap
        if best_idx is not None:
            taken.add(best_idx)
            assignment[i] = best_idx
    return assignment


def _policy_match(
    gt: Sequence[Region],
    predictions: Sequence[Region],
    pred_indices: Sequence[int],
    iou_threshold: float,
    policy: MatchPolicy,
) -> dict[int, int]:
    """Matching used by evaluate: under fuzzy, exact matches take precedence.

    Exact-feasible pairs are assigned first (identically to exact mode),
    then fuzzy-only candidates may claim whatever ground truth is left.
    This makes the fuzzy match set a strict superset of the exact one, so
    relaxing the policy can only add true positives.
    """
    if policy.mode == "exact":
        return _greedy_match(gt, predictions, pred_indices, iou_threshold, policy)
    exact = MatchPolicy(
        mode="exact",
        fuzzy_threshold=policy.fuzzy_threshold,
        strip_articles=policy.strip_articles,
        strip_quantities=policy.strip_quantities,
    )
    taken: set[int] = set()
    assignment = _greedy_match(gt, predictions, pred_indices, iou_threshold, exact, taken)
    leftover = [i for i in pred_indices if i not in assignment]
    assignment.update(
        _greedy_match(gt, predictions, leftover, iou_threshold, policy, taken)
    )
    return assignment


def match_predictions(
    gt: Sequence[Region],
    predictions: Sequence[Region],
    iou_threshold: float,
    policy: MatchPolicy,
) -> MatchResult:
    """Greedy one-to-one matching of predictions against ground truth.

    Predictions are visited by descending confidence (ties broken by box
    order, then phrase); each takes the unmatched ground-truth region with
    the highest IoU among those with IoU >= the threshold and a phrase
    match under the policy. Ties on IoU go to the earliest ground-truth
    region.
    """
    _require_confidences(predictions)
    assignment = _greedy_match(gt, predictions, range(len(predictions)), iou_threshold, policy)
    ranked = sorted(range(len(predictions)), key=lambda i: _pred_rank_key(predictions[i]))
    outcomes = tuple(
        PredictionOutcome(predictions[i], i in assignment, assignment.get(i)) for i in ranked
    )
    return MatchResult(outcomes=outcomes, matched_gt=frozenset(assignment.values()))


def average_precision(tp_flags: Sequence[bool], gt_count: int) -> float:
    """101-point interpolated AP for one ranked true/false-positive series."""
    if gt_count <= 0:
        raise ValidationError("average_precision needs at least one ground-truth region")
    if not tp_flags:
        return 0.0
    tp = np.cumsum(np.asarray(tp_flags, dtype=np.float64))
    ranks = np.arange(1, len(tp) + 1, dtype=np.float64)
    precision = tp / ranks
    recall = tp / gt_count
    # Precision envelope: best precision achievable at recall >= r.
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    levels = np.arange(RECALL_POINTS) / (RECALL_POINTS - 1)
    indices = np.searchsorted(recall, levels, side="left")
    sampled = np.where(indices < len(envelope), envelope[np.minimum(indices, len(envelope) - 1)], 0.0)
    return float(sampled.mean())


@dataclass(frozen=True)
class ImageScores:
    ap_by_threshold: dict[float, float]
    ap_single: float
    recall_by_k: dict[int, float]
    gt_regions: int
    predictions: int

    @property
    def mean_ap(self) -> float:
        return sum(self.ap_by_threshold.values()) / len(self.ap_by_threshold)


@dataclass(frozen=True)
class EvalReport:
    per_image: dict[str, ImageScores]
    mAP: float
    mAP_at_50: float
    recall_at_k: dict[int, float]
    images: int
    zero_gt_images: int
    gt_regions: int
    predictions: int
    config: EvalConfig

    def to_json_dict(self) -> dict:
        policy = self.config.match_policy
        return {
            "protocol": {
                "ap_interpolation": f"{RECALL_POINTS}-point",
                "iou_thresholds_map": list(self.config.iou_thresholds_map),
                "iou_threshold_single": self.config.iou_threshold_single,
                "recall_variant": self.config.recall_variant,
                "averaging": "per-image, unweighted",
                "match_mode": policy.mode,
                "fuzzy_threshold": policy.fuzzy_threshold,
                "normalization": normalization_name(policy),
            },
            "aggregate": {
                "mAP": self.mAP,
                "mAP@0.5": self.mAP_at_50,
                **{f"R@{k}": v for k, v in sorted(self.recall_at_k.items())},
            },
            "counts": {
                "images": self.images,
                "zero_gt_images": self.zero_gt_images,
                "gt_regions": self.gt_regions,
                "predictions": self.predictions,
            },
            "per_image": {
                image_id: {
                    "ap_by_threshold": {f"{t:.2f}": ap for t, ap in scores.ap_by_threshold.items()},
                    "ap_single": scores.ap_single,
                    "recall_by_k": {str(k): r for k, r in scores.recall_by_k.items()},
                    "gt_regions": scores.gt_regions,
                    "predictions": scores.predictions,
                }
                for image_id, scores in sorted(self.per_image.items())
            },
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), indent=2, sort_keys=False)

    def format_table(self) -> str:
        policy = self.config.match_policy
        ks = sorted(self.recall_at_k)
        header = ["mAP", "mAP@0.5", *[f"R@{k}" for k in ks]]
        values = [self.mAP, self.mAP_at_50, *[self.recall_at_k[k] for k in ks]]
        width = max(len(h) for h in header) + 2
        lines = [
            f"match: {policy.mode} (fuzzy_threshold={policy.fuzzy_threshold}), "
            f"normalization: {normalization_name(policy)}",
            f"ap: {RECALL_POINTS}-point interpolation, iou map {self.config.iou_thresholds_map[0]:.2f}"
            f":{self.config.iou_thresholds_map[-1]:.2f}, iou single {self.config.iou_threshold_single:.2f}, "
            f"recall variant: {self.config.recall_variant}",
            f"images: {self.images} ({self.zero_gt_images} without ground truth), "
            f"gt regions: {self.gt_regions}, predictions: {self.predictions}",
            "",
            "".join(h.rjust(width) for h in header),
            "".join(f"{v:.4f}".rjust(width) for v in values),
        ]
        return "\n".join(lines)


def _class_series(
    gt: Sequence[Region],
    predictions: Sequence[Region],
    class_phrase: str,
    pred_exact_classes: Sequence[str],
    iou_threshold: float,
    policy: MatchPolicy,
) -> tuple[list[bool], int]:
    """Ranked TP/FP series for one phrase class of one image."""
    class_gt = [r for r in gt if normalize_phrase(r.phrase, policy) == class_phrase]
    candidates = [
        i for i, p in enumerate(predictions) if phrases_match(p.phrase, class_phrase, policy)
    ]
    assignment = _policy_match(class_gt, predictions, candidates, iou_threshold, policy)

    series = []
    for i in sorted(range(len(predictions)), key=lambda i: _pred_rank_key(predictions[i])):
        if i in assignment:
            series.append(True)
        elif pred_exact_classes[i] == class_phrase:
            series.append(False)
    return series, len(class_gt)


def _image_recall(
    gt: Sequence[Region],
    predictions: Sequence[Region],
    k: int,
    cfg: EvalConfig,
    classes: Sequence[str],
) -> float:
    policy = cfg.match_policy
    if cfg.recall_variant == "pooled":
        ranked = sorted(range(len(predictions)), key=lambda i: _pred_rank_key(predictions[i]))[:k]
        assignment = _policy_match(gt, predictions, ranked, cfg.iou_threshold_single, policy)
        return len(assignment) / len(gt)
    matched_total = 0
    for class_phrase in classes:
        class_gt = [r for r in gt if normalize_phrase(r.phrase, policy) == class_phrase]
        candidates = sorted(
            (i for i, p in enumerate(predictions) if phrases_match(p.phrase, class_phrase, policy)),
            key=lambda i: _pred_rank_key(predictions[i]),
        )[:k]
        assignment = _policy_match(class_gt, predictions, candidates, cfg.iou_threshold_single, policy)
        matched_total += len(assignment)
    return matched_total / len(gt)


def _score_image(
    gt: Sequence[Region], predictions: Sequence[Region], cfg: EvalConfig
) -> ImageScores:
    policy = cfg.match_policy
    classes = sorted({normalize_phrase(r.phrase, policy) for r in gt})
    pred_exact_classes = [normalize_phrase(p.phrase, policy) for p in predictions]

    def image_ap(iou_threshold: float) -> float:
        class_aps = []
        for class_phrase in classes:
            series, gt_count = _class_series(
                gt, predictions, class_phrase, pred_exact_classes, iou_threshold, policy
            )
            class_aps.append(average_precision(series, gt_count))
        return sum(class_aps) / len(class_aps)

    ap_by_threshold = {t: image_ap(t) for t in cfg.iou_thresholds_map}
    single = cfg.iou_threshold_single
    ap_single = ap_by_threshold.get(single)
    if ap_single is None:
        ap_single = image_ap(single)

    recall_by_k = {
        k: _image_recall(gt, predictions, k, cfg, classes) for k in cfg.recall_ks
    }
    return ImageScores(
        ap_by_threshold=ap_by_threshold,
        ap_single=ap_single,
        recall_by_k=recall_by_k,
        gt_regions=len(gt),
        predictions=len(predictions),
    )


def evaluate(
    gt_records: Sequence[AnnotationRecord],
    pred_records: Sequence[AnnotationRecord],
    cfg: EvalConfig = EvalConfig(),
) -> EvalReport:
    """Score prediction records against ground-truth records.

    Every prediction record must name an image present in the ground
    truth; images without ground-truth regions are excluded from the
    averages and reported in the counts instead.
    """
    gt_by_image = {rec.image_id: rec for rec in gt_records}
    if len(gt_by_image) != len(gt_records):
        raise ValidationError("duplicate image_id in ground-truth records")
    orphans = sorted({rec.image_id for rec in pred_records} - set(gt_by_image))
    if orphans:
        raise GroundkitError(
            f"predictions reference images absent from the ground truth: {', '.join(orphans)}"
        )
    preds_by_image: dict[str, list[Region]] = {rec.image_id: [] for rec in gt_records}
    for rec in pred_records:
        preds_by_image[rec.image_id].extend(rec.regions)

    per_image: dict[str, ImageScores] = {}
    zero_gt = 0
    total_gt = 0
    total_pred = sum(len(v) for v in preds_by_image.values())
    for image_id, record in sorted(gt_by_image.items()):
        gt = list(record.regions)
        total_gt += len(gt)
        if not gt:
            zero_gt += 1
            continue
        per_image[image_id] = _score_image(gt, preds_by_image[image_id], cfg)

    scored = list(per_image.values())
    if scored:
        mAP = sum(s.mean_ap for s in scored) / len(scored)
        mAP_at_50 = sum(s.ap_single for s in scored) / len(scored)
        recall_at_k = {
            k: sum(s.recall_by_k[k] for s in scored) / len(scored) for k in cfg.recall_ks
        }
    else:
        mAP = mAP_at_50 = 0.0
        recall_at_k = {k: 0.0 for k in cfg.recall_ks}

    return EvalReport(
        per_image=per_image,
        mAP=mAP,
        mAP_at_50=mAP_at_50,
        recall_at_k=recall_at_k,
        images=len(gt_by_image),
        zero_gt_images=zero_gt,
        gt_regions=total_gt,
        predictions=total_pred,
        config=cfg,
    )
