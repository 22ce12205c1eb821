"""Verification metrics, ROC analysis, and inspection tooling.

A pair is accepted when its score (the model's same-person
probability) is greater than or equal to the threshold. TAR is the
accepted fraction of same pairs, FAR the accepted fraction of
different pairs. The ROC sweeps every distinct score plus sentinels
past both ends; its area comes from trapezoidal integration carried
out on integer counts so that perfectly separated scores give exactly
1.0.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from coffar import images, model as model_mod
from coffar.errors import MetricError, ShapeError, ValueCheckError
from coffar.model import Model
from coffar.pairs import PairLabel, PairSample

DEFAULT_THRESHOLD = 0.5

REPORT_FAR_TARGETS = (0.3, 0.1, 0.01, 0.001)


@dataclass(frozen=True)
class ScoreSet:
    """Verification scores with their ground-truth labels.

    scores holds values in [0, 1]; labels_same is a parallel boolean
    array, True where the pair really is the same person.
    """

    scores: np.ndarray
    labels_same: np.ndarray

    def __post_init__(self):
        scores = np.asarray(self.scores, dtype=np.float64)
        labels = np.asarray(self.labels_same, dtype=bool)
        if scores.ndim != 1 or scores.shape != labels.shape:
            raise ShapeError(
                f"scores {scores.shape} and labels {labels.shape} must be "
                "matching 1-d arrays"
            )
        if scores.size == 0:
            raise ValueCheckError("score set must not be empty")
        if np.any(scores < 0.0) or np.any(scores > 1.0) or not np.all(
            np.isfinite(scores)
        ):
            raise ValueCheckError("scores must lie in [0, 1]")
        object.__setattr__(self, "scores", scores)
        object.__setattr__(self, "labels_same", labels)

    @property
    def n_same(self) -> int:
        return int(self.labels_same.sum())

    @property
    def n_different(self) -> int:
        return int((~self.labels_same).sum())


def score_pairs(model: Model, pairs: list[PairSample]) -> ScoreSet:
    """Run the model over labelled pairs and collect a ScoreSet."""
    if not pairs:
        raise ValueCheckError("pair list must not be empty")
    stack = np.stack([p.image for p in pairs])
    probs = model_mod.forward_batch(model, stack)
    labels = np.array([p.label is PairLabel.SAME for p in pairs])
    return ScoreSet(scores=probs[:, 1], labels_same=labels)


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


def confusion_at(scores: ScoreSet, threshold: float) -> ConfusionCounts:
    """Counts at one threshold; accept means score >= threshold."""
    accepted = scores.scores >= threshold
    same = scores.labels_same
    return ConfusionCounts(
        tp=int(np.sum(accepted & same)),
        fp=int(np.sum(accepted & ~same)),
        tn=int(np.sum(~accepted & ~same)),
        fn=int(np.sum(~accepted & same)),
    )


def tar(counts: ConfusionCounts) -> float:
    """True accept rate tp / (tp + fn)."""
    denom = counts.tp + counts.fn
    if denom == 0:
        raise MetricError("TAR undefined: no same pairs")
    return counts.tp / denom


def far(counts: ConfusionCounts) -> float:
    """False accept rate fp / (fp + tn)."""
    denom = counts.fp + counts.tn
    if denom == 0:
        raise MetricError("FAR undefined: no different pairs")
    return counts.fp / denom


def accuracy(scores: ScoreSet, threshold: float = DEFAULT_THRESHOLD) -> float:
    """(tp + tn) / total at the given threshold."""
    c = confusion_at(scores, threshold)
    return (c.tp + c.tn) / c.total


@dataclass(frozen=True)
class RocPoint:
    threshold: float
    tar: float
    far: float


def roc(scores: ScoreSet) -> tuple[list[RocPoint], float]:
    """Full ROC sweep and its area.

    Thresholds run over every distinct score plus one sentinel past
    each end, from high to low, so points come out sorted by FAR. The
    area integrates TAR over FAR trapezoidally; sums are taken on
    integer counts and divided once, which keeps label-swap symmetry
    and makes perfectly separated scores integrate to exactly 1.0.

    Raises MetricError when either class is absent.
    """
    n_same = scores.n_same
    n_diff = scores.n_different
    if n_same == 0 or n_diff == 0:
        raise MetricError("ROC needs both same and different pairs")
    order = np.argsort(scores.scores, kind="stable")[::-1]
    sorted_scores = scores.scores[order]
    sorted_same = scores.labels_same[order]
    # one entry per distinct score, descending, with cumulative counts
    distinct_mask = np.empty(sorted_scores.size, dtype=bool)
    distinct_mask[:-1] = sorted_scores[:-1] != sorted_scores[1:]
    distinct_mask[-1] = True
    cum_tp = np.cumsum(sorted_same)
    cum_fp = np.cumsum(~sorted_same)
    thresholds = sorted_scores[distinct_mask]
    tp_counts = cum_tp[distinct_mask]
    fp_counts = cum_fp[distinct_mask]
    # sentinels: above the max nothing is accepted, below the min all is
    thr = np.concatenate(([sorted_scores[0] + 1.0], thresholds,
                          [sorted_scores[-1] - 1.0]))
    tp_all = np.concatenate(([0], tp_counts, [n_same])).astype(np.int64)
    fp_all = np.concatenate(([0], fp_counts, [n_diff])).astype(np.int64)
    points = [
        RocPoint(threshold=float(t), tar=int(tp) / n_same, far=int(fp) / n_diff)
        for t, tp, fp in zip(thr, tp_all, fp_all)
    ]
    area_twice = int(np.sum((fp_all[1:] - fp_all[:-1]) * (tp_all[1:] + tp_all[:-1])))
    auc = area_twice / (2 * n_same * n_diff)
    return points, auc


def tar_at_far(points: list[RocPoint], far_target: float) -> float:
    """Step-function TAR at a FAR budget, without interpolation.

    Walking thresholds downward, returns the TAR of the last operating
    point whose FAR still lies strictly below the target; the
    reject-all sentinel guarantees one exists for any positive target.
    A target of 0 returns 0.0.
    """
    if far_target <= 0.0:
        return 0.0
    best = 0.0
    for p in sorted(points, key=lambda p: -p.threshold):
        if p.far < far_target:
            best = p.tar
        else:
            break
    return best


def heatmap(model: Model, pair: np.ndarray) -> np.ndarray:
    """Response map in [0, 1] showing where the final convolution layer
    fires, upsampled onto the 20x40 pair. A flat response (e.g. from a
    zero-weight model) maps to all zeros."""
    trace = model_mod.forward_trace(model, pair)
    mean_map = trace.conv_activations[-1].mean(axis=0)
    up = images.bilinear_resize(mean_map, model_mod.PAIR_HEIGHT,
                                model_mod.PAIR_WIDTH)
    lo = up.min()
    hi = up.max()
    if hi <= lo:
        return np.zeros_like(up)
    return (up - lo) / (hi - lo)


def write_heatmap_pgm(model: Model, pair: np.ndarray, path) -> None:
    images.write_pgm(path, heatmap(model, pair))


def dump_features(model: Model, pairs: list[PairSample], path) -> None:
    """Write one TSV row per pair: label then the penultimate-layer
    feature vector. Header: label f0 f1 ..."""
    if not pairs:
        raise ValueCheckError("pair list must not be empty")
    rows = []
    for p in pairs:
        trace = model_mod.forward_trace(model, p.image)
        rows.append((p.label.value, trace.features))
    width = rows[0][1].size
    with open(path, "w") as fh:
        fh.write("label\t" + "\t".join(f"f{i}" for i in range(width)) + "\n")
        for label, feats in rows:
            fh.write(label + "\t" + "\t".join(repr(float(v)) for v in feats) + "\n")


def metrics_report(scores: ScoreSet) -> dict:
    """Aggregate report: accuracy at 0.5, AUC, TAR at the standard FAR
    budgets, and the full ROC sweep."""
    points, auc = roc(scores)
    return {
        "n_pairs": int(scores.scores.size),
        "n_same": scores.n_same,
        "n_different": scores.n_different,
        "accuracy_at_0.5": accuracy(scores, DEFAULT_THRESHOLD),
        "auc": auc,
        "tar_at_far": {
            str(t): tar_at_far(points, t) for t in REPORT_FAR_TARGETS
        },
        "roc": [
            {"threshold": p.threshold, "tar": p.tar, "far": p.far} for p in points
        ],
    }


def write_metrics_report(scores: ScoreSet, path) -> dict:
    report = metrics_report(scores)
    with open(path, "w") as fh:
        json.dump(report, fh, indent=1)
        fh.write("\n")
    return report
