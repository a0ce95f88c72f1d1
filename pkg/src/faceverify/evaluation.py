"""Verification and identification metrics.

Conventions, fixed so every figure is reproducible and oracle-checkable:

  - ROC points come from a full sweep over the distinct scores with an
    accept-if-score>=threshold rule, so TAR and FAR are exact empirical
    step functions.  The curve always contains the all-reject point
    (FAR 0) and the all-accept point (1, 1).
  - tar_at_far reads the step function conservatively: the TAR of the
    largest operating point whose FAR does not exceed the target.  No
    interpolation.
  - CMC ties break pessimistically: a non-matching gallery template
    that ties the best matching score is counted as ranked ahead.
  - Split aggregates report the mean and the sample (n-1) standard
    deviation.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

__all__ = [
    "RocCurve",
    "CmcResult",
    "roc",
    "tar_at_far",
    "cmc",
    "aggregate_splits",
    "lfw_protocol",
    "emit_curves",
    "read_curve_file",
    "read_pair_file",
    "write_pair_file",
]


@dataclass(frozen=True)
class RocCurve:
    thresholds: np.ndarray  # descending; +inf first (all-reject point)
    far: np.ndarray
    tar: np.ndarray
    num_positive: int
    num_negative: int


@dataclass(frozen=True)
class CmcResult:
    """accuracies[k-1] = fraction of probes whose match is within rank k."""

    accuracies: np.ndarray

    def rank(self, k: int) -> float:
        return float(self.accuracies[k - 1])


def roc(scores, labels) -> RocCurve:
    """Empirical ROC from scores and +-1 labels."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValueError("scores and labels must be equal-length 1-D arrays")
    pos = scores[labels > 0]
    neg = scores[labels <= 0]
    if len(pos) == 0 or len(neg) == 0:
        raise ValueError("ROC needs at least one positive and one negative pair")

    thresholds = np.unique(scores)[::-1]
    # accepted(t) = #scores >= t, computed per class via searchsorted;
    # subtract counts before dividing so values match direct enumeration
    pos_sorted = np.sort(pos)
    neg_sorted = np.sort(neg)
    tar = (len(pos) - np.searchsorted(pos_sorted, thresholds, side="left")) / len(pos)
    far = (len(neg) - np.searchsorted(neg_sorted, thresholds, side="left")) / len(neg)
    return RocCurve(
        thresholds=np.concatenate([[np.inf], thresholds]),
        far=np.concatenate([[0.0], far]),
        tar=np.concatenate([[0.0], tar]),
        num_positive=len(pos),
        num_negative=len(neg),
    )


def tar_at_far(curve: RocCurve, far: float) -> float:
    """TAR at the largest operating point with FAR <= far (step convention)."""
    if not 0.0 < far <= 1.0:
        raise ValueError(f"far must be in (0, 1], got {far}")
    eligible = curve.far <= far
    return float(curve.tar[eligible].max())


def cmc(sim_matrix, gallery_subjects, probe_subjects, on_missing: str = "error") -> CmcResult:
    """Closed-set identification accuracy per rank.

    rank(probe) = 1 + number of non-matching gallery templates whose
    score is >= the best matching-subject score (ties pessimistic).
    Probes whose subject is absent from the gallery are skipped or
    rejected per on_missing ('skip' | 'error').
    """
    sim = np.asarray(sim_matrix, dtype=np.float64)
    gallery_subjects = np.asarray(gallery_subjects)
    probe_subjects = np.asarray(probe_subjects)
    if sim.shape != (len(gallery_subjects), len(probe_subjects)):
        raise ValueError(f"matrix shape {sim.shape} does not match subject list lengths")
    n_gallery = len(gallery_subjects)

    ranks = []
    for p, subject in enumerate(probe_subjects):
        match_mask = gallery_subjects == subject
        if not match_mask.any():
            if on_missing == "skip":
                continue
            raise ValueError(f"probe subject {subject!r} absent from gallery (open set)")
        col = sim[:, p]
        best = col[match_mask].max()
        ranks.append(1 + int((col[~match_mask] >= best).sum()))
    if not ranks:
        raise ValueError("no probes left to rank")
    ranks = np.asarray(ranks)
    ks = np.arange(1, n_gallery + 1)
    return CmcResult((ranks[None, :] <= ks[:, None]).mean(axis=1))


def aggregate_splits(values) -> tuple[float, float]:
    """Mean and sample (n-1) standard deviation over per-split figures."""
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        raise ValueError("no split values to aggregate")
    if values.size == 1:
        return float(values[0]), 0.0
    return float(values.mean()), float(values.std(ddof=1))


def _best_threshold(scores: np.ndarray, labels: np.ndarray) -> float:
    """Threshold (accept if score >= t) maximizing accuracy on the given
    pairs.

    Accuracy is piecewise constant between adjacent distinct scores, so
    the candidates are the plateau midpoints plus one point beyond each
    extreme; the midpoint choice keeps a separating threshold centered
    in its margin.  Ties resolve to the largest candidate.
    """
    distinct = np.unique(scores)
    candidates = np.concatenate(
        [[distinct[0] - 1.0], (distinct[:-1] + distinct[1:]) / 2.0, [distinct[-1] + 1.0]]
    )
    pos_sorted = np.sort(scores[labels > 0])
    neg_sorted = np.sort(scores[labels <= 0])
    n = len(scores)
    tp = len(pos_sorted) - np.searchsorted(pos_sorted, candidates, side="left")
    tn = np.searchsorted(neg_sorted, candidates, side="left")
    acc = (tp + tn) / n
    best = np.flatnonzero(acc == acc.max())[-1]
    return float(candidates[best])


def lfw_protocol(folds: list[tuple[np.ndarray, np.ndarray]]) -> tuple[float, float, list[float]]:
    """10-fold cross-validated verification accuracy.

    folds: list of (scores, labels) per fold.  For each fold the accept
    threshold is chosen to maximize accuracy on the other folds, then
    applied to the held-out fold.  Returns (mean, std, per-fold list).
    """
    if len(folds) < 2:
        raise ValueError("cross-validation needs at least 2 folds")
    accuracies = []
    for held_out in range(len(folds)):
        train_scores = np.concatenate([f[0] for k, f in enumerate(folds) if k != held_out])
        train_labels = np.concatenate([f[1] for k, f in enumerate(folds) if k != held_out])
        t = _best_threshold(np.asarray(train_scores, dtype=np.float64), np.asarray(train_labels))
        scores, labels = folds[held_out]
        scores = np.asarray(scores, dtype=np.float64)
        labels = np.asarray(labels)
        predictions = np.where(scores >= t, 1, -1)
        accuracies.append(float((predictions == labels).mean()))
    mean, std = aggregate_splits(accuracies)
    return mean, std, accuracies


def emit_curves(curve: RocCurve, cmc_result: CmcResult, roc_path, cmc_path) -> None:
    """Write plot-ready (far, tar) and (rank, accuracy) tables."""
    with open(roc_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["far", "tar"])
        for f, t in zip(curve.far, curve.tar):
            writer.writerow([f"{f:.17g}", f"{t:.17g}"])
    with open(cmc_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["rank", "accuracy"])
        for k, acc in enumerate(cmc_result.accuracies, start=1):
            writer.writerow([k, f"{acc:.17g}"])


def read_curve_file(path) -> tuple[list[str], np.ndarray]:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [[float(v) for v in rec] for rec in reader if rec]
    return header, np.asarray(rows, dtype=np.float64)


def read_pair_file(path) -> list[tuple[str, str, int]]:
    """Pair list rows: id_a,id_b,label with label +-1."""
    pairs = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split(",")
            if len(parts) != 3:
                raise ValueError(f"{path}:{line_no}: expected id_a,id_b,label")
            pairs.append((parts[0], parts[1], int(parts[2])))
    return pairs


def write_pair_file(path, pairs) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for a, b, y in pairs:
            fh.write(f"{a},{b},{y}\n")
