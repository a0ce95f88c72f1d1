"""Joint Bayesian similarity and large-margin metric training.

A pair of unit-norm features (x_i, x_j) is scored with the quadratic
form

    d(x_i, x_j) = (x_i - x_j)^T M (x_i - x_j) - 2 x_i^T B x_j
    similarity  = b - d(x_i, x_j)

where M, B and the bias b are learned by stochastic subgradient descent
on a unit-margin hinge objective: a pair with label y in {+1, -1} is in
violation whenever y * similarity <= 1, and only violating pairs update
the model.  M and B start from random Gram matrices V V^T and W W^T so
both are symmetric positive semi-definite at initialization; every M
update adds a symmetric rank-one term, so M stays symmetric throughout.

The literal B update (+2 * gamma * y * x_i x_j^T) is asymmetric in the
pair order; by default we apply its symmetrized form
gamma * y * (x_i x_j^T + x_j x_i^T), which keeps similarity(x, y) ==
similarity(y, x) at every step.  Set symmetrize_b=False for the literal
rule.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from faceverify.linalg import gaussian_matrix, l2_normalize, make_rng

__all__ = [
    "JointBayesModel",
    "MetricTrainConfig",
    "PairBatch",
    "PairSampler",
    "SyntheticEmbeddingModel",
    "cosine_score",
    "cosine_matrix",
    "distance",
    "similarity",
    "similarity_matrix",
    "hinge_step",
    "hinge_objective",
    "init_model",
    "train_metric",
    "generate_synthetic",
]


@dataclass
class JointBayesModel:
    M: np.ndarray
    B: np.ndarray
    b: float

    @property
    def dim(self) -> int:
        return self.M.shape[0]

    def copy(self) -> "JointBayesModel":
        return JointBayesModel(self.M.copy(), self.B.copy(), self.b)


@dataclass
class MetricTrainConfig:
    gamma: float = 1e-3       # learning rate for M and B
    gamma_b: float = 1e-4     # learning rate for the bias
    neg_to_pos_ratio: int = 20
    epochs: int = 20
    seed: int = 0
    symmetrize_b: bool = True

    def __post_init__(self):
        # zero rates are allowed: they turn training into a pure
        # violation census without moving the model
        if self.gamma < 0 or self.gamma_b < 0:
            raise ValueError("learning rates must be non-negative")
        if self.neg_to_pos_ratio < 1:
            raise ValueError("negative:positive ratio must be >= 1")


@dataclass
class PairBatch:
    """Index pairs into a feature set with +-1 same-subject labels."""

    i: np.ndarray
    j: np.ndarray
    y: np.ndarray


def _check_vector(model: JointBayesModel, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64).ravel()
    if x.shape[0] != model.dim:
        raise ValueError(f"feature length {x.shape[0]} does not match model dim {model.dim}")
    return x


def distance(model: JointBayesModel, x_i: np.ndarray, x_j: np.ndarray) -> float:
    """(x_i-x_j)^T M (x_i-x_j) - 2 x_i^T B x_j."""
    x_i = _check_vector(model, x_i)
    x_j = _check_vector(model, x_j)
    diff = x_i - x_j
    return float(diff @ model.M @ diff - 2.0 * (x_i @ model.B @ x_j))


def similarity(model: JointBayesModel, x_i: np.ndarray, x_j: np.ndarray) -> float:
    """Bias minus distance; larger means more likely the same subject."""
    return model.b - distance(model, x_i, x_j)


def similarity_matrix(model: JointBayesModel, left: np.ndarray, right: np.ndarray) -> np.ndarray:
    """similarity() for every (row of left) x (row of right) pair."""
    left = np.asarray(left, dtype=np.float64)
    right = np.asarray(right, dtype=np.float64)
    if left.shape[1] != model.dim or right.shape[1] != model.dim:
        raise ValueError("feature dimension does not match model")
    lm = np.einsum("nd,de,ne->n", left, model.M, left)
    rm = np.einsum("nd,de,ne->n", right, model.M, right)
    cross = left @ (model.M + model.B) @ right.T
    dist = lm[:, None] + rm[None, :] - 2.0 * cross
    return model.b - dist


def cosine_score(x_i: np.ndarray, x_j: np.ndarray) -> float:
    """Cosine similarity, the metric-free baseline."""
    x_i = np.asarray(x_i, dtype=np.float64).ravel()
    x_j = np.asarray(x_j, dtype=np.float64).ravel()
    ni, nj = np.linalg.norm(x_i), np.linalg.norm(x_j)
    if ni == 0.0 or nj == 0.0:
        raise ValueError("cosine score undefined for zero vectors")
    return float(x_i @ x_j / (ni * nj))


def cosine_matrix(left: np.ndarray, right: np.ndarray) -> np.ndarray:
    return l2_normalize(np.asarray(left, dtype=np.float64)) @ l2_normalize(np.asarray(right, dtype=np.float64)).T


def init_model(d: int, rng: np.random.Generator) -> JointBayesModel:
    """Random Gram-matrix start: M = V V^T, B = W W^T, b = 0."""
    if d < 1:
        raise ValueError(f"dimension must be >= 1, got {d}")
    v = gaussian_matrix(rng, d, d)
    w = gaussian_matrix(rng, d, d)
    return JointBayesModel(v @ v.T, w @ w.T, 0.0)


def hinge_step(
    model: JointBayesModel,
    x_i: np.ndarray,
    x_j: np.ndarray,
    y: int,
    cfg: MetricTrainConfig,
) -> bool:
    """One stochastic update; mutates model only if the pair violates
    the unit margin.  Returns whether it did."""
    x_i = _check_vector(model, x_i)
    x_j = _check_vector(model, x_j)
    if y * (model.b - distance(model, x_i, x_j)) > 1.0:
        return False
    diff = x_i - x_j
    model.M -= cfg.gamma * y * np.outer(diff, diff)
    if cfg.symmetrize_b:
        cross = np.outer(x_i, x_j)
        model.B += cfg.gamma * y * (cross + cross.T)
    else:
        model.B += 2.0 * cfg.gamma * y * np.outer(x_i, x_j)
    model.b += cfg.gamma_b * y
    return True


def hinge_objective(model: JointBayesModel, features: np.ndarray, batch: PairBatch) -> float:
    """Sum of max(1 - y*(b - d), 0) over a fixed pair set."""
    scores = _pair_similarities(model, features, batch.i, batch.j)
    return float(np.maximum(1.0 - batch.y * scores, 0.0).sum())


def _pair_similarities(model: JointBayesModel, feats: np.ndarray, i: np.ndarray, j: np.ndarray) -> np.ndarray:
    xi, xj = feats[i], feats[j]
    diff = xi - xj
    dist = np.einsum("nd,de,ne->n", diff, model.M, diff) - 2.0 * np.einsum("nd,de,ne->n", xi, model.B, xj)
    return model.b - dist


class PairSampler:
    """Builds the positive/negative pair pools and emits alternating epochs.

    The positive pool holds every same-subject pair; the negative pool is
    subsampled (without replacement) to neg_to_pos_ratio times the
    positive count.  Each epoch is one shuffled pass over the positives
    with one negative drawn after each positive; the negative queue
    cycles through the pool, reshuffling whenever it runs out.  Pools and
    emission order are deterministic given the rng.
    """

    def __init__(self, labels: np.ndarray, rng: np.random.Generator, cfg: MetricTrainConfig):
        labels = np.asarray(labels)
        n = labels.shape[0]
        same = labels[:, None] == labels[None, :]
        iu, ju = np.triu_indices(n, k=1)
        pos_mask = same[iu, ju]
        self.pos_pairs = np.stack([iu[pos_mask], ju[pos_mask]], axis=1)
        if len(self.pos_pairs) == 0:
            raise ValueError("no positive pair available: need a subject with >= 2 samples")
        neg_pairs = np.stack([iu[~pos_mask], ju[~pos_mask]], axis=1)
        if len(neg_pairs) == 0:
            raise ValueError("no negative pair available: need >= 2 subjects")
        cap = min(len(neg_pairs), cfg.neg_to_pos_ratio * len(self.pos_pairs))
        pick = rng.choice(len(neg_pairs), size=cap, replace=False)
        self.neg_pairs = neg_pairs[np.sort(pick)]
        self._rng = rng
        self._neg_queue = rng.permutation(len(self.neg_pairs))
        self._neg_cursor = 0

    def _next_negatives(self, count: int) -> np.ndarray:
        out = np.empty(count, dtype=np.int64)
        filled = 0
        while filled < count:
            take = min(count - filled, len(self._neg_queue) - self._neg_cursor)
            out[filled : filled + take] = self._neg_queue[self._neg_cursor : self._neg_cursor + take]
            self._neg_cursor += take
            filled += take
            if self._neg_cursor == len(self._neg_queue):
                self._neg_queue = self._rng.permutation(len(self.neg_pairs))
                self._neg_cursor = 0
        return out

    def epoch(self) -> PairBatch:
        """Alternating +1/-1 sequence covering every positive pair once."""
        n_pos = len(self.pos_pairs)
        pos = self.pos_pairs[self._rng.permutation(n_pos)]
        neg = self.neg_pairs[self._next_negatives(n_pos)]
        i = np.empty(2 * n_pos, dtype=np.int64)
        j = np.empty(2 * n_pos, dtype=np.int64)
        y = np.empty(2 * n_pos, dtype=np.int64)
        i[0::2], j[0::2], y[0::2] = pos[:, 0], pos[:, 1], 1
        i[1::2], j[1::2], y[1::2] = neg[:, 0], neg[:, 1], -1
        return PairBatch(i, j, y)


def train_metric(
    features: np.ndarray,
    labels: np.ndarray,
    cfg: MetricTrainConfig,
) -> tuple[JointBayesModel, list[float]]:
    """Fit (M, B, b) on labeled features; returns the model and the
    per-epoch fraction of pairs that violated the margin."""
    features = np.asarray(features, dtype=np.float64)
    norms = np.linalg.norm(features, axis=1)
    if not np.allclose(norms, 1.0, atol=1e-6):
        warnings.warn("features are not unit-norm; metric training expects L2-normalized inputs")
    rng = make_rng(cfg.seed)
    model = init_model(features.shape[1], rng)
    sampler = PairSampler(labels, rng, cfg)

    violation_fractions: list[float] = []
    for _ in range(cfg.epochs):
        batch = sampler.epoch()
        violations = 0
        for i, j, y in zip(batch.i, batch.j, batch.y):
            violations += hinge_step(model, features[i], features[j], int(y), cfg)
        violation_fractions.append(violations / len(batch.y))
    return model, violation_fractions


@dataclass
class SyntheticEmbeddingModel:
    """Generator for identity-plus-variation features: x = mu + eps with
    mu ~ N(0, between_cov) drawn once per subject and eps ~ N(0,
    within_cov) per sample, then L2-normalized like real features."""

    dim: int
    num_subjects: int
    samples_per_subject: int
    between_cov: np.ndarray | float = 1.0
    within_cov: np.ndarray | float = 0.25
    seed: int = 0

    def _factor(self, cov) -> np.ndarray:
        if np.isscalar(cov):
            if cov < 0:
                raise ValueError(f"covariance scale must be >= 0, got {cov}")
            return np.sqrt(float(cov)) * np.eye(self.dim)
        cov = np.asarray(cov, dtype=np.float64)
        if cov.shape != (self.dim, self.dim):
            raise ValueError(f"covariance must be {self.dim}x{self.dim}, got {cov.shape}")
        vals, vecs = np.linalg.eigh(0.5 * (cov + cov.T))
        if vals.min() < -1e-10 * max(1.0, vals.max()):
            raise ValueError(f"covariance is not positive semi-definite (min eig {vals.min():.3e})")
        return vecs * np.sqrt(np.clip(vals, 0.0, None))


def generate_synthetic(model: SyntheticEmbeddingModel) -> tuple[np.ndarray, np.ndarray]:
    """Draw the full synthetic set; returns (features, subject labels)."""
    rng = make_rng(model.seed)
    fb = model._factor(model.between_cov)
    fw = model._factor(model.within_cov)
    total = model.num_subjects * model.samples_per_subject
    feats = np.empty((total, model.dim))
    labels = np.empty(total, dtype=np.int64)
    row = 0
    for s in range(model.num_subjects):
        mu = fb @ rng.standard_normal(model.dim)
        for _ in range(model.samples_per_subject):
            x = mu + fw @ rng.standard_normal(model.dim)
            feats[row] = x
            labels[row] = s
            row += 1
    norms = np.linalg.norm(feats, axis=1, keepdims=True)
    if np.any(norms == 0.0):
        raise ValueError("degenerate zero-norm synthetic sample; use non-zero covariances")
    return feats / norms, labels
