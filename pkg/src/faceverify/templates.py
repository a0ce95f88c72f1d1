"""Template pooling, gallery/probe scoring, and score fusion.

A template bundles all media (images or video frames) of one subject
that form a single enrollment or query unit.  Its descriptor is the
arithmetic mean of the unit-norm per-medium features, re-normalized to
unit length so both scorers see unit vectors.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from faceverify.metric import JointBayesModel, cosine_matrix, similarity_matrix

__all__ = [
    "Template",
    "ManifestRow",
    "read_manifest",
    "write_manifest",
    "filter_manifest",
    "check_split_disjoint",
    "pool_template",
    "build_templates",
    "score_templates",
    "fuse_scores",
    "read_score_matrix",
    "write_score_matrix",
]


@dataclass
class Template:
    template_id: str
    subject_id: str
    media: list[str]
    pooled_feature: np.ndarray | None = None


@dataclass(frozen=True)
class ManifestRow:
    template_id: str
    subject_id: str
    media_path: str
    role: str  # gallery | probe | train
    split: str = "0"


MANIFEST_HEADER = ["template_id", "subject_id", "media_path", "role", "split"]


def read_manifest(path) -> list[ManifestRow]:
    rows: list[ManifestRow] = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != MANIFEST_HEADER:
            raise ValueError(f"{path}: expected header {','.join(MANIFEST_HEADER)}")
        for rec in reader:
            if not rec:
                continue
            if len(rec) != len(MANIFEST_HEADER):
                raise ValueError(f"{path}: malformed row {rec!r}")
            rows.append(ManifestRow(*rec))
    return rows


def write_manifest(path, rows: list[ManifestRow]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(MANIFEST_HEADER)
        for r in rows:
            writer.writerow([r.template_id, r.subject_id, r.media_path, r.role, r.split])


def filter_manifest(rows: list[ManifestRow], keep) -> list[ManifestRow]:
    """Optional media filter (e.g. pose-based frame selection for scorers
    that need it).  keep is a predicate over ManifestRow; no filter is
    applied anywhere by default."""
    return [r for r in rows if keep(r)]


def check_split_disjoint(rows: list[ManifestRow]) -> None:
    """Enforce the test-set invariants within each split: gallery and
    probe share no media, and template ids are unique per role."""
    by_split: dict[str, dict[str, set]] = {}
    templates_seen: dict[tuple, str] = {}
    for r in rows:
        media = by_split.setdefault(r.split, {"gallery": set(), "probe": set()})
        if r.role in media:
            media[r.role].add(r.media_path)
        key = (r.split, r.template_id)
        if key in templates_seen and templates_seen[key] != r.role:
            raise ValueError(f"template {r.template_id} appears in two roles in split {r.split}")
        templates_seen[key] = r.role
    for split, media in by_split.items():
        overlap = media["gallery"] & media["probe"]
        if overlap:
            raise ValueError(
                f"split {split}: gallery and probe share media (e.g. {sorted(overlap)[0]!r})"
            )


def pool_template(features: list[np.ndarray] | np.ndarray) -> np.ndarray:
    """Mean of unit-norm per-medium features, re-normalized to unit length.

    Permutation-invariant.  Raises on an empty list and on antipodal
    cancellation (zero-norm mean).
    """
    feats = np.asarray(features, dtype=np.float64)
    if feats.size == 0:
        raise ValueError("cannot pool an empty feature list")
    if feats.ndim == 1:
        feats = feats[None, :]
    mean = feats.mean(axis=0)
    norm = np.linalg.norm(mean)
    if norm == 0.0:
        raise ValueError("pooled feature has zero norm (media features cancel)")
    return mean / norm


def build_templates(
    rows: list[ManifestRow],
    features: np.ndarray,
    media_ids: list[str],
    role: str | None = None,
    split: str | None = None,
) -> list[Template]:
    """Group manifest rows into pooled templates, in manifest order.

    features rows are matched to manifest media via media_ids.
    """
    index = {m: i for i, m in enumerate(media_ids)}
    grouped: dict[str, Template] = {}
    order: list[str] = []
    for r in rows:
        if role is not None and r.role != role:
            continue
        if split is not None and r.split != split:
            continue
        if r.media_path not in index:
            raise KeyError(f"no feature row for media {r.media_path!r}")
        t = grouped.get(r.template_id)
        if t is None:
            t = Template(r.template_id, r.subject_id, [])
            grouped[r.template_id] = t
            order.append(r.template_id)
        elif t.subject_id != r.subject_id:
            raise ValueError(f"template {r.template_id} spans subjects {t.subject_id} and {r.subject_id}")
        t.media.append(r.media_path)
    templates = [grouped[tid] for tid in order]
    for t in templates:
        t.pooled_feature = pool_template(features[[index[m] for m in t.media]])
    return templates


def score_templates(
    gallery: list[Template],
    probe: list[Template],
    scorer: str = "cosine",
    model: JointBayesModel | None = None,
) -> np.ndarray:
    """Dense |gallery| x |probe| similarity matrix."""
    g = np.stack([t.pooled_feature for t in gallery])
    p = np.stack([t.pooled_feature for t in probe])
    if scorer == "cosine":
        return cosine_matrix(g, p)
    if scorer == "jointbayes":
        if model is None:
            raise ValueError("jointbayes scoring needs a trained model")
        return similarity_matrix(model, g, p)
    raise ValueError(f"unknown scorer {scorer!r}")


def fuse_scores(s1: np.ndarray, s2: np.ndarray) -> np.ndarray:
    """Elementwise sum of two similarity matrices of identical shape."""
    s1 = np.asarray(s1, dtype=np.float64)
    s2 = np.asarray(s2, dtype=np.float64)
    if s1.shape != s2.shape:
        raise ValueError(f"score matrices differ in shape: {s1.shape} vs {s2.shape}")
    return s1 + s2


def write_score_matrix(path, scores: np.ndarray, gallery_ids: list[str], probe_ids: list[str]) -> None:
    """CSV with probe ids across the header and gallery ids down column 0."""
    scores = np.asarray(scores)
    if scores.shape != (len(gallery_ids), len(probe_ids)):
        raise ValueError("score matrix shape does not match id lists")
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["gallery_id"] + list(probe_ids))
        for gid, row in zip(gallery_ids, scores):
            writer.writerow([gid] + [f"{v:.17g}" for v in row])


def read_score_matrix(path) -> tuple[np.ndarray, list[str], list[str]]:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0] != "gallery_id":
            raise ValueError(f"{path}: not a score matrix file")
        probe_ids = header[1:]
        gallery_ids: list[str] = []
        rows: list[list[float]] = []
        for rec in reader:
            if not rec:
                continue
            gallery_ids.append(rec[0])
            rows.append([float(v) for v in rec[1:]])
    return np.array(rows, dtype=np.float64), gallery_ids, probe_ids
