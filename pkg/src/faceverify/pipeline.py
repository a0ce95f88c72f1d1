"""End-to-end evaluation pipeline.

Runs feature sourcing (synthetic generator or a prebuilt feature file)
-> subject splits -> metric training -> template pooling -> scoring ->
ROC/CMC evaluation, persisting every intermediate artifact so stages
can be re-run in isolation.  A single root seed is split into fixed
per-stage streams (see _STREAMS), which makes every artifact
byte-reproducible for a given config.
"""

from __future__ import annotations

import configparser
import logging
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from faceverify.evaluation import aggregate_splits, cmc, emit_curves, roc, tar_at_far
from faceverify.linalg import derive_seed, make_rng
from faceverify.metric import (
    MetricTrainConfig,
    SyntheticEmbeddingModel,
    generate_synthetic,
    train_metric,
)
from faceverify.storage import read_features, write_features, write_metric_model
from faceverify.templates import (
    ManifestRow,
    build_templates,
    check_split_disjoint,
    read_manifest,
    score_templates,
    write_manifest,
    write_score_matrix,
)

__all__ = ["PipelineConfig", "SplitReport", "run_pipeline", "synthesize_dataset", "load_config"]

log = logging.getLogger("faceverify")

# Per-stage seed streams; appending is fine, renumbering breaks reproducibility.
_STREAMS = {"synth": 1, "split": 100, "metric": 200}


@dataclass
class PipelineConfig:
    out_dir: str = "run"
    seed: int = 0
    splits: int = 2
    scorer: str = "jointbayes"
    # feature source: synthetic unless a feature file + manifest is given
    features_path: str = ""
    manifest_path: str = ""
    synth_subjects: int = 30
    synth_samples: int = 5
    synth_dim: int = 16
    synth_s_mu: float = 1.0
    synth_s_eps: float = 0.25
    # protocol
    train_fraction: float = 2.0 / 3.0
    fars: tuple = (1e-2, 1e-1)
    ranks: tuple = (1, 5, 10)
    # metric training: steps sized for the unit-margin objective on the
    # synthetic desk-scale sets (library defaults in MetricTrainConfig are
    # much smaller; these are the documented values used by the runs here)
    gamma: float = 20.0
    gamma_b: float = 2.0
    epochs: int = 50
    neg_to_pos_ratio: int = 20
    symmetrize_b: bool = True

    def metric_config(self, seed: int) -> MetricTrainConfig:
        return MetricTrainConfig(
            gamma=self.gamma,
            gamma_b=self.gamma_b,
            neg_to_pos_ratio=self.neg_to_pos_ratio,
            epochs=self.epochs,
            seed=seed,
            symmetrize_b=self.symmetrize_b,
        )

    def validate(self) -> None:
        if self.scorer not in ("cosine", "jointbayes"):
            raise ValueError(f"unknown scorer {self.scorer!r}")
        if self.splits < 1:
            raise ValueError("need at least one split")
        if not 0.0 < self.train_fraction < 1.0:
            raise ValueError("train_fraction must be in (0, 1)")
        for p in (self.features_path, self.manifest_path):
            if p and not Path(p).exists():
                raise FileNotFoundError(f"configured path does not exist: {p}")
        if bool(self.features_path) != bool(self.manifest_path):
            raise ValueError("features_path and manifest_path must be given together")


@dataclass
class SplitReport:
    scorer: str
    num_splits: int
    tar_by_far: dict = field(default_factory=dict)       # far -> per-split list
    rank_accuracy: dict = field(default_factory=dict)    # rank -> per-split list

    def aggregates(self) -> dict:
        out = {}
        for far, vals in self.tar_by_far.items():
            out[f"tar@far={far:g}"] = aggregate_splits(vals)
        for k, vals in self.rank_accuracy.items():
            out[f"rank-{k}"] = aggregate_splits(vals)
        return out

    def to_text(self) -> str:
        lines = [
            "faceverify evaluation report",
            f"scorer={self.scorer}",
            f"splits={self.num_splits}",
            "",
            "[verification]",
        ]
        fars = sorted(self.tar_by_far)
        lines.append("split," + ",".join(f"tar@far={f:g}" for f in fars))
        for s in range(self.num_splits):
            lines.append(f"{s}," + ",".join(f"{self.tar_by_far[f][s]:.6f}" for f in fars))
        for stat, idx in (("mean", 0), ("std", 1)):
            lines.append(stat + "," + ",".join(f"{aggregate_splits(self.tar_by_far[f])[idx]:.6f}" for f in fars))
        lines += ["", "[identification]"]
        ranks = sorted(self.rank_accuracy)
        lines.append("split," + ",".join(f"rank-{k}" for k in ranks))
        for s in range(self.num_splits):
            lines.append(f"{s}," + ",".join(f"{self.rank_accuracy[k][s]:.6f}" for k in ranks))
        for stat, idx in (("mean", 0), ("std", 1)):
            lines.append(stat + "," + ",".join(f"{aggregate_splits(self.rank_accuracy[k])[idx]:.6f}" for k in ranks))
        return "\n".join(lines) + "\n"


def synthesize_dataset(cfg: PipelineConfig, out_dir: Path) -> tuple[np.ndarray, list[str], dict]:
    """Generate synthetic features plus a one-medium-per-template manifest."""
    gen = SyntheticEmbeddingModel(
        dim=cfg.synth_dim,
        num_subjects=cfg.synth_subjects,
        samples_per_subject=cfg.synth_samples,
        between_cov=cfg.synth_s_mu,
        within_cov=cfg.synth_s_eps,
        seed=derive_seed(cfg.seed, _STREAMS["synth"]),
    )
    feats, labels = generate_synthetic(gen)
    media_ids = [f"s{lbl:04d}/m{k % cfg.synth_samples:02d}" for k, lbl in enumerate(labels)]
    write_features(out_dir / "features.jvfe", feats, media_ids)
    rows = [
        ManifestRow(template_id=m, subject_id=f"s{lbl:04d}", media_path=m, role="train", split="all")
        for m, lbl in zip(media_ids, labels)
    ]
    write_manifest(out_dir / "media.csv", rows)
    subject_of = {m: f"s{lbl:04d}" for m, lbl in zip(media_ids, labels)}
    # re-read so the pipeline consumes exactly what later stages would
    feats, media_ids = read_features(out_dir / "features.jvfe")
    return feats, media_ids, subject_of


def _load_dataset(cfg: PipelineConfig, out_dir: Path) -> tuple[np.ndarray, list[str], dict]:
    if cfg.features_path:
        feats, media_ids = read_features(cfg.features_path)
        rows = read_manifest(cfg.manifest_path)
        subject_of = {r.media_path: r.subject_id for r in rows}
        missing = [m for m in media_ids if m not in subject_of]
        if missing:
            raise ValueError(f"manifest lacks subjects for {len(missing)} media (first: {missing[0]!r})")
        return feats, media_ids, subject_of
    return synthesize_dataset(cfg, out_dir)


def make_split_manifest(
    media_ids: list[str],
    subject_of: dict,
    rng: np.random.Generator,
    train_fraction: float,
    split_name: str,
) -> list[ManifestRow]:
    """Partition subjects into train/test; test media become one pooled
    gallery template per subject plus single-medium probe templates."""
    subjects = sorted({subject_of[m] for m in media_ids})
    if len(subjects) < 3:
        raise ValueError("need at least 3 subjects to form train and test sets")
    order = rng.permutation(len(subjects))
    n_train = max(1, min(len(subjects) - 2, int(round(train_fraction * len(subjects)))))
    train_subjects = {subjects[i] for i in order[:n_train]}

    by_subject: dict[str, list[str]] = {}
    for m in media_ids:
        by_subject.setdefault(subject_of[m], []).append(m)

    rows: list[ManifestRow] = []
    for subj in subjects:
        media = sorted(by_subject[subj])
        if subj in train_subjects:
            rows += [ManifestRow(m, subj, m, "train", split_name) for m in media]
            continue
        media = [media[i] for i in rng.permutation(len(media))]
        # single-medium subjects enroll in the gallery only
        n_gallery = max(1, len(media) // 2)
        gallery, probes = media[:n_gallery], media[n_gallery:]
        rows += [ManifestRow(f"g_{subj}", subj, m, "gallery", split_name) for m in gallery]
        rows += [ManifestRow(f"p_{subj}_{k}", subj, m, "probe", split_name) for k, m in enumerate(probes)]
    return rows


def _pair_labels(gallery, probe) -> np.ndarray:
    gs = np.array([t.subject_id for t in gallery])
    ps = np.array([t.subject_id for t in probe])
    return np.where(gs[:, None] == ps[None, :], 1, -1)


def run_pipeline(cfg: PipelineConfig) -> SplitReport:
    """Full deterministic run; returns the aggregated report."""
    cfg.validate()
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_config(cfg, out_dir / "config.resolved.ini")

    feats, media_ids, subject_of = _load_dataset(cfg, out_dir)
    report = SplitReport(scorer=cfg.scorer, num_splits=cfg.splits)
    report.tar_by_far = {f: [] for f in cfg.fars}
    report.rank_accuracy = {k: [] for k in cfg.ranks}

    for s in range(cfg.splits):
        split_dir = out_dir / f"split{s:02d}"
        split_dir.mkdir(exist_ok=True)
        split_rng = make_rng(derive_seed(cfg.seed, _STREAMS["split"] + s))
        rows = make_split_manifest(media_ids, subject_of, split_rng, cfg.train_fraction, str(s))
        check_split_disjoint(rows)
        write_manifest(split_dir / "manifest.csv", rows)

        model = None
        if cfg.scorer == "jointbayes":
            train_rows = [r for r in rows if r.role == "train"]
            idx = {m: i for i, m in enumerate(media_ids)}
            train_feats = feats[[idx[r.media_path] for r in train_rows]]
            train_labels = np.array([r.subject_id for r in train_rows])
            mcfg = cfg.metric_config(derive_seed(cfg.seed, _STREAMS["metric"] + s))
            model, violations = train_metric(train_feats, train_labels, mcfg)
            write_metric_model(split_dir / "metric.jvjb", model)
            log.info("split %d: metric violations %.3f -> %.3f", s, violations[0], violations[-1])

        gallery = build_templates(rows, feats, media_ids, role="gallery")
        probe = build_templates(rows, feats, media_ids, role="probe")
        for name, templates in (("gallery", gallery), ("probe", probe)):
            write_features(
                split_dir / f"{name}.jvfe",
                np.stack([t.pooled_feature for t in templates]),
                [t.template_id for t in templates],
            )

        scores = score_templates(gallery, probe, scorer=cfg.scorer, model=model)
        write_score_matrix(
            split_dir / "scores.csv", scores, [t.template_id for t in gallery], [t.template_id for t in probe]
        )

        labels = _pair_labels(gallery, probe)
        curve = roc(scores.ravel(), labels.ravel())
        result = cmc(scores, [t.subject_id for t in gallery], [t.subject_id for t in probe])
        emit_curves(curve, result, split_dir / "roc.csv", split_dir / "cmc.csv")
        for f in cfg.fars:
            report.tar_by_far[f].append(tar_at_far(curve, f))
        for k in cfg.ranks:
            report.rank_accuracy[k].append(result.rank(min(k, len(result.accuracies))))
        log.info("split %d done: %s", s, {f: report.tar_by_far[f][-1] for f in cfg.fars})

    (out_dir / "report.txt").write_text(report.to_text(), encoding="utf-8")
    return report


# -- config file (key=value INI sections) -----------------------------------

_SECTIONS = {
    "pipeline": ("out_dir", "seed", "splits", "scorer"),
    "source": ("features_path", "manifest_path", "synth_subjects", "synth_samples",
               "synth_dim", "synth_s_mu", "synth_s_eps"),
    "protocol": ("train_fraction", "fars", "ranks"),
    "metric": ("gamma", "gamma_b", "epochs", "neg_to_pos_ratio", "symmetrize_b"),
}


def load_config(path) -> PipelineConfig:
    parser = configparser.ConfigParser()
    with open(path, "r", encoding="utf-8") as fh:
        parser.read_file(fh)
    cfg = PipelineConfig()
    kwargs = {}
    type_of = {f.name: f.type for f in fields(PipelineConfig)}
    for section, keys in _SECTIONS.items():
        if not parser.has_section(section):
            continue
        for key in keys:
            if not parser.has_option(section, key):
                continue
            raw = parser.get(section, key)
            if key in ("fars", "ranks"):
                conv = float if key == "fars" else int
                kwargs[key] = tuple(conv(v) for v in raw.split(",") if v.strip())
            elif type_of[key] == "int":
                kwargs[key] = int(raw)
            elif type_of[key] == "float":
                kwargs[key] = float(raw)
            elif type_of[key] == "bool":
                kwargs[key] = raw.strip().lower() in ("1", "true", "yes", "on")
            else:
                kwargs[key] = raw
    return replace(cfg, **kwargs)


def write_config(cfg: PipelineConfig, path) -> None:
    parser = configparser.ConfigParser()
    for section, keys in _SECTIONS.items():
        parser.add_section(section)
        for key in keys:
            value = getattr(cfg, key)
            if key in ("fars", "ranks"):
                value = ",".join(f"{v:g}" if isinstance(v, float) else str(v) for v in value)
            parser.set(section, key, str(value))
    with open(path, "w", encoding="utf-8") as fh:
        parser.write(fh)
