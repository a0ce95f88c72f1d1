"""Command-line surface.

Subcommands cover the pipeline stage by stage (align, train-cnn,
extract, pool, train-metric, score, evaluate, fuse, synth) plus
`report`, which runs the whole evaluation end to end from a config
file.  Warnings (skipped media, degenerate landmarks) never change the
exit code; fatal errors exit non-zero with a stage-tagged message.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from faceverify import align as al
from faceverify import evaluation as ev
from faceverify import pipeline as pl
from faceverify import pnm, storage, templates
from faceverify.metric import MetricTrainConfig, cosine_matrix, similarity_matrix, train_metric
from faceverify.micronet import TrainConfig, build_face_net, extract_features, train

IMAGE_SUFFIXES = (".pgm", ".ppm")


def _image_list(directory: Path) -> list[Path]:
    return sorted(p for p in directory.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)


def cmd_align(args) -> int:
    frame = al.CanonicalFrame()
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    landmarks = {media: lm for media, lm in al.read_landmark_file(args.landmarks)}
    failures: list[tuple[str, str]] = []
    written = 0
    for img_path in _image_list(Path(args.images)):
        name = img_path.name
        if name not in landmarks:
            failures.append((name, "no landmark record"))
            continue
        try:
            img = pnm.read_pnm(img_path)
            lm = landmarks[name]
            lm.validate()
            transform = al.estimate_similarity(lm.points, frame.landmarks)
            warped = al.warp_to_canonical(img, transform, frame)
            pnm.write_pnm(out_dir / name, warped)
            written += 1
        except (ValueError, OSError) as exc:
            failures.append((name, str(exc)))
    if failures:
        with open(out_dir / "align_failures.txt", "w", encoding="utf-8") as fh:
            for name, reason in failures:
                fh.write(f"{name},{reason}\n")
    print(f"align: wrote {written} images, {len(failures)} warnings")
    return 0


def _read_label_manifest(path) -> list[tuple[str, str]]:
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            media, label = line.split(",", 1)
            rows.append((media, label))
    return rows


def _load_images(root: Path, media: list[str]) -> np.ndarray:
    imgs = []
    for m in media:
        img = pnm.read_pnm(root / m)
        if img.ndim == 2:
            img = img[:, :, None]
        imgs.append(img)
    return np.stack(imgs)


def cmd_train_cnn(args) -> int:
    rows = _read_label_manifest(args.manifest)
    classes = sorted({label for _, label in rows})
    class_index = {c: i for i, c in enumerate(classes)}
    images = _load_images(Path(args.images_root), [m for m, _ in rows])
    labels = np.array([class_index[label] for _, label in rows])
    net = build_face_net(
        num_classes=len(classes),
        in_channels=images.shape[3],
        input_size=args.crop_size if args.random_crop else images.shape[1],
        width_divisor=args.width_divisor,
        dtype=np.float32 if args.float32 else np.float64,
    )
    cfg = TrainConfig(
        batch_size=args.batch_size,
        learning_rate=args.lr,
        max_iters=args.iters,
        seed=args.seed,
        hflip=args.hflip,
        random_crop=args.random_crop,
        crop_size=args.crop_size,
    )
    result = train(net, images, labels, cfg)
    storage.write_checkpoint(args.out, net)
    print(f"train-cnn: {result.iterations} iterations, final loss {result.losses[-1]:.4f}, saved {args.out}")
    return 0


def cmd_extract(args) -> int:
    net = storage.read_checkpoint(args.model)
    root = Path(args.images)
    if args.list:
        with open(args.list, "r", encoding="utf-8") as fh:
            media = [line.strip() for line in fh if line.strip()]
    else:
        media = [p.name for p in _image_list(root)]
    images = _load_images(root, media)
    target = net.spec.input_shape[0]
    if images.shape[1] > target:  # center-crop larger inputs
        off = (images.shape[1] - target) // 2
        images = images[:, off : off + target, off : off + target, :]
    feats = extract_features(net, images, batch_size=args.batch_size)
    storage.write_features(args.out, feats, media)
    print(f"extract: {feats.shape[0]} features of dim {feats.shape[1]} -> {args.out}")
    return 0


def cmd_pool(args) -> int:
    feats, media_ids = storage.read_features(args.features)
    rows = templates.read_manifest(args.manifest)
    pooled = templates.build_templates(
        rows, feats, media_ids, role=args.role, split=args.split
    )
    storage.write_features(
        args.out,
        np.stack([t.pooled_feature for t in pooled]),
        [t.template_id for t in pooled],
    )
    print(f"pool: {len(pooled)} templates -> {args.out}")
    return 0


def cmd_train_metric(args) -> int:
    feats, media_ids = storage.read_features(args.features)
    rows = templates.read_manifest(args.manifest)
    subject_of = {r.media_path: r.subject_id for r in rows}
    labels = np.array([subject_of[m] for m in media_ids])
    cfg = MetricTrainConfig(
        gamma=args.gamma,
        gamma_b=args.gamma_b,
        neg_to_pos_ratio=args.ratio,
        epochs=args.epochs,
        seed=args.seed,
        symmetrize_b=not args.literal_b_update,
    )
    model, violations = train_metric(feats, labels, cfg)
    storage.write_metric_model(args.out, model)
    print(
        f"train-metric: violations {violations[0]:.3f} -> {violations[-1]:.3f} "
        f"over {cfg.epochs} epochs, saved {args.out}"
    )
    return 0


def cmd_score(args) -> int:
    gallery, gallery_ids = storage.read_features(args.gallery)
    probe, probe_ids = storage.read_features(args.probe)
    if args.scorer == "jointbayes":
        if not args.model:
            print("score: --model required for jointbayes", file=sys.stderr)
            return 2
        model = storage.read_metric_model(args.model)
        scores = similarity_matrix(model, gallery, probe)
    else:
        scores = cosine_matrix(gallery, probe)
    templates.write_score_matrix(args.out, scores, gallery_ids, probe_ids)
    print(f"score: {scores.shape[0]}x{scores.shape[1]} matrix -> {args.out}")
    return 0


def cmd_evaluate(args) -> int:
    scores, gallery_ids, probe_ids = templates.read_score_matrix(args.scores)
    rows = templates.read_manifest(args.manifest)
    subject_of_template = {}
    for r in rows:
        subject_of_template.setdefault(r.template_id, r.subject_id)
    gallery_subjects = [subject_of_template[g] for g in gallery_ids]
    probe_subjects = [subject_of_template[p] for p in probe_ids]

    labels = np.where(
        np.array(gallery_subjects)[:, None] == np.array(probe_subjects)[None, :], 1, -1
    )
    curve = ev.roc(scores.ravel(), labels.ravel())
    result = ev.cmc(scores, gallery_subjects, probe_subjects)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ev.emit_curves(curve, result, out_dir / "roc.csv", out_dir / "cmc.csv")
    fars = [float(v) for v in args.fars.split(",")]
    ranks = [int(v) for v in args.ranks.split(",")]
    lines = [f"tar@far={f:g},{ev.tar_at_far(curve, f):.6f}" for f in fars]
    lines += [f"rank-{k},{result.rank(min(k, len(result.accuracies))):.6f}" for k in ranks]
    (out_dir / "summary.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    print("evaluate:", "; ".join(lines))
    return 0


def cmd_fuse(args) -> int:
    s1, g1, p1 = templates.read_score_matrix(args.a)
    s2, g2, p2 = templates.read_score_matrix(args.b)
    if g1 != g2 or p1 != p2:
        print("fuse: template id mismatch between matrices", file=sys.stderr)
        return 2
    templates.write_score_matrix(args.out, templates.fuse_scores(s1, s2), g1, p1)
    print(f"fuse: wrote {args.out}")
    return 0


def cmd_synth(args) -> int:
    cfg = pl.PipelineConfig(
        out_dir=args.out_dir,
        seed=args.seed,
        synth_subjects=args.subjects,
        synth_samples=args.samples,
        synth_dim=args.dim,
        synth_s_mu=args.s_mu,
        synth_s_eps=args.s_eps,
    )
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    feats, media_ids, _ = pl.synthesize_dataset(cfg, out_dir)
    print(f"synth: {feats.shape[0]} features of dim {feats.shape[1]} -> {out_dir}")
    return 0


def cmd_report(args) -> int:
    cfg = pl.load_config(args.config) if args.config else pl.PipelineConfig()
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.splits is not None:
        overrides["splits"] = args.splits
    if args.scorer is not None:
        overrides["scorer"] = args.scorer
    if args.out_dir is not None:
        overrides["out_dir"] = args.out_dir
    cfg = replace(cfg, **overrides)
    report = pl.run_pipeline(cfg)
    sys.stdout.write(report.to_text())
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="faceverify", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("align", help="warp images into the canonical frame")
    p.add_argument("--landmarks", required=True)
    p.add_argument("--images", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_align)

    p = sub.add_parser("train-cnn", help="train the feature extractor")
    p.add_argument("--manifest", required=True, help="media_path,label per line")
    p.add_argument("--images-root", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--width-divisor", type=int, default=1)
    p.add_argument("--batch-size", type=int, default=128)
    p.add_argument("--lr", type=float, default=1e-2)
    p.add_argument("--iters", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--hflip", action="store_true")
    p.add_argument("--random-crop", action="store_true")
    p.add_argument("--crop-size", type=int, default=100)
    p.add_argument("--float32", action="store_true")
    p.set_defaults(fn=cmd_train_cnn)

    p = sub.add_parser("extract", help="extract pooled features")
    p.add_argument("--model", required=True)
    p.add_argument("--images", required=True)
    p.add_argument("--list", default="")
    p.add_argument("--out", required=True)
    p.add_argument("--batch-size", type=int, default=32)
    p.set_defaults(fn=cmd_extract)

    p = sub.add_parser("pool", help="pool media features into templates")
    p.add_argument("--features", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--role", default=None)
    p.add_argument("--split", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_pool)

    p = sub.add_parser("train-metric", help="fit the joint Bayes metric")
    p.add_argument("--features", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--gamma", type=float, default=1e-3)
    p.add_argument("--gamma-b", type=float, default=1e-4)
    p.add_argument("--ratio", type=int, default=20)
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--literal-b-update", action="store_true")
    p.set_defaults(fn=cmd_train_metric)

    p = sub.add_parser("score", help="score gallery x probe templates")
    p.add_argument("--gallery", required=True)
    p.add_argument("--probe", required=True)
    p.add_argument("--scorer", choices=("cosine", "jointbayes"), default="cosine")
    p.add_argument("--model", default="")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_score)

    p = sub.add_parser("evaluate", help="ROC/CMC from a score matrix")
    p.add_argument("--scores", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--fars", default="0.01,0.1")
    p.add_argument("--ranks", default="1,5,10")
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("fuse", help="sum two score matrices")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_fuse)

    p = sub.add_parser("synth", help="generate a synthetic feature set")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--subjects", type=int, default=30)
    p.add_argument("--samples", type=int, default=5)
    p.add_argument("--dim", type=int, default=16)
    p.add_argument("--s-mu", type=float, default=1.0)
    p.add_argument("--s-eps", type=float, default=0.25)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("report", help="run the full pipeline from a config")
    p.add_argument("--config", default="")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--splits", type=int, default=None)
    p.add_argument("--scorer", choices=("cosine", "jointbayes"), default=None)
    p.add_argument("--out-dir", default=None)
    p.set_defaults(fn=cmd_report)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except Exception as exc:  # fatal: tag with the failing stage
        print(f"{args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
