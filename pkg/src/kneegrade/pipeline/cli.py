"""Command-line interface.

Global flags: --config (INI file, see config.SCHEMA for keys and defaults),
--seed (overrides [run].seed), --out (output directory). Subcommands cover
the full experiment (`run`) plus each stage individually; stage commands
exchange data through the documented CSV/PNG/model-file formats, so any step
can be rerun or swapped in isolation.
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from .. import metrics, minicnn, svm
from ..detect import (
    Detection,
    build_templates,
    detect_svm,
    detect_template_matching,
    evaluate_detections,
    preprocess_radiograph,
    timed_detections,
)
from ..imaging import BBox, GrayImage, load_image, save_image
from .config import load_config
from .manifest import load_manifest
from .runner import (
    _as_batch,
    _seed,
    _synth_cfg,
    extract_joint_samples,
    print_summary,
    run_experiment,
    stage_pretrain,
    RunReport,
)
from .splits import JointSample, SplitSpec, partition_indices
from .synth import synth_generate

DETECTIONS_HEADER = ["image_id", "side", "x", "y", "w", "h", "score", "scale"]


def _load_corpus(corpus_dir):
    corpus = Path(corpus_dir)
    ann = corpus / "annotations.csv"
    return load_manifest(corpus / "labels.csv", ann if ann.is_file() else None)


def _write_detections_csv(path, found):
    rows = [",".join(DETECTIONS_HEADER)]
    for (image_id, side), det in sorted(found.items()):
        b = det.box
        rows.append(
            f"{image_id},{side},{b.x},{b.y},{b.w},{b.h},{det.score:.17g},{det.scale:.17g}"
        )
    Path(path).write_text("\n".join(rows) + "\n")


def _read_detections_csv(path):
    rows = list(csv.reader(Path(path).read_text().splitlines()))
    if not rows or rows[0] != DETECTIONS_HEADER:
        raise SystemExit(f"detections CSV {path} must start with {','.join(DETECTIONS_HEADER)}")
    found = {}
    for row in rows[1:]:
        image_id, side = row[0], row[1]
        x, y, w, h = (int(v) for v in row[2:6])
        found[(image_id, side)] = Detection(BBox(x, y, w, h), float(row[6]), float(row[7]))
    return found


def _write_samples(samples, out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = ["sample_id,path,grade"]
    for s in samples:
        rel = s.sample_id.replace(":", "_") + ".png"
        save_image(GrayImage(s.pixels), out / rel)
        rows.append(f"{s.sample_id},{rel},{s.grade}")
    (out / "samples.csv").write_text("\n".join(rows) + "\n")


def _read_samples(samples_dir):
    base = Path(samples_dir)
    rows = list(csv.reader((base / "samples.csv").read_text().splitlines()))
    if not rows or rows[0] != ["sample_id", "path", "grade"]:
        raise SystemExit(f"samples CSV in {samples_dir} has an unexpected header")
    return [
        JointSample(sid, int(grade), load_image(base / rel).pixels)
        for sid, rel, grade in rows[1:]
    ]


def _preprocessed(manifest, cfg):
    dcfg = cfg["detect"]
    return {
        r.image_id: preprocess_radiograph(load_image(r.path), dcfg["scale"], dcfg["equalize"])
        for r in manifest.records
    }


def cmd_synth(args, cfg):
    manifest = synth_generate(_synth_cfg(cfg, _seed(cfg, "synth")), args.out)
    counts = manifest.grade_counts()
    print(f"wrote {len(manifest)} images to {args.out} (per grade: {counts})")


def cmd_annotate(args, cfg):
    from .server import serve_annotation

    manifest = _load_corpus(args.corpus)
    detector = svm.load_svm(args.detector) if args.detector else None
    annotations_csv = Path(args.corpus) / "annotations.csv"
    print(f"serving annotation UI for {len(manifest)} images on port {args.port}")
    serve_annotation(
        manifest,
        args.port,
        annotations_csv,
        detector,
        scale=cfg["detect"]["scale"],
        equalize=cfg["detect"]["equalize"],
        host=args.host,
        frontend_dir=args.frontend,
    )


def cmd_train_detector(args, cfg):
    from .runner import sample_detector_patches
    from ..detect import train_joint_detector

    manifest = _load_corpus(args.corpus)
    pre = _preprocessed(manifest, cfg)
    pos, neg = sample_detector_patches(manifest, pre, cfg)
    dcfg = cfg["detect"]
    model = train_joint_detector(
        pos,
        neg,
        svm.SvmTrainConfig(
            C=dcfg["svm_c"], epochs=dcfg["svm_epochs"], eta0=dcfg["svm_eta0"],
            seed=_seed(cfg, "detector"), standardize=dcfg["svm_standardize"],
        ),
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    svm.save_svm(model, out / "detector.svm")
    print(f"trained on {len(pos)} positive / {len(neg)} negative patches -> {out / 'detector.svm'}")


def cmd_detect(args, cfg):
    manifest = _load_corpus(args.corpus)
    pre = _preprocessed(manifest, cfg)
    dcfg = cfg["detect"]
    scale, stride = dcfg["scale"], dcfg["stride"]
    if args.method == "svm":
        model = svm.load_svm(args.model)
        detector = lambda im: detect_svm(im, model, scale, stride)
    else:
        annotated = [
            (pre[r.image_id], r.annotations[s], r.grade)
            for r in manifest.records
            for s in ("left", "right")
            if s in r.annotations
        ]
        templates = build_templates(annotated, dcfg["templates_per_grade"], scale)
        detector = lambda im: detect_template_matching(im, templates, scale, stride)
    found, sec = timed_detections([(r.image_id, pre[r.image_id]) for r in manifest.records], detector)
    _write_detections_csv(args.out, found)
    print(f"{len(found)} detections ({sec * 1000:.2f} ms/image) -> {args.out}")


def cmd_eval_detect(args, cfg):
    manifest = _load_corpus(args.corpus)
    found = _read_detections_csv(args.detections)
    report = evaluate_detections(manifest.all_annotations(), found)
    print(report.to_table(), end="")
    if args.out:
        Path(args.out).write_text(report.to_text(include_timing=False))


def cmd_extract(args, cfg):
    manifest = _load_corpus(args.corpus)
    samples = extract_joint_samples(manifest, cfg)
    _write_samples(samples, args.out)
    print(f"extracted {len(samples)} joint samples -> {args.out}")


def cmd_pretrain(args, cfg):
    out = Path(args.out)
    for sub in ("models", "curves"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    report = RunReport()
    stage_pretrain(cfg, out, report)
    print(f"pretrained base net -> {out / 'models' / 'base.cnn'}")


def cmd_features(args, cfg):
    samples = _read_samples(args.samples)
    net = minicnn.load_model(args.model)
    feats = np.stack(
        [minicnn.extract_features(net, GrayImage(s.pixels), args.tap) for s in samples]
    )
    grades = np.array([s.grade for s in samples])
    ids = np.array([s.sample_id for s in samples])
    np.savez(args.out, features=feats, grades=grades, sample_ids=ids, tap=args.tap)
    print(f"{feats.shape[0]} x {feats.shape[1]} features from tap {args.tap!r} -> {args.out}")


def cmd_train_svm(args, cfg):
    data = np.load(args.features, allow_pickle=False)
    feats, grades = data["features"], data["grades"]
    fcfg = cfg["features"]
    frac = fcfg["train_fraction"]
    tr, _, te = partition_indices(
        grades, SplitSpec((frac, 0.0, 1.0 - frac), seed=_seed(cfg, "feature_split"))
    )
    model = svm.train_ovr(
        feats[tr],
        grades[tr],
        svm.SvmTrainConfig(
            C=fcfg["svm_c"], epochs=fcfg["svm_epochs"], eta0=fcfg["svm_eta0"],
            seed=_seed(cfg, "feature_svm"),
        ),
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for grade, m in enumerate(model.models):
        svm.save_svm(m, out / f"ovr_grade{grade}.svm")
    acc = float(np.mean(svm.predict_grades(model, feats[te]) == grades[te]))
    (out / "accuracy.txt").write_text(f"test_accuracy {acc:.17g}\n")
    print(f"one-vs-rest accuracy on held-out {len(te)} samples: {acc:.3f}")


def cmd_finetune(args, cfg):
    samples = _read_samples(args.samples)
    base = minicnn.load_model(args.model)
    ftcfg = cfg["finetune"]
    ratios = (ftcfg["train_ratio"], ftcfg["val_ratio"], ftcfg["test_ratio"])
    tr, va, _ = partition_indices(
        [s.grade for s in samples], SplitSpec(ratios, seed=_seed(cfg, "finetune_split"))
    )
    from .splits import augment_flips

    train_s = augment_flips([samples[i] for i in tr], "train")
    val_s = [samples[i] for i in va]
    loss = minicnn.LOSS_SOFTMAX if args.loss == "classification" else minicnn.LOSS_EUCLIDEAN
    head = minicnn.HEAD_SOFTMAX if args.loss == "classification" else minicnn.HEAD_REGRESSION
    net = minicnn.replace_head(base, head, _seed(cfg, "head_init"))
    train_cfg = minicnn.TrainConfig(
        base_lr=ftcfg["base_lr"], epochs=ftcfg["epochs"], batch_size=ftcfg["batch_size"],
        momentum=ftcfg["momentum"], seed=_seed(cfg, "finetune"),
    )
    is_reg = loss == minicnn.LOSS_EUCLIDEAN
    best, curves = minicnn.finetune(
        net, _as_batch(train_s, is_reg), _as_batch(val_s, is_reg), loss, train_cfg
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    minicnn.save_model(best, out / f"finetune_{args.loss}.cnn")
    (out / f"finetune_{args.loss}.csv").write_text(curves.to_csv())
    print(f"fine-tuned ({args.loss}) -> {out / f'finetune_{args.loss}.cnn'}")


def cmd_evaluate(args, cfg):
    samples = _read_samples(args.samples)
    net = minicnn.load_model(args.model)
    xs = np.stack([s.pixels[None] for s in samples])
    truth = np.array([s.grade for s in samples])
    out = minicnn.predict_outputs(net, xs)
    if net.head_kind == minicnn.HEAD_SOFTMAX:
        preds = out.argmax(axis=1)
        print(f"accuracy {np.mean(preds == truth):.3f}  mse {metrics.mse(truth, preds.astype(float)):.3f}")
    else:
        values = out[:, 0]
        preds = np.array([metrics.round_to_grade(v) for v in values])
        print(
            f"mse {metrics.mse(truth, values):.3f}  rounded mse {metrics.mse(truth, preds.astype(float)):.3f}"
            f"  rounded accuracy {np.mean(preds == truth):.3f}"
        )
    report = metrics.class_report(metrics.confusion(truth, preds))
    print(report.to_table(), end="")
    if args.out:
        Path(args.out).write_text(report.to_csv())


def cmd_run(args, cfg):
    report = run_experiment(cfg, args.out)
    print(print_summary(report), end="")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="kneegrade",
        description="Knee-OA severity pipeline: detection, grading, evaluation.",
    )
    parser.add_argument("--config", help="INI config file (defaults apply when omitted)")
    parser.add_argument("--seed", type=int, help="override [run].seed")
    parser.add_argument("--out", default="runs/latest", help="output directory or file")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("synth", help="generate a synthetic corpus under --out")

    p = sub.add_parser("annotate", help="serve the annotation UI/API")
    p.add_argument("--corpus", required=True)
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--detector", help="svm-v1 model for prefill detections")
    p.add_argument("--frontend", help="built frontend directory to serve at /")

    p = sub.add_parser("train-detector", help="train the gradient-SVM joint detector")
    p.add_argument("--corpus", required=True)

    p = sub.add_parser("detect", help="run a detector over a corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--method", choices=("svm", "template"), default="svm")
    p.add_argument("--model", help="svm-v1 detector (required for --method svm)")

    p = sub.add_parser("eval-detect", help="Jaccard-evaluate detections")
    p.add_argument("--corpus", required=True)
    p.add_argument("--detections", required=True)

    p = sub.add_parser("extract", help="extract joint-region samples")
    p.add_argument("--corpus", required=True)

    sub.add_parser("pretrain", help="pretrain the base net on the source task")

    p = sub.add_parser("features", help="extract named-layer features")
    p.add_argument("--samples", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--tap", default="fc-feat")

    p = sub.add_parser("train-svm", help="one-vs-rest grading on stored features")
    p.add_argument("--features", required=True)

    p = sub.add_parser("finetune", help="replace head and fine-tune")
    p.add_argument("--samples", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--loss", choices=("classification", "regression"), required=True)

    p = sub.add_parser("evaluate", help="evaluate a fine-tuned model on samples")
    p.add_argument("--samples", required=True)
    p.add_argument("--model", required=True)

    sub.add_parser("run", help="run the full experiment")
    return parser


COMMANDS = {
    "synth": cmd_synth,
    "annotate": cmd_annotate,
    "train-detector": cmd_train_detector,
    "detect": cmd_detect,
    "eval-detect": cmd_eval_detect,
    "extract": cmd_extract,
    "pretrain": cmd_pretrain,
    "features": cmd_features,
    "train-svm": cmd_train_svm,
    "finetune": cmd_finetune,
    "evaluate": cmd_evaluate,
    "run": cmd_run,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    overrides = {}
    if args.seed is not None:
        overrides["run.seed"] = args.seed
    cfg = load_config(args.config, overrides)
    COMMANDS[args.command](args, cfg)
    return 0


if __name__ == "__main__":
    sys.exit(main())
