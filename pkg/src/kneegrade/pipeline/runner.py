"""End-to-end experiment orchestration.

`run_experiment` executes the configured stages in order:

1. corpus        synthetic generation (or loading a real manifest)
2. detection     template bank + gradient-SVM detector, both scanned over
                 the corpus, Jaccard-evaluated against annotations
3. extraction    ground-truth joint regions, resampled to the CNN input size
4. pretraining   base net trained on a source-task corpus (different
                 generator regime), standing in for external weights
5. feature taps  linear SVM grading on activations from named layers
6. fine-tuning   head replacement + fine-tuning under classification and
                 regression losses with shared base weights/splits/seeds,
                 MSE/accuracy comparison against a most-frequent baseline

Artifacts land under the run directory: config.resolved, models/, reports/,
curves/, annotations.csv, and timing/. Timing lives outside reports/ because
wall-clock is the one number that legitimately differs between otherwise
identical runs; everything under reports/ and models/ is bit-reproducible
from the config and seeds.

Stage seeds derive from [run].seed by fixed offsets, so a single seed pins
the whole run while stages stay decoupled.
"""

from __future__ import annotations

import shutil
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import metrics, minicnn, svm
from ..detect import (
    WINDOW,
    Detection,
    build_templates,
    center_box_at_scale,
    detect_svm,
    detect_template_matching,
    evaluate_detections,
    extract_joint_region,
    gradient_features,
    preprocess_radiograph,
    timed_detections,
    train_joint_detector,
)
from ..errors import DataError, KneegradeError
from ..imaging import BBox, GrayImage, downscale, extract_patch, load_image
from .config import resolve_config
from .manifest import DatasetManifest, load_manifest
from .splits import JointSample, SplitSpec, augment_flips, partition_indices
from .synth import SynthConfig, synth_generate

# fixed offsets applied to [run].seed, one per seeded stage
SEED_OFFSETS = {
    "synth": 0,
    "source_synth": 1,
    "negatives": 2,
    "patch_split": 3,
    "detector": 4,
    "pretrain_split": 5,
    "base_init": 6,
    "pretrain": 7,
    "feature_split": 8,
    "feature_svm": 9,
    "finetune_split": 10,
    "head_init": 11,
    "finetune": 12,
}


class StageError(KneegradeError):
    """A pipeline stage failed; partial artifacts are retained."""


@dataclass
class RunReport:
    detection: dict = field(default_factory=dict)  # method -> DetectionReport
    patch_accuracy: float = float("nan")
    patch_report: object = None
    feature_accuracy: dict = field(default_factory=dict)  # tap -> accuracy
    grading: dict = field(default_factory=dict)
    timing: dict = field(default_factory=dict)
    skipped: list = field(default_factory=list)


def _seed(cfg: dict, stage: str) -> int:
    return int(cfg["run"]["seed"]) + SEED_OFFSETS[stage]


def _synth_cfg(cfg: dict, seed: int, images_per_grade=None, source=False) -> SynthConfig:
    s = cfg["synth"]
    if source:
        # the "pre-training" stand-in: same imagery family, different regime
        return SynthConfig(
            images_per_grade=images_per_grade or cfg["pretrain"]["images_per_grade"],
            width=s["width"],
            height=s["height"],
            gap_grade0=72.0,
            gap_grade4=24.0,
            edge_grade0=0.20,
            edge_grade4=0.40,
            noise=0.03,
            brightness_jitter=0.10,
            blob_count=8,
            gap_jitter=s["gap_jitter"],
            edge_jitter=s["edge_jitter"],
            detect_scale=cfg["detect"]["scale"],
            seed=seed,
        )
    return SynthConfig(
        images_per_grade=images_per_grade or s["images_per_grade"],
        width=s["width"],
        height=s["height"],
        gap_grade0=s["gap_grade0"],
        gap_grade4=s["gap_grade4"],
        edge_grade0=s["edge_grade0"],
        edge_grade4=s["edge_grade4"],
        noise=s["noise"],
        brightness_jitter=s["brightness_jitter"],
        blob_count=s["blob_count"],
        gap_jitter=s["gap_jitter"],
        edge_jitter=s["edge_jitter"],
        detect_scale=cfg["detect"]["scale"],
        seed=seed,
    )


def stage_corpus(cfg: dict, out: Path) -> DatasetManifest:
    """Generate the synthetic corpus, or load the configured real manifest."""
    if cfg["synth"]["enabled"]:
        return synth_generate(_synth_cfg(cfg, _seed(cfg, "synth")), out / "corpus")
    d = cfg["data"]
    if not d["labels_csv"]:
        raise DataError("synth disabled and no data.labels_csv configured")
    return load_manifest(
        d["labels_csv"], d["annotations_csv"] or None, d["images_dir"] or None
    )


def _clamp_window(box: BBox, img: GrayImage) -> BBox:
    x = min(max(box.x, 0), img.width - WINDOW)
    y = min(max(box.y, 0), img.height - WINDOW)
    return BBox(x, y, WINDOW, WINDOW)


def _annotation_windows(record, img, scale):
    out = {}
    for side in ("left", "right"):
        ann = record.annotations.get(side)
        if ann is None:
            raise DataError(f"image {record.image_id} lacks a {side} annotation")
        out[side] = _clamp_window(center_box_at_scale(*ann.box.center(), scale), img)
    return out


def _valid_negative_starts(width, height, boxes):
    """All window starts whose box has zero Jaccard with every given box."""
    xs = np.arange(width - WINDOW + 1)
    ys = np.arange(height - WINDOW + 1)
    ok = np.ones((ys.size, xs.size), dtype=bool)
    for b in boxes:
        bad_x = (xs > b.x - WINDOW) & (xs < b.x + WINDOW)
        bad_y = (ys > b.y - WINDOW) & (ys < b.y + WINDOW)
        ok &= ~(bad_y[:, None] & bad_x[None, :])
    return np.argwhere(ok)


def sample_detector_patches(manifest, preprocessed, cfg):
    """Positive windows at annotated centers; negatives uniform over the
    zero-Jaccard window grid, both at the working scale."""
    dcfg = cfg["detect"]
    n_pos, n_neg = dcfg["positives"], dcfg["negatives"]
    ids = sorted(preprocessed.keys())
    pos = []
    for image_id in ids:
        if len(pos) >= n_pos:
            break
        record = manifest.by_id(image_id)
        img = preprocessed[image_id]
        for box in _annotation_windows(record, img, dcfg["scale"]).values():
            if len(pos) >= n_pos:
                break
            pos.append(extract_patch(img, box))
    if len(pos) < n_pos:
        raise DataError(f"only {len(pos)} annotated joints available, need {n_pos} positives")
    rng = np.random.default_rng(_seed(cfg, "negatives"))
    neg = []
    i = 0
    attempts = 0
    while len(neg) < n_neg:
        if attempts > 10 * n_neg + len(ids):
            raise DataError("cannot place enough zero-Jaccard negative windows")
        attempts += 1
        record = manifest.by_id(ids[i % len(ids)])
        i += 1
        img = preprocessed[record.image_id]
        boxes = _annotation_windows(record, img, dcfg["scale"]).values()
        starts = _valid_negative_starts(img.width, img.height, list(boxes))
        if starts.shape[0] == 0:
            continue
        take = min(3, n_neg - len(neg), starts.shape[0])
        for y, x in starts[rng.choice(starts.shape[0], size=take, replace=False)]:
            neg.append(extract_patch(img, BBox(int(x), int(y), WINDOW, WINDOW)))
    return pos, neg


def stage_detection(cfg: dict, manifest: DatasetManifest, out: Path, report: RunReport):
    dcfg = cfg["detect"]
    scale, stride = dcfg["scale"], dcfg["stride"]
    preprocessed = {
        r.image_id: preprocess_radiograph(load_image(r.path), scale, dcfg["equalize"])
        for r in manifest.records
    }
    annotated = [
        (preprocessed[r.image_id], r.annotations[side], r.grade)
        for r in manifest.records
        for side in ("left", "right")
        if side in r.annotations
    ]
    templates = build_templates(annotated, dcfg["templates_per_grade"], scale)

    pos, neg = sample_detector_patches(manifest, preprocessed, cfg)
    svm_cfg = svm.SvmTrainConfig(
        C=dcfg["svm_c"],
        epochs=dcfg["svm_epochs"],
        eta0=dcfg["svm_eta0"],
        seed=_seed(cfg, "detector"),
        standardize=dcfg["svm_standardize"],
    )

    # patch-classifier metrics on a held-out fraction (the detector itself is
    # then retrained on every patch)
    feats = np.stack([gradient_features(p) for p in pos + neg])
    labels = np.concatenate([np.ones(len(pos)), -np.ones(len(neg))])
    rng = np.random.default_rng(_seed(cfg, "patch_split"))
    perm = rng.permutation(len(labels))
    n_train = int(round(dcfg["patch_train_fraction"] * len(labels)))
    tr, te = perm[:n_train], perm[n_train:]
    held = svm.train_linear_svm(feats[tr], labels[tr], svm_cfg)
    pred = np.where(svm.decision_matrix(held, feats[te]) >= 0.0, 1.0, -1.0)
    report.patch_accuracy = float(np.mean(pred == labels[te]))
    cm = metrics.confusion(
        np.where(labels[te] > 0, 1, 0), np.where(pred > 0, 1, 0)
    )
    report.patch_report = metrics.class_report(cm)

    detector = train_joint_detector(pos, neg, svm_cfg)
    svm.save_svm(detector, out / "models" / "detector.svm")

    truth = manifest.all_annotations()
    pairs = [(r.image_id, preprocessed[r.image_id]) for r in manifest.records]
    found_t, sec_t = timed_detections(
        pairs, lambda im: detect_template_matching(im, templates, scale, stride)
    )
    found_s, sec_s = timed_detections(
        pairs, lambda im: detect_svm(im, detector, scale, stride)
    )
    report.detection["template"] = evaluate_detections(truth, found_t, sec_t)
    report.detection["svm"] = evaluate_detections(truth, found_s, sec_s)
    report.timing["template_seconds_per_image"] = sec_t
    report.timing["svm_seconds_per_image"] = sec_s
    return detector


def extract_joint_samples(manifest: DatasetManifest, cfg: dict) -> list:
    """Ground-truth joint regions resampled to the CNN input size."""
    scale = cfg["detect"]["scale"]
    size = cfg["extract"]["size"]
    target = cfg["extract"]["cnn_input"]
    samples = []
    for record in manifest.records:
        original = load_image(record.path)
        for side in ("left", "right"):
            ann = record.annotations.get(side)
            if ann is None:
                raise DataError(f"image {record.image_id} lacks a {side} annotation")
            det = Detection(center_box_at_scale(*ann.box.center(), scale), 0.0, scale)
            crop = extract_joint_region(original, det, size)
            small = downscale(crop, target / size)
            if small.width != target or small.height != target:
                raise DataError(
                    f"extract.size {size} does not resample to cnn_input {target}"
                )
            samples.append(JointSample(f"{record.image_id}:{side}", record.grade, small.pixels))
    return samples


def _as_batch(samples, float_labels=False):
    return [
        (s.pixels[None], float(s.grade) if float_labels else s.grade) for s in samples
    ]


def stage_pretrain(cfg: dict, out: Path, report: RunReport):
    """Train the base net on the source-task corpus."""
    pcfg = cfg["pretrain"]
    source = synth_generate(
        _synth_cfg(cfg, _seed(cfg, "source_synth"), source=True), out / "source_corpus"
    )
    samples = extract_joint_samples(source, cfg)
    tr, va, _ = partition_indices(
        [s.grade for s in samples], SplitSpec((0.8, 0.2, 0.0), seed=_seed(cfg, "pretrain_split"))
    )
    net = minicnn.build_network(
        (1, cfg["extract"]["cnn_input"], cfg["extract"]["cnn_input"]),
        head_kind=minicnn.HEAD_SOFTMAX,
        seed=_seed(cfg, "base_init"),
    )
    train_cfg = minicnn.TrainConfig(
        base_lr=pcfg["base_lr"],
        epochs=pcfg["epochs"],
        batch_size=pcfg["batch_size"],
        momentum=pcfg["momentum"],
        seed=_seed(cfg, "pretrain"),
    )
    base, curves = minicnn.finetune(
        net,
        _as_batch([samples[i] for i in tr]),
        _as_batch([samples[i] for i in va]),
        minicnn.LOSS_SOFTMAX,
        train_cfg,
    )
    minicnn.save_model(base, out / "models" / "base.cnn")
    (out / "curves" / "pretrain.csv").write_text(curves.to_csv())
    report.timing["pretrain_epochs"] = pcfg["epochs"]
    return base


def stage_features(cfg: dict, samples, base, report: RunReport):
    """Feature-tap + one-vs-rest SVM grading accuracy per named layer."""
    fcfg = cfg["features"]
    grades = np.array([s.grade for s in samples])
    frac = fcfg["train_fraction"]
    tr, _, te = partition_indices(
        grades, SplitSpec((frac, 0.0, 1.0 - frac), seed=_seed(cfg, "feature_split"))
    )
    svm_cfg = svm.SvmTrainConfig(
        C=fcfg["svm_c"], epochs=fcfg["svm_epochs"], eta0=fcfg["svm_eta0"],
        seed=_seed(cfg, "feature_svm"),
    )
    for tap in fcfg["taps"]:
        feats = np.stack(
            [minicnn.extract_features(base, GrayImage(s.pixels), tap) for s in samples]
        )
        model = svm.train_ovr(feats[tr], grades[tr], svm_cfg)
        preds = svm.predict_grades(model, feats[te])
        report.feature_accuracy[tap] = float(np.mean(preds == grades[te]))


def stage_finetune(cfg: dict, samples, base, out: Path, report: RunReport):
    """Classification-vs-regression fine-tuning with shared everything."""
    ftcfg = cfg["finetune"]
    ratios = (ftcfg["train_ratio"], ftcfg["val_ratio"], ftcfg["test_ratio"])
    tr, va, te = partition_indices(
        [s.grade for s in samples], SplitSpec(ratios, seed=_seed(cfg, "finetune_split"))
    )
    train_s = augment_flips([samples[i] for i in tr], "train")
    val_s = [samples[i] for i in va]
    test_s = [samples[i] for i in te]
    train_cfg = minicnn.TrainConfig(
        base_lr=ftcfg["base_lr"],
        epochs=ftcfg["epochs"],
        batch_size=ftcfg["batch_size"],
        momentum=ftcfg["momentum"],
        seed=_seed(cfg, "finetune"),
    )
    head_seed = _seed(cfg, "head_init")

    clsf_net, clsf_curves = minicnn.finetune(
        minicnn.replace_head(base, minicnn.HEAD_SOFTMAX, head_seed),
        _as_batch(train_s), _as_batch(val_s), minicnn.LOSS_SOFTMAX, train_cfg,
    )
    reg_net, reg_curves = minicnn.finetune(
        minicnn.replace_head(base, minicnn.HEAD_REGRESSION, head_seed),
        _as_batch(train_s, True), _as_batch(val_s, True), minicnn.LOSS_EUCLIDEAN, train_cfg,
    )
    minicnn.save_model(clsf_net, out / "models" / "finetune_classification.cnn")
    minicnn.save_model(reg_net, out / "models" / "finetune_regression.cnn")
    (out / "curves" / "finetune_classification.csv").write_text(clsf_curves.to_csv())
    (out / "curves" / "finetune_regression.csv").write_text(reg_curves.to_csv())

    x_test = np.stack([s.pixels[None] for s in test_s])
    truth = np.array([s.grade for s in test_s])
    preds_clsf = minicnn.predict_outputs(clsf_net, x_test).argmax(axis=1)
    values_reg = minicnn.predict_outputs(reg_net, x_test)[:, 0]
    preds_reg = np.array([metrics.round_to_grade(v) for v in values_reg])
    train_grades = [s.grade for s in train_s]
    baseline = min(set(train_grades), key=lambda g: (-train_grades.count(g), g))

    report.grading = {
        "mse_baseline": metrics.mse(truth, np.full(truth.shape, float(baseline))),
        "mse_classification": metrics.mse(truth, preds_clsf.astype(np.float64)),
        "mse_regression": metrics.mse(truth, values_reg),
        "mse_regression_rounded": metrics.mse(truth, preds_reg.astype(np.float64)),
        "accuracy_classification": float(np.mean(preds_clsf == truth)),
        "accuracy_regression_rounded": float(np.mean(preds_reg == truth)),
        "baseline_grade": baseline,
        "class_report_classification": metrics.class_report(metrics.confusion(truth, preds_clsf)),
        "class_report_regression": metrics.class_report(metrics.confusion(truth, preds_reg)),
    }


def _write_reports(cfg: dict, out: Path, report: RunReport) -> None:
    reports = out / "reports"
    for method, rep in report.detection.items():
        (reports / f"detection_{method}.txt").write_text(rep.to_text(include_timing=False))
    if report.patch_report is not None:
        (reports / "patch_classifier.txt").write_text(
            f"accuracy {report.patch_accuracy:.17g}\n" + report.patch_report.to_table()
        )
    if report.feature_accuracy:
        lines = ["tap,accuracy"]
        lines += [f"{tap},{acc:.17g}" for tap, acc in report.feature_accuracy.items()]
        (reports / "feature_taps.csv").write_text("\n".join(lines) + "\n")
    if report.grading:
        g = report.grading
        keys = (
            "mse_baseline",
            "mse_classification",
            "mse_regression",
            "mse_regression_rounded",
            "accuracy_classification",
            "accuracy_regression_rounded",
            "baseline_grade",
        )
        (reports / "grading.txt").write_text(
            "".join(f"{k} {g[k]:.17g}\n" for k in keys)
        )
        (reports / "class_report_classification.csv").write_text(
            g["class_report_classification"].to_csv()
        )
        (reports / "class_report_regression.csv").write_text(
            g["class_report_regression"].to_csv()
        )
    if report.skipped:
        (reports / "skipped.txt").write_text(
            "".join(f"{name}\n" for name in report.skipped)
        )
    if report.timing:
        timing = out / "timing"
        timing.mkdir(exist_ok=True)
        (timing / "timing.txt").write_text(
            "".join(f"{k} {v:.6g}\n" for k, v in report.timing.items())
        )


def print_summary(report: RunReport) -> str:
    """Human-readable run summary (MSE shown with 3 decimals)."""
    lines = []
    for method, rep in report.detection.items():
        lines.append(f"detection [{method}]")
        lines.append(rep.to_table().rstrip())
    if not np.isnan(report.patch_accuracy):
        lines.append(f"patch classifier accuracy: {report.patch_accuracy:.3f}")
    for tap, acc in report.feature_accuracy.items():
        lines.append(f"feature tap {tap}: accuracy {acc:.3f}")
    if report.grading:
        g = report.grading
        lines.append("grading MSE (lower is better)")
        lines.append(f"  baseline (grade {g['baseline_grade']}): {g['mse_baseline']:.3f}")
        lines.append(f"  classification head:      {g['mse_classification']:.3f}")
        lines.append(f"  regression head:          {g['mse_regression']:.3f}")
        lines.append(f"  regression rounded:       {g['mse_regression_rounded']:.3f}")
        lines.append(
            f"accuracy: classification {g['accuracy_classification']:.3f}, "
            f"regression rounded {g['accuracy_regression_rounded']:.3f}"
        )
    for name in report.skipped:
        lines.append(f"stage skipped: {name}")
    return "\n".join(lines) + "\n"


def run_experiment(cfg: dict, out_dir) -> RunReport:
    """Execute all configured stages; artifacts land under out_dir."""
    out = Path(out_dir)
    for sub in ("models", "reports", "curves"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    (out / "config.resolved").write_text(resolve_config(cfg))
    report = RunReport()

    def run_stage(name, fn, *args):
        try:
            return fn(*args)
        except Exception as exc:
            raise StageError(f"stage {name!r} failed: {exc}") from exc

    manifest = run_stage("corpus", stage_corpus, cfg, out)
    if cfg["synth"]["enabled"]:
        shutil.copyfile(out / "corpus" / "annotations.csv", out / "annotations.csv")

    if cfg["detect"]["enabled"]:
        run_stage("detection", stage_detection, cfg, manifest, out, report)
    else:
        report.skipped.append("detection")

    need_samples = cfg["features"]["enabled"] or cfg["finetune"]["enabled"]
    samples = run_stage("extraction", extract_joint_samples, manifest, cfg) if need_samples else []

    base = None
    if cfg["pretrain"]["enabled"] and need_samples:
        base = run_stage("pretraining", stage_pretrain, cfg, out, report)
    elif need_samples:
        base = minicnn.build_network(
            (1, cfg["extract"]["cnn_input"], cfg["extract"]["cnn_input"]),
            head_kind=minicnn.HEAD_SOFTMAX,
            seed=_seed(cfg, "base_init"),
        )
        minicnn.save_model(base, out / "models" / "base.cnn")
        report.skipped.append("pretraining")

    if cfg["features"]["enabled"]:
        run_stage("features", stage_features, cfg, samples, base, report)
    else:
        report.skipped.append("features")

    if cfg["finetune"]["enabled"]:
        run_stage("finetune", stage_finetune, cfg, samples, base, out, report)
    else:
        report.skipped.append("finetune")

    run_stage("reports", _write_reports, cfg, out, report)
    return report
