"""Knee-joint center detection and Jaccard-based evaluation.

Radiographs are preprocessed (downscaled to a working scale, histogram
equalized), split into left/right halves, and scanned with a 20x20 sliding
window. Two detectors share that protocol:

- template matching: minimum Euclidean distance to a bank of exemplar
  patches, score stored as the negated distance so higher is better;
- linear SVM over horizontal-gradient features: each window's flattened
  Sobel response, standardized, scored by the decision function.

Because the Sobel transform and the standardizer are affine in the window
pixels, the SVM scan folds into a single correlation kernel plus bias; the
fold is exact up to float rounding and is what makes the SVM detector fast.
Detections live at the working scale and carry it, so boxes can be mapped
back to original-image coordinates (where annotations are stored and Jaccard
indices are computed).
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import DataError
from .imaging import BBox, GrayImage, downscale, equalize_hist, extract_patch, sobel_horizontal, split_halves
from .svm import LinearSvmModel, SvmTrainConfig, train_linear_svm

WINDOW = 20  # detection window side at working scale, from the annotation protocol

__all__ = [
    "WINDOW",
    "TemplateSet",
    "Detection",
    "AnnotationRecord",
    "DetectionReport",
    "preprocess_radiograph",
    "center_box_at_scale",
    "rescale_box",
    "build_templates",
    "detect_template_matching",
    "train_joint_detector",
    "gradient_features",
    "effective_patch_kernel",
    "detect_svm",
    "extract_joint_region",
    "jaccard",
    "evaluate_detections",
]


@dataclass(frozen=True)
class TemplateSet:
    """Bank of 20x20 exemplar patches with their source grades."""

    patches: np.ndarray  # (T, 20, 20) float64
    grades: tuple

    def __post_init__(self):
        p = np.asarray(self.patches, dtype=np.float64)
        if p.ndim != 3 or p.shape[0] == 0:
            raise ValueError(f"templates must be a non-empty (T, {WINDOW}, {WINDOW}) stack")
        if p.shape[1:] != (WINDOW, WINDOW):
            raise ValueError(f"every template must be {WINDOW}x{WINDOW}, got {p.shape[1:]}")
        if len(self.grades) != p.shape[0]:
            raise ValueError("grades length must match template count")
        p = p.copy()
        p.flags.writeable = False
        object.__setattr__(self, "patches", p)

    def __len__(self) -> int:
        return self.patches.shape[0]


@dataclass(frozen=True)
class Detection:
    """A 20x20 window at the working scale with its detector score."""

    box: BBox
    score: float
    scale: float

    def __post_init__(self):
        if self.box.w != WINDOW or self.box.h != WINDOW:
            raise ValueError(f"detection box must be {WINDOW}x{WINDOW}")
        if not np.isfinite(self.score):
            raise ValueError("detection score must be finite")
        if not (0.0 < self.scale <= 1.0):
            raise ValueError(f"scale must lie in (0, 1], got {self.scale}")


@dataclass(frozen=True)
class AnnotationRecord:
    """Ground-truth joint box for one side of one image, in original coords."""

    image_id: str
    side: str  # "left" | "right"
    box: BBox

    def __post_init__(self):
        if self.side not in ("left", "right"):
            raise ValueError(f"side must be 'left' or 'right', got {self.side!r}")

    @property
    def key(self) -> tuple:
        return (self.image_id, self.side)


@dataclass(frozen=True)
class DetectionReport:
    """Jaccard threshold rates over a detection run."""

    rate_exact: float  # J = 1
    rate_half: float  # J >= 0.5
    rate_any: float  # J > 0
    mean_jaccard: float
    seconds_per_image: float = 0.0

    def __post_init__(self):
        rates = (self.rate_exact, self.rate_half, self.rate_any)
        if any(not (0.0 <= r <= 1.0) for r in rates):
            raise ValueError(f"rates must lie in [0, 1], got {rates}")
        if not (self.rate_exact <= self.rate_half <= self.rate_any):
            raise ValueError(f"rates must be monotone: {rates}")
        if not (0.0 <= self.mean_jaccard <= 1.0):
            raise ValueError(f"mean Jaccard must lie in [0, 1], got {self.mean_jaccard}")

    def to_text(self, include_timing: bool = True) -> str:
        lines = [
            f"rate_exact {self.rate_exact:.17g}",
            f"rate_half {self.rate_half:.17g}",
            f"rate_any {self.rate_any:.17g}",
            f"mean_jaccard {self.mean_jaccard:.17g}",
        ]
        if include_timing:
            lines.append(f"seconds_per_image {self.seconds_per_image:.6g}")
        return "\n".join(lines) + "\n"

    def to_table(self) -> str:
        return (
            f"{'J = 1':>10} {'J >= 0.5':>10} {'J > 0':>10} {'mean J':>10}\n"
            f"{self.rate_exact:>10.3f} {self.rate_half:>10.3f} "
            f"{self.rate_any:>10.3f} {self.mean_jaccard:>10.3f}\n"
        )


# ---------------------------------------------------------------------------
# coordinate helpers
# ---------------------------------------------------------------------------

def preprocess_radiograph(img: GrayImage, scale: float = 0.1, equalize: bool = True) -> GrayImage:
    """Down-scale to the working scale and (by default) equalize intensities."""
    out = downscale(img, scale)
    return equalize_hist(out) if equalize else out


def center_box_at_scale(cx: float, cy: float, scale: float) -> BBox:
    """20x20 working-scale box centered on an original-coordinate point."""
    cxd = int(round(cx * scale))
    cyd = int(round(cy * scale))
    return BBox(cxd - WINDOW // 2, cyd - WINDOW // 2, WINDOW, WINDOW)


def rescale_box(box: BBox, scale: float) -> BBox:
    """Map a working-scale box back to original-image coordinates."""
    return BBox(
        int(round(box.x / scale)),
        int(round(box.y / scale)),
        int(round(box.w / scale)),
        int(round(box.h / scale)),
    )


def _clamp_shift(start: int, size: int, limit: int) -> int:
    """Shift a window start so [start, start+size) fits in [0, limit)."""
    return min(max(start, 0), limit - size)


# ---------------------------------------------------------------------------
# template matching
# ---------------------------------------------------------------------------

def build_templates(annotated, per_grade: int, scale: float = 1.0) -> TemplateSet:
    """Pick the first per_grade exemplar patches per grade, by id order.

    annotated: list of (working-scale GrayImage, AnnotationRecord, grade);
    annotation boxes are original-coordinate and get mapped through scale.
    Raises DataError when any grade 0..4 has fewer than per_grade examples.
    """
    if per_grade < 1:
        raise ValueError(f"per_grade must be >= 1, got {per_grade}")
    by_grade: dict = {g: [] for g in range(5)}
    for img, record, grade in annotated:
        if grade not in by_grade:
            raise ValueError(f"grade {grade} out of range 0..4")
        by_grade[grade].append((record.key, img, record))
    patches = []
    grades = []
    for grade in range(5):
        entries = sorted(by_grade[grade], key=lambda e: e[0])
        if len(entries) < per_grade:
            raise DataError(
                f"grade {grade} has only {len(entries)} annotated example(s), need {per_grade}"
            )
        for _, img, record in entries[:per_grade]:
            cx, cy = record.box.center()
            box = center_box_at_scale(cx, cy, scale)
            x = _clamp_shift(box.x, WINDOW, img.width)
            y = _clamp_shift(box.y, WINDOW, img.height)
            patches.append(extract_patch(img, BBox(x, y, WINDOW, WINDOW)).pixels)
            grades.append(grade)
    return TemplateSet(np.stack(patches), tuple(grades))


def _scan_halves(img: GrayImage, scan_one):
    """Apply scan_one(half_pixels) to each half; offset x back to full coords."""
    (left, _), (right, off) = split_halves(img)
    detections = []
    for half, offset in ((left, 0), (right, off)):
        if half.width < WINDOW or half.height < WINDOW:
            raise ValueError(
                f"half-image {half.width}x{half.height} smaller than the {WINDOW}x{WINDOW} window"
            )
        y, x, value = scan_one(half.pixels)
        detections.append((BBox(x + offset, y, WINDOW, WINDOW), value))
    return detections


def detect_template_matching(img: GrayImage, templates: TemplateSet, scale: float = 1.0, stride: int = 1):
    """Nearest-template window per half-image.

    Returns (left Detection, right Detection); scores are negated Euclidean
    distances so higher is better. Ties break to the smallest (y, x).
    """
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    results = _scan_halves(
        img, lambda px: _kernels.min_distance_scan(px, templates.patches, stride)
    )
    return tuple(
        Detection(box, -float(np.sqrt(d2)), scale) for box, d2 in results
    )


# ---------------------------------------------------------------------------
# SVM detector
# ---------------------------------------------------------------------------

def gradient_features(patch: GrayImage) -> np.ndarray:
    """Flattened Sobel horizontal-gradient response of a window patch."""
    return sobel_horizontal(patch).values.ravel()


def train_joint_detector(pos, neg, cfg: SvmTrainConfig = SvmTrainConfig()) -> LinearSvmModel:
    """Train the joint/non-joint classifier on 20x20 patches.

    Features are each patch's flattened Sobel horizontal gradients,
    standardized inside the SVM; labels are +1 (joint) / -1 (background).
    """
    if not pos or not neg:
        raise DataError("need at least one positive and one negative patch")
    for patch in list(pos) + list(neg):
        if patch.width != WINDOW or patch.height != WINDOW:
            raise ValueError(f"patches must be {WINDOW}x{WINDOW}, got {patch.width}x{patch.height}")
    feats = np.stack([gradient_features(p) for p in list(pos) + list(neg)])
    labels = np.concatenate([np.ones(len(pos)), -np.ones(len(neg))])
    return train_linear_svm(feats, labels, cfg)


def _sobel_operator_matrix() -> np.ndarray:
    """Matrix S with S[j, i] = d(sobel feature j)/d(window pixel i)."""
    dim = WINDOW * WINDOW
    s = np.empty((dim, dim))
    for i in range(dim):
        basis = np.zeros(dim)
        basis[i] = 1.0
        s[:, i] = gradient_features(GrayImage(basis.reshape(WINDOW, WINDOW)))
    return s


_SOBEL_MATRIX = None


def effective_patch_kernel(model: LinearSvmModel) -> tuple:
    """Fold standardizer + Sobel + weights into (kernel 20x20, bias).

    decision(window) = sum(kernel * window) + bias exactly (up to float
    rounding), because the Sobel response and the standardizer are affine in
    the window pixels.
    """
    global _SOBEL_MATRIX
    if model.dim != WINDOW * WINDOW:
        raise ValueError(f"detector model dim {model.dim} does not match a {WINDOW}x{WINDOW} window")
    if _SOBEL_MATRIX is None:
        _SOBEL_MATRIX = _sobel_operator_matrix()
    w_std = model.weights / model.std
    kernel = (w_std @ _SOBEL_MATRIX).reshape(WINDOW, WINDOW)
    bias = model.bias - float(w_std @ model.mean)
    return kernel, bias


def detect_svm(img: GrayImage, model: LinearSvmModel, scale: float = 1.0, stride: int = 1):
    """Maximum-decision-value window per half-image.

    Returns (left Detection, right Detection); ties break to the smallest
    (y, x).
    """
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    kernel, bias = effective_patch_kernel(model)
    results = _scan_halves(
        img, lambda px: _kernels.correlate_scan(px, kernel, bias, stride)
    )
    return tuple(Detection(box, float(score), scale) for box, score in results)


# ---------------------------------------------------------------------------
# region extraction and evaluation
# ---------------------------------------------------------------------------

def extract_joint_region(original: GrayImage, det: Detection, size: int = 300) -> GrayImage:
    """size x size crop of the original image around the detection center.

    The working-scale center maps to original coordinates via 1/scale; a
    window running past an edge is shifted back inside (never shrunk).
    """
    if size < 1:
        raise ValueError(f"size must be >= 1, got {size}")
    if original.width < size or original.height < size:
        raise ValueError(
            f"image {original.width}x{original.height} smaller than the {size}x{size} crop"
        )
    cx, cy = det.box.center()
    ox = int(round(cx / det.scale))
    oy = int(round(cy / det.scale))
    x = _clamp_shift(ox - size // 2, size, original.width)
    y = _clamp_shift(oy - size // 2, size, original.height)
    return extract_patch(original, BBox(x, y, size, size))


def _intersection_union(a: BBox, d: BBox) -> tuple:
    ix = max(0, min(a.right, d.right) - max(a.x, d.x))
    iy = max(0, min(a.bottom, d.bottom) - max(a.y, d.y))
    inter = ix * iy
    union = a.area() + d.area() - inter
    return inter, union


def jaccard(a: BBox, d: BBox) -> float:
    """Intersection area over union area of two pixel boxes."""
    inter, union = _intersection_union(a, d)
    return inter / union


def evaluate_detections(truth, found, seconds_per_image: float = 0.0) -> DetectionReport:
    """Score detections against annotations in original coordinates.

    truth: iterable of AnnotationRecord; found: mapping from
    (image_id, side) to Detection. Threshold comparisons run on integer
    intersection/union counts, so J = 1 and J >= 0.5 are exact.
    """
    by_key = {}
    for record in truth:
        if record.key in by_key:
            raise DataError(f"duplicate annotation for {record.key}")
        by_key[record.key] = record
    if not found:
        raise DataError("no detections to evaluate")
    n = exact = half = any_overlap = 0
    jsum = 0.0
    for key, det in found.items():
        record = by_key.get(tuple(key))
        if record is None:
            raise DataError(f"detection {tuple(key)} has no matching annotation")
        det_box = rescale_box(det.box, det.scale)
        inter, union = _intersection_union(record.box, det_box)
        n += 1
        exact += inter == union
        half += 2 * inter >= union
        any_overlap += inter > 0
        jsum += inter / union
    return DetectionReport(
        rate_exact=exact / n,
        rate_half=half / n,
        rate_any=any_overlap / n,
        mean_jaccard=jsum / n,
        seconds_per_image=seconds_per_image,
    )


def timed_detections(images, detector) -> tuple:
    """Run detector(img) over (image_id, GrayImage) pairs, timing the scans.

    Returns (found dict keyed by (image_id, side), mean seconds per image).
    """
    found = {}
    elapsed = 0.0
    count = 0
    for image_id, img in images:
        t0 = time.perf_counter()
        left, right = detector(img)
        elapsed += time.perf_counter() - t0
        count += 1
        found[(image_id, "left")] = left
        found[(image_id, "right")] = right
    return found, elapsed / max(count, 1)
