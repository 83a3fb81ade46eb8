"""Synthetic radiograph-like corpus generator.

Each image is a bilateral "radiograph": a smooth, jittered background with
low-frequency blobs and sensor noise, plus one planted knee-joint structure
per half. A joint is a pair of bright horizontal bone bands (femur/tibia
edges) separated by a darker joint-space gap. Severity is real and ordinal:
the gap narrows and the band edge contrast strengthens monotonically with
grade, with per-image jitter so adjacent grades overlap.

Per-image brightness offsets and background blobs are deliberate confounders
for raw-intensity template matching; horizontal-gradient features are
invariant to the offset, which is what gives the SVM detector its edge.

Everything is drawn from a single seeded generator in a fixed order, so a
config yields a byte-identical corpus every time. Ground truth (grade per
image, one joint box per side in original coordinates, and the sampled
generator parameters) is written alongside the images.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..detect import AnnotationRecord, center_box_at_scale, rescale_box
from ..imaging import GrayImage, save_image
from .manifest import (
    DatasetManifest,
    ManifestRecord,
    write_annotations_csv,
    write_labels_csv,
)

__all__ = ["SynthConfig", "synth_generate"]


@dataclass(frozen=True)
class SynthConfig:
    images_per_grade: int = 40
    width: int = 1000
    height: int = 600
    gap_grade0: float = 56.0  # joint-space gap (px) at grade 0
    gap_grade4: float = 12.0  # narrowed gap at grade 4
    edge_grade0: float = 0.28  # band contrast at grade 0
    edge_grade4: float = 0.52  # sclerotic, stronger edges at grade 4
    noise: float = 0.02
    brightness_jitter: float = 0.12
    blob_count: int = 6
    gap_jitter: float = 0.18  # relative per-image gap spread; adjacent grades overlap
    edge_jitter: float = 0.12
    detect_scale: float = 0.1  # working scale the 20x20 annotation convention refers to
    seed: int = 0

    def __post_init__(self):
        if self.images_per_grade < 1:
            raise ValueError("images_per_grade must be >= 1")
        if self.width < 300 or self.height < 300:
            raise ValueError("images must be at least 300x300 for joint extraction")
        if not (0.0 < self.detect_scale <= 1.0):
            raise ValueError("detect_scale must lie in (0, 1]")
        if self.gap_grade4 >= self.gap_grade0:
            raise ValueError("joint gap must narrow with grade")

    def gap_for(self, grade: int) -> float:
        return self.gap_grade0 + (self.gap_grade4 - self.gap_grade0) * grade / 4.0

    def edge_for(self, grade: int) -> float:
        return self.edge_grade0 + (self.edge_grade4 - self.edge_grade0) * grade / 4.0


def _stamp_joint(canvas, cx, cy, gap, edge, joint_w, band, rng):
    """Draw femur/tibia bands around (cx, cy).

    The tibial plateau is flat; the femoral condyle bulges downward at the
    joint center, so its bottom edge is a parabola with its apex at cx. The
    gap between the two measures `gap` at the center and widens laterally.
    Curved-vs-flat edge geometry encodes the joint center in edge positions,
    which is what gradient features localize on."""
    h, w = canvas.shape
    half_w = joint_w // 2
    x_lo = max(0, cx - half_w)
    x_hi = min(w, cx + half_w)
    xs = np.arange(x_lo, x_hi)
    hann = 0.5 * (1.0 - np.cos(2.0 * np.pi * (xs - x_lo + 0.5) / (x_hi - x_lo)))
    plateau = np.minimum(1.0, 1.6 * hann)  # flat top, soft lateral ends
    half_gap = gap / 2.0
    sag = rng.uniform(12.0, 26.0)  # condyle drop from lateral ends to center
    dip = sag * (1.0 - ((xs - cx) / max(half_w, 1)) ** 2)  # 0 at ends, sag at cx
    femur_bottom = np.round(cy - half_gap - sag + dip)  # sharp subchondral edge
    femur_top = femur_bottom - band * 1.6
    tibia_top = float(round(cy + half_gap))  # sharp tibial plateau edge
    tibia_bottom = tibia_top + band
    fade = rng.uniform(24.0, 36.0)  # soft outer edges: no sobel response there
    femur_gain = edge * rng.uniform(0.8, 1.2)
    tibia_gain = edge * rng.uniform(0.8, 1.2)
    gap_depth = rng.uniform(0.35, 0.65) * edge
    rows = np.arange(h, dtype=np.float64)[:, None]
    femur_w = np.clip((rows - femur_top[None, :]) / fade, 0.0, 1.0) * (rows < femur_bottom[None, :])
    gap_w = (rows >= femur_bottom[None, :]) & (rows < tibia_top)
    tibia_w = (rows >= tibia_top) * np.clip((tibia_bottom + fade - rows) / fade, 0.0, 1.0)
    # trabecular speckle: smooth vertical modulation of the band interiors;
    # it individualizes raw intensities without moving the sharp edges
    amp = rng.uniform(0.05, 0.12)
    wavelength = rng.uniform(18.0, 40.0)
    phase = rng.uniform(0.0, 2.0 * np.pi)
    speckle = 1.0 + amp * np.sin(2.0 * np.pi * rows / wavelength + phase)
    canvas[:, x_lo:x_hi] += femur_gain * plateau * femur_w * speckle
    canvas[:, x_lo:x_hi] -= gap_depth * plateau * gap_w
    canvas[:, x_lo:x_hi] += tibia_gain * plateau * tibia_w * speckle


def _render(cfg: SynthConfig, grade: int, rng) -> tuple:
    h, w = cfg.height, cfg.width
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    base = (
        0.42
        + 0.16 * rng.uniform(-1.0, 1.0) * (yy / h)
        + 0.10 * rng.uniform(-1.0, 1.0) * (xx / w)
    )
    for _ in range(cfg.blob_count):
        bx = rng.uniform(0, w)
        by = rng.uniform(0, h)
        sx = rng.uniform(40.0, 160.0)
        sy = rng.uniform(40.0, 160.0)
        amp = rng.uniform(-0.16, 0.16)
        base += amp * np.exp(-(((xx - bx) / sx) ** 2 + ((yy - by) / sy) ** 2) / 2.0)

    gap = cfg.gap_for(grade) * rng.uniform(1.0 - cfg.gap_jitter, 1.0 + cfg.gap_jitter)
    edge = cfg.edge_for(grade) * rng.uniform(1.0 - cfg.edge_jitter, 1.0 + cfg.edge_jitter)
    # joint centers snap to the working-scale pixel grid so a perfectly
    # aligned 20x20 detection window is geometrically centered on the joint
    step = int(round(1.0 / cfg.detect_scale))
    margin_d = 11  # working-scale margin keeping annotation boxes inside
    half_d = (w // 2) // step
    cy_lo, cy_hi = int(0.36 * h) // step, int(0.64 * h) // step
    centers = {}
    for side, (x0, x1) in (
        ("left", (margin_d, half_d - margin_d)),
        ("right", (half_d + margin_d, w // step - margin_d)),
    ):
        cx = int(rng.integers(x0, x1)) * step
        cy = int(rng.integers(cy_lo, cy_hi)) * step
        joint_w = int(rng.uniform(150.0, 190.0))
        band = int(rng.uniform(24.0, 34.0))
        _stamp_joint(base, cx, cy, gap, edge, joint_w, band, rng)
        centers[side] = (cx, cy)
    base += rng.normal(0.0, cfg.noise, size=(h, w))
    base += rng.uniform(-cfg.brightness_jitter, cfg.brightness_jitter)
    return np.clip(base, 0.0, 1.0), centers, gap, edge


def synth_generate(cfg: SynthConfig, out_dir) -> DatasetManifest:
    """Generate the corpus under out_dir: images/, labels.csv,
    annotations.csv, params.csv. Returns the loaded-equivalent manifest."""
    out = Path(out_dir)
    images_dir = out / "images"
    try:
        images_dir.mkdir(parents=True, exist_ok=True)
        probe = out / ".write-probe"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise ValueError(f"output directory {out} is not writable: {exc}") from exc

    rng = np.random.default_rng(cfg.seed)
    records = []
    csv_rows = []
    annotations = []
    params_rows = ["image_id,grade,gap,edge"]
    index = 0
    for grade in range(5):
        for _ in range(cfg.images_per_grade):
            image_id = f"img_{index:04d}"
            pixels, centers, gap, edge = _render(cfg, grade, rng)
            rel = f"images/{image_id}.png"
            save_image(GrayImage(pixels), out / rel, bits=8)
            ann = {}
            for side in ("left", "right"):
                cx, cy = centers[side]
                box = rescale_box(center_box_at_scale(cx, cy, cfg.detect_scale), cfg.detect_scale)
                record = AnnotationRecord(image_id, side, box)
                annotations.append(record)
                ann[side] = record
            records.append(ManifestRecord(image_id, str(out / rel), grade, ann))
            csv_rows.append(ManifestRecord(image_id, rel, grade))
            params_rows.append(f"{image_id},{grade},{gap:.17g},{edge:.17g}")
            index += 1
    write_labels_csv(out / "labels.csv", csv_rows)
    write_annotations_csv(out / "annotations.csv", annotations)
    (out / "params.csv").write_text("\n".join(params_rows) + "\n")
    return DatasetManifest(tuple(records))
