"""Dataset manifests and the CSV schemas they load from.

Labels CSV: header ``image_id,path,kl_grade``; paths may be relative to the
CSV's directory (or an explicit image dir). Annotations CSV: header
``image_id,side,x,y,w,h`` in integer original-image coordinates, one row per
(image, side). Annotation writes are atomic (temp file + rename).
"""

from __future__ import annotations

import csv
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

from ..detect import AnnotationRecord
from ..errors import DataError
from ..imaging import BBox

LABELS_HEADER = ["image_id", "path", "kl_grade"]
ANNOTATIONS_HEADER = ["image_id", "side", "x", "y", "w", "h"]

__all__ = [
    "ManifestRecord",
    "DatasetManifest",
    "load_manifest",
    "read_annotations_csv",
    "write_annotations_csv",
    "write_labels_csv",
]


@dataclass(frozen=True)
class ManifestRecord:
    image_id: str
    path: str
    grade: int
    annotations: dict = field(default_factory=dict)  # side -> AnnotationRecord


@dataclass(frozen=True)
class DatasetManifest:
    records: tuple

    def __post_init__(self):
        ids = [r.image_id for r in self.records]
        if len(set(ids)) != len(ids):
            raise DataError("manifest contains duplicate image ids")
        object.__setattr__(self, "records", tuple(self.records))

    def __len__(self) -> int:
        return len(self.records)

    def by_id(self, image_id: str) -> ManifestRecord:
        for r in self.records:
            if r.image_id == image_id:
                return r
        raise KeyError(image_id)

    def grade_counts(self) -> dict:
        counts = {g: 0 for g in range(5)}
        for r in self.records:
            counts[r.grade] += 1
        return counts

    def all_annotations(self) -> list:
        out = []
        for r in self.records:
            for side in ("left", "right"):
                if side in r.annotations:
                    out.append(r.annotations[side])
        return out


def _open_csv(path, expected_header, what):
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise DataError(f"cannot read {what} CSV {p}: {exc}") from exc
    rows = list(csv.reader(text.splitlines()))
    if not rows or rows[0] != expected_header:
        raise DataError(
            f"{what} CSV {p} must start with header {','.join(expected_header)}"
        )
    return rows[1:]


def read_annotations_csv(path) -> list:
    """Parse annotation rows into AnnotationRecord objects."""
    records = []
    seen = set()
    for lineno, row in enumerate(_open_csv(path, ANNOTATIONS_HEADER, "annotations"), start=2):
        if len(row) != 6:
            raise DataError(f"annotations row {lineno}: expected 6 fields, got {len(row)}")
        image_id, side = row[0], row[1]
        try:
            x, y, w, h = (int(v) for v in row[2:])
            record = AnnotationRecord(image_id, side, BBox(x, y, w, h))
        except ValueError as exc:
            raise DataError(f"annotations row {lineno}: {exc}") from exc
        if record.key in seen:
            raise DataError(f"annotations row {lineno}: duplicate record for {record.key}")
        seen.add(record.key)
        records.append(record)
    return records


def write_annotations_csv(path, records) -> None:
    """Atomically rewrite the annotations CSV, rows sorted by (image, side)."""
    p = Path(path)
    rows = [",".join(ANNOTATIONS_HEADER)]
    for r in sorted(records, key=lambda r: r.key):
        rows.append(f"{r.image_id},{r.side},{r.box.x},{r.box.y},{r.box.w},{r.box.h}")
    payload = "\n".join(rows) + "\n"
    fd, tmp = tempfile.mkstemp(dir=p.parent, prefix=p.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(payload)
        os.replace(tmp, p)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_labels_csv(path, records) -> None:
    rows = [",".join(LABELS_HEADER)]
    for r in records:
        rows.append(f"{r.image_id},{r.path},{r.grade}")
    Path(path).write_text("\n".join(rows) + "\n")


def load_manifest(labels_csv, annotations_csv=None, image_dir=None) -> DatasetManifest:
    """Load and validate a dataset manifest.

    Raises DataError (citing the offending row) for duplicate ids, grades
    outside 0..4, missing image files, or annotations referencing unknown
    image ids.
    """
    base = Path(image_dir) if image_dir else Path(labels_csv).parent
    records = []
    seen = set()
    for lineno, row in enumerate(_open_csv(labels_csv, LABELS_HEADER, "labels"), start=2):
        if len(row) != 3:
            raise DataError(f"labels row {lineno}: expected 3 fields, got {len(row)}")
        image_id, rel, grade_s = row
        if image_id in seen:
            raise DataError(f"labels row {lineno}: duplicate image id {image_id!r}")
        seen.add(image_id)
        try:
            grade = int(grade_s)
        except ValueError as exc:
            raise DataError(f"labels row {lineno}: bad grade {grade_s!r}") from exc
        if not (0 <= grade <= 4):
            raise DataError(f"labels row {lineno}: grade {grade} outside 0..4")
        path = Path(rel)
        if not path.is_absolute():
            path = base / path
        if not path.is_file():
            raise DataError(f"labels row {lineno}: image file {path} does not exist")
        records.append(ManifestRecord(image_id, str(path), grade, {}))

    if annotations_csv is not None:
        by_id = {r.image_id: r for r in records}
        for record in read_annotations_csv(annotations_csv):
            owner = by_id.get(record.image_id)
            if owner is None:
                raise DataError(
                    f"annotation references unknown image id {record.image_id!r}"
                )
            owner.annotations[record.side] = record
    return DatasetManifest(tuple(records))
