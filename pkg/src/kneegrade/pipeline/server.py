"""Annotation HTTP service backing the browser labeling tool.

Endpoints:

- ``GET /images``                 id list with grade, dimensions, and which
                                  sides are annotated (unannotated-first work
                                  queues are built client-side from this)
- ``GET /images/{id}``            the raster as PNG
- ``GET /annotations/{id}``       stored left/right boxes (original coords)
- ``PUT /annotations/{id}``       body {side, cx, cy}: the center becomes a
                                  20x20 working-scale box rescaled to
                                  original coordinates; every accepted PUT
                                  atomically rewrites the annotation CSV
- ``GET /detections/{id}``        detector prefill (404 if no model loaded)

Writes are serialized through a lock; one record per (image, side) always
holds. If a built frontend exists (``frontend/dist``), it is served at /.
"""

from __future__ import annotations

import threading
from pathlib import Path

from fastapi import FastAPI, HTTPException, Response
from fastapi.middleware.cors import CORSMiddleware
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel

from ..detect import AnnotationRecord, center_box_at_scale, detect_svm, preprocess_radiograph, rescale_box
from ..imaging import encode_png, load_image
from .manifest import DatasetManifest, read_annotations_csv, write_annotations_csv

__all__ = ["create_app", "serve_annotation"]


class AnnotationIn(BaseModel):
    side: str
    cx: int
    cy: int


def _box_json(box):
    return {"x": box.x, "y": box.y, "w": box.w, "h": box.h}


def create_app(
    manifest: DatasetManifest,
    annotations_csv,
    detector=None,
    scale: float = 0.1,
    equalize: bool = True,
    frontend_dir=None,
) -> FastAPI:
    app = FastAPI(title="kneegrade annotation service")
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"]
    )

    records = {r.image_id: r for r in manifest.records}
    annotations_path = Path(annotations_csv)
    lock = threading.Lock()
    annotations: dict = {}
    if annotations_path.is_file():
        for rec in read_annotations_csv(annotations_path):
            if rec.image_id in records:
                annotations[rec.key] = rec
    else:
        for r in manifest.records:
            for side, rec in r.annotations.items():
                annotations[rec.key] = rec
    dims_cache: dict = {}

    def image_or_404(image_id: str):
        record = records.get(image_id)
        if record is None:
            raise HTTPException(status_code=404, detail=f"unknown image id {image_id!r}")
        return record

    def dims(image_id: str):
        if image_id not in dims_cache:
            img = load_image(records[image_id].path)
            dims_cache[image_id] = (img.width, img.height)
        return dims_cache[image_id]

    @app.get("/images")
    def list_images():
        out = []
        for image_id in sorted(records):
            w, h = dims(image_id)
            out.append(
                {
                    "image_id": image_id,
                    "grade": records[image_id].grade,
                    "width": w,
                    "height": h,
                    "annotated": {
                        "left": (image_id, "left") in annotations,
                        "right": (image_id, "right") in annotations,
                    },
                }
            )
        return out

    @app.get("/images/{image_id}")
    def get_image(image_id: str):
        record = image_or_404(image_id)
        return Response(content=encode_png(load_image(record.path)), media_type="image/png")

    @app.get("/annotations/{image_id}")
    def get_annotations(image_id: str):
        image_or_404(image_id)
        out = {"image_id": image_id, "left": None, "right": None}
        for side in ("left", "right"):
            rec = annotations.get((image_id, side))
            if rec is not None:
                out[side] = _box_json(rec.box)
        return out

    @app.put("/annotations/{image_id}")
    def put_annotation(image_id: str, body: AnnotationIn):
        image_or_404(image_id)
        if body.side not in ("left", "right"):
            raise HTTPException(status_code=422, detail=f"side must be left or right, got {body.side!r}")
        w, h = dims(image_id)
        box = rescale_box(center_box_at_scale(body.cx, body.cy, scale), scale)
        if not box.inside(w, h):
            raise HTTPException(
                status_code=422,
                detail=f"center ({body.cx},{body.cy}) puts the box outside the {w}x{h} image",
            )
        record = AnnotationRecord(image_id, body.side, box)
        with lock:
            annotations[record.key] = record
            write_annotations_csv(annotations_path, annotations.values())
        return {"image_id": image_id, "side": body.side, "box": _box_json(box)}

    @app.get("/detections/{image_id}")
    def get_detections(image_id: str):
        record = image_or_404(image_id)
        if detector is None:
            raise HTTPException(status_code=404, detail="no detector model configured")
        img = preprocess_radiograph(load_image(record.path), scale, equalize)
        left, right = detect_svm(img, detector, scale)
        return {
            "image_id": image_id,
            "left": {"box": _box_json(rescale_box(left.box, left.scale)), "score": left.score},
            "right": {"box": _box_json(rescale_box(right.box, right.scale)), "score": right.score},
        }

    if frontend_dir is not None and Path(frontend_dir).is_dir():
        app.mount("/", StaticFiles(directory=str(frontend_dir), html=True), name="frontend")
    return app


def serve_annotation(
    manifest: DatasetManifest,
    port: int,
    annotations_csv,
    detector=None,
    scale: float = 0.1,
    equalize: bool = True,
    host: str = "127.0.0.1",
    frontend_dir=None,
):
    """Run the annotation service (blocking)."""
    import uvicorn

    app = create_app(manifest, annotations_csv, detector, scale, equalize, frontend_dir)
    uvicorn.run(app, host=host, port=port)
