#!/usr/bin/env python3
"""Detection dress rehearsal: generate a corpus, train both detectors,
print Jaccard rates, timing, and the SVM offset histogram."""

import sys
import time
from collections import Counter

import numpy as np

from kneegrade import detect, svm
from kneegrade.detect import (
    WINDOW,
    build_templates,
    center_box_at_scale,
    detect_svm,
    detect_template_matching,
    evaluate_detections,
    preprocess_radiograph,
    rescale_box,
    train_joint_detector,
)
from kneegrade.imaging import BBox, extract_patch, load_image
from kneegrade.pipeline.synth import SynthConfig, synth_generate


def valid_starts(w, h, boxes):
    xs = np.arange(w - WINDOW + 1)
    ys = np.arange(h - WINDOW + 1)
    ok = np.ones((ys.size, xs.size), bool)
    for b in boxes:
        ok &= ~(
            ((ys > b.y - WINDOW) & (ys < b.y + WINDOW))[:, None]
            & ((xs > b.x - WINDOW) & (xs < b.x + WINDOW))[None, :]
        )
    return np.argwhere(ok)


def clamp_box(b, img):
    return BBox(
        min(max(b.x, 0), img.width - WINDOW),
        min(max(b.y, 0), img.height - WINDOW),
        WINDOW,
        WINDOW,
    )


def main(out_dir, images_per_grade=40, seed=20260810):
    t_all = time.perf_counter()
    man = synth_generate(SynthConfig(images_per_grade=images_per_grade, seed=seed), out_dir)
    scale = 0.1
    pre = {r.image_id: preprocess_radiograph(load_image(r.path), scale, True) for r in man.records}
    annotated = [(pre[r.image_id], r.annotations[s], r.grade) for r in man.records for s in ("left", "right")]
    tset = build_templates(annotated, per_grade=10, scale=scale)

    rng = np.random.default_rng(12345)
    pos, neg = [], []
    ids = sorted(pre.keys())
    i = 0
    while len(pos) < 200:
        r = man.by_id(ids[i])
        i += 1
        img = pre[r.image_id]
        for side in ("left", "right"):
            if len(pos) >= 200:
                break
            b = center_box_at_scale(*r.annotations[side].box.center(), scale)
            pos.append(extract_patch(img, clamp_box(b, img)))
    j = 0
    while len(neg) < 600:
        r = man.by_id(ids[j % len(ids)])
        j += 1
        img = pre[r.image_id]
        tbs = [
            clamp_box(center_box_at_scale(*r.annotations[s].box.center(), scale), img)
            for s in ("left", "right")
        ]
        starts = valid_starts(img.width, img.height, tbs)
        for y, x in starts[rng.choice(starts.shape[0], size=min(3, 600 - len(neg)), replace=False)]:
            neg.append(extract_patch(img, BBox(int(x), int(y), WINDOW, WINDOW)))

    model = train_joint_detector(pos, neg, svm.SvmTrainConfig(seed=5, standardize=False))
    truth = man.all_annotations()
    pairs = [(r.image_id, pre[r.image_id]) for r in man.records]
    found_t, sec_t = detect.timed_detections(pairs, lambda im: detect_template_matching(im, tset, scale))
    found_s, sec_s = detect.timed_detections(pairs, lambda im: detect_svm(im, model, scale))
    rep_t = evaluate_detections(truth, found_t, sec_t)
    rep_s = evaluate_detections(truth, found_s, sec_s)
    print("TEMPLATE:\n" + rep_t.to_text())
    print("SVM:\n" + rep_s.to_text())
    print("speed ratio svm/template:", sec_s / sec_t)
    print("total:", round(time.perf_counter() - t_all, 1), "s")
    offsets = Counter()
    for (iid, side), det in found_s.items():
        det_o = rescale_box(det.box, det.scale)
        ann = man.by_id(iid).annotations[side].box
        offsets[((det_o.x - ann.x) // 10, (det_o.y - ann.y) // 10)] += 1
    print("svm offsets:", sorted(offsets.items(), key=lambda kv: -kv[1])[:8])


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "/tmp/probe_detect")
