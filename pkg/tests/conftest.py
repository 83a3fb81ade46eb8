import numpy as np
import pytest

from kneegrade.detect import WINDOW, center_box_at_scale
from kneegrade.imaging import BBox, extract_patch, load_image
from kneegrade.pipeline.synth import SynthConfig, synth_generate


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory):
    """Shared 40-image synthetic corpus (8 per grade), detection-ready."""
    out = tmp_path_factory.mktemp("corpus")
    manifest = synth_generate(SynthConfig(images_per_grade=8, seed=424242), out)
    return manifest, out


@pytest.fixture(scope="session")
def preprocessed_corpus(small_corpus):
    from kneegrade.detect import preprocess_radiograph

    manifest, _ = small_corpus
    pre = {
        r.image_id: preprocess_radiograph(load_image(r.path), 0.1, True)
        for r in manifest.records
    }
    return manifest, pre


def clamp_window(box, img):
    x = min(max(box.x, 0), img.width - WINDOW)
    y = min(max(box.y, 0), img.height - WINDOW)
    return BBox(x, y, WINDOW, WINDOW)


def patches_from(manifest, pre, n_pos, n_neg, seed):
    """Positive/negative detector patches, the runner's sampling in miniature."""
    rng = np.random.default_rng(seed)
    pos, neg = [], []
    ids = sorted(pre.keys())
    i = 0
    while len(pos) < n_pos:
        r = manifest.by_id(ids[i % len(ids)])
        i += 1
        img = pre[r.image_id]
        for side in ("left", "right"):
            if len(pos) >= n_pos:
                break
            b = center_box_at_scale(*r.annotations[side].box.center(), 0.1)
            pos.append(extract_patch(img, clamp_window(b, img)))
    j = 0
    while len(neg) < n_neg:
        r = manifest.by_id(ids[j % len(ids)])
        j += 1
        img = pre[r.image_id]
        boxes = [
            clamp_window(center_box_at_scale(*r.annotations[s].box.center(), 0.1), img)
            for s in ("left", "right")
        ]
        xs = np.arange(img.width - WINDOW + 1)
        ys = np.arange(img.height - WINDOW + 1)
        ok = np.ones((ys.size, xs.size), bool)
        for b in boxes:
            ok &= ~(
                ((ys > b.y - WINDOW) & (ys < b.y + WINDOW))[:, None]
                & ((xs > b.x - WINDOW) & (xs < b.x + WINDOW))[None, :]
            )
        starts = np.argwhere(ok)
        take = min(4, n_neg - len(neg))
        for y, x in starts[rng.choice(starts.shape[0], size=take, replace=False)]:
            neg.append(extract_patch(img, BBox(int(x), int(y), WINDOW, WINDOW)))
    return pos, neg


@pytest.fixture(scope="session")
def trained_detector(preprocessed_corpus):
    from kneegrade.detect import train_joint_detector
    from kneegrade.svm import SvmTrainConfig

    manifest, pre = preprocessed_corpus
    pos, neg = patches_from(manifest, pre, 60, 180, seed=7)
    model = train_joint_detector(pos, neg, SvmTrainConfig(seed=5, standardize=False))
    return model
