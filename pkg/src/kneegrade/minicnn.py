"""Minimal CNN engine with named layers and feature taps.

Activations and parameters are float64 numpy arrays; image tensors are
(channels, height, width), batches (N, C, H, W). The default architecture is
a desk-scale stand-in for the large pre-trained nets:

    conv1(8@3x3, pad 1) -> relu1 -> pool1(2x2)
    -> conv2(16@3x3, pad 1) -> relu2 -> pool2(2x2)   tap "pool2"
    -> fc-feat(32)                                    tap "fc-feat"
    -> head (5-way softmax or 1-D linear regression)

Per-layer learning-rate multipliers drive fine-tuning: transferred layers run
at the base rate, a freshly replaced head at 10x, multiplier 0 freezes a
layer bit-exactly. All training is seeded and bit-reproducible; conv/pool
inner loops go through the kernels in ``_kernels``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import _kernels
from .errors import DataError
from .imaging import GrayImage

__all__ = [
    "LayerSpec",
    "Network",
    "TrainConfig",
    "LearningCurves",
    "build_network",
    "default_specs",
    "forward",
    "extract_features",
    "loss_softmax_ce",
    "loss_euclidean",
    "backward",
    "sgd_step",
    "replace_head",
    "finetune",
    "predict_outputs",
    "save_model",
    "load_model",
]

HEAD_SOFTMAX = "softmax-5"
HEAD_REGRESSION = "regression-1"
LOSS_SOFTMAX = "softmax-ce"
LOSS_EUCLIDEAN = "euclidean"
_HEAD_FOR_LOSS = {LOSS_SOFTMAX: HEAD_SOFTMAX, LOSS_EUCLIDEAN: HEAD_REGRESSION}
_HEAD_DIMS = {HEAD_SOFTMAX: 5, HEAD_REGRESSION: 1}


@dataclass(frozen=True)
class LayerSpec:
    name: str
    kind: str  # conv | relu | maxpool | fc | head
    lr_mult: float = 1.0
    out_channels: int = 0  # conv
    kernel: int = 0  # conv / maxpool
    stride: int = 1  # conv / maxpool
    pad: int = 0  # conv
    out_dim: int = 0  # fc / head

    def __post_init__(self):
        if self.lr_mult < 0:
            raise ValueError(f"lr_mult must be >= 0, got {self.lr_mult}")
        if self.kind not in ("conv", "relu", "maxpool", "fc", "head"):
            raise ValueError(f"unknown layer kind {self.kind!r}")

    @property
    def has_params(self) -> bool:
        return self.kind in ("conv", "fc", "head")


@dataclass
class TrainConfig:
    base_lr: float = 0.001
    epochs: int = 20
    batch_size: int = 32
    momentum: float = 0.9
    seed: int = 0

    def __post_init__(self):
        if self.base_lr <= 0:
            raise ValueError(f"base_lr must be positive, got {self.base_lr}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if not (0.0 <= self.momentum < 1.0):
            raise ValueError(f"momentum must lie in [0, 1), got {self.momentum}")


@dataclass
class LearningCurves:
    metric_name: str  # "accuracy" or "mse"
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    val_metric: list = field(default_factory=list)

    def to_csv(self) -> str:
        lines = ["epoch,train_loss,val_loss,val_metric"]
        for e, (tl, vl, vm) in enumerate(
            zip(self.train_loss, self.val_loss, self.val_metric), start=1
        ):
            lines.append(f"{e},{tl:.17g},{vl:.17g},{vm:.17g}")
        return "\n".join(lines) + "\n"


@dataclass
class Network:
    """Ordered named layers with their parameter tensors."""

    input_shape: tuple  # (C, H, W)
    head_kind: str  # softmax-5 | regression-1 | none
    specs: list  # list[LayerSpec]
    params: dict  # name -> {"w": array, "b": array}

    def copy(self) -> "Network":
        return Network(
            input_shape=self.input_shape,
            head_kind=self.head_kind,
            specs=list(self.specs),
            params={n: {k: v.copy() for k, v in p.items()} for n, p in self.params.items()},
        )

    def layer(self, name: str) -> LayerSpec:
        for spec in self.specs:
            if spec.name == name:
                return spec
        raise ValueError(f"network has no layer named {name!r}")


def _infer_shapes(specs, input_shape):
    """Shape after each layer; validates compatibility along the way."""
    shapes = []
    cur = tuple(input_shape)
    for spec in specs:
        if spec.kind == "conv":
            if len(cur) != 3:
                raise ValueError(f"conv layer {spec.name} needs a (C,H,W) input, got {cur}")
            c, h, w = cur
            ho = (h + 2 * spec.pad - spec.kernel) // spec.stride + 1
            wo = (w + 2 * spec.pad - spec.kernel) // spec.stride + 1
            if ho < 1 or wo < 1:
                raise ValueError(f"conv layer {spec.name} output collapses to {ho}x{wo}")
            cur = (spec.out_channels, ho, wo)
        elif spec.kind == "maxpool":
            if len(cur) != 3:
                raise ValueError(f"maxpool layer {spec.name} needs a (C,H,W) input")
            c, h, w = cur
            ho = (h - spec.kernel) // spec.stride + 1
            wo = (w - spec.kernel) // spec.stride + 1
            if ho < 1 or wo < 1:
                raise ValueError(f"maxpool layer {spec.name} output collapses to {ho}x{wo}")
            cur = (c, ho, wo)
        elif spec.kind == "relu":
            pass
        elif spec.kind in ("fc", "head"):
            cur = (spec.out_dim,)
        shapes.append(cur)
    return shapes


def _fan_dims(spec: LayerSpec, in_shape) -> tuple:
    if spec.kind == "conv":
        c = in_shape[0]
        fan_in = c * spec.kernel * spec.kernel
        fan_out = spec.out_channels * spec.kernel * spec.kernel
        return fan_in, fan_out
    flat = int(np.prod(in_shape))
    return flat, spec.out_dim


def _init_params(spec: LayerSpec, in_shape, rng) -> dict:
    fan_in, fan_out = _fan_dims(spec, in_shape)
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    if spec.kind == "conv":
        w = rng.uniform(-limit, limit, size=(spec.out_channels, in_shape[0], spec.kernel, spec.kernel))
        b = np.zeros(spec.out_channels)
    else:
        w = rng.uniform(-limit, limit, size=(spec.out_dim, fan_in))
        b = np.zeros(spec.out_dim)
    return {"w": w, "b": b}


def default_specs(head_kind: str = HEAD_SOFTMAX) -> list:
    head_dim = _HEAD_DIMS[head_kind]
    return [
        LayerSpec("conv1", "conv", out_channels=8, kernel=3, stride=1, pad=1),
        LayerSpec("relu1", "relu"),
        LayerSpec("pool1", "maxpool", kernel=2, stride=2),
        LayerSpec("conv2", "conv", out_channels=16, kernel=3, stride=1, pad=1),
        LayerSpec("relu2", "relu"),
        LayerSpec("pool2", "maxpool", kernel=2, stride=2),
        LayerSpec("fc-feat", "fc", out_dim=32),
        LayerSpec("head", "head", out_dim=head_dim),
    ]


def build_network(input_shape=(1, 64, 64), head_kind: str = HEAD_SOFTMAX, seed: int = 0, specs=None) -> Network:
    """Construct a network with seeded Glorot-uniform weights and zero biases."""
    if specs is None:
        specs = default_specs(head_kind)
    names = [s.name for s in specs]
    if len(set(names)) != len(names):
        raise ValueError(f"layer names must be unique, got {names}")
    shapes = _infer_shapes(specs, input_shape)
    if head_kind in _HEAD_DIMS:
        if specs[-1].kind != "head" or shapes[-1] != (_HEAD_DIMS[head_kind],):
            raise ValueError(f"head kind {head_kind} requires a final head layer of dim {_HEAD_DIMS[head_kind]}")
    rng = np.random.default_rng(seed)
    params = {}
    cur = tuple(input_shape)
    for spec, out_shape in zip(specs, shapes):
        if spec.has_params:
            params[spec.name] = _init_params(spec, cur, rng)
        cur = out_shape
    return Network(tuple(input_shape), head_kind, list(specs), params)


# ---------------------------------------------------------------------------
# forward / backward
# ---------------------------------------------------------------------------

def _conv_forward(x, spec, p):
    n, c, h, w = x.shape
    k, s, pad = spec.kernel, spec.stride, spec.pad
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    hp, wp = xp.shape[2], xp.shape[3]
    ho = (hp - k) // s + 1
    wo = (wp - k) // s + 1
    cols = _kernels.im2col(xp, k, s, ho, wo).reshape(n * ho * wo, -1)
    wr = p["w"].reshape(spec.out_channels, -1)
    out = cols @ wr.T + p["b"]
    out = out.reshape(n, ho, wo, spec.out_channels).transpose(0, 3, 1, 2)
    cache = (cols, x.shape, (hp, wp), (ho, wo))
    return out, cache


def _conv_backward(dout, spec, p, cache):
    cols, x_shape, (hp, wp), (ho, wo) = cache
    n, c, h, w = x_shape
    k, s, pad = spec.kernel, spec.stride, spec.pad
    dout2 = dout.transpose(0, 2, 3, 1).reshape(-1, spec.out_channels)
    wr = p["w"].reshape(spec.out_channels, -1)
    dw = (dout2.T @ cols).reshape(p["w"].shape)
    db = dout2.sum(axis=0)
    dcols = (dout2 @ wr).reshape(n, ho, wo, -1)
    dxp = _kernels.col2im_add(dcols, n, c, hp, wp, k, s, ho, wo)
    dx = dxp[:, :, pad : pad + h, pad : pad + w] if pad else dxp
    return dx, {"w": dw, "b": db}


def _fc_forward(x, p):
    flat = x.reshape(x.shape[0], -1)
    out = flat @ p["w"].T + p["b"]
    return out, (flat, x.shape)


def _fc_backward(dout, p, cache):
    flat, x_shape = cache
    dw = dout.T @ flat
    db = dout.sum(axis=0)
    dx = (dout @ p["w"]).reshape(x_shape)
    return dx, {"w": dw, "b": db}


def _forward_cached(net: Network, x: np.ndarray):
    """Run a batch through the net; returns (activations, caches)."""
    acts = {}
    caches = []
    cur = x
    for spec in net.specs:
        if spec.kind == "conv":
            cur, cache = _conv_forward(cur, spec, net.params[spec.name])
        elif spec.kind == "relu":
            cache = cur > 0
            cur = np.maximum(cur, 0.0)
        elif spec.kind == "maxpool":
            out, arg = _kernels.maxpool_forward(cur, spec.kernel, spec.stride)
            cache = (arg, cur.shape)
            cur = out
        else:  # fc / head
            cur, cache = _fc_forward(cur, net.params[spec.name])
        acts[spec.name] = cur
        caches.append(cache)
    return acts, caches


def _check_input(net: Network, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != net.input_shape:
        raise ValueError(f"input shape {x.shape} does not match network input {net.input_shape}")
    return x


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def forward(net: Network, x) -> dict:
    """Single-input forward pass returning every named layer's activation.

    The extra key "output" holds the head's probability vector for a
    softmax-5 head, or its raw value otherwise.
    """
    x = _check_input(net, x)
    acts, _ = _forward_cached(net, x[None])
    out = {name: a[0] for name, a in acts.items()}
    if net.head_kind == HEAD_SOFTMAX:
        out["output"] = _softmax(out["head"])
    elif "head" in out:
        out["output"] = out["head"]
    return out


def extract_features(net: Network, img: GrayImage, layer: str) -> np.ndarray:
    """Flattened activation of a named layer for a single grayscale input."""
    x = img.pixels[None]  # (1, H, W)
    acts = forward(net, x)
    if layer not in acts or layer == "output":
        known = [s.name for s in net.specs]
        raise ValueError(f"unknown layer {layer!r}; network layers: {known}")
    return np.ascontiguousarray(acts[layer]).ravel().copy()


def loss_softmax_ce(logits, label: int):
    """Cross-entropy of softmax(logits) against an integer grade label.

    Returns (loss, dloss/dlogits); stabilized by max subtraction.
    """
    z = np.asarray(logits, dtype=np.float64)
    if z.ndim != 1:
        raise ValueError(f"logits must be a vector, got shape {z.shape}")
    if not (0 <= label < z.shape[0]):
        raise ValueError(f"label {label} out of range for {z.shape[0]} classes")
    zs = z - z.max()
    lse = np.log(np.exp(zs).sum())
    loss = float(lse - zs[label])
    grad = np.exp(zs - lse)
    grad[label] -= 1.0
    return loss, grad


def loss_euclidean(pred, label: float):
    """Squared error of a 1-vector prediction against a numeric label."""
    p = np.asarray(pred, dtype=np.float64)
    if p.shape != (1,):
        raise ValueError(f"regression prediction must be a 1-vector, got shape {p.shape}")
    diff = float(p[0]) - float(label)
    return diff * diff, np.array([2.0 * diff])


def _batch_arrays(batch, input_shape):
    xs = np.stack([np.asarray(b[0], dtype=np.float64) for b in batch])
    if xs.shape[1:] != tuple(input_shape):
        raise ValueError(f"batch input shape {xs.shape[1:]} does not match network input {input_shape}")
    ys = np.array([b[1] for b in batch])
    return xs, ys


def _head_loss_and_grad(net, logits, ys, loss_kind):
    """Mean-over-batch loss and dloss/dlogits for the whole batch."""
    n = logits.shape[0]
    if loss_kind == LOSS_SOFTMAX:
        labels = ys.astype(np.int64)
        if labels.min() < 0 or labels.max() >= logits.shape[1]:
            raise ValueError("labels out of range for softmax head")
        probs = _softmax(logits)
        zs = logits - logits.max(axis=1, keepdims=True)
        lse = np.log(np.exp(zs).sum(axis=1))
        loss = float(np.mean(lse - zs[np.arange(n), labels]))
        dlogits = probs.copy()
        dlogits[np.arange(n), labels] -= 1.0
        dlogits /= n
    else:
        targets = ys.astype(np.float64)
        diff = logits[:, 0] - targets
        loss = float(np.mean(diff**2))
        dlogits = (2.0 * diff / n)[:, None]
    return loss, dlogits


def backward(net: Network, batch, loss_kind: str):
    """Mean-over-batch parameter gradients for every parameterized layer.

    batch is a list of (input, label). Returns (grads, batch_loss); grads is
    keyed by layer name with "w" and "b" entries. Learning-rate multipliers
    do not apply here (they scale the update step, not the gradient).
    """
    if loss_kind not in _HEAD_FOR_LOSS:
        raise ValueError(f"unknown loss kind {loss_kind!r}")
    if net.head_kind != _HEAD_FOR_LOSS[loss_kind]:
        raise ValueError(f"loss {loss_kind} requires head {_HEAD_FOR_LOSS[loss_kind]}, network has {net.head_kind}")
    if not batch:
        raise ValueError("batch must be non-empty")
    xs, ys = _batch_arrays(batch, net.input_shape)
    acts, caches = _forward_cached(net, xs)
    loss, dcur = _head_loss_and_grad(net, acts["head"], ys, loss_kind)
    grads = {}
    for spec, cache in zip(reversed(net.specs), reversed(caches)):
        if spec.kind == "conv":
            dcur, g = _conv_backward(dcur, spec, net.params[spec.name], cache)
            grads[spec.name] = g
        elif spec.kind == "relu":
            dcur = dcur * cache
        elif spec.kind == "maxpool":
            arg, in_shape = cache
            dcur = _kernels.maxpool_backward(dcur, arg, in_shape[2], in_shape[3])
        else:
            dcur, g = _fc_backward(dcur, net.params[spec.name], cache)
            grads[spec.name] = g
    return grads, loss


def sgd_step(net: Network, grads: dict, cfg: TrainConfig, state: dict | None = None) -> dict:
    """Momentum SGD update in place; returns the velocity state.

    Effective step per layer is base_lr * lr_mult applied to the
    momentum-accumulated gradient; a multiplier of 0 leaves the layer's
    parameters bit-identical.
    """
    if state is None:
        state = {}
    for spec in net.specs:
        if not spec.has_params:
            continue
        if spec.name not in grads:
            raise ValueError(f"missing gradient for layer {spec.name!r}")
        if spec.lr_mult == 0.0:
            continue
        p = net.params[spec.name]
        g = grads[spec.name]
        vel = state.setdefault(spec.name, {k: np.zeros_like(v) for k, v in p.items()})
        lr = cfg.base_lr * spec.lr_mult
        for k in p:
            vel[k] = cfg.momentum * vel[k] + g[k]
            p[k] -= lr * vel[k]
    return state


def replace_head(net: Network, head_kind: str, seed: int = 0) -> Network:
    """Swap in a freshly initialized head (lr_mult 10); transferred layers
    keep their weights and run at lr_mult 1."""
    if head_kind not in _HEAD_DIMS:
        raise ValueError(f"unknown head kind {head_kind!r}")
    if not net.specs or net.specs[-1].kind != "head":
        raise ValueError("network has no head layer to replace")
    shapes = _infer_shapes(net.specs[:-1], net.input_shape)
    in_shape = shapes[-1] if shapes else net.input_shape
    new_spec = replace(net.specs[-1], out_dim=_HEAD_DIMS[head_kind], lr_mult=10.0)
    rng = np.random.default_rng(seed)
    specs = [replace(s, lr_mult=1.0) for s in net.specs[:-1]] + [new_spec]
    params = {
        n: {k: v.copy() for k, v in p.items()}
        for n, p in net.params.items()
        if n != new_spec.name
    }
    params[new_spec.name] = _init_params(new_spec, in_shape, rng)
    return Network(net.input_shape, head_kind, specs, params)


def predict_outputs(net: Network, xs: np.ndarray, batch_size: int = 256) -> np.ndarray:
    """Head outputs for a stacked input batch: softmax probabilities (N, 5)
    for a softmax head, raw values (N, 1) for regression."""
    outs = []
    for start in range(0, xs.shape[0], batch_size):
        acts, _ = _forward_cached(net, xs[start : start + batch_size])
        logits = acts["head"]
        outs.append(_softmax(logits) if net.head_kind == HEAD_SOFTMAX else logits)
    return np.concatenate(outs, axis=0)


def _val_stats(net, xs, ys, loss_kind):
    out = predict_outputs(net, xs)
    if loss_kind == LOSS_SOFTMAX:
        labels = ys.astype(np.int64)
        probs = np.clip(out, 1e-300, None)
        val_loss = float(np.mean(-np.log(probs[np.arange(len(labels)), labels])))
        metric = float(np.mean(out.argmax(axis=1) == labels))
    else:
        diff = out[:, 0] - ys.astype(np.float64)
        val_loss = float(np.mean(diff**2))
        metric = val_loss
    return val_loss, metric


def finetune(net: Network, train, val, loss_kind: str, cfg: TrainConfig):
    """Seeded minibatch SGD; returns (best network, learning curves).

    train/val are lists of (input, label). The returned network carries the
    parameter snapshot from the epoch with the best validation metric
    (highest accuracy for classification, lowest MSE for regression; ties
    keep the earliest epoch).
    """
    if loss_kind not in _HEAD_FOR_LOSS:
        raise ValueError(f"unknown loss kind {loss_kind!r}")
    if net.head_kind != _HEAD_FOR_LOSS[loss_kind]:
        raise ValueError(f"loss {loss_kind} requires head {_HEAD_FOR_LOSS[loss_kind]}")
    if not train or not val:
        raise DataError("training and validation splits must be non-empty")
    work = net.copy()
    xs, ys = _batch_arrays(train, net.input_shape)
    vxs, vys = _batch_arrays(val, net.input_shape)
    rng = np.random.default_rng(cfg.seed)
    state: dict = {}
    metric_name = "accuracy" if loss_kind == LOSS_SOFTMAX else "mse"
    curves = LearningCurves(metric_name=metric_name)
    higher_better = loss_kind == LOSS_SOFTMAX
    best_metric = -np.inf if higher_better else np.inf
    best_params = None
    n = xs.shape[0]
    for _ in range(cfg.epochs):
        perm = rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = perm[start : start + cfg.batch_size]
            batch = [(xs[i], ys[i]) for i in idx]
            grads, loss = backward(work, batch, loss_kind)
            sgd_step(work, grads, cfg, state)
            total += loss * len(idx)
        train_loss = total / n
        val_loss, metric = _val_stats(work, vxs, vys, loss_kind)
        curves.train_loss.append(train_loss)
        curves.val_loss.append(val_loss)
        curves.val_metric.append(metric)
        improved = metric > best_metric if higher_better else metric < best_metric
        if improved:
            best_metric = metric
            best_params = {name: {k: v.copy() for k, v in p.items()} for name, p in work.params.items()}
    best = Network(work.input_shape, work.head_kind, list(work.specs), best_params)
    return best, curves


# ---------------------------------------------------------------------------
# persistence: versioned `cnn-v1` container
# ---------------------------------------------------------------------------

def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def save_model(net: Network, path) -> None:
    """Write the `cnn-v1` container: text header + little-endian float64
    parameter block (layer order, weights then biases)."""
    lines = [
        "cnn-v1",
        "input " + " ".join(str(d) for d in net.input_shape),
        f"head {net.head_kind}",
        f"layers {len(net.specs)}",
    ]
    for s in net.specs:
        fields = [f"lr_mult={_fmt(s.lr_mult)}"]
        if s.kind == "conv":
            fields += [f"out_channels={s.out_channels}", f"kernel={s.kernel}", f"stride={s.stride}", f"pad={s.pad}"]
        elif s.kind == "maxpool":
            fields += [f"kernel={s.kernel}", f"stride={s.stride}"]
        elif s.kind in ("fc", "head"):
            fields.append(f"out_dim={s.out_dim}")
        lines.append(f"layer {s.name} {s.kind} " + " ".join(fields))
    blocks = []
    for s in net.specs:
        if s.has_params:
            p = net.params[s.name]
            blocks.append(np.ascontiguousarray(p["w"], dtype="<f8").tobytes())
            blocks.append(np.ascontiguousarray(p["b"], dtype="<f8").tobytes())
    blob = b"".join(blocks)
    lines.append(f"params {len(blob) // 8}")
    header = ("\n".join(lines) + "\n").encode("ascii")
    Path(path).write_bytes(header + blob)


def _parse_layer_line(line: str) -> LayerSpec:
    parts = line.split()
    if len(parts) < 3 or parts[0] != "layer":
        raise DataError(f"malformed layer line: {line!r}")
    name, kind = parts[1], parts[2]
    kw = {}
    for item in parts[3:]:
        key, _, val = item.partition("=")
        kw[key] = float(val) if key == "lr_mult" else int(val)
    return LayerSpec(name, kind, **kw)


def load_model(path) -> Network:
    p = Path(path)
    try:
        raw = p.read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read model file {p}: {exc}") from exc
    pos = 0

    def next_line():
        nonlocal pos
        end = raw.find(b"\n", pos)
        if end < 0:
            raise DataError(f"truncated cnn-v1 header in {p}")
        line = raw[pos:end].decode("ascii")
        pos = end + 1
        return line

    try:
        if next_line() != "cnn-v1":
            raise DataError(f"unsupported model version in {p}")
        input_shape = tuple(int(v) for v in next_line().split()[1:])
        head_kind = next_line().split()[1]
        n_layers = int(next_line().split()[1])
        specs = [_parse_layer_line(next_line()) for _ in range(n_layers)]
        n_params = int(next_line().split()[1])
    except (IndexError, ValueError, UnicodeDecodeError) as exc:
        raise DataError(f"corrupt cnn-v1 header in {p}: {exc}") from exc
    blob = raw[pos:]
    if len(blob) != n_params * 8:
        raise DataError(f"corrupt cnn-v1 file {p}: expected {n_params * 8} parameter bytes, found {len(blob)}")
    flat = np.frombuffer(blob, dtype="<f8")
    shapes = _infer_shapes(specs, input_shape)
    params = {}
    cur = input_shape
    offset = 0

    def take(count, shape):
        nonlocal offset
        if offset + count > flat.size:
            raise DataError(f"corrupt cnn-v1 file {p}: parameter block too short")
        out = flat[offset : offset + count].reshape(shape).copy()
        offset += count
        return out

    for spec, out_shape in zip(specs, shapes):
        if spec.kind == "conv":
            w_shape = (spec.out_channels, cur[0], spec.kernel, spec.kernel)
            params[spec.name] = {"w": take(int(np.prod(w_shape)), w_shape), "b": take(spec.out_channels, (spec.out_channels,))}
        elif spec.kind in ("fc", "head"):
            fan_in = int(np.prod(cur))
            params[spec.name] = {"w": take(fan_in * spec.out_dim, (spec.out_dim, fan_in)), "b": take(spec.out_dim, (spec.out_dim,))}
        cur = out_shape
    if offset != flat.size:
        raise DataError(f"corrupt cnn-v1 file {p}: trailing parameter bytes")
    return Network(input_shape, head_kind, specs, params)
