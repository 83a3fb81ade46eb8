"""In-house linear SVM.

L2-regularized hinge loss minimized by a Pegasos-style stochastic subgradient
solver on the primal:

    F(w, b) = 0.5 ||w||^2 + C * sum_i max(0, 1 - y_i (w.x_i + b))

with step size eta_t = eta0 / (1 + eta0 * lambda * t), lambda = 1/(C n), the
bias unregularized, and the best-objective iterate (monitored at epoch ends)
returned. Training canonicalizes sample order before the seeded per-epoch
shuffles, so the solver path depends only on the data multiset and the seed,
never on input order.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import DataError

N_GRADES = 5

__all__ = [
    "LinearSvmModel",
    "SvmTrainConfig",
    "MulticlassSvm",
    "train_linear_svm",
    "decision_function",
    "decision_matrix",
    "train_ovr",
    "predict_grade",
    "predict_grades",
    "save_svm",
    "load_svm",
]


@dataclass(frozen=True)
class SvmTrainConfig:
    C: float = 1.0
    epochs: int = 50
    eta0: float = 1.0
    seed: int = 0
    standardize: bool = True

    def __post_init__(self):
        if self.C <= 0:
            raise ValueError(f"C must be positive, got {self.C}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.eta0 <= 0:
            raise ValueError(f"eta0 must be positive, got {self.eta0}")


@dataclass(frozen=True)
class LinearSvmModel:
    """Affine decision function over standardized features."""

    weights: np.ndarray  # (dim,)
    bias: float
    mean: np.ndarray  # (dim,) standardizer offset (zeros = identity)
    std: np.ndarray  # (dim,) standardizer scale (ones = identity)

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        m = np.asarray(self.mean, dtype=np.float64)
        s = np.asarray(self.std, dtype=np.float64)
        if w.ndim != 1 or m.shape != w.shape or s.shape != w.shape:
            raise ValueError("weights/mean/std must be 1-D with matching length")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(m)) and np.all(np.isfinite(s))):
            raise ValueError("model parameters must be finite")
        if not np.isfinite(self.bias):
            raise ValueError("bias must be finite")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "mean", m)
        object.__setattr__(self, "std", s)

    @property
    def dim(self) -> int:
        return self.weights.shape[0]


@dataclass(frozen=True)
class MulticlassSvm:
    """One-vs-rest ensemble, one binary model per grade 0..4."""

    models: tuple  # 5 LinearSvmModel, grade order 0..4

    def __post_init__(self):
        if len(self.models) != N_GRADES:
            raise ValueError(f"expected {N_GRADES} models, got {len(self.models)}")
        dims = {m.dim for m in self.models}
        if len(dims) != 1:
            raise ValueError(f"per-grade models disagree on feature dim: {dims}")

    @property
    def dim(self) -> int:
        return self.models[0].dim


def _as_matrix(features) -> np.ndarray:
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"features must form a 2-D matrix, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("features must be finite")
    return x


def _canonical_order(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    # Fixed total order (label, then raw feature bytes) so training is
    # independent of the order samples were handed in.
    return np.array(
        sorted(range(len(y)), key=lambda i: (y[i], x[i].tobytes())), dtype=np.intp
    )


def _objective(w, b, x, y, c) -> float:
    margins = y * (x @ w + b)
    return 0.5 * float(w @ w) + c * float(np.maximum(0.0, 1.0 - margins).sum())


def train_linear_svm(features, labels, cfg: SvmTrainConfig = SvmTrainConfig()) -> LinearSvmModel:
    """Train a binary linear SVM with labels in {+1, -1}.

    Raises DataError when only one class is present; ValueError on shape
    problems. Retraining with the same data multiset and seed reproduces the
    weights bit-identically.
    """
    x = _as_matrix(features)
    y = np.asarray(labels, dtype=np.float64)
    if y.ndim != 1 or y.shape[0] != x.shape[0]:
        raise ValueError(f"labels shape {y.shape} does not match {x.shape[0]} samples")
    if x.shape[0] == 0:
        raise DataError("training set is empty")
    if not np.all(np.isin(y, (-1.0, 1.0))):
        raise ValueError("labels must be +1 or -1")
    if len(np.unique(y)) < 2:
        raise DataError("training set contains a single class; need both +1 and -1")

    n, d = x.shape
    order = _canonical_order(x, y)
    xc = x[order]
    ys = y[order]
    if cfg.standardize:
        mean = xc.mean(axis=0)
        std = xc.std(axis=0)
        std = np.where(std == 0.0, 1.0, std)
    else:
        mean = np.zeros(d)
        std = np.ones(d)
    xs = (xc - mean) / std

    rng = np.random.default_rng(cfg.seed)
    lam = 1.0 / (cfg.C * n)
    w = np.zeros(d)
    b = 0.0
    t = 0
    best_obj = np.inf
    best_w = w.copy()
    best_b = b
    for _ in range(cfg.epochs):
        for i in rng.permutation(n):
            t += 1
            eta = cfg.eta0 / (1.0 + cfg.eta0 * lam * t)
            margin = ys[i] * (w @ xs[i] + b)
            w *= 1.0 - eta * lam
            if margin < 1.0:
                w += (eta * ys[i]) * xs[i]
                b += eta * ys[i]
        obj = _objective(w, b, xs, ys, cfg.C)
        if obj < best_obj:
            best_obj = obj
            best_w = w.copy()
            best_b = b
    return LinearSvmModel(best_w, best_b, mean, std)


def decision_function(model: LinearSvmModel, x) -> float:
    """Affine score w . standardize(x) + b."""
    v = np.asarray(x, dtype=np.float64)
    if v.shape != (model.dim,):
        raise ValueError(f"expected feature vector of dim {model.dim}, got shape {v.shape}")
    return float(model.weights @ ((v - model.mean) / model.std) + model.bias)


def decision_matrix(model: LinearSvmModel, x) -> np.ndarray:
    """decision_function applied row-wise to an (n, dim) matrix."""
    m = _as_matrix(x)
    if m.shape[1] != model.dim:
        raise ValueError(f"expected feature dim {model.dim}, got {m.shape[1]}")
    return ((m - model.mean) / model.std) @ model.weights + model.bias


def train_ovr(features, grades, cfg: SvmTrainConfig = SvmTrainConfig()) -> MulticlassSvm:
    """Train five one-vs-rest models for grades 0..4.

    Every grade must appear in the data (an absent grade would leave its
    binary problem single-class); otherwise raises DataError naming it.
    """
    x = _as_matrix(features)
    g = np.asarray(grades, dtype=np.int64)
    if g.ndim != 1 or g.shape[0] != x.shape[0]:
        raise ValueError(f"grades shape {g.shape} does not match {x.shape[0]} samples")
    if np.any((g < 0) | (g >= N_GRADES)):
        raise ValueError("grades must lie in 0..4")
    present = set(np.unique(g).tolist())
    missing = sorted(set(range(N_GRADES)) - present)
    if missing:
        raise DataError(f"grade(s) {missing} absent from training data")
    models = []
    for grade in range(N_GRADES):
        labels = np.where(g == grade, 1.0, -1.0)
        models.append(train_linear_svm(x, labels, replace(cfg, seed=cfg.seed + grade)))
    return MulticlassSvm(tuple(models))


def predict_grade(mc: MulticlassSvm, x) -> int:
    """Grade with the maximum one-vs-rest score; ties go to the lowest grade."""
    scores = [decision_function(m, x) for m in mc.models]
    return int(np.argmax(scores))


def predict_grades(mc: MulticlassSvm, x) -> np.ndarray:
    """Batch predict_grade over an (n, dim) matrix."""
    scores = np.stack([decision_matrix(m, x) for m in mc.models], axis=1)
    return scores.argmax(axis=1)


# ---------------------------------------------------------------------------
# persistence: versioned plain-text format `svm-v1`
# ---------------------------------------------------------------------------

def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def save_svm(model: LinearSvmModel, path) -> None:
    """Write the `svm-v1` plain-text format (exact float64 round trip)."""
    lines = ["svm-v1", f"dim {model.dim}", f"bias {_fmt(model.bias)}", "standardizer"]
    lines += [f"{_fmt(m)} {_fmt(s)}" for m, s in zip(model.mean, model.std)]
    lines.append("weights")
    lines += [_fmt(w) for w in model.weights]
    Path(path).write_text("\n".join(lines) + "\n")


def load_svm(path) -> LinearSvmModel:
    p = Path(path)
    try:
        lines = p.read_text().splitlines()
    except OSError as exc:
        raise DataError(f"cannot read model file {p}: {exc}") from exc
    try:
        if lines[0] != "svm-v1":
            raise DataError(f"unsupported model version {lines[0]!r} in {p}")
        dim = int(lines[1].split()[1])
        bias = float(lines[2].split()[1])
        if lines[3] != "standardizer":
            raise DataError(f"malformed standardizer section in {p}")
        pairs = [ln.split() for ln in lines[4 : 4 + dim]]
        mean = np.array([float(a) for a, _ in pairs])
        std = np.array([float(b) for _, b in pairs])
        if lines[4 + dim] != "weights":
            raise DataError(f"malformed weights section in {p}")
        weights = np.array([float(ln) for ln in lines[5 + dim : 5 + 2 * dim]])
        if weights.shape[0] != dim:
            raise DataError(f"truncated weights in {p}")
    except (IndexError, ValueError) as exc:
        raise DataError(f"corrupt svm-v1 file {p}: {exc}") from exc
    return LinearSvmModel(weights, bias, mean, std)
