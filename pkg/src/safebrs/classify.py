"""BRS classifiers: feature extraction, datasets, linear SVM, KNN and a Gini tree.

Feature layout (one row per state)::

    h_n, h_e, h_s, h_w, obs_dir, distance [, dx, dy]

``obs_dir`` is +1 for an obstacle moving up and -1 for one moving down.
The optional relative offsets ``dx = agent_x - obstacle_column`` and
``dy = agent_y - obstacle_row`` are an ablation switch, off by default.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .gridworld import GridSpec, ObstacleDir
from .kvfile import KVFormatError, format_kv, parse_kv
from .reachability import Trajectory, brs_labels, signed_distance, value_trace
from .tabular_rl import TabularState

BASE_COLUMNS = ("h_n", "h_e", "h_s", "h_w", "obs_dir", "distance")
OFFSET_COLUMNS = ("dx", "dy")
N_BINARY = 5  # leading columns that are one-hot / sign features


class FitError(ValueError):
    pass


class ModelFormatError(ValueError):
    pass


class LabeledSample(NamedTuple):
    features: tuple[float, ...]
    label: bool


_ONEHOT = ((1.0, 0.0, 0.0, 0.0), (0.0, 1.0, 0.0, 0.0), (0.0, 0.0, 1.0, 0.0), (0.0, 0.0, 0.0, 1.0))


def extract_features(s: TabularState, spec: GridSpec, offsets: bool = False) -> tuple[float, ...]:
    obs = 1.0 if s.obstacle_dir == ObstacleDir.UP else -1.0
    f = _ONEHOT[s.heading] + (obs, signed_distance(s, spec))
    if offsets:
        col = spec.obstacle_column if spec.obstacle_column is not None else 0
        f += (float(s.agent_x - col), float(s.agent_y - s.obstacle_row))
    return f


def build_dataset(episodes: Iterable[Trajectory], horizon: int, spec: GridSpec,
                  offsets: bool = False) -> list[LabeledSample]:
    """One sample per visited state; duplicates are kept."""
    out: list[LabeledSample] = []
    for traj in episodes:
        labels = brs_labels(value_trace(traj, horizon, spec))
        for s, lab in zip(traj.states, labels):
            out.append(LabeledSample(extract_features(s, spec, offsets), lab))
    return out


def as_arrays(samples: Sequence[LabeledSample]) -> tuple[np.ndarray, np.ndarray]:
    if not samples:
        return np.zeros((0, len(BASE_COLUMNS))), np.zeros(0, dtype=bool)
    X = np.array([s.features for s in samples], dtype=float)
    y = np.array([s.label for s in samples], dtype=bool)
    return X, y


def write_dataset_csv(path: str | Path, X: np.ndarray, y: np.ndarray) -> None:
    cols = BASE_COLUMNS + (OFFSET_COLUMNS if X.shape[1] == len(BASE_COLUMNS) + 2 else ())
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols + ("label",))
        for row, lab in zip(X.tolist(), y.tolist()):
            cells = [str(int(v)) for v in row[:N_BINARY]] + [repr(v) for v in row[N_BINARY:]]
            w.writerow(cells + [int(lab)])


def read_dataset_csv(path: str | Path) -> tuple[np.ndarray, np.ndarray]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = tuple(next(reader))
        if header not in (BASE_COLUMNS + ("label",), BASE_COLUMNS + OFFSET_COLUMNS + ("label",)):
            raise ValueError(f"unexpected dataset header {header}")
        rows = [r for r in reader if r]
    if not rows:
        return np.zeros((0, len(header) - 1)), np.zeros(0, dtype=bool)
    data = np.array(rows, dtype=float)
    return data[:, :-1], data[:, -1].astype(bool)


def stratified_split(y: np.ndarray, test_fraction: float = 0.2, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Per-class random split; returns sorted (train_idx, test_idx)."""
    rng = np.random.default_rng(seed)
    train, test = [], []
    for cls in (False, True):
        idx = np.flatnonzero(y == cls)
        idx = idx[rng.permutation(len(idx))]
        n_test = int(round(len(idx) * test_fraction))
        test.append(idx[:n_test])
        train.append(idx[n_test:])
    return np.sort(np.concatenate(train)), np.sort(np.concatenate(test))


# -- standardization -----------------------------------------------------------

def _fit_scaler(X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Zero mean / unit variance on the continuous columns; binary columns pass through."""
    d = X.shape[1]
    mean = np.zeros(d)
    scale = np.ones(d)
    if len(X):
        mean[N_BINARY:] = X[:, N_BINARY:].mean(axis=0)
        std = X[:, N_BINARY:].std(axis=0)
        scale[N_BINARY:] = np.where(std > 0, std, 1.0)
    return mean, scale


# -- models --------------------------------------------------------------------

class ModelKind(Enum):
    LINEAR_SVM = "svm"
    KNN = "knn"
    DECISION_TREE = "tree"


@dataclass
class LinearSvm:
    weights: np.ndarray
    bias: float
    mean: np.ndarray
    scale: np.ndarray
    kind = ModelKind.LINEAR_SVM

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        self.mean = np.asarray(self.mean, dtype=float)
        self.scale = np.asarray(self.scale, dtype=float)
        if np.any(self.scale <= 0):
            raise ValueError("standardization scale must be positive")
        # Plain-float copies for the per-step decision in the shield loop.
        self._mean = self.mean.tolist()
        self._scale = self.scale.tolist()
        self._wl = self.weights.tolist()

    def decision(self, f: Sequence[float]) -> float:
        total = 0.0
        for wi, fi, mi, si in zip(self._wl, f, self._mean, self._scale):
            total += wi * ((fi - mi) / si)
        return total + self.bias

    def predict_one(self, f: Sequence[float]) -> bool:
        return self.decision(f) > 0

    def predict(self, X: np.ndarray) -> np.ndarray:
        return ((X - self.mean) / self.scale) @ self.weights + self.bias > 0


@dataclass
class Knn:
    samples: np.ndarray  # standardized
    labels: np.ndarray
    k: int
    mean: np.ndarray
    scale: np.ndarray
    kind = ModelKind.KNN
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if self.k < 1 or self.k % 2 == 0:
            raise ValueError("k must be odd and >= 1")
        self.labels = np.asarray(self.labels, dtype=bool)

    def predict_one(self, f: Sequence[float]) -> bool:
        key = tuple(float(v) for v in f)
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        z = (np.asarray(key) - self.mean) / self.scale
        d2 = ((self.samples - z) ** 2).sum(axis=1)
        k = min(self.k, len(d2))
        kth = np.partition(d2, k - 1)[k - 1]
        cand = np.flatnonzero(d2 <= kth)  # ascending index order
        nearest = cand[np.argsort(d2[cand], kind="stable")[:k]]
        votes = int(self.labels[nearest].sum())
        result = 2 * votes > len(nearest)
        self._cache[key] = result
        return result

    def predict(self, X: np.ndarray) -> np.ndarray:
        return np.array([self.predict_one(row) for row in X], dtype=bool)


@dataclass
class DecisionTree:
    """Flat node arrays; ``feature == -1`` marks a leaf. ``x[f] <= threshold`` goes left."""

    feature: list[int]
    threshold: list[float]
    left: list[int]
    right: list[int]
    label: list[bool]
    kind = ModelKind.DECISION_TREE

    def depth(self, node: int = 0) -> int:
        if self.feature[node] < 0:
            return 0
        return 1 + max(self.depth(self.left[node]), self.depth(self.right[node]))

    def predict_one(self, f: Sequence[float]) -> bool:
        node = 0
        while self.feature[node] >= 0:
            node = self.left[node] if f[self.feature[node]] <= self.threshold[node] else self.right[node]
        return self.label[node]

    def predict(self, X: np.ndarray) -> np.ndarray:
        return np.array([self.predict_one(row) for row in X], dtype=bool)


Model = LinearSvm | Knn | DecisionTree


def predict(model: Model, f: Sequence[float]) -> bool:
    return bool(model.predict_one(f))


# -- fitting -------------------------------------------------------------------

@dataclass(frozen=True)
class SvmConfig:
    learning_rate: float = 0.01
    regularization: float = 0.01
    epochs: int = 50
    batch_size: int = 32
    class_weighting: bool = True
    seed: int = 0


@dataclass(frozen=True)
class TreeConfig:
    max_depth: int = 8
    min_leaf: int = 5
    ties_positive: bool = False


def _check_xy(X: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=bool)
    if X.ndim != 2 or len(X) != len(y):
        raise FitError("X must be 2-D with one row per label")
    if len(X) == 0:
        raise FitError("cannot fit on empty data")
    return X, y


def fit_svm(X: np.ndarray, y: np.ndarray, config: SvmConfig = SvmConfig()) -> LinearSvm:
    """Class-weighted hinge loss + (lambda/2)||w||^2 by mini-batch subgradient descent.

    The L2 term is applied as a proximal shrink ``w /= 1 + lr * lambda`` after
    each hinge step, which stays stable for any lambda. The bias is not
    regularized.
    """
    X, y = _check_xy(X, y)
    n_pos = int(y.sum())
    n = len(y)
    if n_pos == 0 or n_pos == n:
        raise FitError("SVM needs both classes in the training data")
    mean, scale = _fit_scaler(X)
    Z = (X - mean) / scale
    t = np.where(y, 1.0, -1.0)
    if config.class_weighting:
        c = np.where(y, n / (2.0 * n_pos), n / (2.0 * (n - n_pos)))
    else:
        c = np.ones(n)
    rng = np.random.default_rng(config.seed)
    w = np.zeros(Z.shape[1])
    b = 0.0
    lr, lam = config.learning_rate, config.regularization
    shrink = 1.0 / (1.0 + lr * lam)
    bs = max(1, config.batch_size)
    for _ in range(config.epochs):
        order = rng.permutation(n)
        for start in range(0, n, bs):
            idx = order[start:start + bs]
            zb, tb, cb = Z[idx], t[idx], c[idx]
            active = tb * (zb @ w + b) < 1.0
            if active.any():
                coef = (cb * tb)[active]
                w = w + lr * (coef @ zb[active]) / len(idx)
                b += lr * coef.sum() / len(idx)
            w = w * shrink
    return LinearSvm(w, float(b), mean, scale)


def fit_knn(X: np.ndarray, y: np.ndarray, k: int = 5) -> Knn:
    X, y = _check_xy(X, y)
    if k < 1 or k % 2 == 0:
        raise FitError("k must be odd and >= 1")
    mean, scale = _fit_scaler(X)
    return Knn((X - mean) / scale, y.copy(), k, mean, scale)


def _best_split(X: np.ndarray, y: np.ndarray, min_leaf: int) -> tuple[int, float, float] | None:
    """Lowest weighted-Gini split as (feature, threshold, impurity), or None."""
    n = len(y)
    best = None
    for f in range(X.shape[1]):
        order = np.argsort(X[:, f], kind="stable")
        xs = X[order, f]
        ys = y[order].astype(float)
        # candidate cut after position i (left = first i+1 samples) where value changes
        cut = np.flatnonzero(xs[1:] != xs[:-1])
        if cut.size == 0:
            continue
        n_left = cut + 1.0
        ok = (n_left >= min_leaf) & (n - n_left >= min_leaf)
        cut, n_left = cut[ok], n_left[ok]
        if cut.size == 0:
            continue
        pos_left = np.cumsum(ys)[cut]
        pos_total = ys.sum()
        n_right = n - n_left
        pos_right = pos_total - pos_left
        p_l = pos_left / n_left
        p_r = pos_right / n_right
        gini = (n_left * 2 * p_l * (1 - p_l) + n_right * 2 * p_r * (1 - p_r)) / n
        i = int(np.argmin(gini))
        if best is None or gini[i] < best[2]:
            thr = (xs[cut[i]] + xs[cut[i] + 1]) / 2.0
            best = (f, float(thr), float(gini[i]))
    return best


def fit_tree(X: np.ndarray, y: np.ndarray, config: TreeConfig = TreeConfig()) -> DecisionTree:
    X, y = _check_xy(X, y)
    tree = DecisionTree([], [], [], [], [])

    def leaf_label(labels: np.ndarray) -> bool:
        pos = int(labels.sum())
        neg = len(labels) - pos
        return pos > neg or (pos == neg and config.ties_positive)

    def grow(idx: np.ndarray, depth: int) -> int:
        node = len(tree.feature)
        tree.feature.append(-1)
        tree.threshold.append(0.0)
        tree.left.append(-1)
        tree.right.append(-1)
        labels = y[idx]
        tree.label.append(leaf_label(labels))
        p = labels.mean()
        parent_gini = 2 * p * (1 - p)
        if depth >= config.max_depth or parent_gini == 0.0:
            return node
        split = _best_split(X[idx], labels, max(1, config.min_leaf))
        if split is None or split[2] >= parent_gini:
            return node
        f, thr, _ = split
        go_left = X[idx, f] <= thr
        tree.feature[node] = f
        tree.threshold[node] = thr
        tree.left[node] = grow(idx[go_left], depth + 1)
        tree.right[node] = grow(idx[~go_left], depth + 1)
        return node

    grow(np.arange(len(y)), 0)
    return tree


# -- evaluation ----------------------------------------------------------------

@dataclass(frozen=True)
class EvalReport:
    accuracy: float
    precision: float
    recall: float
    f1: float
    tp: int
    fp: int
    tn: int
    fn: int


def report_from_counts(tp: int, fp: int, tn: int, fn: int) -> EvalReport:
    total = tp + fp + tn + fn
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    accuracy = (tp + tn) / total if total else 0.0
    return EvalReport(accuracy, precision, recall, f1, tp, fp, tn, fn)


def evaluate(model: Model, X: np.ndarray, y: np.ndarray) -> EvalReport:
    if len(y) == 0:
        raise ValueError("evaluation set is empty")
    pred = model.predict(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=bool)
    tp = int((pred & y).sum())
    fp = int((pred & ~y).sum())
    tn = int((~pred & ~y).sum())
    fn = int((~pred & y).sum())
    return report_from_counts(tp, fp, tn, fn)


REPORT_COLUMNS = ("model", "accuracy", "precision", "recall", "f1", "tp", "fp", "tn", "fn")


def write_report_csv(path: str | Path, rows: Iterable[tuple[str, EvalReport]]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        for name, r in rows:
            w.writerow([name, f"{r.accuracy:.6f}", f"{r.precision:.6f}", f"{r.recall:.6f}", f"{r.f1:.6f}",
                        r.tp, r.fp, r.tn, r.fn])


# -- model files -----------------------------------------------------------------

def _floats(values: Iterable[float]) -> str:
    return ",".join(repr(float(v)) for v in values)


def _parse_floats(text: str) -> list[float]:
    return [float(v) for v in text.split(",")] if text else []


def model_to_text(model: Model) -> str:
    if isinstance(model, LinearSvm):
        items = {
            "kind": "svm",
            "weights": _floats(model.weights),
            "bias": repr(float(model.bias)),
            "mean": _floats(model.mean),
            "scale": _floats(model.scale),
        }
    elif isinstance(model, Knn):
        items = {
            "kind": "knn",
            "k": model.k,
            "mean": _floats(model.mean),
            "scale": _floats(model.scale),
            "n_samples": len(model.labels),
        }
        for i, (row, lab) in enumerate(zip(model.samples, model.labels)):
            items[f"sample.{i}"] = _floats(row) + f",{int(lab)}"
    elif isinstance(model, DecisionTree):
        items = {"kind": "tree", "n_nodes": len(model.feature)}
        for i in range(len(model.feature)):
            items[f"node.{i}"] = (
                f"{model.feature[i]},{model.threshold[i]!r},{model.left[i]},{model.right[i]},{int(model.label[i])}"
            )
    else:
        raise TypeError(f"unknown model type {type(model).__name__}")
    return format_kv(items)


def model_from_text(text: str) -> Model:
    try:
        kv = parse_kv(text)
        kind = kv["kind"]
        if kind == "svm":
            return LinearSvm(
                np.array(_parse_floats(kv["weights"])),
                float(kv["bias"]),
                np.array(_parse_floats(kv["mean"])),
                np.array(_parse_floats(kv["scale"])),
            )
        if kind == "knn":
            n = int(kv["n_samples"])
            rows = [_parse_floats(kv[f"sample.{i}"]) for i in range(n)]
            arr = np.array(rows, dtype=float).reshape(n, -1)
            return Knn(arr[:, :-1], arr[:, -1].astype(bool), int(kv["k"]),
                       np.array(_parse_floats(kv["mean"])), np.array(_parse_floats(kv["scale"])))
        if kind == "tree":
            tree = DecisionTree([], [], [], [], [])
            for i in range(int(kv["n_nodes"])):
                f, thr, left, right, lab = kv[f"node.{i}"].split(",")
                tree.feature.append(int(f))
                tree.threshold.append(float(thr))
                tree.left.append(int(left))
                tree.right.append(int(right))
                tree.label.append(bool(int(lab)))
            return tree
    except (KeyError, ValueError, KVFormatError) as exc:
        raise ModelFormatError(f"malformed model file: {exc}") from None
    raise ModelFormatError(f"unknown model kind {kind!r}")


def save_model(model: Model, path: str | Path) -> None:
    Path(path).write_text(model_to_text(model))


def load_model(path: str | Path) -> Model:
    return model_from_text(Path(path).read_text())
