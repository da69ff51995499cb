"""Direction classifiers: a kernel-capable random forest and a logistic baseline.

The forest keeps its training samples and per-tree bootstrap multisets so that
the learned similarity between feature vectors can be read back out of leaf
co-membership (see kernel module). Leaf class proportions count in-bag
multiplicity: a sample drawn twice by the bootstrap counts twice.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .features import Sample

CLASSES = (-1, 0, 1)
CLASS_INDEX = {-1: 0, 0: 1, 1: 2}

# Probabilities within this tolerance of the max tie; the tie order prefers
# "no change", then up, then down. The tolerance makes the direct forest vote
# and the kernel-weight route classify identically despite differing float
# summation orders.
TIE_TOL = 1e-12
TIE_ORDER = (0, 1, -1)

FOREST_FORMAT = "mandicast-forest-v1"


def pick_direction(probs: np.ndarray) -> int:
    """Argmax over class probabilities with the fixed tie preference 0, +1, -1."""
    best = float(np.max(probs))
    for d in TIE_ORDER:
        if probs[CLASS_INDEX[d]] >= best - TIE_TOL:
            return d
    raise AssertionError("unreachable")


@dataclass
class ForestParams:
    num_trees: int
    max_depth: int | None = None
    min_samples_leaf: int = 1
    features_per_split: int | None = None  # None -> ceil(sqrt(n_features))
    rng_seed: int = 0

    def __post_init__(self):
        if self.num_trees < 1:
            raise ValueError("num_trees must be >= 1")
        if self.min_samples_leaf < 1:
            raise ValueError("min_samples_leaf must be >= 1")


@dataclass
class Tree:
    """Flat array encoding; feature == -1 marks a leaf.

    Leaves store the distinct in-bag sample indices, their bootstrap
    multiplicities, per-class in-bag counts, and the in-bag total.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    leaf_sample_idx: list[np.ndarray | None]
    leaf_mult: list[np.ndarray | None]
    leaf_class_counts: np.ndarray  # n_nodes x 3
    leaf_total: np.ndarray  # n_nodes

    def apply(self, x: np.ndarray) -> int:
        node = 0
        while self.feature[node] >= 0:
            if x[self.feature[node]] <= self.threshold[node]:
                node = self.left[node]
            else:
                node = self.right[node]
        return node


@dataclass
class ForestModel:
    trees: list[Tree]
    inbag: list[np.ndarray]  # per tree, the bootstrap index multiset (length n)
    training_samples: list[Sample]
    params: ForestParams
    n_features: int

    @property
    def labels(self) -> np.ndarray:
        return np.array([s.direction for s in self.training_samples])

    @property
    def prices(self) -> np.ndarray:
        return np.array([s.price for s in self.training_samples])


class _TreeBuilder:
    def __init__(self, x: np.ndarray, y: np.ndarray, params: ForestParams, mtry: int,
                 rng: np.random.Generator, boot: np.ndarray):
        self.x = x  # bootstrap rows
        self.y = y  # class indices 0..2 for bootstrap rows
        self.params = params
        self.mtry = mtry
        self.rng = rng
        self.boot = boot
        self.feature: list[int] = []
        self.threshold: list[float] = []
        self.left: list[int] = []
        self.right: list[int] = []
        self.leaf_sample_idx: list[np.ndarray | None] = []
        self.leaf_mult: list[np.ndarray | None] = []
        self.leaf_class_counts: list[np.ndarray] = []
        self.leaf_total: list[int] = []

    def _new_node(self) -> int:
        self.feature.append(-1)
        self.threshold.append(0.0)
        self.left.append(-1)
        self.right.append(-1)
        self.leaf_sample_idx.append(None)
        self.leaf_mult.append(None)
        self.leaf_class_counts.append(np.zeros(3, dtype=np.int64))
        self.leaf_total.append(0)
        return len(self.feature) - 1

    def _make_leaf(self, node: int, rows: np.ndarray):
        idx, mult = np.unique(self.boot[rows], return_counts=True)
        self.leaf_sample_idx[node] = idx
        self.leaf_mult[node] = mult
        self.leaf_class_counts[node] = np.bincount(self.y[rows], minlength=3)
        self.leaf_total[node] = rows.size

    def _best_split(self, rows: np.ndarray) -> tuple[int, float] | None:
        n = rows.size
        min_leaf = self.params.min_samples_leaf
        feats = self.rng.choice(self.x.shape[1], size=self.mtry, replace=False)
        best_score = -np.inf
        best: tuple[int, float] | None = None
        y_rows = self.y[rows]
        onehot = np.zeros((n, 3))
        onehot[np.arange(n), y_rows] = 1.0
        for f in feats:
            v = self.x[rows, f]
            order = np.argsort(v, kind="stable")
            v_sorted = v[order]
            cum = np.cumsum(onehot[order], axis=0)  # n x 3 left class counts
            # split after position i (0-based): left = i+1 rows, right = n-i-1
            left_n = np.arange(1, n)
            right_n = n - left_n
            valid = (v_sorted[:-1] < v_sorted[1:]) & (left_n >= min_leaf) & (right_n >= min_leaf)
            if not np.any(valid):
                continue
            left_counts = cum[:-1]
            right_counts = cum[-1] - left_counts
            # minimizing weighted Gini == maximizing sum of squared counts over size
            score = (left_counts**2).sum(axis=1) / left_n + (right_counts**2).sum(axis=1) / right_n
            score = np.where(valid, score, -np.inf)
            i = int(np.argmax(score))
            if score[i] > best_score:
                best_score = float(score[i])
                best = (int(f), float((v_sorted[i] + v_sorted[i + 1]) / 2.0))
        return best

    def build(self) -> Tree:
        root = self._new_node()
        stack = [(root, np.arange(self.x.shape[0]), 0)]
        while stack:
            node, rows, depth = stack.pop()
            counts = np.bincount(self.y[rows], minlength=3)
            pure = int(np.count_nonzero(counts)) <= 1
            depth_stop = self.params.max_depth is not None and depth >= self.params.max_depth
            if pure or depth_stop or rows.size < 2 * self.params.min_samples_leaf:
                self._make_leaf(node, rows)
                continue
            split = self._best_split(rows)
            if split is None:
                self._make_leaf(node, rows)
                continue
            f, thr = split
            go_left = self.x[rows, f] <= thr
            left_id = self._new_node()
            right_id = self._new_node()
            self.feature[node] = f
            self.threshold[node] = thr
            self.left[node] = left_id
            self.right[node] = right_id
            stack.append((right_id, rows[~go_left], depth + 1))
            stack.append((left_id, rows[go_left], depth + 1))
        return Tree(
            feature=np.array(self.feature, dtype=np.int32),
            threshold=np.array(self.threshold),
            left=np.array(self.left, dtype=np.int32),
            right=np.array(self.right, dtype=np.int32),
            leaf_sample_idx=self.leaf_sample_idx,
            leaf_mult=self.leaf_mult,
            leaf_class_counts=np.vstack(self.leaf_class_counts),
            leaf_total=np.array(self.leaf_total, dtype=np.int64),
        )


def fit_forest(samples: list[Sample], params: ForestParams) -> ForestModel:
    """Fit a bootstrap ensemble of Gini trees; deterministic given the seed.

    Each tree draws its own bootstrap (size n, with replacement) from a
    generator seeded with rng_seed + tree index, and considers
    features_per_split uniformly drawn feature indices per node.
    """
    if not samples:
        raise ValueError("cannot fit a forest on empty samples")
    x = np.vstack([s.features for s in samples]).astype(float)
    y = np.array([CLASS_INDEX[s.direction] for s in samples])
    n, d = x.shape
    mtry = params.features_per_split or math.ceil(math.sqrt(d))
    mtry = min(mtry, d)

    trees: list[Tree] = []
    inbag: list[np.ndarray] = []
    for b in range(params.num_trees):
        rng = np.random.default_rng(params.rng_seed + b)
        boot = rng.integers(0, n, size=n)
        builder = _TreeBuilder(x[boot], y[boot], params, mtry, rng, boot)
        trees.append(builder.build())
        inbag.append(boot)
    return ForestModel(trees=trees, inbag=inbag, training_samples=list(samples),
                       params=params, n_features=d)


def forest_probabilities(model: ForestModel, x: np.ndarray) -> np.ndarray:
    """Average over trees of the in-bag class proportions in the leaf x reaches."""
    x = np.asarray(x, dtype=float)
    if x.shape != (model.n_features,):
        raise ValueError(f"feature vector has shape {x.shape}, expected ({model.n_features},)")
    probs = np.zeros(3)
    for tree in model.trees:
        node = tree.apply(x)
        probs += tree.leaf_class_counts[node] / tree.leaf_total[node]
    return probs / len(model.trees)


def forest_predict(model: ForestModel, x: np.ndarray) -> tuple[int, np.ndarray]:
    """Predicted direction and class probabilities for one feature vector."""
    probs = forest_probabilities(model, x)
    return pick_direction(probs), probs


def forest_to_dict(model: ForestModel) -> dict:
    """Lossless, self-describing serialization of a fitted forest."""
    return {
        "format": FOREST_FORMAT,
        "params": {
            "num_trees": model.params.num_trees,
            "max_depth": model.params.max_depth,
            "min_samples_leaf": model.params.min_samples_leaf,
            "features_per_split": model.params.features_per_split,
            "rng_seed": model.params.rng_seed,
        },
        "n_features": model.n_features,
        "inbag": [b.tolist() for b in model.inbag],
        "samples": [
            {
                "market_id": s.market_id,
                "step": s.step,
                "features": s.features.tolist(),
                "direction": s.direction,
                "price": s.price,
            }
            for s in model.training_samples
        ],
        "trees": [
            {
                "feature": t.feature.tolist(),
                "threshold": t.threshold.tolist(),
                "left": t.left.tolist(),
                "right": t.right.tolist(),
                "leaves": [
                    None
                    if t.leaf_sample_idx[i] is None
                    else {
                        "idx": t.leaf_sample_idx[i].tolist(),
                        "mult": t.leaf_mult[i].tolist(),
                        "counts": t.leaf_class_counts[i].tolist(),
                        "total": int(t.leaf_total[i]),
                    }
                    for i in range(len(t.feature))
                ],
            }
            for t in model.trees
        ],
    }


def forest_from_dict(payload: dict) -> ForestModel:
    if payload.get("format") != FOREST_FORMAT:
        raise ValueError(f"unsupported forest format {payload.get('format')!r}")
    params = ForestParams(**payload["params"])
    samples = [
        Sample(
            market_id=s["market_id"],
            step=s["step"],
            features=np.array(s["features"]),
            direction=s["direction"],
            price=s["price"],
        )
        for s in payload["samples"]
    ]
    trees = []
    for td in payload["trees"]:
        n_nodes = len(td["feature"])
        leaf_sample_idx: list[np.ndarray | None] = [None] * n_nodes
        leaf_mult: list[np.ndarray | None] = [None] * n_nodes
        leaf_class_counts = np.zeros((n_nodes, 3), dtype=np.int64)
        leaf_total = np.zeros(n_nodes, dtype=np.int64)
        for i, leaf in enumerate(td["leaves"]):
            if leaf is None:
                continue
            leaf_sample_idx[i] = np.array(leaf["idx"], dtype=np.int64)
            leaf_mult[i] = np.array(leaf["mult"], dtype=np.int64)
            leaf_class_counts[i] = leaf["counts"]
            leaf_total[i] = leaf["total"]
        trees.append(
            Tree(
                feature=np.array(td["feature"], dtype=np.int32),
                threshold=np.array(td["threshold"]),
                left=np.array(td["left"], dtype=np.int32),
                right=np.array(td["right"], dtype=np.int32),
                leaf_sample_idx=leaf_sample_idx,
                leaf_mult=leaf_mult,
                leaf_class_counts=leaf_class_counts,
                leaf_total=leaf_total,
            )
        )
    return ForestModel(
        trees=trees,
        inbag=[np.array(b, dtype=np.int64) for b in payload["inbag"]],
        training_samples=samples,
        params=params,
        n_features=payload["n_features"],
    )


def forest_to_json(model: ForestModel) -> str:
    return json.dumps(forest_to_dict(model))


def forest_from_json(text: str) -> ForestModel:
    return forest_from_dict(json.loads(text))


@dataclass
class LogisticModel:
    weights: np.ndarray  # 3 x d, class order (-1, 0, +1)
    intercepts: np.ndarray  # 3
    feature_mean: np.ndarray
    feature_scale: np.ndarray
    C: float
    n_iters: int = 0
    converged: bool = False
    degenerate_label: int | None = None  # set when training saw a single class
    loss_trace: list[float] = field(default_factory=list)


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def fit_logistic(
    samples: list[Sample], C: float = 1.0, max_iters: int = 500, tol: float = 1e-6
) -> LogisticModel:
    """Multinomial logistic regression on standardized features.

    Minimizes summed cross-entropy plus an L2 penalty of ||W||^2 / (2C)
    (intercepts unpenalized) by batch gradient descent with Armijo backtracking;
    stops when the gradient norm drops below tol. Single-class input yields a
    degenerate always-that-class model, flagged on the result.
    """
    if C <= 0:
        raise ValueError("C must be positive")
    if not samples:
        raise ValueError("cannot fit on empty samples")
    x = np.vstack([s.features for s in samples]).astype(float)
    y = np.array([CLASS_INDEX[s.direction] for s in samples])
    n, d = x.shape

    mean = x.mean(axis=0)
    scale = x.std(axis=0)
    scale[scale == 0] = 1.0
    xs = (x - mean) / scale

    present = np.unique(y)
    if present.size == 1:
        w = np.zeros((3, d))
        b = np.full(3, -50.0)
        b[present[0]] = 50.0
        return LogisticModel(w, b, mean, scale, C, degenerate_label=CLASSES[present[0]])

    onehot = np.zeros((n, 3))
    onehot[np.arange(n), y] = 1.0

    w = np.zeros((3, d))
    b = np.zeros(3)

    def loss_grad(w, b):
        logits = xs @ w.T + b
        p = _softmax(logits)
        ll = -np.sum(np.log(np.clip(p[np.arange(n), y], 1e-300, None)))
        loss = ll + (w**2).sum() / (2.0 * C)
        diff = p - onehot
        gw = diff.T @ xs + w / C
        gb = diff.sum(axis=0)
        return loss, gw, gb

    loss, gw, gb = loss_grad(w, b)
    trace = [float(loss)]
    lr = 1.0 / max(n, 1)
    n_iters = 0
    converged = False
    for n_iters in range(1, max_iters + 1):
        gnorm = float(np.sqrt((gw**2).sum() + (gb**2).sum()))
        if gnorm < tol:
            converged = True
            break
        step = lr
        for _ in range(50):  # Armijo backtracking
            w_new = w - step * gw
            b_new = b - step * gb
            new_loss, new_gw, new_gb = loss_grad(w_new, b_new)
            if new_loss <= loss - 1e-4 * step * gnorm**2:
                break
            step *= 0.5
        else:
            converged = True  # no productive step remains
            break
        w, b, loss, gw, gb = w_new, b_new, new_loss, new_gw, new_gb
        trace.append(float(loss))
        lr = min(step * 2.0, 1.0)

    return LogisticModel(w, b, mean, scale, C, n_iters=n_iters, converged=converged,
                         loss_trace=trace)


def logistic_probabilities(model: LogisticModel, x: np.ndarray) -> np.ndarray:
    xs = (np.asarray(x, dtype=float) - model.feature_mean) / model.feature_scale
    return _softmax((xs @ model.weights.T + model.intercepts)[None, :])[0]


def logistic_predict(model: LogisticModel, x: np.ndarray) -> tuple[int, np.ndarray]:
    if model.degenerate_label is not None:
        probs = np.zeros(3)
        probs[CLASS_INDEX[model.degenerate_label]] = 1.0
        return model.degenerate_label, probs
    probs = logistic_probabilities(model, x)
    return pick_direction(probs), probs
