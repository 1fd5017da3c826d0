"""Histogram gradient-boosted decision trees for binary log-loss.

Per boosting round, with p the sigmoid of the running margin:
    gradients   g_i = p_i - y_i
    hessians    h_i = p_i (1 - p_i)
    leaf value  -sum(g) / (sum(h) + l2_lambda), clamped to +-30
    split gain  GL^2/(HL+l2) + GR^2/(HR+l2) - G^2/(H+l2)

Candidate thresholds come from per-feature quantile bin edges (exact
midpoints when a feature has fewer distinct values than bins). Trees grow
best-first by gain up to num_leaves, bounded by max_depth; training log-loss
is checked non-increasing every round. Ties on gain break toward the lowest
feature index, then the lowest threshold, so training is deterministic.

Per-node training-row counts (cover) are recorded; the attribution module
needs them. Desk-scale defaults keep tests fast; the published large-corpus
configuration is available as PAPER_SCALE_PARAMS.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch, SingleClass

_EPS = 1e-12
LEAF_VALUE_LIMIT = 30.0


def sigmoid(z: np.ndarray | float) -> np.ndarray | float:
    return 1.0 / (1.0 + np.exp(-np.clip(z, -500.0, 500.0)))


def log_loss(y: np.ndarray, p: np.ndarray) -> float:
    p = np.clip(p, 1e-15, 1.0 - 1e-15)
    return float(-(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)).mean())


@dataclass(frozen=True)
class GbdtParams:
    num_leaves: int = 31
    max_depth: int = 6
    iterations: int = 200
    learning_rate: float = 0.05
    histogram_bins: int = 255
    min_samples_leaf: int = 1
    l2_lambda: float = 0.0


# 2048-leaf / depth-15 / 1000-round / 0.05-lr configuration for full-size corpora.
PAPER_SCALE_PARAMS = GbdtParams(num_leaves=2048, max_depth=15, iterations=1000)


@dataclass
class Tree:
    """Array-of-nodes tree; children are -1 at leaves. ``value`` holds the
    leaf output (unscaled by learning rate); ``cover`` the training rows that
    reached each node."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    cover: np.ndarray

    def predict(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(len(X), dtype=np.int64)
        while True:
            at_leaf = self.left[node] < 0
            if at_leaf.all():
                break
            f = self.feature[node]
            go_left = X[np.arange(len(X)), np.maximum(f, 0)] <= self.threshold[node]
            nxt = np.where(go_left, self.left[node], self.right[node])
            node = np.where(at_leaf, node, nxt)
        return self.value[node]


@dataclass
class GbdtModel:
    trees: list[Tree]
    base_score: float
    params: GbdtParams
    n_features: int
    train_loss: list[float] = field(default_factory=list)

    def margin(self, X: np.ndarray) -> np.ndarray:
        X = _as_matrix(X, self.n_features)
        out = np.full(len(X), self.base_score)
        for tree in self.trees:
            out += self.params.learning_rate * tree.predict(X)
        return out

    def score(self, X: np.ndarray) -> np.ndarray:
        return sigmoid(self.margin(X))


def _as_matrix(X: np.ndarray, n_features: int) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.shape[1] != n_features:
        raise DimensionMismatch(f"input has {X.shape[1]} features, model expects {n_features}")
    return X


def predict_score(model: GbdtModel, x: np.ndarray) -> float:
    """Probability-like score in [0, 1] for a single vector."""
    return float(model.score(np.asarray(x)[None, :] if np.asarray(x).ndim == 1 else x)[0])


class FeatureBins:
    """Quantile binning. thresholds[f] are the candidate split points for
    feature f; bin(x) = number of thresholds <= x, so bin b means
    x <= thresholds[b] fails for all earlier candidates."""

    def __init__(self, X: np.ndarray, max_bins: int):
        self.thresholds: list[np.ndarray] = []
        for f in range(X.shape[1]):
            vals = np.unique(X[:, f])
            if len(vals) <= 1:
                thr = np.empty(0)
            elif len(vals) <= max_bins:
                thr = (vals[:-1] + vals[1:]) / 2.0
            else:
                qs = np.quantile(X[:, f], np.linspace(0.0, 1.0, max_bins + 1)[1:-1])
                thr = np.unique(qs)
            self.thresholds.append(thr)
        self.n_thresholds = np.array([len(t) for t in self.thresholds], dtype=np.int64)
        self.max_bins = int(self.n_thresholds.max(initial=0)) + 1

    def transform(self, X: np.ndarray) -> np.ndarray:
        out = np.zeros(X.shape, dtype=np.uint8)
        for f, thr in enumerate(self.thresholds):
            if len(thr):
                out[:, f] = np.searchsorted(thr, X[:, f], side="right")
        return out


def _histograms(
    binned: np.ndarray, g: np.ndarray, h: np.ndarray, rows: np.ndarray, max_bins: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    n_features = binned.shape[1]
    sub = binned[rows].astype(np.int64)
    flat = (sub + np.arange(n_features)[None, :] * max_bins).ravel()
    size = n_features * max_bins
    gw = np.repeat(g[rows], n_features)
    hw = np.repeat(h[rows], n_features)
    hist_g = np.bincount(flat, weights=gw, minlength=size).reshape(n_features, max_bins)
    hist_h = np.bincount(flat, weights=hw, minlength=size).reshape(n_features, max_bins)
    hist_c = np.bincount(flat, minlength=size).reshape(n_features, max_bins)
    return hist_g, hist_h, hist_c


def _best_split(
    hist_g: np.ndarray,
    hist_h: np.ndarray,
    hist_c: np.ndarray,
    n_thresholds: np.ndarray,
    params: GbdtParams,
) -> tuple[float, int, int]:
    """(gain, feature, bin) of the best candidate; gain -inf when none is
    valid. Flat argmax over (feature-major, bin-minor) realizes the
    lowest-feature-then-lowest-threshold tie-break."""
    lam = params.l2_lambda
    G = hist_g.sum(axis=1, keepdims=True)
    H = hist_h.sum(axis=1, keepdims=True)
    C = hist_c.sum(axis=1, keepdims=True)
    GL = np.cumsum(hist_g, axis=1)
    HL = np.cumsum(hist_h, axis=1)
    CL = np.cumsum(hist_c, axis=1)
    GR, HR, CR = G - GL, H - HL, C - CL
    gain = (
        GL * GL / np.maximum(HL + lam, _EPS)
        + GR * GR / np.maximum(HR + lam, _EPS)
        - G * G / np.maximum(H + lam, _EPS)
    )
    bins = np.arange(hist_g.shape[1])[None, :]
    valid = (
        (bins < n_thresholds[:, None])
        & (CL >= params.min_samples_leaf)
        & (CR >= params.min_samples_leaf)
    )
    gain = np.where(valid, gain, -np.inf)
    flat = int(np.argmax(gain))
    f, b = divmod(flat, gain.shape[1])
    return float(gain[f, b]), f, b


def _leaf_value(g_sum: float, h_sum: float, lam: float) -> float:
    value = -g_sum / max(h_sum + lam, _EPS)
    return float(np.clip(value, -LEAF_VALUE_LIMIT, LEAF_VALUE_LIMIT))


def _grow_tree(
    binned: np.ndarray,
    bins: FeatureBins,
    g: np.ndarray,
    h: np.ndarray,
    params: GbdtParams,
) -> tuple[Tree, np.ndarray]:
    """One tree fit to (g, h); returns the tree and each row's leaf value."""
    feature = [-1]
    threshold = [0.0]
    left = [-1]
    right = [-1]
    value = [_leaf_value(g.sum(), h.sum(), params.l2_lambda)]
    cover = [float(len(g))]
    depth = {0: 0}
    leaf_rows = {0: np.arange(len(g))}

    heap: list[tuple[float, int, int, int, int]] = []
    counter = 0

    def consider(node: int) -> None:
        nonlocal counter
        rows = leaf_rows[node]
        if depth[node] >= params.max_depth or len(rows) < 2 * params.min_samples_leaf:
            return
        hg, hh, hc = _histograms(binned, g, h, rows, bins.max_bins)
        gain, f, b = _best_split(hg, hh, hc, bins.n_thresholds, params)
        if gain > 0.0 and np.isfinite(gain):
            heapq.heappush(heap, (-gain, counter, node, f, b))
            counter += 1

    consider(0)
    n_leaves = 1
    while heap and n_leaves < params.num_leaves:
        _, _, node, f, b = heapq.heappop(heap)
        if left[node] >= 0:
            continue
        rows = leaf_rows.pop(node)
        mask = binned[rows, f] <= b
        rows_l, rows_r = rows[mask], rows[~mask]
        for child_rows in (rows_l, rows_r):
            child = len(feature)
            feature.append(-1)
            threshold.append(0.0)
            left.append(-1)
            right.append(-1)
            value.append(
                _leaf_value(g[child_rows].sum(), h[child_rows].sum(), params.l2_lambda)
            )
            cover.append(float(len(child_rows)))
            depth[child] = depth[node] + 1
            leaf_rows[child] = child_rows
        left[node] = len(feature) - 2
        right[node] = len(feature) - 1
        feature[node] = f
        threshold[node] = float(bins.thresholds[f][b])
        n_leaves += 1
        if n_leaves < params.num_leaves:
            consider(left[node])
            consider(right[node])

    tree = Tree(
        feature=np.array(feature, dtype=np.int32),
        threshold=np.array(threshold, dtype=np.float64),
        left=np.array(left, dtype=np.int32),
        right=np.array(right, dtype=np.int32),
        value=np.array(value, dtype=np.float64),
        cover=np.array(cover, dtype=np.float64),
    )
    contributions = np.zeros(len(g))
    for node, rows in leaf_rows.items():
        contributions[rows] = value[node]
    return tree, contributions


def train_gbdt(X: np.ndarray, y: np.ndarray, params: GbdtParams = GbdtParams()) -> GbdtModel:
    """Fit a boosted ensemble on labels in {0, 1}. Raises SingleClass when
    only one label is present and DimensionMismatch when X and y disagree.
    The recorded train_loss is strictly checked non-increasing."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).ravel()
    if X.ndim != 2 or len(X) != len(y):
        raise DimensionMismatch(f"X has {len(X)} rows but y has {len(y)} labels")
    if len(np.unique(y)) < 2:
        raise SingleClass("training labels contain a single class")

    prior = float(np.clip(y.mean(), 1e-6, 1.0 - 1e-6))
    base = float(np.log(prior / (1.0 - prior)))
    model = GbdtModel(trees=[], base_score=base, params=params, n_features=X.shape[1])

    bins = FeatureBins(X, params.histogram_bins)
    binned = bins.transform(X)
    margins = np.full(len(y), base)
    previous = log_loss(y, sigmoid(margins))
    model.train_loss.append(previous)
    for _ in range(params.iterations):
        p = sigmoid(margins)
        g = p - y
        h = p * (1.0 - p)
        tree, contributions = _grow_tree(binned, bins, g, h, params)
        model.trees.append(tree)
        margins += params.learning_rate * contributions
        current = log_loss(y, sigmoid(margins))
        if current > previous + 1e-9:
            raise AssertionError(
                f"training log-loss increased: {previous:.12f} -> {current:.12f}"
            )
        model.train_loss.append(current)
        previous = current
    return model
