"""Gradient-boosted regression trees, implemented from scratch.

Least-squares boosting: start from the target mean, then repeatedly fit a
shallow regression tree to the current residuals on a random subsample and
add it with a learning-rate weight. Split search is exact (every distinct
feature value is a candidate, no histograms), chosen by variance reduction.

Tree growth keeps per-feature presorted row orders and partitions them
stably at each split, so one boosting round is a linear scan per feature
per level; the hot loops are JIT-compiled with numba. Trees are stored as
flat parallel arrays so batch prediction is a few vectorized gather steps.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numba
import numpy as np

from .errors import InsufficientData, ValidationError

LEAF = -1


class Target(enum.Enum):
    LOG_LATENCY = "LogLatency"
    LOG_ENERGY = "LogEnergy"


@dataclass(frozen=True)
class GbdtHyper:
    trees: int = 200
    depth: int = 4
    learning_rate: float = 0.1
    subsample: float = 0.8
    min_leaf: int = 5

    def __post_init__(self):
        if self.trees < 1 or self.depth < 1 or self.min_leaf < 1:
            raise ValidationError("trees, depth, min_leaf must be >= 1")
        if not 0.0 < self.learning_rate <= 1.0 or not 0.0 < self.subsample <= 1.0:
            raise ValidationError("learning_rate and subsample must be in (0, 1]")


@dataclass(frozen=True)
class RegressionTree:
    """Flat binary tree: feature[i] == LEAF marks a leaf holding value[i]."""
    feature: np.ndarray     # int32 (n_nodes,)
    threshold: np.ndarray   # float64
    left: np.ndarray        # int32 child index
    right: np.ndarray       # int32 child index
    value: np.ndarray       # float64 node mean (leaf payload)

    def predict(self, X: np.ndarray, depth: int) -> np.ndarray:
        node = np.zeros(len(X), dtype=np.int32)
        for _ in range(depth):
            feat = self.feature[node]
            interior = feat != LEAF
            if not interior.any():
                break
            go_left = X[np.arange(len(X)), np.maximum(feat, 0)] <= self.threshold[node]
            node = np.where(interior,
                            np.where(go_left, self.left[node], self.right[node]),
                            node)
        return self.value[node]

    def max_path_len(self) -> int:
        def walk(i: int) -> int:
            if self.feature[i] == LEAF:
                return 0
            return 1 + max(walk(self.left[i]), walk(self.right[i]))
        return walk(0)

    def __eq__(self, other):
        if not isinstance(other, RegressionTree):
            return NotImplemented
        return all(np.array_equal(getattr(self, f), getattr(other, f))
                   for f in ("feature", "threshold", "left", "right", "value"))


@numba.njit(cache=True, parallel=True)
def _forest_predict(X, feat, thr, left, right, value, offset, base, lr):
    out = np.empty(X.shape[0])
    for i in numba.prange(X.shape[0]):
        acc = base
        for t in range(offset.shape[0] - 1):
            node = offset[t]
            f = feat[node]
            while f != LEAF:
                if X[i, f] <= thr[node]:
                    node = offset[t] + left[node]
                else:
                    node = offset[t] + right[node]
                f = feat[node]
            acc += lr * value[node]
        out[i] = acc
    return out


@dataclass(frozen=True, eq=False)
class GbdtModel:
    base_score: float
    learning_rate: float
    depth: int
    target: Target
    trees: tuple[RegressionTree, ...]
    train_mse: tuple[float, ...] = field(default=())

    def _packed(self):
        # flattened forest for the batched kernel; trees are immutable so the
        # cache can never go stale
        packed = getattr(self, "_packed_cache", None)
        if packed is None:
            offset = np.zeros(len(self.trees) + 1, dtype=np.int64)
            for t, tree in enumerate(self.trees):
                offset[t + 1] = offset[t] + len(tree.feature)
            packed = (np.concatenate([t.feature for t in self.trees]),
                      np.concatenate([t.threshold for t in self.trees]),
                      np.concatenate([t.left for t in self.trees]),
                      np.concatenate([t.right for t in self.trees]),
                      np.concatenate([t.value for t in self.trees]),
                      offset)
            object.__setattr__(self, "_packed_cache", packed)
        return packed

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.ascontiguousarray(np.asarray(X, dtype=np.float64))
        if X.ndim == 1:
            X = X[None, :]
        feat, thr, left, right, value, offset = self._packed()
        return _forest_predict(X, feat, thr, left, right, value, offset,
                               self.base_score, self.learning_rate)

    def predict_one(self, x: np.ndarray) -> float:
        return float(self.predict(x[None, :])[0])

    def __eq__(self, other):
        if not isinstance(other, GbdtModel):
            return NotImplemented
        return (self.base_score == other.base_score
                and self.learning_rate == other.learning_rate
                and self.depth == other.depth
                and self.target == other.target
                and len(self.trees) == len(other.trees)
                and all(a == b for a, b in zip(self.trees, other.trees)))


@numba.njit(cache=True)
def _grow_tree(Xcols, y, full_order, sub_mask, max_depth, min_leaf,
               feat_out, thr_out, left_out, right_out, value_out, pred_out):
    """Grow one variance-reduction tree; returns the number of nodes.

    Xcols is (features, rows); full_order holds, per feature, all row ids
    sorted by that feature's value. The subsample's sorted orders are pulled
    out once, then each split partitions every feature's order stably, so
    split search at any node is a single left-to-right scan with running
    sums. pred_out receives the tree's prediction for every row (not just
    the subsample), which the boosting driver uses to update residuals.
    """
    d, n = Xcols.shape
    m = 0
    for i in range(n):
        if sub_mask[i]:
            m += 1
    order = np.empty((d, m), np.int32)
    for f in range(d):
        k = 0
        for i in range(n):
            r = full_order[f, i]
            if sub_mask[r]:
                order[f, k] = r
                k += 1

    max_nodes = 2 ** (max_depth + 1) - 1
    seg_start = np.empty(max_nodes, np.int64)
    seg_end = np.empty(max_nodes, np.int64)
    node_depth = np.empty(max_nodes, np.int64)
    seg_start[0] = 0
    seg_end[0] = m
    node_depth[0] = 0
    n_nodes = 1
    go_left = np.empty(n, np.bool_)
    scratch = np.empty(m, np.int32)

    head = 0
    while head < n_nodes:
        node = head
        head += 1
        s, e, dep = seg_start[node], seg_end[node], node_depth[node]
        size = e - s
        feat_out[node] = LEAF
        thr_out[node] = 0.0
        left_out[node] = 0
        right_out[node] = 0
        total = 0.0
        for i in range(s, e):
            total += y[order[0, i]]
        value_out[node] = total / size
        if dep >= max_depth or size < 2 * min_leaf:
            continue

        base_score = total * total / size
        best_gain = 0.0
        best_f = -1
        best_thr = 0.0
        for f in range(d):
            left_sum = 0.0
            for i in range(s, e - 1):
                left_sum += y[order[f, i]]
                k = i - s + 1
                if k < min_leaf or k > size - min_leaf:
                    continue
                v = Xcols[f, order[f, i]]
                v_next = Xcols[f, order[f, i + 1]]
                if v >= v_next:
                    continue
                right_sum = total - left_sum
                score = left_sum * left_sum / k + right_sum * right_sum / (size - k)
                gain = score - base_score
                if gain > best_gain + 1e-12:
                    best_gain = gain
                    best_f = f
                    # midpoint threshold, but never at or past the right
                    # neighbor so `x <= thr` reproduces the scanned split
                    thr = 0.5 * (v + v_next)
                    best_thr = thr if v <= thr < v_next else v
        if best_f < 0:
            continue

        feat_out[node] = best_f
        thr_out[node] = best_thr
        li = n_nodes
        ri = n_nodes + 1
        n_nodes += 2
        left_out[node] = li
        right_out[node] = ri
        n_left = 0
        for i in range(s, e):
            r = order[best_f, i]
            gl = Xcols[best_f, r] <= best_thr
            go_left[r] = gl
            if gl:
                n_left += 1
        for f in range(d):
            nl = 0
            nr = 0
            for i in range(s, e):
                r = order[f, i]
                if go_left[r]:
                    order[f, s + nl] = r
                    nl += 1
                else:
                    scratch[nr] = r
                    nr += 1
            for j in range(nr):
                order[f, s + nl + j] = scratch[j]
        seg_start[li] = s
        seg_end[li] = s + n_left
        node_depth[li] = dep + 1
        seg_start[ri] = s + n_left
        seg_end[ri] = e
        node_depth[ri] = dep + 1

    for i in range(n):
        node = 0
        while feat_out[node] != LEAF:
            if Xcols[feat_out[node], i] <= thr_out[node]:
                node = left_out[node]
            else:
                node = right_out[node]
        pred_out[i] = value_out[node]
    return n_nodes


def train_gbdt(X: np.ndarray, y: np.ndarray, target: Target,
               hyper: GbdtHyper = GbdtHyper(), seed: int = 0,
               mse_every: int = 20) -> GbdtModel:
    """Fit a boosted ensemble to (X, y). Deterministic given seed.

    train_mse records the full-training-set MSE after every `mse_every`
    rounds, starting with the base score alone.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or len(X) != len(y):
        raise ValidationError("X must be 2-d with one row per label")
    n, d = X.shape
    if n < 10 * hyper.min_leaf:
        raise InsufficientData(f"need >= {10 * hyper.min_leaf} samples, got {n}")
    rng = np.random.default_rng(seed)
    Xcols = np.ascontiguousarray(X.T)
    full_order = np.empty((d, n), dtype=np.int32)
    for f in range(d):
        full_order[f] = np.argsort(Xcols[f])

    base = float(y.mean())
    pred = np.full(n, base)
    n_sub = max(min(10 * hyper.min_leaf, n), int(round(hyper.subsample * n)))
    max_nodes = 2 ** (hyper.depth + 1) - 1
    feat = np.empty(max_nodes, np.int32)
    thr = np.empty(max_nodes, np.float64)
    left = np.empty(max_nodes, np.int32)
    right = np.empty(max_nodes, np.int32)
    value = np.empty(max_nodes, np.float64)
    tree_pred = np.empty(n, np.float64)

    trees: list[RegressionTree] = []
    mse_log = [float(((y - pred) ** 2).mean())]
    for round_ in range(1, hyper.trees + 1):
        if n_sub < n:
            sub_mask = np.zeros(n, dtype=bool)
            sub_mask[rng.choice(n, size=n_sub, replace=False)] = True
        else:
            sub_mask = np.ones(n, dtype=bool)
        n_nodes = _grow_tree(Xcols, y - pred, full_order, sub_mask,
                             hyper.depth, hyper.min_leaf,
                             feat, thr, left, right, value, tree_pred)
        trees.append(RegressionTree(
            feature=feat[:n_nodes].copy(), threshold=thr[:n_nodes].copy(),
            left=left[:n_nodes].copy(), right=right[:n_nodes].copy(),
            value=value[:n_nodes].copy()))
        pred += hyper.learning_rate * tree_pred
        if round_ % mse_every == 0 or round_ == hyper.trees:
            mse_log.append(float(((y - pred) ** 2).mean()))
    return GbdtModel(base_score=base, learning_rate=hyper.learning_rate,
                     depth=hyper.depth, target=target, trees=tuple(trees),
                     train_mse=tuple(mse_log))
