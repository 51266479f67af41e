"""Uplift trees and forests for binary outcomes.

Splits maximise the gain in treatment-vs-control divergence of the outcome
distribution (KL, squared Euclidean or chi-squared). With several
treatment arms the node divergence is the sum of each arm's divergence
from control.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from ._tree import (FlatTree, TreeBuilder, map_ordered, split_positions,
                    subsample_features, tree_rng)
from .dataset import BINARY
from .errors import ConfigError, FitError, InvariantError, UnsupportedOutcomeError

KL = "kl"
EUCLIDEAN = "euclidean"
CHI_SQUARED = "chi_squared"
CRITERIA = (KL, EUCLIDEAN, CHI_SQUARED)

# gains at or below this are treated as "no improvement"
GAIN_TOL = 1e-12


@dataclass(frozen=True)
class UpliftForestSpec:
    """Hyper-parameters of an uplift tree / forest.

    ``feature_subsample=None`` searches round(sqrt(d)) features per node.
    """

    criterion: str = KL
    n_trees: int = 100
    max_depth: int = 5
    min_leaf_per_group: int = 10
    feature_subsample: Optional[float] = None
    bootstrap: bool = True
    delta: float = 1e-6

    def __post_init__(self):
        if self.criterion not in CRITERIA:
            raise ConfigError(
                f"unknown criterion {self.criterion!r}; choose from {CRITERIA}")
        if self.n_trees < 1 or self.max_depth < 1 or self.min_leaf_per_group < 1:
            raise ConfigError("n_trees, max_depth and min_leaf_per_group must be >= 1")
        if self.feature_subsample is not None and not 0 < self.feature_subsample <= 1:
            raise ConfigError(
                f"feature_subsample must lie in (0, 1], got {self.feature_subsample}")
        if not 0 < self.delta < 0.1:
            raise ConfigError(f"delta must lie in (0, 0.1), got {self.delta}")

    def subsample_fraction(self, d):
        if self.feature_subsample is None:
            return math.sqrt(d) / d
        return self.feature_subsample

    def replace(self, **changes):
        return UpliftForestSpec(**{**asdict(self), **changes})

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, obj):
        return cls(**obj)


def divergence(p, q, kind, delta=1e-6):
    """Divergence of Bernoulli(p) from Bernoulli(q).

    KL and chi-squared clamp both rates into [delta, 1 - delta] first.
    Works elementwise on arrays.
    """
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if kind == EUCLIDEAN:
        out = 2.0 * (p - q) ** 2
    elif kind == KL:
        p = np.clip(p, delta, 1 - delta)
        q = np.clip(q, delta, 1 - delta)
        out = p * np.log(p / q) + (1 - p) * np.log((1 - p) / (1 - q))
    elif kind == CHI_SQUARED:
        p = np.clip(p, delta, 1 - delta)
        q = np.clip(q, delta, 1 - delta)
        sq = (p - q) ** 2
        out = sq / q + sq / (1 - q)
    else:
        raise ConfigError(f"unknown criterion {kind!r}")
    return float(out) if out.ndim == 0 else out


def _node_divergence(n, pos, kind, delta):
    # n, pos: (C, K+1) group counts; summed arm-by-arm in fixed order
    rate = pos / n
    total = np.zeros(n.shape[0])
    for k in range(1, n.shape[1]):
        total = total + divergence(rate[:, k], rate[:, 0], kind, delta)
    return total


def _gain_from_counts(nL, pL, nR, pR, kind, delta):
    """Split gain for C candidate splits given per-group child counts."""
    NL = nL.sum(axis=1).astype(np.float64)
    NR = nR.sum(axis=1).astype(np.float64)
    N = NL + NR
    child = (NL / N) * _node_divergence(nL, pL, kind, delta) \
        + (NR / N) * _node_divergence(nR, pR, kind, delta)
    parent = _node_divergence(nL + nR, pL + pR, kind, delta)
    return child - parent


def group_counts(w, y, K):
    """Per-group unit counts and positive counts, groups 0..K."""
    n = np.array([np.sum(w == g) for g in range(K + 1)], dtype=np.int64)
    pos = np.array([np.sum(y[w == g]) for g in range(K + 1)], dtype=np.float64)
    return n, pos


def split_gain(X, w, y, feature, threshold, kind, K=None, delta=1e-6,
               min_leaf_per_group=1):
    """Divergence gain of splitting the node rows ``(X, w, y)`` at
    ``x[feature] <= threshold``.

    Returns ``None`` when either child has fewer than ``min_leaf_per_group``
    units in control or in any arm; such a split is not a candidate.
    """
    X = np.asarray(X, dtype=np.float64)
    w = np.asarray(w, dtype=np.int64)
    y = np.asarray(y, dtype=np.float64)
    if K is None:
        K = int(w.max())
    left = X[:, feature] <= threshold
    nL, pL = group_counts(w[left], y[left], K)
    nR, pR = group_counts(w[~left], y[~left], K)
    if nL.min() < min_leaf_per_group or nR.min() < min_leaf_per_group:
        return None
    g = _gain_from_counts(nL[None, :], pL[None, :], nR[None, :], pR[None, :],
                          kind, delta)
    return float(g[0])


class UpliftLeaf:
    __slots__ = ("n", "pos", "uplift")

    def __init__(self, n, pos):
        self.n = np.asarray(n, dtype=np.int64)
        self.pos = np.asarray(pos, dtype=np.float64)
        rate = self.pos / self.n
        self.uplift = rate[1:] - rate[0]

    def to_dict(self):
        return {"leaf": {"n": [int(v) for v in self.n],
                         "pos": [int(v) for v in self.pos],
                         "uplift": [float(v) for v in self.uplift]}}

    @classmethod
    def from_dict(cls, obj):
        leaf = obj["leaf"]
        out = cls(leaf["n"], leaf["pos"])
        out.uplift = np.asarray(leaf["uplift"], dtype=np.float64)
        return out


def best_split(X, w, y, rows, features, K, kind, delta, min_leaf):
    """Highest-gain feasible split of ``rows`` over ``features``.

    Returns ``(gain, feature, threshold)`` or ``None``. Ties go to the lowest
    feature index, then the lowest threshold.
    """
    best = None
    for f in features:
        xs = X[rows, f]
        order = np.argsort(xs, kind="stable")
        xs = xs[order]
        ws = w[rows][order]
        ys = y[rows][order]
        pos, thr = split_positions(xs)
        if len(pos) == 0:
            continue
        nL = np.empty((len(pos), K + 1), dtype=np.int64)
        pL = np.empty((len(pos), K + 1))
        nT = np.empty(K + 1, dtype=np.int64)
        pT = np.empty(K + 1)
        for g in range(K + 1):
            is_g = ws == g
            cn = np.cumsum(is_g)
            cp = np.cumsum(np.where(is_g, ys, 0.0))
            nL[:, g], pL[:, g] = cn[pos], cp[pos]
            nT[g], pT[g] = cn[-1], cp[-1]
        nR, pR = nT - nL, pT - pL
        ok = (nL.min(axis=1) >= min_leaf) & (nR.min(axis=1) >= min_leaf)
        if not np.any(ok):
            continue
        gain = _gain_from_counts(nL[ok], pL[ok], nR[ok], pR[ok], kind, delta)
        j = int(np.argmax(gain))
        if best is None or gain[j] > best[0]:
            best = (float(gain[j]), int(f), float(thr[ok][j]))
    return best


class UpliftTree:
    """A fitted uplift tree; leaves hold per-group counts and uplifts."""

    def __init__(self, tree, n_arms, n_features):
        self.tree = tree
        self.n_arms = int(n_arms)
        self.n_features = int(n_features)

    def predict(self, X):
        X = _check_dims(X, self.n_features)
        return self.tree.node_values(lambda leaf: leaf.uplift)[self.tree.apply(X)]

    def leaf_of(self, X):
        return self.tree.apply(_check_dims(X, self.n_features))

    def leaves(self):
        return [self.tree.payload[i] for i in self.tree.leaves()]

    def to_dict(self):
        return self.tree.to_nested(UpliftLeaf.to_dict)

    @classmethod
    def from_dict(cls, obj, n_arms, n_features):
        return cls(FlatTree.from_nested(obj, UpliftLeaf.from_dict), n_arms, n_features)


class UpliftForest:
    def __init__(self, trees, spec, n_arms, n_features, seed):
        self.trees = list(trees)
        self.spec = spec
        self.n_arms = int(n_arms)
        self.n_features = int(n_features)
        self.seed = int(seed)

    def predict(self, X):
        X = _check_dims(X, self.n_features)
        acc = np.zeros((X.shape[0], self.n_arms))
        for t in self.trees:
            acc += t.predict(X)
        return acc / len(self.trees)

    def to_dict(self):
        return {"spec": self.spec.to_dict(), "n_arms": self.n_arms,
                "n_features": self.n_features, "seed": self.seed,
                "trees": [t.to_dict() for t in self.trees]}

    @classmethod
    def from_dict(cls, obj):
        K, d = obj["n_arms"], obj["n_features"]
        return cls([UpliftTree.from_dict(t, K, d) for t in obj["trees"]],
                   UpliftForestSpec.from_dict(obj["spec"]), K, d, obj["seed"])


def _check_dims(X, d):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    if X.shape[1] != d:
        raise InvariantError(f"model expects {d} feature columns, got {X.shape[1]}")
    return X


def _check_frame(frame, spec):
    if frame.outcome_kind != BINARY:
        raise UnsupportedOutcomeError(
            "uplift trees need a binary outcome; use a meta-learner "
            "(s, t, x or r) for continuous outcomes")
    need = 2 * spec.min_leaf_per_group
    for g in range(frame.n_arms + 1):
        cnt = int(np.sum(frame.treatment == g))
        if cnt < need:
            raise FitError(
                f"group {frame.arm_labels[g]!r} has {cnt} units; uplift tree "
                f"needs >= 2*min_leaf_per_group = {need}")


def _grow(X, w, y, rows, K, spec, rng):
    d = X.shape[1]
    frac = spec.subsample_fraction(d)
    m = spec.min_leaf_per_group
    b = TreeBuilder()

    def grow(rows, depth):
        i = b.new_node()
        n, pos = group_counts(w[rows], y[rows], K)
        if depth < spec.max_depth and n.min() >= 2 * m:
            feats = subsample_features(d, frac, rng)
            best = best_split(X, w, y, rows, feats, K, spec.criterion,
                              spec.delta, m)
            if best is not None and best[0] > GAIN_TOL:
                _, f, t = best
                go_left = X[rows, f] <= t
                lo = grow(rows[go_left], depth + 1)
                hi = grow(rows[~go_left], depth + 1)
                b.make_split(i, f, t, lo, hi)
                return i
        b.make_leaf(i, UpliftLeaf(n, pos))
        return i

    grow(rows, 0)
    return UpliftTree(b.finish(), K, d)


def _stratified_bootstrap(w, K, rng):
    parts = []
    for g in range(K + 1):
        idx = np.flatnonzero(w == g)
        parts.append(idx[rng.integers(0, len(idx), size=len(idx))])
    return np.sort(np.concatenate(parts))


def _fit_one(frame, spec, seed, index, bootstrap):
    rng = tree_rng(seed, index)
    K = frame.n_arms
    if bootstrap:
        rows = _stratified_bootstrap(frame.treatment, K, rng)
    else:
        rows = np.arange(frame.n)
    return _grow(frame.features, frame.treatment, frame.outcome, rows, K, spec, rng)


def fit_uplift_tree(frame, spec=None, seed=0):
    """Greedy uplift tree on all rows of ``frame`` (no bootstrap)."""
    spec = spec or UpliftForestSpec()
    _check_frame(frame, spec)
    return _fit_one(frame, spec, seed, 0, bootstrap=False)


def fit_uplift_forest(frame, spec=None, seed=0, n_jobs=1):
    """Forest of uplift trees on arm-stratified bootstrap resamples.

    Tree ``t`` uses a generator derived from ``(seed, t)`` for both its
    resample and its feature subsampling.
    """
    spec = spec or UpliftForestSpec()
    _check_frame(frame, spec)
    trees = map_ordered(
        lambda t: _fit_one(frame, spec, seed, t, spec.bootstrap),
        range(spec.n_trees), n_jobs)
    return UpliftForest(trees, spec, frame.n_arms, frame.d, seed)


def predict_uplift(model, X):
    """(m, K) matrix of predicted uplifts from a tree or forest."""
    return model.predict(X)
