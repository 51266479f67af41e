"""Array-backed binary trees shared by the regression and uplift forests.

Nodes are stored in preorder. Internal nodes carry ``feature >= 0`` and
route ``x[feature] <= threshold`` to ``left``; leaves have ``feature == -1``
and an index into a per-tree leaf payload.
"""

import numpy as np


class FlatTree:
    __slots__ = ("feature", "threshold", "left", "right", "payload", "_values")

    def __init__(self, feature, threshold, left, right, payload):
        self.feature = np.asarray(feature, dtype=np.int64)
        self.threshold = np.asarray(threshold, dtype=np.float64)
        self.left = np.asarray(left, dtype=np.int64)
        self.right = np.asarray(right, dtype=np.int64)
        self.payload = payload  # list of leaf records, indexed by node id
        self._values = None

    def node_values(self, extract):
        """Per-node array of ``extract(leaf)``; rows of zeros for internal nodes."""
        if self._values is None:
            leaves = [i for i in range(self.n_nodes) if self.feature[i] < 0]
            first = np.asarray(extract(self.payload[leaves[0]]), dtype=np.float64)
            vals = np.zeros((self.n_nodes,) + first.shape)
            for i in leaves:
                vals[i] = extract(self.payload[i])
            self._values = vals
        return self._values

    @property
    def n_nodes(self):
        return len(self.feature)

    def apply(self, X):
        """Node id of the leaf reached by every row of ``X``."""
        X = np.asarray(X, dtype=np.float64)
        node = np.zeros(X.shape[0], dtype=np.int64)
        active = self.feature[node] >= 0
        rows = np.arange(X.shape[0])
        while np.any(active):
            r = rows[active]
            nd = node[r]
            go_left = X[r, self.feature[nd]] <= self.threshold[nd]
            node[r] = np.where(go_left, self.left[nd], self.right[nd])
            active = self.feature[node] >= 0
        return node

    def depth(self):
        def _d(i):
            if self.feature[i] < 0:
                return 0
            return 1 + max(_d(self.left[i]), _d(self.right[i]))
        return _d(0)

    def leaves(self):
        return [i for i in range(self.n_nodes) if self.feature[i] < 0]

    def to_nested(self, leaf_to_dict):
        def _node(i):
            if self.feature[i] < 0:
                return leaf_to_dict(self.payload[i])
            return {"f": int(self.feature[i]), "t": float(self.threshold[i]),
                    "l": _node(self.left[i]), "r": _node(self.right[i])}
        return _node(0)

    @classmethod
    def from_nested(cls, obj, leaf_from_dict):
        feature, threshold, left, right, payload = [], [], [], [], []

        def _add(node):
            i = len(feature)
            feature.append(-1)
            threshold.append(0.0)
            left.append(-1)
            right.append(-1)
            payload.append(None)
            if "f" in node:
                feature[i] = int(node["f"])
                threshold[i] = float(node["t"])
                left[i] = _add(node["l"])
                right[i] = _add(node["r"])
            else:
                payload[i] = leaf_from_dict(node)
            return i

        _add(obj)
        return cls(feature, threshold, left, right, payload)


class TreeBuilder:
    """Accumulates nodes in preorder during recursive growth."""

    def __init__(self):
        self.feature, self.threshold = [], []
        self.left, self.right, self.payload = [], [], []

    def new_node(self):
        self.feature.append(-1)
        self.threshold.append(0.0)
        self.left.append(-1)
        self.right.append(-1)
        self.payload.append(None)
        return len(self.feature) - 1

    def make_leaf(self, i, record):
        self.payload[i] = record

    def make_split(self, i, feature, threshold, left, right):
        self.feature[i] = feature
        self.threshold[i] = threshold
        self.left[i] = left
        self.right[i] = right

    def finish(self):
        return FlatTree(self.feature, self.threshold, self.left, self.right,
                        self.payload)


def split_positions(sorted_values):
    """Candidate cut positions and midpoint thresholds for sorted values.

    A cut at position ``i`` sends the first ``i + 1`` sorted rows left.
    Only cuts between distinct neighbouring values are returned.
    """
    a, b = sorted_values[:-1], sorted_values[1:]
    pos = np.flatnonzero(a < b)
    lo, hi = a[pos], b[pos]
    t = lo + (hi - lo) / 2
    # adjacent floats: the midpoint may round up onto the right value
    t = np.where(t >= hi, lo, t)
    return pos, t


def subsample_features(d, fraction, rng):
    """Sorted feature indices to search at one node."""
    m = max(1, min(d, int(round(fraction * d))))
    if m >= d:
        return np.arange(d)
    return np.sort(rng.choice(d, size=m, replace=False))


def tree_rng(seed, index):
    """Independent generator for tree ``index`` of an ensemble."""
    return np.random.default_rng(
        np.random.SeedSequence(entropy=int(seed), spawn_key=(int(index),)))


def map_ordered(fn, items, n_jobs=1):
    """``list(map(fn, items))``, optionally spread over worker threads.

    Results always come back in input order, so callers that derive every
    item's randomness from its index get schedule-independent output.
    """
    items = list(items)
    if n_jobs is None or n_jobs <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    from concurrent.futures import ThreadPoolExecutor
    with ThreadPoolExecutor(max_workers=n_jobs) as pool:
        return list(pool.map(fn, items))
