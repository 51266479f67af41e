"""Supervised base learners behind one fit/predict contract.

Three kinds are available: ridge regression, L2-penalised logistic
regression and a bagged CART regression forest. Meta-learners only ever
call :func:`fit` and :func:`predict`, so the kinds are interchangeable.

No feature standardisation happens here; ridge and logistic coefficients
are reported on the raw feature scale.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from ._tree import (FlatTree, TreeBuilder, map_ordered, split_positions,
                    subsample_features, tree_rng)
from .errors import ConfigError, FitError, InvariantError, ModelFormatError

RIDGE = "ridge"
LOGISTIC = "logistic"
FOREST = "regression_forest"
KINDS = (RIDGE, LOGISTIC, FOREST)

# keeps logistic fits finite under complete separation
LOGISTIC_PENALTY = 1e-6

_P_LO = np.nextafter(0.0, 1.0)
_P_HI = np.nextafter(1.0, 0.0)


@dataclass(frozen=True)
class LearnerSpec:
    kind: str = RIDGE
    ridge_lambda: float = 1e-3
    n_trees: int = 100
    max_depth: Optional[int] = 6
    min_leaf: int = 5
    feature_subsample: float = 1.0
    bootstrap: bool = True
    max_iter: int = 100
    tol: float = 1e-8

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown learner kind {self.kind!r}; choose from {KINDS}")
        if not self.ridge_lambda >= 0:
            raise ConfigError(f"ridge_lambda must be >= 0, got {self.ridge_lambda}")
        if self.n_trees < 1:
            raise ConfigError(f"n_trees must be >= 1, got {self.n_trees}")
        if self.max_depth is not None and self.max_depth < 1:
            raise ConfigError(f"max_depth must be >= 1, got {self.max_depth}")
        if self.min_leaf < 1:
            raise ConfigError(f"min_leaf must be >= 1, got {self.min_leaf}")
        if not 0 < self.feature_subsample <= 1:
            raise ConfigError(
                f"feature_subsample must lie in (0, 1], got {self.feature_subsample}")
        if self.max_iter < 1 or not self.tol > 0:
            raise ConfigError("max_iter must be >= 1 and tol > 0")

    def replace(self, **changes):
        return LearnerSpec(**{**asdict(self), **changes})

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, obj):
        return cls(**obj)


class LearnerModel:
    """A fitted base learner.

    ``params`` is kind specific: ``{"coef", "intercept"}`` for ridge and
    logistic, ``{"trees"}`` (a list of :class:`FlatTree`) for the forest.
    """

    def __init__(self, spec, params, train_dims, info=None):
        self.spec = spec
        self.params = params
        self.train_dims = tuple(int(v) for v in train_dims)
        self.info = info or {}

    @property
    def kind(self):
        return self.spec.kind

    @property
    def n_features(self):
        return self.train_dims[1]

    def predict(self, X):
        return predict(self, X)

    def to_dict(self):
        out = {"kind": self.kind, "spec": self.spec.to_dict(),
               "train_dims": list(self.train_dims)}
        if self.kind == FOREST:
            out["trees"] = [t.to_nested(_reg_leaf_to_dict)
                            for t in self.params["trees"]]
        else:
            out["coef"] = [float(v) for v in self.params["coef"]]
            out["intercept"] = float(self.params["intercept"])
        return out

    @classmethod
    def from_dict(cls, obj):
        try:
            spec = LearnerSpec.from_dict(obj["spec"])
            if spec.kind == FOREST:
                params = {"trees": [FlatTree.from_nested(t, _reg_leaf_from_dict)
                                    for t in obj["trees"]]}
            else:
                params = {"coef": np.array(obj["coef"], dtype=np.float64),
                          "intercept": float(obj["intercept"])}
            return cls(spec, params, obj["train_dims"])
        except (KeyError, TypeError) as exc:
            raise ModelFormatError(f"malformed learner object: {exc}") from exc


def linear_model(coef, intercept, kind=RIDGE):
    """Hand-built ridge/logistic model, e.g. for injecting known components."""
    coef = np.atleast_1d(np.asarray(coef, dtype=np.float64))
    return LearnerModel(LearnerSpec(kind=kind),
                        {"coef": coef, "intercept": float(intercept)},
                        (0, len(coef)))


def _as_xy(X, y):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    y = np.asarray(y, dtype=np.float64).ravel()
    if X.shape[0] != y.shape[0]:
        raise InvariantError(f"X has {X.shape[0]} rows but y has {y.shape[0]}")
    if X.shape[0] < 1:
        raise FitError("cannot fit on zero rows")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise InvariantError("non-finite values in training data")
    return X, y


def _as_weights(sample_weight, n):
    if sample_weight is None:
        return None
    w = np.asarray(sample_weight, dtype=np.float64).ravel()
    if w.shape != (n,) or not np.all(np.isfinite(w)) or np.any(w < 0):
        raise InvariantError("sample weights must be n finite non-negative values")
    if not w.sum() > 0:
        raise FitError("sample weights sum to zero")
    return w


# ---------------------------------------------------------------- ridge

def ridge_solution(X, y, lam, sample_weight=None):
    """Coefficients minimising sum w_i (y_i - x_i.coef - b)^2 + lam |coef|^2.

    The intercept is unpenalised; the system is solved on weighted-centred
    data. With ``lam == 0`` and a singular design the minimum-norm solution
    is returned.
    """
    X, y = _as_xy(X, y)
    sw = _as_weights(sample_weight, len(y))
    if sw is None:
        sw = np.ones(len(y))
    W = sw.sum()
    xbar = sw @ X / W
    ybar = sw @ y / W
    Xc = X - xbar
    yc = y - ybar
    A = Xc.T @ (Xc * sw[:, None])
    rhs = Xc.T @ (sw * yc)
    if lam > 0:
        A[np.diag_indices_from(A)] += lam
        coef = np.linalg.solve(A, rhs)
    else:
        coef = np.linalg.lstsq(A, rhs, rcond=None)[0]
    return coef, float(ybar - xbar @ coef)


def fit_ridge(X, y, lam=1e-3, sample_weight=None, spec=None):
    X, y = _as_xy(X, y)
    coef, b = ridge_solution(X, y, lam, sample_weight)
    spec = spec or LearnerSpec(kind=RIDGE, ridge_lambda=lam)
    return LearnerModel(spec, {"coef": coef, "intercept": b}, X.shape)


# ------------------------------------------------------------- logistic

def sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def logistic_objective(coef, intercept, X, y, penalty=LOGISTIC_PENALTY,
                       sample_weight=None):
    """Penalised log-likelihood: sum w[y z - log(1 + e^z)] - penalty/2 |coef|^2."""
    z = X @ coef + intercept
    sw = 1.0 if sample_weight is None else sample_weight
    return float(np.sum(sw * (y * z - np.logaddexp(0.0, z)))
                 - 0.5 * penalty * coef @ coef)


def logistic_gradient(coef, intercept, X, y, penalty=LOGISTIC_PENALTY,
                      sample_weight=None):
    """Gradient of :func:`logistic_objective` as (d/dintercept, d/dcoef...)."""
    r = y - sigmoid(X @ coef + intercept)
    if sample_weight is not None:
        r = r * sample_weight
    return np.concatenate([[r.sum()], X.T @ r - penalty * coef])


def fit_logistic(X, y, spec=None, sample_weight=None):
    """Newton-Raphson fit with step halving.

    Stops when the gradient's max-norm drops below ``spec.tol`` or after
    ``spec.max_iter`` iterations.
    """
    spec = spec or LearnerSpec(kind=LOGISTIC)
    X, y = _as_xy(X, y)
    sw = _as_weights(sample_weight, len(y))
    if not np.all((y == 0) | (y == 1)):
        raise FitError("logistic regression needs 0/1 outcomes")
    present = y if sw is None else y[sw > 0]
    if present.min() == present.max():
        raise FitError(
            f"single-class outcome (all {int(present[0])}): logistic fit is "
            "undefined; drop or merge this degenerate arm, or use a "
            "regression base learner")
    n, d = X.shape
    Z = np.column_stack([np.ones(n), X])
    pen = np.full(d + 1, LOGISTIC_PENALTY)
    pen[0] = 0.0
    sw_ = np.ones(n) if sw is None else sw
    beta = np.zeros(d + 1)

    def obj(b):
        return logistic_objective(b[1:], b[0], X, y, sample_weight=sw)

    cur = obj(beta)
    converged = False
    it = 0
    for it in range(1, spec.max_iter + 1):
        p = sigmoid(Z @ beta)
        grad = Z.T @ (sw_ * (y - p)) - pen * beta
        if np.max(np.abs(grad)) < spec.tol:
            converged = True
            break
        H = Z.T @ (Z * (sw_ * p * (1 - p))[:, None])
        H[np.diag_indices_from(H)] += pen
        try:
            step = np.linalg.solve(H, grad)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(H, grad, rcond=None)[0]
        t = 1.0
        for _ in range(40):
            cand = beta + t * step
            val = obj(cand)
            if val >= cur:
                break
            t *= 0.5
        else:
            break
        beta, cur = cand, val
    else:
        p = sigmoid(Z @ beta)
        grad = Z.T @ (sw_ * (y - p)) - pen * beta
        converged = bool(np.max(np.abs(grad)) < spec.tol)
    return LearnerModel(spec, {"coef": beta[1:].copy(), "intercept": float(beta[0])},
                        (n, d), info={"converged": converged, "n_iter": it})


# --------------------------------------------------------------- forest

class _RegLeaf:
    __slots__ = ("value", "n")

    def __init__(self, value, n):
        self.value = float(value)
        self.n = int(n)


def _reg_leaf_to_dict(leaf):
    return {"value": leaf.value, "n": leaf.n}


def _reg_leaf_from_dict(obj):
    return _RegLeaf(obj["value"], obj["n"])


def _best_variance_split(X, y, w, rows, features, min_leaf):
    """Weighted variance-reduction split over the given features.

    Returns (gain, feature, threshold) or None. Ties keep the lowest feature
    index, then the lowest threshold.
    """
    best = None
    n = len(rows)
    for f in features:
        xs = X[rows, f]
        order = np.argsort(xs, kind="stable")
        xs = xs[order]
        ws = w[rows][order]
        wy = ws * y[rows][order]
        pos, thr = split_positions(xs)
        n_left = pos + 1
        ok = (n_left >= min_leaf) & (n - n_left >= min_leaf)
        if not np.any(ok):
            continue
        pos, thr = pos[ok], thr[ok]
        cw = np.cumsum(ws)
        cwy = np.cumsum(wy)
        WL, SL = cw[pos], cwy[pos]
        W, S = cw[-1], cwy[-1]
        WR, SR = W - WL, S - SL
        with np.errstate(divide="ignore", invalid="ignore"):
            gain = SL * SL / WL + SR * SR / WR - S * S / W
        gain = np.where((WL > 0) & (WR > 0), gain, -np.inf)
        j = int(np.argmax(gain))
        if best is None or gain[j] > best[0]:
            best = (float(gain[j]), int(f), float(thr[j]))
    return best


def _grow_regression_tree(X, y, w, rows, spec, rng):
    b = TreeBuilder()
    d = X.shape[1]

    def grow(rows, depth):
        i = b.new_node()
        yr, wr = y[rows], w[rows]
        value = yr[0] if np.all(yr == yr[0]) else (wr @ yr) / wr.sum()
        stop = (np.all(yr == yr[0])
                or (spec.max_depth is not None and depth >= spec.max_depth)
                or len(rows) < 2 * spec.min_leaf)
        if not stop:
            feats = subsample_features(d, spec.feature_subsample, rng)
            best = _best_variance_split(X, y, w, rows, feats, spec.min_leaf)
            if best is not None and best[0] > 0:
                _, f, t = best
                go_left = X[rows, f] <= t
                lo = grow(rows[go_left], depth + 1)
                hi = grow(rows[~go_left], depth + 1)
                b.make_split(i, f, t, lo, hi)
                return i
        b.make_leaf(i, _RegLeaf(value, len(rows)))
        return i

    grow(rows, 0)
    return b.finish()


def fit_regression_forest(X, y, spec=None, seed=0, sample_weight=None, n_jobs=1):
    """Bagged CART regression trees split on weighted variance reduction.

    Tree ``t`` draws its bootstrap (indexing the original row order) and its
    feature subsamples from a generator seeded by ``(seed, t)``, so the
    fitted forest does not depend on ``n_jobs``.
    """
    spec = spec or LearnerSpec(kind=FOREST)
    X, y = _as_xy(X, y)
    n, d = X.shape
    if n < 2 * spec.min_leaf:
        raise FitError(
            f"regression forest needs n >= 2*min_leaf = {2 * spec.min_leaf}, got {n}")
    sw = _as_weights(sample_weight, n)
    if sw is None:
        sw = np.ones(n)

    def one_tree(t):
        rng = tree_rng(seed, t)
        if spec.bootstrap:
            rows = np.sort(rng.integers(0, n, size=n))
        else:
            rows = np.arange(n)
        return _grow_regression_tree(X, y, sw, rows, spec, rng)

    trees = map_ordered(one_tree, range(spec.n_trees), n_jobs)
    return LearnerModel(spec, {"trees": trees}, (n, d))


def _forest_predict(trees, X):
    acc = np.zeros(X.shape[0])
    for t in trees:
        leaf = t.apply(X)
        acc += t.node_values(lambda leaf: leaf.value)[leaf]
    return acc / len(trees)


# ------------------------------------------------------------- dispatch

def fit(spec, X, y, seed=0, sample_weight=None, n_jobs=1):
    """Fit the learner described by ``spec``."""
    if spec.kind == RIDGE:
        return fit_ridge(X, y, spec.ridge_lambda, sample_weight, spec=spec)
    if spec.kind == LOGISTIC:
        return fit_logistic(X, y, spec, sample_weight)
    return fit_regression_forest(X, y, spec, seed, sample_weight, n_jobs)


def predict(model, X):
    """Conditional mean (ridge, forest) or probability (logistic) per row."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    if X.shape[1] != model.n_features:
        raise InvariantError(
            f"model expects {model.n_features} feature columns, got {X.shape[1]}")
    if model.kind == FOREST:
        return _forest_predict(model.params["trees"], X)
    z = X @ model.params["coef"] + model.params["intercept"]
    if model.kind == LOGISTIC:
        return np.clip(sigmoid(z), _P_LO, _P_HI)
    return z
