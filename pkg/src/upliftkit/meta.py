"""CATE estimators: S/T/X/R meta-learners plus the uplift-forest wrapper,
propensity scores, ATE reports (CATE mean, IPW, naive) and treatment
recommendation.

Multiple treatment arms are handled as K separate arm-vs-control problems
that share the control rows.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import learners as L
from ._tree import map_ordered
from .dataset import BINARY, naive_ate
from .errors import (ConfigError, EstimationError, FitError, InvariantError,
                     ModelFormatError, PropensityError)
from .learners import LearnerModel, LearnerSpec
from .uplift_forest import UpliftForest, UpliftForestSpec, fit_uplift_forest

METHODS = ("s", "t", "x", "r", "uplift_forest")
DEFAULT_CLIP = 0.01


def sub_seed(seed, *keys):
    """Deterministic child seed for a (seed, key...) path."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in keys))
    return int(ss.generate_state(1, dtype=np.uint32)[0])


# ------------------------------------------------------------ propensity

def _check_clip(eps):
    if not 0 < eps < 0.5:
        raise ConfigError(f"propensity clip must lie in (0, 0.5), got {eps}")


def fit_propensity(X, t, eps=DEFAULT_CLIP):
    """Logistic model of P(t = 1 | X); returns (model, clipped in-sample scores)."""
    _check_clip(eps)
    t = np.asarray(t, dtype=np.float64)
    if t.min() == t.max():
        raise PropensityError(
            "treatment indicator is constant: cannot fit a propensity model")
    try:
        model = L.fit_logistic(X, t, LearnerSpec(kind=L.LOGISTIC))
    except FitError as exc:
        raise PropensityError(str(exc)) from exc
    return model, np.clip(L.predict(model, X), eps, 1 - eps)


def estimate_propensity(frame, arm=1, eps=DEFAULT_CLIP):
    """Propensity of ``arm`` versus control for the arm+control rows.

    A propensity column on the frame is returned (clipped) as is; otherwise a
    logistic regression on the features is fitted. The output follows the
    row order of ``frame.restrict(arm)``.
    """
    _check_clip(eps)
    sub = frame.restrict(arm)
    if sub.propensity is not None:
        return np.clip(sub.propensity, eps, 1 - eps)
    return fit_propensity(sub.features, sub.treatment, eps)[1]


def _outcome_spec(base, outcome_kind):
    if outcome_kind == BINARY and base.kind in (L.RIDGE, L.LOGISTIC):
        return base.replace(kind=L.LOGISTIC)
    if outcome_kind != BINARY and base.kind == L.LOGISTIC:
        raise ConfigError("logistic base learner needs a binary outcome")
    return base


def _effect_spec(base):
    # imputed effects and pseudo-outcomes are unbounded reals
    if base.kind == L.LOGISTIC:
        return base.replace(kind=L.RIDGE)
    return base


# ------------------------------------------------------ arm components

class SArm:
    """One outcome model on [X, treated]; effect = mu(x, 1) - mu(x, 0)."""

    kind = "s"

    def __init__(self, model):
        self.model = model

    def predict(self, X):
        one = np.column_stack([X, np.ones(len(X))])
        zero = np.column_stack([X, np.zeros(len(X))])
        return L.predict(self.model, one) - L.predict(self.model, zero)

    def to_dict(self):
        return {"kind": self.kind, "model": self.model.to_dict()}

    @classmethod
    def from_dict(cls, obj):
        return cls(LearnerModel.from_dict(obj["model"]))


class TArm:
    kind = "t"

    def __init__(self, mu0, mu1):
        self.mu0, self.mu1 = mu0, mu1

    def predict(self, X):
        return L.predict(self.mu1, X) - L.predict(self.mu0, X)

    def to_dict(self):
        return {"kind": self.kind, "mu0": self.mu0.to_dict(), "mu1": self.mu1.to_dict()}

    @classmethod
    def from_dict(cls, obj):
        return cls(LearnerModel.from_dict(obj["mu0"]), LearnerModel.from_dict(obj["mu1"]))


class XArm:
    """X-learner arm: tau(x) = g(x) tau0(x) + (1 - g(x)) tau1(x).

    ``g`` is either a fitted propensity model (clipped to [eps, 1-eps] at
    prediction time) or a constant weight.
    """

    kind = "x"

    def __init__(self, mu0, mu1, tau0, tau1, g, eps=DEFAULT_CLIP):
        self.mu0, self.mu1 = mu0, mu1
        self.tau0, self.tau1 = tau0, tau1
        self.g = g
        self.eps = eps

    def weight(self, X):
        if isinstance(self.g, LearnerModel):
            return np.clip(L.predict(self.g, X), self.eps, 1 - self.eps)
        return np.full(len(X), float(self.g))

    def predict(self, X):
        g = self.weight(X)
        return g * L.predict(self.tau0, X) + (1 - g) * L.predict(self.tau1, X)

    def to_dict(self):
        g = self.g.to_dict() if isinstance(self.g, LearnerModel) else float(self.g)
        return {"kind": self.kind, "mu0": self.mu0.to_dict(), "mu1": self.mu1.to_dict(),
                "tau0": self.tau0.to_dict(), "tau1": self.tau1.to_dict(),
                "g": g, "eps": self.eps}

    @classmethod
    def from_dict(cls, obj):
        g = obj["g"]
        g = LearnerModel.from_dict(g) if isinstance(g, dict) else float(g)
        return cls(*(LearnerModel.from_dict(obj[k]) for k in ("mu0", "mu1", "tau0", "tau1")),
                   g=g, eps=obj["eps"])


class RArm:
    kind = "r"

    def __init__(self, tau):
        self.tau = tau

    def predict(self, X):
        return L.predict(self.tau, X)

    def to_dict(self):
        return {"kind": self.kind, "tau": self.tau.to_dict()}

    @classmethod
    def from_dict(cls, obj):
        return cls(LearnerModel.from_dict(obj["tau"]))


_ARM_TYPES = {c.kind: c for c in (SArm, TArm, XArm, RArm)}


class CateModel:
    """A fitted CATE estimator over K treatment arms.

    For the meta-learners ``components[k-1]`` estimates the effect of arm k;
    for ``uplift_forest`` the single component is an :class:`UpliftForest`
    covering every arm.
    """

    def __init__(self, method, components, arm_labels, feature_names,
                 outcome_kind, base_spec=None, forest_spec=None,
                 propensity_clip=DEFAULT_CLIP, seed=0):
        if method not in METHODS:
            raise ConfigError(f"unknown method {method!r}; choose from {METHODS}")
        self.method = method
        self.components = list(components)
        self.arm_labels = tuple(arm_labels)
        self.feature_names = tuple(feature_names)
        self.outcome_kind = outcome_kind
        self.base_spec = base_spec
        self.forest_spec = forest_spec
        self.propensity_clip = propensity_clip
        self.seed = int(seed)
        if self.n_arms < 1:
            raise InvariantError("a CATE model needs at least one treatment arm")
        _check_clip(propensity_clip)

    @property
    def n_arms(self):
        return len(self.arm_labels) - 1

    @property
    def n_features(self):
        return len(self.feature_names)

    def predict(self, X):
        return predict_cate(self, X)

    def to_dict(self):
        return {
            "method": self.method,
            "arm_labels": list(self.arm_labels),
            "feature_names": list(self.feature_names),
            "outcome_kind": self.outcome_kind,
            "base_spec": None if self.base_spec is None else self.base_spec.to_dict(),
            "forest_spec": None if self.forest_spec is None else self.forest_spec.to_dict(),
            "propensity_clip": self.propensity_clip,
            "seed": self.seed,
            "components": [c.to_dict() for c in self.components],
        }

    @classmethod
    def from_dict(cls, obj):
        try:
            method = obj["method"]
            if method == "uplift_forest":
                comps = [UpliftForest.from_dict(c) for c in obj["components"]]
            else:
                comps = [_ARM_TYPES[c["kind"]].from_dict(c) for c in obj["components"]]
            base = obj.get("base_spec")
            fspec = obj.get("forest_spec")
            return cls(method, comps, obj["arm_labels"], obj["feature_names"],
                       obj["outcome_kind"],
                       base_spec=None if base is None else LearnerSpec.from_dict(base),
                       forest_spec=None if fspec is None else UpliftForestSpec.from_dict(fspec),
                       propensity_clip=obj["propensity_clip"], seed=obj["seed"])
        except (KeyError, TypeError) as exc:
            raise ModelFormatError(f"malformed CATE model: {exc}") from exc


# -------------------------------------------------------------- fitters

def _fit_s_arm(sub, base, seed, n_jobs):
    spec = _outcome_spec(base, sub.outcome_kind)
    Xa = np.column_stack([sub.features, sub.treatment.astype(np.float64)])
    return SArm(L.fit(spec, Xa, sub.outcome, seed=seed, n_jobs=n_jobs))


def _split_groups(sub):
    t = sub.treatment == 1
    X, y = sub.features, sub.outcome
    return X[~t], y[~t], X[t], y[t]


def _fit_t_arm(sub, base, seed, n_jobs):
    spec = _outcome_spec(base, sub.outcome_kind)
    X0, y0, X1, y1 = _split_groups(sub)
    mu0 = L.fit(spec, X0, y0, seed=sub_seed(seed, 0), n_jobs=n_jobs)
    mu1 = L.fit(spec, X1, y1, seed=sub_seed(seed, 1), n_jobs=n_jobs)
    return TArm(mu0, mu1)


def fit_x_arm(X, t, y, base, seed=0, eps=DEFAULT_CLIP, outcome_kind="continuous",
              mu0=None, mu1=None, g=None, propensity=None, n_jobs=1):
    """X-learner for one arm against control.

    ``mu0``/``mu1`` (stage-one outcome models) and ``g`` (a propensity model
    or constant weight) may be injected; anything not given is fitted.
    """
    X = np.asarray(X, dtype=np.float64)
    t = np.asarray(t).astype(bool)
    y = np.asarray(y, dtype=np.float64)
    spec = _outcome_spec(base, outcome_kind)
    if mu0 is None:
        mu0 = L.fit(spec, X[~t], y[~t], seed=sub_seed(seed, 0), n_jobs=n_jobs)
    if mu1 is None:
        mu1 = L.fit(spec, X[t], y[t], seed=sub_seed(seed, 1), n_jobs=n_jobs)
    d1 = y[t] - L.predict(mu0, X[t])
    d0 = L.predict(mu1, X[~t]) - y[~t]
    espec = _effect_spec(base)
    tau1 = L.fit(espec, X[t], d1, seed=sub_seed(seed, 2), n_jobs=n_jobs)
    tau0 = L.fit(espec, X[~t], d0, seed=sub_seed(seed, 3), n_jobs=n_jobs)
    if g is None:
        if propensity is not None:
            # a supplied score column cannot be evaluated at new points
            g = float(np.mean(np.clip(propensity, eps, 1 - eps)))
        else:
            g = fit_propensity(X, t, eps)[0]
    return XArm(mu0, mu1, tau0, tau1, g, eps)


def _fit_x_arm(sub, base, seed, eps, n_jobs):
    return fit_x_arm(sub.features, sub.treatment, sub.outcome, base, seed, eps,
                     sub.outcome_kind, propensity=sub.propensity, n_jobs=n_jobs)


def two_fold_ids(t, seed):
    """Fold label (0/1) per row from a seeded shuffle within each group."""
    rng = np.random.default_rng(seed)
    fold = np.empty(len(t), dtype=np.int64)
    for g in (0, 1):
        idx = np.flatnonzero(t == g)
        perm = idx[rng.permutation(len(idx))]
        fold[perm] = np.arange(len(idx)) % 2
    return fold


def r_stage(X, t, y, m_hat, e_hat, spec, eps=0.0, seed=0, n_jobs=1):
    """Final R-learner regression given nuisance predictions.

    Returns ``(tau_model, psi, omega)`` with pseudo-outcomes
    psi = (y - m)/(t - e) and weights omega = (t - e)^2.
    """
    t = np.asarray(t, dtype=np.float64)
    resid_t = t - np.asarray(e_hat, dtype=np.float64)
    # e is clipped to [eps, 1-eps] and t is 0/1, so |t - e| >= eps > 0
    assert np.all(np.abs(resid_t) >= eps) and np.all(resid_t != 0)
    psi = (np.asarray(y, dtype=np.float64) - np.asarray(m_hat, dtype=np.float64)) / resid_t
    omega = resid_t ** 2
    tau = L.fit(spec, X, psi, seed=seed, sample_weight=omega, n_jobs=n_jobs)
    return tau, psi, omega


def _fit_r_arm(sub, base, seed, eps, n_jobs):
    X, t, y = sub.features, sub.treatment, sub.outcome
    fold = two_fold_ids(t, sub_seed(seed, 0))
    ospec = _outcome_spec(base, sub.outcome_kind)
    m_hat = np.empty(len(y))
    e_hat = np.empty(len(y))
    for f in (0, 1):
        fit_rows, out_rows = fold != f, fold == f
        mu = L.fit(ospec, X[fit_rows], y[fit_rows], seed=sub_seed(seed, 1, f),
                   n_jobs=n_jobs)
        m_hat[out_rows] = L.predict(mu, X[out_rows])
        if sub.propensity is None:
            pm, _ = fit_propensity(X[fit_rows], t[fit_rows], eps)
            e_hat[out_rows] = np.clip(L.predict(pm, X[out_rows]), eps, 1 - eps)
    if sub.propensity is not None:
        e_hat = np.clip(sub.propensity, eps, 1 - eps)
    tau, _, _ = r_stage(X, t, y, m_hat, e_hat, _effect_spec(base), eps,
                        seed=sub_seed(seed, 2), n_jobs=n_jobs)
    return RArm(tau)


def _fit_meta(method, frame, base, seed, eps, n_jobs):
    base = base or LearnerSpec()
    _check_clip(eps)
    comps = []
    for k in range(1, frame.n_arms + 1):
        sub = frame.restrict(k)
        n1 = int(sub.treatment.sum())
        if n1 == 0:
            raise EstimationError(f"arm {frame.arm_labels[k]!r} has no units")
        s = sub_seed(seed, k)
        if method == "s":
            comps.append(_fit_s_arm(sub, base, s, n_jobs))
        elif method == "t":
            comps.append(_fit_t_arm(sub, base, s, n_jobs))
        elif method == "x":
            comps.append(_fit_x_arm(sub, base, s, eps, n_jobs))
        else:
            comps.append(_fit_r_arm(sub, base, s, eps, n_jobs))
    return CateModel(method, comps, frame.arm_labels, frame.feature_names,
                     frame.outcome_kind, base_spec=base, propensity_clip=eps,
                     seed=seed)


def fit_s(frame, base_spec=None, seed=0, eps=DEFAULT_CLIP, n_jobs=1):
    """S-learner: one outcome model with the treatment indicator as a feature."""
    return _fit_meta("s", frame, base_spec, seed, eps, n_jobs)


def fit_t(frame, base_spec=None, seed=0, eps=DEFAULT_CLIP, n_jobs=1):
    """T-learner: separate outcome models for the arm and for control."""
    return _fit_meta("t", frame, base_spec, seed, eps, n_jobs)


def fit_x(frame, base_spec=None, seed=0, eps=DEFAULT_CLIP, n_jobs=1):
    """X-learner with the propensity score as the combination weight."""
    return _fit_meta("x", frame, base_spec, seed, eps, n_jobs)


def fit_r(frame, base_spec=None, seed=0, eps=DEFAULT_CLIP, n_jobs=1):
    """R-learner with two-fold cross-fitted nuisances."""
    return _fit_meta("r", frame, base_spec, seed, eps, n_jobs)


def fit_uplift_forest_model(frame, forest_spec=None, seed=0, eps=DEFAULT_CLIP,
                            n_jobs=1):
    forest_spec = forest_spec or UpliftForestSpec()
    forest = fit_uplift_forest(frame, forest_spec, seed, n_jobs)
    return CateModel("uplift_forest", [forest], frame.arm_labels,
                     frame.feature_names, frame.outcome_kind,
                     forest_spec=forest_spec, propensity_clip=eps, seed=seed)


def fit_cate(frame, method, base_spec=None, forest_spec=None, seed=0,
             eps=DEFAULT_CLIP, n_jobs=1):
    """Fit any estimator by method name."""
    if method == "uplift_forest":
        return fit_uplift_forest_model(frame, forest_spec, seed, eps, n_jobs)
    if method not in METHODS:
        raise ConfigError(f"unknown method {method!r}; choose from {METHODS}")
    return _fit_meta(method, frame, base_spec, seed, eps, n_jobs)


def refit(model, frame, seed=None, n_jobs=1):
    """Same estimator configuration, new data."""
    return fit_cate(frame, model.method, model.base_spec, model.forest_spec,
                    model.seed if seed is None else seed, model.propensity_clip,
                    n_jobs)


def predict_cate(model, X):
    """(m, K) matrix; column k-1 is the estimated effect of arm k."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    if X.shape[1] != model.n_features:
        raise InvariantError(
            f"model expects {model.n_features} feature columns, got {X.shape[1]}")
    if model.method == "uplift_forest":
        return model.components[0].predict(X)
    return np.column_stack([c.predict(X) for c in model.components])


# ----------------------------------------------------------- ATE reports

@dataclass(frozen=True)
class AteReport:
    arm: str
    method: str
    estimate: float
    ci_low: float
    ci_high: float
    bootstrap_draws: int

    def to_dict(self):
        return {"arm": self.arm, "method": self.method, "estimate": self.estimate,
                "ci_low": self.ci_low, "ci_high": self.ci_high,
                "b": self.bootstrap_draws}


def _check_b(b):
    if b < 10:
        raise ConfigError(f"bootstrap needs at least 10 draws, got {b}")


def stratified_resample(treatment, rng):
    """Bootstrap row indices drawn separately within every arm."""
    parts = []
    for g in np.unique(treatment):
        idx = np.flatnonzero(treatment == g)
        parts.append(idx[rng.integers(0, len(idx), size=len(idx))])
    return np.sort(np.concatenate(parts))


def _percentile_report(arm, method, estimate, draws):
    lo, hi = np.percentile(draws, [2.5, 97.5])
    # a percentile interval need not straddle the point estimate
    return AteReport(arm, method, float(estimate), float(min(lo, estimate)),
                     float(max(hi, estimate)), len(draws))


def _bootstrap(stat, treatment, b, seed, n_jobs):
    def draw(i):
        rows = stratified_resample(treatment, np.random.default_rng(sub_seed(seed, i)))
        return stat(rows, i)
    return np.array(map_ordered(draw, range(b), n_jobs))


def ate_from_cate(model, frame, bootstrap_b=200, seed=0, n_jobs=1):
    """Per-arm ATE as the mean predicted CATE, with percentile bootstrap CIs.

    Every draw resamples rows within arms, refits the estimator and
    recomputes the mean prediction over the resampled units.
    """
    _check_b(bootstrap_b)
    point = predict_cate(model, frame.features).mean(axis=0)

    def stat(rows, i):
        boot = frame.take(rows)
        m = refit(model, boot, seed=sub_seed(model.seed, i))
        return predict_cate(m, boot.features).mean(axis=0)

    draws = _bootstrap(stat, frame.treatment, bootstrap_b, seed, n_jobs)
    return [_percentile_report(frame.arm_labels[k], "cate_mean", point[k - 1],
                               draws[:, k - 1])
            for k in range(1, frame.n_arms + 1)]


def ipw_estimate(t, y, e):
    """Horvitz-Thompson difference: mean(t y / e - (1 - t) y / (1 - e))."""
    t = np.asarray(t, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    e = np.asarray(e, dtype=np.float64)
    return float(np.mean(t * y / e - (1 - t) * y / (1 - e)))


def ipw_ate(frame, arm=1, eps=DEFAULT_CLIP, bootstrap_b=200, seed=0, n_jobs=1):
    """Inverse-propensity-weighted ATE of ``arm`` versus control.

    The bootstrap refits the propensity model on every resample.
    """
    _check_b(bootstrap_b)
    sub = frame.restrict(arm)
    e = estimate_propensity(sub, 1, eps)
    est = ipw_estimate(sub.treatment, sub.outcome, e)

    def stat(rows, i):
        boot = sub.take(rows)
        return ipw_estimate(boot.treatment, boot.outcome,
                            estimate_propensity(boot, 1, eps))

    draws = _bootstrap(stat, sub.treatment, bootstrap_b, seed, n_jobs)
    return _percentile_report(sub.arm_labels[1], "ipw", est, draws)


def naive_ate_report(frame, arm=1, bootstrap_b=200, seed=0, n_jobs=1):
    _check_b(bootstrap_b)
    sub = frame.restrict(arm)
    est = naive_ate(sub, 1)

    def stat(rows, i):
        t, y = sub.treatment[rows], sub.outcome[rows]
        return y[t == 1].mean() - y[t == 0].mean()

    draws = _bootstrap(stat, sub.treatment, bootstrap_b, seed, n_jobs)
    return _percentile_report(sub.arm_labels[1], "naive", est, draws)


# -------------------------------------------------------- recommendation

def recommend_from_scores(tau, threshold=0.0):
    """Arm index per row: argmax column + 1, or 0 (control) when the best
    effect does not exceed ``threshold``. Ties go to the lowest arm."""
    tau = np.asarray(tau, dtype=np.float64)
    if tau.ndim == 1:
        tau = tau.reshape(-1, 1)
    best = np.argmax(tau, axis=1)
    top = tau[np.arange(len(tau)), best]
    return np.where(top > threshold, best + 1, 0)


def recommend(model, X, value_threshold=0.0):
    return recommend_from_scores(predict_cate(model, X), value_threshold)


def top_k_from_scores(scores, fraction):
    """Indices of the ceil(fraction * n) highest scores, best first.

    Equal scores keep their original order.
    """
    scores = np.asarray(scores, dtype=np.float64)
    n = len(scores)
    if n == 0:
        raise EstimationError("cannot target an empty frame")
    if not 0 < fraction <= 1:
        raise ConfigError(f"fraction must lie in (0, 1], got {fraction}")
    k = min(n, int(math.ceil(fraction * n - 1e-9)))
    return np.argsort(-scores, kind="stable")[:k]


def top_k_targeting(model, frame, fraction):
    """Units with the largest best-arm predicted uplift."""
    return top_k_from_scores(predict_cate(model, frame.features).max(axis=1), fraction)
