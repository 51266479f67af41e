"""Fixed experimental protocols shared by the acceptance suite and
``scripts/preregister.py``. Changing anything here invalidates the recorded
values in ``test_acceptance.py``.
"""

import numpy as np

from upliftkit import learners as L
from upliftkit.dataset import generate_synthetic, naive_ate, stratified_split_indices
from upliftkit.meta import (ate_from_cate, estimate_propensity, fit_cate, fit_t,
                            ipw_estimate, predict_cate, top_k_from_scores)
from upliftkit.metrics import pehe
from upliftkit.uplift_forest import UpliftForestSpec, fit_uplift_forest

SEED = 42

# unit types: (true uplift, outcome if treated, outcome if control)
UNIT_TYPES = {"persuadable": (1, 1, 0), "sure_thing": (0, 1, 1),
              "lost_cause": (0, 0, 0), "sleeping_dog": (-1, 0, 1)}

# row order is the tie-break order among equal true uplifts
QINI_FIXTURES = {
    "A": [("persuadable", 0), ("persuadable", 1), ("sure_thing", 1), ("sure_thing", 0),
          ("lost_cause", 1), ("lost_cause", 0), ("sleeping_dog", 0), ("sleeping_dog", 1)],
    "B": [("persuadable", 1), ("persuadable", 0), ("sure_thing", 0), ("sure_thing", 1),
          ("lost_cause", 0), ("lost_cause", 1), ("sleeping_dog", 1), ("sleeping_dog", 0)],
    "C": [("persuadable", 0), ("persuadable", 1), ("persuadable", 1), ("lost_cause", 0),
          ("sure_thing", 1), ("sure_thing", 0), ("sleeping_dog", 1), ("sleeping_dog", 0)],
}


def qini_fixture(name):
    rows = QINI_FIXTURES[name]
    tau = np.array([UNIT_TYPES[u][0] for u, _ in rows], dtype=float)
    treated = np.array([w for _, w in rows])
    y = np.array([UNIT_TYPES[u][1] if w else UNIT_TYPES[u][2] for u, w in rows],
                 dtype=float)
    return tau, treated, y


def targeting_ratio():
    """Top-30% true gain of a trained uplift forest over random 30% sets."""
    frame, truth = generate_synthetic("binary_logistic", 5000, 5, SEED)
    train_idx, test_idx = stratified_split_indices(frame, 0.5, SEED)
    forest = fit_uplift_forest(frame.take(train_idx), UpliftForestSpec(), SEED)
    test = frame.take(test_idx)
    tau = truth.arm(1)[test_idx]
    top = top_k_from_scores(forest.predict(test.features)[:, 0], 0.3)
    rng = np.random.default_rng(SEED)
    random_gain = np.mean([tau[rng.choice(test.n, len(top), replace=False)].sum()
                           for _ in range(50)])
    return float(tau[top].sum() / random_gain)


def meta_recovery():
    """PEHE of each meta-learner, the constant-ATE predictor and the oracle."""
    frame, truth = generate_synthetic("heterogeneous_linear", 4000, 5, SEED)
    tau = truth.arm(1)
    out = {"constant": pehe(np.full(frame.n, naive_ate(frame)), tau)}
    for method in ("s", "t", "x", "r"):
        model = fit_cate(frame, method, L.LearnerSpec(kind=L.RIDGE), seed=SEED)
        out[method] = pehe(predict_cate(model, frame.features)[:, 0], tau)
    oracle = L.fit_ridge(frame.features, tau, L.LearnerSpec().ridge_lambda)
    out["oracle"] = pehe(L.predict(oracle, frame.features), tau)
    return out


def ipw_margin():
    """|naive - ATE| - |IPW - ATE| on the confounded design."""
    frame, truth = generate_synthetic("confounded_linear", 5000, 5, SEED)
    ate = float(truth.arm(1).mean())
    ipw = ipw_estimate(frame.treatment, frame.outcome, estimate_propensity(frame))
    naive = naive_ate(frame)
    return {"ate": ate, "ipw": ipw, "naive": naive,
            "margin": abs(naive - ate) - abs(ipw - ate)}


def coverage(replications=100, b=200):
    """Count of bootstrap CIs (T-learner CATE mean) covering 0.5."""
    hits = 0
    for r in range(replications):
        frame, _ = generate_synthetic("linear", 2000, 3, SEED + r)
        (rep,) = ate_from_cate(fit_t(frame, seed=SEED), frame, bootstrap_b=b, seed=r)
        hits += rep.ci_low <= 0.5 <= rep.ci_high
    return hits
