"""Experiment data: the frame every estimator consumes, CSV I/O, splitting,
and synthetic data generators with known treatment effects.

Treatment arms are encoded as integers. Index 0 is always the control
group; the remaining labels are sorted lexically and numbered 1..K.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import (
    ConfigError,
    EstimationError,
    InvariantError,
    ParseError,
    SchemaError,
    SplitError,
)

CONTINUOUS = "continuous"
BINARY = "binary"
OUTCOME_KINDS = (CONTINUOUS, BINARY)

DGP_IDS = ("linear", "heterogeneous_linear", "binary_logistic", "nonlinear",
           "confounded_linear")

TRUTH_PREFIX = "__tau"


def _frozen(a, dtype):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class ExperimentFrame:
    """Features, treatment assignment and outcome for n units.

    Parameters
    ----------
    features : array-like, shape (n, d)
    treatment : array-like of int, shape (n,)
        Arm index per unit, 0 = control.
    outcome : array-like, shape (n,)
    arm_labels : sequence of str
        ``arm_labels[k]`` is the external name of arm ``k``; entry 0 is the
        control label.
    propensity : array-like, shape (n,), optional
        Known probability of receiving the (non-control) treatment.
    outcome_kind : {"continuous", "binary"}
    feature_names : sequence of str, optional
    """

    features: np.ndarray
    treatment: np.ndarray
    outcome: np.ndarray
    arm_labels: tuple = ("0", "1")
    propensity: Optional[np.ndarray] = None
    outcome_kind: str = CONTINUOUS
    feature_names: tuple = field(default=())

    def __post_init__(self):
        X = _frozen(self.features, np.float64)
        if X.ndim == 1:
            X = _frozen(X.reshape(-1, 1), np.float64)
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "treatment", _frozen(self.treatment, np.int64))
        object.__setattr__(self, "outcome", _frozen(self.outcome, np.float64))
        if self.propensity is not None:
            object.__setattr__(self, "propensity",
                               _frozen(self.propensity, np.float64))
        object.__setattr__(self, "arm_labels",
                           tuple(str(a) for a in self.arm_labels))
        names = tuple(self.feature_names) or tuple(
            f"x{j + 1}" for j in range(X.shape[1] if X.ndim == 2 else 0))
        object.__setattr__(self, "feature_names", names)
        self._validate()

    def _validate(self):
        X, w, y = self.features, self.treatment, self.outcome
        if X.ndim != 2:
            raise InvariantError("features must be a 2-d matrix")
        n, d = X.shape
        if n < 1 or d < 1:
            raise InvariantError(f"need n >= 1 and d >= 1, got n={n}, d={d}")
        if w.shape != (n,) or y.shape != (n,):
            raise InvariantError(
                f"length mismatch: features n={n}, treatment {w.shape[0]}, "
                f"outcome {y.shape[0]}")
        if len(self.feature_names) != d:
            raise InvariantError(
                f"{len(self.feature_names)} feature names for {d} columns")
        if not np.all(np.isfinite(X)):
            r, c = np.argwhere(~np.isfinite(X))[0]
            raise InvariantError(
                f"non-finite feature value at row {r}, column "
                f"{self.feature_names[c]!r}")
        if not np.all(np.isfinite(y)):
            raise InvariantError(
                f"non-finite outcome at row {int(np.argmax(~np.isfinite(y)))}")
        if len(self.arm_labels) < 2:
            raise InvariantError("need a control label and at least one arm")
        if len(set(self.arm_labels)) != len(self.arm_labels):
            raise InvariantError(f"duplicate arm labels {self.arm_labels}")
        K = len(self.arm_labels) - 1
        if np.any((w < 0) | (w > K)):
            raise InvariantError(f"treatment indices must lie in 0..{K}")
        if not np.any(w == 0):
            raise InvariantError("no control units")
        if not np.any(w > 0):
            raise InvariantError("no treated units")
        if self.outcome_kind not in OUTCOME_KINDS:
            raise InvariantError(f"unknown outcome_kind {self.outcome_kind!r}")
        if self.outcome_kind == BINARY and not np.all((y == 0) | (y == 1)):
            raise InvariantError("binary outcome with values outside {0, 1}")
        if self.propensity is not None:
            e = self.propensity
            if e.shape != (n,):
                raise InvariantError("propensity length mismatch")
            if not np.all((e > 0) & (e < 1)):
                raise InvariantError("propensities must lie strictly in (0, 1)")

    @property
    def n(self):
        return self.features.shape[0]

    @property
    def d(self):
        return self.features.shape[1]

    @property
    def n_arms(self):
        """Number of non-control arms K."""
        return len(self.arm_labels) - 1

    def arm_index(self, arm):
        """Resolve an arm given by index or by label."""
        if isinstance(arm, (int, np.integer)) and not isinstance(arm, bool):
            if 1 <= arm <= self.n_arms:
                return int(arm)
            raise ConfigError(f"arm index {arm} outside 1..{self.n_arms}")
        label = str(arm)
        if label in self.arm_labels[1:]:
            return self.arm_labels.index(label)
        raise ConfigError(f"unknown arm {arm!r}; arms are {self.arm_labels[1:]}")

    def take(self, rows):
        """Frame made of the given row indices (duplicates allowed)."""
        rows = np.asarray(rows, dtype=np.int64)
        return ExperimentFrame(
            features=self.features[rows],
            treatment=self.treatment[rows],
            outcome=self.outcome[rows],
            arm_labels=self.arm_labels,
            propensity=None if self.propensity is None else self.propensity[rows],
            outcome_kind=self.outcome_kind,
            feature_names=self.feature_names,
        )

    def restrict(self, arm):
        """Two-group frame holding control plus one arm, recoded to {0, 1}.

        A supplied propensity column is only meaningful for a single-arm
        experiment, so it is dropped when K > 1.
        """
        k = self.arm_index(arm)
        rows = np.flatnonzero((self.treatment == 0) | (self.treatment == k))
        keep_e = self.propensity is not None and self.n_arms == 1
        return ExperimentFrame(
            features=self.features[rows],
            treatment=(self.treatment[rows] == k).astype(np.int64),
            outcome=self.outcome[rows],
            arm_labels=(self.arm_labels[0], self.arm_labels[k]),
            propensity=self.propensity[rows] if keep_e else None,
            outcome_kind=self.outcome_kind,
            feature_names=self.feature_names,
        )

    def equals(self, other):
        """Field-by-field equality (arrays compared exactly)."""
        if not isinstance(other, ExperimentFrame):
            return False
        if (self.arm_labels, self.outcome_kind, self.feature_names) != (
                other.arm_labels, other.outcome_kind, other.feature_names):
            return False
        if (self.propensity is None) != (other.propensity is None):
            return False
        pairs = [(self.features, other.features),
                 (self.treatment, other.treatment),
                 (self.outcome, other.outcome)]
        if self.propensity is not None:
            pairs.append((self.propensity, other.propensity))
        return all(a.shape == b.shape and np.array_equal(a, b) for a, b in pairs)


@dataclass(frozen=True)
class SyntheticTruth:
    """Ground truth that accompanies a generated frame.

    ``tau`` has shape (n, K): column k-1 is the true effect of arm k.
    ``propensity`` is the true assignment probability of each unit.
    """

    tau: np.ndarray
    dgp_id: str
    seed: int
    propensity: Optional[np.ndarray] = None

    def __post_init__(self):
        tau = np.array(self.tau, dtype=np.float64)
        if tau.ndim == 1:
            tau = tau.reshape(-1, 1)
        tau.setflags(write=False)
        object.__setattr__(self, "tau", tau)

    def arm(self, arm=1):
        return self.tau[:, arm - 1]


@dataclass(frozen=True)
class CsvSchema:
    """Column roles for :func:`load_csv`.

    ``features=None`` takes every column not otherwise claimed and not
    starting with a double underscore. ``outcome_kind=None`` infers binary
    iff all outcomes are 0 or 1.
    """

    treatment: str = "w"
    outcome: str = "y"
    control: str = "0"
    features: Optional[tuple] = None
    propensity: Optional[str] = None
    outcome_kind: Optional[str] = None


def read_table(path):
    """Read a header + rows CSV.

    Returns the header list and a list of row lists of stripped strings.
    Blank lines are skipped.
    """
    path = Path(path)
    try:
        with path.open(newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            records = []
            for row in reader:
                if any(c.strip() for c in row):
                    records.append((reader.line_num, row))
    except OSError as exc:
        raise SchemaError(f"cannot read {path}: {exc}") from exc
    except csv.Error as exc:
        raise ParseError(f"{path}: {exc}") from exc
    if not records:
        raise SchemaError(f"{path}: empty file, header row required")
    header = [h.strip() for h in records[0][1]]
    rows = []
    for i, (lineno, cells) in enumerate(records[1:], start=1):
        if len(cells) != len(header):
            raise ParseError(
                f"{path}: line {lineno} has {len(cells)} cells, header has "
                f"{len(header)}", row=i)
        rows.append([c.strip() for c in cells])
    return header, rows


def _parse_column(rows, j, name, path):
    out = np.empty(len(rows), dtype=np.float64)
    for i, row in enumerate(rows):
        try:
            v = float(row[j])
        except ValueError:
            raise ParseError(
                f"{path}: non-numeric value {row[j]!r} in column {name!r} at "
                f"data row {i + 1}", row=i + 1, column=name) from None
        if not math.isfinite(v):
            raise ParseError(
                f"{path}: non-finite value {row[j]!r} in column {name!r} at "
                f"data row {i + 1}", row=i + 1, column=name)
        out[i] = v
    return out


def read_numeric_column(path, name):
    """Parse one numeric column by name, e.g. a ``__tau`` truth column."""
    header, rows = read_table(path)
    if name not in header:
        raise SchemaError(f"{path}: missing column {name!r}")
    return _parse_column(rows, header.index(name), name, path)


def load_csv(path, schema=None):
    """Load an :class:`ExperimentFrame` from a CSV file."""
    schema = schema or CsvSchema()
    header, rows = read_table(path)
    if not rows:
        raise InvariantError(f"{path}: no data rows")
    required = [schema.treatment, schema.outcome]
    if schema.propensity:
        required.append(schema.propensity)
    if schema.features is not None:
        if not schema.features:
            raise SchemaError("schema lists no feature columns")
        required.extend(schema.features)
    for name in required:
        if name not in header:
            raise SchemaError(f"{path}: missing column {name!r}")
    if schema.features is None:
        claimed = {schema.treatment, schema.outcome, schema.propensity}
        feats = tuple(h for h in header
                      if h not in claimed and not h.startswith("__"))
        if not feats:
            raise SchemaError(f"{path}: no feature columns found")
    else:
        feats = tuple(schema.features)

    X = np.column_stack([_parse_column(rows, header.index(f), f, path)
                         for f in feats])
    y = _parse_column(rows, header.index(schema.outcome), schema.outcome, path)
    e = None
    if schema.propensity:
        e = _parse_column(rows, header.index(schema.propensity),
                          schema.propensity, path)

    j = header.index(schema.treatment)
    raw = [row[j] for row in rows]
    if schema.control not in raw:
        raise InvariantError(
            f"{path}: control label {schema.control!r} not found in column "
            f"{schema.treatment!r}")
    labels = (schema.control,) + tuple(sorted(set(raw) - {schema.control}))
    code = {lab: k for k, lab in enumerate(labels)}
    w = np.array([code[v] for v in raw], dtype=np.int64)

    kind = schema.outcome_kind
    if kind is None:
        kind = BINARY if np.all((y == 0) | (y == 1)) else CONTINUOUS
    elif kind not in OUTCOME_KINDS:
        raise ConfigError(f"unknown outcome kind {kind!r}")
    return ExperimentFrame(features=X, treatment=w, outcome=y,
                           arm_labels=labels, propensity=e, outcome_kind=kind,
                           feature_names=feats)


def format_float(v):
    """Shortest round-tripping decimal form of a float."""
    return repr(float(v))


def write_csv(frame, path, treatment_col="w", outcome_col="y",
              propensity_col="propensity", truth=None):
    """Write a frame (and optionally its true effects) as CSV.

    Truth columns are named ``__tau`` for a single arm, ``__tau_<label>``
    otherwise, so :func:`load_csv` never mistakes them for features.
    """
    cols = list(frame.feature_names) + [treatment_col, outcome_col]
    if frame.propensity is not None:
        cols.append(propensity_col)
    tau_cols = []
    if truth is not None:
        if frame.n_arms == 1:
            tau_cols = [TRUTH_PREFIX]
        else:
            tau_cols = [f"{TRUTH_PREFIX}_{lab}" for lab in frame.arm_labels[1:]]
    lines = [",".join(cols + tau_cols)]
    for i in range(frame.n):
        cells = [format_float(v) for v in frame.features[i]]
        cells.append(frame.arm_labels[frame.treatment[i]])
        cells.append(format_float(frame.outcome[i]))
        if frame.propensity is not None:
            cells.append(format_float(frame.propensity[i]))
        if truth is not None:
            cells.extend(format_float(v) for v in truth.tau[i])
        lines.append(",".join(cells))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _floor_count(fraction, n):
    # guard against 0.29 * 100 == 28.999999999999996
    return int(math.floor(fraction * n + 1e-9))


def stratified_split_indices(frame, test_fraction, seed):
    """Row indices (train, test), each sorted; see :func:`stratified_split`."""
    if not 0 < test_fraction < 1:
        raise ConfigError(f"test_fraction must lie in (0, 1), got {test_fraction}")
    rng = np.random.default_rng(seed)
    train, test = [], []
    for k in range(frame.n_arms + 1):
        idx = np.flatnonzero(frame.treatment == k)
        if len(idx) < 2:
            raise SplitError(
                f"arm {frame.arm_labels[k]!r} has {len(idx)} unit(s); need >= 2")
        perm = idx[rng.permutation(len(idx))]
        m = _floor_count(test_fraction, len(idx))
        test.append(perm[:m])
        train.append(perm[m:])
    return np.sort(np.concatenate(train)), np.sort(np.concatenate(test))


def stratified_split(frame, test_fraction, seed):
    """Split per arm so that floor(fraction * n_arm) units go to test.

    Returns
    -------
    (train, test) : tuple of ExperimentFrame
    """
    tr, te = stratified_split_indices(frame, test_fraction, seed)
    try:
        return frame.take(tr), frame.take(te)
    except InvariantError as exc:
        raise SplitError(f"split leaves a degenerate part: {exc}") from exc


def naive_ate(frame, arm=1):
    """Difference in mean outcome between an arm and control."""
    k = frame.arm_index(arm)
    yt = frame.outcome[frame.treatment == k]
    yc = frame.outcome[frame.treatment == 0]
    if len(yt) == 0 or len(yc) == 0:
        raise EstimationError(
            f"empty group: {len(yt)} units in arm {frame.arm_labels[k]!r}, "
            f"{len(yc)} control units")
    return float(yt.mean() - yc.mean())


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def generate_synthetic(dgp_id, n, d, seed):
    """Simulate a randomized (or confounded) experiment with known effects.

    Features are iid standard normal and noise is N(0, 0.5^2). The linear
    coefficients ``beta`` are drawn from N(0, 1) with the same generator, so
    the output is a pure function of ``(dgp_id, n, d, seed)``.

    ============================  =======================================
    ``linear``                    Y = X beta + 0.5 W + eps
    ``heterogeneous_linear``      Y = X beta + (0.5 + x1) W + eps
    ``binary_logistic``           P(Y=1) = sigmoid(X beta + (0.5 + 0.5 x1) W)
    ``nonlinear``                 Y = sin(pi x1 x2) + 2 (x3 - 0.5)^2
                                  + (x1 + x2)/2 W + eps
    ``confounded_linear``         Y = X beta + x1 + 0.5 W + eps with
                                  P(W=1 | x) = sigmoid(x1)
    ============================  =======================================

    All but ``confounded_linear`` assign W ~ Bernoulli(0.5).

    Returns
    -------
    frame : ExperimentFrame
    truth : SyntheticTruth
        Per-unit effect; for ``binary_logistic`` the risk difference
        sigmoid(X beta + tau) - sigmoid(X beta).
    """
    if dgp_id not in DGP_IDS:
        raise ConfigError(f"unknown dgp {dgp_id!r}; choose from {DGP_IDS}")
    if n < 10 or d < 1:
        raise ConfigError(f"need n >= 10 and d >= 1, got n={n}, d={d}")
    if dgp_id == "nonlinear" and d < 3:
        raise ConfigError("the nonlinear dgp needs d >= 3")

    rng = np.random.default_rng(seed)
    beta = rng.normal(size=d)
    X = rng.standard_normal((n, d))
    x1 = X[:, 0]
    if dgp_id == "confounded_linear":
        e = _sigmoid(x1)
    else:
        e = np.full(n, 0.5)
    W = (rng.random(n) < e).astype(np.int64)
    eps = rng.normal(0.0, 0.5, size=n)
    base = X @ beta

    kind = CONTINUOUS
    if dgp_id == "linear":
        tau = np.full(n, 0.5)
        Y = base + tau * W + eps
    elif dgp_id == "heterogeneous_linear":
        tau = 0.5 + x1
        Y = base + tau * W + eps
    elif dgp_id == "binary_logistic":
        lift = 0.5 + 0.5 * x1
        p0 = _sigmoid(base)
        p1 = _sigmoid(base + lift)
        tau = p1 - p0
        u = rng.random(n)
        Y = (u < np.where(W == 1, p1, p0)).astype(np.float64)
        kind = BINARY
    elif dgp_id == "nonlinear":
        tau = (X[:, 0] + X[:, 1]) / 2
        Y = (np.sin(np.pi * X[:, 0] * X[:, 1]) + 2 * (X[:, 2] - 0.5) ** 2
             + tau * W + eps)
    else:  # confounded_linear
        tau = np.full(n, 0.5)
        Y = base + x1 + tau * W + eps

    frame = ExperimentFrame(features=X, treatment=W, outcome=Y,
                            arm_labels=("0", "1"), outcome_kind=kind)
    truth = SyntheticTruth(tau=tau, dgp_id=dgp_id, seed=int(seed), propensity=e)
    return frame, truth


def frame_from_arrays(X, w, y, outcome_kind=None, propensity=None,
                      feature_names: Sequence[str] = ()):
    """Convenience constructor for 0/1 (or 0..K integer) treatment arrays."""
    w = np.asarray(w, dtype=np.int64)
    y = np.asarray(y, dtype=np.float64)
    K = int(w.max()) if len(w) else 1
    labels = tuple(str(k) for k in range(max(K, 1) + 1))
    if outcome_kind is None:
        outcome_kind = BINARY if np.all((y == 0) | (y == 1)) else CONTINUOUS
    return ExperimentFrame(features=X, treatment=w, outcome=y,
                           arm_labels=labels, propensity=propensity,
                           outcome_kind=outcome_kind,
                           feature_names=tuple(feature_names))
