"""Ranking metrics for uplift scores: uplift (cumulative gain) and Qini
curves, their discrete areas, and PEHE against known effects.

Units are ranked by descending score; equal scores keep their original
order. Areas are plain means over the n prefixes, not trapezoids.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataset import format_float
from .errors import DataError, EstimationError, InvariantError

TIE_RULE = "stable-by-index"


@dataclass(frozen=True)
class CurveTable:
    k: np.ndarray
    fraction: np.ndarray
    cum_gain: np.ndarray
    qini: np.ndarray
    auuc: float
    qini_coefficient: float
    tie_rule: str = TIE_RULE

    @property
    def n(self):
        return len(self.k)

    def equals(self, other):
        return (self.tie_rule == other.tie_rule
                and self.auuc == other.auuc
                and self.qini_coefficient == other.qini_coefficient
                and all(np.array_equal(a, b) for a, b in (
                    (self.k, other.k), (self.fraction, other.fraction),
                    (self.cum_gain, other.cum_gain), (self.qini, other.qini))))


def curve_from_arrays(scores, treated, outcome):
    """Build a :class:`CurveTable` from scores, a 0/1 treated flag and outcomes."""
    scores = np.asarray(scores, dtype=np.float64).ravel()
    treated = np.asarray(treated).astype(bool).ravel()
    y = np.asarray(outcome, dtype=np.float64).ravel()
    n = len(scores)
    if len(treated) != n or len(y) != n:
        raise InvariantError(
            f"length mismatch: {n} scores, {len(treated)} treatment flags, "
            f"{len(y)} outcomes")
    if n == 0 or not np.all(np.isfinite(scores)):
        raise InvariantError("scores must be a non-empty finite vector")
    if treated.all() or not treated.any():
        raise EstimationError("need both treated and control units")

    order = np.argsort(-scores, kind="stable")
    t, y = treated[order], y[order]
    nt = np.cumsum(t)
    nc = np.cumsum(~t)
    yt = np.cumsum(np.where(t, y, 0.0))
    yc = np.cumsum(np.where(t, 0.0, y))
    k = np.arange(1, n + 1)

    both = (nt > 0) & (nc > 0)
    nt_s, nc_s = np.maximum(nt, 1), np.maximum(nc, 1)
    cum_gain = np.where(both, (yt / nt_s - yc / nc_s) * k, 0.0)
    qini = np.where(nc > 0, yt - yc * nt / nc_s, 0.0)

    auuc = float(np.sum(cum_gain) / n)
    qcoef = float(np.sum(qini - k / n * qini[-1]) / n)
    return CurveTable(k=k, fraction=k / n, cum_gain=cum_gain, qini=qini,
                      auuc=auuc, qini_coefficient=qcoef)


def uplift_curve(scores, frame, arm=1):
    """Curve for one arm against control; other arms' rows are ignored."""
    k = frame.arm_index(arm)
    keep = (frame.treatment == 0) | (frame.treatment == k)
    scores = np.asarray(scores, dtype=np.float64).ravel()
    if len(scores) != frame.n:
        raise InvariantError(f"{len(scores)} scores for {frame.n} units")
    return curve_from_arrays(scores[keep], frame.treatment[keep] == k,
                             frame.outcome[keep])


def qini_coefficient(scores, frame, arm=1):
    return uplift_curve(scores, frame, arm).qini_coefficient


def auuc(scores, frame, arm=1):
    return uplift_curve(scores, frame, arm).auuc


def pehe(predicted, truth, arm=1):
    """Root mean squared error between estimated and true effects.

    ``truth`` is a :class:`SyntheticTruth` or a plain array of true effects.
    """
    tau = truth.arm(arm) if hasattr(truth, "arm") else np.asarray(truth, dtype=np.float64)
    predicted = np.asarray(predicted, dtype=np.float64).ravel()
    if predicted.shape != tau.shape:
        raise InvariantError(
            f"length mismatch: {len(predicted)} predictions, {len(tau)} true effects")
    return float(np.sqrt(np.mean((predicted - tau) ** 2)))


# ---------------------------------------------------------------- output

def _table_rows(table):
    return [[int(table.k[i]), format_float(table.fraction[i]),
             format_float(table.cum_gain[i]), format_float(table.qini[i])]
            for i in range(table.n)]


def _scalars(table):
    return {"auuc": table.auuc, "qini_coefficient": table.qini_coefficient,
            "tie_rule": table.tie_rule, "n": table.n}


def emit_curve(table, path, format="csv"):
    """Write a curve table.

    ``csv`` writes ``k,fraction,cum_gain,qini`` rows plus a ``<path>.json``
    sidecar holding the scalar summaries; ``json`` writes one object with
    both. Returns the list of files written.
    """
    path = Path(path)
    try:
        if format == "csv":
            lines = ["k,fraction,cum_gain,qini"]
            lines += [",".join(str(c) for c in row) for row in _table_rows(table)]
            path.write_text("\n".join(lines) + "\n", encoding="utf-8")
            side = path.with_name(path.name + ".json")
            side.write_text(json.dumps(_scalars(table), sort_keys=True, indent=2) + "\n",
                            encoding="utf-8")
            return [path, side]
        if format == "json":
            obj = dict(_scalars(table))
            obj["rows"] = [{"k": int(table.k[i]), "fraction": float(table.fraction[i]),
                            "cum_gain": float(table.cum_gain[i]),
                            "qini": float(table.qini[i])} for i in range(table.n)]
            path.write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n",
                            encoding="utf-8")
            return [path]
    except OSError as exc:
        raise DataError(f"cannot write curve to {path}: {exc}") from exc
    raise DataError(f"unknown curve format {format!r}; use csv or json")


def read_curve(path, format="csv"):
    """Inverse of :func:`emit_curve`."""
    path = Path(path)
    if format == "json":
        obj = json.loads(path.read_text(encoding="utf-8"))
        rows = obj["rows"]
        cols = {c: np.array([r[c] for r in rows], dtype=np.float64)
                for c in ("fraction", "cum_gain", "qini")}
        k = np.array([r["k"] for r in rows], dtype=np.int64)
        scal = obj
    else:
        lines = path.read_text(encoding="utf-8").splitlines()
        body = [ln.split(",") for ln in lines[1:] if ln]
        k = np.array([int(r[0]) for r in body], dtype=np.int64)
        cols = {c: np.array([float(r[j]) for r in body])
                for j, c in enumerate(("fraction", "cum_gain", "qini"), start=1)}
        scal = json.loads(path.with_name(path.name + ".json").read_text(encoding="utf-8"))
    return CurveTable(k=k, fraction=cols["fraction"], cum_gain=cols["cum_gain"],
                      qini=cols["qini"], auuc=float(scal["auuc"]),
                      qini_coefficient=float(scal["qini_coefficient"]),
                      tie_rule=scal["tie_rule"])
