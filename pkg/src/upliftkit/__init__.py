"""Uplift modeling toolkit: CATE meta-learners, uplift forests and
uplift/Qini evaluation."""

__version__ = "0.1.0"

from .dataset import (CsvSchema, ExperimentFrame, SyntheticTruth,  # noqa: E402
                      generate_synthetic, load_csv, naive_ate, stratified_split,
                      write_csv)
from .learners import LearnerSpec  # noqa: E402
from .meta import (AteReport, CateModel, ate_from_cate, estimate_propensity,  # noqa: E402
                   fit_cate, fit_r, fit_s, fit_t, fit_x, ipw_ate,
                   predict_cate, recommend, top_k_targeting)
from .metrics import CurveTable, pehe, qini_coefficient, uplift_curve  # noqa: E402
from .uplift_forest import (UpliftForestSpec, divergence,  # noqa: E402
                            fit_uplift_forest, fit_uplift_tree, predict_uplift)

__all__ = [
    "AteReport", "CateModel", "CsvSchema", "CurveTable", "ExperimentFrame",
    "LearnerSpec", "SyntheticTruth", "UpliftForestSpec", "ate_from_cate",
    "divergence", "estimate_propensity", "fit_cate", "fit_r", "fit_s", "fit_t",
    "fit_uplift_forest", "fit_uplift_tree", "fit_x", "generate_synthetic",
    "ipw_ate", "load_csv", "naive_ate", "pehe", "predict_cate",
    "predict_uplift", "qini_coefficient", "recommend", "stratified_split",
    "top_k_targeting", "uplift_curve", "write_csv",
]
