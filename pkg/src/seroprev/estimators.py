"""Point estimators of prevalence.

``rogan_gladen``, ``srg`` and ``srgm`` return point-only estimates; the
functions in :mod:`seroprev.analysis` attach variances and intervals.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from seroprev import glm
from seroprev.model import (
    WORSE_THAN_GUESSING,
    DegenerateAssayError,
    MainStudy,
    Method,
    NoDataError,
    PrevalenceEstimate,
    RegressionSpec,
    StratumTable,
    ValidationStudy,
)
from seroprev.variance import clopper_pearson


def estimate_assay(v: ValidationStudy) -> tuple[float, float]:
    """Sample sensitivity and specificity."""
    return v.x_sens_pos / v.n_sens, v.x_spec_neg / v.n_spec


def naive_prevalence(m: MainStudy, level: float = 0.95) -> PrevalenceEstimate:
    """Sample proportion of positive tests with a Clopper-Pearson interval."""
    k, n = m.positives, m.n
    rho = k / n
    return PrevalenceEstimate.build(
        Method.NAIVE, rho, variance=rho * (1.0 - rho) / n,
        ci=clopper_pearson(k, n, level), level=level,
        details={"positives": k, "n": n},
    )


def rogan_gladen(rho_hat: float, sigma_e_hat: float, sigma_p_hat: float,
                 method=Method.RG) -> PrevalenceEstimate:
    # written as differences from the false-positive rate so a perfect
    # assay returns rho_hat unchanged
    fpr = 1.0 - sigma_p_hat
    d = sigma_e_hat - fpr
    if d == 0.0:
        raise DegenerateAssayError(
            "sensitivity + specificity = 1: the assay is uninformative and "
            "prevalence cannot be recovered"
        )
    flags = [WORSE_THAN_GUESSING] if d < 0 else []
    return PrevalenceEstimate.build(method, (rho_hat - fpr) / d, flags=flags)


@dataclass(frozen=True)
class Restriction:
    table: StratumTable
    dropped: tuple[str, ...]
    n_j: np.ndarray
    pos_j: np.ndarray


def _restrict(m: MainStudy, t: StratumTable) -> Restriction:
    n_j, pos_j = m.tally(t)
    keep = n_j > 0
    if not keep.any():
        raise NoDataError("no stratum of the target population was sampled")
    dropped = tuple(z for z, k in zip(t.labels, keep) if not k)
    if not dropped:
        return Restriction(t, (), n_j, pos_j)
    labels = tuple(z for z, k in zip(t.labels, keep) if k)
    kept = t.gammas[keep]
    new = StratumTable(labels, kept / math.fsum(kept))
    return Restriction(new, dropped, n_j[keep], pos_j[keep])


def restrict(m: MainStudy, t: StratumTable) -> tuple[StratumTable, list[str]]:
    """Drop unsampled strata and renormalize the remaining proportions."""
    r = _restrict(m, t)
    return r.table, list(r.dropped)


def srg(m: MainStudy, t: StratumTable, sigma_e_hat: float,
        sigma_p_hat: float) -> PrevalenceEstimate:
    r = _restrict(m, t)
    rho_j = r.pos_j / r.n_j
    rho = float(rho_j @ r.table.gammas)
    est = rogan_gladen(rho, sigma_e_hat, sigma_p_hat, Method.SRG)
    return PrevalenceEstimate.build(Method.SRG, est.point_raw, flags=est.flags,
                                    dropped_strata=r.dropped,
                                    details={"rho_standardized": rho})


def standardized_fitted_mean(fit: glm.FitResult, t: StratumTable,
                             spec: RegressionSpec) -> float:
    """Fitted stratum means standardized over every stratum of ``t``."""
    mu = fit.predict(spec.design(t.labels))
    return float(mu @ t.gammas)


def srgm(m: MainStudy, t: StratumTable, spec: RegressionSpec, sigma_e_hat: float,
         sigma_p_hat: float, fit: glm.FitResult | None = None) -> PrevalenceEstimate:
    """Model-based standardized estimator.

    Unsampled strata are kept: the regression model supplies their means.
    """
    if fit is None:
        fit = glm.fit(m, t, spec)
    rho = standardized_fitted_mean(fit, t, spec)
    est = rogan_gladen(rho, sigma_e_hat, sigma_p_hat, Method.SRGM)
    n_j, _ = m.tally(t)
    unsampled = [z for z, n in zip(t.labels, n_j) if n == 0]
    return PrevalenceEstimate.build(
        Method.SRGM, est.point_raw, flags=est.flags,
        details={"rho_standardized": rho, "unsampled_strata": len(unsampled),
                 "glm_iterations": fit.iterations},
    )
