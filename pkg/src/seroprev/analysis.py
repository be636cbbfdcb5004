"""End-to-end estimation: point estimate, plug-in variance and Wald interval."""

from __future__ import annotations

import logging

from seroprev import glm
from seroprev.estimators import (
    _restrict,
    estimate_assay,
    naive_prevalence,
    rogan_gladen,
    srg,
    srgm,
)
from seroprev.model import (
    TRUNCATED_CI,
    MainStudy,
    Method,
    PrevalenceEstimate,
    RegressionSpec,
    SampleFractions,
    SeroprevError,
    StratumTable,
    ValidationStudy,
)
from seroprev.variance import srgm_sandwich, var_rg, var_srg, wald_ci, wald_truncated

log = logging.getLogger(__name__)


def _plugin(est: PrevalenceEstimate, truncate_plugin: bool) -> float:
    return est.point if truncate_plugin else est.point_raw


def _finish(est: PrevalenceEstimate, V: float, n: int, level: float,
            extra_details=None) -> PrevalenceEstimate:
    var_n = V / n
    ci = wald_ci(est.point_raw, var_n, level)
    flags = set(est.flags)
    if ci is not None and wald_truncated(est.point_raw, var_n, level):
        flags.add(TRUNCATED_CI)
    details = dict(est.details)
    details["asymptotic_variance"] = V
    details.update(extra_details or {})
    return PrevalenceEstimate.build(est.method, est.point_raw, variance=var_n, ci=ci,
                                    level=level, flags=flags,
                                    dropped_strata=est.dropped_strata, details=details)


def analyze_rg(validation: ValidationStudy, main: MainStudy, level: float = 0.95,
               truncate_plugin: bool = True) -> PrevalenceEstimate:
    se, sp = estimate_assay(validation)
    rho = main.positives / main.n
    est = rogan_gladen(rho, se, sp)
    fr = SampleFractions.of(validation, main.n)
    V = var_rg(_plugin(est, truncate_plugin), se, sp, rho, fr)
    n = validation.n_sens + validation.n_spec + main.n
    return _finish(est, V, n, level, {"rho": rho, "sigma_e": se, "sigma_p": sp})


def analyze_srg(validation: ValidationStudy, main: MainStudy, table: StratumTable,
                level: float = 0.95, truncate_plugin: bool = True) -> PrevalenceEstimate:
    se, sp = estimate_assay(validation)
    r = _restrict(main, table)
    if r.dropped:
        log.info("restricting to %d sampled strata; dropped: %s",
                 r.table.k, ", ".join(r.dropped))
    est = srg(main, table, se, sp)
    fr = SampleFractions.of(validation, main.n)
    V = var_srg(_plugin(est, truncate_plugin), se, sp, r.pos_j / r.n_j,
                r.n_j / main.n, r.table.gammas, fr)
    n = validation.n_sens + validation.n_spec + main.n
    return _finish(est, V, n, level, {"sigma_e": se, "sigma_p": sp,
                                      "strata_retained": r.table.k})


def analyze_srgm(validation: ValidationStudy, main: MainStudy, table: StratumTable,
                 spec: RegressionSpec, level: float = 0.95,
                 truncate_plugin: bool = True) -> PrevalenceEstimate:
    se, sp = estimate_assay(validation)
    fit = glm.fit(main, table, spec)
    est = srgm(main, table, spec, se, sp, fit=fit)
    parts = srgm_sandwich(fit, main, table, spec, validation, _plugin(est, truncate_plugin))
    return _finish(est, parts.bottom_right * parts.n, parts.n, level,
                   {"sigma_e": se, "sigma_p": sp})


def analyze(validation: ValidationStudy, main: MainStudy, table: StratumTable | None = None,
            spec: RegressionSpec | None = None, level: float = 0.95,
            truncate_plugin: bool = True) -> dict[Method, PrevalenceEstimate]:
    """Every estimator the inputs allow, keyed by method.

    Errors from the standardized estimators propagate; the caller decides
    whether a failing method aborts the whole report.
    """
    out = {
        Method.NAIVE: naive_prevalence(main, level),
        Method.RG: analyze_rg(validation, main, level, truncate_plugin),
    }
    if table is not None:
        out[Method.SRG] = analyze_srg(validation, main, table, level, truncate_plugin)
        if spec is not None:
            out[Method.SRGM] = analyze_srgm(validation, main, table, spec, level,
                                            truncate_plugin)
    return out


__all__ = ["analyze", "analyze_rg", "analyze_srg", "analyze_srgm", "SeroprevError"]
