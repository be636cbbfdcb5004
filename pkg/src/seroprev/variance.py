"""Variance estimators and confidence intervals.

All ``var_*`` functions return the *asymptotic* variance V of
sqrt(n)(pi_hat - pi); divide by the total sample size n = n1 + n2 + n3 to
get the variance of the estimate itself.
"""

from __future__ import annotations

from collections.abc import Callable
from dataclasses import dataclass

import numpy as np
from scipy import stats

from seroprev import glm
from seroprev.model import (
    DegenerateAssayError,
    InputError,
    MainStudy,
    RegressionSpec,
    SampleFractions,
    SingularMatrixError,
    StratumTable,
    ValidationStudy,
)


def _assay_denominator(sigma_e: float, sigma_p: float) -> float:
    d = sigma_e + sigma_p - 1.0
    if d == 0.0:
        raise DegenerateAssayError(
            "sensitivity + specificity = 1: the test result is independent of true status"
        )
    return d


def var_rg(pi_hat: float, sigma_e_hat: float, sigma_p_hat: float, rho_hat: float,
           fractions: SampleFractions) -> float:
    d = _assay_denominator(sigma_e_hat, sigma_p_hat)
    return (
        pi_hat**2 * sigma_e_hat * (1.0 - sigma_e_hat) / fractions.c1
        + (1.0 - pi_hat) ** 2 * sigma_p_hat * (1.0 - sigma_p_hat) / fractions.c2
        + rho_hat * (1.0 - rho_hat) / fractions.c3
    ) / d**2


def var_srg(pi_hat: float, sigma_e_hat: float, sigma_p_hat: float, stratum_means,
            stratum_fractions, gammas, fractions: SampleFractions) -> float:
    """Plug-in variance of the nonparametric standardized estimator.

    ``stratum_fractions`` are n_{z_j} / n3 over the retained strata and
    ``gammas`` the (renormalized) target proportions of the same strata.
    """
    d = _assay_denominator(sigma_e_hat, sigma_p_hat)
    rho = np.asarray(stratum_means, dtype=float)
    s = np.asarray(stratum_fractions, dtype=float)
    g = np.asarray(gammas, dtype=float)
    if not (rho.shape == s.shape == g.shape):
        raise InputError("stratum_means, stratum_fractions and gammas must align")
    if np.any(s <= 0):
        raise InputError("every retained stratum needs at least one sampled record")
    strata_term = float(np.sum(g**2 * rho * (1.0 - rho) / s)) / fractions.c3
    return (
        pi_hat**2 * sigma_e_hat * (1.0 - sigma_e_hat) / fractions.c1
        + (1.0 - pi_hat) ** 2 * sigma_p_hat * (1.0 - sigma_p_hat) / fractions.c2
        + strata_term
    ) / d**2


@dataclass(frozen=True)
class SandwichParts:
    A_hat: np.ndarray
    B_hat: np.ndarray
    cov: np.ndarray
    n: int

    @property
    def bottom_right(self) -> float:
        """Variance of the last parameter (already divided by n)."""
        return float(self.cov[-1, -1])


def _sandwich(A: np.ndarray, B: np.ndarray, n: int, what: str = "bread") -> SandwichParts:
    try:
        A_inv = np.linalg.inv(A)
    except np.linalg.LinAlgError:
        raise SingularMatrixError(f"{what} matrix is singular") from None
    if not np.all(np.isfinite(A_inv)) or np.linalg.cond(A) > 1e14:
        raise SingularMatrixError(f"{what} matrix is numerically singular")
    cov = A_inv @ B @ A_inv.T / n
    cov = 0.5 * (cov + cov.T)
    return SandwichParts(A, B, cov, n)


def srgm_sandwich(fit: glm.FitResult, main: MainStudy, table: StratumTable,
                  spec: RegressionSpec, validation: ValidationStudy,
                  pi_plugin: float) -> SandwichParts:
    """Empirical sandwich for (sigma_e, sigma_p, beta, rho, pi).

    Blocks follow the stacked estimating equations of the model-based
    standardized estimator; the bread uses the observed Jacobian of the
    score, which equals the expected information under the logit link.
    """
    v = validation
    n3 = main.n
    n = v.n_sens + v.n_spec + n3
    se, sp = v.sensitivity, v.specificity
    d = se + sp - 1.0
    p = spec.p
    g = glm.group(main, table, spec)
    beta = fit.beta_hat

    q = p + 4
    A = np.zeros((q, q))
    A[0, 0] = v.n_sens / n
    A[1, 1] = v.n_spec / n
    # score block: minus the mean Jacobian of psi_beta
    A[2:2 + p, 2:2 + p] = -glm.hessian_arrays(beta, g.design, g.successes, g.trials,
                                              spec.link) / n
    H_all = spec.design(table.labels)
    dmu = glm.inverse_link_deriv(H_all @ beta, spec.link)
    A[2 + p, 2:2 + p] = -(H_all * (dmu * table.gammas)[:, None]).sum(axis=0)
    A[2 + p, 2 + p] = 1.0
    A[3 + p, 0] = pi_plugin
    A[3 + p, 1] = -1.0 + pi_plugin
    A[3 + p, 2 + p] = -1.0
    A[3 + p, 3 + p] = d

    B = np.zeros((q, q))
    B[0, 0] = v.n_sens * se * (1.0 - se) / n
    B[1, 1] = v.n_spec * sp * (1.0 - sp) / n
    eta = g.design @ beta
    mu = glm.inverse_link(eta, spec.link)
    w = glm._score_weight(eta, spec.link)
    # sum over records in stratum j of (x - mu_j)^2
    ss = g.successes * (1.0 - mu) ** 2 + (g.trials - g.successes) * mu**2
    B[2:2 + p, 2:2 + p] = (g.design * (w**2 * ss)[:, None]).T @ g.design / n

    try:
        return _sandwich(A, B, n)
    except SingularMatrixError:
        info_block = A[2:2 + p, 2:2 + p]
        if d == 0.0:
            raise DegenerateAssayError("sensitivity + specificity = 1") from None
        if np.linalg.matrix_rank(info_block) < p:
            raise SingularMatrixError("bread is singular in the regression-information block") from None
        raise


def var_srgm(fit: glm.FitResult, main: MainStudy, table: StratumTable,
             spec: RegressionSpec, validation: ValidationStudy,
             pi_plugin: float | None = None) -> float:
    """Sandwich variance of the model-based standardized estimator.

    May be negative only through rounding; callers flag negative values as
    Heywood cases rather than raising.
    """
    _assay_denominator(validation.sensitivity, validation.specificity)
    if pi_plugin is None:
        from seroprev.estimators import rogan_gladen, standardized_fitted_mean

        rho = standardized_fitted_mean(fit, table, spec)
        pi_plugin = rogan_gladen(rho, validation.sensitivity, validation.specificity).point
    parts = srgm_sandwich(fit, main, table, spec, validation, pi_plugin)
    return parts.bottom_right * parts.n


# --------------------------------------------------------------------------
# Numeric sandwich oracle

def numeric_sandwich(psi: Callable[[np.ndarray, object], np.ndarray], theta_hat,
                     data=None) -> SandwichParts:
    """Sandwich covariance from per-record estimating functions.

    ``psi(theta, data)`` must return an (n, q) array whose rows are the
    per-record contributions. The bread is a central finite-difference
    Jacobian of the mean, the meat the mean outer product at theta_hat.
    """
    theta_hat = np.asarray(theta_hat, dtype=float)
    psi0 = np.asarray(psi(theta_hat, data), dtype=float)
    n, q = psi0.shape
    if q != theta_hat.size:
        raise InputError(f"psi returned {q} columns for {theta_hat.size} parameters")
    J = np.empty((q, q))
    for j in range(q):
        h = 1e-6 * max(1.0, abs(theta_hat[j]))
        up = theta_hat.copy()
        dn = theta_hat.copy()
        up[j] += h
        dn[j] -= h
        J[:, j] = (psi(up, data) - psi(dn, data)).mean(axis=0) / (up[j] - dn[j])
    B = psi0.T @ psi0 / n
    return _sandwich(-J, B, n)


@dataclass(frozen=True)
class StackedData:
    """Record-level view of all three studies, for the numeric oracle.

    ``delta`` is 1 for sensitivity, 2 for specificity and 3 for main-study
    records; ``stratum`` indexes the stratum table (-1 outside the main study).
    """

    delta: np.ndarray
    x: np.ndarray
    stratum: np.ndarray

    @property
    def n(self) -> int:
        return int(self.delta.size)

    @classmethod
    def build(cls, validation: ValidationStudy, main: MainStudy,
              table: StratumTable | None = None) -> StackedData:
        v = validation
        x_sens = np.r_[np.ones(v.x_sens_pos), np.zeros(v.n_sens - v.x_sens_pos)]
        # specificity sample: x = 1 is a false positive
        x_spec = np.r_[np.zeros(v.x_spec_neg), np.ones(v.n_spec - v.x_spec_neg)]
        if table is None:
            strat = np.full(main.n, -1)
        else:
            idx = table.index()
            remap = np.array([idx.get(z, -1) for z in main.vocabulary] or [-1])
            strat = remap[main.codes]
        delta = np.r_[np.full(v.n_sens, 1), np.full(v.n_spec, 2), np.full(main.n, 3)]
        x = np.r_[x_sens, x_spec, main.x.astype(float)]
        stratum = np.r_[np.full(v.n_sens + v.n_spec, -1), strat]
        return cls(delta.astype(np.int8), x, stratum.astype(np.int64))


def psi_rg(theta, data: StackedData) -> np.ndarray:
    """Per-record (psi_e, psi_p, psi_rho, psi_pi) at theta=(se, sp, rho, pi)."""
    se, sp, rho, pi = theta
    d1 = data.delta == 1
    d2 = data.delta == 2
    d3 = data.delta == 3
    x = data.x
    out = np.empty((data.n, 4))
    out[:, 0] = d1 * (x - se)
    out[:, 1] = d2 * ((1.0 - x) - sp)
    out[:, 2] = d3 * (x - rho)
    out[:, 3] = (rho + sp - 1.0) - pi * (se + sp - 1.0)
    return out


def make_psi_srg(gammas) -> Callable[[np.ndarray, StackedData], np.ndarray]:
    """psi for theta=(se, sp, rho_1..rho_k, rho, pi); strata indexed by data.stratum."""
    gammas = np.asarray(gammas, dtype=float)
    k = gammas.size

    def psi(theta, data: StackedData) -> np.ndarray:
        se, sp = theta[0], theta[1]
        rho_j = theta[2:2 + k]
        rho, pi = theta[2 + k], theta[3 + k]
        x = data.x
        out = np.zeros((data.n, k + 4))
        out[:, 0] = (data.delta == 1) * (x - se)
        out[:, 1] = (data.delta == 2) * ((1.0 - x) - sp)
        main = data.delta == 3
        rows = np.nonzero(main)[0]
        out[rows, 2 + data.stratum[rows]] = x[rows] - rho_j[data.stratum[rows]]
        out[:, 2 + k] = float(rho_j @ gammas) - rho
        out[:, 3 + k] = (rho + sp - 1.0) - pi * (se + sp - 1.0)
        return out

    return psi


def make_psi_srgm(design_all: np.ndarray, gammas, link=glm.Link.LOGIT):
    """psi for theta=(se, sp, beta_1..beta_p, rho, pi).

    ``design_all`` holds one design row per stratum of the (unrestricted)
    table; main-study records pick their row through data.stratum.
    """
    H = np.asarray(design_all, dtype=float)
    gammas = np.asarray(gammas, dtype=float)
    p = H.shape[1]

    def psi(theta, data: StackedData) -> np.ndarray:
        se, sp = theta[0], theta[1]
        beta = theta[2:2 + p]
        rho, pi = theta[2 + p], theta[3 + p]
        x = data.x
        out = np.zeros((data.n, p + 4))
        out[:, 0] = (data.delta == 1) * (x - se)
        out[:, 1] = (data.delta == 2) * ((1.0 - x) - sp)
        rows = np.nonzero(data.delta == 3)[0]
        Hi = H[data.stratum[rows]]
        eta = Hi @ beta
        mu = glm.inverse_link(eta, link)
        w = glm._score_weight(eta, link)
        out[rows, 2:2 + p] = Hi * ((x[rows] - mu) * w)[:, None]
        out[:, 2 + p] = float(glm.inverse_link(H @ beta, link) @ gammas) - rho
        out[:, 3 + p] = (rho + sp - 1.0) - pi * (se + sp - 1.0)
        return out

    return psi


# --------------------------------------------------------------------------
# Intervals

def normal_quantile(prob: float) -> float:
    return float(stats.norm.ppf(prob))


def wald_ci(point_raw: float, variance_over_n: float, level: float = 0.95,
            truncate: bool = True) -> tuple[float, float] | None:
    """Wald interval, clamped into [0, 1]. Returns None for negative variance."""
    if not 0.0 < level < 1.0:
        raise InputError(f"confidence level must lie in (0, 1), got {level}")
    if variance_over_n is None or not np.isfinite(variance_over_n) or variance_over_n < 0:
        return None
    half = normal_quantile(0.5 + level / 2.0) * np.sqrt(variance_over_n)
    lo, hi = point_raw - half, point_raw + half
    if truncate:
        lo, hi = min(1.0, max(0.0, lo)), min(1.0, max(0.0, hi))
    return float(lo), float(hi)


def wald_truncated(point_raw: float, variance_over_n: float, level: float = 0.95) -> bool:
    """Whether clamping changed either Wald bound."""
    raw = wald_ci(point_raw, variance_over_n, level, truncate=False)
    if raw is None:
        return False
    return raw[0] < 0.0 or raw[1] > 1.0


def clopper_pearson(successes: int, trials: int, level: float = 0.95) -> tuple[float, float]:
    if trials < 1 or not 0 <= successes <= trials:
        raise InputError(f"need 0 <= successes <= trials and trials >= 1, got {successes}/{trials}")
    if not 0.0 < level < 1.0:
        raise InputError(f"confidence level must lie in (0, 1), got {level}")
    alpha = 1.0 - level
    lo = 0.0 if successes == 0 else float(
        stats.beta.ppf(alpha / 2.0, successes, trials - successes + 1))
    hi = 1.0 if successes == trials else float(
        stats.beta.ppf(1.0 - alpha / 2.0, successes + 1, trials - successes))
    return lo, hi
