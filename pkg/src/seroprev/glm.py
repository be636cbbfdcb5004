"""Maximum-likelihood binary regression on stratum-grouped data.

The likelihood is fitted on (design row, successes, trials) triples, one per
sampled stratum, so the cost of each Newton step does not grow with the
number of individual records.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import erfinv, expit, log_ndtr, ndtr

from seroprev.model import (
    ConvergenceError,
    DesignError,
    InputError,
    Link,
    MainStudy,
    RegressionSpec,
    SeparationError,
    StratumTable,
)

SCORE_TOL = 1e-8
STEP_TOL = 1e-10
MAX_ITER = 100
MAX_HALVINGS = 20
SEPARATION_ETA = 30.0
NEWTON_STEP_TOL = 1e-6

_SQRT_2PI = np.sqrt(2.0 * np.pi)


def inverse_link(eta, link=Link.LOGIT):
    eta = np.asarray(eta, dtype=float)
    if Link(link) is Link.LOGIT:
        return expit(eta)
    return ndtr(eta)


def inverse_link_deriv(eta, link=Link.LOGIT):
    """d mu / d eta."""
    eta = np.asarray(eta, dtype=float)
    if Link(link) is Link.LOGIT:
        mu = expit(eta)
        return mu * (1.0 - mu)
    return np.exp(-0.5 * eta**2) / _SQRT_2PI


def _log_mu(eta, link):
    if link is Link.LOGIT:
        return -np.logaddexp(0.0, -eta), -np.logaddexp(0.0, eta)
    return log_ndtr(eta), log_ndtr(-eta)


def _score_weight(eta, link):
    """Factor w(eta) such that the per-record score is (x - mu) w h."""
    if link is Link.LOGIT:
        return np.ones_like(eta)
    # ndtr(-eta) keeps 1 - mu accurate in the upper tail
    return inverse_link_deriv(eta, link) / (ndtr(eta) * ndtr(-eta))


def _score_weight_deriv(eta, link):
    if link is Link.LOGIT:
        return np.zeros_like(eta)
    mu = ndtr(eta)
    phi = inverse_link_deriv(eta, link)
    v = mu * ndtr(-eta)
    return (-eta * phi * v - phi * phi * (1.0 - 2.0 * mu)) / v**2


@dataclass(frozen=True)
class GroupedData:
    """One row per sampled stratum: design row, positives, trials."""

    labels: tuple[str, ...]
    design: np.ndarray
    successes: np.ndarray
    trials: np.ndarray


def group(main: MainStudy, table: StratumTable, spec: RegressionSpec) -> GroupedData:
    """Collapse main-study records to per-stratum tallies over sampled strata."""
    n_j, pos_j = main.tally(table)
    keep = n_j > 0
    labels = tuple(z for z, k in zip(table.labels, keep) if k)
    H = spec.design(labels)
    return GroupedData(labels, H, pos_j[keep].astype(float), n_j[keep].astype(float))


def loglik(beta, design, successes, trials, link=Link.LOGIT) -> float:
    link = Link(link)
    eta = np.asarray(design, float) @ np.asarray(beta, float)
    log_mu, log_1m = _log_mu(eta, link)
    fail = np.asarray(trials, float) - successes
    # 0 * log(0) is 0 here, not nan
    return float(np.sum(np.where(successes > 0, successes * log_mu, 0.0))
                 + np.sum(np.where(fail > 0, fail * log_1m, 0.0)))


def score_arrays(beta, design, successes, trials, link=Link.LOGIT) -> np.ndarray:
    link = Link(link)
    H = np.asarray(design, float)
    eta = H @ np.asarray(beta, float)
    mu = inverse_link(eta, link)
    resid = (successes - trials * mu) * _score_weight(eta, link)
    return H.T @ resid


def hessian_arrays(beta, design, successes, trials, link=Link.LOGIT,
                   expected: bool = False) -> np.ndarray:
    """Second derivative of the log-likelihood (negative definite at the MLE).

    For the canonical logit link observed and expected information coincide.
    ``expected=True`` returns minus the Fisher information for any link.
    """
    link = Link(link)
    H = np.asarray(design, float)
    eta = H @ np.asarray(beta, float)
    mu = inverse_link(eta, link)
    dmu = inverse_link_deriv(eta, link)
    w = _score_weight(eta, link)
    curv = -trials * dmu * w
    if not expected:
        curv = curv + (successes - trials * mu) * _score_weight_deriv(eta, link)
    return (H * curv[:, None]).T @ H


def score(beta, main: MainStudy, table: StratumTable, spec: RegressionSpec) -> np.ndarray:
    g = group(main, table, spec)
    return score_arrays(beta, g.design, g.successes, g.trials, spec.link)


def hessian(beta, main: MainStudy, table: StratumTable, spec: RegressionSpec) -> np.ndarray:
    g = group(main, table, spec)
    return hessian_arrays(beta, g.design, g.successes, g.trials, spec.link)


@dataclass(frozen=True)
class FitResult:
    beta_hat: np.ndarray
    fitted: dict[str, float]
    score_norm: float
    iterations: int
    converged: bool
    link: Link = Link.LOGIT
    loglik: float = float("nan")

    def predict(self, design) -> np.ndarray:
        return inverse_link(np.asarray(design, float) @ self.beta_hat, self.link)


def fit_arrays(design, successes, trials, link=Link.LOGIT,
               labels: tuple[str, ...] | None = None,
               trace: list | None = None) -> FitResult:
    """Newton-Raphson (Fisher scoring for probit) with step halving.

    If ``trace`` is a list, the log-likelihood at every iterate is appended.
    """
    link = Link(link)
    H = np.asarray(design, dtype=float)
    y = np.asarray(successes, dtype=float)
    n = np.asarray(trials, dtype=float)
    if H.ndim != 2 or H.shape[0] != y.size or y.size != n.size:
        raise InputError("design, successes and trials have inconsistent shapes")
    if np.any(y < 0) or np.any(y > n):
        raise InputError("successes must lie in [0, trials]")
    p = H.shape[1]
    if np.linalg.matrix_rank(H) < p:
        raise DesignError(
            f"design matrix over the {H.shape[0]} sampled strata has rank "
            f"{np.linalg.matrix_rank(H)} < p={p}"
        )

    pooled = np.clip(y.sum() / n.sum(), 0.5 / n.sum(), 1.0 - 0.5 / n.sum())
    beta = np.zeros(p)
    beta[0] = np.log(pooled / (1.0 - pooled)) if link is Link.LOGIT else float(
        np.sqrt(2.0) * erfinv(2.0 * pooled - 1.0))
    ll = loglik(beta, H, y, n, link)
    if trace is not None:
        trace.append(ll)
    converged = False
    steps = 0
    for _ in range(MAX_ITER):
        g = score_arrays(beta, H, y, n, link)
        info = -hessian_arrays(beta, H, y, n, link, expected=True)
        try:
            step = np.linalg.solve(info, g)
        except np.linalg.LinAlgError:
            raise SeparationError("information matrix became singular during fitting") from None
        # a small score alone is not enough: under separation the score decays
        # while Newton keeps stepping towards infinity
        if (np.max(np.abs(g)) < SCORE_TOL
                and np.max(np.abs(step)) < NEWTON_STEP_TOL * max(1.0, np.max(np.abs(beta)))):
            converged = True
            break
        t = 1.0
        for _ in range(MAX_HALVINGS + 1):
            cand = beta + t * step
            ll_cand = loglik(cand, H, y, n, link)
            if np.isfinite(ll_cand) and ll_cand >= ll - 1e-12 * abs(ll):
                break
            t *= 0.5
        else:
            raise ConvergenceError("step halving failed to increase the log-likelihood")
        rel_change = np.max(np.abs(cand - beta)) / max(1.0, np.max(np.abs(beta)))
        beta, ll = cand, ll_cand
        steps += 1
        if trace is not None:
            trace.append(ll)
        if np.max(np.abs(H @ beta)) > SEPARATION_ETA:
            raise SeparationError(
                "linear predictor exceeded 30 in absolute value before convergence; "
                "the data are (quasi-)separated"
            )
        if rel_change < STEP_TOL:
            converged = True
            break
    else:
        raise ConvergenceError(f"no convergence after {MAX_ITER} iterations")

    g = score_arrays(beta, H, y, n, link)
    mu = inverse_link(H @ beta, link)
    if np.any(mu <= 0.0) or np.any(mu >= 1.0):
        raise SeparationError("fitted probabilities reached 0 or 1")
    labels = labels if labels is not None else tuple(str(j) for j in range(H.shape[0]))
    return FitResult(
        beta_hat=beta,
        fitted=dict(zip(labels, mu.tolist())),
        score_norm=float(np.max(np.abs(g))),
        iterations=steps,
        converged=converged,
        link=link,
        loglik=ll,
    )


def fit(main: MainStudy, table: StratumTable, spec: RegressionSpec) -> FitResult:
    """Fit ``spec`` by maximum likelihood to the main study, grouped by stratum.

    Strata in ``table`` without sampled records do not enter the likelihood.
    """
    g = group(main, table, spec)
    if not g.labels:
        raise InputError("no sampled strata to fit")
    if spec.p > len(g.labels):
        raise DesignError(
            f"model has p={spec.p} coefficients but only {len(g.labels)} strata are sampled"
        )
    return fit_arrays(g.design, g.successes, g.trials, spec.link, g.labels)
