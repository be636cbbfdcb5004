"""Cross-check analytic variance formulas against the numeric sandwich.

Each check draws a synthetic dataset from a seed, computes the closed-form
(or block-assembled) variance of the prevalence estimate and compares it
with the bottom-right element of a finite-difference sandwich built from
the per-record estimating functions.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from seroprev import glm
from seroprev.estimators import _restrict, estimate_assay, rogan_gladen, srgm
from seroprev.model import (
    InputError,
    RegressionSpec,
    SampleFractions,
)
from seroprev.simulation import DGP, Scenario, default_table, generate, replicate_rng
from seroprev.variance import (
    StackedData,
    make_psi_srg,
    make_psi_srgm,
    numeric_sandwich,
    psi_rg,
    srgm_sandwich,
    var_rg,
    var_srg,
)

STACKS = ("rg", "srg", "srgm")
DESIGNS = ("model", "intercept", "saturated", "singular")

# proportions of the three studies, as in the simulation study
_SHARES = np.array([40, 250, 2500]) / 2790


@dataclass(frozen=True)
class OracleReport:
    stack: str
    design: str
    seed: int
    n: int
    pi: float
    sigma_e: float
    sigma_p: float
    analytic: float
    numeric: float
    reference: float | None = None

    @property
    def rel_discrepancy(self) -> float:
        return abs(self.analytic - self.numeric) / abs(self.numeric)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["rel_discrepancy"] = self.rel_discrepancy
        return d


def _draw_params(seed: int) -> tuple[float, float, float]:
    rng = np.random.default_rng([seed, 0xA5])
    return (float(rng.uniform(0.05, 0.30)), float(rng.uniform(0.80, 0.99)),
            float(rng.uniform(0.80, 0.99)))


def _sizes(n: int) -> tuple[int, int, int]:
    n1, n2 = (int(round(s * n)) for s in _SHARES[:2])
    return n1, n2, n - n1 - n2


def compare(stack: str, seed: int = 0, n: int = 100_000, design: str = "model") -> OracleReport:
    """Analytic vs numeric variance (both divided by n) for one synthetic dataset."""
    if stack not in STACKS:
        raise InputError(f"unknown stack {stack!r}; choose from {STACKS}")
    if design not in DESIGNS:
        raise InputError(f"unknown design {design!r}; choose from {DESIGNS}")
    if n < 100:
        raise InputError("oracle checks need n >= 100")
    pi, se_true, sp_true = _draw_params(seed)
    n1, n2, n3 = _sizes(n)
    dgp = {"rg": DGP.DGP1, "srg": DGP.DGP2, "srgm": DGP.DGP3}[stack]
    sc = Scenario(dgp, pi, se_true, sp_true, n1, n2, n3)
    data = generate(sc, replicate_rng(seed, sc.id, 0))
    v, m = data.validation, data.main
    se, sp = estimate_assay(v)
    fr = SampleFractions.of(v, m.n)

    if stack == "rg":
        rho = m.positives / m.n
        pi_hat = rogan_gladen(rho, se, sp).point_raw
        analytic = var_rg(pi_hat, se, sp, rho, fr) / n
        parts = numeric_sandwich(psi_rg, np.array([se, sp, rho, pi_hat]),
                                 StackedData.build(v, m))
        return OracleReport(stack, design, seed, n, pi, se_true, sp_true, analytic,
                            parts.bottom_right)

    if stack == "srg":
        r = _restrict(m, data.table)
        rho_j = r.pos_j / r.n_j
        rho = float(rho_j @ r.table.gammas)
        pi_hat = rogan_gladen(rho, se, sp).point_raw
        analytic = var_srg(pi_hat, se, sp, rho_j, r.n_j / m.n, r.table.gammas, fr) / n
        theta = np.r_[se, sp, rho_j, rho, pi_hat]
        parts = numeric_sandwich(make_psi_srg(r.table.gammas), theta,
                                 StackedData.build(v, m, r.table))
        return OracleReport(stack, design, seed, n, pi, se_true, sp_true, analytic,
                            parts.bottom_right)

    table = data.table
    spec = _srgm_spec(design, table)
    fit = glm.fit(m, table, spec)
    pi_hat = srgm(m, table, spec, se, sp, fit=fit).point_raw
    analytic = srgm_sandwich(fit, m, table, spec, v, pi_hat).bottom_right
    H = spec.design(table.labels)
    theta = np.r_[se, sp, fit.beta_hat, float(fit.predict(H) @ table.gammas), pi_hat]
    parts = numeric_sandwich(make_psi_srgm(H, table.gammas, spec.link), theta,
                             StackedData.build(v, m, table))
    reference = None
    if design == "intercept":
        rho = m.positives / m.n
        reference = var_rg(pi_hat, se, sp, rho, fr) / n
    elif design == "saturated":
        r = _restrict(m, table)
        if r.dropped:
            raise InputError("saturated comparison needs every stratum sampled")
        rho_j = r.pos_j / r.n_j
        reference = var_srg(pi_hat, se, sp, rho_j, r.n_j / m.n, r.table.gammas, fr) / n
    return OracleReport(stack, design, seed, n, pi, se_true, sp_true, analytic,
                        parts.bottom_right, reference)


def _srgm_spec(design: str, table) -> RegressionSpec:
    if design == "model":
        return default_table(DGP.DGP3).spec()
    if design == "intercept":
        return RegressionSpec.intercept_only()
    if design == "saturated":
        return RegressionSpec.saturated(table.labels)
    # duplicate the first covariate column: rank deficient by construction
    base = default_table(DGP.DGP3)
    H = np.column_stack([base.design, base.design[:, 1]])
    return RegressionSpec.from_matrix(base.labels, H)
