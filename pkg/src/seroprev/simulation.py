"""Monte Carlo engine for the four data-generating processes and their
misspecified variants.

Every replicate draws from its own Philox stream keyed by
(master_seed, scenario id, replicate id), so results do not depend on how
replicates are scheduled across workers.
"""

from __future__ import annotations

import csv
import enum
import functools
import itertools
import json
import logging
import math
import zlib
from collections.abc import Iterable, Sequence
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import NamedTuple

import numpy as np
from scipy.optimize import brentq
from scipy.special import expit

from seroprev.analysis import analyze_rg, analyze_srg, analyze_srgm
from seroprev.model import (
    InputError,
    MainStudy,
    Method,
    RegressionSpec,
    SeroprevError,
    StratumTable,
    ValidationStudy,
)

log = logging.getLogger(__name__)


class DGP(str, enum.Enum):
    DGP1 = "DGP1"
    DGP2 = "DGP2"
    DGP3 = "DGP3"
    DGP4 = "DGP4"
    DGP3_MIS = "DGP3_MIS"
    DGP4_MIS = "DGP4_MIS"

    @property
    def base(self) -> DGP:
        return {DGP.DGP3_MIS: DGP.DGP3, DGP.DGP4_MIS: DGP.DGP4}.get(self, self)

    @property
    def misspecified(self) -> bool:
        return self in (DGP.DGP3_MIS, DGP.DGP4_MIS)


# Non-intercept coefficients; the intercept is balanced per scenario.
DGP3_COEFS = (-1.0, -0.6, 0.8, 0.6, 0.4)
DGP4_COEFS = (-1.0, 3.25, 0.8, 0.6, 0.4, 0.1)

DGP2_GAMMAS = (0.5, 0.5)
DGP2_SAMPLING = (0.2, 0.8)
DGP2_RISK = (1.5, 0.5)

INTERCEPT_BRACKET = (-20.0, 20.0)

DEFAULT_ESTIMATORS = {
    DGP.DGP1: (Method.RG,),
    DGP.DGP2: (Method.RG, Method.SRG),
}


@dataclass(frozen=True)
class DGPTable:
    """Stratum layout of a regression-based DGP.

    ``design`` has one row per stratum with a leading intercept column;
    ``coefs`` are the coefficients of the remaining columns.
    """

    labels: tuple[str, ...]
    gammas: np.ndarray
    sampling: np.ndarray
    design: np.ndarray
    coefs: np.ndarray
    term_names: tuple[str, ...]

    @property
    def offsets(self) -> np.ndarray:
        return self.design[:, 1:] @ self.coefs

    def stratum_table(self) -> StratumTable:
        return StratumTable(self.labels, self.gammas)

    def spec(self) -> RegressionSpec:
        return RegressionSpec.from_matrix(self.labels, self.design,
                                          term_names=self.term_names)

    @classmethod
    def from_dict(cls, d: dict) -> DGPTable:
        gam = np.asarray(d["gammas"], float)
        s = np.asarray(d["sampling"], float)
        return cls(tuple(d["labels"]), gam / math.fsum(gam), s / math.fsum(s),
                   np.asarray(d["design"], float), np.asarray(d["coefs"], float),
                   tuple(d["term_names"]))

    def to_dict(self) -> dict:
        return {
            "labels": list(self.labels),
            "gammas": self.gammas.tolist(),
            "sampling": self.sampling.tolist(),
            "design": self.design.tolist(),
            "coefs": self.coefs.tolist(),
            "term_names": list(self.term_names),
        }


def factorial_layout(levels: Sequence[Sequence[str]],
                     indicators: Sequence[tuple[int, str]]) -> tuple[tuple[str, ...], np.ndarray, tuple[str, ...]]:
    """Labels and main-effect design for a full factorial of covariates.

    ``indicators`` lists (covariate index, level) pairs, one design column each.
    """
    cells = list(itertools.product(*levels))
    labels = tuple("|".join(c) for c in cells)
    H = np.ones((len(cells), 1 + len(indicators)))
    for col, (cov, level) in enumerate(indicators, start=1):
        H[:, col] = [1.0 if c[cov] == level else 0.0 for c in cells]
    names = ("(Intercept)",) + tuple(f"I({lvl})" for _, lvl in indicators)
    return labels, H, names


DGP3_LEVELS = (("z10", "z11"), ("z20", "z21", "z22", "z23"),
               ("z30", "z31", "z32", "z33", "z34"))
DGP3_TERMS = ((0, "z11"), (1, "z20"), (1, "z21"), (2, "z30"), (2, "z31"))
DGP4_LEVELS = DGP3_LEVELS + (("z40", "z41"),)
DGP4_TERMS = DGP3_TERMS + ((3, "z41"),)


@functools.lru_cache(maxsize=None)
def _packaged_tables() -> dict:
    text = resources.files("seroprev").joinpath("data/dgp_tables.json").read_text()
    return json.loads(text)


def load_table(path: str | Path) -> DGPTable:
    return DGPTable.from_dict(json.loads(Path(path).read_text()))


def default_table(dgp: DGP | str) -> DGPTable:
    """Shipped stratum proportions and sampling probabilities for DGPs 3 and 4."""
    base = DGP(dgp).base
    if base not in (DGP.DGP3, DGP.DGP4):
        raise InputError(f"{dgp} has no regression stratum table")
    return DGPTable.from_dict(_packaged_tables()[base.value])


def implied_prevalence(intercept: float, offsets, gammas, sigma_e: float = 1.0,
                       sigma_p: float = 1.0, model_on_test: bool = True) -> float:
    """Population prevalence implied by a logistic model with the given intercept.

    With ``model_on_test`` the model describes P(X=1|Z) and prevalence is
    recovered through the misclassification identity; otherwise it
    describes P(Y=1|Z) directly.
    """
    rho = float(expit(intercept + np.asarray(offsets, float)) @ np.asarray(gammas, float))
    if not model_on_test:
        return rho
    return (rho + sigma_p - 1.0) / (sigma_e + sigma_p - 1.0)


def balance_intercept(target_pi: float, gammas, offsets=None, sigma_e: float = 1.0,
                      sigma_p: float = 1.0, model_on_test: bool = True) -> float:
    """Intercept making the implied population prevalence equal ``target_pi``."""
    gammas = np.asarray(gammas, float)
    offsets = np.zeros_like(gammas) if offsets is None else np.asarray(offsets, float)

    def gap(b0):
        return implied_prevalence(b0, offsets, gammas, sigma_e, sigma_p, model_on_test) - target_pi

    # implied prevalence increases with the intercept when sigma_e + sigma_p > 1
    if model_on_test and sigma_e + sigma_p <= 1.0:
        raise InputError("balancing needs sigma_e + sigma_p > 1")
    lo, hi = INTERCEPT_BRACKET
    g_lo, g_hi = gap(lo), gap(hi)
    if not g_lo < 0.0 < g_hi:
        raise InputError(
            f"target prevalence {target_pi} unreachable with an intercept in "
            f"[{lo}, {hi}] (reachable range {g_lo + target_pi:.4g} .. {g_hi + target_pi:.4g})"
        )
    return float(brentq(gap, lo, hi, xtol=1e-12, rtol=4 * np.finfo(float).eps, maxiter=500))


@dataclass(frozen=True)
class Scenario:
    dgp: DGP
    pi: float
    sigma_e: float
    sigma_p: float
    n1: int = 40
    n2: int = 250
    n3: int = 2500

    def __post_init__(self):
        object.__setattr__(self, "dgp", DGP(self.dgp))

    @property
    def id(self) -> int:
        """Stable 32-bit id, independent of grid position and process."""
        key = f"{self.dgp.value}|{self.pi!r}|{self.sigma_e!r}|{self.sigma_p!r}|{self.n1}|{self.n2}|{self.n3}"
        return zlib.crc32(key.encode())


class Generated(NamedTuple):
    validation: ValidationStudy
    main: MainStudy
    table: StratumTable
    true_pi: float


def replicate_rng(master_seed: int, scenario_id: int, replicate: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=master_seed, spawn_key=(scenario_id, replicate))
    return np.random.Generator(np.random.Philox(ss))


def _main_from_counts(n_j: np.ndarray, pos_j: np.ndarray, labels: tuple[str, ...]) -> MainStudy:
    codes = np.repeat(np.arange(len(labels)), n_j)
    x = np.zeros(codes.size, dtype=np.int8)
    starts = np.r_[0, np.cumsum(n_j)[:-1]]
    for s, k in zip(starts, pos_j):
        x[s:s + k] = 1
    return MainStudy(x, codes, labels)


@functools.lru_cache(maxsize=4096)
def _intercept_for(dgp: DGP, pi: float, sigma_e: float, sigma_p: float) -> float:
    tab = default_table(dgp)
    return balance_intercept(pi, tab.gammas, tab.offsets, sigma_e, sigma_p,
                             model_on_test=not dgp.misspecified)


def check_feasible(sc: Scenario) -> str | None:
    """Reason the scenario cannot be simulated, or None."""
    if not 0.0 <= sc.pi <= 1.0:
        return f"pi={sc.pi} outside [0, 1]"
    if not (0.0 <= sc.sigma_e <= 1.0 and 0.0 <= sc.sigma_p <= 1.0):
        return "sensitivity/specificity outside [0, 1]"
    if min(sc.n1, sc.n2, sc.n3) < 1:
        return "sample sizes must be positive"
    if sc.dgp is DGP.DGP2 and max(DGP2_RISK) * sc.pi > 1.0:
        return f"DGP2 needs 1.5*pi <= 1, got pi={sc.pi}"
    if sc.dgp.base in (DGP.DGP3, DGP.DGP4):
        try:
            _intercept_for(sc.dgp, sc.pi, sc.sigma_e, sc.sigma_p)
        except InputError as exc:
            return str(exc)
    return None


def generate(sc: Scenario, rng: np.random.Generator) -> Generated:
    """Draw one dataset for ``sc``."""
    reason = check_feasible(sc)
    if reason:
        raise InputError(reason)
    validation = ValidationStudy(
        sc.n1, int(rng.binomial(sc.n1, sc.sigma_e)),
        sc.n2, int(rng.binomial(sc.n2, sc.sigma_p)),
    )
    dgp = sc.dgp
    if dgp is DGP.DGP1:
        labels = ("all",)
        table = StratumTable(labels, np.array([1.0]))
        y_prob = np.array([sc.pi])
        n_j = np.array([sc.n3])
        true_pi = sc.pi
    elif dgp is DGP.DGP2:
        labels = ("z1", "z2")
        table = StratumTable(labels, np.array(DGP2_GAMMAS))
        y_prob = sc.pi * np.array(DGP2_RISK)
        n_j = rng.multinomial(sc.n3, DGP2_SAMPLING)
        true_pi = sc.pi
    else:
        tab = default_table(dgp)
        labels = tab.labels
        table = tab.stratum_table()
        b0 = _intercept_for(dgp, sc.pi, sc.sigma_e, sc.sigma_p)
        prob = expit(b0 + tab.offsets)
        n_j = rng.multinomial(sc.n3, tab.sampling)
        true_pi = implied_prevalence(b0, tab.offsets, tab.gammas, sc.sigma_e, sc.sigma_p,
                                     model_on_test=not dgp.misspecified)
        if not dgp.misspecified:
            pos_j = rng.binomial(n_j, prob)
            return Generated(validation, _main_from_counts(n_j, pos_j, labels), table, true_pi)
        y_prob = prob
    # draw true status, then the test result given status
    y_j = rng.binomial(n_j, y_prob)
    pos_j = rng.binomial(y_j, sc.sigma_e) + rng.binomial(n_j - y_j, 1.0 - sc.sigma_p)
    return Generated(validation, _main_from_counts(n_j, pos_j, labels), table, true_pi)


def model_spec(dgp: DGP | str) -> RegressionSpec:
    """Regression model fitted by SRGM for a DGP (correct for DGPs 1-4)."""
    dgp = DGP(dgp)
    if dgp is DGP.DGP1:
        return RegressionSpec.intercept_only()
    if dgp is DGP.DGP2:
        return RegressionSpec.saturated(("z1", "z2"))
    return default_table(dgp).spec()


@dataclass(frozen=True)
class SimulationConfig:
    dgp: DGP
    pi_grid: tuple[float, ...]
    sigma_e_grid: tuple[float, ...]
    sigma_p_grid: tuple[float, ...]
    n1: int = 40
    n2: int = 250
    n3: int = 2500
    replicates: int = 1000
    master_seed: int = 20220101
    estimators: tuple[Method, ...] = ()
    level: float = 0.95
    truncate_plugin: bool = True

    def __post_init__(self):
        object.__setattr__(self, "dgp", DGP(self.dgp))
        for name in ("pi_grid", "sigma_e_grid", "sigma_p_grid"):
            grid = tuple(float(v) for v in getattr(self, name))
            if not grid:
                raise InputError(f"{name} must not be empty")
            object.__setattr__(self, name, grid)
        if self.replicates < 1:
            raise InputError("replicates must be >= 1")
        if not 0 <= self.master_seed < 2**64:
            raise InputError("master_seed must be a 64-bit unsigned integer")
        ests = tuple(Method(e) for e in self.estimators) or DEFAULT_ESTIMATORS.get(
            self.dgp, (Method.RG, Method.SRG, Method.SRGM))
        if Method.NAIVE in ests:
            raise InputError("the naive estimator is not part of the simulation study")
        object.__setattr__(self, "estimators", ests)

    def scenarios(self) -> list[Scenario]:
        return [
            Scenario(self.dgp, pi, se, sp, self.n1, self.n2, self.n3)
            for se, sp, pi in itertools.product(self.sigma_e_grid, self.sigma_p_grid,
                                                self.pi_grid)
        ]


@dataclass
class EstimatorSummary:
    estimator: Method
    replicates: int = 0
    failures: int = 0
    heywood_count: int = 0
    truncation_count: int = 0
    n_bias: int = 0
    bias_sum: float = 0.0
    n_ci: int = 0
    n_covered: int = 0
    failure_reasons: dict[str, int] = field(default_factory=dict)

    @property
    def mean_bias(self) -> float:
        return self.bias_sum / self.n_bias if self.n_bias else math.nan

    @property
    def coverage(self) -> float:
        return self.n_covered / self.n_ci if self.n_ci else math.nan


@dataclass
class ScenarioResult:
    scenario: Scenario
    summaries: dict[Method, EstimatorSummary]
    replicates: int = 0
    nonpositive: int = 0
    skipped: str | None = None

    @property
    def nonpositivity_fraction(self) -> float:
        return self.nonpositive / self.replicates if self.replicates else math.nan

    @property
    def positivity_fraction(self) -> float:
        return 1.0 - self.nonpositivity_fraction

    def __getitem__(self, method) -> EstimatorSummary:
        return self.summaries[Method(method)]


# (estimator, bias or None, covered or None, heywood, truncated, failure reason)
_Outcome = tuple[str, float | None, bool | None, bool, bool, str | None]


def run_replicate(config: SimulationConfig, sc: Scenario, rep: int) -> tuple[bool, list[_Outcome]]:
    """Generate and estimate one replicate; returns (nonpositive, outcomes)."""
    rng = replicate_rng(config.master_seed, sc.id, rep)
    data = generate(sc, rng)
    n_j, _ = data.main.tally(data.table)
    nonpositive = bool(np.any(n_j == 0))
    outcomes: list[_Outcome] = []
    for method in config.estimators:
        try:
            if method is Method.RG:
                est = analyze_rg(data.validation, data.main, config.level, config.truncate_plugin)
            elif method is Method.SRG:
                est = analyze_srg(data.validation, data.main, data.table, config.level,
                                  config.truncate_plugin)
            else:
                est = analyze_srgm(data.validation, data.main, data.table,
                                   model_spec(sc.dgp), config.level, config.truncate_plugin)
        except SeroprevError as exc:
            outcomes.append((method.value, None, None, False, False, type(exc).__name__))
            continue
        covered = est.covers(data.true_pi)
        outcomes.append((method.value, est.point - data.true_pi, covered, est.heywood,
                         "truncated_point" in est.flags, None))
    return nonpositive, outcomes


def _run_chunk(config: SimulationConfig, sc: Scenario, reps: range):
    return [run_replicate(config, sc, r) for r in reps]


def _accumulate(sc: Scenario, config: SimulationConfig, replicate_results) -> ScenarioResult:
    res = ScenarioResult(sc, {m: EstimatorSummary(m) for m in config.estimators})
    for nonpositive, outcomes in replicate_results:
        res.replicates += 1
        res.nonpositive += nonpositive
        for name, bias, covered, heywood, truncated, failure in outcomes:
            s = res.summaries[Method(name)]
            s.replicates += 1
            if failure is not None:
                s.failures += 1
                s.failure_reasons[failure] = s.failure_reasons.get(failure, 0) + 1
                continue
            s.n_bias += 1
            s.bias_sum += bias
            s.truncation_count += truncated
            if heywood:
                s.heywood_count += 1
            elif covered is not None:
                s.n_ci += 1
                s.n_covered += covered
    return res


def run(config: SimulationConfig, workers: int = 1, chunk_size: int = 250) -> list[ScenarioResult]:
    """Run every scenario of the grid.

    Infeasible scenarios are returned with ``skipped`` set instead of raising.
    """
    results = []
    jobs = []
    for sc in config.scenarios():
        reason = check_feasible(sc)
        if reason:
            log.warning("skipping %s pi=%s se=%s sp=%s: %s", sc.dgp.value, sc.pi,
                        sc.sigma_e, sc.sigma_p, reason)
            results.append(ScenarioResult(sc, {}, skipped=reason))
            continue
        chunks = [range(a, min(a + chunk_size, config.replicates))
                  for a in range(0, config.replicates, chunk_size)]
        jobs.append((sc, chunks))
        results.append(None)

    if workers <= 1:
        done = [[_run_chunk(config, sc, ch) for ch in chunks] for sc, chunks in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [[pool.submit(_run_chunk, config, sc, ch) for ch in chunks]
                       for sc, chunks in jobs]
            done = [[f.result() for f in fs] for fs in futures]

    it = iter(zip(jobs, done))
    for i, r in enumerate(results):
        if r is None:
            (sc, _), chunk_results = next(it)
            results[i] = _accumulate(sc, config, itertools.chain.from_iterable(chunk_results))
    return results


CSV_COLUMNS = ("dgp", "pi", "sigma_e", "sigma_p", "estimator", "mean_bias", "coverage",
               "heywood_count", "nonpositivity_fraction", "truncation_count", "failures",
               "replicates", "skipped")


def result_rows(results: Iterable[ScenarioResult]) -> list[dict]:
    rows = []
    for r in results:
        sc = r.scenario
        base = {"dgp": sc.dgp.value, "pi": sc.pi, "sigma_e": sc.sigma_e, "sigma_p": sc.sigma_p}
        if r.skipped:
            rows.append({**base, "estimator": "", "mean_bias": "", "coverage": "",
                         "heywood_count": "", "nonpositivity_fraction": "",
                         "truncation_count": "", "failures": "", "replicates": 0,
                         "skipped": r.skipped})
            continue
        for m, s in r.summaries.items():
            rows.append({**base, "estimator": m.value, "mean_bias": s.mean_bias,
                         "coverage": s.coverage, "heywood_count": s.heywood_count,
                         "nonpositivity_fraction": r.nonpositivity_fraction,
                         "truncation_count": s.truncation_count, "failures": s.failures,
                         "replicates": s.replicates, "skipped": ""})
    return rows


def write_csv(results: Iterable[ScenarioResult], path: str | Path) -> Path:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=CSV_COLUMNS, lineterminator="\n")
        w.writeheader()
        for row in result_rows(results):
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
    return path
