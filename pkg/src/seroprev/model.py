"""Domain types shared by the estimators, variance code and simulator.

All containers are frozen dataclasses; array fields are made read-only on
construction so instances can be shared freely between workers.
"""

from __future__ import annotations

import enum
import json
import math
from collections.abc import Callable, Iterable, Mapping, Sequence
from dataclasses import dataclass, field

import numpy as np


class SeroprevError(Exception):
    """Base class for all errors raised by this package."""


class InputError(SeroprevError, ValueError):
    """Malformed or out-of-range input data."""


class NoDataError(InputError):
    """Nothing left to estimate from (e.g. every stratum unsampled)."""


class DegenerateAssayError(SeroprevError, ValueError):
    """Sensitivity + specificity equals one, so the test carries no information."""


class NumericalError(SeroprevError, ArithmeticError):
    """A numerical procedure failed (singular matrix, no convergence, ...)."""


class DesignError(NumericalError):
    """Design matrix is rank deficient over the sampled strata."""


class SeparationError(NumericalError):
    """Maximum likelihood estimate does not exist (complete/quasi separation)."""


class ConvergenceError(NumericalError):
    """Iteration cap reached before convergence."""


class SingularMatrixError(NumericalError):
    """A matrix that must be inverted is singular."""


class Method(str, enum.Enum):
    NAIVE = "naive"
    RG = "RG"
    SRG = "SRG"
    SRGM = "SRGM"


class Link(str, enum.Enum):
    LOGIT = "logit"
    PROBIT = "probit"


# Flag names carried on PrevalenceEstimate.flags
TRUNCATED_POINT = "truncated_point"
TRUNCATED_CI = "truncated_ci"
HEYWOOD = "heywood"
RESTRICTED = "restricted"
WORSE_THAN_GUESSING = "worse_than_guessing"
VARIANCE_UNDEFINED = "variance_undefined"


def _frozen(a, dtype=None) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class ValidationStudy:
    """Counts from the sensitivity (known positives) and specificity
    (known negatives) validation samples."""

    n_sens: int
    x_sens_pos: int
    n_spec: int
    x_spec_neg: int

    def __post_init__(self):
        for name in ("n_sens", "x_sens_pos", "n_spec", "x_spec_neg"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, (int, np.integer)):
                raise InputError(f"{name} must be an integer count, got {value!r}")
            object.__setattr__(self, name, int(value))
        if self.n_sens < 1:
            raise InputError(f"n_sens must be >= 1, got {self.n_sens}")
        if self.n_spec < 1:
            raise InputError(f"n_spec must be >= 1, got {self.n_spec}")
        if not 0 <= self.x_sens_pos <= self.n_sens:
            raise InputError(
                f"x_sens_pos must lie in [0, n_sens={self.n_sens}], got {self.x_sens_pos}"
            )
        if not 0 <= self.x_spec_neg <= self.n_spec:
            raise InputError(
                f"x_spec_neg must lie in [0, n_spec={self.n_spec}], got {self.x_spec_neg}"
            )

    @property
    def sensitivity(self) -> float:
        return self.x_sens_pos / self.n_sens

    @property
    def specificity(self) -> float:
        return self.x_spec_neg / self.n_spec

    def to_dict(self) -> dict:
        return {
            "n_sens": self.n_sens,
            "x_sens_pos": self.x_sens_pos,
            "n_spec": self.n_spec,
            "x_spec_neg": self.x_spec_neg,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> ValidationStudy:
        return cls(d["n_sens"], d["x_sens_pos"], d["n_spec"], d["x_spec_neg"])


def from_counts(n_sens: int, x_sens_pos: int, n_spec: int, x_spec_neg: int) -> ValidationStudy:
    return ValidationStudy(n_sens, x_sens_pos, n_spec, x_spec_neg)


GAMMA_SUM_TOL = 1e-10


@dataclass(frozen=True)
class StratumTable:
    """Target-population stratum labels and their proportions."""

    labels: tuple[str, ...]
    gammas: np.ndarray

    def __post_init__(self):
        labels = tuple(str(z) for z in self.labels)
        gammas = np.asarray(self.gammas, dtype=float)
        if gammas.ndim != 1 or len(labels) != gammas.size:
            raise InputError("labels and gammas must be 1-d and of equal length")
        if not labels:
            raise InputError("stratum table is empty")
        if len(set(labels)) != len(labels):
            seen, dupes = set(), []
            for z in labels:
                if z in seen:
                    dupes.append(z)
                seen.add(z)
            raise InputError(f"duplicate stratum labels: {sorted(set(dupes))}")
        if not np.all(np.isfinite(gammas)) or np.any(gammas <= 0):
            bad = [z for z, g in zip(labels, gammas) if not (np.isfinite(g) and g > 0)]
            raise InputError(f"stratum proportions must be positive; offending strata: {bad}")
        total = math.fsum(gammas)
        if abs(total - 1.0) > GAMMA_SUM_TOL:
            raise InputError(f"stratum proportions sum to {total!r}, expected 1")
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "gammas", _frozen(gammas))

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[str, float]]) -> StratumTable:
        pairs = list(pairs)
        return cls(tuple(p[0] for p in pairs), np.array([p[1] for p in pairs], dtype=float))

    @classmethod
    def normalized(cls, labels: Sequence[str], weights) -> StratumTable:
        """Build a table from positive weights, rescaling them to sum to one."""
        w = np.asarray(weights, dtype=float)
        return cls(tuple(labels), w / math.fsum(w))

    @property
    def k(self) -> int:
        return len(self.labels)

    def index(self) -> dict[str, int]:
        return {z: j for j, z in enumerate(self.labels)}

    def __eq__(self, other):
        if not isinstance(other, StratumTable):
            return NotImplemented
        return self.labels == other.labels and np.array_equal(self.gammas, other.gammas)

    def __hash__(self):
        return hash((self.labels, self.gammas.tobytes()))

    def to_dict(self) -> dict:
        return {"strata": [[z, float(g)] for z, g in zip(self.labels, self.gammas)]}

    @classmethod
    def from_dict(cls, d: Mapping) -> StratumTable:
        return cls.from_pairs((z, g) for z, g in d["strata"])


@dataclass(frozen=True)
class MainStudy:
    """Main-study test results with optional stratum labels.

    Stored as a 0/1 result vector plus integer codes into ``vocabulary``;
    a code of -1 marks a record with no stratum label.
    """

    x: np.ndarray
    codes: np.ndarray
    vocabulary: tuple[str, ...] = ()

    def __post_init__(self):
        x = np.asarray(self.x)
        codes = np.asarray(self.codes)
        if x.ndim != 1 or codes.shape != x.shape:
            raise InputError("x and codes must be 1-d arrays of equal length")
        if x.size < 1:
            raise InputError("main study must contain at least one record")
        if not np.all((x == 0) | (x == 1)):
            raise InputError("test results must be 0 or 1")
        vocab = tuple(str(v) for v in self.vocabulary)
        if codes.size and (codes.min() < -1 or codes.max() >= len(vocab)):
            raise InputError("stratum codes out of range of the vocabulary")
        object.__setattr__(self, "x", _frozen(x, dtype=np.int8))
        object.__setattr__(self, "codes", _frozen(codes, dtype=np.int64))
        object.__setattr__(self, "vocabulary", vocab)

    @classmethod
    def from_records(cls, records: Iterable[tuple[int, str | None]]) -> MainStudy:
        xs, codes, vocab = [], [], {}
        for x, z in records:
            xs.append(x)
            if z is None or z == "":
                codes.append(-1)
            else:
                codes.append(vocab.setdefault(str(z), len(vocab)))
        return cls(np.array(xs), np.array(codes, dtype=np.int64), tuple(vocab))

    @classmethod
    def unstratified(cls, positives: int, n: int) -> MainStudy:
        if not 0 <= positives <= n:
            raise InputError(f"positives must lie in [0, {n}], got {positives}")
        x = np.zeros(n, dtype=np.int8)
        x[:positives] = 1
        return cls(x, np.full(n, -1, dtype=np.int64), ())

    @property
    def n(self) -> int:
        return int(self.x.size)

    @property
    def positives(self) -> int:
        return int(self.x.sum())

    @property
    def has_missing_strata(self) -> bool:
        return bool(np.any(self.codes < 0))

    def records(self) -> list[tuple[int, str | None]]:
        return [
            (int(x), self.vocabulary[c] if c >= 0 else None)
            for x, c in zip(self.x, self.codes)
        ]

    def tally(self, table: StratumTable) -> tuple[np.ndarray, np.ndarray]:
        """Per-stratum sample sizes and positive counts, in table order.

        Raises InputError on missing labels or labels absent from ``table``.
        """
        if self.has_missing_strata:
            raise InputError("standardized estimators require a stratum label on every record")
        idx = table.index()
        unknown = [z for z in self.vocabulary if z not in idx]
        if unknown:
            present = set(self.codes.tolist())
            unknown = [z for z in unknown if self.vocabulary.index(z) in present]
        if unknown:
            raise InputError(f"main-study strata not in the stratum table: {unknown}")
        remap = np.array([idx.get(z, -1) for z in self.vocabulary], dtype=np.int64)
        table_codes = remap[self.codes] if self.vocabulary else self.codes
        n_j = np.bincount(table_codes, minlength=table.k)
        pos_j = np.bincount(table_codes, weights=self.x, minlength=table.k).astype(np.int64)
        return n_j, pos_j

    def __eq__(self, other):
        if not isinstance(other, MainStudy):
            return NotImplemented
        return self.records() == other.records()

    def __hash__(self):
        return hash(tuple(self.records()))

    def to_dict(self) -> dict:
        return {"records": [[x, z] for x, z in self.records()]}

    @classmethod
    def from_dict(cls, d: Mapping) -> MainStudy:
        return cls.from_records((x, z) for x, z in d["records"])


@dataclass(frozen=True)
class SampleFractions:
    """Sample-size fractions n_j / n of the three studies."""

    c1: float
    c2: float
    c3: float

    def __post_init__(self):
        for name in ("c1", "c2", "c3"):
            c = getattr(self, name)
            if not 0.0 < c < 1.0:
                raise InputError(f"{name} must lie in (0, 1), got {c}")
        if abs(self.c1 + self.c2 + self.c3 - 1.0) > 1e-12:
            raise InputError("sample fractions must sum to 1")

    @classmethod
    def from_sizes(cls, n1: int, n2: int, n3: int) -> SampleFractions:
        n = n1 + n2 + n3
        return cls(n1 / n, n2 / n, n3 / n)

    @classmethod
    def of(cls, validation: ValidationStudy, n3: int) -> SampleFractions:
        return cls.from_sizes(validation.n_sens, validation.n_spec, n3)


@dataclass(frozen=True)
class RegressionSpec:
    """Binary regression model for the stratum means.

    ``design_fn`` maps a stratum label to its covariate vector; the first
    entry must be the constant 1 (intercept).
    """

    design_fn: Callable[[str], Sequence[float]]
    p: int
    link: Link = Link.LOGIT
    term_names: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "link", Link(self.link))
        if self.p < 1:
            raise InputError("a regression model needs at least the intercept")

    def design(self, labels: Sequence[str]) -> np.ndarray:
        rows = [np.asarray(self.design_fn(z), dtype=float) for z in labels]
        H = np.vstack(rows) if rows else np.empty((0, self.p))
        if H.shape[1] != self.p:
            raise InputError(f"design_fn returned {H.shape[1]} columns, expected p={self.p}")
        if not np.all(H[:, 0] == 1.0):
            raise InputError("first design column must be the intercept (all ones)")
        return H

    @classmethod
    def intercept_only(cls, link=Link.LOGIT) -> RegressionSpec:
        return cls(lambda z: (1.0,), 1, link, ("(Intercept)",))

    @classmethod
    def saturated(cls, labels: Sequence[str], link=Link.LOGIT) -> RegressionSpec:
        """Intercept plus one indicator per label beyond the first."""
        labels = tuple(labels)
        pos = {z: j for j, z in enumerate(labels)}

        def h(z):
            row = np.zeros(len(labels))
            row[0] = 1.0
            j = pos[z]
            if j:
                row[j] = 1.0
            return row

        names = ("(Intercept)",) + tuple(f"[{z}]" for z in labels[1:])
        return cls(h, len(labels), link, names)

    @classmethod
    def from_matrix(cls, labels: Sequence[str], matrix, link=Link.LOGIT,
                    term_names: Sequence[str] = ()) -> RegressionSpec:
        M = np.asarray(matrix, dtype=float)
        rows = {z: M[j].copy() for j, z in enumerate(labels)}

        def h(z):
            try:
                return rows[z]
            except KeyError:
                raise InputError(f"no design row for stratum {z!r}") from None

        return cls(h, M.shape[1], link, tuple(term_names))


@dataclass(frozen=True)
class PrevalenceEstimate:
    """A prevalence point estimate with its (n-scaled) variance and interval.

    ``variance`` is the estimated variance of the point estimate, i.e. the
    asymptotic variance already divided by the total sample size.
    """

    method: Method
    point_raw: float
    point: float
    variance: float | None = None
    ci_low: float | None = None
    ci_high: float | None = None
    level: float = 0.95
    flags: frozenset[str] = frozenset()
    dropped_strata: tuple[str, ...] = ()
    details: Mapping[str, float] = field(default_factory=dict)

    @classmethod
    def build(cls, method, point_raw: float, variance: float | None = None,
              ci: tuple[float, float] | None = None, level: float = 0.95,
              flags: Iterable[str] = (), dropped_strata: Sequence[str] = (),
              details: Mapping[str, float] | None = None) -> PrevalenceEstimate:
        """Total constructor: derives the clamped point and flags from raw parts."""
        method = Method(method)
        flags = set(flags)
        raw = float(point_raw)
        if math.isnan(raw):
            point = math.nan
        else:
            point = min(1.0, max(0.0, raw))
            if point != raw:
                flags.add(TRUNCATED_POINT)
        var = None if variance is None else float(variance)
        if var is not None:
            if math.isnan(var):
                flags.add(VARIANCE_UNDEFINED)
                ci = None
            elif var < 0:
                flags.add(HEYWOOD)
                ci = None
        lo = hi = None
        if ci is not None:
            lo, hi = float(ci[0]), float(ci[1])
            if lo > hi:
                lo, hi = hi, lo
        if dropped_strata:
            flags.add(RESTRICTED)
        return cls(method, raw, point, var, lo, hi, float(level), frozenset(flags),
                   tuple(dropped_strata), dict(details or {}))

    @property
    def heywood(self) -> bool:
        return HEYWOOD in self.flags

    def covers(self, value: float) -> bool | None:
        if self.ci_low is None:
            return None
        return self.ci_low <= value <= self.ci_high

    def to_dict(self) -> dict:
        return {
            "method": self.method.value,
            "point_raw": self.point_raw,
            "point": self.point,
            "variance": self.variance,
            "ci_low": self.ci_low,
            "ci_high": self.ci_high,
            "level": self.level,
            "flags": sorted(self.flags),
            "dropped_strata": list(self.dropped_strata),
            "details": dict(self.details),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> PrevalenceEstimate:
        return cls(Method(d["method"]), d["point_raw"], d["point"], d["variance"],
                   d["ci_low"], d["ci_high"], d["level"], frozenset(d["flags"]),
                   tuple(d["dropped_strata"]), dict(d.get("details", {})))

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, s: str) -> PrevalenceEstimate:
        return cls.from_dict(json.loads(s))
