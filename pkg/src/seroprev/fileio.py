"""Readers and writers for the CSV / config inputs of the command line tool.

Schemas (UTF-8, comma separated, ``.`` decimal, LF or CRLF):

* validation.csv  ``role,n,correct`` with role in {sensitivity, specificity}
* main.csv        ``x,stratum`` (stratum column optional, may be empty)
* strata.csv      ``stratum,gamma``
* model.cfg       INI file with a ``[model]`` section, see :func:`read_model`
"""

from __future__ import annotations

import configparser
import csv
import io
import re
from pathlib import Path

import numpy as np

from seroprev.model import (
    InputError,
    Link,
    MainStudy,
    RegressionSpec,
    StratumTable,
    ValidationStudy,
)

LABEL_SEP = "|"


def _rows(path: str | Path, required: tuple[str, ...], optional: tuple[str, ...] = ()):
    """Yield (line number, row dict) after checking the header."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8-sig")
    except OSError as exc:
        raise InputError(f"{path}: {exc.strerror or exc}") from None
    except UnicodeDecodeError:
        raise InputError(f"{path}: not valid UTF-8") from None
    reader = csv.reader(io.StringIO(text, newline=""))
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise InputError(f"{path}: file is empty") from None
    missing = [c for c in required if c not in header]
    if missing:
        raise InputError(f"{path} line 1: missing column(s) {missing}; header is {header}")
    unknown = [c for c in header if c not in required + optional]
    if unknown:
        raise InputError(f"{path} line 1: unexpected column(s) {unknown}")
    for lineno, raw in enumerate(reader, start=2):
        if not raw or all(not c.strip() for c in raw):
            continue
        if len(raw) != len(header):
            raise InputError(f"{path} line {lineno}: expected {len(header)} fields, got {len(raw)}")
        yield lineno, {h: c.strip() for h, c in zip(header, raw)}


def _int(value: str, where: str) -> int:
    try:
        return int(value)
    except ValueError:
        raise InputError(f"{where}: expected an integer, got {value!r}") from None


def read_validation(path: str | Path) -> ValidationStudy:
    counts = {}
    for lineno, row in _rows(path, ("role", "n", "correct")):
        where = f"{path} line {lineno}"
        role = row["role"].lower()
        if role not in ("sensitivity", "specificity"):
            raise InputError(f"{where}: role must be 'sensitivity' or 'specificity', got {row['role']!r}")
        if role in counts:
            raise InputError(f"{where}: duplicate role {role!r}")
        n, correct = _int(row["n"], where), _int(row["correct"], where)
        if n < 1 or not 0 <= correct <= n:
            raise InputError(f"{where}: need n >= 1 and 0 <= correct <= n, got n={n}, correct={correct}")
        counts[role] = (n, correct)
    for role in ("sensitivity", "specificity"):
        if role not in counts:
            raise InputError(f"{path}: no {role!r} row")
    (n1, x1), (n2, x2) = counts["sensitivity"], counts["specificity"]
    return ValidationStudy(n1, x1, n2, x2)


def write_validation(v: ValidationStudy, path: str | Path) -> None:
    Path(path).write_text(
        f"role,n,correct\nsensitivity,{v.n_sens},{v.x_sens_pos}\n"
        f"specificity,{v.n_spec},{v.x_spec_neg}\n", encoding="utf-8")


def read_main(path: str | Path) -> MainStudy:
    records = []
    for lineno, row in _rows(path, ("x",), ("stratum",)):
        x = row["x"]
        if x not in ("0", "1"):
            raise InputError(f"{path} line {lineno}: x must be 0 or 1, got {x!r}")
        records.append((int(x), row.get("stratum") or None))
    if not records:
        raise InputError(f"{path}: no records")
    return MainStudy.from_records(records)


def write_main(m: MainStudy, path: str | Path) -> None:
    lines = ["x,stratum"] + [f"{x},{z or ''}" for x, z in m.records()]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_strata(path: str | Path) -> StratumTable:
    pairs = []
    for lineno, row in _rows(path, ("stratum", "gamma")):
        if not row["stratum"]:
            raise InputError(f"{path} line {lineno}: empty stratum label")
        try:
            g = float(row["gamma"])
        except ValueError:
            raise InputError(f"{path} line {lineno}: gamma must be a number, got {row['gamma']!r}") from None
        pairs.append((row["stratum"], g))
    if not pairs:
        raise InputError(f"{path}: no strata")
    try:
        return StratumTable.from_pairs(pairs)
    except InputError as exc:
        raise InputError(f"{path}: {exc}") from None


def write_strata(t: StratumTable, path: str | Path) -> None:
    lines = ["stratum,gamma"] + [f"{z},{g!r}" for z, g in zip(t.labels, t.gammas.tolist())]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


_TERM = re.compile(r"^[A-Za-z_][\w.-]*(:[A-Za-z_][\w.-]*)*$")


def design_from_formula(table: StratumTable, factors: list[str], terms: list[str],
                        link=Link.LOGIT) -> RegressionSpec:
    """Build a main-effects / interaction design over stratum-label components.

    Labels are split on ``|`` into one level per factor. Each factor is
    indicator coded against its first level (in stratum-table order); an
    interaction ``a:b`` contributes the products of the non-reference
    indicators of ``a`` and ``b``.
    """
    parts = []
    for z in table.labels:
        comps = z.split(LABEL_SEP)
        if len(comps) != len(factors):
            raise InputError(
                f"stratum {z!r} has {len(comps)} components but the model names "
                f"{len(factors)} factors {factors}")
        parts.append(comps)
    levels = {f: list(dict.fromkeys(p[i] for p in parts)) for i, f in enumerate(factors)}
    pos = {f: i for i, f in enumerate(factors)}

    columns = [np.ones(len(parts))]
    names = ["(Intercept)"]
    for term in terms:
        if not _TERM.match(term):
            raise InputError(f"malformed model term {term!r}")
        facs = term.split(":")
        for f in facs:
            if f not in pos:
                raise InputError(f"model term {term!r} uses unknown factor {f!r}; factors are {factors}")
        combos = [[]]
        for f in facs:
            combos = [c + [(f, lvl)] for c in combos for lvl in levels[f][1:]]
        for combo in combos:
            col = np.ones(len(parts))
            for f, lvl in combo:
                col *= np.array([p[pos[f]] == lvl for p in parts], dtype=float)
            columns.append(col)
            names.append(":".join(f"{f}[{lvl}]" for f, lvl in combo))
    H = np.column_stack(columns)
    return RegressionSpec.from_matrix(table.labels, H, link, names)


def read_model(path: str | Path, table: StratumTable) -> RegressionSpec:
    """Parse a model config::

        [model]
        link = logit
        factors = age, sex, province
        terms = age + sex + province + age:sex
    """
    cp = configparser.ConfigParser()
    try:
        if not cp.read(path, encoding="utf-8"):
            raise InputError(f"{path}: cannot read model config")
    except configparser.Error as exc:
        raise InputError(f"{path}: {exc}") from None
    if "model" not in cp:
        raise InputError(f"{path}: missing [model] section")
    sec = cp["model"]
    try:
        link = Link(sec.get("link", "logit").strip().lower())
    except ValueError:
        raise InputError(f"{path}: link must be 'logit' or 'probit', got {sec.get('link')!r}") from None
    factors = [f.strip() for f in sec.get("factors", "").split(",") if f.strip()]
    if not factors:
        raise InputError(f"{path}: 'factors' must list the stratum-label components")
    terms = [t.strip().replace(" ", "") for t in sec.get("terms", "").split("+") if t.strip()]
    try:
        return design_from_formula(table, factors, terms, link)
    except InputError as exc:
        raise InputError(f"{path}: {exc}") from None
