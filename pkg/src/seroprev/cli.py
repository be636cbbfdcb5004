"""Command line front end.

    seroprev estimate validation.csv main.csv [--strata strata.csv] [--model model.cfg]
    seroprev simulate config.cfg [--out DIR] [--threads N] [--seed S]
    seroprev oracle {rg,srg,srgm} [--seed S] [--n N] [--design ...]

Exit codes: 0 success, 2 input error, 3 numeric failure, 4 degenerate assay.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import io
import json
import logging
import math
import sys
from importlib import resources
from pathlib import Path

from seroprev import __version__, fileio, oracle, simulation
from seroprev.analysis import analyze_rg, analyze_srg, analyze_srgm
from seroprev.estimators import naive_prevalence
from seroprev.model import (
    DegenerateAssayError,
    InputError,
    Method,
    NumericalError,
    SeroprevError,
)

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC, EXIT_ASSAY = 0, 2, 3, 4

log = logging.getLogger("seroprev")


def exit_code(exc: BaseException) -> int:
    if isinstance(exc, DegenerateAssayError):
        return EXIT_ASSAY
    if isinstance(exc, NumericalError):
        return EXIT_NUMERIC
    return EXIT_INPUT


def fmt(x, digits: int = 6) -> str:
    if x is None:
        return "-"
    if isinstance(x, float):
        if math.isnan(x):
            return "nan"
        return f"{x:.{digits}g}"
    return str(x)


def _table(headers: list[str], rows: list[list]) -> str:
    cells = [headers] + [[fmt(c) for c in r] for r in rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(headers))]
    lines = ["  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in cells]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines)


def bundled(name: str) -> Path:
    """Path of a file shipped under seroprev/data."""
    return Path(str(resources.files("seroprev").joinpath("data", name)))


def _resolve(path: str, subdir: str = "") -> Path:
    p = Path(path)
    if p.exists():
        return p
    candidate = bundled(subdir + path if subdir else path)
    return candidate if candidate.exists() else p


# ---------------------------------------------------------------- estimate

ESTIMATE_COLUMNS = ["method", "point", "ci_low", "ci_high", "point_raw", "variance", "flags"]


def cmd_estimate(args) -> int:
    if args.example:
        root = bundled(f"examples/{args.example}")
        if not root.is_dir():
            raise InputError(f"no bundled example {args.example!r}")
        args.validation = args.validation or str(root / "validation.csv")
        args.main = args.main or str(root / "main.csv")
        if args.strata is None and (root / "strata.csv").exists():
            args.strata = str(root / "strata.csv")
        if args.model is None and (root / "model.cfg").exists():
            args.model = str(root / "model.cfg")
    if not (args.validation and args.main):
        raise InputError("estimate needs validation.csv and main.csv (or --example NAME)")
    v = fileio.read_validation(args.validation)
    m = fileio.read_main(args.main)
    table = fileio.read_strata(args.strata) if args.strata else None
    spec = fileio.read_model(args.model, table) if args.model else None
    if spec is not None and table is None:
        raise InputError("--model requires --strata")
    if table is not None and m.has_missing_strata:
        raise InputError(f"{args.main}: standardization needs a stratum on every record")

    truncate = not args.no_truncate_plugin
    estimates, errors = {}, {}
    runners = [
        (Method.NAIVE, lambda: naive_prevalence(m, args.level)),
        (Method.RG, lambda: analyze_rg(v, m, args.level, truncate)),
    ]
    if table is not None:
        runners.append((Method.SRG, lambda: analyze_srg(v, m, table, args.level, truncate)))
        if spec is not None:
            runners.append((Method.SRGM,
                            lambda: analyze_srgm(v, m, table, spec, args.level, truncate)))
    first_error = None
    for method, run in runners:
        try:
            estimates[method] = run()
        except InputError:
            raise
        except SeroprevError as exc:
            errors[method] = f"{type(exc).__name__}: {exc}"
            first_error = first_error or exc

    srg_est = estimates.get(Method.SRG)
    if srg_est is not None and srg_est.dropped_strata:
        print(f"warning: {len(srg_est.dropped_strata)} unsampled strata dropped for SRG "
              f"(restricted target population): {', '.join(srg_est.dropped_strata)}",
              file=sys.stderr)

    report = {
        "inputs": {
            "validation": v.to_dict(),
            "n_main": m.n,
            "positives": m.positives,
            "strata": table.k if table else None,
            "model_terms": list(spec.term_names) if spec else None,
            "level": args.level,
            "truncate_plugin": truncate,
        },
        "estimates": {k.value: e.to_dict() for k, e in estimates.items()},
        "errors": {k.value: msg for k, msg in errors.items()},
    }
    rows = [[e.method.value, e.point, e.ci_low, e.ci_high, e.point_raw, e.variance,
             ",".join(sorted(e.flags))] for e in estimates.values()]
    _emit(args, report, ESTIMATE_COLUMNS, rows, "estimates")
    for method, msg in errors.items():
        print(f"error: {method.value} failed: {msg}", file=sys.stderr)
    return exit_code(first_error) if first_error else EXIT_OK


def _csv_text(headers, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(headers)
    for r in rows:
        w.writerow(["" if c is None else (repr(c) if isinstance(c, float) else c) for c in r])
    return buf.getvalue()


def _emit(args, report: dict, headers, rows, stem: str) -> None:
    text_json = json.dumps(report, indent=2)
    if args.format == "json":
        print(text_json)
    elif args.format == "csv":
        sys.stdout.write(_csv_text(headers, rows))
    else:
        print(_table(headers, rows))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"{stem}.json").write_text(text_json + "\n", encoding="utf-8")
        (out / f"{stem}.csv").write_text(_csv_text(headers, rows), encoding="utf-8")


# ---------------------------------------------------------------- simulate

SIM_KEYS = {"dgp", "pi", "sigma_e", "sigma_p", "n1", "n2", "n3", "replicates", "seed",
            "estimators", "level", "truncate_plugin"}


def read_sim_config(path: str | Path) -> simulation.SimulationConfig:
    """Parse a ``[simulation]`` INI file into a SimulationConfig."""
    cp = configparser.ConfigParser()
    try:
        if not cp.read(path, encoding="utf-8"):
            raise InputError(f"{path}: cannot read simulation config")
    except configparser.Error as exc:
        raise InputError(f"{path}: {exc}") from None
    if "simulation" not in cp:
        raise InputError(f"{path}: missing [simulation] section")
    sec = cp["simulation"]
    unknown = set(sec) - SIM_KEYS
    if unknown:
        raise InputError(f"{path}: unknown field(s) {sorted(unknown)}")

    def floats(key):
        try:
            return tuple(float(x) for x in sec[key].split(",") if x.strip())
        except KeyError:
            raise InputError(f"{path}: missing field {key!r}") from None
        except ValueError:
            raise InputError(f"{path}: field {key!r} must be a comma-separated list of numbers") from None

    def integer(key, default):
        try:
            return int(sec.get(key, str(default)))
        except ValueError:
            raise InputError(f"{path}: field {key!r} must be an integer") from None

    try:
        dgp = simulation.DGP(sec.get("dgp", "").strip().upper())
    except ValueError:
        raise InputError(
            f"{path}: field 'dgp' has unknown value {sec.get('dgp')!r}; "
            f"expected one of {[d.value for d in simulation.DGP]}") from None
    try:
        ests = tuple(Method(e.strip()) for e in sec.get("estimators", "").split(",") if e.strip())
    except ValueError:
        raise InputError(f"{path}: field 'estimators' must list RG, SRG and/or SRGM") from None
    try:
        return simulation.SimulationConfig(
            dgp=dgp, pi_grid=floats("pi"), sigma_e_grid=floats("sigma_e"),
            sigma_p_grid=floats("sigma_p"), n1=integer("n1", 40), n2=integer("n2", 250),
            n3=integer("n3", 2500), replicates=integer("replicates", 1000),
            master_seed=integer("seed", 20220101), estimators=ests,
            level=float(sec.get("level", "0.95")),
            truncate_plugin=sec.getboolean("truncate_plugin", True),
        )
    except InputError as exc:
        raise InputError(f"{path}: {exc}") from None


SUMMARY_COLUMNS = ["dgp", "pi", "sigma_e", "sigma_p", "estimator", "mean_bias", "coverage",
                   "heywood_count", "nonpositivity_fraction", "failures"]


def cmd_simulate(args) -> int:
    cfg = read_sim_config(_resolve(args.config))
    overrides = {}
    if args.seed is not None:
        overrides["master_seed"] = args.seed
    if args.replicates is not None:
        overrides["replicates"] = args.replicates
    if args.no_truncate_plugin:
        overrides["truncate_plugin"] = False
    if overrides:
        from dataclasses import replace

        cfg = replace(cfg, **overrides)
    results = simulation.run(cfg, workers=args.threads)
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    path = simulation.write_csv(results, out / "results.csv")
    rows = [[r[c] for c in SUMMARY_COLUMNS] for r in simulation.result_rows(results)]
    report = {"config": str(args.config), "results_csv": str(path),
              "rows": simulation.result_rows(results)}
    args_out = args.out
    args.out = None  # results.csv already written
    _emit(args, report, SUMMARY_COLUMNS, rows, "summary")
    args.out = args_out
    print(f"wrote {path}", file=sys.stderr)
    skipped = [r for r in results if r.skipped]
    for r in skipped:
        print(f"error: scenario pi={r.scenario.pi} sigma_e={r.scenario.sigma_e} "
              f"sigma_p={r.scenario.sigma_p} skipped: {r.skipped}", file=sys.stderr)
    return EXIT_INPUT if skipped else EXIT_OK


# ---------------------------------------------------------------- oracle

ORACLE_COLUMNS = ["stack", "design", "seed", "n", "analytic", "numeric", "rel_discrepancy",
                  "reference"]


def cmd_oracle(args) -> int:
    seeds = range(args.seed, args.seed + args.repeat)
    reports = [oracle.compare(args.stack, s, args.n, args.design) for s in seeds]
    rows = [[r.stack, r.design, r.seed, r.n, r.analytic, r.numeric, r.rel_discrepancy,
             r.reference] for r in reports]
    worst = max(r.rel_discrepancy for r in reports)
    report = {"reports": [r.to_dict() for r in reports], "max_rel_discrepancy": worst,
              "tolerance": args.tol, "pass": worst < args.tol}
    _emit(args, report, ORACLE_COLUMNS, rows, "oracle")
    if args.format == "table":
        print(f"max relative discrepancy {fmt(worst)} (tolerance {fmt(args.tol)}): "
              f"{'PASS' if worst < args.tol else 'FAIL'}")
    return EXIT_OK if worst < args.tol else EXIT_NUMERIC


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--format", choices=("table", "json", "csv"), default="table")
    common.add_argument("--out", metavar="DIR", help="also write reports into DIR")
    common.add_argument("--level", type=float, default=0.95, help="confidence level")
    common.add_argument("--no-truncate-plugin", action="store_true",
                        help="plug the untruncated point estimate into the variance")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="seroprev", description=__doc__.split("\n")[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    e = sub.add_parser("estimate", parents=[common], help="estimate prevalence from CSV inputs")
    e.add_argument("validation", nargs="?", help="validation.csv (role,n,correct)")
    e.add_argument("main", nargs="?", help="main.csv (x,stratum)")
    e.add_argument("--strata", help="strata.csv (stratum,gamma)")
    e.add_argument("--model", help="model.cfg for the model-based estimator")
    e.add_argument("--example", help="use a bundled example (screennc, belgium_synthetic)")
    e.set_defaults(func=cmd_estimate)

    s = sub.add_parser("simulate", parents=[common], help="run a Monte Carlo config")
    s.add_argument("config", help="simulation .cfg file (or the name of a bundled one)")
    s.add_argument("--seed", type=int, help="override the master seed")
    s.add_argument("--threads", type=int, default=1, help="worker processes")
    s.add_argument("--replicates", type=int, help="override the replicate count")
    s.set_defaults(func=cmd_simulate)

    o = sub.add_parser("oracle", parents=[common],
                       help="compare analytic variances with the numeric sandwich")
    o.add_argument("stack", choices=oracle.STACKS)
    o.add_argument("--seed", type=int, default=0)
    o.add_argument("--n", type=int, default=100_000)
    o.add_argument("--design", choices=oracle.DESIGNS, default="model",
                   help="regression design for the srgm stack")
    o.add_argument("--repeat", type=int, default=1, help="number of consecutive seeds")
    o.add_argument("--tol", type=float, default=1e-4)
    o.set_defaults(func=cmd_oracle)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    if not 0.0 < args.level < 1.0:
        print("error: --level must lie in (0, 1)", file=sys.stderr)
        return EXIT_INPUT
    try:
        return args.func(args)
    except SeroprevError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exit_code(exc)


if __name__ == "__main__":
    sys.exit(main())
