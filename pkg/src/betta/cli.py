"""Command line front end: ``betta estimate | fit | simulate``.

Exit codes: 0 success, 1 data or model error, 2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import json
import sys
from pathlib import Path

from betta import __version__
from betta.design import DesignMatrix, read_covariates
from betta.errors import BettaError, ModelError
from betta.estimators import estimate_chao, estimate_ztnb, load_external_estimates
from betta.frequency import from_abundances, parse_abundances, parse_frequency_table
from betta.inference import fit
from betta.report import fit_report
from betta.simulation import NbConfig, run_normality_study, run_q_calibration

METHODS = {"ztnb": estimate_ztnb, "chao": estimate_chao}
SIM_ESTIMATORS = {"ztnb": "ztnb-mle", "chao": "chao-type"}


def _g(x) -> str:
    return f"{x:.6g}"


def write_manifest(out: Path, command: str, argv, inputs, seed=None, outputs=(), errors=()):
    manifest = {
        "command": command,
        "argv": list(argv),
        "inputs": [str(p) for p in inputs],
        "output_dir": str(out),
        "outputs": sorted(Path(p).name for p in outputs),
        "seed": seed,
        "tool_version": __version__,
        "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
        "errors": list(errors),
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2) + "\n")
    return path


# ---------------------------------------------------------------------------
# estimate
# ---------------------------------------------------------------------------


def _estimate_file(path: Path, method: str, abundances: bool):
    sid = path.stem
    with path.open() as fh:
        if method == "external":
            return load_external_estimates(fh, source=str(path))
        if abundances:
            table = from_abundances(parse_abundances(fh, sample_id=sid), sample_id=sid)
        else:
            table = parse_frequency_table(fh, sample_id=sid)
    return [METHODS[method](table)]


def cmd_estimate(args, argv) -> int:
    rows, errors = [], []
    for name in args.inputs:
        path = Path(name)
        try:
            rows.extend(_estimate_file(path, args.method, args.abundances))
        except (BettaError, OSError) as exc:
            errors.append(f"{path}: {exc}")
            print(f"error: {path}: {exc}", file=sys.stderr)
            if not args.keep_going:
                return 1
    if not rows:
        return 1

    header = ["sample_id", "c_obs", "c_hat", "se", "method", "warnings"]
    body = [
        [e.sample_id, "" if e.c_obs is None else e.c_obs, _g(e.c_hat), _g(e.se), e.method, ";".join(e.flags)]
        for e in rows
    ]
    if args.out is None:
        w = csv.writer(sys.stdout, lineterminator="\n")
        w.writerow(header)
        w.writerows(body)
        return 0
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    target = out / "estimates.csv"
    with target.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(body)
    write_manifest(out, "estimate", argv, args.inputs, outputs=[target], errors=errors)
    print(f"wrote {len(rows)} estimate(s) to {target}")
    return 0


# ---------------------------------------------------------------------------
# fit
# ---------------------------------------------------------------------------


def cmd_fit(args, argv) -> int:
    with open(args.estimates) as fh:
        estimates = load_external_estimates(fh, source=args.estimates)
    excluded = list(args.exclude or [])
    unknown = [x for x in excluded if x not in {e.sample_id for e in estimates}]
    if unknown:
        raise ModelError(f"--exclude names unknown samples: {unknown}")
    estimates = [e for e in estimates if e.sample_id not in set(excluded)]
    ids = [e.sample_id for e in estimates]
    levels = {}
    inputs = [args.estimates]
    if args.covariates:
        inputs.append(args.covariates)
        terms = [t.strip() for t in args.terms.split(",") if t.strip()] if args.terms else None
        with open(args.covariates) as fh:
            design, levels = read_covariates(fh, terms=terms, source=args.covariates)
        design = design.drop_rows([x for x in excluded if x in (design.row_ids or ())])
        design = design.reorder(ids)
    else:
        design = DesignMatrix.intercept_only(ids)

    model = fit(estimates, design, tol=args.tol, max_iter=args.max_iter)
    report = fit_report(
        model, estimates, excluded=excluded, levels=levels, tol=args.tol, max_iter=args.max_iter,
        interval_threshold=args.interval_threshold,
    )

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    outputs = [out / "fit_report.json", out / "blup.csv", out / "intervals.csv"]
    outputs[0].write_text(json.dumps(report, indent=2) + "\n")
    with outputs[1].open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        cols = ["sample_id", "c_hat", "se", "fitted", "u_star", "c_star", "var_c_star"]
        w.writerow(cols)
        for r in report["blup"]:
            w.writerow([r["sample_id"]] + [_g(r[c]) for c in cols[1:]])
    with outputs[2].open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sample_id", "lower", "center", "upper", "flagged"])
        for r in report["intervals"]:
            w.writerow([r["sample_id"], _g(r["lower"]), _g(r["center"]), _g(r["upper"]), int(r["flagged"])])
    write_manifest(out, "fit", argv, inputs, outputs=outputs)
    _print_fit_summary(report)
    return 0


def _print_fit_summary(report):
    print(f"{'term':<24} {'estimate':>12} {'se':>12} {'z':>12} {'p':>12}")
    for c in report["coefficients"]:
        cells = " ".join(f"{_g(c[k]):>12}" for k in ("estimate", "se", "z", "p_value"))
        print(f"{c['name']:<24} {cells}")
    print(f"sigma2_u = {_g(report['sigma2_u'])}")
    q = report["homogeneity_test"]
    if q is not None:
        print(f"Q = {_g(q['statistic'])} on {q['df']} df, p = {_g(q['p_value'])}")
    g = report["global_test"]
    if g is not None:
        print(f"global chi2 = {_g(g['statistic'])} on {g['df']} df, p = {_g(g['p_value'])}")
    for note in report["notices"]:
        print(f"note: {note}")


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------

_SIM_DEFAULTS = {
    "size": 500.0,
    "prob": 0.99,
    "n_species": 5000,
    "seed": 0,
    "replicates": 1000,
    "groups": 500,
    "group_size": 20,
    "estimator": "ztnb",
    "bypass": False,
    "bypass_se": None,
    "workers": 1,
}


def cmd_simulate(args, argv, parser) -> int:
    settings = dict(_SIM_DEFAULTS)
    if args.config:
        try:
            with open(args.config) as fh:
                loaded = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            parser.error(f"cannot read config: {exc}")
        unknown = set(loaded) - set(_SIM_DEFAULTS) - {"study"}
        if unknown:
            parser.error(f"unknown config keys: {sorted(unknown)}")
        settings.update(loaded)
    for key in list(_SIM_DEFAULTS) + ["study"]:
        value = getattr(args, key, None)
        if value is not None and not (key == "bypass" and value is False):
            settings[key] = value
    study = settings.get("study")
    if study not in ("normality", "q-calibration"):
        parser.error("the following arguments are required: --study {normality,q-calibration}")
    if settings["estimator"] not in SIM_ESTIMATORS:
        parser.error(f"invalid estimator {settings['estimator']!r}")
    try:
        cfg = NbConfig(float(settings["size"]), float(settings["prob"]), int(settings["n_species"]),
                       int(settings["seed"]))
        estimator = SIM_ESTIMATORS[settings["estimator"]]
        if study == "normality":
            report = run_normality_study(cfg, int(settings["replicates"]), estimator, int(settings["workers"]))
        else:
            report = run_q_calibration(
                cfg, int(settings["groups"]), int(settings["group_size"]), estimator,
                bypass=bool(settings["bypass"]), bypass_se=settings["bypass_se"],
                workers=int(settings["workers"]),
            )
    except ValueError as exc:
        parser.error(str(exc))
    out = Path(args.out)
    outputs = report.write(out)
    inputs = [args.config] if args.config else []
    write_manifest(out, "simulate", argv, inputs, seed=cfg.seed, outputs=outputs)
    s = report.summary
    print(
        f"{study}: {s['n_recorded']}/{s['n_requested']} recorded, mean {_g(s['mean'])}, sd {_g(s['sd'])}, "
        f"KS {_g(s['ks_distance'])}, rejection rate {_g(s['rejection_rate'])}"
    )
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="betta", description="Inference for total species richness.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    pe = sub.add_parser("estimate", help="richness estimates from frequency-count files")
    pe.add_argument("inputs", nargs="+", help="frequency-count files (j,f_j per line)")
    pe.add_argument("--method", choices=["ztnb", "chao", "external"], default="ztnb")
    pe.add_argument("--abundances", action="store_true", help="inputs hold one abundance per line")
    pe.add_argument("--out", help="output directory (default: CSV to stdout)")
    pe.add_argument("--keep-going", action="store_true", help="skip files that fail")

    pf = sub.add_parser("fit", help="fit the richness model and run all tests")
    pf.add_argument("estimates", help="CSV with sample_id,c_hat,se[,c_obs]")
    pf.add_argument("--covariates", help="CSV with sample_id,<covariates...>")
    pf.add_argument("--terms", help="comma-separated covariate columns to use (default: all)")
    pf.add_argument("--exclude", action="append", metavar="ID", help="drop a sample before fitting")
    pf.add_argument("--out", required=True)
    pf.add_argument("--tol", type=float, default=1e-8)
    pf.add_argument("--max-iter", type=int, default=1000)
    pf.add_argument("--interval-threshold", type=float, default=0.1,
                    help="flag intervals narrower than this fraction of the median width")

    ps = sub.add_parser("simulate", help="Monte-Carlo calibration studies")
    ps.add_argument("--study", choices=["normality", "q-calibration"])
    ps.add_argument("--config", help="JSON file with study settings; flags override it")
    ps.add_argument("--out", required=True)
    ps.add_argument("--size", type=float)
    ps.add_argument("--prob", type=float)
    ps.add_argument("--n-species", dest="n_species", type=int)
    ps.add_argument("--seed", type=int)
    ps.add_argument("--replicates", type=int)
    ps.add_argument("--groups", type=int)
    ps.add_argument("--group-size", dest="group_size", type=int)
    ps.add_argument("--estimator", choices=sorted(SIM_ESTIMATORS))
    ps.add_argument("--bypass", action="store_true", help="draw c_hat ~ N(C, se^2) instead of estimating")
    ps.add_argument("--bypass-se", dest="bypass_se", type=float)
    ps.add_argument("--workers", type=int)
    ps.set_defaults(subparser=ps)
    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "estimate":
            return cmd_estimate(args, argv)
        if args.command == "fit":
            return cmd_fit(args, argv)
        return cmd_simulate(args, argv, args.subparser)
    except (BettaError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
