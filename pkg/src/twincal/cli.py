"""Command-line entry point: ``twincal {simulate,calibrate,predict,sweep}``.

Exit codes: 0 success, 2 configuration error, 3 acceptance failure (an
estimator's mean misses the true efficiency by more than 3 standard errors).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import yaml

from . import __version__
from .calib import ESTIMATORS
from .config import Sweep, load_spec
from .errors import ConfigError
from .analytic import predict
from .harness import classify, estimate_all, replication_rngs, report, result_dict, run, simulate, summary_csv
from .corr import autocorrelation, cross_correlation

EXIT_OK, EXIT_CONFIG, EXIT_ACCEPTANCE = 0, 2, 3

log = logging.getLogger("twincal")


def _global(p: argparse.ArgumentParser, sub: bool) -> None:
    # accepted before or after the subcommand; the subcommand copy only overrides when given
    def kw(default):
        return {"default": argparse.SUPPRESS if sub else default}

    p.add_argument("--seed", type=int, help="override master_seed", **kw(None))
    p.add_argument("--jobs", type=int, help="worker processes (default 1)", **kw(1))
    p.add_argument("--out", type=Path, help="output directory (default: output_dir from config)", **kw(None))
    p.add_argument("--format", choices=("csv", "json"), help="stdout format (default csv)", **kw("csv"))
    p.add_argument("-q", "--quiet", action="store_true", **kw(False))


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", required=True, type=Path, help="experiment YAML/JSON file")
    _global(p, sub=True)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="twincal", description="Twin-beam detector efficiency calibration.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    _global(ap, sub=False)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate one record and write traces and correlation functions")
    _common(p)
    p.add_argument("--traces-out", type=Path, help="directory for trace_<k>.csv and corr_<kind>.csv")

    p = sub.add_parser("calibrate", help="run the estimators over all replications")
    _common(p)
    p.add_argument("--estimators", help=f"comma-separated subset of {','.join(ESTIMATORS)}")

    p = sub.add_parser("predict", help="analytic predictions only (no simulation)")
    _common(p)

    p = sub.add_parser("sweep", help="sweep one parameter")
    _common(p)
    p.add_argument("--param", required=True, help="dotted parameter path, e.g. detector2.eta")
    p.add_argument("--values", required=True, help="comma-separated values")
    return ap


def _parse_values(text: str) -> list:
    out = []
    for item in text.split(","):
        item = item.strip()
        if not item:
            continue
        for conv in (int, float):
            try:
                out.append(conv(item))
                break
            except ValueError:
                pass
        else:
            out.append(yaml.safe_load(item))
    if not out:
        raise ConfigError("--values", "no values given")
    return out


def _load(args):
    spec = load_spec(args.config)
    changes = {}
    if args.seed is not None:
        changes["master_seed"] = args.seed
    if args.out is not None:
        changes["output_dir"] = str(args.out)
    if getattr(args, "estimators", None):
        changes["estimators"] = tuple(s.strip() for s in args.estimators.split(",") if s.strip())
    if args.command == "sweep":
        changes["sweep"] = Sweep(args.param, tuple(_parse_values(args.values)))
    spec = replace(spec, **changes) if changes else spec
    spec.points()  # validates sweep paths and values
    if args.jobs < 1:
        raise ConfigError("--jobs", "must be >= 1")
    return spec


def _emit(result, fmt: str) -> None:
    if fmt == "json":
        print(json.dumps(result_dict(result)["points"], indent=2))
    else:
        sys.stdout.write(summary_csv(result))


def cmd_run(args) -> int:
    spec = _load(args)
    result = run(spec, jobs=args.jobs)
    paths = report(result)
    for p, warns in enumerate(result.warnings):
        for w in warns:
            log.warning("point %d: %s", p, w)
    if not args.quiet:
        _emit(result, args.format)
    log.info("wrote %s and %s", paths["summary"], paths["reports"])
    return EXIT_OK if result.passed else EXIT_ACCEPTANCE


def cmd_simulate(args) -> int:
    spec = _load(args)
    out = Path(args.traces_out or spec.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    _, point_spec = spec.points()[0]
    sim = simulate(point_spec, replication_rngs(point_spec.master_seed, 0, 0))
    sim.trace1.to_csv(out / "trace_1.csv")
    sim.trace2.to_csv(out / "trace_2.csv")
    regime = classify(point_spec).regime
    reports, corr, errors = estimate_all(point_spec, sim, regime)
    corr.setdefault("cross12", cross_correlation(sim.trace1, sim.trace2, sim.max_lag, sim.n_blocks))
    corr.setdefault("auto11", autocorrelation(sim.trace1, sim.max_lag, sim.n_blocks, "auto11"))
    corr.setdefault("auto22", autocorrelation(sim.trace2, sim.max_lag, sim.n_blocks, "auto22"))
    for kind, c in corr.items():
        c.to_csv(out / f"corr_{kind}.csv")
    payload = {"regime": regime, "n_samples": len(sim.trace1), "n_blocks": sim.n_blocks,
               "n_pair_cells": len(sim.frames), "reports": [r.to_dict() if r else None for r in reports],
               "errors": errors, "files": sorted(p.name for p in out.glob("*.csv"))}
    (out / "simulation.json").write_text(json.dumps(payload, indent=2, default=str) + "\n")
    if not args.quiet:
        print(json.dumps(payload, indent=2, default=str) if args.format == "json"
              else "\n".join(payload["files"]))
    return EXIT_OK


def cmd_predict(args) -> int:
    spec = _load(args)
    rows = []
    for value, ps in spec.points():
        pred = predict(ps.source, ps.detector1, ps.detector2)
        info = classify(ps)
        d = pred.to_dict()
        rows.append({"sweep_value": value, "regime": info.regime, "I_tau_p": info.I_tau_p, **d})
    out = Path(spec.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "prediction.json").write_text(json.dumps(rows, indent=2, default=str) + "\n")
    if args.quiet:
        return EXIT_OK
    if args.format == "json":
        print(json.dumps(rows, indent=2, default=str))
    else:
        keys = ["sweep_value", "regime", "I_tau_p", "flux", "j4", "mean_i1", "mean_i2", "integral_cross",
                "ff_ratio", "counting_sq", "twomode_integral_ratio"]
        print(",".join(keys))
        for r in rows:
            print(",".join("" if r[k] is None else (format(r[k], ".17g") if isinstance(r[k], float) else str(r[k]))
                           for k in keys))
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.ERROR if args.quiet else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    handler = {"simulate": cmd_simulate, "calibrate": cmd_run, "sweep": cmd_run, "predict": cmd_predict}
    try:
        return handler[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
