"""Command-line front end.

    linktrace simulate CONFIG --out DIR [--set key=value ...] [--threads T]
    linktrace estimate SAMPLE [--method U|C] [--bootstrap B] [options]
    linktrace validate CONFIG

Exit codes: 0 success, 2 configuration/input error, 3 I/O failure,
4 estimation failure.  All randomness flows from the configured master
seed; reruns with equal seeds produce byte-identical machine output.
"""
from __future__ import annotations

import argparse
import datetime
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .bootstrap import BootConfig, bootstrap_estimates
from .errors import ConfigError, LinktraceError
from .estimators import compute_estimates
from .fileio import (apply_overrides, config_hash, estimates_csv, load_population,
                     metrics_csv, metrics_text, parse_config, replicates_csv,
                     sample_from_jsonl, sample_to_jsonl, validate_config)
from .likelihood import FitOptions, fit_conditional, fit_unconditional
from .model import FrameGeometry, Portion
from .quadrature import make_rule
from .sampling import Population, observed_counts
from .simulation import PopulationKind, run_monte_carlo

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_ESTIMATION = 4


def _read_text(path: str) -> str:
    try:
        return Path(path).read_text()
    except OSError as exc:
        raise _IoFailure(f"cannot read {path}: {exc.strerror or exc}")


class _IoFailure(Exception):
    pass


def _load_config_doc(path: str) -> dict:
    text = _read_text(path)
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"not valid JSON: {exc.msg}", location=f"line {exc.lineno}")
    if not isinstance(doc, dict):
        raise ConfigError("configuration must be a JSON object")
    return doc


def cmd_simulate(args) -> int:
    doc = apply_overrides(_load_config_doc(args.config), args.set or [])
    resolved = validate_config(doc)
    config, threads = parse_config(resolved)
    if args.threads is not None:
        threads = args.threads

    population: Population | None = None
    if config.population.kind is PopulationKind.EXPLICIT_FILE:
        loaded = load_population(_read_text(config.population.path))
        if isinstance(loaded, Population):
            population = loaded
        else:
            from dataclasses import replace
            config = replace(config, population=loaded)

    report, rows, samples = run_monte_carlo(config, workers=threads,
                                            population=population)

    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        (out / "replicates.csv").write_text(replicates_csv(rows))
        (out / "metrics.csv").write_text(metrics_csv(report))
        (out / "metrics.txt").write_text(metrics_text(report))
        outputs = {
            "replicates": str(out / "replicates.csv"),
            "metrics_csv": str(out / "metrics.csv"),
            "metrics_text": str(out / "metrics.txt"),
        }
        if config.persist_samples:
            sample_dir = out / "samples"
            sample_dir.mkdir(exist_ok=True)
            for idx, sample in enumerate(samples):
                if sample is not None:
                    (sample_dir / f"rep_{idx:05d}.jsonl").write_text(
                        sample_to_jsonl(sample))
            outputs["samples"] = str(sample_dir)
        manifest = {
            "config_hash": config_hash(resolved),
            "master_seed": config.master_seed,
            "library_version": __version__,
            "created_utc": datetime.datetime.now(datetime.timezone.utc).isoformat(),
            "threads": threads,
            "overrides": list(args.set or []),
            "outputs": outputs,
        }
        (out / "manifest.json").write_text(json.dumps(manifest, indent=1) + "\n")
    except OSError as exc:
        raise _IoFailure(f"cannot write results under {out}: {exc.strerror or exc}")
    print(metrics_text(report), end="")
    print(f"wrote {out}/replicates.csv, metrics.csv, metrics.txt, manifest.json")
    return EXIT_OK


def _print_estimates(est) -> None:
    print(f"method {est.method}  (people sampled: frame portion {est.nu1}, "
          f"off-frame {est.nu2})")
    header = (f"{'estimator':<10}{'parameter':<10}{'variable':<12}{'value':>14}"
              f"{'sd':>12}{'95% CI':>30}")
    print(header)
    for (estimator, parameter, variable), rec in sorted(est.records.items()):
        if rec.missing:
            value, sd, ci = "missing", "", f"({rec.missing_reason})"
        else:
            value = f"{rec.value:.4f}"
            sd = "" if rec.sd is None else f"{rec.sd:.4f}"
            ci = "" if rec.ci is None else f"[{rec.ci.lower:.4f}, {rec.ci.upper:.4f}]"
        print(f"{estimator:<10}{parameter:<10}{variable:<12}{value:>14}{sd:>12}{ci:>30}")


def cmd_estimate(args) -> int:
    sample = sample_from_jsonl(_read_text(args.sample))
    geom = FrameGeometry(sample.n, sample.n_frame)
    counts = observed_counts(sample)
    opts = FitOptions(q=args.q)
    rule = make_rule(args.q)
    fitter = fit_conditional if args.method == "C" else fit_unconditional

    try:
        fit1 = fitter(counts, geom, Portion.U1, rule, opts)
    except LinktraceError as exc:
        print(f"estimation failed for the frame portion: "
              f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ESTIMATION
    fit2 = None
    fail2 = None
    if sample.r2 > 0:
        try:
            fit2 = fitter(counts, geom, Portion.U2, rule, opts)
        except LinktraceError as exc:
            fail2 = f"{type(exc).__name__}: {exc}"
    else:
        fail2 = "NonIdentifiable: no off-frame people were observed"

    if args.bootstrap > 0:
        config = BootConfig(B=args.bootstrap, alpha_level=args.alpha)
        rng = np.random.default_rng(np.random.SeedSequence([args.seed]))
        est = bootstrap_estimates(sample, fit1, fit2, geom, rule, config, rng,
                                  opts, fit2_failure=fail2)
    else:
        est = compute_estimates(sample, fit1, fit2, geom, rule, fit2_failure=fail2)

    _print_estimates(est)
    if args.out:
        try:
            Path(args.out).write_text(estimates_csv(est))
        except OSError as exc:
            raise _IoFailure(f"cannot write {args.out}: {exc.strerror or exc}")
        print(f"wrote {args.out}")
    return EXIT_OK


def cmd_validate(args) -> int:
    doc = apply_overrides(_load_config_doc(args.config), args.set or [])
    resolved = validate_config(doc)
    parse_config(resolved)
    print(json.dumps(resolved, indent=1, sort_keys=True))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="linktrace",
        description="Hidden-population size/total/mean estimation from "
                    "cluster + link-tracing samples")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run a replicated Monte Carlo experiment")
    sim.add_argument("config", help="JSON configuration file")
    sim.add_argument("--out", required=True, help="output directory")
    sim.add_argument("--set", action="append", metavar="PATH=VALUE",
                     help="override a config field (repeatable)")
    sim.add_argument("--threads", type=int, default=None,
                     help="worker processes (output is thread-count invariant)")
    sim.set_defaults(func=cmd_simulate)

    estp = sub.add_parser("estimate", help="estimate from one realized sample file")
    estp.add_argument("sample", help="sample file (JSON Lines)")
    estp.add_argument("--method", choices=["U", "C"], default="U",
                      help="fit family: joint (U) or conditional (C)")
    estp.add_argument("--bootstrap", type=int, default=0, metavar="B",
                      help="bootstrap replicates for SDs and CIs (0 = off)")
    estp.add_argument("--alpha", type=float, default=0.05,
                      help="CI significance level")
    estp.add_argument("--seed", type=int, default=0, help="bootstrap master seed")
    estp.add_argument("--q", type=int, default=15, help="quadrature nodes")
    estp.add_argument("--out", help="also write a CSV of the estimates")
    estp.set_defaults(func=cmd_estimate)

    val = sub.add_parser("validate", help="schema-check a configuration file")
    val.add_argument("config", help="JSON configuration file")
    val.add_argument("--set", action="append", metavar="PATH=VALUE")
    val.set_defaults(func=cmd_validate)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except _IoFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except LinktraceError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ESTIMATION


if __name__ == "__main__":
    sys.exit(main())
