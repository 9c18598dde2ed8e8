"""File formats: populations (JSON), realized samples (JSON Lines),
run configuration (JSON), and CSV/plain-text result emission.

All numeric output uses '.' decimals and 17 significant digits in
machine files, so round-trips are bit-exact and independent of locale.
"""
from __future__ import annotations

import hashlib
import io
import json
import math
from typing import Any

import numpy as np

from .bootstrap import BootConfig, RegressionMode
from .errors import ConfigError, InvalidArgument
from .likelihood import FitOptions
from .quadrature import LinkPattern
from .sampling import ExplicitLinks, LtsSample, PersonRecord, Population, Stratum
from .simulation import (McConfig, McMetricRow, McReport, PopulationKind,
                         PopulationSpec, ReplicateRecord)

__all__ = [
    "save_population", "load_population",
    "sample_to_jsonl", "sample_from_jsonl",
    "parse_config", "validate_config", "apply_overrides", "config_hash",
    "replicates_csv", "metrics_csv", "metrics_text", "estimates_csv",
]

_FMT = ".17g"


def _num(v: float | None) -> str:
    if v is None:
        return ""
    return format(float(v), _FMT)


# --------------------------------------------------------------------------
# population files

def save_population(pop: Population) -> str:
    """Serialize an explicit-link population to its JSON form."""
    if not isinstance(pop.links1, ExplicitLinks) or not isinstance(pop.links2, ExplicitLinks):
        raise InvalidArgument("only explicit-link populations have a file form")
    doc = {
        "format": "lts-population",
        "version": 1,
        "n_frame": pop.n_frame,
        "venue_sizes": pop.venue_sizes.tolist(),
        "y1": {var: pair[0].tolist() for var, pair in pop.y.items()},
        "y2": {var: pair[1].tolist() for var, pair in pop.y.items()},
        "x1": pop.links1.x.tolist(),
        "x2": pop.links2.x.tolist(),
    }
    return json.dumps(doc, indent=1)


def load_population(text: str) -> Population | PopulationSpec:
    """Parse a population file: explicit matrices give a Population,
    a generator block gives the spec to synthesize one from."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"not valid JSON: {exc.msg}", location=f"line {exc.lineno}")
    if not isinstance(doc, dict):
        raise ConfigError("population file must be a JSON object")
    if "generator" in doc:
        return _generator_spec(doc["generator"])
    for key in ("n_frame", "venue_sizes", "y1", "y2", "x1", "x2"):
        if key not in doc:
            raise ConfigError("missing required field", location=key)
    sizes = np.asarray(doc["venue_sizes"], dtype=np.int64)
    if int(doc["n_frame"]) != sizes.shape[0]:
        raise ConfigError("n_frame disagrees with venue_sizes length", location="n_frame")
    y1, y2 = doc["y1"], doc["y2"]
    if not isinstance(y1, dict):
        y1, y2 = {"y": y1}, {"y": y2}
    if set(y1) != set(y2):
        raise ConfigError("y1 and y2 must carry the same variables", location="y2")
    y = {var: (np.asarray(y1[var], dtype=float), np.asarray(y2[var], dtype=float))
         for var in sorted(y1)}
    try:
        return Population(
            venue_sizes=sizes, y=y,
            links1=ExplicitLinks(np.asarray(doc["x1"])),
            links2=ExplicitLinks(np.asarray(doc["x2"])))
    except InvalidArgument as exc:
        raise ConfigError(str(exc))


_GENERATOR_FIELDS = {
    "kind", "n_frame", "size_mean", "size_var", "tau2", "link_scale",
    "chi2_gain", "bernoulli_gain", "class_intercept", "class_effects",
    "interaction_sd", "class_probs",
}


def _generator_spec(block: Any, location: str = "generator") -> PopulationSpec:
    if not isinstance(block, dict):
        raise ConfigError("generator block must be an object", location=location)
    kind = block.get("kind")
    if kind == "additive":
        spec = PopulationSpec.additive()
    elif kind == "latent_class":
        spec = PopulationSpec.latent_class()
    else:
        raise ConfigError(f"unknown generator kind {kind!r} "
                          "(expected 'additive' or 'latent_class')",
                          location=f"{location}.kind")
    updates = {}
    for key, value in block.items():
        if key == "kind":
            continue
        if key not in _GENERATOR_FIELDS:
            raise ConfigError(f"unknown key {key!r}", location=f"{location}.{key}")
        if key in ("n_frame", "tau2"):
            updates[key] = int(value)
        elif key in ("size_mean", "size_var", "interaction_sd"):
            updates[key] = float(value)
        else:
            if not (isinstance(value, list) and len(value) == 2):
                raise ConfigError("expected a pair [frame value, off-frame value]",
                                  location=f"{location}.{key}")
            updates[key] = (float(value[0]), float(value[1]))
    from dataclasses import replace
    return replace(spec, **updates)


# --------------------------------------------------------------------------
# sample files (JSON Lines: header line, then one person per line)

def sample_to_jsonl(sample: LtsSample) -> str:
    header = {
        "format": "lts-sample",
        "version": 1,
        "n_frame": sample.n_frame,
        "venues": [[int(v), int(m)] for v, m in
                   zip(sample.selected_venues, sample.venue_sizes_sampled)],
        "variables": list(sample.variables),
    }
    lines = [json.dumps(header)]
    for p in sample.persons:
        rec: dict[str, Any] = {"stratum": p.stratum.value}
        if p.venue_slot is not None:
            rec["venue_slot"] = p.venue_slot
        rec["pattern"] = "".join(str(int(b)) for b in p.pattern.bits)
        ys = {var: p.y[var] for var in sample.variables}
        rec["y"] = ys[sample.variables[0]] if len(sample.variables) == 1 else ys
        lines.append(json.dumps(rec))
    return "\n".join(lines) + "\n"


def _parse_pattern(text: Any, expected: int, lineno: int) -> LinkPattern:
    if not isinstance(text, str) or any(ch not in "01" for ch in text):
        raise ConfigError("pattern must be a string of 0/1 characters",
                          location=f"line {lineno}")
    if len(text) != expected:
        raise ConfigError(f"pattern has {len(text)} slots, expected {expected}",
                          location=f"line {lineno}")
    return LinkPattern(np.frombuffer(text.encode(), dtype=np.uint8) - ord("0"))


def sample_from_jsonl(text: str) -> LtsSample:
    lines = text.splitlines()
    if not lines:
        raise ConfigError("empty sample file", location="line 1")

    def parse_line(i: int) -> dict:
        try:
            doc = json.loads(lines[i])
        except json.JSONDecodeError as exc:
            raise ConfigError(f"not valid JSON: {exc.msg}", location=f"line {i + 1}")
        if not isinstance(doc, dict):
            raise ConfigError("expected a JSON object", location=f"line {i + 1}")
        return doc

    header = parse_line(0)
    if header.get("format") != "lts-sample":
        raise ConfigError("missing format marker 'lts-sample'", location="line 1")
    try:
        venues = np.array([int(v) for v, _ in header["venues"]])
        sizes = np.array([int(m) for _, m in header["venues"]], dtype=np.int64)
        n_frame = int(header["n_frame"])
        variables = [str(v) for v in header["variables"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad header: {exc}", location="line 1")
    n = venues.shape[0]
    if not variables:
        raise ConfigError("header must name at least one variable", location="line 1")

    persons: list[PersonRecord] = []
    for i in range(1, len(lines)):
        if not lines[i].strip():
            continue
        rec = parse_line(i)
        lineno = i + 1
        stratum_text = rec.get("stratum")
        try:
            stratum = Stratum(stratum_text)
        except ValueError:
            raise ConfigError(f"unknown stratum {stratum_text!r}", location=f"line {lineno}")
        slot = rec.get("venue_slot")
        if stratum is Stratum.IN_VENUE:
            if not isinstance(slot, int) or not 0 <= slot < n:
                raise ConfigError("in_venue records need a venue_slot in range",
                                  location=f"line {lineno}")
            pattern = _parse_pattern(rec.get("pattern"), n - 1, lineno)
        else:
            if slot is not None:
                raise ConfigError("only in_venue records carry a venue_slot",
                                  location=f"line {lineno}")
            pattern = _parse_pattern(rec.get("pattern"), n, lineno)
            if pattern.count_ones < 1:
                raise ConfigError("named people must be linked to at least one venue",
                                  location=f"line {lineno}")
        yraw = rec.get("y")
        if isinstance(yraw, dict):
            missing = [v for v in variables if v not in yraw]
            if missing:
                raise ConfigError(f"missing response value for {missing[0]!r}",
                                  location=f"line {lineno}")
            y = {var: float(yraw[var]) for var in variables}
        elif isinstance(yraw, (int, float)) and len(variables) == 1:
            y = {variables[0]: float(yraw)}
        else:
            raise ConfigError("y must be a number (single variable) or an object",
                              location=f"line {lineno}")
        persons.append(PersonRecord(stratum=stratum, pattern=pattern, y=y,
                                    venue_slot=slot))

    counted = np.zeros(n, dtype=np.int64)
    for p in persons:
        if p.stratum is Stratum.IN_VENUE:
            counted[p.venue_slot] += 1
    if not np.array_equal(counted, sizes):
        bad = int(np.flatnonzero(counted != sizes)[0])
        raise ConfigError(
            f"venue slot {bad} lists size {sizes[bad]} but {counted[bad]} members",
            location="line 1")
    return LtsSample(selected_venues=venues, venue_sizes_sampled=sizes,
                     persons=persons, n_frame=n_frame, variables=variables)


# --------------------------------------------------------------------------
# run configuration

_TOP_KEYS = {"population", "n", "r", "master_seed", "methods", "estimators",
             "q", "fit", "bootstrap", "threads", "persist_samples"}
_FIT_KEYS = {"rel_tol", "max_outer", "max_inner", "tau_cap", "denom_floor",
             "alpha_bound", "sigma_max", "sigma_init", "rate_clamp"}
_BOOT_KEYS = {"enabled", "B", "alpha_level", "huber_tuning", "regression_mode"}
_POP_KEYS = {"kind", "path"} | _GENERATOR_FIELDS


def validate_config(doc: Any) -> dict:
    """Schema-check a config document; returns it with defaults resolved.

    Raises :class:`ConfigError` naming the offending field path.
    """
    if not isinstance(doc, dict):
        raise ConfigError("configuration must be a JSON object")
    for key in doc:
        if key not in _TOP_KEYS:
            raise ConfigError(f"unknown key {key!r}", location=key)
    if "population" not in doc:
        raise ConfigError("missing required block", location="population")
    pop = doc["population"]
    if not isinstance(pop, dict):
        raise ConfigError("must be an object", location="population")
    for key in pop:
        if key not in _POP_KEYS:
            raise ConfigError(f"unknown key {key!r}", location=f"population.{key}")
    kind = pop.get("kind")
    if kind == "file":
        if not pop.get("path"):
            raise ConfigError("file populations need a path", location="population.path")
    elif kind in ("additive", "latent_class"):
        _generator_spec(pop, location="population")
    else:
        raise ConfigError(f"unknown population kind {kind!r}", location="population.kind")

    def want_int(key, lo, default):
        v = doc.get(key, default)
        if not isinstance(v, int) or isinstance(v, bool) or v < lo:
            raise ConfigError(f"must be an integer >= {lo}", location=key)
        return v

    out = dict(doc)
    out["n"] = want_int("n", 1, 15)
    out["r"] = want_int("r", 1, 1)
    out["q"] = want_int("q", 2, 15)
    out["master_seed"] = want_int("master_seed", 0, 0)
    out["threads"] = want_int("threads", 1, 1)
    out["persist_samples"] = bool(doc.get("persist_samples", False))

    methods = doc.get("methods", ["U"])
    if (not isinstance(methods, list) or not methods
            or any(m not in ("U", "C") for m in methods)):
        raise ConfigError("must be a nonempty list drawn from ['U', 'C']",
                          location="methods")
    out["methods"] = methods
    estimators = doc.get("estimators", ["mle", "ht", "hk"])
    if (not isinstance(estimators, list)
            or any(e not in ("mle", "ht", "hk") for e in estimators)):
        raise ConfigError("must be a list drawn from ['mle', 'ht', 'hk']",
                          location="estimators")
    out["estimators"] = estimators

    fit = doc.get("fit", {})
    if not isinstance(fit, dict):
        raise ConfigError("must be an object", location="fit")
    for key, v in fit.items():
        if key not in _FIT_KEYS:
            raise ConfigError(f"unknown key {key!r}", location=f"fit.{key}")
        if key in ("max_outer", "max_inner"):
            if not isinstance(v, int) or v < 1:
                raise ConfigError("must be a positive integer", location=f"fit.{key}")
        elif not isinstance(v, (int, float)) or v <= 0:
            raise ConfigError("must be a positive number", location=f"fit.{key}")
    out["fit"] = fit

    boot = doc.get("bootstrap", {"enabled": False})
    if not isinstance(boot, dict):
        raise ConfigError("must be an object", location="bootstrap")
    for key in boot:
        if key not in _BOOT_KEYS:
            raise ConfigError(f"unknown key {key!r}", location=f"bootstrap.{key}")
    if boot.get("enabled", False):
        b = boot.get("B", 50)
        if not isinstance(b, int) or b < 2:
            raise ConfigError("must be an integer >= 2 (bootstrap-replicates invariant)",
                              location="bootstrap.B")
        a = boot.get("alpha_level", 0.05)
        if not isinstance(a, (int, float)) or not 0.0 < a < 1.0:
            raise ConfigError("must lie strictly between 0 and 1",
                              location="bootstrap.alpha_level")
        h = boot.get("huber_tuning", 1.5)
        if not isinstance(h, (int, float)) or h <= 0:
            raise ConfigError("must be a positive number", location="bootstrap.huber_tuning")
        mode = boot.get("regression_mode", "auto")
        if mode not in ("auto", "linear", "logistic"):
            raise ConfigError("must be one of 'auto', 'linear', 'logistic'",
                              location="bootstrap.regression_mode")
    out["bootstrap"] = boot
    return out


def parse_config(doc: dict) -> tuple[McConfig, int]:
    """Turn a validated config document into (McConfig, thread count)."""
    resolved = validate_config(doc)
    pop = resolved["population"]
    if pop["kind"] == "file":
        spec = PopulationSpec(kind=PopulationKind.EXPLICIT_FILE, path=pop["path"])
    else:
        spec = _generator_spec(pop, location="population")
    fit = FitOptions(q=resolved["q"], **resolved["fit"])
    boot = None
    if resolved["bootstrap"].get("enabled", False):
        b = resolved["bootstrap"]
        boot = BootConfig(B=b.get("B", 50),
                          alpha_level=b.get("alpha_level", 0.05),
                          huber_tuning=b.get("huber_tuning", 1.5),
                          regression_mode=RegressionMode(b.get("regression_mode", "auto")))
    config = McConfig(
        population=spec, n=resolved["n"], r=resolved["r"],
        methods=tuple(resolved["methods"]), estimators=tuple(resolved["estimators"]),
        q=resolved["q"], fit=fit, bootstrap=boot,
        master_seed=resolved["master_seed"],
        persist_samples=resolved["persist_samples"])
    return config, resolved["threads"]


def apply_overrides(doc: dict, overrides: list[str]) -> dict:
    """Apply ``--set dotted.path=value`` pairs to a config document."""
    out = json.loads(json.dumps(doc))
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form path=value")
        path, _, raw = item.partition("=")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = out
        parts = path.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"cannot override through scalar {part!r}", location=path)
        node[parts[-1]] = value
    return out


def config_hash(doc: dict) -> str:
    """Deterministic hash of the canonicalized config bytes."""
    blob = json.dumps(doc, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


# --------------------------------------------------------------------------
# result emission

_REPLICATE_COLUMNS = ["replicate", "method", "estimator", "parameter", "variable",
                      "value", "sd", "ci_kind", "ci_lower", "ci_upper",
                      "failed", "failure_reason"]


def replicates_csv(rows: list[ReplicateRecord]) -> str:
    buf = io.StringIO()
    buf.write(",".join(_REPLICATE_COLUMNS) + "\n")
    for r in rows:
        buf.write(",".join([
            str(r.replicate), r.method, r.estimator, r.parameter, r.variable,
            _num(r.value), _num(r.sd), r.ci_kind or "",
            _num(r.ci_lower), _num(r.ci_upper),
            "1" if r.failed else "0",
            (r.failure_reason or "").replace(",", ";"),
        ]) + "\n")
    return buf.getvalue()


def replicates_from_csv(text: str) -> list[ReplicateRecord]:
    lines = text.splitlines()
    if not lines or lines[0].split(",") != _REPLICATE_COLUMNS:
        raise ConfigError("unexpected replicate CSV header", location="line 1")
    out = []
    for line in lines[1:]:
        parts = line.split(",")
        f = lambda s: float(s) if s else None
        out.append(ReplicateRecord(
            replicate=int(parts[0]), method=parts[1], estimator=parts[2],
            parameter=parts[3], variable=parts[4], value=f(parts[5]), sd=f(parts[6]),
            ci_kind=parts[7] or None, ci_lower=f(parts[8]), ci_upper=f(parts[9]),
            failed=parts[10] == "1", failure_reason=parts[11] or None))
    return out


_METRIC_COLUMNS = ["method", "estimator", "parameter", "variable", "true_value",
                   "n_success", "n_fail", "r_bias", "sqrt_r_mse", "mdre", "mdare",
                   "ci_n", "cp", "mrl", "mdrl"]


def metrics_csv(report: McReport) -> str:
    buf = io.StringIO()
    buf.write(",".join(_METRIC_COLUMNS) + "\n")
    for row in report.rows:
        buf.write(",".join([
            row.method, row.estimator, row.parameter, row.variable,
            _num(row.true_value), str(row.n_success), str(row.n_fail),
            _num(row.r_bias), _num(row.sqrt_r_mse), _num(row.mdre), _num(row.mdare),
            str(row.ci_n), _num(row.cp), _num(row.mrl), _num(row.mdrl),
        ]) + "\n")
    for (method, portion), pct in sorted(report.failure_pct.items()):
        buf.write(f"# failure_pct,{method},{portion},{_num(pct)}\n")
    return buf.getvalue()


_FAMILY_LABEL = {
    ("mle", "size"): "MLEs of sizes",
    ("ht", "size"): "HT-type of sizes",
    ("ht", "total"): "HT-type of totals",
    ("ht", "mean"): "HT-type of means",
    ("hk", "total"): "Hajek-type of totals",
    ("hk", "mean"): "Hajek-type of means",
}


def _kind_of(parameter: str) -> str:
    if parameter.startswith("tau"):
        return "size"
    return "mean" if parameter.startswith("Ybar") else "total"


def _f3(v: float | None) -> str:
    if v is None:
        return "   ."
    return f"{v:7.3f}"


def metrics_text(report: McReport) -> str:
    """Human-readable aligned table, one section per method x variable."""
    buf = io.StringIO()
    variables = sorted({row.variable for row in report.rows if row.variable})
    for method in sorted({row.method for row in report.rows}):
        for variable in variables:
            buf.write(f"== method {method}, response variable '{variable}'\n")
            buf.write(f"{'estimator':<26}{'param':<7}{'r-bias':>8}{'rt-r-mse':>9}"
                      f"{'mdre':>8}{'mdare':>8}{'cp':>7}{'mrl':>8}{'mdrl':>8}"
                      f"{'ok':>5}{'fail':>5}\n")
            for row in report.rows:
                if row.method != method or row.variable not in ("", variable):
                    continue
                label = _FAMILY_LABEL.get((row.estimator, _kind_of(row.parameter)))
                if label is None:
                    continue
                cp = "    ." if row.cp is None else f"{row.cp:5.2f}"
                buf.write(f"{label:<26}{row.parameter:<7}"
                          f"{_f3(row.r_bias):>8}{_f3(row.sqrt_r_mse):>9}"
                          f"{_f3(row.mdre):>8}{_f3(row.mdare):>8}{cp:>7}"
                          f"{_f3(row.mrl):>8}{_f3(row.mdrl):>8}"
                          f"{row.n_success:>5}{row.n_fail:>5}\n")
            buf.write("\n")
    buf.write("convergence-failure percentages by portion:\n")
    for (method, portion), pct in sorted(report.failure_pct.items()):
        buf.write(f"  method {method} {portion}: {pct:.2f}%\n")
    return buf.getvalue()


def estimates_csv(est) -> str:
    """CSV for one sample's estimates (the estimate command)."""
    buf = io.StringIO()
    buf.write("method,estimator,parameter,variable,value,sd,ci_kind,ci_lower,"
              "ci_upper,missing_reason\n")
    for (estimator, parameter, variable), rec in sorted(est.records.items()):
        ci = rec.ci
        buf.write(",".join([
            est.method, estimator, parameter, variable,
            _num(rec.value), _num(rec.sd),
            ci.kind if ci else "", _num(ci.lower if ci else None),
            _num(ci.upper if ci else None),
            (rec.missing_reason or "").replace(",", ";"),
        ]) + "\n")
    return buf.getvalue()
