"""Batch driver: ``classify``, ``verify-barrier``, ``solve`` and ``experiment``.

Each run reads one JSON config; every artifact is written to ``--out``.
Exit status is 0 on success, 2 for an invalid config and 3 for a numerical
failure, in which case ``diagnostics.json`` explains what went wrong.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import re
import sys
from pathlib import Path

import jsonschema
import numpy as np

from . import barriers, criteria, experiments, manifold, solver

log = logging.getLogger("cartanlab")

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL = 0, 2, 3

_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_int = {"type": "integer"}

PROFILE_SCHEMA = {
    "type": "object",
    "required": ["tail"],
    "properties": {
        "tail": {"enum": ["power-log", "ansc", "constant", "zero"]},
        "constants": {"type": "object", "properties": {
            "c": _num, "C": _pos, "eps": _pos, "K0": {"type": "number", "minimum": 0}},
            "additionalProperties": False},
        "R0": _num,
    },
    "additionalProperties": False,
}

CONFIG_SCHEMA = {
    "type": "object",
    "required": ["command", "metric"],
    "additionalProperties": False,
    "properties": {
        "command": {"enum": ["classify", "verify-barrier", "solve", "experiment"]},
        "metric": {
            "type": "object",
            "required": ["kind", "n"],
            "additionalProperties": False,
            "properties": {
                "kind": {"enum": ["euclidean", "hyperbolic", "march", "curvature"]},
                "n": {"type": "integer", "minimum": 2},
                "params": {"type": "object", "additionalProperties": False, "properties": {
                    "kappa": _pos, "c": _pos, "a": _num,
                    "a_grid": {"type": "array", "items": _pos},
                    "profile": PROFILE_SCHEMA}},
                "r_max": {"type": ["number", "string"]},
                "rtol": _pos,
                "r_start": _pos,
            },
        },
        "equation": {
            "type": "object",
            "required": ["type"],
            "additionalProperties": False,
            "properties": {"type": {"enum": ["minimal", "p-laplace", "laplace"]}, "p": _num},
        },
        "boundary": {
            "type": "object",
            "required": ["preset"],
            "additionalProperties": False,
            "properties": {"preset": {"enum": ["constant", "cos", "scaled-cos"]},
                           "v": _num, "eps": _num},
        },
        "grid": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"R_max": _pos, "Nr": _int, "Ntheta": _int, "beta": _num},
        },
        "solver": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"tol": _pos, "max_iter": _int, "delta": _num,
                           "method": {"enum": ["picard", "damped-newton"]},
                           "damping": _pos, "initial": {"type": ["string", "number"]},
                           "norms": {"type": "array", "minItems": 1,
                                     "items": {"enum": ["sup", "l2"]}}},
        },
        "criteria": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "criteria": {"type": "array",
                             "items": {"enum": ["J", "p-integral", "parabolicity"]}},
                "forms": {"type": "array", "items": {"enum": ["nested", "swapped"]}},
                "p": _num, "horizon": _pos, "panels": _int,
                "volume_radii": {"type": "array", "items": _pos},
                "label": {"type": "string"},
            },
        },
        "barrier": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"k": _pos, "r_check": _pos, "max_doublings": _int,
                           "allow_rescale": {"type": "boolean"}, "n_r": _int,
                           "n_theta": _int, "horizon": _pos},
        },
        "sandwich": {"type": "boolean"},
        "experiment": {
            "type": "object",
            "required": ["kind"],
            "additionalProperties": False,
            "properties": {
                "kind": {"enum": ["boundary-convergence", "liouville", "threshold-scan",
                                  "harnack", "gradient-bound", "weight"]},
                "radii": {"type": "array", "items": _pos},
                "Nr": _int, "Ntheta": _int, "beta": _num, "inner_radius": _pos,
                "grad_window": {"type": "array", "items": _num, "minItems": 2, "maxItems": 2},
                "c": _pos,
                "family": {"enum": ["march"]},
                "criterion": {"enum": ["J", "p-integral"]},
                "c_range": {"type": "array", "items": _num, "minItems": 2, "maxItems": 2},
                "tolerance": _pos, "p": _num, "horizon": _pos,
                "C0": _num,
                "samples": {"type": "object", "required": ["t", "M", "m"],
                            "properties": {"t": {"type": "array"}, "M": {"type": "array"},
                                           "m": {"type": "array"}}},
                "pairs": {"type": "array", "items": {"type": "array", "minItems": 2,
                                                     "maxItems": 2}},
                "u_p": _pos, "R": _pos, "K0": {"type": "number", "minimum": 0},
                "grad_bound": _num,
                "harnack_radii": {"type": "array", "items": _pos},
            },
        },
    },
}

# Where each operation parameter lives in the config (audited by the test suite).
PARAMETER_MAP = {
    "manifold.make_closed_form_metric": {"kind": "metric.kind", "n": "metric.n",
                                         "kappa": "metric.params.kappa"},
    "manifold.march_metric": {"c": "metric.params.c", "n": "metric.n",
                              "a_grid": "metric.params.a_grid"},
    "manifold.metric_from_curvature": {"profile": "metric.params.profile", "n": "metric.n",
                                       "r_max": "metric.r_max", "rtol": "metric.rtol",
                                       "r_start": "metric.r_start"},
    "manifold.power_log_profile": {"c": "metric.params.profile.constants.c",
                                   "R0": "metric.params.profile.R0"},
    "manifold.ansc_profile": {"C": "metric.params.profile.constants.C",
                              "eps": "metric.params.profile.constants.eps",
                              "R0": "metric.params.profile.R0"},
    "manifold.constant_profile": {"K0": "metric.params.profile.constants.K0"},
    "manifold.curvature_at": {"metric": "metric", "r": "criteria.volume_radii"},
    "manifold.volume": {"metric": "metric", "r": "criteria.volume_radii",
                        "rtol": "metric.rtol"},
    "criteria.j_integral": {"metric": "metric", "form": "criteria.forms",
                            "horizon": "criteria.horizon", "panels": "criteria.panels"},
    "criteria.p_exponents": {"n": "metric.n", "p": "criteria.p"},
    "criteria.p_integral": {"metric": "metric", "p": "criteria.p", "form": "criteria.forms",
                            "horizon": "criteria.horizon", "panels": "criteria.panels"},
    "criteria.parabolicity_check": {"metric": "metric", "p": "criteria.p",
                                    "horizon": "criteria.horizon",
                                    "panels": "criteria.panels"},
    "criteria.threshold_scan": {"family": "experiment.family",
                                "criterion": "experiment.criterion",
                                "c_range": "experiment.c_range",
                                "tolerance": "experiment.tolerance", "p": "experiment.p",
                                "horizon": "experiment.horizon"},
    "barriers.barrier_profile": {"metric": "metric", "equation": "equation", "k": "barrier.k",
                                 "horizon": "barrier.horizon"},
    "barriers.supersolution_residual": {"metric": "metric", "equation": "equation",
                                        "b": "boundary", "k": "barrier.k",
                                        "r": "barrier.n_r", "theta": "barrier.n_theta",
                                        "profile": "barrier.horizon"},
    "barriers.choose_k_and_r0": {"metric": "metric", "equation": "equation", "b": "boundary",
                                 "r_nodes": "barrier.n_r", "theta_nodes": "barrier.n_theta",
                                 "r_check": "barrier.r_check",
                                 "max_doublings": "barrier.max_doublings",
                                 "allow_rescale": "barrier.allow_rescale",
                                 "horizon": "barrier.horizon"},
    "barriers.psi": {"R": "experiment.R", "K0": "experiment.K0", "n": "metric.n"},
    "barriers.gradient_bound": {"inputs": "experiment.u_p"},
    "barriers.uniform_gradient_constants": {"c": "experiment.c", "n": "metric.n"},
    "solver.build_grid": {"metric": "metric", "R_max": "grid.R_max", "Nr": "grid.Nr",
                          "Ntheta": "grid.Ntheta", "beta": "grid.beta"},
    "solver.solve_dirichlet": {"metric": "metric", "grid": "grid", "config": "solver",
                               "b": "boundary"},
    "solver.residual_norm": {"metric": "metric", "grid": "grid", "field": "grid",
                             "equation": "equation", "norm": "solver.norms",
                             "boundary": "boundary"},
    "solver.sandwich_check": {"field": "grid", "certificate": "sandwich", "tol": "solver.tol"},
    "solver.boundary_convergence_experiment": {
        "metric": "metric", "b": "boundary", "radii": "experiment.radii", "config": "solver",
        "Nr": "experiment.Nr", "Ntheta": "experiment.Ntheta", "beta": "experiment.beta",
        "inner_radius": "experiment.inner_radius", "grad_window": "experiment.grad_window",
        "workers": "--threads"},
    "experiments.holder_exponent": {"C0": "experiment.C0"},
    "experiments.oscillation_decay_check": {"record": "experiment.samples",
                                            "r": "experiment.pairs", "R": "experiment.pairs"},
    "experiments.liouville_experiment": {
        "metric": "metric", "b": "boundary", "radii": "experiment.radii", "config": "solver",
        "c": "experiment.c", "Nr": "experiment.Nr", "Ntheta": "experiment.Ntheta",
        "workers": "--threads"},
    "experiments.weight_field": {"fld": "grid", "grad_bound": "experiment.grad_bound"},
    "experiments.harnack_samples": {"fld": "grid", "radii": "experiment.harnack_radii"},
    "experiments.empirical_harnack_constant": {"fld": "grid",
                                               "radii": "experiment.harnack_radii"},
}


class ConfigError(ValueError):
    pass


NUMERICAL_ERRORS = (criteria.CriterionError, manifold.IntegrationFailure,
                    barriers.SearchExhausted, barriers.HessianPrecondition,
                    barriers.DegenerateGradient, solver.NoConvergenceError,
                    solver.DegenerateSystem, experiments.MissingSample)


# --- config interpretation ---------------------------------------------------

def validate(config: dict) -> None:
    try:
        jsonschema.validate(config, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        path = ".".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"{path}: {exc.message}") from None
    needs = {"verify-barrier": ["equation", "boundary"],
             "solve": ["boundary", "grid"],
             "experiment": ["experiment"]}
    for key in needs.get(config["command"], []):
        if key not in config:
            raise ConfigError(f"{config['command']} needs a {key!r} section")


def config_hash(config: dict) -> str:
    return experiments.config_hash(config)


def build_metric(spec: dict) -> manifold.WarpedMetric:
    d = dict(spec)
    if isinstance(d.get("r_max"), str):
        d["r_max"] = float(d["r_max"])
    try:
        return manifold.metric_from_dict(d)
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"metric: missing or invalid field {exc}") from None


def _equation(config):
    eq = config.get("equation", {"type": "minimal"})
    if eq["type"] == "p-laplace":
        if "p" not in eq:
            raise ConfigError("equation.p is required for p-laplace")
        return ("p-laplace", eq["p"])
    return eq["type"]


def _solver_config(config) -> solver.SolverConfig:
    eq = config.get("equation", {"type": "minimal"})
    s = config.get("solver", {})
    try:
        return solver.SolverConfig(equation=eq["type"], p=eq.get("p"), delta=s.get("delta"),
                                   method=s.get("method", "picard"), tol=s.get("tol", 1e-10),
                                   max_iter=s.get("max_iter", 500),
                                   damping=s.get("damping", 1.0),
                                   initial=s.get("initial", "boundary"))
    except ValueError as exc:
        raise ConfigError(f"solver: {exc}") from None


def _boundary(config, n):
    try:
        return barriers.boundary_from_dict(config["boundary"], n)
    except KeyError as exc:
        raise ConfigError(f"boundary: missing field {exc}") from None


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    return buf.getvalue()


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, default=_jsonable) + "\n"


def _jsonable(v):
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    return str(v)


# --- subcommands -------------------------------------------------------------

def _classify(config, metric, out: Path, threads):
    cc = config.get("criteria", {})
    wanted = cc.get("criteria", ["J"])
    forms = cc.get("forms", ["nested"])
    horizon = cc.get("horizon", min(criteria.DEFAULT_HORIZON, metric.r_max))
    panels = cc.get("panels", criteria.DEFAULT_PANELS)
    p = cc.get("p")
    label = cc.get("label", metric.kind)
    c = metric.params.get("c") if isinstance(metric.params, dict) else None
    rows = []
    for crit in wanted:
        if crit == "J":
            for form in forms:
                v = criteria.j_integral(metric, form, horizon, panels)
                rows.append(criteria.verdict_row(v, label, metric.n, f"J[{form}]", c=c))
        else:
            if p is None:
                raise ConfigError(f"criteria.p is required for {crit}")
            if crit == "p-integral":
                for form in forms:
                    v = criteria.p_integral(metric, p, horizon, form, panels)
                    rows.append(criteria.verdict_row(v, label, metric.n,
                                                     f"p-integral[{form}]", p=p, c=c))
            else:
                v = criteria.parabolicity_check(metric, p, horizon, panels)
                rows.append(criteria.verdict_row(v, label, metric.n, "parabolicity", p=p, c=c))
    (out / "verdicts.csv").write_text(criteria.verdict_rows_csv(rows))
    (out / "report.txt").write_text(criteria.verdict_report(rows))
    radii = cc.get("volume_radii")
    if radii:
        table = [(r, manifold.volume(metric, r), float(manifold.curvature_at(metric, r)))
                 for r in radii]
        (out / "volume.csv").write_text(_csv(["r", "volume", "curvature"], table))
    return {"rows": len(rows)}


def _barrier_nodes(bc):
    r_check = bc.get("r_check", 1e3)
    n_r, n_t = bc.get("n_r", 200), bc.get("n_theta", 64)
    return r_check, 1.0 + np.geomspace(1e-2, r_check - 1.0, n_r), np.linspace(0, math.pi, n_t)


def _certificate(config, metric, b):
    bc = config.get("barrier", {})
    r_check, r_nodes, t_nodes = _barrier_nodes(bc)
    return barriers.choose_k_and_r0(
        metric, _equation(config), b, r_nodes, t_nodes, r_check,
        bc.get("max_doublings", 40), bc.get("allow_rescale", False),
        bc.get("horizon", min(1e6, metric.r_max))), r_nodes, t_nodes


def _verify_barrier(config, metric, out: Path, threads):
    b = _boundary(config, metric.n)
    cert, r_nodes, t_nodes = _certificate(config, metric, b)
    (out / "certificate.json").write_text(cert.to_record() + "\n")
    r = r_nodes[r_nodes >= cert.r0]
    res = barriers.supersolution_residual(metric, _equation(config), b, cert.k, r, t_nodes,
                                          cert.profile.scaled(1.0))
    rows = [(ri, tj, res[i, j]) for i, ri in enumerate(r) for j, tj in enumerate(t_nodes)]
    (out / "residual.csv").write_text(_csv(["r", "theta", "value"], rows))
    return {"k": cert.k, "r0": cert.r0, "max_residual": float(res.max())}


def _solve(config, metric, out: Path, threads):
    b = _boundary(config, metric.n)
    g = config["grid"]
    try:
        grid = solver.build_grid(metric, g.get("R_max", 1.0), g.get("Nr", 64),
                                 g.get("Ntheta", 32), g.get("beta", 0.0))
    except ValueError as exc:
        raise ConfigError(f"grid: {exc}") from None
    cfg = _solver_config(config)
    fld = solver.solve_dirichlet(metric, grid, cfg, b)
    (out / "field.csv").write_text(fld.to_csv())
    (out / "field.adlb").write_bytes(fld.to_binary())
    report = {"iterations": fld.iterations,
              **{f"residual_{norm}": solver.residual_norm(metric, grid, fld, None, norm)
                 for norm in config.get("solver", {}).get("norms", ["sup", "l2"])},
              "solver": cfg.to_dict(), "grid": {"R_max": grid.R_max, "Nr": grid.shape[0],
                                                "Ntheta": grid.shape[1],
                                                "stretch": grid.stretch}}
    if config.get("sandwich"):
        cert, _, _ = _certificate(config, metric, b)
        rep = solver.sandwich_check(fld, cert)
        report["sandwich"] = {"violations": rep.violations, "worst": rep.worst,
                              "tol": rep.tol, "k": cert.k, "r0": cert.r0}
    ex = config.get("experiment", {})
    w = experiments.weight_field(fld, ex.get("grad_bound"))
    report["sigma"] = {"min": w.min_sigma, "max": w.max_sigma, "grad_bound": w.grad_bound,
                       "implied_c": w.implied_c, "meets_bound": w.meets_bound}
    if "harnack_radii" in ex:
        try:
            t, M, m = experiments.harnack_samples(fld, ex["harnack_radii"])
        except ValueError as exc:
            raise ConfigError(f"experiment.harnack_radii: {exc}") from None
        (out / "harnack_samples.csv").write_text(_csv(["t", "M", "m"], zip(t, M, m)))
        report["empirical_C0"] = experiments.empirical_harnack_constant(fld, t)
    return report


def _experiment(config, metric, out: Path, threads):
    ex = config["experiment"]
    kind = ex["kind"]
    if kind in ("boundary-convergence", "liouville"):
        if "radii" not in ex:
            raise ConfigError("experiment.radii is required")
        b = _boundary(config, metric.n) if "boundary" in config else barriers.cos_boundary(
            metric.n)
        cfg = _solver_config(config)
        if kind == "liouville":
            rep = experiments.liouville_experiment(metric, b, ex["radii"], cfg,
                                                   ex.get("c", 1.0), ex.get("Nr", 128),
                                                   ex.get("Ntheta", 64), workers=threads)
            (out / "liouville.csv").write_text(rep.to_csv())
            (out / "liouville.txt").write_text(rep.to_text() + "\n")
            return {"regime": rep.regime, "decay_exponent": rep.decay_exponent}
        rows, _ = solver.boundary_convergence_experiment(
            metric, b, ex["radii"], cfg, ex.get("Nr", 128), ex.get("Ntheta", 64),
            ex.get("beta"), ex.get("inner_radius", 1.0), tuple(ex.get("grad_window", (2, .5))),
            workers=threads)
        table = [(r.R, r.osc, r.value_at_pole, r.sup_diff, r.iterations, r.residual,
                  r.max_grad, r.error) for r in rows]
        (out / "convergence.csv").write_text(_csv(
            ["R", "osc", "u_pole", "sup_diff", "iterations", "residual", "max_grad", "error"],
            table))
        return {"radii": len(rows)}
    if kind == "threshold-scan":
        crit = ex.get("criterion", "J")
        n = metric.n
        lo, hi = ex.get("c_range", (0.2, 1.5))
        c = criteria.threshold_scan(lambda c: manifold.march_metric(c, n), crit, (lo, hi),
                                    ex.get("tolerance", 0.01), ex.get("p"),
                                    ex.get("horizon", criteria.DEFAULT_HORIZON))
        (out / "threshold.csv").write_text(_csv(
            ["family", "n", "p", "criterion", "c_lo", "c_hi", "threshold"],
            [("march", n, ex.get("p", ""), crit, lo, hi, c)]))
        return {"threshold": c}
    if kind == "harnack":
        if "C0" not in ex:
            raise ConfigError("experiment.C0 is required")
        try:
            rec = experiments.holder_exponent(ex["C0"])
            if "samples" in ex:
                s = ex["samples"]
                rec = rec.with_samples(s["t"], s["M"], s["m"])
        except ValueError as exc:
            raise ConfigError(f"experiment: {exc}") from None
        rows = []
        for r, R in ex.get("pairs", []):
            chk = experiments.oscillation_decay_check(rec, r, R)
            rows.append((r, R, chk.lhs, chk.rhs, chk.passed,
                         " ".join(repr(t) for t in chk.offending)))
        (out / "harnack.csv").write_text(_csv(["r", "R", "osc_r", "bound", "passed",
                                               "offending"], rows))
        (out / "harnack.txt").write_text(_dump({"C0": rec.C0, "Lambda": rec.Lambda,
                                                "kappa_raw": rec.kappa_raw,
                                                "kappa": rec.kappa}))
        return {"kappa": rec.kappa}
    if kind == "gradient-bound":
        n = metric.n
        rows = []
        if "u_p" in ex:
            inp = barriers.GradientBoundInputs(ex["u_p"], ex.get("R", 1.0), ex.get("K0", 0.0), n)
            rows.append(("local", barriers.psi(inp.R, inp.K0, n), barriers.gradient_bound(inp)))
        if "c" in ex:
            u, ps, uk = barriers.uniform_gradient_constants(ex["c"], n)
            rows.append(("uniform", ps, barriers.uniform_gradient_bound(ex["c"], n)))
        (out / "gradient_bound.csv").write_text(_csv(["kind", "psi", "bound"], rows))
        return {"rows": len(rows)}
    # weight: solve, then report sigma (and the optional Harnack diagnostic)
    for key in ("boundary", "grid"):
        if key not in config:
            raise ConfigError(f"weight experiment needs a {key!r} section")
    return _solve(config, metric, out, threads)


COMMANDS = {"classify": _classify, "verify-barrier": _verify_barrier, "solve": _solve,
            "experiment": _experiment}


def run(config: dict, out: Path, threads: int = 1) -> int:
    """Execute one config; returns the exit status and writes artifacts to ``out``."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        validate(config)
        metric = build_metric(config["metric"])
        digest = config_hash(config)
        summary = COMMANDS[config["command"]](config, metric, out, threads)
    except (ConfigError, criteria.CriterionInputError) as exc:
        log.error("invalid config: %s", exc)
        _diagnose(out, "validation-error", exc, config)
        return EXIT_INVALID
    except NUMERICAL_ERRORS as exc:
        log.error("numerical failure: %s", exc)
        _diagnose(out, _code(exc), exc, config)
        return EXIT_NUMERICAL
    except ValueError as exc:
        # anything else rejected by a constructor is a bad parameter
        log.error("invalid parameter: %s", exc)
        _diagnose(out, "validation-error", exc, config)
        return EXIT_INVALID
    summary = {"command": config["command"], "config_hash": digest,
               "metric": metric.to_dict(), **summary}
    (out / "summary.json").write_text(_dump(summary))
    return EXIT_OK


_CODE = re.compile(r"^([a-z]+(?:-[a-z]+)+)\b")


def _code(exc) -> str:
    """Leading kebab-case status of the message (``criterion-divergent: ...``)."""
    msg = exc.args[0] if exc.args and isinstance(exc.args[0], str) else str(exc)
    m = _CODE.match(msg)
    return m.group(1) if m else type(exc).__name__


def _diagnose(out: Path, code: str, exc, config):
    diag = {"status": code, "error": type(exc).__name__, "message": str(exc)}
    if isinstance(exc, barriers.HessianPrecondition):
        diag["rescale"] = exc.rescale
    if isinstance(exc, solver.NoConvergenceError):
        diag["residual"] = exc.residual
    try:
        diag["config_hash"] = config_hash(config)
    except TypeError:
        pass
    (out / "diagnostics.json").write_text(_dump(diag))


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="cartanlab", description=__doc__.splitlines()[0])
    ap.add_argument("subcommand", choices=sorted(COMMANDS))
    ap.add_argument("--config", required=True, type=Path, help="JSON run config")
    ap.add_argument("--out", type=Path, default=Path("out"), help="artifact directory")
    ap.add_argument("--threads", type=int, default=1, help="parallel radius jobs")
    ap.add_argument("--verbose", action="store_true")
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        config = json.loads(args.config.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        log.error("cannot read config: %s", exc)
        args.out.mkdir(parents=True, exist_ok=True)
        _diagnose(args.out, "validation-error", exc, {})
        return EXIT_INVALID
    if not isinstance(config, dict):
        log.error("config must be a JSON object")
        return EXIT_INVALID
    config.setdefault("command", args.subcommand)
    if config["command"] != args.subcommand:
        log.error("config command %r does not match subcommand %r",
                  config["command"], args.subcommand)
        return EXIT_INVALID
    return run(config, args.out, max(1, args.threads))


if __name__ == "__main__":
    sys.exit(main())
