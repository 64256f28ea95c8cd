"""Command-line front end.

Each subcommand has a parameter schema. Values come from schema defaults,
then the ``[run]`` and ``[<command>]`` sections of an optional INI file, then
command-line flags. ``[field]`` and ``[domain]`` sections (or repeated
``--field key=value`` / ``--domain key=value`` flags) describe the
coefficient field and domain.

Exit status: 0 success, 1 invalid input, 2 numerical non-convergence.
"""
import argparse
import configparser
import csv
import io
import json
import math
import os
import platform
import sys
from importlib import metadata

import numpy as np

from . import _accel
from .errors import ConfigError, ConvergenceError, EllipsoidLabError
from .field import domain_from_mapping, field_from_mapping, parse_matrix, parse_vector

EXIT_OK, EXIT_INVALID, EXIT_NONCONVERGED = 0, 1, 2

COMMON = {
    "seed": (int, 0, "root random seed"),
    "output": (str, None, "output path (solve: prefix for .csv/.json)"),
    "format": (str, "json", "json or csv"),
    "threads": (int, None, "worker threads (env ELLIPSOID_LAB_THREADS)"),
}

SCHEMA = {
    "coupling": {
        "a1": (str, None, "first matrix, rows separated by ';'"),
        "a2": (str, None, "second matrix"),
        "alpha": (float, 0.5, "Holder exponent in (0,1)"),
        "direction": (str, None, "coupling direction (default e1)"),
    },
    "thresholds": {
        "n": (int, 2, "dimension"),
        "alpha": (float, 0.1, "Holder exponent"),
        "lam": (float, None, "lower ellipticity bound (optional)"),
        "lam_upper": (float, None, "upper ellipticity bound (optional)"),
    },
    "verify": {
        "alpha": (float, 0.1, "Holder exponent"),
        "r": (float, 1.0, "radius r"),
        "sup_u": (float, 1.0, "bound on |u| over B_2r"),
        "eps": (float, None, "step scale (default: large-range scale 0.5/(N sqrt(lam)))"),
        "regime": (str, "large", "large or medium"),
        "pairs": (int, 10, "number of sampled (x, z) pairs"),
        "samples": (int, 1_000_000, "Monte Carlo samples for the medium regime"),
    },
    "solve": {
        "eps": (float, 0.125, "step scale"),
        "h": (float, None, "grid spacing (default eps/4)"),
        "tol": (float, 1e-8, "fixed-point tolerance"),
        "max_iters": (int, 200_000, "iteration cap"),
        "method": (str, "krylov", "jacobi or krylov"),
        "payoff": (str, "cubic", "affine, constant, quadratic, cubic or sign"),
        "payoff_params": (str, "", "comma-separated payoff parameters"),
    },
    "walk": {
        "x0": (str, "0,0", "start point"),
        "eps": (float, 0.125, "step scale"),
        "runs": (int, 10_000, "number of walks"),
        "step_cap": (int, 1_000_000, "per-walk step cap"),
        "payoff": (str, "cubic", "payoff name"),
        "payoff_params": (str, "", "payoff parameters"),
    },
    "coupled-walk": {
        "x0": (str, "-0.25,0", "first start point"),
        "z0": (str, "0.25,0", "second start point"),
        "eps": (float, 0.125, "step scale"),
        "strategy": (str, "mirror", "optimal, mirror or identity"),
        "alpha": (float, 0.5, "weight exponent of the optimal strategy"),
        "runs": (int, 10_000, "number of coupled pairs"),
        "step_cap": (int, 1_000_000, "per-pair step cap"),
    },
    "holder": {
        "eps": (float, 0.125, "step scale"),
        "h": (float, None, "grid spacing (default eps/4)"),
        "tol": (float, 1e-8, "fixed-point tolerance"),
        "max_iters": (int, 200_000, "iteration cap"),
        "method": (str, "krylov", "jacobi or krylov"),
        "payoff": (str, "cubic", "payoff name"),
        "payoff_params": (str, "", "payoff parameters"),
        "alpha": (float, 0.1, "Holder exponent"),
        "r_inner": (float, 0.5, "radius of the inner ball"),
    },
    "counterexample": {
        "case": (str, "2d", "2d or 3d"),
        "samples": (int, 1_000_000, "Monte Carlo samples"),
        "grid": (int, None, "2d: angles per class (720); 3d: Haar samples (1000)"),
    },
}

CHOICES = {
    "format": ("json", "csv"),
    "regime": ("large", "medium"),
    "method": ("jacobi", "krylov"),
    "strategy": ("optimal", "mirror", "identity"),
    "case": ("2d", "3d"),
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(f"{self.prog}: {message}")


def _convert(name, typ, value):
    if value is None:
        return None
    try:
        out = typ(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid value for {name}: {value!r}") from exc
    if name in CHOICES and out not in CHOICES[name]:
        raise ConfigError(f"{name} must be one of {CHOICES[name]}, got {out!r}")
    return out


def validate_config(command, params, field_section=None, domain_section=None):
    """Check a parameter mapping against the schema; returns the typed mapping.

    Used both on input and to re-validate the config echo of a report.
    """
    if command not in SCHEMA:
        raise ConfigError(f"unknown command {command!r}")
    schema = {**COMMON, **SCHEMA[command]}
    unknown = set(params) - set(schema)
    if unknown:
        raise ConfigError(f"unknown keys for {command}: {sorted(unknown)}")
    out = {}
    for key, (typ, default, _) in schema.items():
        out[key] = _convert(key, typ, params.get(key, default))
    if field_section is not None:
        field_from_mapping(field_section)
    if domain_section is not None:
        domain_from_mapping(domain_section)
    return out


def _kv_list(items, what):
    out = {}
    for item in items or []:
        if "=" not in item:
            raise ConfigError(f"--{what} expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip().lower()] = v.strip()
    return out


def build_parser():
    p = _Parser(prog="ellipsoid-lab", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for cmd, schema in SCHEMA.items():
        sp = sub.add_parser(cmd)
        sp.add_argument("--config", help="INI configuration file")
        sp.add_argument("--field", action="append", metavar="KEY=VALUE",
                        help="override a [field] key")
        sp.add_argument("--domain", action="append", metavar="KEY=VALUE",
                        help="override a [domain] key")
        for key, (typ, default, helptext) in {**COMMON, **schema}.items():
            sp.add_argument("--" + key.replace("_", "-"), dest=key, default=None,
                            help=f"{helptext} (default {default})")
    return p


def load_run_config(argv):
    """Parse ``argv`` into ``(command, params, field_section, domain_section)``."""
    args = build_parser().parse_args(argv)
    cmd = args.command
    file_params, field_sec, domain_sec = {}, {}, {}
    if args.config:
        cp = configparser.ConfigParser()
        try:
            if not cp.read(args.config):
                raise ConfigError(f"cannot read config file {args.config!r}")
        except configparser.Error as exc:
            raise ConfigError(f"malformed config file: {exc}") from exc
        allowed = {"run", cmd, "field", "domain"}
        extra = set(cp.sections()) - allowed
        if extra:
            raise ConfigError(f"unknown config sections for {cmd}: {sorted(extra)}")
        for sec in ("run", cmd):
            if cp.has_section(sec):
                file_params.update({k.replace("-", "_"): v for k, v in cp[sec].items()})
        if cp.has_section("field"):
            field_sec = dict(cp["field"])
        if cp.has_section("domain"):
            domain_sec = dict(cp["domain"])
    flags = {k: v for k, v in vars(args).items()
             if k not in ("command", "config", "field", "domain") and v is not None}
    params = validate_config(cmd, {**file_params, **flags})
    field_sec.update(_kv_list(args.field, "field"))
    domain_sec.update(_kv_list(args.domain, "domain"))
    return cmd, params, field_sec, domain_sec


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def _clean(obj):
    """JSON-safe copy: arrays to lists, non-finite floats to strings."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else repr(v)
    return obj


def dumps(report):
    # float repr is the shortest string that round-trips exactly
    return json.dumps(_clean(report), indent=2, sort_keys=True) + "\n"


def _versions():
    out = {"python": platform.python_version(), "numpy": np.__version__}
    for pkg in ("ellipsoid-lab", "scipy", "numba"):
        try:
            out[pkg] = metadata.version(pkg)
        except metadata.PackageNotFoundError:
            out[pkg] = None
    return out


def _to_csv(report):
    buf = io.StringIO()
    w = csv.writer(buf)
    rows = report.get("records")
    if rows:
        keys = list(rows[0].keys())
        w.writerow(keys)
        for r in rows:
            w.writerow([json.dumps(_clean(r[k])) if isinstance(r[k], (list, dict)) else
                        _clean(r[k]) for k in keys])
    else:
        w.writerow(["key", "value"])
        for k, v in report.items():
            if k != "provenance":
                w.writerow([k, json.dumps(_clean(v)) if isinstance(v, (list, dict)) else
                            _clean(v)])
    return buf.getvalue()


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def _field_and_domain(field_sec, domain_sec):
    fld = field_from_mapping(field_sec or {"kind": "constant"})
    dom_sec = dict(domain_sec)
    if not dom_sec:
        dom_sec = {"kind": "ball", "center": ",".join(["0"] * fld.n), "radius": "1"}
    dom = domain_from_mapping(dom_sec)
    if dom.n != fld.n:
        raise ConfigError(f"field dimension {fld.n} differs from domain dimension {dom.n}")
    return fld, dom


def _payoff(p, n):
    from .dpp import make_payoff
    vals = list(parse_vector(p["payoff_params"])) if p["payoff_params"] else []
    return make_payoff(p["payoff"], vals, n)


def cmd_coupling(p, field_sec, domain_sec):
    from . import coupling as cp
    from .matcore import EllipticityClass, eig_sym
    if p["a1"] is None:
        raise ConfigError("coupling needs --a1")
    a1 = parse_matrix(p["a1"])
    a2 = parse_matrix(p["a2"]) if p["a2"] else a1
    n = a1.shape[0]
    d = parse_vector(p["direction"]) if p["direction"] else np.eye(n)[0]
    w = cp.WeightMatrix.along(d, p["alpha"])
    opt = cp.optimal_coupling(a1, a2, w)
    q_m = cp.mirror_coupling(w)
    ev = np.concatenate([eig_sym(a1)[0], eig_sym(a2)[0]])
    cls = EllipticityClass(n, float(ev.min()), float(ev.max()))
    closeness, sufficient = cp.continuity_margin(a1, a2, cls, p["alpha"])
    report = {
        "optimal": opt.as_dict(),
        "mirror": {"Q": q_m, "objective": cp.trace_objective(a1, a2, q_m, w)},
        "medium_distance_Q": cp.medium_distance_coupling(a1, a2, d),
        "class": {"n": n, "lam": cls.lam, "Lam": cls.Lam},
        "constant_coefficient_bound": -4.0 * (1.0 - p["alpha"]) * cls.lam,
        "min_trace_bound": cp.min_trace_bound(cls, p["alpha"]) if n >= 2 else None,
        "continuity": {"closeness": closeness, "sufficient": sufficient},
    }
    return report, EXIT_OK


def cmd_thresholds(p, field_sec, domain_sec):
    from . import coupling as cp
    from .matcore import EllipticityClass
    report = {"n": p["n"], "alpha": p["alpha"], **cp.thresholds(p["n"], p["alpha"])}
    if p["lam"] is not None or p["lam_upper"] is not None:
        lam = p["lam"] if p["lam"] is not None else 1.0
        cls = EllipticityClass(p["n"], lam, p["lam_upper"] if p["lam_upper"] is not None else lam)
        report.update(tau=cp.tau(cls, p["alpha"]),
                      min_trace_bound=cp.min_trace_bound(cls, p["alpha"]),
                      distortion=cls.distortion())
    return report, EXIT_OK


def cmd_verify(p, field_sec, domain_sec):
    from . import comparison as cm
    fld = field_from_mapping(field_sec or {"kind": "constant"})
    k = cm.build_constants(fld.cls, p["alpha"], p["r"], p["sup_u"])
    lam = fld.cls.lam
    rng = np.random.default_rng(p["seed"])
    if p["regime"] == "large":
        eps = p["eps"] if p["eps"] is not None else 0.5 * p["r"] / (k.N * math.sqrt(lam))
    else:
        eps = p["eps"] if p["eps"] is not None else 0.01 * p["r"]
    unit = math.sqrt(lam) * eps
    records = []
    while len(records) < p["pairs"]:
        x = rng.uniform(-1, 1, fld.n) * p["r"] / math.sqrt(fld.n)
        if p["regime"] == "large":
            z = rng.uniform(-1, 1, fld.n) * p["r"] / math.sqrt(fld.n)
            if np.linalg.norm(x - z) <= k.N * unit:
                continue
        else:
            dirn = rng.standard_normal(fld.n)
            z = x - dirn / np.linalg.norm(dirn) * unit * rng.uniform(0.51, min(10.0, k.N))
            if np.linalg.norm(z) > k.r:
                continue
        q, branch = cm.key_inequality_coupling(x, z, fld, eps, k)
        res = cm.verify_key_inequality(x, z, fld, q, eps, k, rng=rng, samples=p["samples"])
        rec = {"x": x, "z": z, "branch": branch, **res.as_dict()}
        if branch == "medium" and fld.cls.distortion() <= 3.0:
            f2r = cm.f2_average_lower_bound_check(x, z, fld, eps, k, p["samples"], rng)
            rec["f2_bound"] = f2r.as_dict()
        records.append(rec)
    report = {
        "constants": k.as_dict(),
        "invariants": k.invariants(),
        "short_distance_chain": cm.short_distance_chain(k),
        "eps": eps,
        "field": fld.describe(),
        "all_hold": all(r["verdict"] == "holds" for r in records),
        "records": records,
    }
    return report, EXIT_OK


def _solve(p, field_sec, domain_sec):
    from .dpp import solve_dpp
    fld, dom = _field_and_domain(field_sec, domain_sec)
    h = p["h"] if p["h"] is not None else p["eps"] / 4.0
    return solve_dpp(fld, dom, _payoff(p, fld.n), p["eps"], h, p["tol"], p["max_iters"],
                     p["method"])


def cmd_solve(p, field_sec, domain_sec):
    sol = _solve(p, field_sec, domain_sec)
    report = sol.metadata()
    if p["output"]:
        sol.to_csv(p["output"] + ".csv")
        report["csv"] = p["output"] + ".csv"
    return report, EXIT_OK if sol.converged else EXIT_NONCONVERGED


def cmd_holder(p, field_sec, domain_sec):
    from .dpp import holder_estimate
    sol = _solve(p, field_sec, domain_sec)
    q, pair = holder_estimate(sol, p["alpha"], p["r_inner"])
    report = {"quotient": q, "pair": pair, "solve": sol.metadata()}
    return report, EXIT_OK if sol.converged else EXIT_NONCONVERGED


def cmd_walk(p, field_sec, domain_sec):
    from .walks import exit_estimate
    fld, dom = _field_and_domain(field_sec, domain_sec)
    st = exit_estimate(fld, dom, _payoff(p, fld.n), parse_vector(p["x0"]), p["eps"],
                       p["runs"], seed=p["seed"], step_cap=p["step_cap"])
    return st.as_dict(), EXIT_OK


def cmd_coupled_walk(p, field_sec, domain_sec):
    from .walks import coupled_walks
    fld, dom = _field_and_domain(field_sec, domain_sec)
    s = coupled_walks(fld, dom, parse_vector(p["x0"]), parse_vector(p["z0"]), p["eps"],
                      p["strategy"], p["runs"], seed=p["seed"], step_cap=p["step_cap"],
                      alpha=p["alpha"])
    return {"strategy": p["strategy"], **s.as_dict()}, EXIT_OK


def cmd_counterexample(p, field_sec, domain_sec):
    from . import counterexamples as ce
    rng = np.random.default_rng(p["seed"])
    if p["case"] == "2d":
        rep = ce.counterexample_2d(p["samples"], p["grid"] or 720, rng)
        rep["parallel_bound_holds"] = rep["max_parallel"] <= ce.PARALLEL_2D
        rep["orthogonal_floor_holds"] = rep["min_orthogonal"] >= ce.FLOOR_2D
    else:
        rep = ce.counterexample_3d(p["samples"], p["grid"] or 1000, rng)
        rep["parallel_bound_holds"] = rep["max_parallel"] <= ce.PARALLEL_3D
        rep["orthogonal_floor_holds"] = rep["min_orthogonal"] >= ce.ORTHOGONAL_3D
    return rep, EXIT_OK


COMMANDS = {
    "coupling": cmd_coupling,
    "thresholds": cmd_thresholds,
    "verify": cmd_verify,
    "solve": cmd_solve,
    "walk": cmd_walk,
    "coupled-walk": cmd_coupled_walk,
    "holder": cmd_holder,
    "counterexample": cmd_counterexample,
}


def run(command, params, field_sec=None, domain_sec=None):
    """Dispatch one command; returns ``(report, exit_status)``."""
    field_sec, domain_sec = field_sec or {}, domain_sec or {}
    threads = params.get("threads") or os.environ.get("ELLIPSOID_LAB_THREADS")
    if threads:
        _accel.set_threads(int(threads))
    report, status = COMMANDS[command](params, field_sec, domain_sec)
    report["provenance"] = {
        "command": command,
        "config": {k: v for k, v in params.items() if v is not None},
        "field": field_sec,
        "domain": domain_sec,
        "seed": params["seed"],
        "backend": _accel.backend(),
        "versions": _versions(),
    }
    return report, status


def _emit(report, params, command):
    fmt = params["format"]
    text = _to_csv(report) if fmt == "csv" else dumps(report)
    out = params["output"]
    if out:
        path = out + ".json" if command == "solve" and fmt == "json" else out
        if command == "solve" and fmt == "csv":
            path = out + ".report.csv"
        with open(path, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def main(argv=None):
    try:
        command, params, field_sec, domain_sec = load_run_config(argv)
        report, status = run(command, params, field_sec, domain_sec)
        _emit(report, params, command)
        return status
    except ConvergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGED
    except (EllipsoidLabError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
