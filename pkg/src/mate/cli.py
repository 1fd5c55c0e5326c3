"""Command-line front end.

    mate <check|solve|mms|compare|balance> --config run.ini [--require a,b] [--out DIR]

The config is an INI file with flat ``key = value`` sections; see
``examples`` in the README for a complete one.  Exit codes: 0 ok, 2 a
required check failed, 3 solver failure, 4 config error.
"""
from __future__ import annotations

import argparse
import configparser
import difflib
import json
import os
import re
import sys
from dataclasses import dataclass, field

import numpy as np

from . import conditions as cond
from .discretize import eig2, write_grid_csv
from .errors import ConfigError, MateError, SolverError
from .geometry import Domain
from .model import (
    BUILTIN_COSTS,
    BUILTIN_G,
    ProblemSpec,
    make_conformal_A,
    make_oblique_G,
    make_ot_A,
    make_zero_A,
    parse_expression,
)
from .schemas import dumps, to_jsonable
from .solver import DiscreteSystem, SolveOptions, continuation_solve
from .verify import CASES, check_comparison, get_case, mms_study

COMMANDS = ("check", "solve", "mms", "compare", "balance")
EXIT_OK, EXIT_CHECK, EXIT_SOLVER, EXIT_CONFIG = 0, 2, 3, 4

A_NAMES = ("zero", "conformal") + tuple(f"ot:{c}" for c in BUILTIN_COSTS)
BOUNDARY_NAMES = ("neumann",) + tuple(f"oblique:{g}" for g in BUILTIN_G if g != "neumann")
CHECK_NAMES = ("regularity", "strict_regularity", "monotonicity", "A_convexity", "QS",
               "oblique_concavity", "solution_bounds", "mass_balance")
DEFAULT_CHECKS = ("regularity", "monotonicity", "A_convexity", "QS", "oblique_concavity")

SCHEMA = {
    "domain": ("kind", "radius", "center", "extents", "corner_convention"),
    "grid": ("n_r", "n_theta", "n_x", "n_y"),
    "problem": ("A", "inversion", "B", "boundary", "phi", "z_interval", "pin", "name"),
    "checks": ("run", "K", "z_count", "p_max", "p_count", "direction_count", "boundary_count",
               "interior_count", "polish"),
    "solve": ("tol", "max_iter", "margin_floor", "path_tol", "initial_step", "min_step", "gamma", "pin"),
    "mms": ("case", "resolutions"),
    "compare": ("shift",),
    "balance": ("f", "f_star", "target_kind", "target_radius", "target_center", "target_extents",
                "resolution"),
    "output": ("dir",),
}


def _nearest(word, choices):
    match = difflib.get_close_matches(word, list(choices), n=1, cutoff=0.5)
    return f" (did you mean {match[0]!r}?)" if match else ""


@dataclass
class RunConfig:
    path: str
    domain: Domain
    resolution: tuple
    problem: ProblemSpec
    problem_desc: dict
    checks: tuple = DEFAULT_CHECKS
    box: cond.SampleBox | None = None
    K: float = 1.0
    solve: SolveOptions = field(default_factory=SolveOptions)
    mms_case: str = "MA-DISK"
    mms_resolutions: tuple = (32, 64, 128)
    compare_shift: float = 0.1
    balance: dict = field(default_factory=dict)
    out_dir: str = "mate_out"


class _Reader:
    """Typed access to a parsed INI file with line-numbered diagnostics."""

    def __init__(self, path):
        self.path = path
        try:
            with open(path) as fh:
                self.text = fh.read()
        except OSError as exc:
            raise ConfigError(f"{path}: cannot read config ({exc.strerror})") from exc
        self.cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
        self.cp.optionxform = str
        try:
            self.cp.read_string(self.text, source=path)
        except configparser.Error as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        self._validate_names()

    def _line(self, section, key=None):
        lines = self.text.splitlines()
        in_section = False
        for i, line in enumerate(lines, 1):
            s = line.strip()
            if s.startswith("["):
                in_section = s == f"[{section}]"
                if in_section and key is None:
                    return i
                continue
            if in_section and key is not None and re.match(rf"{re.escape(key)}\s*[=:]", s):
                return i
        return 0

    def error(self, section, key, message):
        line = self._line(section, key)
        where = f"{self.path}:{line}" if line else self.path
        field_name = f"[{section}] {key}" if key else f"[{section}]"
        return ConfigError(f"{where}: {field_name}: {message}")

    def _validate_names(self):
        for section in self.cp.sections():
            if section not in SCHEMA:
                raise self.error(section, None, "unknown section" + _nearest(section, SCHEMA))
            for key in self.cp[section]:
                if key not in SCHEMA[section]:
                    raise self.error(section, key, "unknown key" + _nearest(key, SCHEMA[section]))

    def has(self, section, key):
        return self.cp.has_option(section, key)

    def str(self, section, key, default=None):
        if not self.has(section, key):
            if default is None:
                raise self.error(section, key, "missing required value")
            return default
        return self.cp[section][key].strip()

    def num(self, section, key, default=None, kind=float):
        if not self.has(section, key):
            if default is None:
                raise self.error(section, key, "missing required value")
            return default
        raw = self.cp[section][key].strip()
        try:
            return kind(raw)
        except ValueError:
            raise self.error(section, key, f"expected {kind.__name__}, got {raw!r}") from None

    def vec(self, section, key, default=None, length=None):
        if not self.has(section, key):
            if default is None:
                raise self.error(section, key, "missing required value")
            return default
        raw = self.cp[section][key]
        try:
            vals = tuple(float(v) for v in re.split(r"[,\s]+", raw.strip()) if v)
        except ValueError:
            raise self.error(section, key, f"expected numbers, got {raw.strip()!r}") from None
        if length is not None and len(vals) != length:
            raise self.error(section, key, f"expected {length} numbers, got {len(vals)}")
        return vals

    def names(self, section, key, default, choices):
        if not self.has(section, key):
            return tuple(default)
        out = []
        for name in (v.strip() for v in self.cp[section][key].split(",")):
            if not name:
                continue
            if name not in choices:
                raise self.error(section, key, f"unknown name {name!r}" + _nearest(name, choices))
            out.append(name)
        return tuple(out)


def _domain(rd: _Reader, section="domain", prefix=""):
    kind = rd.str(section, prefix + "kind", "disk")
    if kind == "disk":
        radius = rd.num(section, prefix + "radius", 1.0)
        center = rd.vec(section, prefix + "center", (0.0, 0.0), 2)
        try:
            return Domain.disk(radius, center)
        except ValueError as exc:
            raise rd.error(section, prefix + "radius", str(exc)) from None
    if kind == "rectangle":
        extents = rd.vec(section, prefix + "extents", (1.0, 1.0), 2)
        center = rd.vec(section, prefix + "center", (0.5, 0.5), 2)
        conv = rd.str(section, "corner_convention", "average") if not prefix else "average"
        try:
            return Domain.rectangle(extents, center, conv)
        except ValueError as exc:
            raise rd.error(section, prefix + "extents", str(exc)) from None
    raise rd.error(section, prefix + "kind", f"unknown domain kind {kind!r}" + _nearest(kind, ("disk", "rectangle")))


def _expression(rd, section, key, default=None, positive=False):
    text = rd.str(section, key, default)
    try:
        return parse_expression(text, positive=positive)
    except (SyntaxError, NameError) as exc:
        raise rd.error(section, key, f"cannot parse {text!r}: {exc}") from None


def load_config(path) -> RunConfig:
    """Parse and fully validate a run config; raises ConfigError with file:line diagnostics."""
    rd = _Reader(path)
    domain = _domain(rd)
    if domain.kind == "disk":
        resolution = (rd.num("grid", "n_r", 32, int), rd.num("grid", "n_theta", 64, int))
    else:
        resolution = (rd.num("grid", "n_x", 33, int), rd.num("grid", "n_y", 33, int))
    a, b = resolution
    if domain.kind == "disk" and (a < 4 or b < 8 or b % 2):
        raise rd.error("grid", "n_theta", f"disk grid needs n_r >= 4 and even n_theta >= 8, got ({a}, {b})")
    if domain.kind == "rectangle" and min(a, b) < 5:
        raise rd.error("grid", "n_x", f"rectangle grid needs n_x, n_y >= 5, got ({a}, {b})")

    A_name = rd.str("problem", "A", "zero")
    if A_name not in A_NAMES:
        raise rd.error("problem", "A", f"unknown matrix {A_name!r}" + _nearest(A_name, A_NAMES))
    if A_name == "zero":
        A = make_zero_A()
    elif A_name == "conformal":
        A = make_conformal_A()
    else:
        inversion = rd.str("problem", "inversion", "auto")
        if inversion not in ("auto", "newton", "closed"):
            raise rd.error("problem", "inversion", f"unknown inversion {inversion!r}"
                           + _nearest(inversion, ("auto", "newton", "closed")))
        A = make_ot_A(A_name.split(":", 1)[1], inversion)
    B_text = rd.str("problem", "B", "1")
    B = _expression(rd, "problem", "B", "1", positive=True)
    bname = rd.str("problem", "boundary", "neumann")
    if bname not in BOUNDARY_NAMES:
        raise rd.error("problem", "boundary", f"unknown boundary operator {bname!r}" + _nearest(bname, BOUNDARY_NAMES))
    phi_text = rd.str("problem", "phi")
    phi = _expression(rd, "problem", "phi")
    params = BUILTIN_G["neumann" if bname == "neumann" else bname.split(":", 1)[1]]
    G = make_oblique_G(domain, phi, **params)
    z_interval = rd.vec("problem", "z_interval", (0.0, 1.0), 2)
    pin = None
    pin_sections = [sec for sec in ("problem", "solve") if rd.has(sec, "pin")]
    if len(pin_sections) == 2:
        raise rd.error("solve", "pin", "pin given in both [problem] and [solve]")
    if pin_sections:
        x1, x2, val = rd.vec(pin_sections[0], "pin", length=3)
        pin = ((x1, x2), val)
    try:
        problem = ProblemSpec(domain, A, B, G, z_interval=z_interval, pin=pin,
                              name=rd.str("problem", "name", "problem"))
    except ValueError as exc:
        key = "pin" if "pin" in str(exc) else "z_interval"
        raise rd.error("problem", key, str(exc)) from None
    desc = {"A": A_name, "B": B_text, "boundary": bname, "phi": phi_text, "z_interval": list(z_interval),
            "pin": None if pin is None else [pin[0][0], pin[0][1], pin[1]], "domain": domain.describe()}

    checks = rd.names("checks", "run", DEFAULT_CHECKS, CHECK_NAMES)
    box_kw = {}
    for key in ("z_count", "p_count", "direction_count", "boundary_count", "interior_count"):
        if rd.has("checks", key):
            box_kw[key] = rd.num("checks", key, kind=int)
    if rd.has("checks", "p_max"):
        box_kw["p_max"] = rd.num("checks", "p_max")
    if rd.has("checks", "polish"):
        box_kw["polish"] = rd.str("checks", "polish").lower() in ("1", "true", "yes", "on")
    try:
        box = cond.SampleBox(domain=domain, z_interval=tuple(z_interval), **box_kw)
    except ValueError as exc:
        raise rd.error("checks", None, str(exc)) from None

    try:
        solve = SolveOptions(
            tol=rd.num("solve", "tol", 1e-10),
            max_iter=rd.num("solve", "max_iter", 50, int),
            margin_floor=rd.num("solve", "margin_floor", 1e-6),
            path_tol=rd.num("solve", "path_tol", 1e-10),
            initial_step=rd.num("solve", "initial_step", 0.25),
            min_step=rd.num("solve", "min_step", 1.0 / 1024),
            gamma=rd.num("solve", "gamma", 1.0),
        )
    except ValueError as exc:
        raise rd.error("solve", None, str(exc)) from None
    case = rd.str("mms", "case", "MA-DISK")
    if case not in CASES:
        raise rd.error("mms", "case", f"unknown case {case!r}" + _nearest(case, CASES))
    resolutions = tuple(int(v) for v in rd.vec("mms", "resolutions", (32, 64, 128)))
    if len(resolutions) < 3 or any(b != 2 * a for a, b in zip(resolutions, resolutions[1:])):
        raise rd.error("mms", "resolutions", "need at least three resolutions, each doubling the previous")

    balance = {}
    if rd.cp.has_section("balance") or "mass_balance" in checks:
        balance = {
            "f": _expression(rd, "balance", "f", "1"),
            "f_star": _expression(rd, "balance", "f_star", "1"),
            "f_text": rd.str("balance", "f", "1"),
            "f_star_text": rd.str("balance", "f_star", "1"),
            "target": _domain(rd, "balance", "target_") if rd.has("balance", "target_kind") else domain,
            "resolution": rd.num("balance", "resolution", 256, int),
        }
    return RunConfig(
        path=str(path),
        domain=domain,
        resolution=resolution,
        problem=problem,
        problem_desc=desc,
        checks=checks,
        box=box,
        K=rd.num("checks", "K", 1.0),
        solve=solve,
        mms_case=case,
        mms_resolutions=resolutions,
        compare_shift=rd.num("compare", "shift", 0.1),
        balance=balance,
        out_dir=rd.str("output", "dir", "mate_out"),
    )


# ---------------------------------------------------------------------------


def _run_check(name, cfg: RunConfig):
    prob, box = cfg.problem, cfg.box
    if name in ("regularity", "strict_regularity"):
        return cond.check_regularity(prob.A, box, strict=name == "strict_regularity")
    if name == "monotonicity":
        return cond.check_monotonicity(prob.A, prob.B, prob.G, box)
    if name == "A_convexity":
        return cond.check_A_convexity(prob.domain, prob.A, prob.G.phi, prob.z_interval, box)
    if name == "QS":
        return cond.check_QS(prob.A, box)
    if name == "oblique_concavity":
        return cond.check_oblique_concavity(prob.G, prob.domain, box)
    if name == "solution_bounds":
        return cond.check_solution_bounds(prob.A, prob.B, prob.G.phi, cfg.K, box)
    if name == "mass_balance":
        bal = cfg.balance
        return cond.check_mass_balance(bal["f"], bal["f_star"], cfg.domain, bal["target"], bal["resolution"])
    raise AssertionError(name)


def _write(out_dir, name, text):
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, name), "w") as fh:
        fh.write(text)


def _failed(reports, require):
    return [r for r in reports if r.condition in require and not r.passed]


def _print_failures(failed):
    for r in failed:
        print(f"required check {r.condition} failed: margin {r.margin:.6g} ({r.verdict}); "
              f"witness {json.dumps(to_jsonable(r.witness))}", file=sys.stderr)


def _cmd_check(cfg, require):
    names = list(cfg.checks) + [n for n in require if n not in cfg.checks and n in CHECK_NAMES]
    reports = [_run_check(n, cfg) for n in names]
    failed = _failed(reports, require)
    code = EXIT_CHECK if failed else EXIT_OK
    _print_failures(failed)
    return code, {"checks": [r.to_json() for r in reports], "failed": [r.condition for r in failed]}


def _solve(cfg):
    sys_ = DiscreteSystem(cfg.problem, resolution=cfg.resolution)
    u, report = continuation_solve(sys_, cfg.solve)
    return sys_, u, report


def _dump_solution(cfg, sys_, u, out_dir):
    res = sys_.residual(u)
    lam = np.full(sys_.grid.size, np.nan)
    lam[sys_.grid.interior] = eig2(sys_.evaluate(u)["w"])[0]
    path = os.path.join(out_dir, "solution.csv")
    os.makedirs(out_dir, exist_ok=True)
    write_grid_csv(path, sys_.grid, u, res, lam)


def _cmd_solve(cfg, require, out_dir):
    try:
        sys_, u, report = _solve(cfg)
    except SolverError as exc:
        msg = f"{type(exc).__name__}: {exc}"
        print(f"solver failure: {msg}", file=sys.stderr)
        out = {"failure": msg}
        if exc.report is not None:
            out["solve"] = exc.report.to_json()
            out["solve"]["failure"] = msg
        return EXIT_SOLVER, out
    _dump_solution(cfg, sys_, u, out_dir)
    out = {"solve": report.to_json(), "grid": sys_.grid.describe(),
           "seed_residual": report.seed_residual, "total_newton_iterations": report.total_iters,
           "notes": list(cfg.problem.notes)}
    return EXIT_OK, out


def _cmd_mms(cfg, require, out_dir):
    case = get_case(cfg.mms_case)
    try:
        table = mms_study(case, cfg.mms_resolutions, cfg.solve)
    except SolverError as exc:
        print(f"solver failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_SOLVER, {"case": case.name, "failure": f"{type(exc).__name__}: {exc}"}
    os.makedirs(out_dir, exist_ok=True)
    table.write_csv(os.path.join(out_dir, "orders.csv"))
    return EXIT_OK, table.to_json()


def _cmd_compare(cfg, require, out_dir):
    try:
        sys_, u, report = _solve(cfg)
    except SolverError as exc:
        print(f"solver failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_SOLVER, {"failure": f"{type(exc).__name__}: {exc}"}
    c = cfg.compare_shift
    pairs = {"u_vs_u_plus_shift": (u, u + c), "u_plus_shift_vs_u": (u + c, u),
             "u_vs_u_minus_shift": (u, u - c), "u_vs_u": (u, u)}
    results = {}
    for key, (a, b) in pairs.items():
        try:
            results[key] = check_comparison(a, b, sys_).to_json()
        except ValueError as exc:
            results[key] = {"verdict": "skipped", "reason": str(exc)}
    bad = [k for k, r in results.items() if r.get("verdict") == "inconsistent"]
    code = EXIT_CHECK if bad and "comparison" in require else EXIT_OK
    return code, {"solve": report.to_json(), "shift": c, "comparisons": results, "inconsistent": bad}


def _cmd_balance(cfg, require, out_dir):
    if not cfg.balance:
        raise ConfigError(f"{cfg.path}: [balance] section required for the balance command")
    r = _run_check("mass_balance", cfg)
    failed = _failed([r], require)
    _print_failures(failed)
    return (EXIT_CHECK if failed else EXIT_OK), {
        "checks": [r.to_json()],
        "densities": {"f": cfg.balance["f_text"], "f_star": cfg.balance["f_star_text"]},
        "target_domain": cfg.balance["target"].describe(),
    }


HANDLERS = {"check": _cmd_check, "solve": _cmd_solve, "mms": _cmd_mms, "compare": _cmd_compare,
            "balance": _cmd_balance}


def run(command: str, cfg: RunConfig, require=(), out_dir: str | None = None) -> int:
    """Execute ``command`` and write ``report.json`` (and CSV dumps) to the output directory."""
    if command not in COMMANDS:
        raise ConfigError(f"unknown command {command!r}" + _nearest(command, COMMANDS))
    out_dir = out_dir or cfg.out_dir
    require = tuple(require)
    unknown = [n for n in require if n not in CHECK_NAMES + ("comparison",)]
    if unknown:
        raise ConfigError(f"--require: unknown check {unknown[0]!r}" + _nearest(unknown[0], CHECK_NAMES))
    handler = HANDLERS[command]
    if command == "check":
        code, body = handler(cfg, require)
    else:
        code, body = handler(cfg, require, out_dir)
    report = {"command": command, "exit_code": code, "problem": cfg.problem_desc,
              "grid_resolution": list(cfg.resolution), "required": list(require)}
    report.update(body)
    _write(out_dir, "report.json", dumps(report))
    return code


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="mate", description="Monge-Ampere type BVP solver and structure-condition checker")
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", required=True, help="INI run configuration")
    parser.add_argument("--require", default="", help="comma-separated checks whose failure gives exit code 2")
    parser.add_argument("--out", default=None, help="output directory (overrides [output] dir)")
    args = parser.parse_args(argv)
    require = tuple(n.strip() for n in args.require.split(",") if n.strip())
    try:
        cfg = load_config(args.config)
        code = run(args.command, cfg, require, args.out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except MateError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    return code


if __name__ == "__main__":
    sys.exit(main())
