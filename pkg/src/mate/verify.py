"""Verification harness: manufactured solutions, comparison and sub/super checks,
jet and Jacobian consistency, and the weak-convexity diagnostic."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .discretize import Grid, eig2
from .errors import GridMismatch
from .geometry import Domain, boundary_positions
from .model import (
    BoundaryOperator,
    Field,
    ProblemSpec,
    ScalarField,
    eval_jet,
    make_conformal_A,
    make_neumann_G,
    make_ot_A,
    make_zero_A,
    parse_expression,
)
from .schemas import to_jsonable
from .solver import DiscreteSystem, SolveOptions, continuation_solve

# errors below this are at the roundoff level of the solve; an order
# computed from two of them carries no information
EXACT_FLOOR = 1e-9
ORDER_COLUMNS = ("resolution", "err_inf", "err_l2", "order_inf", "order_l2")


@dataclass
class ManufacturedCase:
    name: str
    u: Callable  # X (m, 2) -> (m,)
    gradient: Callable  # X -> (m, 2)
    hessian: Callable  # X -> (m, 2, 2)
    problem: ProblemSpec
    expected_margin: float
    description: str = ""

    def continuum_residual(self, X=None, count=256):
        """(interior, boundary) residuals of the exact solution, evaluated pointwise."""
        prob = self.problem
        if X is None:
            rng = np.random.default_rng(0)
            r = prob.domain.radius * np.sqrt(rng.uniform(0, 1, count))
            t = rng.uniform(0, 2 * np.pi, count)
            X = np.asarray(prob.domain.center) + np.stack([r * np.cos(t), r * np.sin(t)], axis=1)
        u, g, H = self.u(X), self.gradient(X), self.hessian(X)
        w = H - eval_jet(prob.A, X, u, g, order=0).value
        det = w[:, 0, 0] * w[:, 1, 1] - w[:, 0, 1] ** 2
        interior = np.log(det) - np.log(eval_jet(prob.B, X, u, g, order=0).value)
        Xb = boundary_positions(prob.domain, count)
        boundary = eval_jet(prob.G, Xb, self.u(Xb), self.gradient(Xb), order=0).value
        return interior, boundary


def _quadratic(scale):
    return (
        lambda X: scale * np.einsum("mk,mk->m", X, X),
        lambda X: 2.0 * scale * X,
        lambda X: np.broadcast_to(2.0 * scale * np.eye(2), (len(X), 2, 2)).copy(),
    )


def _range(u, domain, n=64):
    r = np.linspace(0, domain.radius, n)
    t = np.linspace(0, 2 * np.pi, 2 * n, endpoint=False)
    R, T = np.meshgrid(r, t, indexing="ij")
    X = np.asarray(domain.center) + np.stack([(R * np.cos(T)).ravel(), (R * np.sin(T)).ravel()], axis=1)
    v = u(X)
    return float(v.min()), float(v.max())


def ma_disk() -> ManufacturedCase:
    """A = 0, B = 1, D_nu u = u - 3/2 on the unit disk; u* = |x|^2 / 2."""
    D = Domain.disk()
    u, g, H = _quadratic(0.5)
    prob = ProblemSpec(D, make_zero_A(), parse_expression("1", positive=True), make_neumann_G(D, "z - 3/2"),
                       z_interval=_range(u, D), name="MA-DISK")
    return ManufacturedCase("MA-DISK", u, g, H, prob, 1.0, "det D^2u = 1, u* = |x|^2/2")


def conf_disk() -> ManufacturedCase:
    """Conformal A, B = 1/4 - |x|^4/64, D_nu u = u - 3/4; u* = |x|^2 / 4."""
    D = Domain.disk()
    u, g, H = _quadratic(0.25)
    prob = ProblemSpec(D, make_conformal_A(), parse_expression("1/4 - r2^2/64", positive=True),
                       make_neumann_G(D, "z - 3/4"), z_interval=_range(u, D), name="CONF-DISK")
    return ManufacturedCase("CONF-DISK", u, g, H, prob, 3.0 / 8.0, "conformal matrix, u* = |x|^2/4")


def ot_quad() -> ManufacturedCase:
    """A = -I from the cost -|x-y|^2/2, B = 4, D_nu u = u - 3/2; u* = |x|^2 / 2."""
    D = Domain.disk()
    u, g, H = _quadratic(0.5)
    prob = ProblemSpec(D, make_ot_A("quadratic"), parse_expression("4", positive=True),
                       make_neumann_G(D, "z - 3/2"), z_interval=_range(u, D), name="OT-QUAD")
    return ManufacturedCase("OT-QUAD", u, g, H, prob, 2.0, "quadratic cost, u* = |x|^2/2")


def ma_disk_exp() -> ManufacturedCase:
    """A = 0 with the non-polynomial u* = |x|^2/2 + exp(x1)/10.

    det D^2u* = 1 + exp(x1)/10 and D_nu u* = -1 - x1 exp(x1)/10 on |x| = 1.
    Unlike the quadratic cases, the scheme is not exact here, so this case
    exhibits the truncation order.
    """
    D = Domain.disk()

    def u(X):
        return 0.5 * np.einsum("mk,mk->m", X, X) + 0.1 * np.exp(X[:, 0])

    def g(X):
        out = X.copy()
        out[:, 0] += 0.1 * np.exp(X[:, 0])
        return out

    def H(X):
        out = np.broadcast_to(np.eye(2), (len(X), 2, 2)).copy()
        out[:, 0, 0] += 0.1 * np.exp(X[:, 0])
        return out

    prob = ProblemSpec(D, make_zero_A(), parse_expression("1 + 0.1*exp(x1)", positive=True),
                       make_neumann_G(D, "z - 3/2 - 0.1*(1 + x1)*exp(x1)"), z_interval=_range(u, D),
                       name="MA-DISK-EXP")
    return ManufacturedCase("MA-DISK-EXP", u, g, H, prob, 1.0, "non-polynomial exact solution")


CASES = {"MA-DISK": ma_disk, "CONF-DISK": conf_disk, "OT-QUAD": ot_quad, "MA-DISK-EXP": ma_disk_exp}


def get_case(name: str) -> ManufacturedCase:
    try:
        return CASES[name]()
    except KeyError:
        raise KeyError(f"unknown manufactured case {name!r}; known: {sorted(CASES)}") from None


def case_resolution(case: ManufacturedCase, n: int):
    if case.problem.domain.kind == "disk":
        return (n, 2 * n)
    return (n + 1, n + 1)


# ---------------------------------------------------------------------------
# convergence study


@dataclass
class OrderTable:
    case: str
    rows: list = field(default_factory=list)
    reports: list = field(default_factory=list)

    def orders(self, key="order_inf"):
        return [r[key] for r in self.rows[1:]]

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(ORDER_COLUMNS)
            for r in self.rows:
                w.writerow([r["resolution"]] + [_fmt(r[k]) for k in ORDER_COLUMNS[1:]])

    def to_json(self):
        return to_jsonable({"case": self.case, "rows": self.rows,
                            "solves": [rep.to_json() for rep in self.reports]})


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float) and math.isinf(v):
        return "inf"
    return repr(float(v))


def observed_order(e_coarse, e_fine, floor=EXACT_FLOOR):
    """log2(e_coarse / e_fine); infinite when both errors are at the roundoff floor."""
    if e_coarse <= floor and e_fine <= floor:
        return math.inf
    if e_fine <= 0:
        return math.inf
    return math.log2(e_coarse / e_fine)


def mms_study(case: ManufacturedCase, resolutions=(32, 64, 128), opts: SolveOptions | None = None) -> OrderTable:
    """Continuation-solve at each resolution and tabulate errors against u*."""
    resolutions = [int(n) for n in resolutions]
    if len(resolutions) < 3:
        raise ValueError("mms_study needs at least three resolutions")
    if any(b != 2 * a for a, b in zip(resolutions, resolutions[1:])):
        raise ValueError("each resolution must double the previous one")
    table = OrderTable(case.name)
    prev = None
    for n in resolutions:
        sys = DiscreteSystem(case.problem, resolution=case_resolution(case, n))
        u, report = continuation_solve(sys, opts)
        exact = case.u(sys.grid.X)
        diff = u - exact
        if case.problem.pin is None and not sys.strictly_monotone(u):
            diff = diff - np.sum(sys.grid.weights * diff) / np.sum(sys.grid.weights)
        e_inf = float(np.max(np.abs(diff)))
        e_l2 = float(np.sqrt(np.sum(sys.grid.weights * diff**2)))
        row = {"resolution": n, "err_inf": e_inf, "err_l2": e_l2, "order_inf": None, "order_l2": None}
        if prev is not None:
            row["order_inf"] = observed_order(prev["err_inf"], e_inf)
            row["order_l2"] = observed_order(prev["err_l2"], e_l2)
        table.rows.append(row)
        table.reports.append(report)
        prev = row
    return table


# ---------------------------------------------------------------------------
# comparison principle and sub/supersolutions


def _tol(*arrays):
    scale = 0.0
    for a in arrays:
        a = np.asarray(a, dtype=float)
        a = a[np.isfinite(a)]
        if a.size:
            scale = max(scale, float(np.max(np.abs(a))))
    return 1e-8 * (1.0 + scale)


@dataclass
class VerifyReport:
    check: str
    verdict: str
    holds: bool
    values: dict = field(default_factory=dict)

    def to_json(self):
        return to_jsonable({"check": self.check, "verdict": self.verdict, "holds": self.holds, **self.values})


def _operator_values(sys: DiscreteSystem, u):
    """F = log det w - log B where w is positive definite (NaN elsewhere), and G."""
    ev = sys.evaluate(u)
    F = np.full(len(ev["det"]), np.nan)
    ok = ev["lam_min"] > 0
    F[ok] = np.log(ev["det"][ok]) - np.log(ev["B"][ok])
    return F, ev["G"], ok


def check_comparison(u, v, sys: DiscreteSystem, tol: float | None = None, tol_compare: float | None = None) -> VerifyReport:
    """Discrete form of the comparison principle: F[u] >= F[v], G[u] >= G[v] should give u <= v.

    Interior rows where v is not elliptic are skipped.
    """
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    n = sys.grid.size
    if u.shape != (n,) or v.shape != (n,):
        raise GridMismatch(f"grid functions of shape {u.shape}, {v.shape} on a grid of {n} nodes")
    Fu, Gu, ok_u = _operator_values(sys, u)
    if not np.all(ok_u):
        raise ValueError("check_comparison needs u elliptic at every interior node")
    Fv, Gv, ok_v = _operator_values(sys, v)
    tol = _tol(Fu, Fv, Gu, Gv) if tol is None else tol
    gap_int = Fu[ok_v] - Fv[ok_v]
    gap_bdy = Gu - Gv
    interior_ok = bool(np.all(gap_int >= -tol))
    boundary_ok = bool(np.all(gap_bdy >= -tol))
    hyp = interior_ok and boundary_ok
    max_diff = float(np.max(u - v))
    if tol_compare is None:
        tol_compare = 1e-8 * (1.0 + max(np.max(np.abs(u)), np.max(np.abs(v))))
    if hyp:
        verdict = "consistent" if max_diff <= tol_compare else "inconsistent"
    else:
        verdict = "no claim"
    return VerifyReport(
        "comparison",
        verdict,
        verdict != "inconsistent",
        {
            "hypotheses_hold": hyp,
            "interior_hypothesis": interior_ok,
            "boundary_hypothesis": boundary_ok,
            "min_interior_gap": float(gap_int.min()) if gap_int.size else None,
            "min_boundary_gap": float(gap_bdy.min()),
            "skipped_interior_nodes": int(np.sum(~ok_v)),
            "max_u_minus_v": max_diff,
            "tol": tol,
            "tol_compare": tol_compare,
        },
    )


def check_super_sub(w, sys: DiscreteSystem, role: str, tol: float | None = None) -> VerifyReport:
    """Super: det(D^2w - A) - B <= tol where w is elliptic, and G[w] <= tol.
    Sub: w elliptic everywhere, det(D^2w - A) - B >= -tol and G[w] >= -tol.
    """
    if role not in ("super", "sub"):
        raise ValueError("role must be 'super' or 'sub'")
    w = np.asarray(w, dtype=float)
    if w.shape != (sys.grid.size,):
        raise GridMismatch(f"grid function of shape {w.shape} on a grid of {sys.grid.size} nodes")
    ev = sys.evaluate(w)
    ok = ev["lam_min"] > 0
    gap = ev["det"] - ev["B"]
    G = ev["G"]
    tol = _tol(ev["det"], ev["B"], G) if tol is None else tol
    values = {"elliptic_nodes": int(ok.sum()), "interior_nodes": int(ok.size), "tol": tol}
    if role == "super":
        worst_int = float(np.max(gap[ok])) if ok.any() else None
        worst_bdy = float(np.max(G))
        int_ok = worst_int is None or worst_int <= tol
        bdy_ok = worst_bdy <= tol
        values["interior_status"] = "vacuously holds (0 elliptic nodes)" if not ok.any() else (
            "holds" if int_ok else "fails")
        values["max_interior_gap"] = worst_int
        values["max_boundary_G"] = worst_bdy
    else:
        elliptic = bool(ok.all())
        worst_int = float(np.min(gap))
        worst_bdy = float(np.min(G))
        int_ok = elliptic and worst_int >= -tol
        bdy_ok = worst_bdy >= -tol
        values["interior_status"] = "holds" if int_ok else ("not elliptic" if not elliptic else "fails")
        values["min_interior_gap"] = worst_int
        values["min_boundary_G"] = worst_bdy
    values["boundary_status"] = "holds" if bdy_ok else "fails"
    holds = bool(int_ok and bdy_ok)
    return VerifyReport(f"{role}solution", "holds" if holds else "fails", holds, values)


# ---------------------------------------------------------------------------
# jets, Jacobian and the gradient-bound hypothesis


DERIVATIVE_SEED = 42


def _samples(fld, count, seed):
    rng = np.random.default_rng(seed)
    if isinstance(fld, BoundaryOperator) and fld.domain is not None:
        X = boundary_positions(fld.domain, max(count, 4), include_corners=False)[:count]
    else:
        X = rng.uniform(-1.0, 1.0, (count, 2))
    z = rng.uniform(-1.0, 1.0, count)
    p = rng.uniform(-2.0, 2.0, (count, 2))
    return X, z, p


def _fd_copy(fld: Field) -> Field:
    twin = type(fld).__new__(type(fld))
    twin.__dict__.update(fld.__dict__)
    twin.jet = None
    return twin


def derivative_check(fld: Field, order: int = 1, count: int = 100, seed: int = DERIVATIVE_SEED) -> float:
    """Max relative error between analytic and finite-difference jets.

    ``order = 1`` compares D_x, D_z and D_p; ``order = 2`` compares D_pp.
    """
    if fld.jet is None:
        raise ValueError(f"{fld.name} has no analytic jets to check")
    X, z, p = _samples(fld, count, seed)
    a = eval_jet(fld, X, z, p, order=order)
    f = eval_jet(_fd_copy(fld), X, z, p, order=order)
    names = ("dx", "dz", "dp") if order == 1 else ("dpp",)
    err = 0.0
    for name in names:
        da, df = getattr(a, name), getattr(f, name)
        scale = max(1.0, float(np.max(np.abs(da))))
        err = max(err, float(np.max(np.abs(da - df))) / scale)
    return err


def smooth_directions(grid: Grid, count: int, seed: int = 0) -> np.ndarray:
    """Random smooth grid functions: random combinations of low-order modes, unit max-norm."""
    rng = np.random.default_rng(seed)
    c = np.asarray(grid.domain.center)
    L = grid.domain.radius if grid.domain.kind == "disk" else 0.5 * max(grid.domain.extents)
    Y = (grid.X - c) / L
    modes = [np.ones(len(Y)), Y[:, 0], Y[:, 1], Y[:, 0] ** 2, Y[:, 0] * Y[:, 1], Y[:, 1] ** 2,
             Y[:, 0] ** 3, Y[:, 1] ** 3, np.sin(np.pi * Y[:, 0]), np.cos(np.pi * Y[:, 1]),
             np.sin(np.pi * Y[:, 0] * Y[:, 1]), np.exp(0.5 * Y[:, 0])]
    M = np.stack(modes, axis=1)
    V = M @ rng.standard_normal((M.shape[1], count))
    return V / np.max(np.abs(V), axis=0)


def jacobian_check(sys: DiscreteSystem, u, count: int = 20, eps: float = 1e-6, seed: int = 0) -> float:
    """Max over directions of ||(res(u + eps v) - res(u))/eps - J v|| / ||J v|| (max norms)."""
    u = np.asarray(u, dtype=float)
    r0 = sys.residual(u)
    J = sys.jacobian(u)
    worst = 0.0
    for v in smooth_directions(sys.grid, count, seed).T:
        fd = (sys.residual(u + eps * v) - r0) / eps
        Jv = J @ v
        worst = max(worst, float(np.max(np.abs(fd - Jv)) / max(np.max(np.abs(Jv)), 1e-300)))
    return worst


def weak_convexity_check(grid: Grid, u, mu0: float) -> float:
    """min over interior and pole nodes of lambda_min(D^2u + mu0 (1 + |Du|^2) I)."""
    if mu0 < 0:
        raise ValueError("mu0 must be nonnegative")
    g, H = grid.jets(np.asarray(u, dtype=float))
    I = grid.interior
    shift = mu0 * (1.0 + np.einsum("mk,mk->m", g[I], g[I]))
    lo, _ = eig2(H[I])
    return float(np.min(lo + shift))


def gradient_diagnostics(sys: DiscreteSystem, u) -> dict:
    """sup |Du| and, for Neumann problems, min over the boundary of D_nu u - phi(x, u)."""
    u = np.asarray(u, dtype=float)
    g, _ = sys.grid.jets(u)
    out = {"sup_grad": float(np.max(np.linalg.norm(g, axis=1)))}
    G = sys.problem.G
    if G.kind == "neumann" and isinstance(G.phi, ScalarField):
        Bn = sys.grid.boundary
        dnu = np.einsum("mk,mk->m", sys.grid.boundary_normals(), g[Bn])
        out["min_dnu_minus_phi"] = float(np.min(dnu - G.phi(sys.grid.X[Bn], u[Bn])))
    return out
