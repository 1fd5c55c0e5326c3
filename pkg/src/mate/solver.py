"""Discrete residual, Jacobian and the Newton / continuation solvers.

Interior and pole rows carry ``log det w - log B`` with ``w = D^2u - A``;
boundary rows carry ``G(x, u, Du)``.  The Jacobian is assembled as diagonal
scalings of the grid's five derivative operators.

The homotopy family used by :func:`continuation_solve` is::

    log B_t = (1 - t) log B_0(x) + t log B(x, z, p)
    G_t     = (1 - t) [nu.p - nu.Du_0(x) - gamma (z - u_0(x))] + t G(x, z, p)

with ``u_0 = lam/2 |x - x_c|^2 + c_0`` an exact solution at ``t = 0``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .discretize import Grid, build_grid, eig2
from .errors import (
    ContinuationStalled,
    EllipticityLoss,
    LinearSolveFailure,
    MaxIterations,
    NoEllipticSeed,
    NonpositiveB,
    SingularSystem,
    SingularW,
    SolverError,
)
from .model import ProblemSpec, eval_jet
from .schemas import to_jsonable

SEED_LAMBDAS = (1.0, 0.5, 2.0, 0.25, 4.0, 0.125, 8.0)
SEED_MARGIN = 1e-3
STRICT_TOL = 1e-9
RANK_TOL = 1e-8


@dataclass
class SolveOptions:
    tol: float = 1e-10
    max_iter: int = 50
    margin_floor: float = 1e-6
    # residual target for intermediate homotopy steps (t < 1)
    path_tol: float = 1e-10
    initial_step: float = 0.25
    min_step: float = 1.0 / 1024
    gamma: float = 1.0

    def __post_init__(self):
        for name in ("tol", "path_tol", "margin_floor", "gamma"):
            if not getattr(self, name) > 0:
                raise ValueError(f"SolveOptions.{name} must be positive")
        if self.max_iter < 1:
            raise ValueError("SolveOptions.max_iter must be >= 1")
        if not 0 < self.min_step <= self.initial_step <= 1:
            raise ValueError("SolveOptions needs 0 < min_step <= initial_step <= 1")


@dataclass
class SolveReport:
    converged: bool = False
    t_path: list = field(default_factory=list)
    iters: list = field(default_factory=list)
    res_inf: float = float("nan")
    margin_min: float = float("nan")
    M2: float = float("nan")
    failure: str | None = None
    # per accepted iterate, in order (including the starting iterate of each step)
    res_history: list = field(default_factory=list)
    margin_history: list = field(default_factory=list)
    seed_residual: float | None = None
    rejected_iters: int = 0
    final_margin: float = float("nan")
    last_iters: int = 0

    @property
    def total_iters(self) -> int:
        return int(sum(self.iters)) + self.rejected_iters

    def record(self, res_inf, margin):
        self.res_history.append(float(res_inf))
        self.margin_history.append(float(margin))
        self.margin_min = float(np.nanmin(self.margin_history))

    def to_json(self) -> dict:
        return to_jsonable(
            {
                "converged": self.converged,
                "t_path": [float(t) for t in self.t_path],
                "iters": [int(k) for k in self.iters],
                "res_inf": self.res_inf,
                "margin_min": self.margin_min,
                "M2": self.M2,
                "failure": self.failure,
            }
        )


@dataclass
class Homotopy:
    """Seed data of the continuation family (see module docstring)."""

    lam: float
    c0: float
    gamma: float
    u0: np.ndarray  # nodal values of the seed
    log_B0: np.ndarray  # at interior/pole nodes
    nu_Du0: np.ndarray  # nu . Du_0 at boundary nodes

    @classmethod
    def build(cls, problem: ProblemSpec, grid: Grid, lam: float, c0: float, gamma: float):
        xc = np.asarray(problem.domain.center)
        u0 = 0.5 * lam * grid.radius**2 + c0
        Xi = grid.X[grid.interior]
        du = lam * (Xi - xc)
        A0 = eval_jet(problem.A, Xi, u0[grid.interior], du, order=0).value
        w0 = lam * np.eye(2) - A0
        det = w0[:, 0, 0] * w0[:, 1, 1] - w0[:, 0, 1] ** 2
        if np.any(det <= 0):
            raise NoEllipticSeed(f"seed lambda={lam} has det(w0) <= 0")
        Xb = grid.X[grid.boundary]
        nu_du = np.einsum("mk,mk->m", grid.boundary_normals(), lam * (Xb - xc))
        return cls(lam, c0, gamma, u0, np.log(det), nu_du)


class DiscreteSystem:
    """The discrete boundary value problem at homotopy parameter ``t``."""

    def __init__(self, problem: ProblemSpec, grid: Grid | None = None, resolution=None, t: float = 1.0,
                 homotopy: Homotopy | None = None):
        if grid is None:
            grid = build_grid(problem.domain, resolution)
        if grid.domain != problem.domain:
            raise ValueError("grid was built on a different domain")
        self.problem = problem
        self.grid = grid
        self.t = float(t)
        self.homotopy = homotopy
        if self.t < 1.0 and homotopy is None:
            raise ValueError("t < 1 needs homotopy seed data")
        self.pin_node = None
        self.pin_value = None
        if problem.pin is not None:
            self.pin_node = grid.node_index(problem.pin[0])
            self.pin_value = problem.pin[1]

    @property
    def size(self) -> int:
        return self.grid.size

    def at(self, t: float) -> "DiscreteSystem":
        return DiscreteSystem(self.problem, self.grid, t=t, homotopy=self.homotopy)

    # -- evaluation ---------------------------------------------------------

    def _interior_state(self, u, order, offset=0.0):
        grid, A = self.grid, self.problem.A
        I = grid.interior
        g, H = grid.jets(u)
        jet = eval_jet(A, grid.X[I], offset + u[I], g[I], order=order, parts=("dz", "dp"))
        w = H[I] - jet.value
        return g, H, w, jet

    def margin(self, u, offset=0.0) -> float:
        _, _, w, _ = self._interior_state(np.asarray(u, dtype=float), 0, offset)
        return float(eig2(w)[0].min())

    def residual(self, u, with_margin=False, offset=0.0):
        """Residual vector (one row per node); raises EllipticityLoss where w is not positive definite.

        The grid function is ``offset + u``; keeping ``u`` small near the
        pole avoids the quantization floor of large nodal values there.
        """
        u = np.asarray(u, dtype=float)
        grid = self.grid
        I, Bn = grid.interior, grid.boundary
        g, _, w, _ = self._interior_state(u, 0, offset)
        lo, _ = eig2(w)
        if np.any(~(lo > 0)):
            k = int(np.nanargmin(lo)) if np.any(np.isfinite(lo)) else 0
            raise EllipticityLoss(f"lambda_min(w) = {lo[k]:.3e} at x={grid.X[I[k]].tolist()}")
        res = np.empty(grid.size)
        logdet = np.log(w[:, 0, 0] * w[:, 1, 1] - w[:, 0, 1] ** 2)
        log_b = self._log_B(u, g, offset=offset)
        res[I] = logdet - log_b
        res[Bn] = self._G(u, g, offset)
        if self.pin_node is not None:
            res[self.pin_node] = (offset - self.pin_value) + u[self.pin_node]
        if with_margin:
            return res, float(lo.min())
        return res

    def evaluate(self, u) -> dict:
        """Nodewise pieces of the target problem without the ellipticity guard.

        Returns gradients (all nodes), and at interior/pole nodes ``w``,
        ``lam_min``, ``det`` and ``B``; ``G`` at boundary nodes.
        """
        u = np.asarray(u, dtype=float)
        I, Bn = self.grid.interior, self.grid.boundary
        g, _, w, _ = self._interior_state(u, 0)
        lo, _ = eig2(w)
        det = w[:, 0, 0] * w[:, 1, 1] - w[:, 0, 1] ** 2
        Bv = eval_jet(self.problem.B, self.grid.X[I], u[I], g[I], order=0).value
        Gv = eval_jet(self.problem.G, self.grid.X[Bn], u[Bn], g[Bn], order=0).value
        return {"gradient": g, "w": w, "lam_min": lo, "det": det, "B": Bv, "G": Gv}

    def _log_B(self, u, g, order=0, offset=0.0):
        I = self.grid.interior
        t = self.t
        if t == 0.0:
            return self.homotopy.log_B0
        jet = eval_jet(self.problem.B, self.grid.X[I], offset + u[I], g[I], order=order, parts=("dz", "dp"))
        if np.any(jet.value <= 0):
            raise NonpositiveB(f"B <= 0 at {int(np.sum(jet.value <= 0))} nodes")
        val = np.log(jet.value)
        if t < 1.0:
            val = (1.0 - t) * self.homotopy.log_B0 + t * val
        if order == 0:
            return val
        return val, t * jet.dz / jet.value, t * jet.dp / jet.value[:, None]

    def _seed_G(self, u, g, offset=0.0):
        hom = self.homotopy
        Bn = self.grid.boundary
        nu = self.grid.boundary_normals()
        return np.einsum("mk,mk->m", nu, g[Bn]) - hom.nu_Du0 - hom.gamma * ((offset - hom.c0) + (u[Bn] - (hom.u0[Bn] - hom.c0)))

    def _G(self, u, g, offset=0.0):
        Bn = self.grid.boundary
        t = self.t
        out = 0.0
        if t > 0.0:
            out = t * eval_jet(self.problem.G, self.grid.X[Bn], offset + u[Bn], g[Bn], order=0).value
        if t < 1.0:
            out = out + (1.0 - t) * self._seed_G(u, g, offset)
        return out

    def jacobian(self, u, offset=0.0):
        u = np.asarray(u, dtype=float)
        grid, prob, t = self.grid, self.problem, self.t
        N = grid.size
        I, Bn = grid.interior, grid.boundary
        g, _, w, Ajet = self._interior_state(u, 1, offset)
        det = w[:, 0, 0] * w[:, 1, 1] - w[:, 0, 1] ** 2
        if np.any(~(det > 0)) or np.any(eig2(w)[0] <= 0):
            raise EllipticityLoss("augmented Hessian not positive definite")
        winv = np.empty_like(w)
        winv[:, 0, 0] = w[:, 1, 1] / det
        winv[:, 1, 1] = w[:, 0, 0] / det
        winv[:, 0, 1] = winv[:, 1, 0] = -w[:, 0, 1] / det
        if not np.all(np.isfinite(winv)):
            raise SingularW("non-finite inverse of the augmented Hessian")
        if t > 0.0:
            _, dz_logb, dp_logb = self._log_B(u, g, order=1, offset=offset)
        else:
            dz_logb, dp_logb = np.zeros(len(I)), np.zeros((len(I), 2))
        b = np.einsum("mij,mijl->ml", winv, Ajet.dp) + dp_logb
        c = np.einsum("mij,mij->m", winv, Ajet.dz) + dz_logb

        a11, a12, a22 = (np.zeros(N) for _ in range(3))
        c1, c2, c0 = (np.zeros(N) for _ in range(3))
        a11[I], a12[I], a22[I] = winv[:, 0, 0], winv[:, 0, 1], winv[:, 1, 1]
        c1[I], c2[I], c0[I] = -b[:, 0], -b[:, 1], -c

        nu = grid.boundary_normals()
        beta = np.zeros((len(Bn), 2))
        gz = np.zeros(len(Bn))
        if t > 0.0:
            Gj = eval_jet(prob.G, grid.X[Bn], offset + u[Bn], g[Bn], order=1, parts=("dz", "dp"))
            beta += t * Gj.dp
            gz += t * Gj.dz
        if t < 1.0:
            beta += (1.0 - t) * nu
            gz -= (1.0 - t) * self.homotopy.gamma
        c1[Bn], c2[Bn], c0[Bn] = beta[:, 0], beta[:, 1], gz

        if self.pin_node is not None:
            k = self.pin_node
            a11[k] = a12[k] = a22[k] = c1[k] = c2[k] = 0.0
            c0[k] = 1.0
        D = sp.diags
        J = (D(a11) @ grid.Hxx + D(2.0 * a12) @ grid.Hxy + D(a22) @ grid.Hyy
             + D(c1) @ grid.Gx + D(c2) @ grid.Gy + D(c0))
        return J.tocsc()

    def zero_order_coefficients(self, u, offset=0.0):
        """Minimum interior and boundary zero-order monotonicity coefficients at ``u``.

        Interior: ``w^ij D_z A_ij + D_z log B``; boundary: ``-G_z``.  Both
        nonnegative with one strictly positive means the discrete problem has
        no constant-shift kernel.
        """
        u = np.asarray(u, dtype=float)
        g, _, w, Ajet = self._interior_state(u, 1, offset)
        det = w[:, 0, 0] * w[:, 1, 1] - w[:, 0, 1] ** 2
        winv = np.stack([np.stack([w[:, 1, 1], -w[:, 0, 1]], -1), np.stack([-w[:, 0, 1], w[:, 0, 0]], -1)], -2)
        winv /= det[:, None, None]
        if self.t > 0.0:
            _, dz_logb, _ = self._log_B(u, g, order=1, offset=offset)
        else:
            dz_logb = 0.0
        c_int = np.einsum("mij,mij->m", winv, Ajet.dz) + dz_logb
        Bn = self.grid.boundary
        gz = 0.0
        if self.t > 0.0:
            gz = self.t * eval_jet(self.problem.G, self.grid.X[Bn], offset + u[Bn], g[Bn], order=1, parts=("dz",)).dz
        if self.t < 1.0:
            gz = gz - (1.0 - self.t) * self.homotopy.gamma
        return float(np.min(c_int)), float(np.min(-np.broadcast_to(gz, Bn.shape)))

    def strictly_monotone(self, u, offset=0.0) -> bool:
        ci, cb = self.zero_order_coefficients(u, offset)
        return min(ci, cb) >= -STRICT_TOL and max(ci, cb) > STRICT_TOL

    def hessian_sup(self, u) -> float:
        _, H = self.grid.jets(u)
        return float(np.max(np.linalg.norm(H, ord=2, axis=(1, 2))))


# ---------------------------------------------------------------------------


def _row_scaled(J):
    scale = abs(J).max(axis=1).toarray().ravel()
    scale[scale == 0] = 1.0
    return sp.diags(1.0 / scale) @ J


def smallest_singular_estimate(J, iterations=4, seed=0) -> float:
    """Relative smallest singular value of the row-scaled ``J`` by inverse iteration."""
    Js = _row_scaled(J).tocsc()
    try:
        lu = spla.splu(Js)
    except RuntimeError:
        return 0.0
    x = np.random.default_rng(seed).standard_normal(Js.shape[0])
    x /= np.linalg.norm(x)
    sigma = np.inf
    for _ in range(iterations):
        y = lu.solve(x)
        ny = np.linalg.norm(y)
        if not np.isfinite(ny) or ny == 0:
            return 0.0
        x = y / ny
        sigma = np.linalg.norm(Js @ x)
    norm = np.sqrt(abs(Js).sum(axis=0).max() * abs(Js).sum(axis=1).max())
    return float(sigma / norm)


def _check_uniqueness(sys: DiscreteSystem, u, J=None, offset=0.0):
    """Raise SingularSystem when the pin / monotonicity combination is not square-nonsingular."""
    monotone = sys.strictly_monotone(u, offset)
    if sys.pin_node is not None:
        if monotone and sys.t == 1.0:
            raise SingularSystem(
                "pin given for a strictly z-monotone problem: the solution is already unique, "
                "so the pin over-determines it"
            )
        return
    if monotone:
        return
    if J is None:
        J = sys.jacobian(u, offset)
    sigma = smallest_singular_estimate(J)
    if sigma <= RANK_TOL:
        raise SingularSystem(
            f"no pin and no strict z-monotonicity; Jacobian numerically rank-deficient (sigma_min ~ {sigma:.2e})"
        )


def _solve_linear(J, rhs):
    try:
        lu = spla.splu(J)
        x = lu.solve(rhs)
    except RuntimeError as exc:
        raise LinearSolveFailure(str(exc)) from exc
    if not np.all(np.isfinite(x)):
        raise LinearSolveFailure("non-finite Newton direction")
    return x


def newton_solve(sys: DiscreteSystem, u_init, opts: SolveOptions | None = None, report: SolveReport | None = None,
                 tol: float | None = None):
    """Damped Newton on ``sys`` from ``u_init``.  Returns ``(u, report)``."""
    u_init = np.asarray(u_init, dtype=float)
    offset = float(u_init[0])
    v, offset, report = _newton(sys, u_init - offset, offset, opts, report, tol)
    u = offset + v
    if sys.pin_node is not None:
        u[sys.pin_node] = sys.pin_value
    return u, report


def _rebase(v, offset):
    # move the first-node value (the pole, on disks) into the scalar offset
    return v - v[0], offset + float(v[0])


def _newton(sys, v, offset, opts, report, tol):
    opts = opts or SolveOptions()
    tol = opts.tol if tol is None else tol
    own_report = report is None
    report = report or SolveReport(t_path=[sys.t])
    v = np.array(v, dtype=float)
    if sys.pin_node is not None:
        v[sys.pin_node] = sys.pin_value - offset
    v, offset = _rebase(v, offset)
    margin = sys.margin(v, offset)
    if not margin > 0:
        raise EllipticityLoss(f"initial iterate is not elliptic (margin {margin:.3e})", report)
    res = sys.residual(v, offset=offset)
    r_inf = float(np.max(np.abs(res)))
    report.record(r_inf, margin)
    it = 0
    checked = False
    while r_inf > tol:
        if it >= opts.max_iter:
            report.res_inf = r_inf
            raise MaxIterations(f"||res|| = {r_inf:.3e} after {it} Newton iterations (t={sys.t})", report)
        J = sys.jacobian(v, offset)
        if not checked:
            _check_uniqueness(sys, v, J, offset)
            checked = True
        delta = _solve_linear(J, -res)
        accept_margin = min(opts.margin_floor, 0.1 * margin)
        s = 1.0
        for _ in range(21):
            trial, trial_offset = _rebase(v + s * delta, offset)
            try:
                m_trial = sys.margin(trial, trial_offset)
                if m_trial >= accept_margin and m_trial > 0:
                    res_trial = sys.residual(trial, offset=trial_offset)
                    r_trial = float(np.max(np.abs(res_trial)))
                    if r_trial <= (1.0 - 1e-4 * s) * r_inf:
                        break
            except (EllipticityLoss, NonpositiveB, FloatingPointError):
                pass
            s *= 0.5
        else:
            report.res_inf = r_inf
            raise EllipticityLoss(
                f"line search exhausted at ||res|| = {r_inf:.3e} (t={sys.t}, iteration {it + 1})", report
            )
        v, offset, res, r_inf, margin = trial, trial_offset, res_trial, r_trial, m_trial
        it += 1
        report.record(r_inf, margin)
    if not checked:
        _check_uniqueness(sys, v, offset=offset)
    report.res_inf = r_inf
    report.final_margin = margin
    if own_report:
        report.iters = [it]
        report.converged = True
        report.M2 = sys.hessian_sup(v)
    report.last_iters = it
    return v, offset, report


def select_seed(problem: ProblemSpec, grid: Grid, lambdas=SEED_LAMBDAS, c0=None):
    """Pick the seed curvature ``lam`` maximizing the grid ellipticity margin of ``u_0``.

    Returns ``(lam, c0, margin)``; ties go to the earlier entry of ``lambdas``.
    """
    if c0 is None:
        c0 = seed_level(problem, grid, 1.0)
    best = None
    for lam in lambdas:
        level = seed_level(problem, grid, lam) if problem.pin is not None else c0
        u0 = 0.5 * lam * grid.radius**2 + level
        g, H = grid.jets(u0)
        I = grid.interior
        try:
            Aval = eval_jet(problem.A, grid.X[I], u0[I], g[I], order=0).value
        except (SolverError, ArithmeticError, ValueError):
            continue
        m = float(eig2(H[I] - Aval)[0].min())
        if best is None or m > best[2]:
            best = (lam, level, m)
    if best is None or not best[2] >= SEED_MARGIN:
        got = "none evaluable" if best is None else f"best margin {best[2]:.3e} at lambda={best[0]}"
        raise NoEllipticSeed(f"no seed lambda in {list(lambdas)} gives margin >= {SEED_MARGIN} ({got})")
    return best


def seed_level(problem: ProblemSpec, grid: Grid, lam: float) -> float:
    if problem.pin is None:
        return 0.5 * (problem.z_interval[0] + problem.z_interval[1])
    point, value = problem.pin
    k = grid.node_index(point)
    return value - 0.5 * lam * grid.radius[k] ** 2


def continuation_solve(sys: DiscreteSystem, opts: SolveOptions | None = None):
    """Method-of-continuity solve of ``sys.problem`` from an exact quadratic seed.

    Returns ``(u, report)``; solver errors carry the partial report.
    """
    opts = opts or SolveOptions()
    problem, grid = sys.problem, sys.grid
    lam, c0, _ = select_seed(problem, grid)
    gamma = 0.0 if problem.pin is not None else opts.gamma
    hom = Homotopy.build(problem, grid, lam, c0, gamma)
    report = SolveReport()
    base = DiscreteSystem(problem, grid, t=0.0, homotopy=hom)
    # iterate state is offset + v, with v vanishing at the first node
    offset = hom.c0
    v = 0.5 * hom.lam * grid.radius**2
    u = offset + v
    res0, m0 = base.residual(v, with_margin=True, offset=offset)
    report.seed_residual = float(np.max(np.abs(res0)))
    report.t_path.append(0.0)
    report.iters.append(0)
    report.record(report.seed_residual, m0)

    if problem.pin is not None and _safe_margin(base.at(1.0), u):
        # fail early rather than after marching the whole path
        _check_uniqueness(base.at(1.0), u)

    t, step, streak = 0.0, opts.initial_step, 0
    while t < 1.0:
        t_new = min(1.0, t + step)
        target = base.at(t_new)
        tol = opts.tol if t_new == 1.0 else max(opts.tol, opts.path_tol)
        saved = (list(report.res_history), list(report.margin_history))
        try:
            v_new, offset_new, _ = _newton(target, v, offset, opts, report, tol)
        except SingularSystem as exc:
            exc.report = report
            report.failure = f"SingularSystem at t={t_new}: {exc}"
            raise
        except (EllipticityLoss, MaxIterations, LinearSolveFailure, NonpositiveB, SingularW) as exc:
            # roll the histories back to the last accepted state
            report.rejected_iters += max(0, len(report.res_history) - len(saved[0]) - 1)
            report.res_history, report.margin_history = saved
            report.margin_min = float(np.nanmin(report.margin_history))
            step *= 0.5
            streak = 0
            if step < opts.min_step:
                report.failure = f"continuation stalled at t={t}: step below {opts.min_step} ({type(exc).__name__}: {exc})"
                report.res_inf = float(report.res_history[-1])
                raise ContinuationStalled(report.failure, report) from exc
            continue
        v, offset, t = v_new, offset_new, t_new
        report.t_path.append(t)
        report.iters.append(report.last_iters)
        streak += 1
        if streak >= 2:
            step *= 2.0
            streak = 0
    report.converged = True
    report.res_inf = float(report.res_history[-1])
    report.M2 = sys.hessian_sup(v)
    u = offset + v
    if sys.pin_node is not None:
        u[sys.pin_node] = sys.pin_value
    return u, report


def _safe_margin(sys, u):
    try:
        return sys.margin(u) > 0
    except (SolverError, ArithmeticError, ValueError):
        return False


def solve(problem: ProblemSpec, resolution, opts: SolveOptions | None = None):
    """Build the grid, then continuation-solve.  Returns ``(grid, u, report)``."""
    sys = DiscreteSystem(problem, resolution=resolution)
    u, report = continuation_solve(sys, opts)
    return sys.grid, u, report
