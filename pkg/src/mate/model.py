"""Problem data: the matrix A, the scalar B, the boundary operator G and their jets.

All fields evaluate vectorized: ``x`` and ``p`` are (m, n) arrays and ``z``
is an (m,) array.  Derivative arrays append the differentiation index last,
so for a matrix field ``dp[..., i, j, k] = D_{p_k} A_ij`` and
``dpp[..., i, j, k, l] = D_{p_k p_l} A_ij``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import (
    EvaluationFailure,
    InversionDiverged,
    MateError,
    NonFiniteValue,
    NonpositiveB,
    SingularMixedHessian,
)
from .expr import Expression
from .geometry import Domain, defining_function

FD_STEP_1 = 1e-6
FD_STEP_2 = 1e-4


@dataclass
class Jet:
    value: np.ndarray
    dx: np.ndarray | None = None
    dz: np.ndarray | None = None
    dp: np.ndarray | None = None
    dpp: np.ndarray | None = None


class Field:
    """Base for A, B and G.

    ``func(x, z, p)`` returns the value; ``jet(x, z, p, order)`` (optional)
    returns a dict with any of ``dx, dz, dp, dpp``.  Derivatives the analytic
    jet does not supply are filled in by central finite differences.
    """

    rank = 0

    def __init__(self, func: Callable, jet: Callable | None = None, name: str = ""):
        self.func = func
        self.jet = jet
        self.name = name or getattr(func, "__name__", "field")

    @property
    def jet_mode(self) -> str:
        return "analytic" if self.jet is not None else "finite-difference"

    def __call__(self, x, z, p=None):
        return eval_jet(self, x, z, p, order=0).value

    def __repr__(self):
        return f"{type(self).__name__}({self.name!r}, jet_mode={self.jet_mode!r})"


class MatrixField(Field):
    rank = 2


class ScalarField(Field):
    def __init__(self, func, jet=None, name="", positive=False):
        super().__init__(func, jet, name)
        self.positive = positive


class BoundaryOperator(Field):
    """G(x, z, p) on the boundary.  ``kind`` is ``"neumann"`` or ``"oblique"``."""

    def __init__(self, func, jet=None, name="", kind="oblique", domain=None, phi=None):
        super().__init__(func, jet, name)
        self.kind = kind
        self.domain = domain
        self.phi = phi


def _prepare(x, z, p):
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    m, n = x.shape
    z = np.broadcast_to(np.asarray(z, dtype=float), (m,)).copy()
    p = np.zeros((m, n)) if p is None else np.atleast_2d(np.asarray(p, dtype=float))
    p = np.broadcast_to(p, (m, n)).copy()
    return x, z, p, single


def _call(fld, x, z, p):
    try:
        out = fld.func(x, z, p)
    except MateError:
        raise
    except Exception as exc:  # user callables may raise anything
        raise EvaluationFailure(f"{fld.name}: {exc}") from exc
    out = np.asarray(out, dtype=float)
    m, n = x.shape
    shape = (m,) if fld.rank == 0 else (m, n, n)
    return np.broadcast_to(out, shape)


def _fd_first(fld, x, z, p, which):
    m, n = x.shape
    if which == "z":
        h = FD_STEP_1 * (1.0 + np.abs(z))
        fp = _call(fld, x, z + h, p)
        fm = _call(fld, x, z - h, p)
        return (fp - fm) / _expand(2.0 * h, fp.ndim)
    base = x if which == "x" else p
    cols = []
    for k in range(n):
        h = FD_STEP_1 * (1.0 + np.abs(base[:, k]))
        plus, minus = base.copy(), base.copy()
        plus[:, k] += h
        minus[:, k] -= h
        if which == "x":
            fp, fm = _call(fld, plus, z, p), _call(fld, minus, z, p)
        else:
            fp, fm = _call(fld, x, z, plus), _call(fld, x, z, minus)
        cols.append((fp - fm) / _expand(2.0 * h, fp.ndim))
    return np.stack(cols, axis=-1)


def _fd_pp(fld, x, z, p, f0):
    m, n = x.shape
    h = FD_STEP_2 * (1.0 + np.abs(p))
    out = np.empty(f0.shape + (n, n))

    def at(dk, dl, k, l):
        q = p.copy()
        q[:, k] += dk * h[:, k]
        q[:, l] += dl * h[:, l]
        return _call(fld, x, z, q)

    for k in range(n):
        hk = _expand(h[:, k], f0.ndim)
        out[..., k, k] = (at(1, 0, k, k) - 2.0 * f0 + at(-1, 0, k, k)) / hk**2
        for l in range(k + 1, n):
            hl = _expand(h[:, l], f0.ndim)
            v = (at(1, 1, k, l) - at(1, -1, k, l) - at(-1, 1, k, l) + at(-1, -1, k, l)) / (4.0 * hk * hl)
            out[..., k, l] = v
            out[..., l, k] = v
    return out


def _expand(a, ndim):
    return a.reshape(a.shape + (1,) * (ndim - 1))


def _symmetrize(M, axes):
    i, j = axes
    return 0.5 * (M + np.swapaxes(M, i, j))


def eval_jet(fld: Field, x, z, p=None, order: int = 1, parts=None) -> Jet:
    """Value and derivatives of ``fld`` up to ``order`` (0, 1 or 2).

    Order 1 supplies ``dx, dz, dp``; order 2 adds ``dpp``.  ``parts`` limits
    the first-order derivatives computed (e.g. ``("dz", "dp")``).  Matrix
    results are symmetrized in (i, j), and ``dpp`` in (k, l).
    """
    if order not in (0, 1, 2):
        raise ValueError("order must be 0, 1 or 2")
    x, z, p, single = _prepare(x, z, p)
    if not np.all(np.isfinite(p)):
        raise NonFiniteValue("non-finite gradient argument p")
    value = np.array(_call(fld, x, z, p))
    if not np.all(np.isfinite(value)):
        raise NonFiniteValue(f"{fld.name} produced non-finite values")
    if isinstance(fld, ScalarField) and fld.positive and np.any(value <= 0):
        k = int(np.argmin(value))
        raise NonpositiveB(f"{fld.name} = {value[k]:.3e} <= 0 at x={x[k].tolist()}, z={z[k]:.6g}")
    jet = Jet(value)
    if order >= 1:
        given = fld.jet(x, z, p, order) if fld.jet is not None else {}
        for name in ("dx", "dz", "dp"):
            if parts is not None and name not in parts:
                continue
            d = given.get(name)
            if d is None:
                d = _fd_first(fld, x, z, p, name[1])
            setattr(jet, name, np.array(np.broadcast_to(d, value.shape + ((x.shape[1],) if name != "dz" else ()))))
        if order == 2:
            d = given.get("dpp")
            if d is None:
                d = _fd_pp(fld, x, z, p, value)
            jet.dpp = np.array(np.broadcast_to(d, value.shape + (x.shape[1],) * 2))
            jet.dpp = _symmetrize(jet.dpp, (-2, -1))
    if fld.rank == 2:
        jet.value = _symmetrize(jet.value, (1, 2))
        for name in ("dx", "dz", "dp", "dpp"):
            d = getattr(jet, name)
            if d is not None:
                setattr(jet, name, _symmetrize(d, (1, 2)))
    for name in ("dx", "dz", "dp", "dpp"):
        d = getattr(jet, name)
        if d is not None and not np.all(np.isfinite(d)):
            raise NonFiniteValue(f"{fld.name}: non-finite {name}")
    if single:
        for name in ("value", "dx", "dz", "dp", "dpp"):
            d = getattr(jet, name)
            if d is not None:
                setattr(jet, name, d[0])
    return jet


# ---------------------------------------------------------------------------
# matrix fields


def _zeros_like_jet(x, n, order, extra=None):
    m = x.shape[0]
    out = {
        "dx": np.zeros((m, n, n, n)),
        "dz": np.zeros((m, n, n)),
        "dp": np.zeros((m, n, n, n)),
    }
    if order == 2:
        out["dpp"] = np.zeros((m, n, n, n, n))
    if extra:
        out.update(extra)
    return out


def make_constant_A(M, name=None) -> MatrixField:
    M = np.asarray(M, dtype=float)
    if not np.allclose(M, M.T, rtol=0, atol=1e-12 * (1 + np.abs(M).max())):
        raise ValueError("A must be symmetric")

    def func(x, z, p):
        return np.broadcast_to(M, (x.shape[0],) + M.shape)

    def jet(x, z, p, order):
        return _zeros_like_jet(x, M.shape[0], order)

    return MatrixField(func, jet, name or "constant")


def make_zero_A(n=2) -> MatrixField:
    return make_constant_A(np.zeros((n, n)), name="zero")


def make_conformal_A() -> MatrixField:
    """A = |p|^2 I / 2 - p (x) p, independent of x and z."""

    def func(x, z, p):
        n = p.shape[1]
        sq = np.einsum("mk,mk->m", p, p)
        return 0.5 * sq[:, None, None] * np.eye(n) - np.einsum("mi,mj->mij", p, p)

    def jet(x, z, p, order):
        n = p.shape[1]
        I = np.eye(n)
        dp = (
            np.einsum("mk,ij->mijk", p, I)
            - np.einsum("ik,mj->mijk", I, p)
            - np.einsum("mi,jk->mijk", p, I)
        )
        extra = {"dp": dp}
        if order == 2:
            t = np.einsum("kl,ij->ijkl", I, I) - np.einsum("ik,jl->ijkl", I, I) - np.einsum("il,jk->ijkl", I, I)
            extra["dpp"] = np.broadcast_to(t, (p.shape[0],) + t.shape)
        return _zeros_like_jet(x, n, order, extra)

    return MatrixField(func, jet, "conformal")


# ---------------------------------------------------------------------------
# optimal transport


@dataclass
class CostFunction:
    """Cost c(x, y) with its jets.  Each callable takes (x, y) arrays of shape (m, n)."""

    name: str
    c: Callable
    c_x: Callable
    c_xx: Callable
    c_xy: Callable
    inverse: Callable | None = None  # closed-form Y(x, p), when known
    constant_c_xx: np.ndarray | None = None
    y_box: tuple[float, float] | None = None


def dot_cost(n=2) -> CostFunction:
    return CostFunction(
        name="dot",
        c=lambda x, y: np.einsum("mk,mk->m", x, y),
        c_x=lambda x, y: y.copy(),
        c_xx=lambda x, y: np.zeros((x.shape[0], n, n)),
        c_xy=lambda x, y: np.broadcast_to(np.eye(n), (x.shape[0], n, n)).copy(),
        inverse=lambda x, p: p.copy(),
        constant_c_xx=np.zeros((n, n)),
    )


def quadratic_cost(n=2) -> CostFunction:
    """c(x, y) = -|x - y|^2 / 2."""
    return CostFunction(
        name="quadratic",
        c=lambda x, y: -0.5 * np.einsum("mk,mk->m", x - y, x - y),
        c_x=lambda x, y: y - x,
        c_xx=lambda x, y: np.broadcast_to(-np.eye(n), (x.shape[0], n, n)).copy(),
        c_xy=lambda x, y: np.broadcast_to(np.eye(n), (x.shape[0], n, n)).copy(),
        inverse=lambda x, p: x + p,
        constant_c_xx=-np.eye(n),
    )


BUILTIN_COSTS = {"dot": dot_cost, "quadratic": quadratic_cost}

Y_TOL = 1e-12
Y_MAX_ITER = 50
DET_FLOOR = 1e-14


def invert_cost_gradient(cost: CostFunction, x, p, tol=Y_TOL, max_iter=Y_MAX_ITER, y0=None):
    """Solve c_x(x, y) = p for y by Newton's method, seeded at ``y0`` (default x + p).

    Returns ``(y, iterations)``.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    p = np.atleast_2d(np.asarray(p, dtype=float))
    y = x + p if y0 is None else np.array(np.broadcast_to(y0, x.shape), dtype=float)
    scale = 1.0 + np.linalg.norm(p, axis=1)
    for it in range(max_iter + 1):
        r = cost.c_x(x, y) - p
        err = np.linalg.norm(r, axis=1)
        if not np.all(np.isfinite(err)):
            raise InversionDiverged(f"cost {cost.name}: non-finite iterate")
        if np.all(err <= tol * scale):
            return y, it
        if it == max_iter:
            break
        J = cost.c_xy(x, y)
        det = np.linalg.det(J)
        if np.any(np.abs(det) < DET_FLOOR):
            raise SingularMixedHessian(f"cost {cost.name}: det c_xy = {det[np.argmin(np.abs(det))]:.3e}")
        y = y - np.linalg.solve(J, r[..., None])[..., 0]
    raise InversionDiverged(f"cost {cost.name}: |c_x - p| = {err.max():.3e} after {max_iter} iterations")


class OTMatrixField(MatrixField):
    """A(x, p) = c_xx(x, Y(x, p)) generated by a cost function."""

    def __init__(self, cost: CostFunction, inversion: str = "auto"):
        if inversion not in ("auto", "newton", "closed"):
            raise ValueError("inversion must be auto, newton or closed")
        if inversion == "closed" and cost.inverse is None:
            raise ValueError(f"cost {cost.name} has no closed-form inverse")
        self.cost = cost
        self.inversion = "closed" if inversion == "auto" and cost.inverse is not None else inversion
        if self.inversion == "auto":
            self.inversion = "newton"
        self.last_iterations = 0
        jet = None
        if cost.constant_c_xx is not None:
            n = cost.constant_c_xx.shape[0]
            jet = lambda x, z, p, order: _zeros_like_jet(x, n, order)  # noqa: E731
        super().__init__(self._evaluate, jet, f"ot:{cost.name}")

    def Y(self, x, p):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        p = np.atleast_2d(np.asarray(p, dtype=float))
        if self.inversion == "closed":
            return self.cost.inverse(x, p)
        y, self.last_iterations = invert_cost_gradient(self.cost, x, p)
        return y

    def _evaluate(self, x, z, p):
        y = self.Y(x, p)
        det = np.linalg.det(self.cost.c_xy(x, y))
        if np.any(np.abs(det) < DET_FLOOR):
            raise SingularMixedHessian(f"cost {self.cost.name}: det c_xy vanishes")
        return self.cost.c_xx(x, y)

    def b_factor(self, x, p):
        """|det c_xy(x, Y(x, p))|, the factor multiplying psi in B."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return np.abs(np.linalg.det(self.cost.c_xy(x, self.Y(x, p))))


def make_ot_A(cost: CostFunction | str, inversion: str = "auto") -> OTMatrixField:
    if isinstance(cost, str):
        cost = BUILTIN_COSTS[cost]()
    return OTMatrixField(cost, inversion)


# ---------------------------------------------------------------------------
# scalar fields and boundary operators


def parse_expression(text: str, positive: bool = False) -> ScalarField:
    """Compile ``text`` into a ScalarField of (x, z, p) with finite-difference jets."""
    expr = Expression(text)
    return ScalarField(expr, None, name=text.strip(), positive=positive)


def constant_field(value: float, positive: bool = False) -> ScalarField:
    def func(x, z, p):
        return np.full(x.shape[0], float(value))

    def jet(x, z, p, order):
        m, n = x.shape
        out = {"dx": np.zeros((m, n)), "dz": np.zeros(m), "dp": np.zeros((m, n))}
        if order == 2:
            out["dpp"] = np.zeros((m, n, n))
        return out

    return ScalarField(func, jet, name=repr(float(value)), positive=positive)


def as_scalar_field(spec, positive=False) -> ScalarField:
    if isinstance(spec, ScalarField):
        return spec
    if isinstance(spec, (int, float)):
        return constant_field(spec, positive)
    return parse_expression(str(spec), positive)


def make_oblique_G(domain: Domain, phi, tilt: float = 0.0, quadratic: float = 0.0, name=None) -> BoundaryOperator:
    """G = beta(x).p + quadratic |p|^2 - phi(x, z), with beta = nu + tilt * tau.

    ``tilt = quadratic = 0`` is the Neumann operator.
    """
    phi = as_scalar_field(phi)
    neumann = tilt == 0.0 and quadratic == 0.0

    def beta(x):
        nu = domain.inner_normals(x)
        if tilt == 0.0:
            return nu
        return nu + tilt * np.stack([nu[:, 1], -nu[:, 0]], axis=1)

    def func(x, z, p):
        b = beta(x)
        out = np.einsum("mk,mk->m", b, p) - phi(x, z)
        if quadratic:
            out = out + quadratic * np.einsum("mk,mk->m", p, p)
        return out

    def jet(x, z, p, order):
        m, n = x.shape
        pj = eval_jet(phi, x, z, None, order=1)
        out = {"dz": -pj.dz, "dp": beta(x) + 2.0 * quadratic * p}
        if order == 2:
            out["dpp"] = np.broadcast_to(2.0 * quadratic * np.eye(n), (m, n, n))
        return out

    if name is None:
        name = f"neumann[{phi.name}]" if neumann else f"oblique[tilt={tilt},quadratic={quadratic};{phi.name}]"
    return BoundaryOperator(func, jet, name, kind="neumann" if neumann else "oblique", domain=domain, phi=phi)


def make_neumann_G(domain: Domain, phi) -> BoundaryOperator:
    """G = nu(x).p - phi(x, z): the boundary condition D_nu u = phi(x, u)."""
    return make_oblique_G(domain, phi)


BUILTIN_G = {
    "neumann": dict(tilt=0.0, quadratic=0.0),
    "concave": dict(tilt=0.0, quadratic=-0.1),
    "tilted": dict(tilt=0.25, quadratic=0.0),
}


# ---------------------------------------------------------------------------


@dataclass
class ProblemSpec:
    """det[D^2u - A(x,u,Du)] = B(x,u,Du) in the domain, G(x,u,Du) = 0 on its boundary."""

    domain: Domain
    A: MatrixField
    B: ScalarField
    G: BoundaryOperator
    z_interval: tuple[float, float] = (0.0, 1.0)
    pin: tuple[tuple[float, float], float] | None = None
    name: str = "problem"
    notes: list = field(default_factory=list)

    def __post_init__(self):
        lo, hi = self.z_interval
        if not lo <= hi:
            raise ValueError(f"z_interval must satisfy z_lo <= z_hi, got {self.z_interval}")
        self.z_interval = (float(lo), float(hi))
        if self.pin is not None:
            point, value = self.pin
            if defining_function(self.domain, point).value > 1e-12 * self.domain.diameter:
                raise ValueError(f"pin point {tuple(point)} lies outside the domain")
            self.pin = (tuple(float(c) for c in point), float(value))
        if self.domain.kind == "rectangle" and RECTANGLE_NOTE not in self.notes:
            self.notes.append(RECTANGLE_NOTE)


RECTANGLE_NOTE = "outside theory hypotheses: rectangle corners violate the C^{3,1} boundary assumption"
