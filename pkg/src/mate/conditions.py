"""Sampling certifiers for the structure conditions on A, B, G and the domain.

Every check evaluates a scalar quantity over a :class:`SampleBox`, takes the
worst sample, then sharpens it: direction angles by golden-section search
and, when ``box.polish`` is set, the (z, p) coordinates by a bounded
pattern search started from the worst sample.  Margins are signed so that a
condition holds strictly iff ``margin > 0``.  Verdicts are over the sampled
set only.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from ._parallel import map_chunks
from .discretize import eig2
from .errors import (
    EvaluationFailure,
    InversionDiverged,
    JetFailure,
    NegativeDensity,
    NonFiniteValue,
    NonpositiveGamma,
    SingularMixedHessian,
)
from .geometry import Domain, boundary_positions, defining_function
from .model import BoundaryOperator, MatrixField, ScalarField, as_scalar_field, eval_jet
from .schemas import to_jsonable

STRICT = 1e-9
GOLDEN = 0.5 * (math.sqrt(5.0) - 1.0)

HYPOTHESES = {
    "regularity": "A regular (co-dimension one convex in p)",
    "strict_regularity": "A strictly regular",
    "monotonicity": "A, B non-decreasing and phi increasing in z",
    "A_convexity": "domain uniformly A-convex w.r.t. phi and the z-interval",
    "QS": "quadratic structure A >= -mu0 (1 + |p|^2) I",
    "oblique_concavity": "G uniformly oblique and concave in p",
    "solution_bounds": "structure conditions for solution bounds",
    "mass_balance": "mass balance: integral of f below integral of f*",
}


def verdict_of(margin: float) -> str:
    if margin > STRICT:
        return "holds-strictly"
    if margin >= -STRICT:
        return "holds-weakly"
    return "fails"


@dataclass(frozen=True)
class SampleBox:
    """Sample set for the certifiers.

    ``x`` samples are the points of a ``interior_count``-per-axis lattice
    lying in the closed domain, or ``boundary_count`` boundary points
    (corners excluded) for boundary conditions.  ``rotation`` turns the
    p-box about the origin.
    """

    domain: Domain = field(default_factory=Domain.disk)
    z_interval: tuple[float, float] = (0.0, 1.0)
    z_count: int = 9
    p_max: float = 5.0
    p_count: int = 9
    direction_count: int = 64
    boundary_count: int = 64
    interior_count: int = 5
    rotation: float = 0.0
    polish: bool = True

    def __post_init__(self):
        for name in ("z_count", "p_count", "direction_count", "boundary_count", "interior_count"):
            if getattr(self, name) < 2:
                raise ValueError(f"SampleBox.{name} must be >= 2")
        if not self.p_max > 0:
            raise ValueError("SampleBox.p_max must be positive")
        lo, hi = self.z_interval
        if not lo <= hi:
            raise ValueError("SampleBox.z_interval must satisfy z_lo <= z_hi")

    def refined(self) -> "SampleBox":
        """Nested refinement: every sample of ``self`` is a sample of the result."""
        return replace(
            self,
            z_count=2 * self.z_count - 1,
            p_count=2 * self.p_count - 1,
            direction_count=2 * self.direction_count,
            boundary_count=2 * self.boundary_count,
            interior_count=2 * self.interior_count - 1,
        )

    # sample sets
    def z_values(self, interval=None):
        lo, hi = self.z_interval if interval is None else interval
        return np.linspace(lo, hi, self.z_count)

    def p_axis(self):
        return np.linspace(-self.p_max, self.p_max, self.p_count)

    def rotation_matrix(self):
        c, s = math.cos(self.rotation), math.sin(self.rotation)
        return np.array([[c, -s], [s, c]])

    def p_values(self):
        a = self.p_axis()
        P1, P2 = np.meshgrid(a, a, indexing="ij")
        return np.stack([P1.ravel(), P2.ravel()], axis=1) @ self.rotation_matrix().T

    def interior_points(self):
        d = self.domain
        if d.kind == "disk":
            lo = np.asarray(d.center) - d.radius
            span = np.array([2 * d.radius, 2 * d.radius])
        else:
            lo = np.asarray(d.center) - d.half_extents
            span = np.asarray(d.extents)
        t = np.linspace(0.0, 1.0, self.interior_count)
        T1, T2 = np.meshgrid(t, t, indexing="ij")
        pts = lo + np.stack([T1.ravel(), T2.ravel()], axis=1) * span
        keep = [defining_function(d, x).value <= 1e-12 * d.diameter for x in pts]
        return pts[np.asarray(keep)]

    def boundary_points(self):
        return boundary_positions(self.domain, self.boundary_count, include_corners=False)

    def describe(self) -> dict:
        return {
            "z_interval": list(self.z_interval),
            "z_count": self.z_count,
            "p_max": self.p_max,
            "p_count": self.p_count,
            "direction_count": self.direction_count,
            "boundary_count": self.boundary_count,
            "interior_count": self.interior_count,
        }


@dataclass
class CertReport:
    condition: str
    margin: float
    verdict: str
    witness: dict
    samples_used: int
    constants: dict = field(default_factory=dict)
    hypothesis: str = ""
    details: dict = field(default_factory=dict)
    required: str = "holds-weakly"

    @property
    def passed(self) -> bool:
        if self.required == "holds-strictly":
            return self.verdict == "holds-strictly"
        return self.verdict != "fails"

    def to_json(self) -> dict:
        out = {
            "condition": self.condition,
            "hypothesis": self.hypothesis,
            "margin": self.margin,
            "verdict": self.verdict,
            "witness": self.witness,
            "samples_used": int(self.samples_used),
            "constants": {k: v for k, v in self.constants.items() if v is not None},
        }
        if self.details:
            out["details"] = self.details
        return to_jsonable(out)


def _witness(x, z, p, dirs=()):
    return {
        "x": [float(v) for v in np.ravel(x)],
        "z": float(z) if z is not None else None,
        "p": [float(v) for v in np.ravel(p)] if p is not None else None,
        "dirs": [[float(v) for v in np.ravel(d)] for d in dirs],
    }


def _jet(fld, x, z, p, order):
    try:
        return eval_jet(fld, x, z, p, order=order)
    except (EvaluationFailure, NonFiniteValue, InversionDiverged, SingularMixedHessian) as exc:
        raise JetFailure(f"{fld.name}: {exc}") from exc


# ---------------------------------------------------------------------------
# generic minimization over samples


@dataclass
class _Search:
    """Minimize ``q(X, params) -> (values, dirs)`` over samples, then polish.

    ``params`` columns are box coordinates with bounds ``lo``/``hi``.
    """

    q: object
    lo: np.ndarray
    hi: np.ndarray
    steps: np.ndarray
    polish: bool = True
    evaluations: int = 0

    def run(self, X, params):
        X = np.asarray(X, dtype=float)
        params = np.asarray(params, dtype=float)

        def chunk(sl):
            return self.q(X[sl], params[sl])

        parts = map_chunks(chunk, len(X))
        values = np.concatenate([p[0] for p in parts])
        dirs = np.concatenate([p[1] for p in parts])
        self.evaluations = len(X)
        k = int(np.argmin(values))
        best = [float(values[k]), X[k], params[k].copy(), dirs[k]]
        if self.polish and len(self.lo):
            best = self._pattern(best)
        return best

    def _pattern(self, best):
        value, x, par, d = best
        step = self.steps.copy()
        floor = 1e-10 * np.maximum(1.0, np.abs(self.hi - self.lo))
        while np.any(step > floor):
            improved = False
            for i in range(len(par)):
                if step[i] <= floor[i]:
                    continue
                for sgn in (1.0, -1.0):
                    trial = par.copy()
                    trial[i] = min(self.hi[i], max(self.lo[i], trial[i] + sgn * step[i]))
                    if trial[i] == par[i]:
                        continue
                    v, dd = self.q(x[None], trial[None])
                    self.evaluations += 1
                    if v[0] < value:
                        value, par, d = float(v[0]), trial, dd[0]
                        improved = True
                        break
            if not improved:
                step *= 0.5
        return [value, x, par, d]


def _grid(*axes):
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def _expand_samples(X, params):
    """All (x, param) pairs, x-major."""
    m, k = len(X), len(params)
    return np.repeat(X, k, axis=0), np.tile(params, (m, 1))


def _zp_search(q_zp, box, X, z_interval=None, polish=None, p_zero=False):
    """Search over x in ``X``, z in the box interval and p in the (rotated) p-box.

    ``q_zp(X, z, p) -> (values, dirs)``.  Params are (z, q1, q2) with
    ``p = R q``; ``p_zero`` fixes p = 0.
    """
    zi = box.z_interval if z_interval is None else z_interval
    zs = np.linspace(zi[0], zi[1], box.z_count)
    Rm = box.rotation_matrix()
    if p_zero:
        params = zs[:, None]
        lo, hi = np.array([zi[0]]), np.array([zi[1]])
        steps = np.array([0.5 * (zi[1] - zi[0]) / (box.z_count - 1)])

        def unpack(par):
            return par[:, 0], np.zeros((len(par), 2))
    else:
        a = box.p_axis()
        params = _grid(zs, a, a)
        lo = np.array([zi[0], -box.p_max, -box.p_max])
        hi = np.array([zi[1], box.p_max, box.p_max])
        steps = 0.5 * np.array([(zi[1] - zi[0]) / (box.z_count - 1), 2 * box.p_max / (box.p_count - 1),
                                2 * box.p_max / (box.p_count - 1)])

        def unpack(par):
            return par[:, 0], par[:, 1:3] @ Rm.T

    def q(Xs, par):
        z, p = unpack(par)
        return q_zp(Xs, z, p)

    XX, PP = _expand_samples(X, params)
    search = _Search(q, lo, hi, steps, box.polish if polish is None else polish)
    value, x, par, d = search.run(XX, PP)
    z, p = unpack(par[None])
    return value, x, float(z[0]), p[0], d, search.evaluations


# ---------------------------------------------------------------------------
# regularity


def _regularity_form(dpp, alpha):
    """A_{ij,kl} xi_i xi_j eta_k eta_l with xi = (cos a, sin a), eta = (-sin a, cos a).

    ``dpp`` has shape (m, 2, 2, 2, 2); ``alpha`` shape (m,) or (m, d).
    """
    alpha = np.asarray(alpha, dtype=float)
    squeeze = alpha.ndim == 1
    if squeeze:
        alpha = alpha[:, None]
    c, s = np.cos(alpha), np.sin(alpha)
    xi = np.stack([c, s], axis=-1)
    eta = np.stack([-s, c], axis=-1)
    out = np.einsum("mijkl,mdi,mdj,mdk,mdl->md", dpp, xi, xi, eta, eta)
    return out[:, 0] if squeeze else out


def regularity_quantity(A: MatrixField, x, z, p, xi, eta) -> float:
    """A_{ij,kl}(x, z, p) xi_i xi_j eta_k eta_l at a single point."""
    dpp = _jet(A, np.atleast_2d(x), np.atleast_1d(z), np.atleast_2d(p), 2).dpp[0]
    return float(np.einsum("ijkl,i,j,k,l->", dpp, xi, xi, eta, eta))


def _min_over_angle(dpp, count):
    """Per-sample minimum over the direction angle: grid on [0, pi), then golden section."""
    m = dpp.shape[0]
    grid = np.pi * np.arange(count) / count
    vals = _regularity_form(dpp, np.broadcast_to(grid, (m, count)))
    k = np.argmin(vals, axis=1)
    best_a = grid[k]
    best_v = vals[np.arange(m), k]
    h = np.pi / count
    a, b = best_a - h, best_a + h
    c = b - GOLDEN * (b - a)
    d = a + GOLDEN * (b - a)
    fc, fd = _regularity_form(dpp, c), _regularity_form(dpp, d)
    for _ in range(60):
        left = fc < fd
        b = np.where(left, d, b)
        a = np.where(left, a, c)
        c_new = b - GOLDEN * (b - a)
        d_new = a + GOLDEN * (b - a)
        c, d = np.where(left, c_new, d), np.where(left, c, d_new)
        fc_new = _regularity_form(dpp, c)
        fd_new = _regularity_form(dpp, d)
        fc, fd = np.where(left, fc_new, fd), np.where(left, fc, fd_new)
    mid = 0.5 * (a + b)
    fm = _regularity_form(dpp, mid)
    use = fm < best_v
    alpha = np.where(use, mid, best_a)
    # re-evaluate at the chosen angle so the witness reproduces the value exactly
    value = _regularity_form(dpp, alpha)
    xi = np.stack([np.cos(alpha), np.sin(alpha)], axis=-1)
    eta = np.stack([-np.sin(alpha), np.cos(alpha)], axis=-1)
    return value, np.stack([xi, eta], axis=1)


def check_regularity(A: MatrixField, box: SampleBox | None = None, strict: bool = False) -> CertReport:
    """Minimum of A_{ij,kl} xi_i xi_j eta_k eta_l over samples and orthonormal pairs."""
    box = box or SampleBox()

    def q(X, z, p):
        dpp = _jet(A, X, z, p, 2).dpp
        return _min_over_angle(dpp, box.direction_count)

    value, x, z, p, dirs, n = _zp_search(q, box, box.interior_points())
    # exact re-evaluation at the witness
    value = regularity_quantity(A, x, z, p, dirs[0], dirs[1])
    name = "strict_regularity" if strict else "regularity"
    return CertReport(
        condition=name,
        margin=value,
        verdict=verdict_of(value),
        witness=_witness(x, z, p, dirs),
        samples_used=n * box.direction_count,
        hypothesis=HYPOTHESES[name],
        required="holds-strictly" if strict else "holds-weakly",
        details={"jet_mode": A.jet_mode, "box": box.describe()},
    )


# ---------------------------------------------------------------------------
# monotonicity


def check_monotonicity(A: MatrixField, B: ScalarField, G: BoundaryOperator, box: SampleBox | None = None,
                       require=("A", "B", "G")) -> CertReport:
    """min lambda(D_z A) (gamma1), min B_z and min -G_z (gamma0) over the samples."""
    box = box or SampleBox()
    X_int = box.interior_points()
    X_bdy = box.boundary_points()

    def q_A(X, z, p):
        dz = _jet(A, X, z, p, 1).dz
        lo, _ = eig2(dz)
        vec = _min_eigvec(dz)
        return lo, vec[:, None, :]

    def q_B(X, z, p):
        return _jet(B, X, z, p, 1).dz, np.zeros((len(X), 0, 2))

    def q_G(X, z, p):
        return -_jet(G, X, z, p, 1).dz, np.zeros((len(X), 0, 2))

    parts = {}
    total = 0
    for key, q, X in (("A", q_A, X_int), ("B", q_B, X_int), ("G", q_G, X_bdy)):
        value, x, z, p, dirs, n = _zp_search(q, box, X)
        total += n
        parts[key] = (value, x, z, p, dirs)
    required = [k for k in ("A", "B", "G") if k in require]
    key = min(required, key=lambda k: parts[k][0])
    value, x, z, p, dirs = parts[key]
    details = {
        "min_eig_DzA": parts["A"][0],
        "min_Bz": parts["B"][0],
        "min_neg_Gz": parts["G"][0],
        "required": required,
        "attained_by": key,
        "witnesses": {k: _witness(*v[1:4], v[4]) for k, v in parts.items()},
    }
    return CertReport(
        condition="monotonicity",
        margin=value,
        verdict=verdict_of(value),
        witness=_witness(x, z, p, dirs),
        samples_used=total,
        constants={"gamma0": parts["G"][0], "gamma1": parts["A"][0]},
        hypothesis=HYPOTHESES["monotonicity"],
        details=details,
    )


def _min_eigvec(M):
    a, b, c = M[:, 0, 0], M[:, 0, 1], M[:, 1, 1]
    theta = 0.5 * np.arctan2(2 * b, a - c)
    # (cos, sin) of theta is the top eigenvector; rotate for the bottom one
    return np.stack([-np.sin(theta), np.cos(theta)], axis=1)


# ---------------------------------------------------------------------------
# A-convexity of the domain


def a_convexity_quantity(domain: Domain, A: MatrixField, x, z, p, tau) -> float:
    """(D_i nu_j - D_{p_k} A_ij nu_k) tau_i tau_j at one boundary point."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    nu = domain.inner_normals(x)[0]
    kappa = domain.curvatures(x)[0]
    dp = _jet(A, x, np.atleast_1d(z), np.atleast_2d(p), 1).dp[0]
    tau = np.asarray(tau, dtype=float)
    return float(-kappa * (tau @ tau) - np.einsum("ijk,k,i,j->", dp, nu, tau, tau))


def check_A_convexity(domain: Domain, A: MatrixField, phi, z_interval=None, box: SampleBox | None = None) -> CertReport:
    """Uniform A-convexity of the boundary w.r.t. ``phi`` on the boundary equality p.nu = phi(x, z).

    Valid as a certificate only for regular A.
    """
    box = box or SampleBox(domain=domain)
    if box.domain != domain:
        box = replace(box, domain=domain)
    phi = as_scalar_field(phi)
    zi = tuple(z_interval) if z_interval is not None else box.z_interval
    X = box.boundary_points()
    domain.inner_normals(X)  # raises CornerPoint per corner_convention
    zs = np.linspace(zi[0], zi[1], box.z_count)
    ss = box.p_axis()
    params = _grid(zs, ss)

    def geometry(Xs):
        nu = domain.inner_normals(Xs)
        tau = np.stack([nu[:, 1], -nu[:, 0]], axis=1)
        return nu, tau, domain.curvatures(Xs)

    def unpack(Xs, par):
        nu, tau, _ = geometry(Xs)
        z = par[:, 0]
        ph = _jet(phi, Xs, z, None, 0).value
        p = ph[:, None] * nu + par[:, 1:2] * tau
        return z, p

    def q(Xs, par):
        nu, tau, kappa = geometry(Xs)
        z, p = unpack(Xs, par)
        dp = _jet(A, Xs, z, p, 1).dp
        Q = -kappa - np.einsum("mijk,mk,mi,mj->m", dp, nu, tau, tau)
        return -Q, tau[:, None, :]

    XX, PP = _expand_samples(X, params)
    lo = np.array([zi[0], -box.p_max])
    hi = np.array([zi[1], box.p_max])
    steps = 0.5 * np.array([(zi[1] - zi[0]) / max(box.z_count - 1, 1), 2 * box.p_max / (box.p_count - 1)])
    search = _Search(q, lo, hi, steps, box.polish)
    value, x, par, dirs = search.run(XX, PP)
    z, p = unpack(x[None], par[None])
    z, p = float(z[0]), p[0]
    value = -a_convexity_quantity(domain, A, x, z, p, dirs[0])
    verdict = verdict_of(value)
    return CertReport(
        condition="A_convexity",
        margin=value,
        verdict=verdict,
        witness=_witness(x, z, p, dirs),
        samples_used=search.evaluations,
        constants={"delta0": value if verdict == "holds-strictly" else None},
        hypothesis=HYPOTHESES["A_convexity"],
        required="holds-strictly",
        details={"precondition": "A regular (boundary equality p.nu = phi suffices only then)",
                 "z_interval": list(zi)},
    )


# ---------------------------------------------------------------------------
# quadratic structure


def qs_quantity(A: MatrixField, x, z, p) -> float:
    """max(0, -lambda_min A(x, z, p)) / (1 + |p|^2)."""
    Av = _jet(A, np.atleast_2d(x), np.atleast_1d(z), np.atleast_2d(p), 0).value
    lo, _ = eig2(Av)
    p = np.asarray(p, dtype=float)
    return float(max(0.0, -lo[0]) / (1.0 + p @ p))


def _qs_search(A, box):
    def q(X, z, p):
        lo, _ = eig2(_jet(A, X, z, p, 0).value)
        return -np.maximum(0.0, -lo) / (1.0 + np.einsum("mk,mk->m", p, p)), np.zeros((len(X), 0, 2))

    value, x, z, p, dirs, n = _zp_search(q, box, box.interior_points())
    return qs_quantity(A, x, z, p), x, z, p, n


def check_QS(A: MatrixField, box: SampleBox | None = None) -> CertReport:
    """The smallest constant mu0 with A >= -mu0 (1 + |p|^2) I on the samples.

    The margin field carries mu0 itself; the condition always holds on a
    finite sample set, and ``details.growth`` flags an increase of mu0 when
    p_max is doubled.
    """
    box = box or SampleBox()
    mu0, x, z, p, n = _qs_search(A, box)
    mu_big, *_, n2 = _qs_search(A, replace(box, p_max=2.0 * box.p_max, p_count=2 * box.p_count - 1))
    growth = mu_big > mu0 * (1 + 1e-9) + 1e-12
    return CertReport(
        condition="QS",
        margin=mu0,
        verdict="holds-strictly",
        witness=_witness(x, z, p),
        samples_used=n + n2,
        constants={"mu0": mu0},
        hypothesis=HYPOTHESES["QS"],
        details={"margin_is": "mu0", "growth": bool(growth), "mu0_at_double_p_max": mu_big},
    )


# ---------------------------------------------------------------------------
# obliqueness and concavity of G


def check_oblique_concavity(G: BoundaryOperator, domain: Domain | None = None, box: SampleBox | None = None) -> CertReport:
    """beta0 = min G_p.nu, sigma0 = max |G_p|, concavity margin = -max eig G_pp."""
    box = box or SampleBox(domain=domain or Domain.disk())
    if domain is not None and box.domain != domain:
        box = replace(box, domain=domain)
    domain = box.domain
    X = box.boundary_points()
    domain.inner_normals(X)

    def q_beta(Xs, z, p):
        nu = domain.inner_normals(Xs)
        return np.einsum("mk,mk->m", _jet(G, Xs, z, p, 1).dp, nu), nu[:, None, :]

    def q_sigma(Xs, z, p):
        return -np.linalg.norm(_jet(G, Xs, z, p, 1).dp, axis=1), np.zeros((len(Xs), 0, 2))

    def q_conc(Xs, z, p):
        dpp = _jet(G, Xs, z, p, 2).dpp
        _, hi = eig2(dpp)
        top = _min_eigvec(-dpp)
        return -hi, top[:, None, :]

    b0, xb, zb, pb, db, n1 = _zp_search(q_beta, box, X)
    s0, xs, zs, ps, _, n2 = _zp_search(q_sigma, box, X)
    cm, xc, zc, pc, dc, n3 = _zp_search(q_conc, box, X)
    s0 = -s0
    if b0 <= cm:
        value, wit = b0, _witness(xb, zb, pb, db)
    else:
        value, wit = cm, _witness(xc, zc, pc, dc)
    return CertReport(
        condition="oblique_concavity",
        margin=value,
        verdict=verdict_of(value),
        witness=wit,
        samples_used=n1 + n2 + n3,
        constants={"beta0": b0, "sigma0": s0},
        hypothesis=HYPOTHESES["oblique_concavity"],
        details={
            "beta0": b0,
            "sigma0": s0,
            "concavity_margin": cm,
            "witnesses": {
                "beta0": _witness(xb, zb, pb, db),
                "sigma0": _witness(xs, zs, ps),
                "concavity": _witness(xc, zc, pc, dc),
            },
        },
    )


# ---------------------------------------------------------------------------
# solution bounds


def check_solution_bounds(A: MatrixField, B: ScalarField, phi, K: float, box: SampleBox | None = None) -> CertReport:
    """Structure conditions giving lower (z < -K) and upper (z > K) solution bounds.

    z is sampled on the closed intervals [-2K, -K] and [K, 2K]; the
    infimum over the open ranges equals the value at the closure by
    continuity.
    """
    if not K > 0:
        raise ValueError("K must be positive")
    box = box or SampleBox()
    phi = as_scalar_field(phi)
    B = as_scalar_field(B, positive=False)
    Xi, Xb = box.interior_points(), box.boundary_points()

    def q_detgap(sign):
        def q(X, z, p):
            Av = _jet(A, X, z, p, 0).value
            Bv = _jet(B, X, z, p, 0).value
            det = Av[:, 0, 0] * Av[:, 1, 1] - Av[:, 0, 1] ** 2  # det(-A) = det(A) for 2x2
            return sign * (det - Bv), np.zeros((len(X), 0, 2))
        return q

    def q_negA(X, z, p):
        _, hi = eig2(_jet(A, X, z, p, 0).value)
        return -hi, np.zeros((len(X), 0, 2))

    def q_phi(sign):
        def q(X, z, p):
            return sign * _jet(phi, X, z, None, 0).value, np.zeros((len(X), 0, 2))
        return q

    low, high = (-2.0 * K, -K), (K, 2.0 * K)
    res = {}
    total = 0
    for key, q, X, zi in (
        ("lower_det", q_detgap(1.0), Xi, low),
        ("lower_A", q_negA, Xi, low),
        ("lower_phi", q_phi(-1.0), Xb, low),
        ("upper_det", q_detgap(-1.0), Xi, high),
        ("upper_A", q_negA, Xi, high),
        ("upper_phi", q_phi(1.0), Xb, high),
    ):
        value, x, z, p, _, n = _zp_search(q, box, X, z_interval=zi, p_zero=True)
        total += n
        res[key] = (value, _witness(x, z, np.zeros(2)))
    flags = {
        "lower_interior": res["lower_det"][0] > STRICT and res["lower_A"][0] >= -STRICT,
        "lower_boundary": res["lower_phi"][0] > STRICT,
        "upper_interior": res["upper_det"][0] > STRICT and res["upper_A"][0] > STRICT,
        "upper_boundary": res["upper_phi"][0] > STRICT,
    }
    margins = {
        "lower_interior": res["lower_det"][0],
        "lower_A_max_eig": -res["lower_A"][0],
        "lower_boundary": res["lower_phi"][0],
        "upper_interior": res["upper_det"][0],
        "upper_A_max_eig": -res["upper_A"][0],
        "upper_boundary": res["upper_phi"][0],
    }
    key = min(res, key=lambda k: res[k][0])
    value = res[key][0]
    return CertReport(
        condition="solution_bounds",
        margin=value,
        verdict=verdict_of(value) if all(flags.values()) else "fails",
        witness=res[key][1],
        samples_used=total,
        hypothesis=HYPOTHESES["solution_bounds"],
        details={"K": K, "holds": flags, "margins": margins, "attained_by": key,
                 "witnesses": {k: v[1] for k, v in res.items()}},
    )


# ---------------------------------------------------------------------------
# mass balance


def midpoint_rule(domain: Domain, resolution: int = 256):
    """Midpoint quadrature nodes and weights on the domain's native grid."""
    n = int(resolution)
    c = np.asarray(domain.center)
    if domain.kind == "disk":
        dr, dt = domain.radius / n, 2 * np.pi / n
        r = (np.arange(n) + 0.5) * dr
        t = (np.arange(n) + 0.5) * dt
        Rm, Tm = np.meshgrid(r, t, indexing="ij")
        X = c + np.stack([(Rm * np.cos(Tm)).ravel(), (Rm * np.sin(Tm)).ravel()], axis=1)
        return X, (Rm * dr * dt).ravel()
    a, b = domain.extents
    xs = c[0] - a / 2 + (np.arange(n) + 0.5) * a / n
    ys = c[1] - b / 2 + (np.arange(n) + 0.5) * b / n
    Xm, Ym = np.meshgrid(xs, ys, indexing="ij")
    return np.stack([Xm.ravel(), Ym.ravel()], axis=1), np.full(n * n, a * b / n**2)


def _quadrature(f, domain, resolution):
    X, w = midpoint_rule(domain, resolution)
    vals = _jet(as_scalar_field(f), X, np.zeros(len(X)), None, 0).value
    return float(np.sum(vals * w)), vals


def integrate(f, domain: Domain, resolution: int = 256) -> float:
    return _quadrature(f, domain, resolution)[0]


def check_mass_balance(f, f_star, omega: Domain, lam: Domain, resolution: int = 256) -> CertReport:
    """Strict inequality int_omega f < int_lam f*; midpoint quadrature."""
    I_f, fv = _quadrature(f, omega, resolution)
    I_s, sv = _quadrature(f_star, lam, resolution)
    if np.any(fv < 0):
        raise NegativeDensity(f"f takes the negative value {fv.min():.3e}")
    if np.any(sv <= 0):
        raise NegativeDensity(f"f* takes the nonpositive value {sv.min():.3e}")
    margin = I_s - I_f
    scale = max(abs(I_s), abs(I_f), 1.0)
    verdict = "holds-strictly" if margin > STRICT * scale else "fails"
    return CertReport(
        condition="mass_balance",
        margin=margin,
        verdict=verdict,
        witness=_witness([], None, None),
        samples_used=len(fv) + len(sv),
        hypothesis=HYPOTHESES["mass_balance"],
        required="holds-strictly",
        details={"integral_f": I_f, "integral_f_star": I_s, "resolution": int(resolution)},
    )


# ---------------------------------------------------------------------------


def bakelman_lower_bound(m0, phi0, gamma0, beta_sup, diam, sup_Dc) -> float:
    """min{m0, -phi0/gamma0} - (beta_sup/gamma0 + diam) sup_Dc."""
    vals = [m0, phi0, gamma0, beta_sup, diam, sup_Dc]
    if not all(math.isfinite(float(v)) for v in vals):
        raise ValueError("all inputs must be finite")
    if not gamma0 > 0:
        raise NonpositiveGamma(f"gamma0 must be positive, got {gamma0}")
    if sup_Dc < 0:
        raise ValueError("sup_Dc must be nonnegative")
    return min(m0, -phi0 / gamma0) - (beta_sup / gamma0 + diam) * sup_Dc

