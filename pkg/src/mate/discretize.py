"""Structured grids, finite-difference jets and the augmented Hessian.

Disk grids are polar: rings ``r_i = i h`` (``i = 1..n_r``) at ``n_theta``
equally spaced angles, plus a single pole node.  Rectangle grids are
Cartesian and include the boundary.  Each grid carries five sparse
operators (``Gx, Gy, Hxx, Hxy, Hyy``) mapping nodal values to Cartesian
first and second derivatives, so jets of a whole grid function are five
sparse mat-vecs and the Newton Jacobian is a diagonal scaling of the same
operators.

Polar stencils, per ring:

* angular differences are trigonometrically fitted (exact on ``cos t``,
  ``sin t``), which removes the O(dt^2 / r) error that plain differences
  leave on linear functions near the pole;
* the radial first derivative is fourth order wherever ``r +- 2h`` exists,
  using the across-pole partner ``(r_1, t + pi)`` for the value at
  ``r = -h``; it enters divided by ``r``, so second order is not enough
  on the first rings;
* the boundary ring uses second-order one-sided radial stencils;
* the pole jet is a quadratic least-squares fit through the pole and the
  first ring.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import ResolutionTooCoarse
from .geometry import Domain
from .model import MatrixField, eval_jet

INTERIOR, BOUNDARY, POLE = 0, 1, 2
KIND_NAMES = {INTERIOR: "interior", BOUNDARY: "boundary", POLE: "pole"}


@dataclass(frozen=True)
class NodalJet:
    value: float
    gradient: np.ndarray
    hessian: np.ndarray


class Grid:
    """A classified structured grid with its finite-difference operators."""

    def __init__(self, domain, X, kinds, ops, weights, shape):
        self.domain = domain
        self.X = X
        self.kinds = kinds
        self.Gx, self.Gy, self.Hxx, self.Hxy, self.Hyy = ops
        self.weights = weights
        self.shape = shape
        self.interior = np.flatnonzero(kinds != BOUNDARY)
        self.boundary = np.flatnonzero(kinds == BOUNDARY)
        self._normals = None
        # polar radius about the domain center, exact for disk grids
        self.radius = np.linalg.norm(X - np.asarray(domain.center), axis=1)

    @property
    def size(self) -> int:
        return len(self.X)

    @property
    def h(self) -> float:
        """Characteristic mesh width (radial spacing, or the larger Cartesian spacing)."""
        if self.domain.kind == "disk":
            return self.domain.radius / self.shape[0]
        return max(e / (n - 1) for e, n in zip(self.domain.extents, self.shape))

    def boundary_normals(self) -> np.ndarray:
        if self._normals is None:
            self._normals = self.domain.inner_normals(self.X[self.boundary])
        return self._normals

    def node_index(self, point) -> int:
        return int(np.argmin(np.linalg.norm(self.X - np.asarray(point, dtype=float), axis=1)))

    def jets(self, u):
        """Gradients (N, 2) and Hessians (N, 2, 2) at every node."""
        # every operator annihilates constants; shifting by the first node
        # value (the pole, on disks) keeps the large ring-1 angular weights
        # from amplifying the rounding error of O(1) nodal values
        u = np.asarray(u, dtype=float)
        u = u - u[0]
        g = np.stack([self.Gx @ u, self.Gy @ u], axis=1)
        hxy = self.Hxy @ u
        H = np.empty((len(u), 2, 2))
        H[:, 0, 0] = self.Hxx @ u
        H[:, 1, 1] = self.Hyy @ u
        H[:, 0, 1] = hxy
        H[:, 1, 0] = hxy
        return g, H

    def interpolate(self, fn) -> np.ndarray:
        """Nodal values of ``fn(X)`` where ``X`` has shape (N, 2)."""
        return np.asarray(fn(self.X), dtype=float)

    def describe(self) -> dict:
        out = {"nodes": self.size, "boundary_nodes": len(self.boundary)}
        if self.domain.kind == "disk":
            out.update(n_r=self.shape[0], n_theta=self.shape[1])
        else:
            out.update(n_x=self.shape[0], n_y=self.shape[1])
        return out


def build_grid(domain: Domain, resolution) -> Grid:
    """``resolution`` is ``(n_r, n_theta)`` for a disk, ``(n_x, n_y)`` for a rectangle."""
    a, b = (int(v) for v in resolution)
    if domain.kind == "disk":
        if a < 4 or b < 8 or b % 2:
            raise ResolutionTooCoarse(f"disk grid needs n_r >= 4 and even n_theta >= 8, got ({a}, {b})")
        return _polar_grid(domain, a, b)
    if a < 5 or b < 5:
        raise ResolutionTooCoarse(f"rectangle grid needs n_x, n_y >= 5, got ({a}, {b})")
    return _cartesian_grid(domain, a, b)


# ---------------------------------------------------------------------------
# polar grid


def _polar_grid(domain, n_r, n_t):
    R = domain.radius
    h = R / n_r
    dt = 2.0 * np.pi / n_t
    N = n_r * n_t + 1
    j = np.arange(n_t)
    theta = j * dt
    r_nodes = np.concatenate([[0.0], np.repeat(np.arange(1, n_r + 1) * h, n_t)])
    t_nodes = np.concatenate([[0.0], np.tile(theta, n_r)])
    X = np.asarray(domain.center) + np.stack([r_nodes * np.cos(t_nodes), r_nodes * np.sin(t_nodes)], axis=1)
    X[0] = domain.center
    kinds = np.full(N, INTERIOR)
    kinds[0] = POLE
    kinds[1 + (n_r - 1) * n_t:] = BOUNDARY

    def idx(ring, jj):
        # ring -1 is the across-pole partner (r = -h, t) == (h, t + pi)
        jj = np.asarray(jj)
        if ring == 0:
            return np.zeros_like(jj)
        if ring == -1:
            ring, jj = 1, jj + n_t // 2
        return 1 + (ring - 1) * n_t + np.mod(jj, n_t)

    def radial_first(i):
        if i <= n_r - 2:
            return [(i - 2, 1 / 12), (i - 1, -8 / 12), (i + 1, 8 / 12), (i + 2, -1 / 12)]
        if i == n_r - 1:
            return [(i - 1, -0.5), (i + 1, 0.5)]
        return [(i, 1.5), (i - 1, -2.0), (i - 2, 0.5)]

    def radial_second(i):
        if i <= n_r - 1:
            return [(i - 1, 1.0), (i, -2.0), (i + 1, 1.0)]
        return [(i, 2.0), (i - 1, -5.0), (i - 2, 4.0), (i - 3, -1.0)]

    rows = {k: ([], [], []) for k in ("ur", "urr", "ut", "utt")}

    def add(name, row, col, val):
        r_, c_, v_ = rows[name]
        r_.append(np.broadcast_to(row, np.shape(col)).ravel())
        c_.append(np.asarray(col).ravel())
        v_.append(np.broadcast_to(val, np.shape(col)).ravel())

    s1 = 2.0 * np.sin(dt)
    s2 = 2.0 - 2.0 * np.cos(dt)
    for i in range(1, n_r + 1):
        row = idx(i, j)
        for ring, w in radial_first(i):
            add("ur", row, idx(ring, j), w / h)
        for ring, w in radial_second(i):
            add("urr", row, idx(ring, j), w / h**2)
        add("ut", row, idx(i, j + 1), 1.0 / s1)
        add("ut", row, idx(i, j - 1), -1.0 / s1)
        add("utt", row, idx(i, j + 1), 1.0 / s2)
        add("utt", row, idx(i, j), -2.0 / s2)
        add("utt", row, idx(i, j - 1), 1.0 / s2)

    def mat(name):
        r_, c_, v_ = rows[name]
        return sp.csr_matrix((np.concatenate(v_), (np.concatenate(r_), np.concatenate(c_))), shape=(N, N))

    Ur, Urr, Ut, Utt = (mat(k) for k in ("ur", "urr", "ut", "utt"))
    # the pole row of Ut is empty, so the pole column of Ur drops out here
    Urt = (Ur @ Ut).tocsr()

    r = r_nodes.copy()
    r[0] = 1.0
    c, s = np.cos(t_nodes), np.sin(t_nodes)
    ring = np.ones(N)
    ring[0] = 0.0
    D = sp.diags
    T = D(1.0 / r) @ Ur + D(1.0 / r**2) @ Utt
    M = D(1.0 / r) @ Urt - D(1.0 / r**2) @ Ut
    Gx = D(ring * c) @ Ur - D(ring * s / r) @ Ut
    Gy = D(ring * s) @ Ur + D(ring * c / r) @ Ut
    Hxx = D(ring * c * c) @ Urr + D(ring * s * s) @ T - D(ring * 2 * s * c) @ M
    Hyy = D(ring * s * s) @ Urr + D(ring * c * c) @ T + D(ring * 2 * s * c) @ M
    Hxy = D(ring * s * c) @ (Urr - T) + D(ring * (c * c - s * s)) @ M

    # pole: least-squares quadratic through the pole and the first ring
    pts = np.concatenate([[[0.0, 0.0]], h * np.stack([np.cos(theta), np.sin(theta)], axis=1)])
    V = np.stack([np.ones(len(pts)), pts[:, 0], pts[:, 1], pts[:, 0] ** 2, pts[:, 0] * pts[:, 1], pts[:, 1] ** 2], axis=1)
    P = np.linalg.pinv(V)
    cols = np.concatenate([[0], idx(1, j)])
    pole_rows = {"gx": P[1], "gy": P[2], "hxx": 2 * P[3], "hxy": P[4], "hyy": 2 * P[5]}

    def with_pole(Mx, w):
        Mx = Mx.tolil()
        Mx[0, :] = 0.0
        Mx[0, cols] = w
        return Mx.tocsr()

    ops = tuple(
        with_pole(Mx, pole_rows[k])
        for Mx, k in zip((Gx, Gy, Hxx, Hxy, Hyy), ("gx", "gy", "hxx", "hxy", "hyy"))
    )
    for o in ops:
        o.eliminate_zeros()

    weights = np.empty(N)
    weights[0] = np.pi * h**2 / 4
    weights[1:] = r_nodes[1:] * h * dt
    weights[kinds == BOUNDARY] = np.pi * (R * h - h**2 / 4) / n_t
    grid = Grid(domain, X, kinds, ops, weights, (n_r, n_t))
    grid.radius = r_nodes
    return grid


# ---------------------------------------------------------------------------
# Cartesian grid


def _d1(n, h):
    D = sp.lil_matrix((n, n))
    for i in range(1, n - 1):
        D[i, i - 1], D[i, i + 1] = -0.5 / h, 0.5 / h
    D[0, :3] = np.array([-1.5, 2.0, -0.5]) / h
    D[n - 1, n - 3:] = np.array([0.5, -2.0, 1.5]) / h
    return D.tocsr()


def _d2(n, h):
    D = sp.lil_matrix((n, n))
    for i in range(1, n - 1):
        D[i, i - 1:i + 2] = np.array([1.0, -2.0, 1.0]) / h**2
    D[0, :4] = np.array([2.0, -5.0, 4.0, -1.0]) / h**2
    D[n - 1, n - 4:] = np.array([-1.0, 4.0, -5.0, 2.0]) / h**2
    return D.tocsr()


def _cartesian_grid(domain, n_x, n_y):
    (a, b), (cx, cy) = domain.extents, domain.center
    xs = cx - a / 2 + a * np.arange(n_x) / (n_x - 1)
    ys = cy - b / 2 + b * np.arange(n_y) / (n_y - 1)
    xs[-1], ys[-1] = cx + a / 2, cy + b / 2
    hx, hy = a / (n_x - 1), b / (n_y - 1)
    XX, YY = np.meshgrid(xs, ys, indexing="ij")
    X = np.stack([XX.ravel(), YY.ravel()], axis=1)
    ii, jj = np.meshgrid(np.arange(n_x), np.arange(n_y), indexing="ij")
    on_edge = (ii == 0) | (ii == n_x - 1) | (jj == 0) | (jj == n_y - 1)
    kinds = np.where(on_edge.ravel(), BOUNDARY, INTERIOR)
    Ix, Iy = sp.identity(n_x, format="csr"), sp.identity(n_y, format="csr")
    d1x, d1y, d2x, d2y = _d1(n_x, hx), _d1(n_y, hy), _d2(n_x, hx), _d2(n_y, hy)
    ops = (
        sp.kron(d1x, Iy, format="csr"),
        sp.kron(Ix, d1y, format="csr"),
        sp.kron(d2x, Iy, format="csr"),
        sp.kron(d1x, d1y, format="csr"),
        sp.kron(Ix, d2y, format="csr"),
    )
    wx = np.full(n_x, hx)
    wx[[0, -1]] = hx / 2
    wy = np.full(n_y, hy)
    wy[[0, -1]] = hy / 2
    weights = np.outer(wx, wy).ravel()
    return Grid(domain, X, kinds, ops, weights, (n_x, n_y))


# ---------------------------------------------------------------------------
# jets and ellipticity


def fd_jet(grid: Grid, u, node: int) -> NodalJet:
    u = np.asarray(u, dtype=float)
    value = float(u[node])
    u = u - u[0]
    g = np.array([grid.Gx[node] @ u, grid.Gy[node] @ u]).ravel()
    hxy = float((grid.Hxy[node] @ u)[0])
    H = np.array([[float((grid.Hxx[node] @ u)[0]), hxy], [hxy, float((grid.Hyy[node] @ u)[0])]])
    return NodalJet(value, g, H)


def eig2(M):
    """Closed-form eigenvalues (lo, hi) of symmetric 2x2 matrices, shape (..., 2, 2)."""
    a, b, c = M[..., 0, 0], 0.5 * (M[..., 0, 1] + M[..., 1, 0]), M[..., 1, 1]
    mean = 0.5 * (a + c)
    rad = np.hypot(0.5 * (a - c), b)
    return mean - rad, mean + rad


def augmented_hessians(grid: Grid, u, A: MatrixField, nodes=None):
    """w = D^2u - A(x, u, Du) at ``nodes`` (default: every node)."""
    u = np.asarray(u, dtype=float)
    g, H = grid.jets(u)
    if nodes is None:
        nodes = np.arange(grid.size)
    Aval = eval_jet(A, grid.X[nodes], u[nodes], g[nodes], order=0).value
    return H[nodes] - Aval


def augmented_hessian(grid: Grid, u, A: MatrixField, node: int) -> np.ndarray:
    return augmented_hessians(grid, u, A, np.array([node]))[0]


def ellipticity_margin(grid: Grid, u, A: MatrixField) -> float:
    """Minimum over interior and pole nodes of the smallest eigenvalue of w."""
    lo, _ = eig2(augmented_hessians(grid, u, A, grid.interior))
    return float(lo.min())


GRID_CSV_COLUMNS = ("node_id", "kind", "x1", "x2", "u", "res", "lambda_min_w")


def write_grid_csv(path, grid: Grid, u, res=None, lam=None):
    n = grid.size
    res = np.full(n, np.nan) if res is None else res
    lam = np.full(n, np.nan) if lam is None else lam
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(GRID_CSV_COLUMNS)
        for k in range(n):
            w.writerow([k, KIND_NAMES[int(grid.kinds[k])], repr(float(grid.X[k, 0])), repr(float(grid.X[k, 1])),
                        repr(float(u[k])), repr(float(res[k])), repr(float(lam[k]))])
