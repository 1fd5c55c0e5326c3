"""Two-dimensional domains (disk, rectangle) and their boundary geometry.

Normals are *inner* normals throughout, and curvature is signed so that a
convex boundary has positive curvature.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import CornerPoint, PointNotOnBoundary

CORNER_CONVENTIONS = ("average", "reject")


@dataclass(frozen=True)
class Domain:
    kind: str
    center: tuple[float, float] = (0.0, 0.0)
    radius: float | None = None
    extents: tuple[float, float] | None = None
    corner_convention: str = "reject"

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        if self.kind == "disk":
            if self.radius is None or not self.radius > 0:
                raise ValueError("disk radius must be positive")
            object.__setattr__(self, "radius", float(self.radius))
        elif self.kind == "rectangle":
            if self.extents is None or len(self.extents) != 2 or min(self.extents) <= 0:
                raise ValueError("rectangle extents must be two positive lengths")
            object.__setattr__(self, "extents", tuple(float(e) for e in self.extents))
            if self.corner_convention not in CORNER_CONVENTIONS:
                raise ValueError(f"corner_convention must be one of {CORNER_CONVENTIONS}")
        else:
            raise ValueError(f"unknown domain kind {self.kind!r}")

    @classmethod
    def disk(cls, radius=1.0, center=(0.0, 0.0)):
        return cls("disk", center=center, radius=radius)

    @classmethod
    def rectangle(cls, extents=(1.0, 1.0), center=(0.5, 0.5), corner_convention="reject"):
        return cls("rectangle", center=center, extents=extents, corner_convention=corner_convention)

    @property
    def diameter(self) -> float:
        if self.kind == "disk":
            return 2.0 * self.radius
        return math.hypot(*self.extents)

    @property
    def area(self) -> float:
        if self.kind == "disk":
            return math.pi * self.radius**2
        return self.extents[0] * self.extents[1]

    @property
    def perimeter(self) -> float:
        if self.kind == "disk":
            return 2.0 * math.pi * self.radius
        return 2.0 * (self.extents[0] + self.extents[1])

    @property
    def half_extents(self) -> np.ndarray:
        return 0.5 * np.asarray(self.extents)

    def describe(self) -> dict:
        out = {"kind": self.kind, "center": list(self.center)}
        if self.kind == "disk":
            out["radius"] = self.radius
        else:
            out["extents"] = list(self.extents)
            out["corner_convention"] = self.corner_convention
        return out

    # vectorized boundary geometry, used by the solver and the certifiers
    def inner_normals(self, X) -> np.ndarray:
        """Inner unit normals at boundary points ``X`` of shape (m, 2)."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        c = np.asarray(self.center)
        if self.kind == "disk":
            d = c - X
            return d / np.linalg.norm(d, axis=1, keepdims=True)
        normals, corner = _rectangle_normals(self, X)
        if np.any(corner) and self.corner_convention == "reject":
            raise CornerPoint(f"corner point {X[np.argmax(corner)].tolist()} (corner_convention='reject')")
        return normals

    def curvatures(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if self.kind == "disk":
            return np.full(len(X), 1.0 / self.radius)
        return np.zeros(len(X))


class BoundaryPoint(NamedTuple):
    position: np.ndarray
    normal: np.ndarray
    tangent: np.ndarray
    curvature: float
    is_corner: bool = False


class DefiningValue(NamedTuple):
    value: float
    gradient: np.ndarray
    defined: bool


def _rotate(nu):
    # counter-clockwise tangent for an inner normal
    return np.array([nu[1], -nu[0]]) if np.ndim(nu) == 1 else np.stack([nu[:, 1], -nu[:, 0]], axis=1)


def _rectangle_normals(domain, X, rtol=1e-10):
    # normal of the nearest edge in the sup-distance sense; off the boundary
    # this extends the normal as a constant along normal lines
    c = np.asarray(domain.center)
    tol = rtol * domain.diameter
    rel = X - c
    per_axis = np.abs(rel) - domain.half_extents
    active = per_axis >= per_axis.max(axis=1, keepdims=True) - tol
    normals = np.where(active, -np.sign(rel), 0.0)
    corner = active.all(axis=1)
    norm = np.linalg.norm(normals, axis=1, keepdims=True)
    norm[norm == 0] = 1.0
    return normals / norm, corner


def defining_function(domain: Domain, x) -> DefiningValue:
    """Signed distance for the disk; max of per-axis signed distances for the rectangle.

    The gradient is the outward direction of increase.  Where the function is
    not differentiable (disk center, rectangle ridge lines) the gradient is
    the zero vector and ``defined`` is False.
    """
    x = np.asarray(x, dtype=float)
    c = np.asarray(domain.center)
    if domain.kind == "disk":
        d = x - c
        r = float(np.linalg.norm(d))
        if r == 0.0:
            return DefiningValue(-domain.radius, np.zeros(2), False)
        return DefiningValue(r - domain.radius, d / r, True)
    rel = x - c
    per_axis = np.abs(rel) - domain.half_extents
    k = int(np.argmax(per_axis))
    value = float(per_axis[k])
    grad = np.zeros(2)
    if per_axis[0] == per_axis[1] or rel[k] == 0.0:
        return DefiningValue(value, grad, False)
    grad[k] = np.sign(rel[k])
    return DefiningValue(value, grad, True)


def normal_and_curvature(domain: Domain, x) -> BoundaryPoint:
    x = np.asarray(x, dtype=float)
    s = defining_function(domain, x).value
    if abs(s) > 1e-10 * domain.diameter:
        raise PointNotOnBoundary(f"point {x.tolist()} has defining-function value {s:.3e}")
    if domain.kind == "disk":
        nu = domain.inner_normals(x[None])[0]
        return BoundaryPoint(x, nu, _rotate(nu), 1.0 / domain.radius)
    normals, corner = _rectangle_normals(domain, x[None])
    if corner[0] and domain.corner_convention == "reject":
        raise CornerPoint(f"corner point {x.tolist()} (corner_convention='reject')")
    nu = normals[0]
    return BoundaryPoint(x, nu, _rotate(nu), 0.0, bool(corner[0]))


def boundary_samples(domain: Domain, count: int, include_corners: bool | None = None) -> list[BoundaryPoint]:
    """Quasi-uniform arc-length samples of the boundary.

    Rectangle corners are included when ``corner_convention == "average"``
    unless ``include_corners`` overrides it.
    """
    if count < 4:
        raise ValueError("boundary_samples needs count >= 4")
    positions = boundary_positions(domain, count, include_corners)
    return [normal_and_curvature(domain, x) for x in positions]


def boundary_positions(domain: Domain, count: int, include_corners: bool | None = None) -> np.ndarray:
    c = np.asarray(domain.center)
    if domain.kind == "disk":
        theta = 2.0 * np.pi * np.arange(count) / count
        return c + domain.radius * np.stack([np.cos(theta), np.sin(theta)], axis=1)
    if include_corners is None:
        include_corners = domain.corner_convention == "average"
    a, b = domain.extents
    lengths = np.array([a, b, a, b])
    per_edge = _split_count(count, lengths)
    lo = c - domain.half_extents
    # counter-clockwise from the lower-left corner
    starts = [lo, lo + [a, 0.0], lo + [a, b], lo + [0.0, b]]
    dirs = [np.array([1.0, 0.0]), np.array([0.0, 1.0]), np.array([-1.0, 0.0]), np.array([0.0, -1.0])]
    pts = []
    for start, d, length, m in zip(starts, dirs, lengths, per_edge):
        if include_corners:
            s = length * np.arange(m) / m
        else:
            s = length * np.arange(1, m + 1) / (m + 1)
        pts.append(start + s[:, None] * d)
    out = np.concatenate(pts)
    # exact edge coordinates, so the sign tests in _rectangle_normals are clean
    hi = c + domain.half_extents
    for k in range(2):
        out[:, k] = np.where(np.isclose(out[:, k], lo[k], rtol=0, atol=1e-14), lo[k], out[:, k])
        out[:, k] = np.where(np.isclose(out[:, k], hi[k], rtol=0, atol=1e-14), hi[k], out[:, k])
    return out


def _split_count(count, lengths):
    raw = count * lengths / lengths.sum()
    m = np.floor(raw).astype(int)
    for k in np.argsort(-(raw - m), kind="stable")[: count - m.sum()]:
        m[k] += 1
    return m


def tangential_project(v, nu) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    nu = np.asarray(nu, dtype=float)
    return v - np.dot(v, nu) * nu
