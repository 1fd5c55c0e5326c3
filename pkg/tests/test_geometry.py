import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mate.errors import CornerPoint, PointNotOnBoundary
from mate.geometry import (
    Domain,
    boundary_positions,
    boundary_samples,
    defining_function,
    normal_and_curvature,
    tangential_project,
)

unit_square = Domain.rectangle((1.0, 1.0), (0.5, 0.5))


def test_construction_validates():
    with pytest.raises(ValueError):
        Domain.disk(0.0)
    with pytest.raises(ValueError):
        Domain.rectangle((1.0, -1.0))
    with pytest.raises(ValueError):
        Domain("ellipse")


@pytest.mark.parametrize(
    "domain, x, normal, kappa",
    [
        (Domain.disk(), (1.0, 0.0), (-1.0, 0.0), 1.0),
        (Domain.disk(2.0), (0.0, 2.0), (0.0, -1.0), 0.5),
        (unit_square, (0.5, 0.0), (0.0, 1.0), 0.0),
    ],
)
def test_normal_and_curvature(domain, x, normal, kappa):
    bp = normal_and_curvature(domain, x)
    np.testing.assert_allclose(bp.normal, normal, atol=1e-15)
    assert bp.curvature == kappa
    assert abs(bp.tangent @ bp.normal) < 1e-15


def test_off_boundary_point_rejected():
    with pytest.raises(PointNotOnBoundary):
        normal_and_curvature(Domain.disk(), (0.5, 0.0))


def test_corner_conventions():
    with pytest.raises(CornerPoint):
        normal_and_curvature(unit_square, (0.0, 0.0))
    avg = Domain.rectangle((1.0, 1.0), (0.5, 0.5), corner_convention="average")
    bp = normal_and_curvature(avg, (0.0, 0.0))
    np.testing.assert_allclose(bp.normal, np.array([1.0, 1.0]) / math.sqrt(2), atol=1e-15)
    assert bp.is_corner


def test_defining_function_examples():
    center = defining_function(Domain.disk(), (0.0, 0.0))
    assert center.value == -1.0 and not center.defined
    np.testing.assert_array_equal(center.gradient, [0.0, 0.0])
    v = defining_function(Domain.disk(), (0.5, 0.0))
    assert v.value == pytest.approx(-0.5)
    np.testing.assert_allclose(v.gradient, [1.0, 0.0])
    s = defining_function(unit_square, (0.5, 0.25))
    assert s.value == pytest.approx(-0.25)
    np.testing.assert_allclose(s.gradient, [0.0, -1.0])


def test_boundary_samples_disk_four():
    pts = boundary_samples(Domain.disk(), 4)
    angles = sorted(math.atan2(b.position[1], b.position[0]) % (2 * math.pi) for b in pts)
    np.testing.assert_allclose(np.diff(angles), math.pi / 2, atol=1e-14)


def test_boundary_samples_square_excludes_corners():
    X = boundary_positions(unit_square, 8, include_corners=False)
    assert len(X) == 8
    bottom = sorted(x for x, y in X if abs(y) < 1e-14)
    np.testing.assert_allclose(bottom, [1 / 3, 2 / 3], atol=1e-14)


def test_boundary_samples_quasi_uniform():
    X = boundary_positions(Domain.disk(), 1000)
    ang = np.sort(np.arctan2(X[:, 1], X[:, 0]) % (2 * math.pi))
    gaps = np.diff(np.concatenate([ang, [ang[0] + 2 * math.pi]]))
    assert gaps.max() <= 2 * math.pi / 1000 * 1.5


@pytest.mark.parametrize(
    "v, nu, out",
    [((1, 0), (1, 0), (0, 0)), ((1, 1), (0, 1), (1, 0)), ((3, 4), (0.6, 0.8), (0, 0))],
)
def test_tangential_project_examples(v, nu, out):
    np.testing.assert_allclose(tangential_project(np.array(v, float), np.array(nu, float)), out, atol=1e-14)


domains = st.sampled_from([Domain.disk(), Domain.disk(0.5, (1.0, -2.0)), unit_square,
                           Domain.rectangle((2.0, 0.5), (0.0, 0.0))])


@given(domains, st.integers(4, 200))
def test_boundary_frame_orthonormal(domain, count):
    for b in boundary_samples(domain, count):
        assert abs(b.tangent @ b.normal) < 1e-12
        assert abs(np.linalg.norm(b.normal) - 1.0) < 1e-12
        expected = 1.0 / domain.radius if domain.kind == "disk" else 0.0
        assert b.curvature == expected


@given(domains, st.integers(4, 64), st.floats(1e-6, 1e-2))
def test_defining_function_changes_sign(domain, count, eps):
    for b in boundary_samples(domain, count):
        assert abs(defining_function(domain, b.position).value) < 1e-12
        assert defining_function(domain, b.position + eps * b.normal).value < 0
        assert defining_function(domain, b.position - eps * b.normal).value > 0


@given(st.floats(-10, 10), st.floats(-10, 10), st.floats(0, 2 * math.pi))
def test_tangential_project_idempotent(a, b, theta):
    nu = np.array([math.cos(theta), math.sin(theta)])
    v = np.array([a, b])
    once = tangential_project(v, nu)
    np.testing.assert_allclose(tangential_project(once, nu), once, atol=1e-14)
