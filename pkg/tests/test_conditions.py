import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mate import conditions as cond
from mate.conditions import (
    SampleBox,
    bakelman_lower_bound,
    check_A_convexity,
    check_mass_balance,
    check_monotonicity,
    check_oblique_concavity,
    check_QS,
    check_regularity,
    check_solution_bounds,
    verdict_of,
)
from mate.errors import NonpositiveGamma
from mate.geometry import Domain
from mate.model import (
    MatrixField,
    constant_field,
    make_conformal_A,
    make_constant_A,
    make_neumann_G,
    make_oblique_G,
    make_ot_A,
    make_zero_A,
    parse_expression,
)
from mate.schemas import CERT_REPORT_SCHEMA, validate

CONF = make_conformal_A()
NEG_P2 = MatrixField(lambda x, z, p: np.einsum("m,ij->mij", -(p**2).sum(1), np.eye(2)), None, "-|p|^2 I")
Z_I = MatrixField(lambda x, z, p: np.einsum("m,ij->mij", z, np.eye(2)), None, "zI")
SMALL = SampleBox(z_count=3, p_count=5, direction_count=16, boundary_count=16, interior_count=3)
MATRICES = [CONF, make_zero_A(), make_constant_A(-np.eye(2)), make_ot_A("quadratic"), NEG_P2]


def test_verdict_thresholds():
    assert verdict_of(1e-8) == "holds-strictly"
    assert verdict_of(1e-10) == "holds-weakly"
    assert verdict_of(-1e-10) == "holds-weakly"
    assert verdict_of(-1e-8) == "fails"


def test_regularity_examples():
    r = check_regularity(CONF)
    assert r.margin == pytest.approx(1.0, abs=1e-6) and r.verdict == "holds-strictly"
    r = check_regularity(make_zero_A())
    assert abs(r.margin) <= 1e-9 and r.verdict == "holds-weakly"
    r = check_regularity(NEG_P2)
    assert r.margin == pytest.approx(-2.0, abs=1e-5) and r.verdict == "fails"
    validate(r.to_json(), CERT_REPORT_SCHEMA)


def test_strict_regularity_fails_on_zero():
    assert not check_regularity(make_zero_A(), strict=True).passed
    assert check_regularity(CONF, strict=True).passed


@settings(max_examples=10)
@given(st.floats(0, 2 * math.pi))
def test_regularity_rotation_invariant(theta):
    r = check_regularity(CONF, replace(SMALL, rotation=theta))
    assert r.margin == pytest.approx(1.0, abs=1e-8)


def test_monotonicity_examples():
    D = Domain.disk()
    G = make_neumann_G(D, "z - x1")
    r = check_monotonicity(make_zero_A(), parse_expression("1"), G)
    assert r.constants["gamma0"] == pytest.approx(1.0, abs=1e-8)
    assert r.details["min_eig_DzA"] == 0.0 and r.details["min_Bz"] == 0.0
    box = SampleBox(z_interval=(-1.0, 0.0))
    r = check_monotonicity(CONF, parse_expression("exp(z)", positive=True), G, box)
    assert r.details["min_eig_DzA"] == 0.0
    assert r.details["min_Bz"] == pytest.approx(math.exp(-1), rel=1e-6)


def test_A_convexity_examples():
    r = check_A_convexity(Domain.disk(), make_zero_A(), constant_field(0.0))
    assert r.margin == pytest.approx(1.0, abs=1e-12) and r.constants["delta0"] == pytest.approx(1.0)
    sq = Domain.rectangle()
    r = check_A_convexity(sq, make_zero_A(), constant_field(0.0), box=SampleBox(domain=sq))
    assert abs(r.margin) <= 1e-12 and r.verdict == "holds-weakly"


@given(st.sampled_from([0.5, 1.0, 2.0, 3.0]), st.floats(-2.5, 1.0))
@settings(max_examples=15)
def test_A_convexity_closed_form(R, phi):
    D = Domain.disk(R)
    r = check_A_convexity(D, CONF, constant_field(phi), (0.0, 1.0), replace(SMALL, domain=D))
    assert r.margin == pytest.approx(1.0 / R + phi, abs=1e-6)


def test_QS_examples():
    r = check_QS(CONF, SampleBox(p_max=10))
    assert r.margin == pytest.approx(100 / 202, rel=0.02)
    assert r.constants["mu0"] == r.margin
    assert check_QS(make_constant_A(-np.eye(2))).margin == pytest.approx(1.0, abs=1e-9)
    assert check_QS(make_zero_A()).margin == 0.0


@given(st.floats(0.5, 8.0), st.floats(1.0, 3.0))
@settings(max_examples=15)
def test_QS_monotone_in_p_max(p_max, factor):
    lo = check_QS(CONF, replace(SMALL, p_max=p_max)).margin
    hi = check_QS(CONF, replace(SMALL, p_max=p_max * factor)).margin
    assert hi >= lo - 1e-12


def test_oblique_concavity_examples():
    D = Domain.disk()
    r = check_oblique_concavity(make_neumann_G(D, "z"), D)
    assert r.constants == {"beta0": 1.0, "sigma0": 1.0}
    assert abs(r.details["concavity_margin"]) == 0.0 and r.verdict == "holds-weakly"
    r = check_oblique_concavity(make_oblique_G(D, "z", quadratic=-0.1), D)
    assert r.details["concavity_margin"] == pytest.approx(0.2, abs=1e-12)
    r = check_oblique_concavity(make_oblique_G(D, "z", quadratic=1.0), D)
    assert r.details["concavity_margin"] == pytest.approx(-2.0, abs=1e-12) and r.verdict == "fails"


def test_solution_bounds_examples():
    r = check_solution_bounds(Z_I, parse_expression("1"), parse_expression("z"), 2.0)
    assert r.details["holds"]["lower_interior"]
    assert r.details["margins"]["lower_interior"] == pytest.approx(3.0, abs=1e-12)
    assert r.details["holds"]["lower_boundary"] and r.details["holds"]["upper_boundary"]
    r = check_solution_bounds(make_zero_A(), parse_expression("1"), parse_expression("z"), 2.0)
    assert not r.details["holds"]["lower_interior"] and r.verdict == "fails"


def test_mass_balance_examples():
    D = Domain.disk()
    r = check_mass_balance(constant_field(1.0), constant_field(2.0), D, D)
    assert r.details["integral_f"] == pytest.approx(math.pi, rel=1e-4)
    assert r.details["integral_f_star"] == pytest.approx(2 * math.pi, rel=1e-4)
    assert r.passed
    r = check_mass_balance(constant_field(1.0), constant_field(1.0), D, D)
    assert r.verdict == "fails"
    r = check_mass_balance(constant_field(0.0), constant_field(1.0), D, D)
    assert r.details["integral_f"] == 0.0 and r.passed


def test_bakelman_examples():
    assert bakelman_lower_bound(0, 1, 1, 1, 2, 1) == -4
    assert bakelman_lower_bound(1, 0, 2, 1, 1, 2) == -3
    assert bakelman_lower_bound(0.5, 3, 2, 7, 9, 0) == min(0.5, -1.5)
    with pytest.raises(NonpositiveGamma):
        bakelman_lower_bound(0, 1, 0, 1, 1, 1)


def _reevaluate(report, A=None, domain=None):
    w = report.witness
    if report.condition == "regularity":
        return cond.regularity_quantity(A, w["x"], w["z"], w["p"], *w["dirs"])
    if report.condition == "QS":
        return cond.qs_quantity(A, w["x"], w["z"], w["p"])
    if report.condition == "A_convexity":
        return -cond.a_convexity_quantity(domain, A, w["x"], w["z"], w["p"], w["dirs"][0])
    raise AssertionError(report.condition)


@pytest.mark.parametrize("A", MATRICES, ids=lambda a: a.name)
def test_witness_reproduces_margin(A, small_box):
    for r in (check_regularity(A, small_box), check_QS(A, small_box)):
        assert _reevaluate(r, A) == pytest.approx(r.margin, abs=1e-10)


@given(st.sampled_from([0.5, 1.0, 2.0]), st.floats(-1.0, 1.0))
@settings(max_examples=8)
def test_A_convexity_witness_reproduces(R, phi):
    D = Domain.disk(R)
    r = check_A_convexity(D, CONF, constant_field(phi), (0.0, 1.0), replace(SMALL, domain=D))
    assert _reevaluate(r, CONF, D) == pytest.approx(r.margin, abs=1e-10)


@pytest.mark.parametrize("A", MATRICES, ids=lambda a: a.name)
def test_margins_monotone_under_refinement(A):
    box = SampleBox(z_count=3, p_count=3, direction_count=8, boundary_count=8, interior_count=3, polish=False)
    fine = box.refined()
    assert check_regularity(A, fine).margin <= check_regularity(A, box).margin + 1e-12
    assert check_QS(A, fine).margin >= check_QS(A, box).margin - 1e-12
    phi = constant_field(-0.3)
    assert (check_A_convexity(box.domain, A, phi, (0, 1), fine).margin
            <= check_A_convexity(box.domain, A, phi, (0, 1), box).margin + 1e-12)


def test_sample_box_validation():
    with pytest.raises(ValueError):
        SampleBox(z_count=1)
    with pytest.raises(ValueError):
        SampleBox(p_max=0.0)
    fine = SampleBox().refined()
    assert fine.z_count == 17 and fine.direction_count == 128


def test_determinism_across_threads(monkeypatch, small_box):
    out = []
    for threads in ("1", "4"):
        monkeypatch.setenv("MATE_THREADS", threads)
        out.append(check_regularity(CONF, small_box).to_json())
    assert out[0] == out[1]
