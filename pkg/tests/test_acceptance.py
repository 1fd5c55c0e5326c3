"""The twelve acceptance criteria, at their stated tolerances.

Each test records one PASS/FAIL line, printed in the terminal summary.
"""
import math
import os
import subprocess
import sys
import textwrap
import time

import numpy as np
import pytest

from mate.conditions import (
    SampleBox,
    bakelman_lower_bound,
    check_A_convexity,
    check_mass_balance,
    check_QS,
    check_regularity,
)
from mate.geometry import Domain
from mate.model import MatrixField, invert_cost_gradient, constant_field, make_conformal_A, make_constant_A, make_ot_A, make_zero_A
from mate.solver import DiscreteSystem, continuation_solve
from mate.verify import check_comparison, check_super_sub, get_case, jacobian_check, mms_study

MMS_CASES = ("MA-DISK", "CONF-DISK", "OT-QUAD")


def _timed(fn):
    t0 = time.perf_counter()
    out = fn()
    return out, time.perf_counter() - t0


@pytest.fixture(scope="module")
def studies():
    out = {}
    for name in MMS_CASES:
        table, secs = _timed(lambda: mms_study(get_case(name), (32, 64, 128)))
        out[name] = (table, secs)
    return out


def test_01_regularity(criterion):
    with criterion(1, "regularity certifier") as c:
        conformal = make_conformal_A()
        conformal_fd = MatrixField(conformal.func, None, "conformal (FD jets)")
        neg = MatrixField(lambda x, z, p: np.einsum("m,ij->mij", -(p**2).sum(1), np.eye(2)), None, "-|p|^2 I")
        runs = {}
        for key, A in (("conf", conformal), ("conf_fd", conformal_fd), ("zero", make_zero_A()), ("neg", neg)):
            runs[key] = _timed(lambda: check_regularity(A))
        c.detail = ", ".join(f"{k}={r.margin:.9f} ({s:.1f}s)" for k, (r, s) in runs.items())
        assert abs(runs["conf"][0].margin - 1.0) <= 1e-6
        assert abs(runs["conf_fd"][0].margin - 1.0) <= 5e-3
        assert abs(runs["zero"][0].margin) <= 1e-9 and runs["zero"][0].verdict == "holds-weakly"
        assert abs(runs["neg"][0].margin + 2.0) <= 1e-6 and runs["neg"][0].verdict == "fails"
        assert max(s for _, s in runs.values()) <= 5.0


def test_02_A_convexity(criterion):
    with criterion(2, "A-convexity oracle 1/R + phi") as c:
        worst = 0.0
        for R in (0.5, 1.0, 2.0):
            D = Domain.disk(R)
            for phi in (-1.5, -0.5, 0.0, 0.4):
                r = check_A_convexity(D, make_conformal_A(), constant_field(phi), (0.0, 1.0), SampleBox(domain=D))
                want = 1.0 / R + phi
                worst = max(worst, abs(r.margin - want))
                expected = "holds-strictly" if want > 1e-9 else ("holds-weakly" if want >= -1e-9 else "fails")
                assert r.verdict == expected, (R, phi, r.verdict)
        c.detail = f"12 combinations, max error {worst:.1e}"
        assert worst <= 1e-6


def test_03_QS(criterion):
    with criterion(3, "QS constant") as c:
        conf = check_QS(make_conformal_A(), SampleBox(p_max=10)).margin
        neg = check_QS(make_constant_A(-np.eye(2))).margin
        c.detail = f"conformal mu0={conf:.6f} (target {100 / 202:.6f}), -I mu0={neg!r}"
        assert abs(conf - 100 / 202) <= 0.02 * 100 / 202
        assert abs(neg - 1.0) <= 1e-9


def test_04_OT_generator(criterion):
    with criterion(4, "OT generator") as c:
        rng = np.random.default_rng(7)
        x = rng.uniform(-1, 1, (500, 2))
        z = rng.uniform(-1, 1, 500)
        p = rng.uniform(-5, 5, (500, 2))
        dot = make_ot_A("dot")
        quad = make_ot_A("quadratic", inversion="newton")
        e_dot = float(np.abs(dot(x, z, p)).max())
        e_quad = float(np.abs(quad(x, z, p) + np.eye(2)).max())
        # the default seed is exact for this cost, so also start Newton from a perturbed seed
        y, iters = invert_cost_gradient(quad.cost, x, p, y0=x + p + rng.normal(0, 0.5, x.shape))
        e_far = float(np.abs(quad.cost.c_xx(x, y) + np.eye(2)).max())
        e_y = float(np.abs(y - (x + p)).max())
        c.detail = (f"|A_dot| = {e_dot:.1e}, |A_quad + I| = {e_quad:.1e}; perturbed seed: {iters} Newton iters, "
                    f"|Y - (x+p)| = {e_y:.1e}, |A + I| = {e_far:.1e}")
        assert e_dot <= 1e-14 and e_quad <= 1e-10 and e_far <= 1e-10
        assert quad.inversion == "newton" and iters >= 1 and e_y <= 1e-10


def test_05_MMS(criterion, studies):
    with criterion(5, "MMS convergence 32/64/128") as c:
        parts = []
        ok = True
        for name in MMS_CASES:
            table, secs = studies[name]
            orders = table.orders()
            err = table.rows[-1]["err_inf"]
            parts.append(f"{name}: err128={err:.1e} orders={[round(o, 2) for o in orders]} {secs:.0f}s")
            ok &= all(o >= 1.8 for o in orders) and err <= 1e-3 and secs <= 300
        c.detail = "; ".join(parts)
        assert ok


def test_06_ellipticity(criterion, studies):
    with criterion(6, "ellipticity tracking (CONF-DISK, 64 rings)") as c:
        rep = studies["CONF-DISK"][0].reports[1]
        c.detail = f"final margin {rep.final_margin:.4f}, min accepted {min(rep.margin_history):.4f}"
        assert 0.33 <= rep.final_margin <= 0.40
        assert all(m > 0 for m in rep.margin_history)


def test_07_continuation(criterion, studies):
    with criterion(7, "continuation budget at 64 rings") as c:
        parts = []
        for name in MMS_CASES:
            rep = studies[name][0].reports[1]
            parts.append(f"{name}: {rep.total_iters} iters, seed res {rep.seed_residual:.1e}")
            assert rep.t_path[-1] == 1.0 and rep.converged
            assert rep.total_iters <= 40 and rep.seed_residual <= 1e-10
        c.detail = "; ".join(parts)


def test_08_jacobian(criterion):
    with criterion(8, "Jacobian consistency") as c:
        errs = {}
        for name in MMS_CASES:
            case = get_case(name)
            sys_ = DiscreteSystem(case.problem, resolution=(32, 64))
            errs[name] = jacobian_check(sys_, case.u(sys_.grid.X), count=20, eps=1e-6)
        c.detail = ", ".join(f"{k}={v:.1e}" for k, v in errs.items())
        assert max(errs.values()) <= 1e-4


def test_09_comparison(criterion):
    with criterion(9, "comparison / super-sub suite") as c:
        case = get_case("MA-DISK")
        sys_ = DiscreteSystem(case.problem, resolution=(32, 64))
        u, _ = continuation_solve(sys_)
        sup = check_super_sub(u + 0.5, sys_, "super")
        sub = check_super_sub(u - 0.5, sys_, "sub")
        cmp_ = check_comparison(u, u + 0.1, sys_)
        c.detail = f"super {sup.verdict}, sub {sub.verdict}, comparison {cmp_.verdict}"
        assert sup.holds and sub.holds and cmp_.verdict == "consistent"


def test_10_mass_balance(criterion):
    with criterion(10, "mass balance") as c:
        D = Domain.disk()
        r = check_mass_balance(constant_field(1.0), constant_field(2.0), D, D)
        eq = check_mass_balance(constant_field(1.0), constant_field(1.0), D, D)
        f, fs = r.details["integral_f"], r.details["integral_f_star"]
        c.detail = f"({f:.6f}, {fs:.6f}) {r.verdict}; equal densities {eq.verdict}"
        assert abs(f - math.pi) <= 1e-4 * math.pi and abs(fs - 2 * math.pi) <= 2e-4 * math.pi
        assert r.passed and eq.verdict == "fails"


def test_11_bakelman(criterion):
    with criterion(11, "lower-bound arithmetic") as c:
        a = bakelman_lower_bound(0, 1, 1, 1, 2, 1)
        b = bakelman_lower_bound(1, 0, 2, 1, 1, 2)
        d = bakelman_lower_bound(0.25, -1.0, 0.5, 3.0, 2.0, 0.0)
        c.detail = f"{a}, {b}, {d}"
        assert a == -4 and b == -3 and d == min(0.25, 2.0)


CONFIG = """
[problem]
A = conformal
B = 1/4 - r2^2/64
phi = z - 3/4
z_interval = 0, 0.25

[grid]
n_r = 16
n_theta = 32

[checks]
run = regularity, monotonicity, A_convexity, QS, oblique_concavity
"""


def test_12_determinism(criterion, tmp_path):
    with criterion(12, "byte-identical reports") as c:
        path = tmp_path / "run.ini"
        path.write_text(textwrap.dedent(CONFIG))
        blobs = {}
        for command in ("check", "solve"):
            for run, threads in enumerate(("1", "1", "4")):
                out = tmp_path / f"{command}{run}"
                env = dict(os.environ, MATE_THREADS=threads)
                proc = subprocess.run([sys.executable, "-m", "mate.cli", command, "--config", str(path),
                                       "--out", str(out)], env=env, capture_output=True, text=True)
                assert proc.returncode == 0, proc.stderr
                blobs.setdefault(command, []).append((out / "report.json").read_bytes())
        same = {k: len(set(v)) == 1 for k, v in blobs.items()}
        c.detail = ", ".join(f"{k}: {'identical' if v else 'DIFFER'} over 3 runs (threads 1, 1, 4)" for k, v in same.items())
        assert all(same.values())
