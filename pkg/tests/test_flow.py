import math

import numpy as np
import pytest

from skelsim import (
    BranchingMechanism,
    StablePowerLaw,
    ZeroMeasure,
    feller_u_oracle,
    make_joint,
    solve_joint,
    solve_skeleton_f,
    solve_u,
    u_zero_plus,
)

FELLER_SUP = BranchingMechanism(1.0, 1.0, 0.0, ZeroMeasure())
QUADRATIC = BranchingMechanism(2.0, 0.0, 0.0, ZeroMeasure())


def brute_force_flow(sigma2, gamma, q, t, n=200_000):
    # fixed-step RK4 on u' = -(sigma2 u^2/2 - gamma u); the independent oracle
    h = t / n
    u = q

    def f(v):
        return -(0.5 * sigma2 * v * v - gamma * v)

    for _ in range(n):
        k1 = f(u)
        k2 = f(u + 0.5 * h * k1)
        k3 = f(u + 0.5 * h * k2)
        k4 = f(u + h * k3)
        u += h * (k1 + 2 * k2 + 2 * k3 + k4) / 6.0
    return u


class TestFellerOracle:
    def test_against_brute_force(self):
        for sigma2, gamma in ((2.0, 0.0), (1.0, 1.0), (0.5, -0.7)):
            for q in (0.4, 1.0, 2.5):
                want = brute_force_flow(sigma2, gamma, q, 1.3)
                assert feller_u_oracle(sigma2, gamma, q, 1.3) == pytest.approx(want, abs=1e-9)

    def test_examples(self):
        assert feller_u_oracle(2.0, 0.0, 1.0, 1.0) == pytest.approx(0.5, rel=1e-14)
        assert feller_u_oracle(1.5, 0.3, 0.7, 0.0) == pytest.approx(0.7, rel=1e-14)
        assert feller_u_oracle(1.0, 1.0, 0.5, 60.0) == pytest.approx(2.0, rel=1e-10)


class TestSolveU:
    def test_riccati_value(self):
        assert solve_u(QUADRATIC, 1.0, 1.0).u(1.0) == pytest.approx(0.5, abs=1e-9)

    def test_long_time_limit_is_largest_root(self):
        assert solve_u(FELLER_SUP, 0.5, 40.0).u(40.0) == pytest.approx(2.0, abs=1e-8)

    def test_fixed_point_at_root(self):
        fl = solve_u(FELLER_SUP, 2.0, 5.0)
        assert fl.u(5.0) == 2.0

    def test_oracle_agreement_grid(self):
        for sigma2, gamma in ((2.0, 0.0), (1.0, 1.0), (0.5, -0.7), (3.0, 2.0), (1.0, 0.5)):
            m = BranchingMechanism(sigma2, gamma, 0.0, ZeroMeasure())
            for q in (0.3, 1.0, 2.5, 4.0):
                fl = solve_u(m, q, 2.0)
                for t in np.linspace(0.1, 2.0, 5):
                    want = feller_u_oracle(sigma2, gamma, q, float(t))
                    assert abs(fl.u(float(t)) - want) < 1e-8

    def test_monotone_in_q(self):
        fl1 = solve_u(FELLER_SUP, 0.7, 1.0).u(1.0)
        fl2 = solve_u(FELLER_SUP, 1.4, 1.0).u(1.0)
        assert fl1 < fl2

    def test_escape_truncation_flag(self):
        # pure supercritical drift: u grows like e^t and leaves any finite range
        m = BranchingMechanism(0.0, 1.0, 0.0, ZeroMeasure())
        fl = solve_u(m, 1.0, 1000.0)
        assert fl.truncated and fl.boundary == "escaped_to_infinity"

    def test_dense_output_between_nodes(self):
        fl = solve_u(QUADRATIC, 1.0, 1.0)
        for t in np.linspace(0.01, 0.99, 17):
            assert fl.u(float(t)) == pytest.approx(1.0 / (1.0 + float(t)), abs=1e-9)

    def test_semiflow(self):
        rng = np.random.default_rng(5)
        for _ in range(10):
            q = float(rng.uniform(0.2, 3.0))
            s, t = rng.uniform(0.05, 1.0, size=2)
            u_direct = solve_u(FELLER_SUP, q, float(s + t)).u(float(s + t))
            mid = solve_u(FELLER_SUP, q, float(s)).u(float(s))
            u_chain = solve_u(FELLER_SUP, float(mid), float(t)).u(float(t))
            assert abs(u_direct - u_chain) < 1e-8


class TestUZeroPlus:
    def test_square_root_mechanism(self):
        m = BranchingMechanism(0.0, 0.0, 0.0, StablePowerLaw(0.5, 1.0))
        for t in (1.0, 2.0):
            assert u_zero_plus(m, t) == pytest.approx(t * t / 4.0, abs=2e-5)

    def test_nonexplosive_gives_zero(self):
        assert u_zero_plus(QUADRATIC, 1.0) < 1e-10


class TestSolveJoint:
    def test_initial_condition(self):
        j = make_joint(QUADRATIC, 1.0)
        fl = solve_joint(j, 0.8, 0.4, 1.0)
        u0, f0 = fl(0.0)
        assert u0 == pytest.approx(0.8, abs=1e-12)
        assert f0 == pytest.approx(0.4, abs=1e-12)

    def test_projection_identity_both_regimes(self):
        rng = np.random.default_rng(7)
        for m, lam in ((QUADRATIC, 1.0), (FELLER_SUP, 1.0), (FELLER_SUP, 2.0), (FELLER_SUP, 3.0)):
            j = make_joint(m, lam)
            for _ in range(5):
                q = float(rng.uniform(0.2, 2.5))
                r = float(rng.uniform(0.1, 0.9))
                t = float(rng.uniform(0.2, 1.5))
                fl = solve_joint(j, q, r, t)
                lhs = fl.u(t) + lam * (1.0 - fl.f(t))
                rhs = solve_u(m, q + lam * (1.0 - r), t).u(t)
                assert abs(lhs - rhs) < 1e-8

    def test_documented_projection_value(self):
        j = make_joint(QUADRATIC, 1.0)
        fl = solve_joint(j, 1.0, 0.5, 1.0)
        assert fl.u(1.0) + 1.0 * (1.0 - fl.f(1.0)) == pytest.approx(0.6, abs=1e-9)

    def test_skeleton_flow_closed_form(self):
        # psi = q^2, lam >= rho = 0: 1 - f_t = (1-r)/(1 + lam t (1-r)) at q -> 0+
        j = make_joint(QUADRATIC, 1.0)
        fl = solve_joint(j, 1e-12, 0.5, 1.0)
        assert fl.f(1.0) == pytest.approx(1.0 - 0.5 / 1.5, abs=1e-8)

    def test_box_guard(self):
        j = make_joint(FELLER_SUP, 1.0)
        fl = solve_joint(j, 2.0, 0.9, 3.0)
        assert np.all(fl.ys[:, 0] > 0)
        assert np.all((fl.ys[:, 1] > 0) & (fl.ys[:, 1] < 1))

    def test_two_dim_semiflow(self):
        j = make_joint(FELLER_SUP, 1.0)
        q, r, s, t = 1.2, 0.45, 0.4, 0.7
        fl = solve_joint(j, q, r, s + t)
        mid = solve_joint(j, q, r, s)
        chain = solve_joint(j, float(mid.u(s)), float(mid.f(s)), t)
        assert abs(fl.u(s + t) - chain.u(t)) < 1e-8
        assert abs(fl.f(s + t) - chain.f(t)) < 1e-8


class TestSkeletonFlow:
    def test_quadratic_closed_form(self):
        fl = solve_skeleton_f(QUADRATIC, 1.0, 0.5, 1.0)
        assert fl.u(1.0) == pytest.approx(1.0 - 0.5 / 1.5, abs=1e-9)

    def test_csv_dump(self, tmp_path):
        fl = solve_u(QUADRATIC, 1.0, 1.0)
        path = tmp_path / "flow.csv"
        fl.to_csv(path, grid=[0.0, 0.5, 1.0], provenance="check")
        lines = path.read_text().strip().split("\n")
        assert lines[0] == "# check"
        assert lines[1] == "t,u"
        assert len(lines) == 5
