import math

import numpy as np
import pytest
from scipy import integrate

from skelsim import (
    Atoms,
    Autonomy,
    BranchingMechanism,
    MechanismError,
    Regime,
    StablePowerLaw,
    TwoTypeStructure,
    ZeroMeasure,
    autonomy_check,
    graft_kernel,
    graft_rate_reconciliation,
    joint_identity_residual,
    make_joint,
    offspring_distribution,
    psi_c,
    psi_d,
    psi_d_series,
)

FELLER_SUP = BranchingMechanism(1.0, 1.0, 0.0, ZeroMeasure())
QUADRATIC = BranchingMechanism(2.0, 0.0, 0.0, ZeroMeasure())
ATOM_HALF = BranchingMechanism(0.0, 0.0, 0.0, Atoms([0.5], [1.0]))
STABLE_32 = BranchingMechanism(0.0, 0.5, 0.0, StablePowerLaw(1.5, 0.5))


class TestMakeJoint:
    def test_regime_above_for_subcritical(self):
        j = make_joint(QUADRATIC, 1.0)
        assert j.regime is Regime.AT_OR_ABOVE and j.rho == 0.0

    def test_regime_below(self):
        j = make_joint(FELLER_SUP, 1.0)
        assert j.regime is Regime.BELOW
        assert j.psi_at_lam == pytest.approx(-0.5)

    def test_tie_goes_above(self):
        j = make_joint(FELLER_SUP, 2.0)
        assert j.regime is Regime.AT_OR_ABOVE
        assert j.psi_at_lam == pytest.approx(0.0, abs=1e-12)

    def test_lam_must_be_positive(self):
        with pytest.raises(MechanismError):
            make_joint(QUADRATIC, 0.0)


class TestPsiCD:
    def test_psi_c_above(self):
        j = make_joint(QUADRATIC, 1.0)
        assert psi_c(j, 1.0, 0.5) == pytest.approx(3.0, rel=1e-14)
        # r-independence at or above the root
        assert psi_c(j, 1.0, 0.1) == psi_c(j, 1.0, 0.9)

    def test_psi_c_below(self):
        j = make_joint(FELLER_SUP, 1.0)
        assert psi_c(j, 1.0, 0.5) == pytest.approx(0.25, rel=1e-14)

    def test_psi_d_above(self):
        j = make_joint(QUADRATIC, 1.0)
        assert psi_d(j, 1.0, 0.5) == pytest.approx(-0.75, rel=1e-14)

    def test_psi_d_below(self):
        j = make_joint(FELLER_SUP, 1.0)
        assert psi_d(j, 1.0, 0.5) == pytest.approx(-0.625, rel=1e-14)

    def test_psi_d_zero_q_limit(self):
        # at or above the root: Psi_d(0+, r) = (psi(lam(1-r)) + kappa)/lam
        j = make_joint(QUADRATIC, 1.5)
        r = 0.4
        want = QUADRATIC.psi(1.5 * (1 - r)) / 1.5
        assert psi_d(j, 1e-12, r, cross_check=False) == pytest.approx(want, rel=1e-9)

    def test_series_matches_closed_form_with_jumps(self):
        for m, lam in ((ATOM_HALF, 2.0), (STABLE_32, 2.0), (STABLE_32, 0.5)):
            j = make_joint(m, lam)
            for q, r in ((0.4, 0.2), (1.5, 0.7)):
                series, tail = psi_d_series(j, q, r)
                closed = float(j.psi_d_raw(q, r))
                assert abs(series - closed) <= 1e-9 * max(1.0, abs(closed)) + 2 * tail

    def test_cross_check_runs(self):
        j = make_joint(ATOM_HALF, 2.0)
        assert psi_d(j, 1.0, 0.5, cross_check=True) == pytest.approx(
            float(j.psi_d_raw(1.0, 0.5)), rel=1e-12
        )

    def test_regime_continuity_at_root(self):
        # at lam = rho both closed forms agree since psi(lam) = 0
        j = make_joint(FELLER_SUP, 2.0)
        lam, kappa = 2.0, 0.0
        for q, r in ((0.5, 0.3), (2.0, 0.8)):
            above = (FELLER_SUP.psi(q + lam * (1 - r)) - FELLER_SUP.psi(q + lam) + j.psi_at_lam + kappa) / lam
            below = (FELLER_SUP.psi(q + lam * (1 - r)) - FELLER_SUP.psi(q + lam) + r * j.psi_at_lam + kappa) / lam
            assert abs(above - below) <= 1e-10


class TestIdentity:
    def test_worked_values(self):
        j = make_joint(QUADRATIC, 1.0)
        assert joint_identity_residual(j, 1.0, 0.5) == pytest.approx(0.0, abs=1e-12)
        j2 = make_joint(FELLER_SUP, 1.0)
        assert joint_identity_residual(j2, 1.0, 0.5) == pytest.approx(0.0, abs=1e-12)

    def test_boundary_r_to_one(self):
        j = make_joint(FELLER_SUP, 1.0)
        assert abs(joint_identity_residual(j, 1.3, 1.0 - 1e-9)) < 1e-9

    def test_random_grid_all_families(self):
        rng = np.random.default_rng(17)
        mechs = [FELLER_SUP, QUADRATIC, ATOM_HALF, STABLE_32]
        for m in mechs:
            for _ in range(50):
                lam = float(rng.uniform(0.3, 3.0))
                j = make_joint(m, lam, validate=False)
                q = float(rng.uniform(0.05, 5.0))
                r = float(rng.uniform(0.05, 0.95))
                res = joint_identity_residual(j, q, r)
                assert abs(res) <= 1e-9 * (1.0 + abs(m.psi(q + lam * (1 - r))))


class TestGraftKernel:
    def test_atom_slice_mass(self):
        j = make_joint(ATOM_HALF, 2.0)
        s0 = graft_kernel(j, 0)
        assert s0.mass == pytest.approx(0.5 * math.exp(-1.0), rel=1e-12)

    def test_zero_levy_masses_vanish(self):
        j = make_joint(QUADRATIC, 1.0)
        for k in range(4):
            slc = graft_kernel(j, k)
            assert slc.mass == 0.0
        assert graft_kernel(j, 1).diffusion_atom == pytest.approx(0.5 * 2.0 * 1.0)

    def test_slice_sum_identity(self):
        # sum_k m_k = (1/lam) integral (1 - e^{-lam y}) nu(dy)
        j = make_joint(ATOM_HALF, 2.0)
        total = sum(graft_kernel(j, k).mass for k in range(40))
        want = (1.0 - math.exp(-1.0)) / 2.0
        assert total == pytest.approx(want, rel=1e-12)

    def test_rate_reconciliation(self):
        for m, lam in ((ATOM_HALF, 2.0), (STABLE_32, 1.7), (FELLER_SUP, 2.5)):
            lhs, rhs = graft_rate_reconciliation(make_joint(m, lam))
            assert lhs == pytest.approx(rhs, rel=1e-10)

    def test_infinite_mass_slice_zero(self):
        j = make_joint(STABLE_32, 2.0)
        assert graft_kernel(j, 0).mass == math.inf
        truncated = graft_kernel(j, 0, delta=1e-4)
        assert math.isfinite(truncated.mass) and truncated.mass > 0

    def test_slice_sampler_mean(self):
        j = make_joint(ATOM_HALF, 2.0)
        rng = np.random.default_rng(0)
        ys = graft_kernel(j, 1).sample(2000, rng)
        assert np.all(ys == 0.5)


class TestOffspring:
    def test_binary_law(self):
        j = make_joint(QUADRATIC, 1.7)
        law = offspring_distribution(j)
        assert law.p_minus1 == pytest.approx(0.5, rel=1e-14)
        assert law.p[0] == pytest.approx(0.5, rel=1e-14)
        assert law.cutoff == 1
        assert law.total_rate == pytest.approx(2 * 1.7, rel=1e-14)

    def test_atom_values(self):
        j = make_joint(ATOM_HALF, 2.0)
        law = offspring_distribution(j)
        assert law.p_minus1 == pytest.approx(1.0 / (math.e - 1.0), rel=1e-12)
        assert abs(law.p_minus1 - 0.58197) <= 1e-4
        for k in (1, 2, 3):
            assert law.p[k - 1] == pytest.approx(law.p_minus1 / math.factorial(k + 1), rel=1e-10)
        assert law.total_rate == pytest.approx(0.5 * (1 - math.exp(-1.0)), rel=1e-12)

    def test_normalization(self):
        for m, lam in ((QUADRATIC, 1.0), (ATOM_HALF, 2.0), (STABLE_32, 1.5)):
            law = offspring_distribution(make_joint(m, lam), tail_tol=1e-9)
            total = law.p_minus1 + float(law.p.sum()) + law.tail_mass
            assert total == pytest.approx(1.0, abs=1e-9)

    def test_no_death_at_the_root(self):
        j = make_joint(FELLER_SUP, 2.0)
        law = offspring_distribution(j)
        assert law.p_minus1 == pytest.approx(0.0, abs=1e-13)

    def test_generating_identity(self):
        for m, lam in ((QUADRATIC, 1.0), (ATOM_HALF, 2.0)):
            law = offspring_distribution(make_joint(m, lam))
            for r in np.linspace(0.1, 0.9, 9):
                want = (m.psi(lam * (1 - r)) + m.kappa) / lam
                assert law.generating_gap(float(r)) == pytest.approx(want, abs=1e-8)

    def test_mean_criticality_transfer(self):
        # sign of the skeleton mean matches -psi'(0+)
        law = offspring_distribution(make_joint(FELLER_SUP, 2.5))
        assert law.mean() > 0  # supercritical base
        law2 = offspring_distribution(make_joint(QUADRATIC, 1.0))
        assert abs(law2.mean()) < 1e-10  # critical base
        sub = BranchingMechanism(1.0, -0.5, 0.0, ZeroMeasure())
        law3 = offspring_distribution(make_joint(sub, 1.0))
        assert law3.mean() < 0

    def test_mean_relation_value(self):
        # sum k p_k - p_{-1} = -psi'(0+)/psi'(lam)
        lam = 2.0
        law = offspring_distribution(make_joint(ATOM_HALF, lam))
        want = -ATOM_HALF.psi_prime_at_zero() / ATOM_HALF.psi_prime(lam)
        assert law.mean() == pytest.approx(want, abs=1e-8)

    def test_below_regime_rejected(self):
        with pytest.raises(MechanismError):
            offspring_distribution(make_joint(FELLER_SUP, 1.0))

    def test_slow_tail_rejected_at_tight_tolerance(self):
        j = make_joint(STABLE_32, 2.0)
        with pytest.raises(MechanismError):
            offspring_distribution(j, tail_tol=1e-12)

    def test_csv_export(self, tmp_path):
        law = offspring_distribution(make_joint(QUADRATIC, 1.0))
        path = tmp_path / "offspring.csv"
        law.to_csv(path, provenance="prov")
        lines = path.read_text().strip().split("\n")
        assert lines[0] == "# prov"
        assert lines[1] == "k,p_k,cumulative"
        assert lines[2].startswith("-1,0.5,")


class TestAutonomy:
    def test_skeleton_autonomous_at_or_above(self):
        assert autonomy_check(make_joint(FELLER_SUP, 2.0)) is Autonomy.DISCRETE_AUTONOMOUS

    def test_coupled_below(self):
        assert autonomy_check(make_joint(FELLER_SUP, 1.0)) is Autonomy.COUPLED

    def test_degenerate_discrete_part(self):
        # Psi_d identically zero with an explosive continuous part
        s = TwoTypeStructure(
            mass_jumps_carry_no_births=True,
            skeleton_jumps_carry_no_mass=True,
            mass_drift_per_individual=0.0,
            continuous_nonexplosive=False,
            discrete_nonexplosive=True,
        )
        assert autonomy_check(s) is Autonomy.CONTINUOUS_AUTONOMOUS

    def test_killing_breaks_autonomy(self):
        m = BranchingMechanism(2.0, 0.0, 0.3, ZeroMeasure())
        assert autonomy_check(make_joint(m, 1.0)) is Autonomy.COUPLED
