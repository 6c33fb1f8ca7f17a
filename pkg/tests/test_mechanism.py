import math

import numpy as np
import pytest
from scipy import integrate

from skelsim import (
    Atoms,
    BranchingMechanism,
    Compensation,
    GenericDensity,
    InconclusiveAnalysis,
    MechanismError,
    SchemaError,
    StablePowerLaw,
    TailHint,
    TemperedPowerLaw,
    ZeroMeasure,
    argmin_location,
    classify,
    esscher,
    eval_psi,
    eval_psi_prime,
    largest_root,
    mechanism_from_json,
)

FELLER_SUP = BranchingMechanism(1.0, 1.0, 0.0, ZeroMeasure())  # psi = q^2/2 - q
QUADRATIC = BranchingMechanism(2.0, 0.0, 0.0, ZeroMeasure())  # psi = q^2
STABLE_HALF = BranchingMechanism(0.0, 0.0, 0.0, StablePowerLaw(0.5, 1.0))  # psi = -sqrt(q)
STABLE_32 = BranchingMechanism(0.0, 0.0, 0.0, StablePowerLaw(1.5, 1.0))  # psi = q^1.5
ATOM_HALF = BranchingMechanism(0.0, 0.0, 0.0, Atoms([0.5], [1.0]))  # psi = e^{-q/2}-1+q/2


def random_mechanisms():
    return [
        FELLER_SUP,
        QUADRATIC,
        ATOM_HALF,
        BranchingMechanism(0.0, 0.5, 0.0, StablePowerLaw(1.5, 0.5)),
        BranchingMechanism(0.3, -0.1, 0.2, Atoms([0.25, 1.5], [0.8, 0.4])),
    ]


class TestEvalPsi:
    def test_feller_value(self):
        assert eval_psi(FELLER_SUP, 2.0) == pytest.approx(0.0, abs=1e-15)

    def test_stable_value(self):
        assert eval_psi(STABLE_HALF, 4.0) == pytest.approx(-2.0, rel=1e-14)

    def test_zero_limit_without_killing(self):
        for m in (FELLER_SUP, ATOM_HALF, STABLE_HALF, STABLE_32):
            assert abs(eval_psi(m, 1e-14)) < 1e-6
            assert abs(eval_psi(m, 1e-14)) < abs(eval_psi(m, 1e-6)) + 1e-15

    def test_rejects_nonpositive_q(self):
        with pytest.raises(MechanismError):
            eval_psi(FELLER_SUP, 0.0)

    def test_atom_value(self):
        q = 2.0
        assert eval_psi(ATOM_HALF, q) == pytest.approx(math.exp(-1.0), rel=1e-14)

    def test_tempered_quadrature_matches_stable_closed_form(self):
        # theta = 0 tempered power law shares the density of the stable family
        sl = StablePowerLaw(0.5, 1.0)
        tp = BranchingMechanism(0.0, 0.0, 0.0, TemperedPowerLaw(0.5, 0.0, sl.C))
        m1 = tp.levy.moment1(0.0, 1.0)  # unit truncation shifts by the small-jump mean
        for q in (0.3, 1.0, 4.0):
            assert tp.psi(q) == pytest.approx(-math.sqrt(q) + q * m1, abs=1e-11)

    def test_generic_density_quadrature(self):
        dens = GenericDensity(lambda y: math.exp(-2.0 * y), TailHint("exponential", rate=2.0))
        m = BranchingMechanism(0.0, 0.0, 0.0, dens)
        for q in (0.5, 2.0):
            ref, _ = integrate.quad(
                lambda y: (math.exp(-q * y) - 1 + q * y * (y < 1)) * math.exp(-2 * y), 0, np.inf
            )
            assert m.psi(q) == pytest.approx(ref, abs=1e-9)


class TestEvalPsiPrime:
    def test_feller(self):
        assert eval_psi_prime(FELLER_SUP, 3.0) == pytest.approx(2.0, rel=1e-14)

    def test_stable(self):
        assert eval_psi_prime(STABLE_32, 4.0) == pytest.approx(3.0, rel=1e-14)

    def test_constant_mechanism(self):
        m = BranchingMechanism(0.0, 0.0, 0.7, ZeroMeasure())
        assert eval_psi_prime(m, 1.3) == 0.0

    def test_finite_difference_agreement(self):
        for m in random_mechanisms():
            for q in (0.2, 1.0, 3.7):
                step = 1e-5 * max(1.0, q)
                fd = (m.psi(q + step) - m.psi(q - step)) / (2 * step)
                assert m.psi_prime(q) == pytest.approx(fd, rel=1e-6)

    def test_convexity(self):
        rng = np.random.default_rng(3)
        for m in random_mechanisms():
            qs = np.sort(rng.uniform(0.05, 6.0, size=12))
            d = m.psi_prime(qs)
            assert np.all(np.diff(d) >= -1e-10)


class TestEsscher:
    def test_lam_zero_strips_killing(self):
        m = BranchingMechanism(0.3, -0.1, 0.2, Atoms([0.25], [0.8]))
        e = esscher(m, 0.0)
        assert e.kappa == 0.0
        for q in (0.5, 2.0):
            assert e.psi(q) == pytest.approx(m.psi(q) + m.kappa, rel=1e-14)

    def test_feller_shift(self):
        e = esscher(FELLER_SUP, 2.0)
        for q in (0.5, 1.0, 3.0):
            assert e.psi(q) == pytest.approx(q * q / 2 + q, rel=1e-12)

    def test_quadratic_shift(self):
        e = esscher(QUADRATIC, 1.0)
        for q in (0.5, 1.0, 3.0):
            assert e.psi(q) == pytest.approx(q * q + 2 * q, rel=1e-12)

    def test_pointwise_identity(self):
        for m in random_mechanisms():
            lam = 1.3
            e = m.esscher(lam)
            for q in (0.3, 1.1, 4.0):
                want = m.psi(lam + q) - m.psi(lam)
                assert e.psi(q) == pytest.approx(want, rel=1e-10, abs=1e-12)

    def test_composition(self):
        rng = np.random.default_rng(11)
        m = ATOM_HALF
        for _ in range(100):
            a, b, q = rng.uniform(0.1, 2.0, size=3)
            two_step = m.esscher(a).esscher(b).psi(q)
            one_step = m.esscher(a + b).psi(q)
            assert two_step == pytest.approx(one_step, rel=1e-10, abs=1e-12)


class TestRoots:
    def test_largest_root_feller(self):
        assert largest_root(FELLER_SUP) == pytest.approx(2.0, abs=1e-11)

    def test_largest_root_immortal(self):
        assert largest_root(STABLE_HALF) == math.inf

    def test_largest_root_positive_mechanism(self):
        up = BranchingMechanism(2.0, -1.0, 0.0, ZeroMeasure())  # psi = q^2 + q
        assert largest_root(up) == 0.0

    def test_root_residual_small(self):
        for m in (FELLER_SUP, BranchingMechanism(0.0, 0.3, 0.0, Atoms([0.5], [1.0]))):
            rho = largest_root(m)
            if 0 < rho < math.inf:
                assert abs(m.psi(rho)) <= 1e-12 * max(1.0, abs(m.psi_prime(rho)))

    def test_argmin_examples(self):
        assert argmin_location(FELLER_SUP) == pytest.approx(1.0, abs=1e-10)
        assert argmin_location(STABLE_HALF) == math.inf
        assert argmin_location(QUADRATIC) == 0.0


class TestClassify:
    def test_quadratic(self):
        c = classify(QUADRATIC)
        assert c.criticality == "critical" and not c.immortal and c.nonexplosive

    def test_stable_half(self):
        c = classify(STABLE_HALF)
        assert c.criticality == "supercritical" and c.immortal and not c.nonexplosive

    def test_feller_supercritical(self):
        c = classify(FELLER_SUP)
        assert c.criticality == "supercritical" and not c.immortal and c.nonexplosive

    def test_killing_rejected(self):
        with pytest.raises(MechanismError):
            classify(BranchingMechanism(1.0, 0.0, 0.5, ZeroMeasure()))

    def test_tempering_restores_nonexplosive(self):
        m = BranchingMechanism(0.0, 0.0, 0.0, TemperedPowerLaw(0.5, 1.0, 1.0))
        assert classify(m).nonexplosive


class TestConventions:
    def test_conversion_preserves_psi(self):
        for m in (ATOM_HALF, BranchingMechanism(0.2, 0.4, 0.1, TemperedPowerLaw(0.5, 2.0, 0.7))):
            conv = m.convert_compensation(Compensation.FULL)
            back = conv.convert_compensation(Compensation.UNIT_TRUNCATION)
            for q in (0.2, 1.0, 5.0):
                assert conv.psi(q) == pytest.approx(m.psi(q), rel=1e-12, abs=1e-12)
                assert back.psi(q) == pytest.approx(m.psi(q), rel=1e-12, abs=1e-12)

    def test_conversion_requires_finite_tail_moment(self):
        m = BranchingMechanism(0.0, 0.0, 0.0, TemperedPowerLaw(0.5, 0.0, 1.0))
        with pytest.raises(MechanismError):
            m.convert_compensation(Compensation.FULL)


class TestValidation:
    def test_negative_diffusion_rejected(self):
        with pytest.raises(MechanismError):
            BranchingMechanism(-1.0, 0.0, 0.0, ZeroMeasure())

    def test_bad_atoms(self):
        with pytest.raises(MechanismError):
            Atoms([0.5, -1.0], [1.0, 1.0])
        with pytest.raises(MechanismError):
            Atoms([0.5], [0.0])

    def test_bad_stable_index(self):
        with pytest.raises(MechanismError):
            StablePowerLaw(1.0, 1.0)
        with pytest.raises(MechanismError):
            StablePowerLaw(2.5, 1.0)


class TestJsonSchema:
    GOOD = {"sigma2": 1.0, "gamma": 1.0, "kappa": 0.0, "levy": {"kind": "zero"}}

    def test_round_trip(self):
        m = mechanism_from_json(dict(self.GOOD))
        assert m.to_json() == self.GOOD

    def test_unknown_field_rejected(self):
        bad = dict(self.GOOD)
        bad["unexpected"] = 1
        with pytest.raises(SchemaError):
            mechanism_from_json(bad)

    def test_missing_field_rejected(self):
        bad = {k: v for k, v in self.GOOD.items() if k != "kappa"}
        with pytest.raises(SchemaError):
            mechanism_from_json(bad)

    def test_unknown_levy_field_rejected(self):
        bad = dict(self.GOOD)
        bad["levy"] = {"kind": "stable", "alpha": 0.5, "scale": 1.0, "shift": 2.0}
        with pytest.raises(SchemaError):
            mechanism_from_json(bad)

    def test_malformed_json_rejected(self):
        with pytest.raises(SchemaError):
            mechanism_from_json("{nope")

    def test_density_expression(self):
        spec = {
            "sigma2": 0.0,
            "gamma": 0.0,
            "kappa": 0.0,
            "levy": {"kind": "density", "expr": "exp(-2*y)", "tail": {"decay": "exponential", "rate": 2.0}},
        }
        m = mechanism_from_json(spec)
        ref, _ = integrate.quad(
            lambda y: (math.exp(-y) - 1 + y * (y < 1)) * math.exp(-2 * y), 0, np.inf
        )
        assert m.psi(1.0) == pytest.approx(ref, abs=1e-9)
        assert m.to_json()["levy"]["expr"] == "exp(-2*y)"

    def test_density_expression_names_restricted(self):
        spec = {
            "sigma2": 0.0,
            "gamma": 0.0,
            "kappa": 0.0,
            "levy": {"kind": "density", "expr": "__import__('os')", "tail": {"decay": "exponential", "rate": 1.0}},
        }
        with pytest.raises(SchemaError):
            mechanism_from_json(spec)
