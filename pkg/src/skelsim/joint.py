"""Joint two-type branching mechanisms built from a base mechanism and a level lam.

For lam > 0 the pair (Psi_c, Psi_d) is determined by the position of lam
relative to the largest root rho of psi:

  at or above rho:  Psi_c(q,r) = psi_lam(q) - kappa
                    Psi_d(q,r) = [psi(q + lam(1-r)) - psi(q + lam) + psi(lam) + kappa]/lam
  below rho:        Psi_c(q,r) = psi_lam(q) - kappa - psi(lam)(r-1)
                    Psi_d(q,r) = [psi(q + lam(1-r)) - psi(q + lam) + r psi(lam) + kappa]/lam

and the two always tie back to the base mechanism through

  psi(q + lam(1-r)) = Psi_c(q,r) + lam * Psi_d(q,r).

Psi_d also has a series form over the discrete-jump measure built from the
graft slices s(dy,{k}) = y e^{-lam y} (lam y)^k/(k+1)! nu(dy) plus the
sigma^2 lam/2 binary atom; the two evaluations are cross-checked against
each other. The same slices give the skeleton offspring distribution
(death probability psi(lam)/(lam psi'(lam)), branch rate psi'(lam)) in the
at-or-above regime.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np

from .errors import MechanismError
from .mechanism import BranchingMechanism, largest_root

SERIES_TAIL_TOL = 1e-12
SERIES_KMAX = 1_000_000


class Regime(Enum):
    AT_OR_ABOVE = "at_or_above"  # lam >= rho (ties included; both forms agree there)
    BELOW = "below"


@dataclass(frozen=True)
class JointMechanism:
    base: BranchingMechanism
    lam: float
    rho: float
    regime: Regime
    esscher_mech: BranchingMechanism
    psi_at_lam: float
    psi_prime_at_lam: float

    # -- closed-form evaluators (used by the ODE right-hand sides) --------
    def psi_c_raw(self, q, r):
        val = self.base.psi(self.lam + np.asarray(q, dtype=float)) - self.psi_at_lam - self.base.kappa
        if self.regime is Regime.BELOW:
            val = val - self.psi_at_lam * (np.asarray(r, dtype=float) - 1.0)
        return val

    def psi_d_raw(self, q, r):
        q = np.asarray(q, dtype=float)
        r = np.asarray(r, dtype=float)
        shifted = self.base.psi(q + self.lam * (1.0 - r))
        tie = self.psi_at_lam if self.regime is Regime.AT_OR_ABOVE else r * self.psi_at_lam
        return (shifted - self.base.psi(q + self.lam) + tie + self.base.kappa) / self.lam


def make_joint(m: BranchingMechanism, lam: float, validate: bool = True) -> JointMechanism:
    """Build the joint mechanism at level lam, caching rho, psi(lam), psi'(lam)."""
    if lam <= 0:
        raise MechanismError("make_joint needs lam > 0")
    rho = largest_root(m)
    regime = Regime.AT_OR_ABOVE if lam >= rho else Regime.BELOW
    j = JointMechanism(
        base=m,
        lam=float(lam),
        rho=float(rho),
        regime=regime,
        esscher_mech=m.esscher(lam),
        psi_at_lam=float(m.psi(lam)),
        psi_prime_at_lam=float(m.psi_prime(lam)),
    )
    tol = 1e-9
    if regime is Regime.AT_OR_ABOVE and j.psi_at_lam < -tol * max(1.0, abs(j.psi_prime_at_lam)):
        raise MechanismError(f"regime inconsistency: lam >= rho but psi(lam) = {j.psi_at_lam}")
    if regime is Regime.BELOW and j.psi_at_lam > tol * max(1.0, abs(j.psi_prime_at_lam)):
        raise MechanismError(f"regime inconsistency: lam < rho but psi(lam) = {j.psi_at_lam}")
    if validate:
        _validate_dual_forms(j)
    return j


def psi_c(j: JointMechanism, q, r):
    """Continuous component of the joint mechanism; r enters only below rho."""
    q_arr = np.asarray(q, dtype=float)
    r_arr = np.asarray(r, dtype=float)
    if np.any(q_arr <= 0) or np.any(r_arr <= 0) or np.any(r_arr >= 1):
        raise MechanismError("psi_c needs q > 0 and r in (0,1)")
    out = j.psi_c_raw(q_arr, r_arr)
    return float(out) if np.ndim(q) == 0 and np.ndim(r) == 0 else out


def psi_d(j: JointMechanism, q, r, cross_check: bool = True, tol: float = 1e-9):
    """Discrete component of the joint mechanism.

    With cross_check the closed form is compared against the truncated series
    over the graft-slice measure; disagreement beyond the tolerance (inflated
    by the realized truncation tail) raises, localizing quadrature or
    truncation bugs.
    """
    q_arr = np.asarray(q, dtype=float)
    r_arr = np.asarray(r, dtype=float)
    if np.any(q_arr <= 0) or np.any(r_arr <= 0) or np.any(r_arr >= 1):
        raise MechanismError("psi_d needs q > 0 and r in (0,1)")
    closed = j.psi_d_raw(q_arr, r_arr)
    if cross_check:
        for qi, ri, ci in np.broadcast(q_arr, r_arr, closed):
            series, tail = psi_d_series(j, float(qi), float(ri))
            budget = tol * max(1.0, abs(ci)) + 2.0 * tail
            if abs(series - ci) > budget:
                raise MechanismError(
                    f"psi_d closed/series mismatch at (q={qi}, r={ri}): "
                    f"{ci} vs {series} (tail bound {tail:.2e})"
                )
    return float(closed) if np.ndim(q) == 0 and np.ndim(r) == 0 else closed


def psi_d_series(j: JointMechanism, q: float, r: float, tail_tol: float = SERIES_TAIL_TOL):
    """Series evaluation of Psi_d over the slice measure; returns (value, tail bound).

    Terms pair e^{-qy} r^{k+1} with -r inside each k-slice so that the k = 0
    term stays finite even when the slice itself has infinite mass. The
    truncation tail is the exact remainder of the slice totals, scaled by r.
    """
    lam, mech = j.lam, j.base
    levy = mech.levy
    # k = 0 pairing: r * integral (e^{-qy} - 1) y e^{-lam y} nu(dy)
    total = r * levy.slice0_paired(lam, q)
    # skeleton death coefficient: (psi(lam) + kappa)/lam at or above the root,
    # kappa/lam below (this is what makes the closed forms with their kappa
    # terms and the jump-measure series agree at nonzero killing)
    death = ((j.psi_at_lam if j.regime is Regime.AT_OR_ABOVE else 0.0) + mech.kappa) / lam
    total += death * (1.0 - r)
    tail = 0.0
    block, k0 = 64, 1
    while k0 <= SERIES_KMAX:
        ks = np.arange(k0, min(k0 + block, SERIES_KMAX + 1))
        masses = levy.slice_masses(lam, ks)
        exps = levy.slice_exp(lam, q, ks)
        terms = r ** (ks + 1.0) * exps - r * masses
        total += float(terms.sum())
        tail = r * levy.slice_total(lam, int(ks[-1]) + 1)
        if tail < tail_tol or float(np.abs(terms[-8:]).sum()) < 1e-18:
            break
        k0 = int(ks[-1]) + 1
        block = min(block * 2, 65536)
    # binary diffusion atom and the mass-drift coupling
    total += 0.5 * mech.sigma2 * lam * (r * r - r) - mech.sigma2 * q * r
    if j.regime is Regime.AT_OR_ABOVE:
        total += (j.psi_at_lam / lam) * (1.0 - r)
    return total, tail


def joint_identity_residual(j: JointMechanism, q, r):
    """psi(q + lam(1-r)) - Psi_c(q,r) - lam Psi_d(q,r); zero up to roundoff."""
    q_arr = np.asarray(q, dtype=float)
    r_arr = np.asarray(r, dtype=float)
    lhs = j.base.psi(q_arr + j.lam * (1.0 - r_arr))
    out = lhs - j.psi_c_raw(q_arr, r_arr) - j.lam * j.psi_d_raw(q_arr, r_arr)
    return float(out) if np.ndim(q) == 0 and np.ndim(r) == 0 else out


def _validate_dual_forms(j: JointMechanism, tol: float = 1e-9):
    # construction-time probe of the closed form against the series form
    for q, r in ((0.37, 0.21), (1.3, 0.55), (3.1, 0.9)):
        closed = float(j.psi_d_raw(q, r))
        series, tail = psi_d_series(j, q, r)
        if abs(series - closed) > tol * max(1.0, abs(closed)) + 2.0 * tail:
            raise MechanismError(
                f"joint mechanism dual forms disagree at (q={q}, r={r}): "
                f"closed {closed} vs series {series} (tail {tail:.2e})"
            )


# ---------------------------------------------------------------------------
# Graft kernel
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GraftSlice:
    """One k-slice of the grafting measure, with its total mass and sampler."""

    lam: float
    k: int
    mass: float  # may be inf for k = 0 with infinite-variation jumps
    diffusion_atom: float  # sigma^2 lam / 2 at y = 0, reported for k = 1 only
    _levy: object
    _delta: float = 0.0

    def sample(self, n: int, rng) -> np.ndarray:
        if self.mass == 0.0:
            return np.zeros(n)
        return self._levy.slice_sample(self.lam, self.k, n, rng, delta=self._delta)


def graft_kernel(j: JointMechanism, k: int, delta: float = 0.0) -> GraftSlice:
    """The k-slice s(dy,{k}) = y e^{-lam y} (lam y)^k / (k+1)! nu(dy).

    For k = 0 an optional cutoff delta restricts to [delta, inf); the slice
    can have infinite total mass (finite mean) otherwise. The k = 1 slice
    additionally reports the diffusion atom sigma^2 lam/2 sitting at y = 0.
    """
    if k < 0:
        raise MechanismError("graft slices are indexed by k >= 0")
    levy = j.base.levy
    if k == 0 and delta > 0.0:
        mass = levy.slice0_tail_mass(j.lam, delta)
    else:
        mass = float(levy.slice_masses(j.lam, np.array([k]))[0])
    atom = 0.5 * j.base.sigma2 * j.lam if k == 1 else 0.0
    return GraftSlice(j.lam, k, mass, atom, levy, delta if k == 0 else 0.0)


def graft_rate_reconciliation(j: JointMechanism) -> tuple:
    """Both sides of psi'(lam) = sigma^2 lam/2 + sum_{k>=1} m_k + psi(lam)/lam."""
    rhs = 0.5 * j.base.sigma2 * j.lam + j.base.levy.slice_total(j.lam, 1) + j.psi_at_lam / j.lam
    return j.psi_prime_at_lam, rhs


# ---------------------------------------------------------------------------
# Offspring distribution of the autonomous skeleton (lam >= rho)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class OffspringDistribution:
    """Skeleton reproduction law: k = -1 (death) and k >= 1, with p_0 = 0."""

    p_minus1: float
    p: np.ndarray  # p[k-1] = p_k for k = 1..cutoff
    cutoff: int
    tail_mass: float
    total_rate: float  # psi'(lam), events per individual per unit time

    def probabilities(self) -> dict:
        out = {-1: self.p_minus1}
        out.update({k + 1: float(v) for k, v in enumerate(self.p)})
        return out

    def mean(self) -> float:
        return float(np.arange(1, self.cutoff + 1) @ self.p - self.p_minus1)

    def generating_gap(self, r: float) -> float:
        """phi_lam(r) reconstructed from the law: rate * sum (r^{k+1} - r) p_k."""
        ks = np.arange(1, self.cutoff + 1)
        s = (1.0 - r) * self.p_minus1 + float(((r ** (ks + 1.0)) - r) @ self.p)
        return self.total_rate * s

    def sampler(self):
        """Cumulative table; draw k values with `ks[searchsorted(cdf, uniforms)]`."""
        ks = np.concatenate([[-1], np.arange(1, self.cutoff + 1)])
        probs = np.concatenate([[self.p_minus1], self.p])
        cdf = np.cumsum(probs)
        cdf[-1] = max(cdf[-1], 1.0)
        return ks, cdf

    def to_csv(self, path, provenance: Optional[str] = None):
        with open(path, "w") as fh:
            if provenance:
                fh.write(f"# {provenance}\n")
            fh.write("k,p_k,cumulative\n")
            cum = 0.0
            for k, pk in [(-1, self.p_minus1)] + [(i + 1, float(v)) for i, v in enumerate(self.p)]:
                cum += pk
                fh.write(f"{k},{pk!r},{cum!r}\n")


def offspring_distribution(j: JointMechanism, tail_tol: float = 1e-12) -> OffspringDistribution:
    """Reproduction law p_{-1}, p_1, p_2, ... with total branch rate psi'(lam)."""
    if j.regime is not Regime.AT_OR_ABOVE:
        raise MechanismError("the offspring law exists only for lam >= rho")
    rate = j.psi_prime_at_lam
    if rate <= 0:
        raise MechanismError("psi'(lam) must be positive (non-constant mechanism at lam >= rho)")
    lam, levy = j.lam, j.base.levy
    p_minus1 = j.psi_at_lam / (lam * rate)
    atom1 = 0.5 * j.base.sigma2 * lam / rate

    chunks = []
    kmax, tail = 0, math.inf
    block, k0 = 256, 1
    while k0 <= SERIES_KMAX:
        ks = np.arange(k0, min(k0 + block, SERIES_KMAX + 1))
        chunks.append(levy.slice_masses(lam, ks) / rate)
        kmax = int(ks[-1])
        tail = levy.slice_total(lam, kmax + 1) / rate
        if tail < tail_tol:
            break
        k0 = kmax + 1
        block = min(block * 2, 65536)
    if tail >= tail_tol:
        raise MechanismError(
            f"offspring tail not converging within K={SERIES_KMAX} (tail {tail:.2e} > {tail_tol})"
        )
    p = np.concatenate(chunks) if chunks else np.zeros(0)
    if len(p) >= 1:
        p[0] += atom1
    else:
        p = np.array([atom1])
        kmax = 1
    # trim trailing zeros beyond the last relevant k
    nz = np.nonzero(p > 0)[0]
    cutoff = int(nz[-1]) + 1 if nz.size else 1
    p = p[:cutoff]
    return OffspringDistribution(
        p_minus1=float(p_minus1),
        p=p,
        cutoff=cutoff,
        tail_mass=float(tail),
        total_rate=float(rate),
    )


# ---------------------------------------------------------------------------
# Autonomy of the coordinates
# ---------------------------------------------------------------------------


class Autonomy(Enum):
    DISCRETE_AUTONOMOUS = "discrete_autonomous"
    CONTINUOUS_AUTONOMOUS = "continuous_autonomous"
    COUPLED = "coupled"


@dataclass(frozen=True)
class TwoTypeStructure:
    """The generic two-type description, as far as the autonomy test needs it."""

    mass_jumps_carry_no_births: bool  # pi concentrated on k = 0
    skeleton_jumps_carry_no_mass: bool  # rho-measure concentrated on y = 0
    mass_drift_per_individual: float  # b
    continuous_nonexplosive: Optional[bool]  # integral_0 dq/|Psi_c(q,1)| divergent
    discrete_nonexplosive: Optional[bool]  # integral^1 dr/|Psi_d(0,r)| divergent


def autonomy_structure(j: JointMechanism) -> TwoTypeStructure:
    from .mechanism import is_nonexplosive  # local import to avoid a cycle

    continuous = BranchingMechanism(
        sigma2=j.esscher_mech.sigma2,
        gamma=j.esscher_mech.gamma,
        kappa=j.base.kappa,
        levy=j.esscher_mech.levy,
        compensation=j.esscher_mech.compensation,
    )
    # the skeleton generating flow inherits the small-q behaviour of psi itself
    discrete_ok: Optional[bool]
    try:
        discrete_ok = is_nonexplosive(j.base)
    except Exception:
        discrete_ok = None
    try:
        continuous_ok: Optional[bool] = is_nonexplosive(continuous)
    except Exception:
        continuous_ok = None
    return TwoTypeStructure(
        mass_jumps_carry_no_births=(j.regime is Regime.AT_OR_ABOVE),
        skeleton_jumps_carry_no_mass=j.base.levy.is_zero(),
        mass_drift_per_individual=j.base.sigma2,
        continuous_nonexplosive=continuous_ok,
        discrete_nonexplosive=discrete_ok,
    )


def autonomy_check(target) -> Autonomy:
    """Decide which coordinate, if any, evolves autonomously."""
    s = target if isinstance(target, TwoTypeStructure) else autonomy_structure(target)
    if s.mass_jumps_carry_no_births:
        if s.continuous_nonexplosive is None:
            raise MechanismError("continuous divergence probe inconclusive")
        if s.continuous_nonexplosive:
            return Autonomy.DISCRETE_AUTONOMOUS
    if s.skeleton_jumps_carry_no_mass and s.mass_drift_per_individual == 0.0:
        if s.discrete_nonexplosive is None:
            raise MechanismError("discrete divergence probe inconclusive")
        if s.discrete_nonexplosive:
            return Autonomy.CONTINUOUS_AUTONOMOUS
    return Autonomy.COUPLED
