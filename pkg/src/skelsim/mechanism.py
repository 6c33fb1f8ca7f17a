"""Branching mechanisms of continuous-state branching processes.

A mechanism is the convex function

    psi(q) = sigma2/2 * q^2 - gamma * q + integral(e^{-qy} - 1 + q*y*chi(y)) nu(dy) - kappa

over q > 0, parameterized by a diffusion coefficient, a drift, a killing
rate and a Lévy measure nu on (0, infinity) with integral(1 ^ y^2) nu(dy)
finite. The compensator chi is either 1_{(0,1)} (unit truncation) or 1
(full compensation, valid when the tail has a first moment). Closed forms
are used for the zero/atomic/stable families; tempered power laws and
user-supplied densities go through adaptive quadrature with absolute
tolerance 1e-12.

The module also provides first and second derivatives, Esscher transforms
psi_lambda = psi(lambda + .) - psi(lambda), the largest root rho, the
argmin location mu, criticality/immortality classification and the
non-explosion integral criterion.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from enum import Enum
from typing import Callable, Optional

import numpy as np
from scipy import integrate, special

from .errors import InconclusiveAnalysis, MechanismError, QuadratureError, SchemaError

QUAD_ABS_TOL = 1e-12
ROOT_PROBE_CAP = 1e12
CRITICAL_SLOPE_TOL = 1e-12

_POS, _NEG, _ZERO = 1, -1, 0


class Compensation(Enum):
    """Which jumps are compensated in the Lévy integral."""

    UNIT_TRUNCATION = "unit_truncation"
    FULL = "full_compensation"


def _upper_gamma(a: float, x):
    """Incomplete Gamma(a, x) for any a > -2, via downward recurrence."""
    x = np.asarray(x, dtype=float)
    if a > 0:
        return special.gammaincc(a, x) * special.gamma(a)
    if a == 0.0:
        return special.exp1(x)
    return (_upper_gamma(a + 1.0, x) - x**a * np.exp(-x)) / a


def _power_exp_moment(p: float, theta: float, a: float, b: float) -> float:
    """integral_a^b y^(p-1) e^(-theta*y) dy with b possibly infinite."""
    if a < 0 or b < a:
        raise ValueError("bad integration range")
    if theta == 0.0:
        if math.isinf(b):
            if p >= 0:
                return math.inf
            return -(a**p) / p
        if p == 0:
            return math.log(b / a)
        return (b**p - a**p) / p
    upper = 0.0 if math.isinf(b) else float(_upper_gamma(p, theta * b))
    lower = special.gamma(p) if a == 0.0 else float(_upper_gamma(p, theta * a))
    if a == 0.0 and p <= 0:
        return math.inf
    return theta ** (-p) * (lower - upper)


def _quad(f, a, b, points=None) -> float:
    val, err = integrate.quad(f, a, b, points=points, epsabs=QUAD_ABS_TOL, epsrel=1e-13, limit=400)
    if not np.isfinite(val) or err > max(1e-11, 1e-9 * abs(val)):
        raise QuadratureError(f"quadrature did not converge on ({a}, {b}): value={val}, err={err}")
    return val


@dataclass(frozen=True)
class TailHint:
    """Declared tail decay of a user-supplied Lévy density."""

    decay: str  # "exponential" or "power"
    rate: float = 0.0  # exponential rate
    alpha: float = 0.0  # power tail index: nu(dy) ~ y^(-1-alpha)

    def __post_init__(self):
        if self.decay not in ("exponential", "power"):
            raise MechanismError("tail hint decay must be 'exponential' or 'power'")
        if self.decay == "exponential" and self.rate <= 0:
            raise MechanismError("exponential tail hint needs rate > 0")
        if self.decay == "power" and self.alpha <= 0:
            raise MechanismError("power tail hint needs alpha > 0")


@dataclass(frozen=True)
class _Asymptote:
    """Behaviour of the jump integral as q -> infinity (mechanism-convention aware)."""

    superlinear: bool  # grows faster than any linear function
    slope: float  # linear coefficient at infinity
    negative_remainder: bool  # a nonzero remainder pulling down (nu != 0)


class LevyMeasure:
    """Base interface over the Lévy-measure families."""

    kind = "abstract"

    # --- psi machinery -------------------------------------------------
    def psi_integral(self, q, comp: Compensation):
        raise NotImplementedError

    def psi_prime_integral(self, q, comp: Compensation):
        raise NotImplementedError

    def psi_second_integral(self, q):
        raise NotImplementedError

    def prime_at_zero(self, comp: Compensation) -> float:
        """Limit of psi_prime_integral as q -> 0+ (may be -inf)."""
        raise NotImplementedError

    def asymptote(self, comp: Compensation) -> _Asymptote:
        raise NotImplementedError

    def heavy_tail_exponent(self) -> Optional[float]:
        """Power index alpha with nu(dy) ~ y^(-1-alpha) at infinity, if heavy."""
        return None

    # --- structure ------------------------------------------------------
    def is_zero(self) -> bool:
        return False

    def tempered(self, lam: float) -> "LevyMeasure":
        raise NotImplementedError

    def total_mass(self) -> float:
        raise NotImplementedError

    # --- partial moments (simulation folding) ----------------------------
    def tail_mass(self, delta: float) -> float:
        """nu([delta, inf))."""
        raise NotImplementedError

    def moment1(self, a: float, b: float) -> float:
        """integral_[a,b) y nu(dy)."""
        raise NotImplementedError

    def moment2_below(self, delta: float) -> float:
        """integral_(0,delta) y^2 nu(dy)."""
        raise NotImplementedError

    def sample_tail(self, delta: float, n: int, rng) -> np.ndarray:
        """n draws from nu restricted to [delta, inf), normalized."""
        raise NotImplementedError

    # --- graft slices s(dy,{k}) = y e^{-lam y} (lam y)^k / (k+1)! nu(dy) ---
    def slice_masses(self, lam: float, ks: np.ndarray) -> np.ndarray:
        """m_k for the requested k values (m_0 may be inf)."""
        raise NotImplementedError

    def slice_total(self, lam: float, from_k: int) -> float:
        """Exact sum of m_k over k >= from_k (kept finite by from_k >= 1)."""
        raise NotImplementedError

    def slice_exp(self, lam: float, q: float, ks: np.ndarray) -> np.ndarray:
        """E_k(q) = integral e^{-qy} s(dy,{k}) for the requested k >= 1 (and k=0 when finite)."""
        raise NotImplementedError

    def slice0_paired(self, lam: float, q: float) -> float:
        """integral (e^{-qy} - 1) y e^{-lam y} nu(dy); finite for every admissible nu."""
        raise NotImplementedError

    def slice0_tail_mass(self, lam: float, delta: float) -> float:
        """integral_[delta,inf) y e^{-lam y} nu(dy)."""
        raise NotImplementedError

    def slice0_mean_below(self, lam: float, delta: float) -> float:
        """integral_(0,delta) y^2 e^{-lam y} nu(dy), the folded small-graft mass rate."""
        raise NotImplementedError

    def slice_sample(self, lam: float, k: int, n: int, rng, delta: float = 0.0) -> np.ndarray:
        """n draws of y from the k-slice, normalized (restricted to [delta,inf) if k=0 and needed)."""
        raise NotImplementedError

    def to_json(self) -> dict:
        raise NotImplementedError


class ZeroMeasure(LevyMeasure):
    kind = "zero"

    def psi_integral(self, q, comp):
        return np.zeros_like(np.asarray(q, dtype=float))

    def psi_prime_integral(self, q, comp):
        return np.zeros_like(np.asarray(q, dtype=float))

    def psi_second_integral(self, q):
        return np.zeros_like(np.asarray(q, dtype=float))

    def prime_at_zero(self, comp):
        return 0.0

    def asymptote(self, comp):
        return _Asymptote(False, 0.0, False)

    def is_zero(self):
        return True

    def tempered(self, lam):
        return self

    def total_mass(self):
        return 0.0

    def tail_mass(self, delta):
        return 0.0

    def moment1(self, a, b):
        return 0.0

    def moment2_below(self, delta):
        return 0.0

    def sample_tail(self, delta, n, rng):
        return np.zeros(n)

    def slice_masses(self, lam, ks):
        return np.zeros(len(ks))

    def slice_total(self, lam, from_k):
        return 0.0

    def slice_exp(self, lam, q, ks):
        return np.zeros(len(ks))

    def slice0_paired(self, lam, q):
        return 0.0

    def slice0_tail_mass(self, lam, delta):
        return 0.0

    def slice0_mean_below(self, lam, delta):
        return 0.0

    def slice_sample(self, lam, k, n, rng, delta=0.0):
        return np.zeros(n)

    def to_json(self):
        return {"kind": "zero"}


class Atoms(LevyMeasure):
    """Finitely many atoms: nu = sum_i masses[i] * delta_{locations[i]}."""

    kind = "atoms"

    def __init__(self, locations, masses):
        y = np.asarray(locations, dtype=float)
        w = np.asarray(masses, dtype=float)
        if y.ndim != 1 or w.shape != y.shape or len(y) == 0:
            raise MechanismError("atoms need matching nonempty location/mass vectors")
        if np.any(y <= 0) or np.any(w <= 0):
            raise MechanismError("atom locations and masses must be strictly positive")
        order = np.argsort(y)
        self.y = y[order]
        self.w = w[order]

    def _chi(self, comp):
        if comp is Compensation.FULL:
            return np.ones_like(self.y)
        return (self.y < 1.0).astype(float)

    def psi_integral(self, q, comp):
        q = np.asarray(q, dtype=float)
        e = np.exp(-np.multiply.outer(q, self.y))
        return (self.w * (e - 1.0 + np.multiply.outer(q, self.y * self._chi(comp)))).sum(axis=-1)

    def psi_prime_integral(self, q, comp):
        q = np.asarray(q, dtype=float)
        e = np.exp(-np.multiply.outer(q, self.y))
        return (self.w * self.y * (self._chi(comp) - e)).sum(axis=-1)

    def psi_second_integral(self, q):
        q = np.asarray(q, dtype=float)
        e = np.exp(-np.multiply.outer(q, self.y))
        return (self.w * self.y**2 * e).sum(axis=-1)

    def prime_at_zero(self, comp):
        return float((self.w * self.y * (self._chi(comp) - 1.0)).sum())

    def asymptote(self, comp):
        slope = float((self.w * self.y * self._chi(comp)).sum())
        return _Asymptote(False, slope, True)

    def tempered(self, lam):
        return Atoms(self.y, self.w * np.exp(-lam * self.y))

    def total_mass(self):
        return float(self.w.sum())

    def tail_mass(self, delta):
        return float(self.w[self.y >= delta].sum())

    def moment1(self, a, b):
        sel = (self.y >= a) & (self.y < b)
        return float((self.w[sel] * self.y[sel]).sum())

    def moment2_below(self, delta):
        sel = self.y < delta
        return float((self.w[sel] * self.y[sel] ** 2).sum())

    def sample_tail(self, delta, n, rng):
        sel = self.y >= delta
        p = self.w[sel] / self.w[sel].sum()
        return rng.choice(self.y[sel], size=n, p=p)

    def _slice_weights(self, lam, ks):
        # weight of atom i in slice k: w_i y_i e^{-lam y_i} (lam y_i)^k / (k+1)!
        ly = lam * self.y
        logs = (
            np.log(self.w * self.y)[None, :]
            - ly[None, :]
            + np.multiply.outer(np.asarray(ks, dtype=float), np.log(ly))
            - special.gammaln(np.asarray(ks, dtype=float) + 2.0)[:, None]
        )
        return np.exp(logs)

    def slice_masses(self, lam, ks):
        return self._slice_weights(lam, ks).sum(axis=1)

    def slice_total(self, lam, from_k):
        # sum_{k>=0} m_k = (1/lam) integral (1 - e^{-lam y}) nu(dy), minus the leading terms
        total0 = float((self.w * (1.0 - np.exp(-lam * self.y))).sum() / lam)
        if from_k > 0:
            total0 -= float(self.slice_masses(lam, np.arange(from_k)).sum())
        return max(total0, 0.0)

    def slice_exp(self, lam, q, ks):
        ly = lam * self.y
        logs = (
            np.log(self.w * self.y)[None, :]
            - (lam + q) * self.y[None, :]
            + np.multiply.outer(np.asarray(ks, dtype=float), np.log(ly))
            - special.gammaln(np.asarray(ks, dtype=float) + 2.0)[:, None]
        )
        return np.exp(logs).sum(axis=1)

    def slice0_paired(self, lam, q):
        return float((self.w * self.y * np.exp(-lam * self.y) * (np.exp(-q * self.y) - 1.0)).sum())

    def slice0_tail_mass(self, lam, delta):
        sel = self.y >= delta
        return float((self.w[sel] * self.y[sel] * np.exp(-lam * self.y[sel])).sum())

    def slice0_mean_below(self, lam, delta):
        sel = self.y < delta
        return float((self.w[sel] * self.y[sel] ** 2 * np.exp(-lam * self.y[sel])).sum())

    def slice_sample(self, lam, k, n, rng, delta=0.0):
        ks = np.array([k])
        wts = self._slice_weights(lam, ks)[0]
        if k == 0 and delta > 0.0:
            wts = np.where(self.y >= delta, wts, 0.0)
        p = wts / wts.sum()
        return rng.choice(self.y, size=n, p=p)

    def to_json(self):
        return {"kind": "atoms", "locations": self.y.tolist(), "masses": self.w.tolist()}


class _PowerBase(LevyMeasure):
    """Shared machinery for densities dens_coef * y^(-1-alpha) * e^(-theta y)."""

    def __init__(self, alpha, theta, dens_coef):
        if not (0.0 < alpha < 2.0):
            raise MechanismError("power-law index must lie in (0, 2)")
        if theta < 0 or dens_coef <= 0:
            raise MechanismError("tempering must be >= 0 and scale > 0")
        self.alpha = float(alpha)
        self.theta = float(theta)
        self.C = float(dens_coef)

    # -- moments -----------------------------------------------------------
    def total_mass(self):
        return math.inf

    def tail_mass(self, delta):
        return self.C * _power_exp_moment(-self.alpha, self.theta, delta, math.inf)

    def moment1(self, a, b):
        if a == 0.0 and self.alpha >= 1.0:
            return math.inf
        return self.C * _power_exp_moment(1.0 - self.alpha, self.theta, a, b)

    def moment2_below(self, delta):
        return self.C * _power_exp_moment(2.0 - self.alpha, self.theta, 0.0, delta)

    def heavy_tail_exponent(self):
        return self.alpha if self.theta == 0.0 else None

    def cutoff_for_rate(self, target: float) -> float:
        """Cutoff delta with nu([delta, inf)) <= target (tempering ignored, conservative)."""
        return (self.C / (self.alpha * target)) ** (1.0 / self.alpha)

    def sample_tail(self, delta, n, rng):
        out = np.empty(n)
        need = np.arange(n)
        heavy_temper = self.theta * delta > 1.0
        while need.size:
            if heavy_temper:
                # shifted-exponential proposal; accept on the power factor
                y = delta + rng.exponential(1.0 / self.theta, size=need.size)
                acc = rng.random(need.size) < (y / delta) ** (-1.0 - self.alpha)
            else:
                # Pareto proposal; accept on the tempering factor
                y = delta * rng.random(need.size) ** (-1.0 / self.alpha)
                acc = rng.random(need.size) < np.exp(-self.theta * (y - delta))
            out[need[acc]] = y[acc]
            need = need[~acc]
        return out

    # -- graft slices --------------------------------------------------------
    def _slice_log(self, lam, s, ks):
        # log integral y e^{-s y} (lam y)^k/(k+1)! C y^{-1-alpha} dy
        #   = log C + k log lam + lgamma(k+1-alpha) - lgamma(k+2) - (k+1-alpha) log s
        k = np.asarray(ks, dtype=float)
        return (
            math.log(self.C)
            + k * math.log(lam)
            + special.gammaln(k + 1.0 - self.alpha)
            - special.gammaln(k + 2.0)
            - (k + 1.0 - self.alpha) * math.log(s)
        )

    def slice_masses(self, lam, ks):
        ks = np.asarray(ks)
        out = np.exp(self._slice_log(lam, lam + self.theta, ks))
        if self.alpha >= 1.0:
            out = np.where(ks == 0, math.inf, out)
        return out

    def slice_total(self, lam, from_k):
        a, t, s2 = self.alpha, self.theta, lam + self.theta
        if from_k == 0:
            if a >= 1.0:
                return math.inf
            # sum_{k>=0} m_k = (1/lam) integral (1 - e^{-lam y}) e^{-theta y} nu(dy)
            ta = 0.0 if t == 0.0 else t**a
            return max(-self.C * special.gamma(-a) * (s2**a - ta) / lam, 0.0)
        # sum_{k>=1} m_k = I/lam, I = integral (1 - e^{-lam y} - lam y e^{-lam y}) e^{-theta y} nu(dy);
        # one pairing formula covers alpha in (0,1) and (1,2), alpha = 1 by its own closed form
        if a == 1.0:
            total = self.C * (lam - (0.0 if t == 0.0 else t * math.log(s2 / t))) / lam
        else:
            ta = 0.0 if t == 0.0 else t**a
            i = self.C * (
                special.gamma(-a) * (ta - s2**a)
                - lam * special.gamma(1.0 - a) * s2 ** (a - 1.0)
            )
            total = i / lam
        partial = 0.0
        if from_k > 1:
            partial = float(self.slice_masses(lam, np.arange(1, from_k)).sum())
        return max(total - partial, 0.0)

    def slice_exp(self, lam, q, ks):
        ks = np.asarray(ks)
        out = np.exp(self._slice_log(lam, lam + self.theta + q, ks))
        if self.alpha >= 1.0:
            out = np.where(ks == 0, math.inf, out)
        return out

    def slice0_paired_base(self, t, q):
        """integral (e^{-qy} - 1) y^{-alpha} e^{-t y} C dy over (0, inf), t > 0."""
        a = self.alpha
        if a == 1.0:
            return self.C * math.log(t / (t + q))
        return self.C * special.gamma(1.0 - a) * ((t + q) ** (a - 1.0) - t ** (a - 1.0))

    def slice0_paired(self, lam, q):
        return self.slice0_paired_base(lam + self.theta, q)

    def slice0_tail_mass(self, lam, delta):
        return self.C * _power_exp_moment(1.0 - self.alpha, lam + self.theta, delta, math.inf)

    def slice0_mean_below(self, lam, delta):
        return self.C * _power_exp_moment(2.0 - self.alpha, lam + self.theta, 0.0, delta)

    def slice_sample(self, lam, k, n, rng, delta=0.0):
        # slice-k density is proportional to y^{k-alpha} e^{-s y}, a Gamma shape
        s = lam + self.theta
        shape = k + 1.0 - self.alpha
        if shape > 0:
            if k == 0 and delta > 0.0:
                # truncate to [delta, inf) by rejection; the cutoff sits far below the mean
                out = np.empty(n)
                need = np.arange(n)
                while need.size:
                    y = rng.standard_gamma(shape, size=need.size) / s
                    acc = y >= delta
                    out[need[acc]] = y[acc]
                    need = need[~acc]
                return out
            return rng.standard_gamma(shape, size=n) / s
        # k = 0 with alpha >= 1: density ~ y^{-alpha} e^{-sy} on [delta, inf);
        # Pareto proposal with tail index alpha-1 matches y^{-alpha} exactly
        if delta <= 0.0:
            raise MechanismError("k=0 graft slice needs a cutoff for alpha >= 1")
        out = np.empty(n)
        need = np.arange(n)
        while need.size:
            if self.alpha > 1.0:
                y = delta * rng.random(need.size) ** (-1.0 / (self.alpha - 1.0))
            else:  # alpha == 1: proposal y^{-1} is not normalizable; use log-uniform on a capped range
                hi = delta + 80.0 / s
                y = delta * (hi / delta) ** rng.random(need.size)
            acc = rng.random(need.size) < np.exp(-s * (y - delta))
            out[need[acc]] = y[acc]
            need = need[~acc]
        return out


class StablePowerLaw(_PowerBase):
    """Stable family with closed-form psi contribution -c q^alpha (alpha<1) or +c q^alpha (alpha>1)."""

    kind = "stable"

    def __init__(self, alpha, scale):
        if alpha == 1.0 or not (0.0 < alpha < 2.0):
            raise MechanismError("stable index must lie in (0,1) or (1,2)")
        if scale <= 0:
            raise MechanismError("stable scale must be positive")
        self.scale = float(scale)
        if alpha < 1.0:
            dens = scale * alpha / special.gamma(1.0 - alpha)
        else:
            dens = scale * alpha * (alpha - 1.0) / special.gamma(2.0 - alpha)
        super().__init__(alpha, 0.0, dens)
        self.sign = -1.0 if alpha < 1.0 else 1.0

    # The closed form fixes its own compensation (none below 1, full above 1),
    # so the mechanism-level convention does not alter this contribution.
    def psi_integral(self, q, comp):
        q = np.asarray(q, dtype=float)
        return self.sign * self.scale * q**self.alpha

    def psi_prime_integral(self, q, comp):
        q = np.asarray(q, dtype=float)
        return self.sign * self.scale * self.alpha * q ** (self.alpha - 1.0)

    def psi_second_integral(self, q):
        q = np.asarray(q, dtype=float)
        return self.scale * self.alpha * abs(self.alpha - 1.0) * q ** (self.alpha - 2.0)

    def prime_at_zero(self, comp):
        return -math.inf if self.alpha < 1.0 else 0.0

    def asymptote(self, comp):
        if self.alpha > 1.0:
            return _Asymptote(True, 0.0, True)
        return _Asymptote(False, 0.0, True)

    def tempered(self, lam):
        return TemperedPowerLaw(self.alpha, lam, self.C)

    def to_json(self):
        return {"kind": "stable", "alpha": self.alpha, "scale": self.scale}


class TemperedPowerLaw(_PowerBase):
    """Density scale * y^(-1-alpha) * e^(-theta y); psi by adaptive quadrature."""

    kind = "tempered"

    def __init__(self, alpha, theta, scale):
        super().__init__(alpha, theta, scale)

    # the substitution y = u^(1/(2-alpha)) flattens the endpoint singularity exactly
    def _small_part(self, f_over_nu_small, upper=1.0):
        p = 1.0 / (2.0 - self.alpha)

        def g(u):
            y = upper * u**p
            dens = self.C * y ** (-1.0 - self.alpha) * math.exp(-self.theta * y)
            return f_over_nu_small(y) * dens * upper * p * u ** (p - 1.0)

        return _quad(g, 0.0, 1.0)

    def psi_integral(self, q, comp):
        q_arr = np.atleast_1d(np.asarray(q, dtype=float))
        out = np.empty_like(q_arr)
        for i, qi in enumerate(q_arr):
            small = self._small_part(lambda y: math.expm1(-qi * y) + qi * y)
            tail = _quad(
                lambda y: math.expm1(-qi * y) * self.C * y ** (-1.0 - self.alpha) * math.exp(-self.theta * y),
                1.0,
                np.inf,
                points=None,
            )
            val = small + tail
            if comp is Compensation.FULL:
                m1_tail = self.moment1(1.0, math.inf)
                if math.isinf(m1_tail):
                    raise MechanismError("full compensation needs a finite tail first moment")
                val += qi * m1_tail
            out[i] = val
        return out if np.ndim(q) else float(out[0])

    def psi_prime_integral(self, q, comp):
        q_arr = np.atleast_1d(np.asarray(q, dtype=float))
        out = np.empty_like(q_arr)
        for i, qi in enumerate(q_arr):
            small = self._small_part(lambda y: -math.expm1(-qi * y) * y)
            tail = _quad(
                lambda y: -y * math.exp(-qi * y) * self.C * y ** (-1.0 - self.alpha) * math.exp(-self.theta * y),
                1.0,
                np.inf,
            )
            val = small + tail
            if comp is Compensation.FULL:
                val += self.moment1(1.0, math.inf)
            out[i] = val
        return out if np.ndim(q) else float(out[0])

    def psi_second_integral(self, q):
        q_arr = np.atleast_1d(np.asarray(q, dtype=float))
        out = np.empty_like(q_arr)
        for i, qi in enumerate(q_arr):
            out[i] = self.C * _power_exp_moment(2.0 - self.alpha, self.theta + qi, 0.0, math.inf)
        return out if np.ndim(q) else float(out[0])

    def prime_at_zero(self, comp):
        if comp is Compensation.FULL:
            return 0.0
        m1_tail = self.moment1(1.0, math.inf)
        return -m1_tail  # -inf when theta=0 and alpha <= 1

    def asymptote(self, comp):
        # infinite activity near zero: compensated part grows like q^alpha
        if self.alpha >= 1.0:
            return _Asymptote(True, 0.0, True)
        slope = self.moment1(0.0, 1.0) if comp is Compensation.UNIT_TRUNCATION else self.moment1(0.0, math.inf)
        return _Asymptote(False, slope, True)

    def tempered(self, lam):
        return TemperedPowerLaw(self.alpha, self.theta + lam, self.C)

    def to_json(self):
        return {"kind": "tempered", "alpha": self.alpha, "theta": self.theta, "scale": self.C}


class GenericDensity(LevyMeasure):
    """User-supplied Lévy density with a declared tail-decay hint; quadrature throughout."""

    kind = "density"

    def __init__(self, density: Callable[[float], float], tail: TailHint, expr: Optional[str] = None):
        self.density = density
        self.tail = tail
        self.expr = expr
        self._tables: dict = {}

    def _quad_nu(self, f, a, b):
        return _quad(lambda y: f(y) * self.density(y), a, b)

    def psi_integral(self, q, comp):
        q_arr = np.atleast_1d(np.asarray(q, dtype=float))
        out = np.empty_like(q_arr)
        for i, qi in enumerate(q_arr):
            small = self._quad_nu(lambda y: math.expm1(-qi * y) + qi * y, 0.0, 1.0)
            tail = self._quad_nu(lambda y: math.expm1(-qi * y), 1.0, np.inf)
            val = small + tail
            if comp is Compensation.FULL:
                val += qi * self.moment1(1.0, math.inf)
            out[i] = val
        return out if np.ndim(q) else float(out[0])

    def psi_prime_integral(self, q, comp):
        q_arr = np.atleast_1d(np.asarray(q, dtype=float))
        out = np.empty_like(q_arr)
        for i, qi in enumerate(q_arr):
            small = self._quad_nu(lambda y: -math.expm1(-qi * y) * y, 0.0, 1.0)
            tail = self._quad_nu(lambda y: -y * math.exp(-qi * y), 1.0, np.inf)
            val = small + tail
            if comp is Compensation.FULL:
                val += self.moment1(1.0, math.inf)
            out[i] = val
        return out if np.ndim(q) else float(out[0])

    def psi_second_integral(self, q):
        q_arr = np.atleast_1d(np.asarray(q, dtype=float))
        out = np.empty_like(q_arr)
        for i, qi in enumerate(q_arr):
            out[i] = self._quad_nu(lambda y: y * y * math.exp(-qi * y), 0.0, np.inf)
        return out if np.ndim(q) else float(out[0])

    def prime_at_zero(self, comp):
        if self.tail.decay == "power" and self.tail.alpha <= 1.0:
            return -math.inf
        m1_tail = self.moment1(1.0, math.inf)
        return 0.0 if comp is Compensation.FULL else -m1_tail

    def heavy_tail_exponent(self):
        if self.tail.decay == "power":
            return self.tail.alpha
        return None

    def asymptote(self, comp):
        try:
            m1_small = self._quad_nu(lambda y: y, 0.0, 1.0)
        except QuadratureError:
            return _Asymptote(True, 0.0, True)
        if not math.isfinite(m1_small) or m1_small > 1e12:
            return _Asymptote(True, 0.0, True)
        slope = m1_small if comp is Compensation.UNIT_TRUNCATION else m1_small + self.moment1(1.0, math.inf)
        return _Asymptote(False, slope, True)

    def tempered(self, lam):
        base = self.density
        if self.tail.decay == "exponential":
            hint = TailHint("exponential", rate=self.tail.rate + lam)
        else:
            hint = TailHint("exponential", rate=lam)
        return GenericDensity(lambda y: math.exp(-lam * y) * base(y), hint)

    def total_mass(self):
        try:
            return self._quad_nu(lambda y: 1.0, 1e-12, np.inf)
        except QuadratureError:
            return math.inf

    def tail_mass(self, delta):
        return self._quad_nu(lambda y: 1.0, delta, np.inf)

    def moment1(self, a, b):
        lo = max(a, 0.0)
        if lo == 0.0:
            lo = 1e-300
        return self._quad_nu(lambda y: y, lo, b if not math.isinf(b) else np.inf)

    def moment2_below(self, delta):
        return self._quad_nu(lambda y: y * y, 0.0, delta)

    def _y_hi(self, rate_floor=0.0):
        if self.tail.decay == "exponential":
            return max(2.0, 60.0 / max(self.tail.rate, rate_floor, 1e-3))
        return max(2.0, 60.0 / max(rate_floor, 1e-3))

    def _inverse_cdf_table(self, key, weight: Callable[[float], float], lo: float, hi: float):
        tab = self._tables.get(key)
        if tab is None:
            ys = np.geomspace(lo, hi, 4001)
            vals = np.array([weight(y) * self.density(y) for y in ys])
            incr = np.concatenate([[0.0], np.cumsum(0.5 * (vals[1:] + vals[:-1]) * np.diff(ys))])
            tab = (ys, incr / incr[-1])
            self._tables[key] = tab
        return tab

    def sample_tail(self, delta, n, rng):
        ys, cdf = self._inverse_cdf_table(("tail", delta), lambda y: 1.0, delta, self._y_hi())
        return np.interp(rng.random(n), cdf, ys)

    def slice_masses(self, lam, ks):
        ks = np.asarray(ks)
        out = np.empty(len(ks), dtype=float)
        for i, k in enumerate(ks):
            out[i] = self._quad_nu(
                lambda y: y * math.exp(-lam * y + k * math.log(lam * y) - special.gammaln(k + 2.0)),
                0.0,
                np.inf,
            )
        return out

    def slice_total(self, lam, from_k):
        if from_k == 0:
            return self._quad_nu(lambda y: -math.expm1(-lam * y) / lam, 0.0, np.inf)
        total = self._quad_nu(
            lambda y: (-math.expm1(-lam * y) - lam * y * math.exp(-lam * y)) / lam, 0.0, np.inf
        )
        if from_k > 1:
            total -= float(self.slice_masses(lam, np.arange(1, from_k)).sum())
        return max(total, 0.0)

    def slice_exp(self, lam, q, ks):
        ks = np.asarray(ks)
        out = np.empty(len(ks), dtype=float)
        for i, k in enumerate(ks):
            out[i] = self._quad_nu(
                lambda y: y * math.exp(-(lam + q) * y + k * math.log(lam * y) - special.gammaln(k + 2.0)),
                0.0,
                np.inf,
            )
        return out

    def slice0_paired(self, lam, q):
        return self._quad_nu(lambda y: y * math.exp(-lam * y) * math.expm1(-q * y), 0.0, np.inf)

    def slice0_tail_mass(self, lam, delta):
        return self._quad_nu(lambda y: y * math.exp(-lam * y), delta, np.inf)

    def slice0_mean_below(self, lam, delta):
        return self._quad_nu(lambda y: y * y * math.exp(-lam * y), 0.0, delta)

    def slice_sample(self, lam, k, n, rng, delta=0.0):
        lo = delta if (k == 0 and delta > 0.0) else 1e-10
        ys, cdf = self._inverse_cdf_table(
            ("slice", k, lam, delta),
            lambda y: y * math.exp(-lam * y + k * math.log(lam * y) - special.gammaln(k + 2.0)),
            lo,
            self._y_hi(rate_floor=lam),
        )
        return np.interp(rng.random(n), cdf, ys)

    def to_json(self):
        if self.expr is None:
            raise SchemaError("cannot serialize a generic density without its expression")
        tail = (
            {"decay": "exponential", "rate": self.tail.rate}
            if self.tail.decay == "exponential"
            else {"decay": "power", "alpha": self.tail.alpha}
        )
        return {"kind": "density", "expr": self.expr, "tail": tail}


@dataclass(frozen=True)
class BranchingMechanism:
    """Quadruplet (sigma2, gamma, nu, kappa) plus the compensation convention."""

    sigma2: float
    gamma: float
    kappa: float
    levy: LevyMeasure
    compensation: Compensation = Compensation.UNIT_TRUNCATION

    def __post_init__(self):
        if self.sigma2 < 0 or self.kappa < 0:
            raise MechanismError("sigma2 and kappa must be nonnegative")
        if self.compensation is Compensation.FULL and not isinstance(self.levy, (ZeroMeasure, StablePowerLaw)):
            if math.isinf(self.levy.moment1(1.0, math.inf)):
                raise MechanismError("full compensation needs a finite tail first moment")

    # -- evaluation -----------------------------------------------------
    def psi(self, q):
        """psi(q) for scalar or array q > 0."""
        q_arr = np.asarray(q, dtype=float)
        if np.any(q_arr <= 0):
            raise MechanismError("psi requires q > 0")
        val = (
            0.5 * self.sigma2 * q_arr**2
            - self.gamma * q_arr
            + self.levy.psi_integral(q_arr, self.compensation)
            - self.kappa
        )
        return float(val) if np.ndim(q) == 0 else val

    def psi_prime(self, q):
        q_arr = np.asarray(q, dtype=float)
        if np.any(q_arr <= 0):
            raise MechanismError("psi_prime requires q > 0")
        val = self.sigma2 * q_arr - self.gamma + self.levy.psi_prime_integral(q_arr, self.compensation)
        return float(val) if np.ndim(q) == 0 else val

    def psi_second(self, q):
        q_arr = np.asarray(q, dtype=float)
        val = self.sigma2 + self.levy.psi_second_integral(q_arr)
        return float(val) if np.ndim(q) == 0 else val

    def psi_prime_at_zero(self) -> float:
        """Right derivative at 0, possibly -inf."""
        return -self.gamma + self.levy.prime_at_zero(self.compensation)

    # -- transforms ------------------------------------------------------
    def esscher(self, lam: float) -> "BranchingMechanism":
        """Mechanism of psi_lam(q) = psi(lam + q) - psi(lam), killing stripped."""
        if lam < 0:
            raise MechanismError("esscher requires lam >= 0")
        if lam == 0.0:
            return replace(self, kappa=0.0)
        return BranchingMechanism(
            sigma2=self.sigma2,
            gamma=-self.psi_prime(lam),
            kappa=0.0,
            levy=self.levy.tempered(lam),
            compensation=Compensation.FULL,
        )

    def convert_compensation(self, target: Compensation) -> "BranchingMechanism":
        """Same psi, restated under the other compensation convention."""
        if target is self.compensation or isinstance(self.levy, (ZeroMeasure, StablePowerLaw)):
            return replace(self, compensation=target)
        m1_tail = self.levy.moment1(1.0, math.inf)
        if math.isinf(m1_tail):
            raise MechanismError("conversion needs a finite tail first moment")
        shift = m1_tail if target is Compensation.FULL else -m1_tail
        return replace(self, gamma=self.gamma + shift, compensation=target)

    # -- classification ----------------------------------------------------
    def asymptotic_sign(self) -> int:
        """Eventual sign of psi at infinity: +1, -1, or 0 for psi identically 0."""
        if self.sigma2 > 0:
            return _POS
        a = self.levy.asymptote(self.compensation)
        if a.superlinear:
            return _POS
        slope = -self.gamma + a.slope
        if slope > 0:
            return _POS
        if slope < 0:
            return _NEG
        if a.negative_remainder or self.kappa > 0:
            return _NEG
        return _ZERO

    def to_json(self) -> dict:
        return {
            "sigma2": self.sigma2,
            "gamma": self.gamma,
            "kappa": self.kappa,
            "levy": self.levy.to_json(),
        }


# ---------------------------------------------------------------------------
# Module-level operations
# ---------------------------------------------------------------------------


def eval_psi(m: BranchingMechanism, q):
    return m.psi(q)


def eval_psi_prime(m: BranchingMechanism, lam):
    return m.psi_prime(lam)


def esscher(m: BranchingMechanism, lam: float) -> BranchingMechanism:
    return m.esscher(lam)


def _bisect_root(f, lo, hi, fprime=None, tol_scale=1.0):
    flo, fhi = f(lo), f(hi)
    if flo == 0.0:
        return lo
    if fhi == 0.0:
        return hi
    if flo * fhi > 0:
        raise MechanismError("root not bracketed")
    for _ in range(300):
        mid = 0.5 * (lo + hi) if hi - lo < 1e8 * lo else math.sqrt(lo * hi)
        fm = f(mid)
        if fm == 0.0:
            return mid
        if fm * flo < 0:
            hi = mid
        else:
            lo, flo = mid, fm
        if hi - lo <= 1e-15 * hi:
            break
    root = 0.5 * (lo + hi)
    if fprime is not None:
        for _ in range(4):
            d = fprime(root)
            if d == 0 or not math.isfinite(d):
                break
            step = f(root) / d
            new = root - step
            if not (lo <= new <= hi):
                break
            root = new
    return root


def largest_root(m: BranchingMechanism, cap: float = ROOT_PROBE_CAP) -> float:
    """rho = sup{x > 0 : psi(x) < 0}, with 0 for nonnegative psi and inf certified."""
    sign_inf = None
    p0 = m.psi_prime_at_zero()
    if m.kappa == 0.0 and p0 >= 0.0:
        return 0.0
    # psi is negative immediately to the right of zero; look for the upcrossing
    grid = np.geomspace(1e-10, cap, 280)
    prev = grid[0]
    fprev = m.psi(prev)
    if fprev >= 0.0:
        # slope certificate said negative near zero; probe smaller
        for qq in (1e-14, 1e-18):
            if m.psi(qq) < 0:
                prev, fprev = qq, m.psi(qq)
                break
        else:
            return 0.0
    for q in grid[1:]:
        fq = m.psi(q)
        if fq >= 0.0:
            root = _bisect_root(m.psi, prev, q, m.psi_prime)
            resid = abs(m.psi(root))
            if resid > 1e-12 * max(1.0, abs(m.psi_prime(root))):
                raise MechanismError(f"root polish failed: |psi(rho)|={resid}")
            return float(root)
        prev, fprev = q, fq
    sign_inf = m.asymptotic_sign()
    if sign_inf == _NEG:
        return math.inf
    if sign_inf == _POS:
        # certified finite root beyond the cap; extend geometrically
        lo = cap
        hi = cap * 10.0
        for _ in range(60):
            if m.psi(hi) >= 0.0:
                return float(_bisect_root(m.psi, lo, hi, m.psi_prime))
            lo, hi = hi, hi * 10.0
    raise InconclusiveAnalysis(
        "psi still negative at the probing cap and no asymptotic certificate applies"
    )


def argmin_location(m: BranchingMechanism, cap: float = ROOT_PROBE_CAP) -> float:
    """mu = argmin psi in [0, inf]; the root of the nondecreasing psi'."""
    if m.psi_prime_at_zero() >= 0.0:
        return 0.0
    grid = np.geomspace(1e-10, cap, 280)
    prev = None
    for q in grid:
        if m.psi_prime(q) >= 0.0:
            if prev is None:
                return 0.0
            return float(_bisect_root(m.psi_prime, prev, q, m.psi_second))
        prev = q
    sign_inf = m.asymptotic_sign()
    if sign_inf == _NEG:
        return math.inf
    if sign_inf == _POS:
        lo, hi = cap, cap * 10.0
        for _ in range(60):
            if m.psi_prime(hi) >= 0.0:
                return float(_bisect_root(m.psi_prime, lo, hi, m.psi_second))
            lo, hi = hi, hi * 10.0
    raise InconclusiveAnalysis("psi' negative up to the probing cap without a certificate")


def is_immortal(m: BranchingMechanism) -> bool:
    """True when psi <= 0 on (0, inf) (the process drifts to infinity a.s.)."""
    return m.asymptotic_sign() != _POS


def _grey_numeric_probe(m: BranchingMechanism) -> bool:
    # local log-log slope of |psi| near zero decides the divergence of
    # integral dq/|psi(q)| at 0; refuse to guess in the ambiguous band
    qs = np.geomspace(1e-12, 1e-4, 17)
    vals = np.array([m.psi(float(q)) for q in qs])
    if np.any(vals >= 0):
        # psi >= 0 near zero with psi(0+) = 0 means |psi| <= c q
        return True
    slopes = np.diff(np.log(np.abs(vals))) / np.diff(np.log(qs))
    beta = float(np.median(slopes[:8]))
    if beta < 0.9:
        return False
    if beta > 0.995:
        return True
    raise InconclusiveAnalysis(f"small-q exponent probe ambiguous (beta ~ {beta:.3f})")


def is_nonexplosive(m: BranchingMechanism) -> bool:
    """Divergence of integral_0 dq/|psi(q)| (no explosion in finite time)."""
    if m.kappa > 0:
        return False
    p0 = m.psi_prime_at_zero()
    if math.isfinite(p0):
        return True  # |psi(q)| <= C q near zero
    alpha = m.levy.heavy_tail_exponent()
    if alpha is not None:
        return alpha >= 1.0
    if isinstance(m.levy, GenericDensity) and m.levy.tail.decay == "power":
        return m.levy.tail.alpha >= 1.0
    return _grey_numeric_probe(m)


@dataclass(frozen=True)
class MechanismClass:
    criticality: str  # "supercritical" | "critical" | "subcritical"
    immortal: bool
    nonexplosive: bool


def classify(m: BranchingMechanism) -> MechanismClass:
    """Criticality (requires kappa = 0), immortality, and the explosion criterion."""
    if m.kappa > 0:
        raise MechanismError("criticality classification requires kappa = 0")
    p0 = m.psi_prime_at_zero()
    if abs(p0) <= CRITICAL_SLOPE_TOL:
        crit = "critical"
    elif p0 < 0:
        crit = "supercritical"
    else:
        crit = "subcritical"
    return MechanismClass(crit, is_immortal(m), is_nonexplosive(m))


# ---------------------------------------------------------------------------
# JSON schema
# ---------------------------------------------------------------------------

_LEVY_FIELDS = {
    "zero": set(),
    "atoms": {"locations", "masses"},
    "stable": {"alpha", "scale"},
    "tempered": {"alpha", "theta", "scale"},
    "density": {"expr", "tail"},
}

_EXPR_NAMES = {
    name: getattr(np, name)
    for name in (
        "exp", "log", "sqrt", "sin", "cos", "tanh", "abs", "pi", "e", "where", "maximum", "minimum",
    )
}


def _density_from_expr(expr: str) -> Callable[[float], float]:
    code = compile(expr, "<levy-density>", "eval")
    for name in code.co_names:
        if name not in _EXPR_NAMES and name != "y":
            raise SchemaError(f"density expression uses unknown name '{name}'")

    def density(y: float) -> float:
        return float(eval(code, {"__builtins__": {}}, {**_EXPR_NAMES, "y": y}))

    return density


def levy_from_json(obj: dict) -> LevyMeasure:
    if not isinstance(obj, dict) or "kind" not in obj:
        raise SchemaError("levy spec must be an object with a 'kind' field")
    kind = obj["kind"]
    if kind not in _LEVY_FIELDS:
        raise SchemaError(f"unknown levy kind '{kind}'")
    extra = set(obj) - _LEVY_FIELDS[kind] - {"kind"}
    missing = _LEVY_FIELDS[kind] - set(obj)
    if extra:
        raise SchemaError(f"unknown levy fields for kind '{kind}': {sorted(extra)}")
    if missing:
        raise SchemaError(f"missing levy fields for kind '{kind}': {sorted(missing)}")
    try:
        if kind == "zero":
            return ZeroMeasure()
        if kind == "atoms":
            return Atoms(obj["locations"], obj["masses"])
        if kind == "stable":
            return StablePowerLaw(obj["alpha"], obj["scale"])
        if kind == "tempered":
            return TemperedPowerLaw(obj["alpha"], obj["theta"], obj["scale"])
        tail = obj["tail"]
        if not isinstance(tail, dict) or set(tail) - {"decay", "rate", "alpha"}:
            raise SchemaError("density tail hint must carry only decay/rate/alpha")
        hint = TailHint(tail.get("decay", ""), rate=tail.get("rate", 0.0), alpha=tail.get("alpha", 0.0))
        return GenericDensity(_density_from_expr(obj["expr"]), hint, expr=obj["expr"])
    except MechanismError as exc:
        raise SchemaError(str(exc)) from exc


def mechanism_from_json(obj) -> BranchingMechanism:
    """Parse {"sigma2": ..., "gamma": ..., "kappa": ..., "levy": {...}}; unknown fields rejected."""
    if isinstance(obj, str):
        try:
            obj = json.loads(obj)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"malformed JSON: {exc}") from exc
    if not isinstance(obj, dict):
        raise SchemaError("mechanism spec must be a JSON object")
    required = {"sigma2", "gamma", "kappa", "levy"}
    extra = set(obj) - required
    missing = required - set(obj)
    if extra:
        raise SchemaError(f"unknown mechanism fields: {sorted(extra)}")
    if missing:
        raise SchemaError(f"missing mechanism fields: {sorted(missing)}")
    for name in ("sigma2", "gamma", "kappa"):
        if not isinstance(obj[name], (int, float)) or isinstance(obj[name], bool):
            raise SchemaError(f"field '{name}' must be a number")
    try:
        return BranchingMechanism(
            sigma2=float(obj["sigma2"]),
            gamma=float(obj["gamma"]),
            kappa=float(obj["kappa"]),
            levy=levy_from_json(obj["levy"]),
        )
    except MechanismError as exc:
        raise SchemaError(str(exc)) from exc
