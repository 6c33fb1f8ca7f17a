"""Cumulant ODE flows.

The Laplace functionals of the processes are driven by deterministic flows:
the one-dimensional flow du/dt = -psi(u) with u_0 = q, the two-dimensional
flow (u' = -Psi_c(u, f), f' = +Psi_d(u, f)) of the two-type process, and the
one-dimensional skeleton flow f' = phi_lambda(f). All are integrated with an
embedded Dormand-Prince 5(4) pair with dense output; every accepted step is
checked against the admissible region (u > 0, 0 < f < 1 for the joint flow),
with advisory comparison bounds logged and hard failures raised only when the
box is left by more than a tolerance slack. Flows that run into a boundary
(finite-time blowup, or u driven to zero by killing) are truncated and
flagged rather than silently extrapolated.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import FlowGuardError, MechanismError
from .mechanism import BranchingMechanism

logger = logging.getLogger(__name__)

DEFAULT_TOL = 1e-10
U_CAP = 1e140  # below the overflow scale of psi's quadratic part
U_FLOOR = 1e-140

# Dormand-Prince 5(4) tableau with its quartic dense-output matrix
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    np.array([]),
    np.array([1 / 5]),
    np.array([3 / 40, 9 / 40]),
    np.array([44 / 45, -56 / 15, 32 / 9]),
    np.array([19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729]),
    np.array([9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656]),
    np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84]),
]
_B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_E = np.array(
    [71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40]
)
_P = np.array(
    [
        [1, -8048581381 / 2820520608, 8663915743 / 2820520608, -12715105075 / 11282082432],
        [0, 0, 0, 0],
        [0, 131558114200 / 32700410799, -68118460800 / 10900136933, 87487479700 / 32700410799],
        [0, -1754552775 / 470086768, 14199869525 / 1410260304, -10690763975 / 1880347072],
        [0, 127303824393 / 49829197408, -318862633887 / 49829197408, 701980252875 / 199316789632],
        [0, -282668133 / 205662961, 2019193451 / 616988883, -1453857185 / 822651844],
        [0, 40617522 / 29380423, -110615467 / 29380423, 69997945 / 29380423],
    ]
)


@dataclass
class CumulantFlow:
    """Dense-output record of a solved cumulant flow."""

    kind: str  # "one_dim" | "two_dim" | "skeleton"
    initial: tuple
    horizon: float
    t_end: float
    ts: np.ndarray
    ys: np.ndarray
    segments: list  # (t0, h, y0, Q) per accepted step
    rtol: float
    atol: float
    boundary: Optional[str] = None  # "escaped_to_infinity" | "hit_zero" | None
    guard_log: list = field(default_factory=list)

    def __call__(self, t):
        t_arr = np.atleast_1d(np.asarray(t, dtype=float))
        if np.any(t_arr < 0) or np.any(t_arr > self.t_end * (1 + 1e-12) + 1e-300):
            raise ValueError(f"flow solved on [0, {self.t_end}]; asked for {t}")
        out = np.empty((len(t_arr), self.ys.shape[1]))
        starts = np.array([s[0] for s in self.segments])
        idx = np.clip(np.searchsorted(starts, t_arr, side="right") - 1, 0, len(self.segments) - 1)
        for j, (ti, i) in enumerate(zip(t_arr, idx)):
            t0, h, y0, q_mat = self.segments[i]
            theta = min(max((ti - t0) / h, 0.0), 1.0)
            powers = np.array([theta, theta**2, theta**3, theta**4])
            out[j] = y0 + h * q_mat @ powers
        return out[0] if np.ndim(t) == 0 else out

    def u(self, t):
        val = self(t)
        return val[..., 0] if np.ndim(t) else val[0]

    def f(self, t):
        if self.ys.shape[1] < 2:
            raise ValueError("one-dimensional flow has no f component")
        val = self(t)
        return val[..., 1] if np.ndim(t) else val[1]

    @property
    def truncated(self) -> bool:
        return self.t_end < self.horizon

    def to_csv(self, path, grid=None, provenance: Optional[str] = None):
        ts = np.asarray(grid, dtype=float) if grid is not None else self.ts
        vals = self(ts) if grid is not None else self.ys
        vals = np.atleast_2d(vals)
        header = "t,u" if vals.shape[1] == 1 else "t,u,f"
        with open(path, "w") as fh:
            if provenance:
                fh.write(f"# {provenance}\n")
            fh.write(header + "\n")
            for ti, row in zip(ts, vals):
                fh.write(",".join(repr(float(v)) for v in (ti, *row)) + "\n")


def _integrate(
    rhs: Callable[[float, np.ndarray], np.ndarray],
    y0: np.ndarray,
    horizon: float,
    rtol: float,
    atol: float,
    guard: Optional[Callable[[float, np.ndarray], Optional[str]]] = None,
    boundary: Optional[Callable[[np.ndarray], Optional[str]]] = None,
    kind: str = "one_dim",
    initial: tuple = (),
):
    """Adaptive DP54 with quartic dense output and per-step guards.

    Acceptance uses the mixed error norm; for steps longer than unit time the
    controller switches to error-per-unit-step, which keeps near-equilibrium
    integration from stalling on vanishing local error estimates.
    """
    t = 0.0
    y = np.array(y0, dtype=float)
    f0 = rhs(t, y)
    scale0 = atol + rtol * np.abs(y)
    d0 = np.sqrt(np.mean((y / scale0) ** 2))
    d1 = np.sqrt(np.mean((f0 / scale0) ** 2))
    h = min(horizon, 0.01 * d0 / d1 if d1 > 1e-30 else horizon * 1e-3)
    h = max(h, 1e-12 * horizon)

    ts = [0.0]
    ys = [y.copy()]
    segments = []
    guard_log: list = []
    boundary_flag = None
    k = np.empty((7, len(y)))
    k[0] = f0
    min_h = max(1e-14 * horizon, 1e-300)

    while t < horizon:
        h = min(h, horizon - t)
        for i in range(1, 7):
            yi = y + h * (_A[i] @ k[: len(_A[i])])
            k[i] = rhs(t + _C[i] * h, yi)
        y_new = y + h * (_B @ k)
        err_vec = h * (_E @ k)
        scale = atol + rtol * np.maximum(np.abs(y), np.abs(y_new))
        err = np.sqrt(np.mean((err_vec / scale) ** 2))
        tol_budget = max(1.0, h)  # error-per-unit-step beyond unit steps
        if np.all(np.isfinite(y_new)) and err <= tol_budget:
            q_mat = k.T @ _P
            segments.append((t, h, y.copy(), q_mat))
            t += h
            y = y_new
            ts.append(t)
            ys.append(y.copy())
            if guard is not None:
                note = guard(t, y)
                if note:
                    guard_log.append(f"t={t:.6g}: {note}")
            if boundary is not None:
                flag = boundary(y)
                if flag:
                    boundary_flag = flag
                    break
            k[0] = rhs(t, y)  # FSAL does not apply across guards; re-evaluate
            factor = 0.9 * (tol_budget / err) ** 0.2 if err > 0 else 5.0
            h *= min(5.0, max(0.2, factor))
        else:
            if not np.all(np.isfinite(y_new)):
                h *= 0.1
            else:
                h *= min(1.0, max(0.1, 0.9 * (tol_budget / err) ** 0.2))
            if h < min_h:
                if boundary is not None:
                    flag = boundary(y)
                    if flag:
                        boundary_flag = flag
                        break
                raise FlowGuardError(
                    f"step size underflow at t={t:.6g} without boundary classification"
                )

    if guard_log:
        logger.warning("flow guards logged %d advisory notes (first: %s)", len(guard_log), guard_log[0])
    return CumulantFlow(
        kind=kind,
        initial=initial,
        horizon=horizon,
        t_end=t,
        ts=np.array(ts),
        ys=np.array(ys),
        segments=segments,
        rtol=rtol,
        atol=atol,
        boundary=boundary_flag,
        guard_log=guard_log,
    )


def solve_u(m: BranchingMechanism, q: float, horizon: float, tol: float = DEFAULT_TOL) -> CumulantFlow:
    """Solve du/dt = -psi(u), u_0 = q, with dense output on [0, horizon]."""
    if q <= 0 or horizon <= 0:
        raise MechanismError("solve_u needs q > 0 and horizon > 0")

    def rhs(t, y):
        u = min(max(float(y[0]), U_FLOOR), U_CAP)
        return np.array([-m.psi(u)])

    def boundary(y):
        if y[0] >= U_CAP:
            return "escaped_to_infinity"
        if y[0] <= U_FLOOR * 10:
            return "hit_zero"
        return None

    def guard(t, y):
        if y[0] <= 0:
            return f"u={y[0]:.3e} left the positive axis"
        return None

    return _integrate(
        rhs, np.array([q]), horizon, rtol=tol, atol=tol, guard=guard, boundary=boundary,
        kind="one_dim", initial=(q,),
    )


def feller_u_oracle(sigma2: float, gamma: float, q, t):
    """Closed-form flow of psi(u) = sigma2/2 u^2 - gamma u.

    Validated against brute-force fixed-step integration in the test suite
    before anything else relies on it.
    """
    if sigma2 <= 0:
        raise MechanismError("the closed-form oracle needs sigma2 > 0")
    q = np.asarray(q, dtype=float)
    t = np.asarray(t, dtype=float)
    if gamma == 0.0:
        return q / (1.0 + q * sigma2 * t / 2.0)
    return gamma / (sigma2 / 2.0 + (gamma / q - sigma2 / 2.0) * np.exp(-gamma * t))


def u_zero_plus(m: BranchingMechanism, horizon: float, tol: float = DEFAULT_TOL) -> float:
    """Limit u_t(0+) via shrinking initial conditions with Aitken extrapolation.

    Nonzero only for explosive mechanisms; the limit feeds explosion
    probabilities 1 - exp(-x * u_t(0+)).
    """
    eps = [1e-8, 1e-10, 1e-12]
    us = [solve_u(m, e, horizon, tol).u(horizon) for e in eps]
    d1, d2 = us[1] - us[0], us[2] - us[1]
    if abs(d1 - d2) < 1e-14 * max(1.0, abs(us[2])):
        return float(max(us[2], 0.0))
    extr = us[2] - d2 * d2 / (d1 - d2) if abs(d1) > abs(d2) else us[2]
    return float(max(extr, 0.0))


def _advisory_lower_bound(gamma_g: float, c_box: float, q: float, t: float) -> Optional[float]:
    # comparison bound from the box argument; advisory only, never enforced
    if gamma_g == 0.0:
        return None
    denom = gamma_g + (q * c_box / 2.0) * (math.exp(-gamma_g * t) - 1.0)
    if denom <= 0:
        return None
    return q * gamma_g * math.exp(-gamma_g * t) / denom


def solve_joint(joint, q: float, r: float, horizon: float, tol: float = DEFAULT_TOL) -> CumulantFlow:
    """Solve the two-dimensional flow u' = -Psi_c(u,f), f' = +Psi_d(u,f).

    Every accepted step must stay inside (0, inf) x (0, 1); leaving the box by
    more than 10*tol is a hard failure, smaller excursions are clamped and
    logged. The comparison-function lower bound on u is advisory and goes to
    the guard log only.
    """
    if not (q > 0 and 0 < r < 1 and horizon > 0):
        raise MechanismError("solve_joint needs q > 0, r in (0,1), horizon > 0")
    psi_c = joint.psi_c_raw
    psi_d = joint.psi_d_raw
    slack = 10.0 * tol

    # Psi_c(q, r) <= c_box q^2 - gamma_g q, the comparison envelope behind the bound
    base = joint.base
    gamma_g = -(joint.psi_prime_at_lam + base.levy.slice0_tail_mass(joint.lam, 1.0))
    c_box = base.sigma2 / 2.0 + base.levy.slice0_mean_below(joint.lam, 1.0)

    def rhs(t, y):
        u = min(max(float(y[0]), U_FLOOR), U_CAP)
        f = min(max(float(y[1]), 1e-15), 1.0 - 1e-15)
        return np.array([-psi_c(u, f), psi_d(u, f)])

    def guard(t, y):
        u, f = float(y[0]), float(y[1])
        if u <= -slack or f <= -slack or f >= 1.0 + slack:
            raise FlowGuardError(
                f"joint flow left (0,inf)x(0,1) at t={t:.6g}: u={u:.3e}, f={f:.6f}"
            )
        notes = []
        if u <= 0 or f <= 0 or f >= 1.0:
            y[0] = max(u, U_FLOOR)
            y[1] = min(max(f, 1e-16), 1.0 - 1e-16)
            notes.append(f"clamped to the box: u={u:.3e}, f={f:.6f}")
        lb = _advisory_lower_bound(gamma_g, c_box, q, t)
        if lb is not None and u < 0.9 * lb:
            notes.append(f"u={u:.3e} under the advisory comparison bound {lb:.3e}")
        return "; ".join(notes) if notes else None

    def boundary(y):
        if y[0] >= U_CAP:
            return "escaped_to_infinity"
        return None

    return _integrate(
        rhs, np.array([q, r]), horizon, rtol=tol, atol=tol, guard=guard, boundary=boundary,
        kind="two_dim", initial=(q, r),
    )


def solve_skeleton_f(m: BranchingMechanism, lam: float, r: float, horizon: float, tol: float = DEFAULT_TOL) -> CumulantFlow:
    """Generating-function flow of the autonomous skeleton: f' = (psi(lam(1-f)) + kappa)/lam."""
    if not (0 < r < 1 and lam > 0 and horizon > 0):
        raise MechanismError("solve_skeleton_f needs r in (0,1), lam > 0, horizon > 0")

    def rhs(t, y):
        arg = lam * (1.0 - float(y[0]))
        if arg <= 0:
            val = -m.kappa  # psi(0+)
        else:
            val = m.psi(arg)
        return np.array([(val + m.kappa) / lam])

    def guard(t, y):
        f = float(y[0])
        if f <= -10 * tol or f >= 1.0 + 10 * tol:
            raise FlowGuardError(f"skeleton flow left (0,1) at t={t:.6g}: f={f}")
        if f >= 1.0:
            y[0] = 1.0 - 1e-16
            return f"clamped f={f:.12f}"
        return None

    return _integrate(
        rhs, np.array([r]), horizon, rtol=tol, atol=tol, guard=guard,
        kind="skeleton", initial=(lam, r),
    )
