"""Monte Carlo path generation.

Three samplers share one stepping scheme:

* CSBP paths: per step of length h the (sigma^2, gamma) part advances by its
  exact Poisson-mixed-Gamma transition, jumps of size >= delta arrive as a
  compound Poisson with the rate frozen at the step's starting mass, jumps
  below delta fold into drift (plus an optional diffusion correction), and
  killing fires with probability 1 - exp(-kappa x h).
* Two-type paths: the continuous mass follows the Esscher-transformed
  mechanism with killing at the base rate; skeleton events run as superposed
  Poisson channels per step (death, binary diffusion atom, k-grafts with
  mass, mass-only grafts, and a heavy k-tail channel where the offspring law
  has a polynomial tail). Below the largest root the mass begets skeleton
  births at rate -psi(lam) X_t, realized by midpoint-mass thinning.
* The autonomous skeleton alone: exact event-driven Galton-Watson dynamics.

Replicates use counter-based Philox streams derived from (seed, index), so
serial and thread-parallel runs aggregate identically.
"""

from __future__ import annotations

import hashlib
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np
from scipy import special

from .errors import MechanismError, SimulationError
from .joint import JointMechanism, Regime, offspring_distribution
from .mechanism import Atoms, BranchingMechanism, StablePowerLaw, _PowerBase

ALIVE, EXTINCT, EXPLODED = 0, 1, 2
_STATUS_NAMES = {ALIVE: "alive_at_T", EXTINCT: "extinct", EXPLODED: "exploded"}

_BIG_DRAW = 1e12  # beyond this, Poisson/Gamma draws switch to matched Gaussians
_CH_DEATH, _CH_ATOM, _CH_GRAFT0, _CH_GRAFTK, _CH_TAIL = 0, 1, 2, 3, 4


def make_stream(seed: int, index: int = 0, sub: int = 0) -> np.random.Generator:
    """Counter-based stream keyed by (seed, index, sub); cheap and non-overlapping."""
    key = np.array(
        [
            np.uint64(seed & 0xFFFFFFFFFFFFFFFF),
            np.uint64(((sub & 0xFFFFFFFF) << np.uint64(32)) | np.uint64(index & 0xFFFFFFFF)),
        ]
    )
    return np.random.Generator(np.random.Philox(key=key))


def poisson_kernel(x, ell, lam: float):
    """P(Poisson(lam x) = ell), evaluated in log space."""
    x_arr = np.asarray(x, dtype=float)
    ell_arr = np.asarray(ell)
    with np.errstate(divide="ignore", invalid="ignore"):
        logp = -lam * x_arr + ell_arr * np.log(lam * x_arr) - special.gammaln(ell_arr + 1.0)
        out = np.where(x_arr > 0, np.exp(logp), np.where(ell_arr == 0, 1.0, 0.0))
    return float(out) if np.ndim(x) == 0 and np.ndim(ell) == 0 else out


def sample_poisson(mean, stream: np.random.Generator):
    """Exact Poisson variates (inversion for small means, transformed rejection for large)."""
    mean_arr = np.asarray(mean, dtype=float)
    if np.any(mean_arr < 0):
        raise SimulationError("Poisson mean must be nonnegative")
    out = _poisson(stream, mean_arr)
    return int(out) if np.ndim(mean) == 0 else out


def _poisson(rng, lam):
    lam = np.asarray(lam, dtype=float)
    big = lam > _BIG_DRAW
    if not np.any(big):
        return rng.poisson(lam)
    out = np.empty(lam.shape, dtype=np.int64)
    out[~big] = rng.poisson(lam[~big])
    lam_b = np.minimum(lam[big], 4.0e18)
    z = rng.standard_normal(int(big.sum()))
    out[big] = np.clip(np.rint(lam_b + np.sqrt(lam_b) * z), 0, 8.0e18).astype(np.int64)
    return out


def _gamma(rng, shape):
    shape = np.asarray(shape, dtype=float)
    big = shape > _BIG_DRAW
    if not np.any(big):
        return rng.standard_gamma(shape)
    out = np.empty(shape.shape)
    out[~big] = rng.standard_gamma(shape[~big])
    z = rng.standard_normal(int(big.sum()))
    out[big] = np.maximum(shape[big] + np.sqrt(shape[big]) * z, 0.0)
    return out


@dataclass(frozen=True)
class SimConfig:
    """Stepping, cutoff, cap and replication knobs for the samplers."""

    h: float = 1e-3
    delta: float = 1e-4
    x_max: float = 1e12
    l_max: int = 10**9
    n_paths: int = 1
    seed: int = 0
    batch_size: int = 16384
    threads: int = 1
    diffusion_correction: bool = True
    offspring_tail_tol: float = 1e-8
    aggregate_events: int = 64  # per-step event count before switching to channel aggregation

    def __post_init__(self):
        if self.h <= 0 or self.delta <= 0:
            raise MechanismError("h and delta must be positive")
        if self.x_max <= 0 or self.l_max <= 0:
            raise MechanismError("caps must exceed initial values")

    def config_hash(self) -> str:
        payload = json.dumps(asdict(self), sort_keys=True)
        return hashlib.sha256(payload.encode()).hexdigest()[:16]


@dataclass
class TwoTypePath:
    """Time-stamped trajectory of (X_t, L_t) with its event log."""

    events: list  # (t, x, ell, tag)
    status: str
    status_time: Optional[float]
    seed: int
    config: SimConfig

    def final_state(self):
        t, x, ell, _ = self.events[-1]
        return t, x, ell

    def to_csv(self, path, provenance: Optional[str] = None):
        with open(path, "w") as fh:
            if provenance:
                fh.write(f"# {provenance}\n")
            fh.write("t,x,ell,event_tag\n")
            for t, x, ell, tag in self.events:
                fh.write(f"{t!r},{x!r},{ell},{tag}\n")


# ---------------------------------------------------------------------------
# Mass stepping (shared by the CSBP sampler and the two-type mass coordinate)
# ---------------------------------------------------------------------------


class _MassKernel:
    """Operator-splitting step for one CSBP mechanism plus external killing."""

    def __init__(self, m: BranchingMechanism, kill_rate: float, cfg: SimConfig):
        self.m = m
        self.kill = kill_rate
        self.cfg = cfg
        levy = m.levy
        if isinstance(levy, StablePowerLaw):
            self._conv = "none" if levy.alpha < 1.0 else "full"
        else:
            self._conv = "unit" if m.compensation.value == "unit_truncation" else "full"
        self._delta = cfg.delta
        self.sig_eff2, self.gam_eff, self.jump_intensity = self._decompose(cfg.delta)
        # the adaptive cutoff only matters for unbounded power-law activity
        self._adaptive = isinstance(levy, _PowerBase)
        self._count_budget = 6.0  # expected jump draws per path-step before raising the cutoff
        self._level_cache = {}
        # full linear growth rate of the mean; drives the second-order step
        # corrections (jump placement + intensified counts) that cancel the
        # compensator commutator bias of plain splitting
        gam_true = -m.psi_prime_at_zero()
        self._gam_true = gam_true if math.isfinite(gam_true) else None

    def _decompose(self, delta):
        m, levy = self.m, self.m.levy
        if self._conv == "none":
            gam_eff = m.gamma + levy.moment1(0.0, delta)
        elif self._conv == "unit":
            gam_eff = m.gamma - levy.moment1(min(delta, 1.0), 1.0) + levy.moment1(1.0, max(delta, 1.0))
        else:
            gam_eff = m.gamma - levy.moment1(delta, math.inf)
        sig_eff2 = m.sigma2
        if self.cfg.diffusion_correction:
            sig_eff2 = sig_eff2 + levy.moment2_below(delta)
        return sig_eff2, gam_eff, levy.tail_mass(delta)

    @staticmethod
    def _feller_params(d, gam_eff, sig_eff2):
        if gam_eff == 0.0:
            return 1.0, sig_eff2 * d / 2.0
        egd = math.exp(min(gam_eff * d, 700.0))  # saturated growth just forces a cap crossing
        return egd, sig_eff2 * (egd - 1.0) / (2.0 * gam_eff)

    def advance(self, x, a_immig, d, rng):
        """One sub-step of length d for every path in x; returns (x_new, killed)."""
        x = np.asarray(x, dtype=float)
        a_immig = np.broadcast_to(np.asarray(a_immig, dtype=float), x.shape)
        killed = np.zeros(x.shape, dtype=bool)
        if self.kill > 0.0:
            killed = rng.random(x.shape) < -np.expm1(-self.kill * x * d)
        x_new = np.empty_like(x)
        heavy = np.zeros(x.shape, dtype=bool)
        if self._adaptive and self.jump_intensity > 0.0:
            heavy = x * self.jump_intensity * d > self._count_budget
        idx = np.nonzero(~heavy)[0]
        if idx.size:
            x_new[idx] = self._advance_block(
                x[idx], a_immig[idx], d, rng, self.sig_eff2, self.gam_eff, self.jump_intensity, self._delta
            )
        if np.any(heavy):
            # raise the cutoff just enough to keep expected draw counts at budget,
            # quantized in powers of four so paths share vectorized blocks
            hi = np.nonzero(heavy)[0]
            levy = self.m.levy
            want = (levy.C * (x[hi] * d) / (levy.alpha * self._count_budget)) ** (1.0 / levy.alpha)
            deep = want > 0.05 * x[hi]
            shallow = hi[~deep]
            want_s = want[~deep]
            levels = np.ceil(np.log(np.maximum(want_s / self._delta, 1.0)) / math.log(4.0)).astype(int)
            for lvl in np.unique(levels):
                delta_x = self._delta * 4.0**int(lvl)
                params = self._level_cache.get(lvl)
                if params is None:
                    params = self._decompose(delta_x)
                    self._level_cache[lvl] = params
                sig2, gam, lam_j = params
                sel = shallow[levels == lvl]
                x_new[sel] = self._advance_block(x[sel], a_immig[sel], d, rng, sig2, gam, lam_j, delta_x)
            for i, delta_x in zip(hi[deep], want[deep]):
                # terminal blowup: a cutoff at the mass scale would fold giant
                # jumps into diffusion; advance by the mean drift instead
                gam = self.m.gamma + self.m.levy.moment1(0.0, delta_x) if self._conv == "none" else self._decompose(delta_x)[1]
                growth = math.exp(min(gam * d, 700.0))
                lam_j = self.m.levy.tail_mass(delta_x)
                n_j = int(_poisson(rng, np.array([min(float(x[i]) * lam_j * d, 1e6)]))[0])
                add = float(self.m.levy.sample_tail(delta_x, n_j, rng).sum()) if n_j else 0.0
                x_new[i] = float(x[i]) * growth + float(a_immig[i]) * d + add
        x_new[killed] = math.inf
        return x_new, killed

    def _advance_block(self, x, a, d, rng, sig_eff2, gam_eff, jump_intensity, delta):
        if sig_eff2 > 0.0:
            _, big_b = self._feller_params(d, gam_eff, sig_eff2)
            if gam_eff == 0.0:
                ratio = 2.0 / (sig_eff2 * d)
            else:  # A/B without overflow: 2 gamma / (sigma^2 (1 - e^{-gamma d}))
                ratio = -2.0 * gam_eff / (sig_eff2 * math.expm1(min(-gam_eff * d, 700.0)))
            shape = _poisson(rng, x * ratio).astype(float) + 2.0 * a / sig_eff2
            g = _gamma(rng, shape)
            out = np.where(g > 0.0, g * big_b, 0.0)
        else:
            if gam_eff == 0.0:
                out = x + a * d
            else:
                egd = math.exp(min(gam_eff * d, 700.0))
                out = x * egd + a * (egd - 1.0) / gam_eff
        if jump_intensity > 0.0:
            lam_jump = x * jump_intensity * d
            if self._gam_true is not None:
                lam_jump = lam_jump * math.exp(min(0.5 * self._gam_true * d, 700.0))
            counts = _poisson(rng, lam_jump)
            total = int(counts.sum())
            if total > 0:
                if total > 20_000_000:
                    raise SimulationError("jump draw budget exceeded; raise the cutoff")
                sizes = self.m.levy.sample_tail(delta, total, rng)
                if self._gam_true is not None and gam_eff != 0.0:
                    # each jump keeps growing at the deterministic rate for the
                    # rest of the step; together with the intensified count this
                    # cancels the splitting bias to second order
                    sizes = sizes * np.exp(
                        np.minimum(gam_eff * (d - rng.random(total) * d), 700.0)
                    )
                owners = np.repeat(np.arange(len(x)), counts)
                out = out + np.bincount(owners, weights=sizes, minlength=len(x))
        return out


# ---------------------------------------------------------------------------
# CSBP paths
# ---------------------------------------------------------------------------


def csbp_final_batch(m: BranchingMechanism, x0: float, horizon: float, cfg: SimConfig, stream, n: int):
    """Vectorized terminal states of n CSBP(psi) paths; returns (x, status)."""
    kern = _MassKernel(m, m.kappa, cfg)
    x = np.full(n, float(x0))
    status = np.full(n, ALIVE, dtype=np.int8)
    if x0 == 0.0:
        return x, np.full(n, EXTINCT, dtype=np.int8)
    t = 0.0
    while t < horizon - 1e-15:
        d = min(cfg.h, horizon - t)
        live = status == ALIVE
        if not np.any(live):
            break
        xi, killed = kern.advance(x[live], 0.0, d, stream)
        x[live] = xi
        li = np.nonzero(live)[0]
        status[li[killed]] = EXPLODED
        status[li[xi >= cfg.x_max]] = EXPLODED
        status[li[xi == 0.0]] = EXTINCT
        t += d
    return x, status


def sample_csbp_path(m: BranchingMechanism, x0: float, horizon: float, cfg: SimConfig, stream) -> TwoTypePath:
    """Single CSBP path with a step-resolution event log (skeleton identically 0)."""
    events = [(0.0, float(x0), 0, "init")]
    x = float(x0)
    status, status_t = ALIVE, None
    kern = _MassKernel(m, m.kappa, cfg)
    t = 0.0
    if x0 == 0.0:
        return TwoTypePath(events, _STATUS_NAMES[EXTINCT], 0.0, cfg.seed, cfg)
    while t < horizon - 1e-15 and status == ALIVE:
        d = min(cfg.h, horizon - t)
        x_new, killed = kern.advance(np.array([x]), 0.0, d, stream)
        t += d
        if killed[0]:
            status, status_t = EXPLODED, t
            events.append((t, math.inf, 0, "killed"))
            break
        x = float(x_new[0])
        events.append((t, x, 0, "diffusion_step"))
        if x >= cfg.x_max:
            status, status_t = EXPLODED, t
            events.append((t, x, 0, "explosion"))
        elif x == 0.0:
            status, status_t = EXTINCT, t
    return TwoTypePath(events, _STATUS_NAMES[status], status_t, cfg.seed, cfg)


# ---------------------------------------------------------------------------
# Two-type paths
# ---------------------------------------------------------------------------


class _SkeletonChannels:
    """Superposed per-individual event channels of the discrete coordinate."""

    K_CAP = 8192

    def __init__(self, j: JointMechanism, cfg: SimConfig):
        self.j = j
        self.delta0 = cfg.delta
        lam, base = j.lam, j.base
        levy = base.levy
        self.death_rate = j.psi_at_lam / lam if j.regime is Regime.AT_OR_ABOVE else 0.0
        self.atom_rate = 0.5 * base.sigma2 * lam
        self.birth_coef = -j.psi_at_lam if j.regime is Regime.BELOW else 0.0
        self.graft0_rate = levy.slice0_tail_mass(lam, cfg.delta)
        self.immig_coef = base.sigma2 + levy.slice0_mean_below(lam, cfg.delta)

        ks = np.arange(1, self.K_CAP + 1)
        masses = np.nan_to_num(levy.slice_masses(lam, ks), posinf=0.0)
        keep = masses > 0.0
        self.graft_k = ks[keep].astype(np.int64)
        graft_rates = masses[keep]
        self.tail_rate = float(levy.slice_total(lam, self.K_CAP + 1))
        self.tail_index = levy.alpha if isinstance(levy, _PowerBase) else None
        if self.tail_rate > 1e-9 * max(1.0, masses.sum()) and self.tail_index is None:
            raise SimulationError("graft offspring tail not summable within the channel table")

        kinds = [_CH_DEATH, _CH_ATOM, _CH_GRAFT0]
        rates = [self.death_rate, self.atom_rate, self.graft0_rate]
        kvals = [0, 1, 0]
        kinds.extend([_CH_GRAFTK] * len(self.graft_k))
        rates.extend(graft_rates.tolist())
        kvals.extend(self.graft_k.tolist())
        self._has_tail = self.tail_rate > 0.0 and self.tail_index is not None
        if self._has_tail:
            kinds.append(_CH_TAIL)
            rates.append(self.tail_rate)
            kvals.append(0)
        self.ch_kind = np.asarray(kinds, dtype=np.int8)
        self.ch_rate = np.asarray(rates, dtype=float)
        self.ch_k = np.asarray(kvals, dtype=np.int64)
        self.total_rate = float(self.ch_rate.sum())
        self.cdf = np.cumsum(self.ch_rate) / self.total_rate if self.total_rate > 0 else np.ones(1)

        if j.regime is Regime.AT_OR_ABOVE and self.total_rate > 0:
            branch = self.total_rate - self.graft0_rate
            if abs(branch - j.psi_prime_at_lam) > 1e-7 * max(1.0, abs(j.psi_prime_at_lam)):
                raise SimulationError(
                    f"skeleton branch rate {branch} does not reconcile with psi'(lam) = {j.psi_prime_at_lam}"
                )

        # per-channel mass moments for the aggregated branch
        self._moments = self._slice_moment_table(levy, lam)

    def _slice_moment_table(self, levy, lam):
        ks = self.graft_k
        if isinstance(levy, _PowerBase):
            s = lam + levy.theta
            shape = ks + 1.0 - levy.alpha
            mean = shape / s
            var = shape / s**2
            m0_mass = levy.slice0_tail_mass(lam, self.delta0)
            if m0_mass > 0:
                from .mechanism import _power_exp_moment

                m1 = levy.C * _power_exp_moment(2.0 - levy.alpha, s, self.delta0, math.inf)
                m2 = levy.C * _power_exp_moment(3.0 - levy.alpha, s, self.delta0, math.inf)
                mean0, var0 = m1 / m0_mass, max(m2 / m0_mass - (m1 / m0_mass) ** 2, 0.0)
            else:
                mean0, var0 = 0.0, 0.0
            return mean, var, mean0, var0
        if isinstance(levy, Atoms):
            w = levy._slice_weights(lam, ks)
            mass = w.sum(axis=1)
            mean = np.where(mass > 0, (w * levy.y).sum(axis=1) / np.maximum(mass, 1e-300), 0.0)
            second = np.where(mass > 0, (w * levy.y**2).sum(axis=1) / np.maximum(mass, 1e-300), 0.0)
            w0 = levy.w * levy.y * np.exp(-lam * levy.y) * (levy.y >= self.delta0)
            m0 = w0.sum()
            mean0 = (w0 * levy.y).sum() / m0 if m0 > 0 else 0.0
            second0 = (w0 * levy.y**2).sum() / m0 if m0 > 0 else 0.0
            return mean, np.maximum(second - mean**2, 0.0), mean0, max(second0 - mean0**2, 0.0)
        return None

    def draw_tail_k(self, n, rng, l_cap):
        # the k-tail decays like k^(-1-alpha); a discrete Pareto draw is exact to O(1/K_CAP)
        u = rng.random(n)
        ks = np.floor(self.K_CAP * u ** (-1.0 / self.tail_index)).astype(np.int64) + 1
        return np.minimum(ks, l_cap)

    def eventwise(self, owners, n_paths, rng, l_cap):
        """Decode one channel draw per event; returns (d_ell, graft_mass) per path."""
        total = len(owners)
        d_ell = np.zeros(n_paths)
        g_mass = np.zeros(n_paths)
        ci = np.searchsorted(self.cdf, rng.random(total), side="right")
        ci = np.minimum(ci, len(self.cdf) - 1)
        kind = self.ch_kind[ci]
        kval = self.ch_k[ci].copy()
        tail = kind == _CH_TAIL
        if np.any(tail):
            kval[tail] = self.draw_tail_k(int(tail.sum()), rng, l_cap)
        incr = np.where(kind == _CH_DEATH, -1, 0)
        incr = np.where(kind == _CH_ATOM, 1, incr)
        incr = np.where((kind == _CH_GRAFTK) | (kind == _CH_TAIL), kval, incr)
        np.add.at(d_ell, owners, incr)
        has_mass = (kind == _CH_GRAFT0) | (kind == _CH_GRAFTK) | (kind == _CH_TAIL)
        mi = np.nonzero(has_mass)[0]
        if mi.size:
            mk = np.where(kind[mi] == _CH_GRAFT0, 0, kval[mi])
            for k in np.unique(mk):
                sel = mi[mk == k]
                ys = self.j.base.levy.slice_sample(
                    self.j.lam, int(k), len(sel), rng, delta=self.delta0 if k == 0 else 0.0
                )
                np.add.at(g_mass, owners[sel], ys)
        return d_ell, g_mass

    def aggregated(self, ell, d, rng, l_cap):
        """Per-channel Poisson counts for one high-intensity path; returns (d_ell, mass).

        Graft masses are matched in mean and variance (a single Gaussian per
        step across all k-channels); heavy-tail offspring are drawn exactly.
        """
        if self._moments is None:
            raise SimulationError("aggregation needs closed slice moments (atoms or power families)")
        mean_k, var_k, mean0, var0 = self._moments
        counts = _poisson(rng, ell * d * self.ch_rate).astype(float)
        d_ell = counts[1] - counts[0]  # atom births minus deaths
        mass = 0.0
        n0 = counts[2]
        if n0 > 0:
            if n0 <= 64:
                mass += float(self.j.base.levy.slice_sample(self.j.lam, 0, int(n0), rng, delta=self.delta0).sum())
            else:
                mass += n0 * mean0 + math.sqrt(n0 * var0) * rng.standard_normal()
        nk = counts[3 : 3 + len(self.graft_k)]
        tot = nk.sum()
        if tot > 0:
            d_ell += float(self.graft_k @ nk)
            m = float(nk @ mean_k)
            v = float(nk @ var_k)
            mass += m + math.sqrt(v) * rng.standard_normal()
        if self._has_tail:
            n_t = int(counts[-1])
            if n_t > 0:
                kv = self.draw_tail_k(n_t, rng, l_cap)
                d_ell += float(kv.sum())
                levy = self.j.base.levy
                shapes = kv.astype(float) + 1.0 - levy.alpha
                mass += float((rng.standard_gamma(shapes) / (self.j.lam + levy.theta)).sum())
        return min(d_ell, 4.0e18), mass


def _poisson_init(lam, x0, n, rng):
    return _poisson(rng, np.full(n, lam * x0)).astype(np.int64)


@dataclass
class TwoTypeBatchResult:
    x: np.ndarray
    ell: np.ndarray
    status: np.ndarray
    t_x_cap: np.ndarray
    t_l_cap: np.ndarray

    def laplace(self, q: float, r: float):
        """E[e^{-qX} r^L], exploded paths contributing 0; returns (mean, stderr, values)."""
        with np.errstate(over="ignore"):
            vals = np.where(
                self.status == EXPLODED,
                0.0,
                np.exp(-q * np.minimum(self.x, 1e300)) * np.power(float(r), self.ell.astype(float)),
            )
        n = len(vals)
        return float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(n)), vals


def two_type_batch(
    j: JointMechanism,
    x0: float,
    init,
    horizon: float,
    cfg: SimConfig,
    stream,
    n: int,
    track_both_caps: bool = False,
) -> TwoTypeBatchResult:
    """Vectorized two-type paths; `init` is an integer count or "poisson"."""
    chan = _SkeletonChannels(j, cfg)
    kern = _MassKernel(j.esscher_mech, j.base.kappa, cfg)
    x = np.full(n, float(x0))
    if isinstance(init, str) and init == "poisson":
        ell = _poisson_init(j.lam, x0, n, stream)
    else:
        ell = np.full(n, int(init), dtype=np.int64)
    status = np.full(n, ALIVE, dtype=np.int8)
    status[(x == 0.0) & (ell == 0)] = EXTINCT
    t_x_cap = np.full(n, np.nan)
    t_l_cap = np.full(n, np.nan)
    frozen_x = np.zeros(n, dtype=bool)

    slack = 50 * cfg.h if track_both_caps else 0.0
    t = 0.0
    while t < horizon + slack - 1e-15:
        d = min(cfg.h, horizon + slack - t)
        within = t < horizon - 1e-15
        live = (status == ALIVE) & within
        if track_both_caps:
            # a capped coordinate freezes, but the other keeps its full
            # dynamics (with rates saturated at the cap level) until it
            # crosses too; only then does the path stop
            waiting = (status == EXPLODED) & (np.isnan(t_x_cap) | np.isnan(t_l_cap))
            active = live | waiting
        else:
            active = live
        if not np.any(active):
            break
        idx = np.nonzero(active)[0]
        x_a = x[idx]
        ell_a = ell[idx]
        fx = frozen_x[idx]

        # skeleton events (rates frozen at the step start)
        exp_events = ell_a.astype(float) * chan.total_rate * d
        counts = _poisson(stream, exp_events)
        d_ell = np.zeros(len(idx))
        g_mass = np.zeros(len(idx))
        small = (counts > 0) & (counts <= cfg.aggregate_events)
        if np.any(small):
            si = np.nonzero(small)[0]
            owners = np.repeat(si, counts[small])
            de, gm = chan.eventwise(owners, len(idx), stream, cfg.l_max)
            d_ell += de
            g_mass += gm
        for i in np.nonzero(counts > cfg.aggregate_events)[0]:
            de, gm = chan.aggregated(float(ell_a[i]), d, stream, cfg.l_max)
            d_ell[i] += de
            g_mass[i] += gm

        # mass sub-step with per-individual immigration, then graft additions
        a_immig = np.where(fx, 0.0, chan.immig_coef * ell_a)
        x_stepped = x_a.copy()
        move = ~fx
        if np.any(move):
            x_new_m, killed = kern.advance(x_a[move], a_immig[move], d, stream)
            x_stepped[move] = x_new_m + g_mass[move]
            killed_idx = idx[move][killed]
            if killed_idx.size:
                status[killed_idx] = EXPLODED
                t_x_cap[killed_idx] = np.where(np.isnan(t_x_cap[killed_idx]), t + d, t_x_cap[killed_idx])
                t_l_cap[killed_idx] = np.where(np.isnan(t_l_cap[killed_idx]), t + d, t_l_cap[killed_idx])
                frozen_x[killed_idx] = True

        # mass-driven births below the largest root (midpoint-mass thinning);
        # past the mass cap the rate saturates at the cap level
        births = np.zeros(len(idx), dtype=np.int64)
        if chan.birth_coef > 0.0:
            mid = np.minimum(0.5 * (np.minimum(x_a, cfg.x_max) + np.minimum(x_stepped, cfg.x_max)), cfg.x_max)
            births = _poisson(stream, chan.birth_coef * mid * d)

        # float intermediate with a ceiling keeps extreme cascades clear of
        # int64 overflow; values below 2^53 stay exact
        ell_new = np.minimum(
            np.maximum(ell_a.astype(float) + d_ell.astype(float) + births.astype(float), 0.0), 1e18
        ).astype(np.int64)
        x_new = np.where(fx, x_a, x_stepped)
        x[idx] = x_new
        ell[idx] = ell_new
        t += d

        hit_x = idx[(x_new >= cfg.x_max) & ~fx]
        hit_l = idx[ell_new >= cfg.l_max]
        if hit_x.size:
            t_x_cap[hit_x] = np.where(np.isnan(t_x_cap[hit_x]), t, t_x_cap[hit_x])
            status[hit_x] = EXPLODED
            frozen_x[hit_x] = True
        if hit_l.size:
            t_l_cap[hit_l] = np.where(np.isnan(t_l_cap[hit_l]), t, t_l_cap[hit_l])
            status[hit_l] = EXPLODED
        ext = idx[(x_new == 0.0) & (ell_new == 0) & (status[idx] == ALIVE)]
        status[ext] = EXTINCT

    return TwoTypeBatchResult(x=x, ell=ell, status=status, t_x_cap=t_x_cap, t_l_cap=t_l_cap)


def sample_two_type_path(
    j: JointMechanism, x0: float, ell0, horizon: float, cfg: SimConfig, stream
) -> TwoTypePath:
    """Single two-type path with an event log.

    Skeleton events inside a step are placed at sorted uniform times with the
    discrete state updated event by event, so the log satisfies the counting
    identity ell_t = ell_0 + sum(branch k) - deaths + births exactly.
    """
    chan = _SkeletonChannels(j, cfg)
    kern = _MassKernel(j.esscher_mech, j.base.kappa, cfg)
    if isinstance(ell0, str) and ell0 == "poisson":
        ell = int(_poisson(stream, np.array([j.lam * x0]))[0])
    else:
        ell = int(ell0)
    x = float(x0)
    t = 0.0
    events = [(0.0, x, ell, "init")]
    status, status_t = ALIVE, None
    if x == 0.0 and ell == 0:
        return TwoTypePath(events, _STATUS_NAMES[EXTINCT], 0.0, cfg.seed, cfg)

    while t < horizon - 1e-15 and status == ALIVE:
        d = min(cfg.h, horizon - t)
        n_ev = int(_poisson(stream, np.array([ell * chan.total_rate * d]))[0]) if ell > 0 else 0
        times = np.sort(stream.random(n_ev)) * d if n_ev else np.zeros(0)

        xn, kflag = kern.advance(np.array([x]), chan.immig_coef * ell, d, stream)
        if bool(kflag[0]):
            status, status_t = EXPLODED, t + d
            events.append((t + d, math.inf, ell, "killed"))
            break
        x_new = float(xn[0])

        graft_add = 0.0
        for ti in times:
            ci = int(np.searchsorted(chan.cdf, stream.random(), side="right"))
            ci = min(ci, len(chan.cdf) - 1)
            kind = int(chan.ch_kind[ci])
            if kind == _CH_DEATH:
                if ell > 0:
                    ell -= 1
                    events.append((t + ti, x, ell, "skeleton_death"))
            elif kind == _CH_ATOM:
                ell += 1
                events.append((t + ti, x, ell, "skeleton_branch(1)"))
            elif kind == _CH_GRAFT0:
                y = float(j.base.levy.slice_sample(j.lam, 0, 1, stream, delta=cfg.delta)[0])
                graft_add += y
                events.append((t + ti, x, ell, "graft(0)"))
            else:
                k = int(chan.ch_k[ci]) if kind == _CH_GRAFTK else int(chan.draw_tail_k(1, stream, cfg.l_max)[0])
                y = float(j.base.levy.slice_sample(j.lam, k, 1, stream)[0])
                graft_add += y
                ell += k
                events.append((t + ti, x, ell, f"skeleton_branch({k})"))
                events.append((t + ti, x, ell, f"graft({k})"))
        x_new += graft_add

        if chan.birth_coef > 0.0:
            mid = 0.5 * (x + x_new)
            n_b = int(_poisson(stream, np.array([chan.birth_coef * mid * d]))[0])
            for ti in np.sort(stream.random(n_b)) * d:
                ell += 1
                events.append((t + ti, x, ell, "mass_birth"))

        t += d
        x = x_new
        events.append((t, x, ell, "diffusion_step"))
        if x >= cfg.x_max or ell >= cfg.l_max:
            status, status_t = EXPLODED, t
            events.append((t, x, ell, "explosion"))
        elif x == 0.0 and ell == 0:
            status, status_t = EXTINCT, t

    return TwoTypePath(events, _STATUS_NAMES[status], status_t, cfg.seed, cfg)


# ---------------------------------------------------------------------------
# Autonomous skeleton (exact continuous-time Galton-Watson)
# ---------------------------------------------------------------------------


def sample_skeleton_gw(j: JointMechanism, ell0: int, horizon: float, cfg: SimConfig, stream):
    """Exact event-driven skeleton path; returns the list of (t, ell)."""
    if j.regime is not Regime.AT_OR_ABOVE:
        raise MechanismError("the skeleton is autonomous only at or above the largest root")
    law = offspring_distribution(j, cfg.offspring_tail_tol)
    ks, cdf = law.sampler()
    ell = int(ell0)
    t = 0.0
    path = [(0.0, ell)]
    while ell > 0 and ell < cfg.l_max:
        rate = ell * law.total_rate
        t += stream.exponential(1.0 / rate)
        if t >= horizon:
            break
        k = int(ks[np.searchsorted(cdf, stream.random(), side="right")])
        ell += k
        path.append((t, ell))
    return path


def skeleton_gw_final_batch(j: JointMechanism, ell0, horizon: float, cfg: SimConfig, stream, n: int):
    """Vectorized terminal skeleton counts; returns (ell, capped)."""
    law = offspring_distribution(j, cfg.offspring_tail_tol)
    ks, cdf = law.sampler()
    if np.ndim(ell0):
        ell = np.asarray(ell0, dtype=np.int64).copy()
    else:
        ell = np.full(n, int(ell0), dtype=np.int64)
    t = np.zeros(n)
    capped = np.zeros(n, dtype=bool)
    active = ell > 0
    while np.any(active):
        ia = np.nonzero(active)[0]
        rate = ell[ia] * law.total_rate
        t[ia] += stream.exponential(1.0, size=len(ia)) / rate
        fire = t[ia] < horizon
        fi = ia[fire]
        if fi.size:
            k = ks[np.searchsorted(cdf, stream.random(len(fi)), side="right")]
            ell[fi] += k
            capped[fi[ell[fi] >= cfg.l_max]] = True
        active[:] = False
        active[fi] = True
        active &= (ell > 0) & ~capped
    return ell, capped


# ---------------------------------------------------------------------------
# Batched runs with per-batch streams (serial == parallel)
# ---------------------------------------------------------------------------


def run_batches(total: int, cfg: SimConfig, worker):
    """Split `total` replicates into batches with streams keyed by batch index.

    `worker(stream, count, batch_index)` returns a result block; blocks come
    back in batch order whatever the thread count, so aggregation is
    byte-stable under parallelism.
    """
    sizes = []
    left = total
    while left > 0:
        take = min(cfg.batch_size, left)
        sizes.append(take)
        left -= take
    jobs = list(enumerate(sizes))

    def run_one(arg):
        i, sz = arg
        return i, worker(make_stream(cfg.seed, i), sz, i)

    if cfg.threads > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            parts = dict(pool.map(run_one, jobs))
    else:
        parts = dict(map(run_one, jobs))
    return [parts[i] for i in range(len(jobs))]
