"""Total-payment distributions, payment schedules, and dynamic-IR machinery.

``PaymentDistribution`` stores nonnegative payments in regular-decomposition
form: point masses plus a piecewise-constant density over explicit money
cells (a uniform grid in the default constructors).  Tails are therefore
piecewise linear and conditioning / integration below is exact for the stored
object; weighted tail integrals use endpoint-aware quadrature so that
reverse-S kinks at tail values near 0 and 1 cost no accuracy.

``CumulativePaymentFn`` is a deterministic schedule: a flow rate per time
cell plus lump-sum jumps.  ``pushforward_exponential`` maps a schedule to the
distribution of the total payment stopped at a unit-rate exponential time;
``dir_cost_two_ways`` evaluates the perceived remaining cost both through the
generalized inverse of the schedule and through its jump/flow decomposition,
giving downstream tests a two-route equality oracle.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .weighting import WeightingFn

MASS_TOL = 1e-9

_GAUSS8 = np.polynomial.legendre.leggauss(8)
_GAUSS16 = np.polynomial.legendre.leggauss(16)


class ConditioningError(ValueError):
    """Conditioning on an event of zero probability."""


# ---------------------------------------------------------------------------
# weighted integral over linear tail ramps
# ---------------------------------------------------------------------------

def _w_integral_over_ramp(w: WeightingFn, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """Vectorized int_lo^hi w(tau) dtau for tail ranges 0 <= lo <= hi <= 1.

    Cells whose range sits near tau=0 or tau=1 get power-clustered nodes:
    reverse-S curves have fractional-power behaviour at both endpoints and
    plain Gauss loses several digits exactly there.
    """
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    width = hi - lo
    out = np.zeros_like(width)
    live = width > 1e-15
    if not np.any(live):
        return out

    near0 = live & (lo < 4.0 * width)
    near1 = live & ~near0 & ((1.0 - hi) < 4.0 * width)
    plain = live & ~near0 & ~near1

    if np.any(plain):
        x, wt = _GAUSS8
        nodes = lo[plain, None] + width[plain, None] * 0.5 * (x + 1.0)
        vals = w(nodes.ravel()).reshape(nodes.shape)
        out[plain] = width[plain] * 0.5 * (vals @ wt)
    for mask, anchor_low in ((near0, True), (near1, False)):
        if not np.any(mask):
            continue
        z, wt = _GAUSS16
        z01 = 0.5 * (z + 1.0)
        offs = width[mask, None] * z01**4
        nodes = lo[mask, None] + offs if anchor_low else hi[mask, None] - offs
        vals = w(np.clip(nodes, 0.0, 1.0).ravel()).reshape(nodes.shape)
        out[mask] = width[mask] * ((vals * 4.0 * z01**3) @ (0.5 * wt))
    return out


# ---------------------------------------------------------------------------
# PaymentDistribution
# ---------------------------------------------------------------------------

class PaymentDistribution:
    """Distribution of a nonnegative total payment: atoms + cell densities.

    ``breaks`` are sorted money-cell edges and ``dens[i]`` is the constant
    density on ``[breaks[i], breaks[i+1])``; both may be empty for a purely
    atomic distribution.  Atom locations always coincide with cell edges (the
    constructors split cells as needed), so the tail is piecewise linear
    between edges with downward steps exactly at atoms.  Instances are
    immutable after construction.
    """

    __slots__ = ("atom_values", "atom_masses", "breaks", "dens",
                 "_edges", "_tail_at_edge", "_mass_at_edge", "_am_cum", "_cell_suffix")

    def __init__(self, atom_values, atom_masses, breaks=(), dens=()):
        av = np.asarray(atom_values, dtype=float).ravel()
        am = np.asarray(atom_masses, dtype=float).ravel()
        br = np.asarray(breaks, dtype=float).ravel()
        de = np.asarray(dens, dtype=float).ravel()
        if len(av) != len(am):
            raise ValueError("atom values and masses must align")
        if np.any(av < 0) or (len(br) and br[0] < 0):
            raise ValueError("payments must be nonnegative")
        if np.any(am < 0) or np.any(de < 0):
            raise ValueError("masses and densities must be nonnegative")
        if len(br) and (len(de) != len(br) - 1 or np.any(np.diff(br) <= 0)):
            raise ValueError("breaks must be strictly increasing with one density per cell")
        order = np.argsort(av, kind="stable")
        av, am = av[order], am[order]
        cell_mass = de * np.diff(br) if len(br) else np.empty(0)
        total = am.sum() + cell_mass.sum()
        if abs(total - 1.0) > MASS_TOL:
            raise ValueError(f"total mass {total} deviates from 1 beyond {MASS_TOL}")
        self.atom_values = av
        self.atom_masses = am
        self.breaks = br
        self.dens = de

        edges = np.unique(np.concatenate([[0.0], av, br]))
        am_cum = np.concatenate([[0.0], np.cumsum(am)])
        cell_suffix = (np.concatenate([np.cumsum(cell_mass[::-1])[::-1], [0.0]])
                       if len(br) else np.empty(0))
        self._edges = edges
        self._am_cum = am_cum
        self._cell_suffix = cell_suffix
        self._tail_at_edge = self._tail_vec(edges)
        idx_r = np.searchsorted(av, edges, side="right")
        idx_l = np.searchsorted(av, edges, side="left")
        self._mass_at_edge = am_cum[idx_r] - am_cum[idx_l]

    # -- constructors -------------------------------------------------------

    @staticmethod
    def from_atoms(values, masses) -> "PaymentDistribution":
        return PaymentDistribution(values, masses)

    @staticmethod
    def from_segments(atom_values, atom_masses, breaks, dens) -> "PaymentDistribution":
        """Atoms plus per-cell densities on an explicit sorted edge array."""
        av = np.asarray(atom_values, dtype=float)
        br = np.asarray(breaks, dtype=float)
        de = np.asarray(dens, dtype=float)
        if len(br):
            inner = av[(av > br[0]) & (av < br[-1])]
            inner = inner[~np.isin(inner, br)]
            if len(inner):
                newbr = np.unique(np.concatenate([br, inner]))
                idx = np.searchsorted(br, newbr[:-1], side="right") - 1
                de = de[np.clip(idx, 0, len(de) - 1)]
                br = newbr
        return PaymentDistribution(av, atom_masses, br, de)

    @staticmethod
    def from_density_grid(y_max: float, cell_dens, atom_values=(), atom_masses=()) \
            -> "PaymentDistribution":
        """Uniform money grid on [0, y_max] with one density value per cell."""
        de = np.asarray(cell_dens, dtype=float)
        br = np.linspace(0.0, y_max, len(de) + 1)
        return PaymentDistribution.from_segments(atom_values, atom_masses, br, de)

    @staticmethod
    def deterministic(value: float) -> "PaymentDistribution":
        return PaymentDistribution([value], [1.0])

    def __repr__(self):
        return (f"PaymentDistribution({len(self.atom_values)} atoms, "
                f"{len(self.dens)} density cells, max={self.support_max:.6g})")

    # -- basic queries -------------------------------------------------------

    @property
    def support_max(self) -> float:
        hi = self.atom_values[-1] if len(self.atom_values) else 0.0
        if len(self.breaks):
            hi = max(hi, self.breaks[-1])
        return float(hi)

    def _tail_vec(self, y: np.ndarray) -> np.ndarray:
        av, am_cum = self.atom_values, self._am_cum
        out = am_cum[-1] - am_cum[np.searchsorted(av, y, side="right")]
        br, de = self.breaks, self.dens
        if len(br):
            j = np.searchsorted(br, y, side="right") - 1
            inside = (j >= 0) & (j < len(de))
            jj = np.clip(j, 0, len(de) - 1)
            dtail = np.where(y < br[0], self._cell_suffix[0], 0.0)
            part = self._cell_suffix[jj + 1] + de[jj] * (br[jj + 1] - y)
            dtail = np.where(inside, part, dtail)
            out = out + dtail
        return np.maximum(out, 0.0)

    def tail(self, y):
        """P(T > y), right-continuous, vectorized."""
        y = np.asarray(y, dtype=float)
        scalar = y.ndim == 0
        out = self._tail_vec(np.atleast_1d(y))
        return float(out[0]) if scalar else out

    def atom_mass_at(self, y: float) -> float:
        i = np.searchsorted(self._edges, y)
        if i < len(self._edges) and self._edges[i] == y:
            return float(self._mass_at_edge[i])
        return 0.0

    # -- integral operations --------------------------------------------------

    def weighted_tail_integral(self, w: WeightingFn) -> float:
        """int_0^inf w(tail(y)) dy; exact across atom steps, endpoint-aware
        quadrature across density cells."""
        if self.support_max == 0.0:
            return 0.0
        edges = self._edges
        widths = np.diff(edges)
        tau_hi = self._tail_at_edge[:-1]
        tau_lo = self._tail_at_edge[1:] + self._mass_at_edge[1:]
        ramp = np.abs(tau_hi - tau_lo) > 1e-15
        out = float(np.sum(widths[~ramp] * w(tau_hi[~ramp])))
        if np.any(ramp):
            integ = _w_integral_over_ramp(w, tau_lo[ramp], tau_hi[ramp])
            out += float(np.sum(widths[ramp] * integ / (tau_hi[ramp] - tau_lo[ramp])))
        return out

    def expected_value(self) -> float:
        out = float(np.dot(self.atom_values, self.atom_masses))
        if len(self.breaks):
            a, b = self.breaks[:-1], self.breaks[1:]
            out += float(np.sum(self.dens * (b * b - a * a) / 2.0))
        return out

    # -- conditioning -----------------------------------------------------------

    def conditional_remainder(self, s: float) -> "PaymentDistribution":
        """Distribution of T - s given T > s (exact cell slicing)."""
        ts = self.tail(s)
        if ts <= 1e-15:
            raise ConditioningError(f"tail({s}) = 0, nothing to condition on")
        if s == 0.0:
            return self
        keep = self.atom_values > s
        av = self.atom_values[keep] - s
        am = self.atom_masses[keep] / ts
        br, de = self.breaks, self.dens
        if len(br) and br[-1] > s:
            j = np.searchsorted(br, s, side="right") - 1
            if j < 0:
                nbr, nde = br - s, de / ts
            else:
                nbr = np.concatenate([[0.0], br[j + 1:] - s])
                nde = de[j:] / ts
            return PaymentDistribution(av, am, nbr, nde)
        return PaymentDistribution(av, am)


def expected_revenue(d: PaymentDistribution) -> float:
    """Seller's expected revenue: the integral of the tail distribution."""
    return d.expected_value()


def conditional_remainder(d: PaymentDistribution, s: float) -> PaymentDistribution:
    return d.conditional_remainder(s)


# ---------------------------------------------------------------------------
# dynamic-IR check on a distribution
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DirReport:
    """Slack of the remaining-process participation constraint per money level."""

    s_values: np.ndarray
    slacks: np.ndarray
    tolerance: float

    @property
    def min_slack(self) -> float:
        return float(self.slacks.min())

    @property
    def argmin_s(self) -> float:
        return float(self.s_values[int(np.argmin(self.slacks))])

    @property
    def feasible(self) -> bool:
        return self.min_slack >= -self.tolerance


def t_dir_check(d: PaymentDistribution, params, max_points: int = 512,
                tolerance: float = 1e-7) -> DirReport:
    """Participation slack theta - lam * perceived cost of ``T - s | T > s``.

    Checked at s = 0, every atom location, and every money-cell edge with
    positive tail (evenly subsampled down to ``max_points``); the conditional
    tail between support points is dominated by the one at the support point
    below, so these points carry the binding constraints.  Infeasibility is
    reported, never raised.
    """
    cands = d._edges[d._edges < d.support_max]
    cands = cands[d.tail(cands) > 1e-13]
    cands = np.concatenate([[0.0], cands[cands > 0.0]])
    if len(cands) > max_points:
        idx = np.unique(np.linspace(0, len(cands) - 1, max_points).astype(int))
        cands = cands[idx]
    slacks = np.empty(len(cands))
    for i, s in enumerate(cands):
        rem = d.conditional_remainder(float(s))
        slacks[i] = params.theta - params.lam * rem.weighted_tail_integral(params.w_minus)
    return DirReport(s_values=cands, slacks=slacks, tolerance=tolerance)


# ---------------------------------------------------------------------------
# CumulativePaymentFn
# ---------------------------------------------------------------------------

class CumulativePaymentFn:
    """Deterministic schedule: flow rate per uniform time cell plus jumps.

    ``flow[i]`` is the payment rate on ``[i*h, (i+1)*h)`` with
    ``h = t_max / len(flow)``; ``jumps`` is a sorted tuple of (time, amount)
    lump sums.  The implied cumulative payment is nondecreasing and
    left-continuous with T(0) = 0, and stays constant after ``t_max``.
    """

    __slots__ = ("flow", "t_max", "jumps", "_times", "_vb", "_va")

    def __init__(self, flow, t_max: float, jumps=()):
        fl = np.asarray(flow, dtype=float).ravel()
        if np.any(fl < 0):
            raise ValueError("flow must be nonnegative")
        if t_max <= 0 or len(fl) == 0:
            raise ValueError("need t_max > 0 and at least one flow cell")
        js = tuple(sorted((float(t), float(a)) for t, a in jumps))
        for t, a in js:
            if t < 0 or a <= 0:
                raise ValueError("jumps need time >= 0 and amount > 0")
        self.flow = fl
        self.t_max = float(t_max)
        self.jumps = js

        nodes = np.linspace(0.0, self.t_max, len(fl) + 1)
        fcum = np.concatenate([[0.0], np.cumsum(fl) * self.step])
        times = np.unique(np.concatenate(
            [nodes, [t for t, _ in js if t <= self.t_max]]))
        vb = np.interp(times, nodes, fcum)
        va = vb.copy()
        for tj, aj in js:
            vb += aj * (times > tj)
            va += aj * (times >= tj)
        self._times = times
        self._vb = vb
        self._va = va

    @property
    def step(self) -> float:
        return self.t_max / len(self.flow)

    def __repr__(self):
        return (f"CumulativePaymentFn({len(self.flow)} cells, t_max={self.t_max:.6g}, "
                f"{len(self.jumps)} jumps, total={self.total_payment():.6g})")

    def value(self, t):
        """T(t), left-continuous: flow integral plus jumps strictly before t."""
        times, vb, va = self._times, self._vb, self._va
        t = np.asarray(t, dtype=float)
        scalar = t.ndim == 0
        t = np.atleast_1d(t)
        tc = np.minimum(t, self.t_max)
        idx = np.searchsorted(times, tc, side="left")
        idx = np.clip(idx, 0, len(times) - 1)
        exact = times[idx] == tc
        k = np.clip(idx - 1, 0, len(times) - 2)
        dt = times[k + 1] - times[k]
        interp = va[k] + (tc - times[k]) * (vb[k + 1] - va[k]) / dt
        out = np.where(exact, vb[idx], interp)
        out = np.where(t > self.t_max, va[-1], out)
        return float(out[0]) if scalar else out

    def total_payment(self) -> float:
        return float(self._va[-1])

    def graph(self):
        """Breakpoints (t_k, value before k, value after k); T is linear with
        slope equal to the cell's flow rate between consecutive breakpoints."""
        return self._times, self._vb, self._va

    def inverse(self, x):
        """Generalized inverse sup{t : T(t) <= x}, vectorized, plateau-aware."""
        times, vb, va = self._times, self._vb, self._va
        x = np.asarray(x, dtype=float)
        scalar = x.ndim == 0
        x = np.atleast_1d(x)
        k = np.searchsorted(va, x, side="right")
        out = np.full(x.shape, np.inf)
        valid = k < len(times)
        kk = np.clip(k, 1, len(times) - 1)
        prev = kk - 1
        seg_rise = vb[kk] - va[prev]
        linear = valid & (x < vb[kk]) & (x >= va[prev]) & (seg_rise > 0)
        t_lin = times[prev] + (x - va[prev]) * (times[kk] - times[prev]) \
            / np.where(seg_rise > 0, seg_rise, 1.0)
        out = np.where(linear, t_lin, out)
        plateau = valid & ~linear
        out = np.where(plateau, times[np.clip(k, 0, len(times) - 1)], out)
        return float(out[0]) if scalar else out


def pushforward_exponential(schedule: CumulativePaymentFn) -> PaymentDistribution:
    """Distribution of T(tau) for a unit-rate exponential stopping time.

    Rising schedule segments map to density cells with exact cell masses,
    flat segments to atoms, jumps to zero-mass gaps, and the constant region
    after t_max to a final atom of mass e^(-t_max).
    """
    times, vb, va = schedule.graph()
    atoms: list[tuple[float, float]] = []
    brs: list[float] = []
    des: list[float] = []
    for k in range(len(times) - 1):
        t0, t1 = times[k], times[k + 1]
        v0, v1 = va[k], vb[k + 1]
        mass = np.exp(-t0) - np.exp(-t1)
        if v1 > v0 + 1e-15:
            if not brs:
                brs.extend([v0, v1])
            elif abs(brs[-1] - v0) <= 1e-14:
                brs.append(v1)
            else:
                # zero-mass gap (a jump) between density stretches
                des.append(0.0)
                brs.extend([v0, v1])
            des.append(mass / (v1 - v0))
        elif mass > 0:
            atoms.append((v0, mass))
    atoms.append((float(va[-1]), float(np.exp(-times[-1]))))

    merged_v: list[float] = []
    merged_m: list[float] = []
    for v, m in sorted(atoms):
        if merged_v and abs(merged_v[-1] - v) <= 1e-14:
            merged_m[-1] += m
        else:
            merged_v.append(v)
            merged_m.append(m)
    if brs:
        return PaymentDistribution.from_segments(merged_v, merged_m,
                                                 np.asarray(brs), np.asarray(des))
    return PaymentDistribution.from_atoms(merged_v, merged_m)


def _w_exp_integral(w: WeightingFn, a: float, b: float, singular_at_a: bool) -> float:
    """int_a^b w(e^{-u}) du with optional node clustering at u = a."""
    if b <= a:
        return 0.0
    if singular_at_a:
        z, wt = _GAUSS16
        z01 = 0.5 * (z + 1.0)
        u = a + (b - a) * z01**4
        return float((b - a) * np.sum(0.5 * wt * w(np.exp(-u)) * 4.0 * z01**3))
    x, wt = _GAUSS8
    u = a + (b - a) * 0.5 * (x + 1.0)
    return float((b - a) * 0.5 * np.sum(wt * w(np.exp(-u))))


def dir_cost_two_ways(schedule: CumulativePaymentFn, s: float, w: WeightingFn,
                      n_quad: int = 1 << 19) -> tuple[float, float]:
    """Perceived remaining cost at time s computed two independent ways.

    direct:      int_0^inf w(exp(-T^{-1}(y + T(s)) + s)) dy by brute
                 quadrature through the generalized inverse;
    decomposed:  sum of jump terms T_i w(e^{-(t_i - s)}) over t_i >= s plus
                 int_s^inf w(e^{-(t - s)}) f(t) dt over the flow.

    The two agree for every schedule; tests use the pair as an equality oracle.
    """
    if s < 0:
        raise ValueError("s must be nonnegative")
    ts = float(schedule.value(s))
    span = schedule.total_payment() - ts
    if span <= 0:
        direct = 0.0
    else:
        y = np.linspace(0.0, span, n_quad + 1)
        tinv = schedule.inverse(y[:-1] + ts)
        tinv = np.minimum(tinv, s + 700.0)  # exp underflow guard
        integrand = np.empty(n_quad + 1)
        integrand[:-1] = w(np.exp(-(tinv - s)))
        integrand[-1] = 0.0
        direct = float(np.trapezoid(integrand, dx=span / n_quad))
    dec = 0.0
    for tj, aj in schedule.jumps:
        if tj >= s:
            dec += aj * float(w(np.exp(-(tj - s))))
    h = schedule.step
    nodes = np.linspace(0.0, schedule.t_max, len(schedule.flow) + 1)
    for i, f in enumerate(schedule.flow):
        a, b = nodes[i], nodes[i + 1]
        if b <= s or f == 0.0:
            continue
        a = max(a, s)
        dec += f * _w_exp_integral(w, a - s, b - s, singular_at_a=(a - s) < h)
    return direct, dec


def export_tail_csv(d: PaymentDistribution) -> str:
    """Tail curve as CSV text with header ``y,tail``, 10 significant digits."""
    ys = np.unique(np.concatenate([d._edges, [d.support_max]]))
    lines = ["y,tail"]
    for y in ys:
        lines.append(f"{y:.10g},{d.tail(float(y)):.10g}")
    return "\n".join(lines) + "\n"
