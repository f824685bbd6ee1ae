"""Optimal continuous-time pricing process under the unit-rate exponential
stopping time.

Two Volterra equations drive the construction, both with the convolution
kernel k(u) = w'(e^-u) e^-u = -d/du w(e^-u):

* the multiplier density g0 solving
  ``e^-t - w(e^-t) - int_0^t w(e^{-(t-s)}) g0(s) ds = 0`` on [0, t1],
  with t1 = -log p1 and p1 the interior fixed point of w;
* the binding-participation flow f solving
  ``w(e^{-(t0-t)}) + int_t^{t0} w(e^{-(s-t)}) f(s) ds = 1`` on [0, t0],
  where t0 is the first zero crossing of g0.

For reverse-S curves with diverging endpoint slope, g0 and f blow up like a
fractional power at t=0 and t=t0 respectively (integrably), so the solver
marches the *antiderivatives* G(t) = int_0^t g0 and psi(v) = int_{t0-v}^{t0} f,
which satisfy second-kind equations with the same kernel:

    G(t)  - int_0^t k(t-s) G(s)  ds = e^-t - w(e^-t)
    psi(v)- int_0^v k(v-s) psi(s) ds = 1 - w(e^-v)

Product integration against piecewise-linear unknowns uses exact cell moments
of k (its antiderivative is -w(e^-u)), making the discrete solution satisfy
the original integral equations at every grid node to machine precision.
The optimal schedule charges flow (theta/lam) f on [0, t0], one lump sum of
theta/lam at t0, and nothing after; its revenue is
(theta/lam)(1 + int_0^{t0} g0) = (theta/lam)(e^{-t0} + int_0^{t0} e^-t f dt).
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from ._kernels import conv_lower, volterra_march
from .cpt import CptParams
from .payments import CumulativePaymentFn, PaymentDistribution, pushforward_exponential
from .weighting import DegenerateWeightingError, WeightingFn

_GAUSS12 = np.polynomial.legendre.leggauss(12)
_GAUSS24 = np.polynomial.legendre.leggauss(24)


class SolverConvergenceError(RuntimeError):
    """The marched solution failed its integral-form residual target."""


def fixed_point_p1(w: WeightingFn, tol: float = 1e-12) -> float:
    """Unique interior fixed point of w, found by sign scan plus bisection.

    Reverse-S curves overweight small probabilities, so w(p) - p is positive
    just above 0 and negative just below 1; the root is bracketed by the first
    sign change and the curve stays below the diagonal beyond it.
    """
    if w.is_identity:
        raise DegenerateWeightingError("identity weighting has no isolated fixed point")
    ps = np.linspace(1e-6, 1.0 - 1e-6, 4097)
    vals = w(ps) - ps
    sign_flip = np.nonzero((vals[:-1] > 0) & (vals[1:] <= 0))[0]
    if len(sign_flip) == 0:
        raise DegenerateWeightingError("no interior crossing of w(p) = p found")
    a, b = ps[sign_flip[0]], ps[sign_flip[0] + 1]
    fa = float(w(a) - a)
    while b - a > tol:
        mid = 0.5 * (a + b)
        fm = float(w(mid) - mid)
        if (fa > 0) == (fm > 0):
            a, fa = mid, fm
        else:
            b = mid
    p1 = 0.5 * (a + b)
    probe = np.linspace(p1 + 1e-3, 1.0 - 1e-3, 64)
    if np.any(w(probe) - probe > 1e-12):
        raise DegenerateWeightingError("curve re-crosses the diagonal above the fixed point")
    return p1


# ---------------------------------------------------------------------------
# product-integration tables
# ---------------------------------------------------------------------------

def _cell_w_exp_integrals(w: WeightingFn, h: float, n: int, order: int = 12) -> np.ndarray:
    """Per-cell integrals of w(e^-u) over [kh, (k+1)h], k = 0..n-1.

    The integrand has a fractional-power kink at u = 0, so the first cells
    use power-clustered nodes; beyond that plain Gauss is exact to roundoff.
    """
    out = np.empty(n)
    n_special = min(4, n)
    z, zw = _GAUSS24
    z01 = 0.5 * (z + 1.0)
    for k in range(n_special):
        a, b = k * h, (k + 1) * h
        u = a + (b - a) * z01**4
        out[k] = (b - a) * np.sum(0.5 * zw * w(np.exp(-u)) * 4.0 * z01**3)
    if n > n_special:
        x, xw = np.polynomial.legendre.leggauss(order)
        ks = np.arange(n_special, n)
        a = ks[:, None] * h
        u = a + h * 0.5 * (x + 1.0)
        vals = w(np.exp(-u.ravel())).reshape(u.shape)
        out[n_special:] = h * 0.5 * (vals @ xw)
    return out


def _march_antiderivative(w: WeightingFn, length: float, grid_step: float, rhs_fn):
    """Solve X(t) - int_0^t k(t-s) X(s) ds = rhs(t) on [0, length], X(0) = 0.

    Returns (nodes, X, tables) where tables = (wn, cell_W) are reused by the
    residual evaluators.  X is the piecewise-linear product-integration
    solution; the discrete system is enforced exactly at every node.
    """
    n = max(8, int(round(length / grid_step)))
    h = length / n
    t = np.linspace(0.0, length, n + 1)
    wn = w(np.exp(-t))
    mu0 = wn[:-1] - wn[1:]
    cw = _cell_w_exp_integrals(w, h, n)
    mu1 = -h * wn[1:] + cw
    A = mu1 / h
    B = mu0 - A
    rhs = rhs_fn(t)
    X = volterra_march(np.ascontiguousarray(A), np.ascontiguousarray(B),
                       np.ascontiguousarray(rhs))
    return t, X, (wn, cw)


def _integral_form_residual(X: np.ndarray, h: float, rhs: np.ndarray,
                            w: WeightingFn, order: int = 16) -> np.ndarray:
    """Residual of rhs(t_i) - int_0^{t_i} w(e^{-(t_i - s)}) dX(s) at all nodes.

    Independent of the solver tables: the w(e^-u) cell integrals are
    recomputed at a different quadrature order.
    """
    n = len(X) - 1
    slopes = np.diff(X) / h
    cw = _cell_w_exp_integrals(w, h, n, order=order)
    conv = np.convolve(slopes, cw)[:n]
    res = np.empty(n + 1)
    res[0] = rhs[0]
    res[1:] = rhs[1:] - conv
    return res


def _stieltjes_density(X: np.ndarray, h: float, forcing_mid: np.ndarray,
                       w: WeightingFn) -> np.ndarray:
    """Pointwise density x(t) = X'(t) at cell midpoints via
    x(m) = forcing(m) + int_0^m k(m-s) dX(s) with dX piecewise constant."""
    n = len(X) - 1
    slopes = np.diff(X) / h
    half = np.exp(-(np.arange(2 * n + 2) * (h / 2.0)))
    wh = w(half)
    c = np.empty(n)
    c[0] = wh[0] - wh[1]
    if n > 1:
        c[1:] = wh[1:2 * n - 1:2] - wh[3:2 * n + 1:2]
    conv = conv_lower(np.ascontiguousarray(c), np.ascontiguousarray(slopes))
    return forcing_mid + conv


# ---------------------------------------------------------------------------
# Lagrange density g0 and threshold t0
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LagrangeDensity:
    """Marched multiplier density: antiderivative at nodes, values at midpoints.

    ``value_at_zero`` is w'(1) - 1 when the weighting has finite endpoint
    slope; for the one-parameter family with g < 1 the density diverges like
    t^(g-1) at zero (integrably) and the field is +inf.
    """

    w: WeightingFn
    t1: float
    grid_step: float
    nodes: np.ndarray
    antiderivative: np.ndarray
    midpoints: np.ndarray
    values: np.ndarray
    value_at_zero: float

    def integral_to(self, t: float) -> float:
        return float(np.interp(t, self.nodes, self.antiderivative))

    def residual(self) -> np.ndarray:
        rhs = np.exp(-self.nodes) - self.w(np.exp(-self.nodes))
        return _integral_form_residual(self.antiderivative, self.grid_step, rhs, self.w)


def solve_lagrange_density(w: WeightingFn, grid_step: float = 1e-3,
                           residual_tol: float = 1e-8) -> LagrangeDensity:
    """March the multiplier equation on [0, t1] and reconstruct midpoint values."""
    p1 = fixed_point_p1(w)
    t1 = -np.log(p1)
    t, G, _ = _march_antiderivative(w, t1, grid_step,
                                    lambda tt: np.exp(-tt) - w(np.exp(-tt)))
    h = t[1] - t[0]
    mids = t[:-1] + h / 2.0
    forcing = w.derivative(np.exp(-mids)) * np.exp(-mids) - np.exp(-mids)
    g0m = _stieltjes_density(G, h, forcing, w)
    rhs = np.exp(-t) - w(np.exp(-t))
    res = _integral_form_residual(G, h, rhs, w)
    if np.abs(res).max() > residual_tol:
        raise SolverConvergenceError(
            f"multiplier equation residual {np.abs(res).max():.2e} above {residual_tol}")
    v0 = w.derivative(1.0) - 1.0 if w.endpoint_slope_finite else np.inf
    return LagrangeDensity(w=w, t1=t1, grid_step=h, nodes=t, antiderivative=G,
                           midpoints=mids, values=g0m, value_at_zero=float(v0))


def find_t0(ld: LagrangeDensity) -> float:
    """First zero crossing of the multiplier density, linearly interpolated."""
    g = ld.values
    neg = np.nonzero(g <= 0.0)[0]
    if len(neg) == 0:
        raise RuntimeError("multiplier density never crosses zero: solver defect")
    i = int(neg[0])
    if i == 0:
        raise RuntimeError("multiplier density nonpositive at the origin: solver defect")
    x0, x1 = ld.midpoints[i - 1], ld.midpoints[i]
    y0, y1 = g[i - 1], g[i]
    return float(x0 - y0 * (x1 - x0) / (y1 - y0))


# ---------------------------------------------------------------------------
# binding-participation flow
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FlowSolution:
    """Flow on [0, t0] in reversed coordinates v = t0 - t.

    ``remaining`` holds psi(v) = int_{t0-v}^{t0} f at the v-nodes; the flow
    itself diverges like (t0-t)^(g-1) at t0 for curves with infinite endpoint
    slope, so pointwise values are reported at cell midpoints.
    """

    w: WeightingFn
    t0: float
    grid_step: float
    v_nodes: np.ndarray
    remaining: np.ndarray
    midpoints_t: np.ndarray
    values: np.ndarray
    value_at_t0: float

    @property
    def total_flow(self) -> float:
        return float(self.remaining[-1])

    def residual(self, half_grid: bool = False) -> np.ndarray:
        """Binding-participation defect 1 - w(e^-v) - int k dpsi at v-nodes,
        optionally on the half grid (midpoints interleaved)."""
        if not half_grid:
            rhs = 1.0 - self.w(np.exp(-self.v_nodes))
            return _integral_form_residual(self.remaining, self.grid_step, rhs, self.w)
        n = len(self.remaining) - 1
        h2 = self.grid_step / 2.0
        slopes_half = np.repeat(np.diff(self.remaining) / self.grid_step, 2)
        cw = _cell_w_exp_integrals(self.w, h2, 2 * n)
        conv = np.convolve(slopes_half, cw)[: 2 * n]
        x = np.arange(1, 2 * n + 1) * h2
        return (1.0 - self.w(np.exp(-x))) - conv


def solve_flow(w: WeightingFn, t0: float, grid_step: float = 1e-3,
               residual_tol: float = 1e-8) -> FlowSolution:
    """March the binding-participation equation backward from t0."""
    v, psi, _ = _march_antiderivative(w, t0, grid_step,
                                      lambda vv: 1.0 - w(np.exp(-vv)))
    h = v[1] - v[0]
    mids_v = v[:-1] + h / 2.0
    forcing = w.derivative(np.exp(-mids_v)) * np.exp(-mids_v)
    f_v = _stieltjes_density(psi, h, forcing, w)
    rhs = 1.0 - w(np.exp(-v))
    res = _integral_form_residual(psi, h, rhs, w)
    if np.abs(res).max() > residual_tol:
        raise SolverConvergenceError(
            f"flow equation residual {np.abs(res).max():.2e} above {residual_tol}")
    vt0 = w.derivative(1.0) if w.endpoint_slope_finite else np.inf
    return FlowSolution(w=w, t0=t0, grid_step=h, v_nodes=v, remaining=psi,
                        midpoints_t=(t0 - mids_v)[::-1], values=f_v[::-1],
                        value_at_t0=float(vt0))


# ---------------------------------------------------------------------------
# assembled solution
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ExponentialSolution:
    """Solved optimal process: fixed point, densities, schedule, revenue."""

    params: CptParams
    p1: float
    t1: float
    t0: float
    lagrange: LagrangeDensity
    flow: FlowSolution
    schedule: CumulativePaymentFn
    revenue: float
    revenue_primal: float
    grid_step: float

    @property
    def lump_sum(self) -> float:
        return self.params.theta / self.params.lam

    @property
    def total_flow_payment(self) -> float:
        return self.lump_sum * self.flow.total_flow

    def payment_distribution(self, tail_levels: int = 48) -> PaymentDistribution:
        """Distribution of the stopped total payment with exact cell masses.

        The last time cell before t0 is subdivided geometrically using the
        local fractional-power shape of the flow, so the money cells stay
        accurate through the region where the flow blows up.
        """
        scale = self.lump_sum
        psi = self.flow.remaining
        v = self.flow.v_nodes
        h = self.flow.grid_step
        total = psi[-1]
        c0 = psi[1] / (1.0 - float(self.flow.w(np.exp(-h))))
        # times of the rising region, coarse-to-fine toward t0
        v_sub = h * 0.5 ** np.arange(1, tail_levels + 1)
        t_pts = np.concatenate([self.t0 - v[::-1],                    # uniform nodes
                                self.t0 - v_sub])
        t_pts = np.unique(t_pts[t_pts >= 0.0])
        vv = self.t0 - t_pts
        money = np.where(vv > v[1],
                         scale * (total - np.interp(vv, v, psi)),
                         scale * (total - c0 * (1.0 - self.flow.w(np.exp(-vv)))))
        money[0] = 0.0
        order = np.argsort(money)
        money = money[order]
        t_sorted = t_pts[order]
        keep = np.concatenate([[True], np.diff(money) > 1e-15])
        money, t_sorted = money[keep], t_sorted[keep]
        masses = np.exp(-t_sorted[:-1]) - np.exp(-t_sorted[1:])
        mass_tail_cell = np.exp(-t_sorted[-1]) - np.exp(-self.t0)
        M = scale * total
        brs = np.concatenate([money, [M, M + scale]])
        des = np.concatenate([masses / np.diff(money),
                              [mass_tail_cell / (M - money[-1]), 0.0]])
        return PaymentDistribution.from_segments(
            [M + scale], [np.exp(-self.t0)], brs, des)

    def to_json(self) -> str:
        doc = {
            "p1": self.p1,
            "t1": self.t1,
            "t0": self.t0,
            "revenue": self.revenue,
            "grid_step": self.grid_step,
            "f": list(self.flow.values),
            "g0": list(self.lagrange.values),
        }
        return json.dumps(doc)


def optimal_schedule(params: CptParams, grid_step: float = 1e-3) -> ExponentialSolution:
    """Solve the full design: g0, t0, f, schedule, and both revenue forms."""
    w = params.w_minus
    ld = solve_lagrange_density(w, grid_step)
    t0 = find_t0(ld)
    fs = solve_flow(w, t0, grid_step)
    scale = params.theta / params.lam

    psi = fs.remaining
    h = fs.grid_step
    slopes = np.diff(psi) / h
    flow_cells = scale * slopes[::-1]
    schedule = CumulativePaymentFn(flow=flow_cells, t_max=t0, jumps=((t0, scale),))

    revenue_dual = scale * (1.0 + ld.integral_to(t0))
    ev = np.exp(fs.v_nodes)
    revenue_primal = scale * np.exp(-t0) * (1.0 + float(np.dot(slopes, np.diff(ev))))

    p1 = np.exp(-ld.t1)
    if abs(float(w(p1)) - p1) > 1e-10:
        raise SolverConvergenceError("fixed point drifted during the solve")
    return ExponentialSolution(params=params, p1=p1, t1=ld.t1, t0=t0, lagrange=ld,
                               flow=fs, schedule=schedule, revenue=revenue_dual,
                               revenue_primal=revenue_primal, grid_step=grid_step)


@dataclass(frozen=True)
class OptimalityReport:
    binding_residual_sup: float
    distribution_slack_sup: float
    duality_gap: float
    dominates_classes: bool
    class_revenues: dict
    perturbation_gain: float
    passed: bool


def verify_optimality(sol: ExponentialSolution, params: CptParams,
                      class_revenues: dict | None = None,
                      slack_points: int = 400, seed: int = 7,
                      binding_tol: float = 1e-6, gap_tol: float = 1e-5,
                      perturb_tol: float = 1e-6) -> OptimalityReport:
    """Consistency report: binding participation, duality gap, dominance over
    the practical mechanism classes, and local perturbation optimality."""
    from .classes import optimize_hard_pity, optimize_modified, optimize_stationary
    from .payments import t_dir_check

    res_nodes = sol.flow.residual()
    binding_sup = float(np.abs(res_nodes).max())

    dist = sol.payment_distribution()
    rep = t_dir_check(dist, params, max_points=slack_points)
    mask = rep.s_values < sol.total_flow_payment * (1.0 - 1e-12)
    slack_sup = float(np.abs(rep.slacks[mask]).max())

    gap = abs(sol.revenue - sol.revenue_primal)

    if class_revenues is None:
        class_revenues = {
            "stationary": optimize_stationary(params).revenue,
            "hard_pity": optimize_hard_pity(params).revenue,
            "modified": optimize_modified(params).revenue,
        }
    dominates = all(sol.revenue > rv for rv in class_revenues.values())

    # local perturbations of the flow, re-scaled to restore feasibility
    rng = np.random.default_rng(seed)
    psi = sol.flow.remaining
    h = sol.flow.grid_step
    n = len(psi) - 1
    slopes = np.diff(psi) / h
    cw = _cell_w_exp_integrals(sol.flow.w, h, n)
    x = sol.flow.v_nodes[1:]
    headroom = 1.0 - sol.flow.w(np.exp(-x))
    base_rev = sol.revenue_primal
    worst_gain = -np.inf
    dev = np.exp(sol.flow.v_nodes)
    for _ in range(8):
        a, b = sorted(rng.integers(0, n, size=2))
        b = max(b, a + 1)
        bumped = slopes.copy()
        bumped[a:b] *= 1.0 + rng.choice([-1e-3, 1e-3])
        cost = np.convolve(bumped, cw)[:n]
        alpha = float(np.min(headroom / cost))
        rev = sol.lump_sum * np.exp(-sol.t0) * (
            1.0 + float(np.dot(alpha * bumped, np.diff(dev))))
        worst_gain = max(worst_gain, rev - base_rev)

    passed = (binding_sup < binding_tol and slack_sup < binding_tol
              and gap < gap_tol and dominates and worst_gain < perturb_tol)
    return OptimalityReport(binding_residual_sup=binding_sup,
                            distribution_slack_sup=slack_sup,
                            duality_gap=gap, dominates_classes=dominates,
                            class_revenues=dict(class_revenues),
                            perturbation_gain=worst_gain, passed=passed)
