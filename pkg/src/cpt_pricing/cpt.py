"""Menu evaluation under separate-account CPT, RDEU, and joint accounting,
plus the static revenue optimum.

The buyer values a menu (delivery probability x, random payment T) at
``theta * w_plus(x) - lam * int_0^inf w_minus(P(T > y)) dy``.  The optimal
static price against this payoff is binary: charge ``mu* theta / (p* lam)``
with probability p* and zero otherwise, where ``mu* = max_p p / w_minus(p)``
and p* is the unique interior maximizer; expected revenue is
``mu* theta / lam``.  RDEU and joint-accounting forms coincide with the
separate-account value on sure-delivery menus after the matching
renormalizations, and both are evaluated here directly from the ex-post
payoff distribution as an independent cross-check of that equivalence.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .payments import PaymentDistribution, _w_integral_over_ramp
from .weighting import DegenerateWeightingError, WeightingFn, validate_reverse_s

GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class CptParams:
    """Buyer and environment parameters.

    ``delta`` is the per-period discount factor of the repeated-sale model and
    is ignored by the static and continuous-time solvers.  ``delta = 1`` is
    rejected: with weighting slope diverging at zero the seller's revenue
    against a naive buyer would be unbounded.
    """

    w_plus: WeightingFn
    w_minus: WeightingFn
    lam: float = 1.0
    theta: float = 1.0
    delta: float = 0.0

    def __post_init__(self):
        if self.theta <= 0:
            raise ValueError(f"theta must be positive, got {self.theta}")
        if self.lam < 1.0:
            raise ValueError(f"loss aversion must satisfy lam >= 1, got {self.lam}")
        if not (0.0 <= self.delta < 1.0):
            raise ValueError(f"delta must lie in [0, 1), got {self.delta}")


@dataclass(frozen=True)
class Menu:
    allocation_prob: float
    payment: PaymentDistribution

    def __post_init__(self):
        if not (0.0 <= self.allocation_prob <= 1.0):
            raise ValueError(f"allocation probability outside [0,1]: {self.allocation_prob}")


def perceived_cost(payment: PaymentDistribution, w: WeightingFn, lam: float) -> float:
    """lam * int_0^inf w(P(T > y)) dy, exact over atoms."""
    return lam * payment.weighted_tail_integral(w)


def cpt_value(menu: Menu, params: CptParams) -> float:
    gain = params.theta * float(params.w_plus(menu.allocation_prob))
    return gain - perceived_cost(menu.payment, params.w_minus, params.lam)


def _lower_cdf_segments(d: PaymentDistribution, theta: float):
    """Segments (a, b, F(a+), F(b-)) of x -> P(T < x) over [0, max(theta, T_max)]."""
    top = max(theta, d.support_max)
    edges = np.unique(np.concatenate([d._edges, [theta, top]]))
    a, b = edges[:-1], edges[1:]
    f_lo = 1.0 - d.tail(a)
    f_hi = 1.0 - d.tail(b) - np.array([d.atom_mass_at(float(x)) for x in b])
    return a, b, np.clip(f_lo, 0.0, 1.0), np.clip(f_hi, 0.0, 1.0)


def _integral_w_of_ramps(w, widths, lo, hi):
    """sum of int over segments of w(linear ramp lo->hi), exact on constants."""
    flat = np.abs(hi - lo) <= 1e-15
    out = float(np.sum(widths[flat] * w(lo[flat])))
    if np.any(~flat):
        integ = _w_integral_over_ramp(w, np.minimum(lo[~flat], hi[~flat]),
                                      np.maximum(lo[~flat], hi[~flat]))
        out += float(np.sum(widths[~flat] * integ / np.abs(hi[~flat] - lo[~flat])))
    return out


def rdeu_value(menu: Menu, params: CptParams, w: WeightingFn | None = None) -> float:
    """Rank-dependent value of a sure-delivery menu from the ex-post payoff.

    Uses the two-integral form over the distribution of theta - T with a
    single weighting curve ``w`` (default: the buyer's gain-side curve).
    Equals ``cpt_value`` computed with the dual curve 1 - w(1-p) on the loss
    side and no loss aversion.
    """
    if menu.allocation_prob < 1.0:
        raise ValueError("rank-dependent equivalence needs sure delivery (x = 1)")
    w = params.w_plus if w is None else w
    theta = params.theta
    d = menu.payment
    a, b, f_lo, f_hi = _lower_cdf_segments(d, theta)
    pos = a >= theta  # x > theta <-> ex-post payoff below zero
    neg_part = 0.0
    if np.any(pos):
        widths = b[pos] - a[pos]
        wvals = _integral_w_of_ramps(w, widths, f_lo[pos], f_hi[pos])
        neg_part = float(np.sum(widths)) - wvals
    gain_part = _integral_w_of_ramps(w, (b - a)[~pos], f_lo[~pos], f_hi[~pos])
    return gain_part - neg_part


def joint_cpt_value(menu: Menu, params: CptParams, symmetry_tol: float = 1e-9) -> float:
    """Joint-account CPT value of a sure-delivery menu.

    Requires no loss aversion and a common weighting curve satisfying
    w(p) + w(1-p) = 1 (checked on a grid); under these the joint-account
    value of (1, T) coincides with the separate-account value.
    """
    if menu.allocation_prob < 1.0:
        raise ValueError("joint-account equivalence needs sure delivery (x = 1)")
    if params.lam != 1.0:
        raise ValueError("joint-account equivalence needs lam = 1")
    w = params.w_plus
    grid = np.linspace(0.0, 1.0, 1001)
    sym_err = np.max(np.abs(w(grid) + w(1.0 - grid) - 1.0))
    wm_err = np.max(np.abs(w(grid) - params.w_minus(grid)))
    if sym_err > symmetry_tol or wm_err > symmetry_tol:
        raise ValueError(
            f"needs symmetric common weighting: symmetry defect {sym_err:.2e}, "
            f"gain/loss mismatch {wm_err:.2e}")
    theta = params.theta
    d = menu.payment
    a, b, f_lo, f_hi = _lower_cdf_segments(d, theta)
    pos = a >= theta
    gain_part = _integral_w_of_ramps(w, (b - a)[~pos], f_lo[~pos], f_hi[~pos])
    # losses weight the upper tail of the payment itself
    loss_part = 0.0
    if np.any(pos):
        t_hi = 1.0 - f_lo[pos]
        t_lo = 1.0 - f_hi[pos]
        loss_part = _integral_w_of_ramps(w, (b - a)[pos], t_hi, t_lo)
    return gain_part - loss_part


@dataclass(frozen=True)
class StaticOptimum:
    menu: Menu
    revenue: float
    mu_star: float
    p_star: float
    degenerate: bool


def static_multiplier(w_minus: WeightingFn, coarse_step: float = 1e-4,
                      refine_tol: float = 1e-10) -> tuple[float, float]:
    """(mu*, p*): the maximum of p / w(p) on (0, 1] and its unique maximizer.

    Coarse grid scan guards the golden-section refinement against the flat
    region near p = 1.  Identity weighting has a constant ratio and raises.
    """
    if w_minus.is_identity:
        raise DegenerateWeightingError("identity weighting: p / w(p) is constant")
    p = np.arange(coarse_step, 1.0 + coarse_step / 2, coarse_step)
    p[-1] = 1.0
    ratio = p / w_minus(p)
    if ratio.max() - ratio.min() < 1e-12:
        raise DegenerateWeightingError("constant ratio: no unique maximizer")
    i = int(np.argmax(ratio))
    lo = p[max(i - 1, 0)]
    hi = p[min(i + 1, len(p) - 1)]

    def f(x):
        return x / float(w_minus(x))

    a, b = lo, hi
    c, dd = b - GOLDEN * (b - a), a + GOLDEN * (b - a)
    fc, fd = f(c), f(dd)
    while b - a > refine_tol:
        if fc > fd:
            b, dd, fd = dd, c, fc
            c = b - GOLDEN * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, dd, fd
            dd = a + GOLDEN * (b - a)
            fd = f(dd)
    p_star = 0.5 * (a + b)
    mu_star = f(p_star)
    if not (mu_star > 1.0 and 0.0 < p_star < 1.0):
        raise DegenerateWeightingError(
            f"no interior multiplier above one (mu={mu_star}, p={p_star})")
    return mu_star, p_star


def optimal_static_price(params: CptParams) -> StaticOptimum:
    """Revenue-maximizing menu under the ex-ante participation constraint only.

    Identity weighting degenerates to the deterministic price theta / lam and
    is returned flagged rather than raised: it is the natural benchmark.
    """
    if params.w_minus.is_identity:
        price = params.theta / params.lam
        menu = Menu(1.0, PaymentDistribution.deterministic(price))
        return StaticOptimum(menu=menu, revenue=price, mu_star=1.0, p_star=1.0,
                             degenerate=True)
    mu, ps = static_multiplier(params.w_minus)
    high = mu * params.theta / (ps * params.lam)
    menu = Menu(1.0, PaymentDistribution.from_atoms([0.0, high], [1.0 - ps, ps]))
    return StaticOptimum(menu=menu, revenue=mu * params.theta / params.lam,
                         mu_star=mu, p_star=ps, degenerate=False)


def reverse_s_or_raise(w: WeightingFn, grid_step: float = 1e-3):
    report = validate_reverse_s(w, grid_step)
    if not report.passed:
        raise DegenerateWeightingError(f"weighting is not reverse-S: {report}")
    return report
