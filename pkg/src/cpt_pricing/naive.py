"""Optimal repeated loot-box sale to a buyer who is naive about her own
dynamic inconsistency.

Each period the seller offers delivery probability x and a binary random
price; the buyer evaluates "buy one last time then quit" and accepts when
that plan breaks even.  The optimal per-period delivery probability maximizes
``w_plus(x) / (1 - (1 - x) delta)`` and the seller's profit is mu* theta/lam
times that factor.  The maximizer can sit at the endpoint x = 1 (the factor
is 1 there, and the interior candidate only wins for delta close enough to
one); the solution then degenerates to the one-shot static sale and is
returned flagged.

``strategy_payoff`` evaluates the buyer's perceived value of the plan
"purchase in the next n+1 periods, then stop": the gain side in closed form
over the discounted delivery events, the loss side by exact enumeration of
the per-period success/price outcomes, assembled into the exact distribution
of the discounted payment total.  Under the optimal mechanism the one-period
plan breaks even and every longer plan looks strictly worse whenever x* is
interior, which is what keeps the naive buyer purchasing forever.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .cpt import CptParams, static_multiplier
from .payments import PaymentDistribution

GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0
N_ENUM_MAX = 8


@dataclass(frozen=True)
class NaiveSolution:
    x_star: float
    price_high: float
    price_prob: float
    v_star: float
    mu_star: float
    p_star: float
    params: CptParams
    degenerate: bool

    @property
    def factor(self) -> float:
        d = self.params.delta
        return float(self.params.w_plus(self.x_star)) / (1.0 - (1.0 - self.x_star) * d)

    def per_period_price(self) -> PaymentDistribution:
        return PaymentDistribution.from_atoms(
            [0.0, self.price_high], [1.0 - self.price_prob, self.price_prob])

    def to_json(self) -> str:
        doc = {
            "x_star": self.x_star,
            "price_high": self.price_high,
            "price_prob": self.price_prob,
            "v_star": self.v_star,
            "delta": self.params.delta,
            "lambda": self.params.lam,
            "theta": self.params.theta,
        }
        return json.dumps(doc)


def optimal_loot_box(params: CptParams) -> NaiveSolution:
    """Maximize w_plus(x) / (1 - (1-x) delta) and price each period's box.

    delta = 1 is rejected at parameter construction: with weighting slope
    diverging at zero the supremum would be infinite.  Identity weighting
    (and any delta below the curve-specific threshold) puts the maximizer at
    x = 1, which reduces to the static sale and is flagged degenerate.
    """
    w, d = params.w_plus, params.delta
    mu, ps = static_multiplier(params.w_minus)

    def f(x):
        return float(w(x)) / (1.0 - (1.0 - x) * d)

    xs = np.linspace(1e-9, 1.0, 100_001)
    vals = np.asarray(w(xs)) / (1.0 - (1.0 - xs) * d)
    i = int(np.argmax(vals))
    a, b = xs[max(i - 1, 0)], xs[min(i + 1, len(xs) - 1)]
    c, dd = b - GOLDEN * (b - a), a + GOLDEN * (b - a)
    fc, fd = f(c), f(dd)
    while b - a > 1e-12:
        if fc > fd:
            b, dd, fd = dd, c, fc
            c = b - GOLDEN * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, dd, fd
            dd = a + GOLDEN * (b - a)
            fd = f(dd)
    x_star = 0.5 * (a + b)
    if f(1.0) >= f(x_star):
        x_star = 1.0
    degenerate = x_star >= 1.0 - 1e-12

    factor = f(x_star)
    v_star = mu * params.theta / params.lam * factor
    price_high = mu * params.theta * float(w(x_star)) / (params.lam * ps)
    return NaiveSolution(x_star=float(x_star), price_high=price_high, price_prob=ps,
                         v_star=v_star, mu_star=mu, p_star=ps, params=params,
                         degenerate=degenerate)


def _discounted_payment_distribution(sol: NaiveSolution, n: int) -> PaymentDistribution:
    """Exact distribution of sum_{s=0}^{min(K, n)} delta^s T_s where K is the
    first-success period and T_s the i.i.d. binary price.

    Enumerates stop periods and price patterns; the joint outcome space per
    period is success x price, and patterns after the stop are irrelevant, so
    the enumeration is exact with O(2^n) states.
    """
    x, d = sol.x_star, sol.params.delta
    M, p = sol.price_high, sol.price_prob
    acc: dict[float, float] = {}

    def add_patterns(n_pay: int, prob_k: float):
        if prob_k <= 0.0:
            return
        disc = d ** np.arange(n_pay)
        for mask in range(1 << n_pay):
            bits = (mask >> np.arange(n_pay)) & 1
            pay = float(M * np.dot(bits, disc))
            pr = prob_k * p ** int(bits.sum()) * (1 - p) ** int(n_pay - bits.sum())
            key = round(pay, 12)
            acc[key] = acc.get(key, 0.0) + pr

    for k in range(n + 1):               # good obtained in period k
        add_patterns(k + 1, (1.0 - x) ** k * x)
    add_patterns(n + 1, (1.0 - x) ** (n + 1))   # never obtained within the plan

    values = np.array(sorted(acc))
    masses = np.array([acc[v] for v in values])
    return PaymentDistribution.from_atoms(values, masses)


def strategy_payoff(sol: NaiveSolution, n: int, params: CptParams | None = None) -> float:
    """Perceived payoff of the plan "buy in periods 0..n, then quit".

    Gains: sum_k [w(1-(1-x)^(k+1)) - w(1-(1-x)^k)] delta^k theta over the
    discounted delivery events.  Losses: lam times the weighted tail integral
    of the exact discounted-payment distribution.
    """
    if n < 0:
        raise ValueError("n must be nonnegative")
    if n > N_ENUM_MAX:
        raise ValueError(f"exact enumeration capped at n = {N_ENUM_MAX}; "
                         "use strategy_payoff_mc beyond")
    params = sol.params if params is None else params
    w_p, w_m = params.w_plus, params.w_minus
    th, lam, d = params.theta, params.lam, params.delta
    x = sol.x_star

    k = np.arange(n + 1)
    reach = 1.0 - (1.0 - x) ** k
    reach_next = 1.0 - (1.0 - x) ** (k + 1)
    gains = th * float(np.sum((w_p(reach_next) - w_p(reach)) * d**k))

    dist = _discounted_payment_distribution(sol, n)
    return gains - lam * dist.weighted_tail_integral(w_m)


def strategy_payoff_mc(sol: NaiveSolution, n: int, n_paths: int = 10_000_000,
                       seed: int = 0) -> tuple[float, float]:
    """Monte Carlo payoff of the same plan for horizons beyond the exact cap.

    Applies the perceived-value functional to the empirical distribution of
    the discounted payment; returns (payoff, standard error of the mean
    payment) for calibration.
    """
    params = sol.params
    x, d, M, p = sol.x_star, params.delta, sol.price_high, sol.price_prob
    rng = np.random.default_rng(np.random.Philox(key=seed))
    k = np.arange(n + 1)
    reach = 1.0 - (1.0 - x) ** k
    reach_next = 1.0 - (1.0 - x) ** (k + 1)
    gains = params.theta * float(np.sum((params.w_plus(reach_next)
                                         - params.w_plus(reach)) * d**k))
    succ = rng.random((n_paths, n + 1)) < x
    stop = np.where(succ.any(axis=1), succ.argmax(axis=1), n + 1)
    prices = (rng.random((n_paths, n + 1)) < p) * M
    disc = d ** np.arange(n + 1)
    pay = np.where(np.arange(n + 1)[None, :] <= np.minimum(stop, n)[:, None],
                   prices * disc, 0.0).sum(axis=1)
    values, counts = np.unique(pay, return_counts=True)
    emp = PaymentDistribution.from_atoms(values, counts / n_paths)
    cost = params.lam * emp.weighted_tail_integral(params.w_minus)
    se = float(pay.std(ddof=1) / np.sqrt(n_paths))
    return gains - cost, se


@dataclass(frozen=True)
class NaiveReport:
    payoff_sigma0: float
    payoffs: np.ndarray
    revenue_identity_gap: float
    all_negative_beyond_zero: bool

    @property
    def passed(self) -> bool:
        return (abs(self.payoff_sigma0) < 1e-9 and self.all_negative_beyond_zero
                and self.revenue_identity_gap < 1e-9)


def verify_naive_behavior(sol: NaiveSolution, n_max: int = N_ENUM_MAX) -> NaiveReport:
    """Break-even of the one-period plan, sign of longer plans, and the
    geometric-series revenue identity.

    When the solution is degenerate (x* = 1) every longer plan coincides with
    the one-period plan, so the strict-negativity flag is reported false
    without contradiction; revenue still matches the closed form.
    """
    params = sol.params
    payoffs = np.array([strategy_payoff(sol, n) for n in range(n_max + 1)])
    per_period = sol.price_prob * sol.price_high
    revenue = per_period / (1.0 - params.delta * (1.0 - sol.x_star))
    gap = abs(revenue - sol.v_star)
    negative = bool(np.all(payoffs[1:] < 0)) if n_max >= 1 else True
    return NaiveReport(payoff_sigma0=float(payoffs[0]), payoffs=payoffs,
                       revenue_identity_gap=gap,
                       all_negative_beyond_zero=negative)
