"""Practical loot-box mechanism families and their within-class optima.

Three families over box price c, per-box success probability q, and pity cap
N, with the buyer paying for every box including the successful one:

* stationary: boxes forever; total payment c G with G geometric on {1,2,...};
* hard pity:  after N failed boxes the good is delivered free;
* modified:   after N failed boxes the good is sold at the full price
              theta / lam (the buyer is exactly indifferent there).

Participation is enforced at every purchase count: before box k+1 the
perceived cost of the remaining payment, weighted by the loss-side curve,
must not exceed theta.  The box price is always set to make the tightest
such constraint bind, which maximizes revenue pointwise in (q, N).  An
ex-ante-only variant (constraint at count 0 alone) is available for
comparison; for the stationary and hard-pity families the two coincide
because count 0 is the tightest.

Within-family optimization over (q, N) reproduces the reference profit
table of the pity families as N grows (the fine-box continuum is the
supremum).  The stationary family is different: its binding revenue rises
monotonically in q toward the degenerate corner q -> 1, which is a
deterministic posted price rather than a lottery, while the genuinely
stationary fine-box limit q -> 0 (the constant-flow process with
exponentially distributed total payment) is where the family's published
optimum lives.  ``optimize_stationary`` therefore reports the fine-box end;
``stationary_revenue`` exposes the whole q-profile.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .cpt import CptParams
from .payments import PaymentDistribution
from .weighting import WeightingFn

VARIANTS = ("stationary", "hard_pity", "modified")


@dataclass(frozen=True)
class MechanismClassSpec:
    variant: str
    c: float
    q: float
    n_pity: int | None = None

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.c <= 0:
            raise ValueError("box price must be positive")
        if not (0.0 < self.q < 1.0):
            raise ValueError("box probability must lie in (0, 1)")
        if self.variant != "stationary" and (self.n_pity is None or self.n_pity < 1):
            raise ValueError("pity variants need a cap N >= 1")


def _series_cutoff(q: float, gamma_hint: float = 0.5) -> int:
    """Number of geometric terms so the weighted tail sum truncates below 1e-12."""
    r = 1.0 - q
    decay = gamma_hint * (-np.log1p(-q))
    return int(min(5_000_000, max(64, np.ceil(30.0 / decay))))


def _weighted_suffix_sums(w: WeightingFn, q: float, n_terms: int):
    """tails r^j and the sums S_m = sum_{j<m} w(r^j) for m = 1..n_terms."""
    j = np.arange(n_terms)
    log_tail = j * np.log1p(-q)
    tail = np.exp(log_tail)
    wt = w(tail)
    return tail, np.cumsum(tail), np.cumsum(wt)


def class_payment_dist(spec: MechanismClassSpec, params: CptParams) -> PaymentDistribution:
    """Total-payment atoms of the mechanism; stationary tails truncated at
    mass 1e-12 with the remainder folded into the last atom."""
    q, c = spec.q, spec.c
    r = 1.0 - q
    if spec.variant == "stationary":
        k_cut = int(min(5_000_000, max(8, np.ceil(np.log(1e-12) / np.log1p(-q)))))
        k = np.arange(1, k_cut + 1)
        masses = q * r ** (k - 1)
        masses[-1] += r**k_cut
        return PaymentDistribution.from_atoms(k * c, masses)
    n = spec.n_pity
    k = np.arange(1, n + 1)
    values = list(k * c)
    masses = list(q * r ** (k - 1))
    if spec.variant == "hard_pity":
        masses[-1] += r**n  # free good after N failures: same total payment Nc
    else:
        values.append(n * c + params.theta / params.lam)
        masses.append(r**n)
    return PaymentDistribution.from_atoms(values, masses)


@dataclass(frozen=True)
class ClassDirReport:
    counts: np.ndarray
    slacks: np.ndarray
    tolerance: float = 1e-7

    @property
    def min_slack(self) -> float:
        return float(self.slacks.min())

    @property
    def argmin_count(self) -> int:
        return int(self.counts[int(np.argmin(self.slacks))])

    @property
    def feasible(self) -> bool:
        return self.min_slack >= -self.tolerance


def class_dir_feasible(spec: MechanismClassSpec, params: CptParams,
                       max_counts: int = 4096) -> ClassDirReport:
    """Participation slack before each remaining purchase.

    Delivery is eventually sure in all three families, so the gain side is
    theta exactly; the loss side is the weighted tail sum of the remaining
    payment.  Stationary slacks are identical at every count (memorylessness).
    """
    w, th, lam = params.w_minus, params.theta, params.lam
    q, c = spec.q, spec.c
    if spec.variant == "stationary":
        n_terms = _series_cutoff(q)
        _, _, sw = _weighted_suffix_sums(w, q, n_terms)
        slack = th - lam * c * sw[-1]
        counts = np.arange(min(max_counts, 64))
        return ClassDirReport(counts=counts, slacks=np.full(len(counts), slack))
    n = spec.n_pity
    tail, _, sw = _weighted_suffix_sums(w, q, n + 1)
    m = np.arange(1, n + 1)          # boxes remaining = n - k
    cost = lam * c * sw[m - 1]
    if spec.variant == "modified":
        cost = cost + th * w(tail[m])
        counts = np.arange(n + 1)
        slacks = np.concatenate([(th - cost)[::-1], [0.0]])
    else:
        counts = np.arange(n)
        slacks = (th - cost)[::-1]
    if len(counts) > max_counts:
        counts, slacks = counts[:max_counts], slacks[:max_counts]
    return ClassDirReport(counts=counts, slacks=slacks)


@dataclass(frozen=True)
class ClassOptimum:
    spec: MechanismClassSpec
    revenue: float
    constraint: str


def stationary_revenue(q: float, params: CptParams) -> tuple[float, float]:
    """(binding box price, revenue) of the stationary family at box odds q."""
    w, th, lam = params.w_minus, params.theta, params.lam
    n_terms = _series_cutoff(q)
    _, _, sw = _weighted_suffix_sums(w, q, n_terms)
    c = th / (lam * sw[-1])
    return c, c / q


def optimize_stationary(params: CptParams, q_repr: float = 1e-4,
                        constraint: str = "per_purchase") -> ClassOptimum:
    """Stationary-family optimum, reported in the fine-box limit.

    The binding revenue is monotone increasing in q and tends to the
    deterministic posted price theta/lam as q -> 1, so the supremum over
    genuine lotteries is not attained; the family's meaningful optimum is the
    q -> 0 stationary process, approximated here at ``q_repr`` (the reported
    revenue is within ~1e-5 of the limit at the default).
    """
    c, rev = stationary_revenue(q_repr, params)
    return ClassOptimum(spec=MechanismClassSpec("stationary", c=c, q=q_repr),
                        revenue=rev, constraint=constraint)


def _pity_revenue_all_n(w, q, n_max, th, lam, variant, constraint):
    """Binding box price and revenue for every N = 1..n_max at fixed q."""
    tail, sr, sw = _weighted_suffix_sums(w, q, n_max + 1)
    m = np.arange(1, n_max + 1)
    if variant == "hard_pity":
        c = th / (lam * sw[m - 1])
        rev = c * sr[m - 1]
    else:
        phi = (th / lam) * (1.0 - w(tail[m])) / sw[m - 1]
        if constraint == "per_purchase":
            # tightest constraint over remaining box counts m' <= N
            c = np.minimum.accumulate(phi)
        else:
            c = phi
        rev = c * sr[m - 1] + (th / lam) * tail[m]
    return c, rev


def _golden_max(f, lo, hi, tol=1e-9):
    g = (np.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c, d = b - g * (b - a), a + g * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc > fd:
            b, d, fd = d, c, fc
            c = b - g * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + g * (b - a)
            fd = f(d)
    x = 0.5 * (a + b)
    return x, f(x)


def _optimize_pity(params: CptParams, variant: str, n_max: int,
                   constraint: str) -> ClassOptimum:
    w, th, lam = params.w_minus, params.theta, params.lam
    q_grid = np.unique(np.concatenate([
        np.geomspace(1e-5, 0.5, 160),
        np.linspace(0.5, 0.995, 40),
    ]))
    best = (-np.inf, None, None)
    for q in q_grid:
        _, rev = _pity_revenue_all_n(w, q, n_max, th, lam, variant, constraint)
        j = int(np.argmax(rev))
        if rev[j] > best[0]:
            best = (rev[j], q, j + 1)
    _, q0, n0 = best

    def rev_at(q, n=n0):
        _, rv = _pity_revenue_all_n(w, q, n, th, lam, variant, constraint)
        return float(rv[n - 1])

    lo = max(1e-7, q0 * 0.5)
    hi = min(0.999, q0 * 2.0)
    q_best, r_best = _golden_max(lambda q: rev_at(q), lo, hi, tol=1e-10)
    n_best = n0
    for n in range(max(1, n0 - 2), min(n_max, n0 + 2) + 1):
        qn, rn = _golden_max(lambda q: rev_at(q, n), lo, hi, tol=1e-10)
        if rn > r_best:
            q_best, r_best, n_best = qn, rn, n
    c_all, _ = _pity_revenue_all_n(w, q_best, n_best, th, lam, variant, constraint)
    spec = MechanismClassSpec(variant, c=float(c_all[n_best - 1]), q=float(q_best),
                              n_pity=n_best)
    return ClassOptimum(spec=spec, revenue=float(r_best), constraint=constraint)


def optimize_hard_pity(params: CptParams, n_max: int = 512,
                       constraint: str = "per_purchase") -> ClassOptimum:
    return _optimize_pity(params, "hard_pity", n_max, constraint)


def optimize_modified(params: CptParams, n_max: int = 512,
                      constraint: str = "per_purchase") -> ClassOptimum:
    return _optimize_pity(params, "modified", n_max, constraint)


# ---------------------------------------------------------------------------
# profit table across weighting parameters
# ---------------------------------------------------------------------------

TABLE_ROWS = ("independent", "hard_pity", "modified", "optimal")


@dataclass(frozen=True)
class ProfitTable:
    gammas: tuple
    rows: dict  # row name -> tuple of revenues

    def to_csv(self) -> str:
        header = "class," + ",".join(f"{g:g}" for g in self.gammas)
        lines = [header]
        for name, vals in self.rows.items():
            lines.append(name + "," + ",".join(f"{v:.4f}" for v in vals))
        return "\n".join(lines) + "\n"


def table_sweep(gammas, lam: float = 1.0, theta: float = 1.0,
                rows=TABLE_ROWS, n_max: int = 512, grid_step: float = 1e-4,
                max_workers: int | None = None) -> ProfitTable:
    """Revenue of each mechanism class per weighting parameter.

    The continuous-time optimal row is solved per gamma on the refined grid;
    gammas run concurrently (each solve is independent and sequential).
    """
    from .exponential import optimal_schedule
    from .weighting import TverskyKahneman

    gammas = tuple(float(g) for g in gammas)
    if not gammas:
        raise ValueError("need at least one gamma")

    def solve_one(g):
        w = TverskyKahneman(g)
        p = CptParams(w_plus=w, w_minus=w, lam=lam, theta=theta)
        out = {}
        if "independent" in rows:
            out["independent"] = optimize_stationary(p).revenue
        if "hard_pity" in rows:
            out["hard_pity"] = optimize_hard_pity(p, n_max=n_max).revenue
        if "modified" in rows:
            out["modified"] = optimize_modified(p, n_max=n_max).revenue
        if "optimal" in rows:
            out["optimal"] = optimal_schedule(p, grid_step=grid_step).revenue
        return out

    if len(gammas) == 1:
        results = [solve_one(gammas[0])]
    else:
        with ThreadPoolExecutor(max_workers=max_workers or min(len(gammas), 6)) as ex:
            results = list(ex.map(solve_one, gammas))
    table_rows = {name: tuple(res[name] for res in results)
                  for name in rows if name in results[0]}
    return ProfitTable(gammas=gammas, rows=table_rows)
