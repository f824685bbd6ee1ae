"""Reverse-S probability weighting functions and their derivatives.

Two concrete families: the classic one-parameter curve
``w(p) = p^g / (p^g + (1-p)^g)^(1/g)`` for g in (0, 1], and tabulated strictly
monotone curves interpolated with a shape-preserving cubic.  Every downstream
solver consumes the small interface defined here: ``__call__``, ``derivative``,
``dual`` and ``validate_reverse_s``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import PchipInterpolator


class DegenerateWeightingError(ValueError):
    """Raised when an operation needs genuine curvature but got identity weighting."""


def _as_prob(p):
    p = np.asarray(p, dtype=float)
    if np.any(p < 0) or np.any(p > 1):
        raise ValueError(f"probability outside [0,1]: {p}")
    return p


class WeightingFn:
    """Interface shared by all weighting curves; values immutable after construction."""

    def __call__(self, p):
        raise NotImplementedError

    def derivative(self, p):
        raise NotImplementedError

    @property
    def endpoint_slope_finite(self) -> bool:
        """True when w'(0+) and w'(1-) are finite."""
        raise NotImplementedError

    @property
    def is_identity(self) -> bool:
        return False


@dataclass(frozen=True)
class TverskyKahneman(WeightingFn):
    """One-parameter curve p^g / (p^g + (1-p)^g)^(1/g).

    g = 1 is the identity.  For g < 1 the curve is reverse-S shaped with
    infinite slope at both endpoints, so ``derivative`` refuses p in {0, 1}.
    Evaluation runs in log space so that tails like (1-q)^k stay accurate for
    very small probabilities.
    """

    gamma: float

    def __post_init__(self):
        if not (0.0 < self.gamma <= 1.0):
            raise ValueError(f"gamma must lie in (0, 1], got {self.gamma}")

    def __call__(self, p):
        p = _as_prob(p)
        scalar = p.ndim == 0
        p = np.atleast_1d(p)
        out = np.empty_like(p)
        g = self.gamma
        zero = p == 0.0
        one = p == 1.0
        inner = ~zero & ~one
        out[zero] = 0.0
        out[one] = 1.0
        if np.any(inner):
            q = p[inner]
            a = g * np.log(q)
            b = g * np.log1p(-q)
            m = np.maximum(a, b)
            log_s = m + np.log(np.exp(a - m) + np.exp(b - m))
            out[inner] = np.exp(a - log_s / g)
        return out[0] if scalar else out

    def derivative(self, p):
        p = _as_prob(p)
        scalar = p.ndim == 0
        p = np.atleast_1d(p)
        g = self.gamma
        if g == 1.0:
            res = np.ones_like(p)
            return res[0] if scalar else res
        if np.any(p == 0.0) or np.any(p == 1.0):
            raise ValueError(
                "derivative of the g<1 curve diverges at p=0 and p=1; "
                "evaluate strictly inside (0, 1)"
            )
        a = p**g
        b = (1.0 - p) ** g
        s = a + b
        # w = a * s^(-1/g);  w'/w = g/p - (p^(g-1) - (1-p)^(g-1)) / s
        w = self(p)
        res = w * (g / p - (p ** (g - 1.0) - (1.0 - p) ** (g - 1.0)) / s)
        return res[0] if scalar else res

    @property
    def endpoint_slope_finite(self) -> bool:
        return self.gamma == 1.0

    @property
    def is_identity(self) -> bool:
        return self.gamma == 1.0


@dataclass(frozen=True)
class TabulatedMonotone(WeightingFn):
    """Weighting curve given by (p, w) pairs, interpolated monotone-cubically.

    The grid must start at (0, 0), end at (1, 1) and be strictly increasing in
    both coordinates; the shape-preserving cubic keeps the interpolant
    strictly monotone between knots.
    """

    ps: np.ndarray
    ws: np.ndarray
    _interp: PchipInterpolator = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        ps = np.asarray(self.ps, dtype=float)
        ws = np.asarray(self.ws, dtype=float)
        if ps.ndim != 1 or ps.shape != ws.shape or len(ps) < 3:
            raise ValueError("need matching 1-d grids with at least 3 points")
        if ps[0] != 0.0 or ps[-1] != 1.0:
            raise ValueError("p-grid must span [0, 1] exactly")
        if ws[0] != 0.0 or ws[-1] != 1.0:
            raise ValueError("w must satisfy w(0)=0 and w(1)=1 exactly")
        if np.any(np.diff(ps) <= 0):
            raise ValueError("p-grid must be strictly increasing")
        if np.any(np.diff(ws) <= 0):
            raise ValueError("tabulated weights must be strictly increasing")
        object.__setattr__(self, "ps", ps)
        object.__setattr__(self, "ws", ws)
        object.__setattr__(self, "_interp", PchipInterpolator(ps, ws, extrapolate=False))

    def __call__(self, p):
        p = _as_prob(p)
        return self._interp(p)

    def derivative(self, p, step: float = 1e-6):
        """Central finite difference with the step clamped into [0, 1]."""
        p = _as_prob(p)
        lo = np.clip(p - step, 0.0, 1.0)
        hi = np.clip(p + step, 0.0, 1.0)
        return (self._interp(hi) - self._interp(lo)) / (hi - lo)

    @property
    def endpoint_slope_finite(self) -> bool:
        return True


def identity_weighting() -> TverskyKahneman:
    return TverskyKahneman(gamma=1.0)


@dataclass(frozen=True)
class ReverseSReport:
    """Outcome of the reverse-S shape check on a probability grid."""

    monotone: bool
    endpoints_exact: bool
    single_inflection: bool
    slope_at_one_gt_one: bool
    inflection_point: float | None
    monotonicity_violations: int

    @property
    def passed(self) -> bool:
        return (self.monotone and self.endpoints_exact and self.single_inflection
                and self.slope_at_one_gt_one)


def validate_reverse_s(w: WeightingFn, grid_step: float = 1e-3) -> ReverseSReport:
    """Check monotonicity, exact endpoints, a single concave-to-convex switch,
    and slope above one next to p = 1.  Failures are reported, never raised.
    """
    if not (0.0 < grid_step <= 0.01):
        raise ValueError(f"grid_step must lie in (0, 0.01], got {grid_step}")
    n = int(round(1.0 / grid_step))
    p = np.linspace(0.0, 1.0, n + 1)
    vals = w(p)

    d1 = np.diff(vals)
    violations = int(np.sum(d1 <= 0))
    monotone = violations == 0
    endpoints_exact = vals[0] == 0.0 and vals[-1] == 1.0

    # second differences: reverse-S means negative (concave) then positive (convex)
    d2 = np.diff(vals, 2)
    tol = 1e-12 * max(1.0, np.abs(d2).max() if len(d2) else 1.0)
    signs = np.where(d2 > tol, 1, np.where(d2 < -tol, -1, 0))
    nz = signs[signs != 0]
    single_inflection = False
    inflection = None
    if len(nz) > 0 and nz[0] == -1 and nz[-1] == 1:
        flips = np.nonzero(np.diff(nz) != 0)[0]
        if len(flips) == 1:
            single_inflection = True
            neg_idx = np.nonzero(signs == -1)[0]
            inflection = p[neg_idx[-1] + 1]

    slope_end = (vals[-1] - vals[-2]) / grid_step
    slope_gt_one = slope_end > 1.0 + 1e-9

    return ReverseSReport(
        monotone=monotone,
        endpoints_exact=endpoints_exact,
        single_inflection=single_inflection,
        slope_at_one_gt_one=slope_gt_one,
        inflection_point=inflection,
        monotonicity_violations=violations,
    )


def _graded_grid(n: int, power: float = 6.0) -> np.ndarray:
    """Strictly increasing grid on [0,1], clustered at both endpoints.

    Endpoint clustering keeps the interpolation error of curves with
    fractional-power endpoint behaviour (slope diverging like p^(g-1)) far
    below 1e-9 overall.
    """
    u = np.linspace(0.0, 1.0, n)
    uk = u**power
    vk = (1.0 - u)[::-1] ** power  # == uk reversed; kept explicit for clarity
    p = uk / (uk + vk[::-1])
    p[0], p[-1] = 0.0, 1.0
    return p


def dual(w: WeightingFn, n_points: int = 20001) -> TabulatedMonotone:
    """Return p -> 1 - w(1 - p) as a dense tabulated curve.

    The grid is endpoint-graded so the tabulation reproduces the exact dual to
    ~1e-12 even for curves with infinite endpoint slope; ``dual`` is an
    involution to well below 1e-9.
    """
    if n_points < 10_000:
        raise ValueError("dual tabulation needs at least 10^4 grid points")
    p = _graded_grid(n_points)
    vals = 1.0 - w(1.0 - p)
    vals[0], vals[-1] = 0.0, 1.0
    return TabulatedMonotone(ps=p, ws=vals)
