"""Hot numeric kernels: numba-jitted with a pure-numpy fallback.

The fallback is selected automatically when numba is unavailable, or
explicitly with the environment variable ``CPT_PRICING_NUMBA=0``.  Both lanes
produce bit-identical results (all randomness lives outside these kernels).
"""
import os

import numpy as np

_ENV = os.environ.get("CPT_PRICING_NUMBA", "1").strip().lower()
_WANT_NUMBA = _ENV not in ("0", "false", "no", "off")

if _WANT_NUMBA:
    try:
        from numba import njit
        NUMBA_ENABLED = True
    except ImportError:
        NUMBA_ENABLED = False
else:
    NUMBA_ENABLED = False


def _volterra_march_np(A, B, rhs):
    """Solve G_i - sum_{m<i} [A_m G_{i-m-1} + B_m G_{i-m}] = rhs_i, G_0 = 0.

    A_m, B_m are product-integration weights of the convolution kernel over
    cell m against the two linear hat functions; the system is lower
    triangular and solved by forward substitution.
    """
    n = len(rhs) - 1
    G = np.zeros(n + 1)
    d = 1.0 - B[0]
    for i in range(1, n + 1):
        acc = A[0] * G[i - 1]
        if i >= 2:
            acc += np.dot(A[1:i], G[i - 2::-1]) + np.dot(B[1:i], G[i - 1:0:-1])
        G[i] = (rhs[i] + acc) / d
    return G


def _conv_lower_np(c, x):
    """out[i] = sum_{j<=i} c[i-j] x[j] for i = 0..len(x)-1."""
    return np.convolve(x, c)[: len(x)]


if NUMBA_ENABLED:

    @njit(cache=True)
    def _volterra_march_nb(A, B, rhs):  # pragma: no cover - numba lane
        n = len(rhs) - 1
        G = np.zeros(n + 1)
        d = 1.0 - B[0]
        for i in range(1, n + 1):
            acc = A[0] * G[i - 1]
            for m in range(1, i):
                acc += A[m] * G[i - m - 1] + B[m] * G[i - m]
            G[i] = (rhs[i] + acc) / d
        return G

    @njit(cache=True)
    def _conv_lower_nb(c, x):  # pragma: no cover - numba lane
        n = len(x)
        out = np.zeros(n)
        for i in range(n):
            s = 0.0
            for j in range(i + 1):
                s += c[i - j] * x[j]
            out[i] = s
        return out

    volterra_march = _volterra_march_nb
    conv_lower = _conv_lower_nb
else:
    volterra_march = _volterra_march_np
    conv_lower = _conv_lower_np

# numpy references kept importable for benchmarks regardless of the lane
volterra_march_numpy = _volterra_march_np
conv_lower_numpy = _conv_lower_np
