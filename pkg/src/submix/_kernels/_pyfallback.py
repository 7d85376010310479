"""Pure-numpy implementations of the compiled kernels.

Used when the extension module is unavailable (or when the environment
variable SUBMIX_PURE_PYTHON is set). Must agree with _speedups to float64
rounding; the bisection follows the identical branch schedule.
"""

import math

import numpy as np


def renyi_divergence(p, q, alpha):
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p is q or np.shares_memory(p, q):
        return 0.0  # same buffer: identical distributions
    support = p > 0.0
    if np.any(q[support] <= 0.0):
        return math.inf
    ps = p[support]
    qs = q[support]
    acc = float(np.sum(ps**alpha * qs ** (1.0 - alpha)))
    if math.isinf(acc):
        return math.inf
    return max(math.log(acc) / (alpha - 1.0), 0.0)


def max_divergence(p, q):
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p is q or np.shares_memory(p, q):
        return 0.0
    support = p > 0.0
    if np.any(q[support] <= 0.0):
        return math.inf
    best = float(np.max(p[support] / q[support])) if np.any(support) else 0.0
    return max(math.log(best), 0.0)


def sym_renyi_divergence(p, q, alpha):
    return max(renyi_divergence(p, q, alpha), renyi_divergence(q, p, alpha))


def mixture_divergence(lam, a, b, r, alpha, symmetric):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    r = np.asarray(r, dtype=np.float64)
    ma = lam * a + (1.0 - lam) * r
    mb = lam * b + (1.0 - lam) * r
    if symmetric:
        return sym_renyi_divergence(ma, mb, alpha)
    return renyi_divergence(ma, mb, alpha)


def solve_mixing_weight(a, b, r, alpha, beta, symmetric, tol, max_iter):
    if beta == math.inf:
        return 1.0
    if mixture_divergence(1.0, a, b, r, alpha, symmetric) <= beta:
        return 1.0
    if beta <= 0.0:
        return 0.0
    lo, hi = 0.0, 1.0
    for _ in range(max_iter):
        if hi - lo < tol:
            break
        mid = 0.5 * (lo + hi)
        if mixture_divergence(mid, a, b, r, alpha, symmetric) <= beta:
            lo = mid
        else:
            hi = mid
    return lo
