# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner kernels: divergences and the mixing-weight bisection.

These are the hot loops of the prediction protocol (each step runs several
bisections, each evaluating a divergence between freshly formed mixtures),
so they are kept allocation-free and operate on raw float64 buffers.
Semantics must match submix._kernels._pyfallback exactly.
"""

from libc.math cimport INFINITY, log, pow


cdef inline double _clamp_nonneg(double x):
    # Divergences are >= 0; rounding can produce tiny negatives.
    return x if x > 0.0 else 0.0


cpdef double renyi_divergence(const double[::1] p, const double[::1] q, double alpha):
    cdef Py_ssize_t i, n = p.shape[0]
    cdef double acc = 0.0
    if n > 0 and &p[0] == &q[0]:
        return 0.0  # same buffer: identical distributions
    for i in range(n):
        if p[i] > 0.0:
            if q[i] <= 0.0:
                return INFINITY
            acc += pow(p[i], alpha) * pow(q[i], 1.0 - alpha)
    if acc == INFINITY:
        return INFINITY
    return _clamp_nonneg(log(acc) / (alpha - 1.0))


cpdef double max_divergence(const double[::1] p, const double[::1] q):
    cdef Py_ssize_t i, n = p.shape[0]
    cdef double ratio, best = 0.0
    if n > 0 and &p[0] == &q[0]:
        return 0.0
    for i in range(n):
        if p[i] > 0.0:
            if q[i] <= 0.0:
                return INFINITY
            ratio = p[i] / q[i]
            if ratio > best:
                best = ratio
    return _clamp_nonneg(log(best))


cpdef double sym_renyi_divergence(const double[::1] p, const double[::1] q, double alpha):
    cdef double fwd = renyi_divergence(p, q, alpha)
    cdef double rev = renyi_divergence(q, p, alpha)
    return fwd if fwd >= rev else rev


cdef double _mixture_renyi(double lam, const double[::1] a, const double[::1] b,
                           const double[::1] r, double alpha):
    # D_alpha(lam*a + (1-lam)*r || lam*b + (1-lam)*r) without temporaries.
    cdef Py_ssize_t i, n = a.shape[0]
    cdef double ma, mb, acc = 0.0
    cdef double comp = 1.0 - lam
    for i in range(n):
        ma = lam * a[i] + comp * r[i]
        if ma > 0.0:
            mb = lam * b[i] + comp * r[i]
            if mb <= 0.0:
                return INFINITY
            acc += pow(ma, alpha) * pow(mb, 1.0 - alpha)
    if acc == INFINITY:
        return INFINITY
    return _clamp_nonneg(log(acc) / (alpha - 1.0))


cpdef double mixture_divergence(double lam, const double[::1] a, const double[::1] b,
                                const double[::1] r, double alpha, bint symmetric):
    cdef double fwd = _mixture_renyi(lam, a, b, r, alpha)
    cdef double rev
    if not symmetric:
        return fwd
    rev = _mixture_renyi(lam, b, a, r, alpha)
    return fwd if fwd >= rev else rev


cpdef double solve_mixing_weight(const double[::1] a, const double[::1] b,
                                 const double[::1] r, double alpha, double beta,
                                 bint symmetric, double tol, int max_iter):
    """Largest lam in [0, 1] with mixture_divergence(lam) <= beta, via bisection.

    Relies on the divergence being nondecreasing along the mixing path.
    Endpoints are checked analytically first; the returned value always
    satisfies the constraint (the feasible end of the final bracket).
    """
    cdef double lo, hi, mid
    cdef int it
    if beta == INFINITY:
        return 1.0
    if mixture_divergence(1.0, a, b, r, alpha, symmetric) <= beta:
        return 1.0
    if beta <= 0.0:
        return 0.0
    lo = 0.0
    hi = 1.0
    for it in range(max_iter):
        if hi - lo < tol:
            break
        mid = 0.5 * (lo + hi)
        if mixture_divergence(mid, a, b, r, alpha, symmetric) <= beta:
            lo = mid
        else:
            hi = mid
    return lo
