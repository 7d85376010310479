"""Finite-vocabulary probability vectors and the Renyi divergence family.

Every model output and every released prediction in this package is a Pmf
over one shared token vocabulary. Divergences use natural logarithms. The
support convention throughout: terms with p(x) = 0 contribute nothing, and
any x with p(x) > 0 but q(x) = 0 makes the divergence infinite.
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from submix import _kernels
from submix.errors import DimensionError, ParameterError

# Renyi orders are plain floats, strictly greater than 1 (math.inf is only
# meaningful for max_divergence, which is its own operation).
RenyiOrder = float

SUM_TOLERANCE = 1e-9


def check_renyi_order(alpha: float) -> float:
    alpha = float(alpha)
    if not math.isfinite(alpha):
        raise ParameterError("Renyi order must be finite; use max_divergence for the sup form")
    if alpha <= 1.0:
        raise ParameterError(f"Renyi order must be > 1, got {alpha}")
    return alpha


class Pmf:
    """A probability mass function over token ids 0..vocab_size-1.

    The underlying array is float64, nonnegative, and sums to 1 within
    1e-9. Instances are immutable; operations return new Pmfs.
    """

    __slots__ = ("probs",)

    def __init__(self, probs: Sequence[float] | np.ndarray, _checked: bool = False):
        arr = np.ascontiguousarray(probs, dtype=np.float64)
        if arr is probs and arr.flags.writeable:
            arr = arr.copy()  # never freeze caller-owned memory
        if not _checked:
            if arr.ndim != 1 or arr.size == 0:
                raise ParameterError("pmf must be a nonempty 1-d vector")
            if np.any(arr < 0.0) or not np.all(np.isfinite(arr)):
                raise ParameterError("pmf entries must be finite and >= 0")
            total = float(arr.sum())
            if abs(total - 1.0) > SUM_TOLERANCE:
                raise ParameterError(f"pmf entries sum to {total}, not 1")
        arr.flags.writeable = False
        object.__setattr__(self, "probs", arr)

    def __setattr__(self, name, value):
        raise AttributeError("Pmf is immutable")

    @property
    def vocab_size(self) -> int:
        return self.probs.shape[0]

    def __len__(self) -> int:
        return self.probs.shape[0]

    def __getitem__(self, token: int) -> float:
        return float(self.probs[token])

    def __eq__(self, other) -> bool:
        return isinstance(other, Pmf) and np.array_equal(self.probs, other.probs)

    def __repr__(self) -> str:
        return f"Pmf({self.probs.tolist()!r})"

    @staticmethod
    def uniform(vocab_size: int) -> "Pmf":
        if vocab_size < 1:
            raise ParameterError("vocab_size must be >= 1")
        return Pmf(np.full(vocab_size, 1.0 / vocab_size), _checked=True)


def _pair_arrays(p: Pmf, q: Pmf) -> tuple[np.ndarray, np.ndarray]:
    if p.vocab_size != q.vocab_size:
        raise DimensionError(f"vocab sizes differ: {p.vocab_size} vs {q.vocab_size}")
    return p.probs, q.probs


def renyi_divergence(p: Pmf, q: Pmf, alpha: RenyiOrder) -> float:
    """D_alpha(p || q) = ln(sum_x p(x)^alpha q(x)^(1-alpha)) / (alpha - 1)."""
    a, b = _pair_arrays(p, q)
    return _kernels.renyi_divergence(a, b, check_renyi_order(alpha))


def max_divergence(p: Pmf, q: Pmf) -> float:
    """sup over supp(p) of ln p(x) - ln q(x); inf if p escapes supp(q)."""
    a, b = _pair_arrays(p, q)
    return _kernels.max_divergence(a, b)


def sym_renyi_divergence(p: Pmf, q: Pmf, alpha: RenyiOrder) -> float:
    """max of the two directed order-alpha divergences."""
    a, b = _pair_arrays(p, q)
    return _kernels.sym_renyi_divergence(a, b, check_renyi_order(alpha))


def mix(lam: float, p: Pmf, q: Pmf) -> Pmf:
    """Convex combination lam*p + (1-lam)*q.

    The endpoints return the input distribution unchanged (bit-exact), so a
    fully public mixture is literally the public pmf. Interior values are
    renormalized to absorb float drift.
    """
    if not 0.0 <= lam <= 1.0:
        raise ParameterError(f"mixing weight must be in [0, 1], got {lam}")
    a, b = _pair_arrays(p, q)
    if lam == 0.0:
        return q
    if lam == 1.0:
        return p
    out = lam * a + (1.0 - lam) * b
    out /= out.sum()
    return Pmf(out, _checked=True)


def temperature_scale(p: Pmf, tau: float) -> Pmf:
    """Entries proportional to p(x)^(1/tau); zero entries stay zero.

    Computed in log space so extreme temperatures neither underflow nor
    overflow. tau == 1 returns the input unchanged.
    """
    if not (tau > 0.0 and math.isfinite(tau)):
        raise ParameterError(f"temperature must be a positive finite real, got {tau}")
    if tau == 1.0:
        return p
    arr = p.probs
    with np.errstate(divide="ignore"):
        logs = np.log(arr) / tau
    logs -= logs.max()
    out = np.exp(logs)
    out /= out.sum()
    return Pmf(out, _checked=True)


def sample(p: Pmf, rng: np.random.Generator) -> int:
    """Draw one token id by inverse CDF in token-id order.

    The same (seed, pmf) pair always yields the same token. Tokens with
    zero mass are never emitted.
    """
    cdf = np.cumsum(p.probs)
    cdf /= cdf[-1]
    u = rng.random()
    idx = int(np.searchsorted(cdf, u, side="right"))
    return min(idx, p.vocab_size - 1)
