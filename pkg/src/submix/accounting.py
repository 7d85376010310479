"""Privacy-notion arithmetic around the protocol.

Raw conversion formulas (plain floats in, plain floats out), a PrivacyClaim
layer that records how each reported number was derived, the random-stopping
wrapper that turns a variable-length session into a fixed-length one, and
the Fano bound on extraction success.

All logarithms are natural.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from submix.errors import ParameterError
from submix.protocol import Context, Session, SessionTranscript

NOTIONS = ("rop", "partition-rdp", "user-rdp", "group-rdp", "pure-dp", "approx-dp")


def rdp_to_dp(alpha: float, epsilon: float, delta: float) -> float:
    """(alpha, eps)-RDP implies (eps + ln(1/delta)/(alpha-1), delta)-DP."""
    if not alpha > 1.0:
        raise ParameterError("alpha must be > 1")
    if not 0.0 < delta < 1.0:
        raise ParameterError("delta must be in (0, 1)")
    if epsilon < 0.0:
        raise ParameterError("epsilon must be >= 0")
    return epsilon + math.log(1.0 / delta) / (alpha - 1.0)


def partition_to_user(alpha: float, epsilon: float) -> tuple[float, float]:
    """Partition-level (alpha, eps)-RDP gives user-level RDP at order
    alpha/2 with eps scaled by (2*alpha - 3)/(alpha - 2).

    Defined for alpha > 2 (the factor is singular at 2); as alpha grows the
    factor tends to 2, the pure-DP limit.
    """
    if epsilon < 0.0:
        raise ParameterError("epsilon must be >= 0")
    if alpha == math.inf:
        return math.inf, 2.0 * epsilon
    if not alpha > 2.0:
        raise ParameterError("partition-to-user conversion needs alpha > 2")
    factor = (2.0 * alpha - 3.0) / (alpha - 2.0)
    return alpha / 2.0, factor * epsilon


def user_to_partition(alpha: float, epsilon: float, n_users: int, k_parts: int) -> tuple[float, float]:
    """User-level RDP gives partition-level RDP at the same order with eps
    scaled by the group size n/k of a uniform k-partition."""
    if not alpha > 1.0:
        raise ParameterError("alpha must be > 1")
    if epsilon < 0.0:
        raise ParameterError("epsilon must be >= 0")
    if not 1 <= k_parts <= n_users:
        raise ParameterError("need n_users >= k_parts >= 1")
    return alpha, (n_users / k_parts) * epsilon


def group_conversion(epsilon: float, kappa: int) -> float:
    """User-level RDP gives group-level RDP scaled by the group size."""
    if not (isinstance(kappa, (int, np.integer)) and kappa >= 1):
        raise ParameterError("group size must be an integer >= 1")
    if epsilon < 0.0:
        raise ParameterError("epsilon must be >= 0")
    return kappa * epsilon


def random_stopping_epsilon(epsilon: float, B: int, C: float) -> float:
    """Fixed-length budget of a (B, C)-random-stopping wrap: eps + ln(C*B)."""
    _check_rs_domain(B, C)
    if epsilon < 0.0:
        raise ParameterError("epsilon must be >= 0")
    return epsilon + math.log(C * B)


def random_stopping_perplexity_bound(p: float, p_pub: float, C: float) -> float:
    """Post-wrap expected test perplexity is at most
    (1 - 1/(2C)) * p + p_pub / (2C).

    Accepts the C = 1/2 boundary, where the bound degenerates to the public
    perplexity (the wrap always stops immediately).
    """
    if not C >= 0.5:
        raise ParameterError("expansion factor C must be >= 1/2")
    if p < 1.0 or p_pub < 1.0:
        raise ParameterError("perplexities of proper models are >= 1")
    return (1.0 - 1.0 / (2.0 * C)) * p + p_pub / (2.0 * C)


def fano_extractability_bound(kappa: int, epsilon: float, m: int) -> float:
    """Extraction success rate above which no (alpha, eps)-RDP mechanism can
    have memorized a string occurring in at most kappa user corpora, with
    the secret narrowed to m candidates: (kappa*eps + ln 2) / ln m."""
    if not (isinstance(kappa, (int, np.integer)) and kappa >= 1):
        raise ParameterError("kappa must be an integer >= 1")
    if not (isinstance(m, (int, np.integer)) and m >= 2):
        raise ParameterError("need m >= 2 candidates")
    if epsilon < 0.0:
        raise ParameterError("epsilon must be >= 0")
    return (kappa * epsilon + math.log(2.0)) / math.log(m)


def _check_rs_domain(B: int, C: float) -> None:
    if not (isinstance(B, (int, np.integer)) and B >= 1):
        raise ParameterError("response budget B must be an integer >= 1")
    if not C > 0.5:
        raise ParameterError("expansion factor C must be > 1/2")
    if C * B < 1.0:
        raise ParameterError("C*B must be >= 1")


@dataclass(frozen=True)
class PrivacyClaim:
    """A privacy statement plus the chain of rules that produced it.

    Replaying the provenance chain from its initial record reproduces the
    final numbers bit-exactly, so every reported epsilon is auditable.
    """

    notion: str
    epsilon: float
    alpha: float | None = None
    delta: float | None = None
    meta: dict = field(default_factory=dict)
    provenance: tuple[dict, ...] = ()

    def __post_init__(self):
        if self.notion not in NOTIONS:
            raise ParameterError(f"unknown privacy notion {self.notion!r}")
        if self.epsilon < 0.0:
            raise ParameterError("epsilon must be >= 0")
        if self.alpha is not None and not self.alpha > 1.0:
            raise ParameterError("alpha must be > 1 where present")
        if self.delta is not None and not 0.0 < self.delta < 1.0:
            raise ParameterError("delta must be in (0, 1) where present")

    def to_json(self) -> dict:
        return {
            "notion": self.notion,
            "epsilon": self.epsilon,
            "alpha": self.alpha,
            "delta": self.delta,
            "meta": dict(self.meta),
            "provenance": [dict(p) for p in self.provenance],
        }

    @staticmethod
    def from_json(data: dict) -> "PrivacyClaim":
        return PrivacyClaim(
            data["notion"], data["epsilon"], data.get("alpha"), data.get("delta"),
            dict(data.get("meta", {})), tuple(data.get("provenance", ())),
        )


def initial_claim(notion: str, epsilon: float, alpha: float | None = None, **meta) -> PrivacyClaim:
    record = {"rule": "initial", "notion": notion, "epsilon": epsilon, "alpha": alpha}
    record.update(meta)
    return PrivacyClaim(notion, epsilon, alpha, meta=meta, provenance=(record,))


def convert_claim(claim: PrivacyClaim, rule: str, **params) -> PrivacyClaim:
    """Apply one named conversion rule, extending the provenance chain."""
    out = _apply_rule(claim, rule, params)
    record = {"rule": rule, **params}
    return replace(out, provenance=claim.provenance + (record,))


def _apply_rule(claim: PrivacyClaim, rule: str, params: dict) -> PrivacyClaim:
    if rule == "rdp_to_dp":
        eps = rdp_to_dp(claim.alpha, claim.epsilon, params["delta"])
        return PrivacyClaim("approx-dp", eps, None, params["delta"], dict(claim.meta))
    if rule == "partition_to_user":
        alpha, eps = partition_to_user(claim.alpha, claim.epsilon)
        return PrivacyClaim("user-rdp", eps, alpha, None, dict(claim.meta))
    if rule == "user_to_partition":
        alpha, eps = user_to_partition(
            claim.alpha, claim.epsilon, params["n_users"], params["k_parts"]
        )
        meta = dict(claim.meta, n_users=params["n_users"], k_parts=params["k_parts"])
        return PrivacyClaim("partition-rdp", eps, alpha, None, meta)
    if rule == "group":
        eps = group_conversion(claim.epsilon, params["kappa"])
        meta = dict(claim.meta, group_size=params["kappa"])
        return PrivacyClaim("group-rdp", eps, claim.alpha, None, meta)
    if rule == "random_stopping":
        eps = random_stopping_epsilon(claim.epsilon, params["B"], params["C"])
        meta = dict(claim.meta, B=params["B"], C=params["C"])
        return PrivacyClaim("partition-rdp", eps, claim.alpha, None, meta)
    raise ParameterError(f"unknown conversion rule {rule!r}")


def replay_chain(provenance: Sequence[dict]) -> PrivacyClaim:
    """Recompute a claim from its provenance chain (bit-exact audit)."""
    if not provenance or provenance[0].get("rule") != "initial":
        raise ParameterError("provenance chain must start with an initial record")
    head = provenance[0]
    meta = {k: v for k, v in head.items() if k not in ("rule", "notion", "epsilon", "alpha")}
    claim = initial_claim(head["notion"], head["epsilon"], head.get("alpha"), **meta)
    for record in provenance[1:]:
        params = {k: v for k, v in record.items() if k != "rule"}
        claim = convert_claim(claim, record["rule"], **params)
    return claim


@dataclass
class RandomStoppingResult:
    transcript: SessionTranscript
    tau: int  # forced-termination response index drawn by the wrapper
    cb: int  # actual (rounded-up) size of the draw domain
    forced: bool  # True when the wrapper, not the budget, issued the stop


def wrap_random_stopping(
    session: Session,
    queries: Iterable[Context],
    B: int,
    C: float,
    rng: np.random.Generator,
) -> RandomStoppingResult:
    """Run a session under a (B, C)-random-stopping wrap.

    Draws tau uniformly from {1, ..., ceil(C*B)} and forces STOP before the
    tau-th response unless the protocol already stopped on its own. Exactly
    B responses are emitted; the tail after any stop comes from the public
    model. Non-integral C*B is rounded up and the actual domain recorded.
    """
    _check_rs_domain(B, C)
    cb = math.ceil(C * B)
    tau = int(rng.integers(1, cb + 1))
    forced = False
    emitted = 0
    for context in queries:
        if emitted >= B:
            break
        emitted += 1
        if emitted == tau and not session.ledger.stopped:
            session.force_stop()
            forced = True
        session.step(context)
    if emitted < B:
        raise ParameterError(f"query stream ended after {emitted} of {B} responses")
    return RandomStoppingResult(session.transcript, tau, cb, forced)


def claims_to_json(claims: Sequence[PrivacyClaim]) -> str:
    return json.dumps([c.to_json() for c in claims], sort_keys=True, indent=2)
