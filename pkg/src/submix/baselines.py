"""Reference private-prediction baselines.

Subsample-and-aggregate: release the ensemble's average pmf plus
independent per-coordinate Laplace noise. Removing one of the k parts moves
the average by at most 1/k in L1, and since pmf mass is conserved the worst
case concentrates +-1/(2k) on two coordinates; the per-query RDP charge is
therefore twice the order-alpha Renyi divergence between Laplace
distributions shifted by 1/(2k). The shifted-Laplace closed form is the
standard one from the RDP literature (Mironov 2017, Renyi Differential
Privacy); tests validate it against numerical quadrature.

Noisy-argmax (GNMax style): each model votes for its top token; Gaussian
noise is added to the vote histogram and the argmax is released. The charge
is the data-independent Gaussian-mechanism bound alpha * Delta^2 / (2
sigma^2) with vote sensitivity Delta = 1. Because the mechanism releases a
token rather than a pmf, its perplexity can only be bounded from below, via
two upper bounds on the probability that the true token wins the noisy
argmax.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import log_ndtr

from submix.errors import ConfigError, ParameterError
from submix.lm import Context, ModelInterface
from submix.probdist import Pmf, check_renyi_order, sample


@dataclass(frozen=True)
class SAConfig:
    k_parts: int
    laplace_scale: float  # noise scale b
    alpha: float

    def __post_init__(self):
        if self.k_parts < 1:
            raise ParameterError("need k >= 1 models")
        if not self.laplace_scale > 0.0:
            raise ParameterError("laplace scale must be > 0")
        check_renyi_order(self.alpha)


@dataclass(frozen=True)
class GNMaxConfig:
    k_teachers: int
    sigma: float
    alpha: float

    def __post_init__(self):
        if self.k_teachers < 1:
            raise ParameterError("need k >= 1 teachers")
        if not self.sigma > 0.0:
            raise ParameterError("sigma must be > 0")
        check_renyi_order(self.alpha)


def laplace_renyi_divergence(shift: float, scale: float, alpha: float) -> float:
    """Order-alpha Renyi divergence between Laplace(0, b) and Laplace(t, b).

    Closed form (t = |shift|, b = scale, a = alpha):
        (1/(a-1)) * ln( a/(2a-1) * exp((a-1) t/b) + (a-1)/(2a-1) * exp(-a t/b) )
    """
    check_renyi_order(alpha)
    if not scale > 0.0:
        raise ParameterError("scale must be > 0")
    t = abs(shift) / scale
    a = alpha
    # log-space evaluation: the first term explodes for small scales
    log_inner = np.logaddexp(
        math.log(a / (2 * a - 1)) + (a - 1) * t,
        math.log((a - 1) / (2 * a - 1)) - a * t,
    )
    return max(float(log_inner) / (a - 1), 0.0)


def sa_rdp_charge(alpha: float, k_parts: int, scale: float) -> float:
    """Per-query charge: worst-case mass-conserving 1/k shift split as
    +-1/(2k) over two coordinates, composed across the two coordinates."""
    return 2.0 * laplace_renyi_divergence(1.0 / (2.0 * k_parts), scale, alpha)


@dataclass(frozen=True)
class SAPrediction:
    released: Pmf  # clamped + renormalized, safe to sample
    charge: float
    average: np.ndarray  # noise-free ensemble average
    raw_release: np.ndarray  # average + noise, before clamping


def sa_predict(
    models: Sequence[ModelInterface],
    context: Context,
    cfg: SAConfig,
    rng: np.random.Generator,
) -> SAPrediction:
    """Average the ensemble pmfs, add Laplace(b) noise per coordinate.

    The privacy charge is computed for the pre-clamping release; the clamp
    and renormalization that make the vector sampleable are post-processing.
    """
    if len(models) != cfg.k_parts:
        raise ConfigError(f"expected {cfg.k_parts} models, got {len(models)}")
    avg = np.mean([m.next_token_pmf(context).probs for m in models], axis=0)
    raw = avg + rng.laplace(0.0, cfg.laplace_scale, size=avg.shape)
    clamped = np.clip(raw, 0.0, None)
    total = clamped.sum()
    if total <= 0.0:
        released = Pmf.uniform(avg.shape[0])  # all-negative draw: nothing survives the clamp
    else:
        released = Pmf(clamped / total, _checked=True)
    return SAPrediction(released, sa_rdp_charge(cfg.alpha, cfg.k_parts, cfg.laplace_scale), avg, raw)


def gnmax_rdp_charge(alpha: float, sigma: float) -> float:
    """Gaussian mechanism bound at vote sensitivity 1: alpha / (2 sigma^2)."""
    check_renyi_order(alpha)
    if not sigma > 0.0:
        raise ParameterError("sigma must be > 0")
    return alpha / (2.0 * sigma**2)


@dataclass(frozen=True)
class GNMaxPrediction:
    token: int
    charge: float
    votes: np.ndarray  # pre-noise vote histogram


def vote_histogram(models: Sequence[ModelInterface], context: Context) -> np.ndarray:
    """Each model votes for its argmax token (lowest id wins ties)."""
    vocab = models[0].vocab_size
    votes = np.zeros(vocab)
    for m in models:
        votes[int(np.argmax(m.next_token_pmf(context).probs))] += 1
    return votes


def gnmax_predict(
    models: Sequence[ModelInterface],
    context: Context,
    cfg: GNMaxConfig,
    rng: np.random.Generator,
) -> GNMaxPrediction:
    if len(models) != cfg.k_teachers:
        raise ConfigError(f"expected {cfg.k_teachers} teachers, got {len(models)}")
    votes = vote_histogram(models, context)
    noisy = votes + rng.normal(0.0, cfg.sigma, size=votes.shape)
    return GNMaxPrediction(int(np.argmax(noisy)), gnmax_rdp_charge(cfg.alpha, cfg.sigma), votes)


def gnmax_perplexity_lower_bound(votes: Sequence[float], true_token: int, sigma: float) -> float:
    """Lower bound on -ln q_x where q_x is the probability that the noisy
    argmax returns the true token x.

    Two upper bounds on q_x are combined:
      * 1 / |{z : votes[z] >= votes[x]}|  (x cannot beat the crowd above it)
      * Pr[N(votes[x] - votes[z*], 2 sigma^2) >= 0]  with z* the strongest
        other token (x must at least beat z*).
    Returns -ln of the smaller one, computed in log space so lopsided vote
    gaps do not underflow.
    """
    if not sigma > 0.0:
        raise ParameterError("sigma must be > 0")
    votes = np.asarray(votes, dtype=np.float64)
    if votes.ndim != 1 or votes.shape[0] < 2:
        raise ParameterError("need a vote histogram over at least 2 tokens")
    if np.any(votes < 0):
        raise ParameterError("votes must be nonnegative")
    if not 0 <= true_token < votes.shape[0]:
        raise ParameterError("true token outside the histogram")
    n_x = votes[true_token]
    ge = int(np.sum(votes >= n_x))
    bound1_neg_log = math.log(ge)
    others = np.delete(votes, true_token)
    gap = float(n_x - others.max())
    bound2_neg_log = -float(log_ndtr(gap / (sigma * math.sqrt(2.0))))
    return max(bound1_neg_log, bound2_neg_log)


@dataclass
class BaselineStep:
    t: int
    context_hash: str
    token: int
    charge: float
    remaining: float
    stopped: bool


@dataclass
class BaselineTranscript:
    """Same JSON-lines schema as the protocol transcript, with a mechanism
    tag; the per-part fields collapse to the single shared budget."""

    mechanism: str
    epsilon: float
    alpha: float
    steps: list[BaselineStep] = field(default_factory=list)
    stop_index: int | None = None

    def tokens(self) -> list[int]:
        return [s.token for s in self.steps]

    def to_jsonl(self) -> str:
        import json

        lines = []
        for s in self.steps:
            lines.append(json.dumps({
                "t": s.t,
                "context_hash": s.context_hash,
                "mechanism": self.mechanism,
                "lambda_star": None,
                "lambdas": [],
                "charges": [s.charge],
                "remaining": [s.remaining],
                "token": s.token,
                "stopped": s.stopped,
            }, sort_keys=True))
        return "".join(line + "\n" for line in lines)


class BaselineSession:
    """Adaptive composition for the baselines, mirroring the protocol's
    session shape: per-query charges accumulate against one total budget,
    and exhaustion switches all later answers to the public model."""

    def __init__(
        self,
        mechanism: str,
        models: Sequence[ModelInterface],
        public: ModelInterface,
        cfg: SAConfig | GNMaxConfig,
        epsilon: float,
        rng: np.random.Generator,
    ):
        if mechanism not in ("sa", "gnmax"):
            raise ConfigError(f"unknown baseline mechanism {mechanism!r}")
        if epsilon < 0.0:
            raise ParameterError("epsilon must be >= 0")
        self.mechanism = mechanism
        self.models = list(models)
        self.public = public
        self.cfg = cfg
        self.remaining = epsilon
        self.stopped = False
        self.rng = rng
        self.transcript = BaselineTranscript(mechanism, epsilon, cfg.alpha)

    def step(self, context: Context) -> BaselineStep:
        from submix.protocol import context_hash

        t = len(self.transcript.steps) + 1
        chash = context_hash(context)
        if self.stopped:
            token = sample(self.public.next_token_pmf(context), self.rng)
            step = BaselineStep(t, chash, token, 0.0, self.remaining, True)
            self.transcript.steps.append(step)
            return step
        if self.mechanism == "sa":
            pred = sa_predict(self.models, context, self.cfg, self.rng)
            charge = pred.charge
            token = sample(pred.released, self.rng)
        else:
            pred = gnmax_predict(self.models, context, self.cfg, self.rng)
            charge = pred.charge
            token = pred.token
        self.remaining -= charge
        if self.remaining > 0.0:
            step = BaselineStep(t, chash, token, charge, self.remaining, False)
        else:
            self.stopped = True
            self.transcript.stop_index = t
            token = sample(self.public.next_token_pmf(context), self.rng)
            step = BaselineStep(t, chash, token, charge, self.remaining, True)
        self.transcript.steps.append(step)
        return step


def baseline_session(
    mechanism: str,
    models: Sequence[ModelInterface],
    public: ModelInterface,
    cfg: SAConfig | GNMaxConfig,
    epsilon: float,
    queries: Sequence[Context],
    rng: np.random.Generator,
) -> BaselineTranscript:
    session = BaselineSession(mechanism, models, public, cfg, epsilon, rng)
    for context in queries:
        session.step(context)
    return session.transcript
