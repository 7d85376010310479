"""The private prediction protocol: per-part mixing weights, ensemble
mixing with the public model, leave-one-out divergence charging, and the
permanent STOP fallback.

One prediction step, given a context:

1. If the session already stopped, answer from the (temperature-scaled)
   public model and charge nothing.
2. Each part averages its two subpart models into h_bar_i and solves for
   the largest mixing weight lambda_i whose pair mixture stays within the
   per-query leakage target beta. lambda* is the mean of the lambda_i; the
   answer distribution is lambda* * mean(h_bar_i) + (1 - lambda*) * public.
3. Each part is charged the symmetric Renyi divergence between the
   (temperature-scaled) answer distribution and the same construction with
   that part left out. Charges are subtracted from the per-part budgets.
4. If every remaining budget is still strictly positive the token is
   sampled from the answer distribution; otherwise the session stops for
   good and this and all later tokens come from the public model.

Budgets are debited before the positivity check, so the query that
overshoots is itself answered publicly and its private distribution is
never released.

Temperature scaling is applied before sampling AND before charging, so the
accounting always covers the exact distribution being released. The
default tau=1 leaves distributions untouched.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from submix import _kernels
from submix.corpus import Partition, UserCorpus, make_partition
from submix.errors import ConfigError, ParameterError
from submix.lm import Context, ModelInterface, NGramModel, fine_tune
from submix.probdist import Pmf, check_renyi_order, sample, temperature_scale

LAMBDA_TOL = 1e-6
LAMBDA_MAX_ITER = 40


def optimize_lambda(
    h_a: Pmf,
    h_b: Pmf,
    h_pub: Pmf,
    alpha: float,
    beta: float,
    mode: str = "symmetric",
    tol: float = LAMBDA_TOL,
) -> float:
    """Largest lambda in [0,1] whose two pair mixtures with the public pmf
    stay within divergence beta of each other.

    The constraint function is nondecreasing in lambda and zero at
    lambda=0, so bisection applies: endpoints are checked analytically,
    then at most 40 halvings or until the bracket is narrower than tol.
    The returned weight always satisfies the constraint. In symmetric mode
    (the default) the constraint is the max of both divergence directions;
    directed mode uses only D(mix_a || mix_b).

    Callers guarantee h_pub is strictly positive.
    """
    if beta < 0.0:
        raise ParameterError("beta must be >= 0")
    if not tol > 0.0:
        raise ParameterError("tol must be > 0")
    if mode not in ("symmetric", "directed"):
        raise ParameterError(f"unknown lambda mode {mode!r}")
    check_renyi_order(alpha)
    return _kernels.solve_mixing_weight(
        h_a.probs, h_b.probs, h_pub.probs, alpha, beta,
        mode == "symmetric", tol, LAMBDA_MAX_ITER,
    )


@dataclass
class SubMixEnsemble:
    """k pairs of fine-tuned models plus the shared public model."""

    pairs: list[tuple[ModelInterface, ModelInterface]]
    public: ModelInterface
    partition: Partition | None = None

    def __post_init__(self):
        if len(self.pairs) < 2:
            raise ConfigError("need at least 2 parts")
        sizes = {self.public.vocab_size}
        for a, b in self.pairs:
            sizes.add(a.vocab_size)
            sizes.add(b.vocab_size)
        if len(sizes) != 1:
            raise ConfigError(f"models disagree on vocab size: {sorted(sizes)}")

    @property
    def k(self) -> int:
        return len(self.pairs)

    @property
    def vocab_size(self) -> int:
        return self.public.vocab_size


def train_ensemble(
    public_model: NGramModel,
    users: Sequence[UserCorpus],
    k: int,
    seed: int,
    weight: float = 10.0,
) -> SubMixEnsemble:
    """Random k-fold partition of the users, two subparts per part, one
    fine-tuned model per subpart."""
    partition = make_partition(users, k, seed)
    by_id = {u.user_id: u for u in users}
    pairs = []
    for part in partition.parts:
        h_a = fine_tune(public_model, [by_id[uid] for uid in part.first], weight)
        h_b = fine_tune(public_model, [by_id[uid] for uid in part.second], weight)
        pairs.append((h_a, h_b))
    return SubMixEnsemble(pairs, public_model, partition)


@dataclass
class PrivacyLedger:
    """Per-part remaining budgets plus the protocol's STOP flag.

    beta defaults to epsilon / query_budget when a query budget is
    declared; otherwise it must be given explicitly.
    """

    k: int
    alpha: float
    epsilon: float
    beta: float | None = None
    query_budget: int | None = None
    remaining: list[float] = field(init=False)
    stopped: bool = field(default=False, init=False)
    queries_answered: int = field(default=0, init=False)

    def __post_init__(self):
        check_renyi_order(self.alpha)
        if self.k < 2:
            raise ParameterError("ledger needs k >= 2 parts")
        if self.epsilon < 0.0:
            raise ParameterError("epsilon must be >= 0")
        if self.beta is None:
            if self.query_budget is None:
                raise ParameterError("set beta explicitly or declare a query budget")
            if self.query_budget < 1:
                raise ParameterError("query budget must be >= 1")
            self.beta = self.epsilon / self.query_budget
        if self.beta < 0.0:
            raise ParameterError("beta must be >= 0")
        self.remaining = [self.epsilon] * self.k

    def apply_charges(self, charges: Sequence[float]) -> None:
        if len(charges) != self.k:
            raise ConfigError("charge vector length != k")
        if any(c < 0 for c in charges):
            raise ParameterError("charges must be >= 0")
        for i, c in enumerate(charges):
            self.remaining[i] -= c

    def all_positive(self) -> bool:
        return all(r > 0.0 for r in self.remaining)

    def mark_stopped(self) -> None:
        self.stopped = True


@dataclass(frozen=True)
class StepOutcome:
    """Everything observable about one answered query."""

    token: int
    pmf: Pmf  # the exact distribution the token was sampled from
    lambda_star: float
    lambdas: tuple[float, ...]
    charges: tuple[float, ...]
    remaining: tuple[float, ...]
    stop_issued: bool  # True only on the step that triggered STOP
    stopped: bool  # True from the triggering step onward


def predict_step(
    ensemble: SubMixEnsemble,
    ledger: PrivacyLedger,
    context: Context,
    rng: np.random.Generator,
    temperature: float = 1.0,
    lambda_mode: str = "symmetric",
    tol: float = LAMBDA_TOL,
) -> StepOutcome:
    """One protocol step; see the module docstring for the exact semantics.

    Consumes exactly one random draw (the token sample) regardless of
    branch, so seeded replays stay aligned across corpora.
    """
    k = ensemble.k
    if ledger.k != k:
        raise ConfigError(f"ledger has k={ledger.k} but ensemble has k={k}")
    pub = ensemble.public.next_token_pmf(context)
    ledger.queries_answered += 1

    if ledger.stopped:
        pmf = temperature_scale(pub, temperature)
        token = sample(pmf, rng)
        zeros = (0.0,) * k
        return StepOutcome(token, pmf, 0.0, zeros, zeros, tuple(ledger.remaining), False, True)

    alpha, beta = ledger.alpha, ledger.beta
    hbars: list[Pmf] = []
    lambdas: list[float] = []
    for h_a, h_b in ensemble.pairs:
        pa = h_a.next_token_pmf(context)
        pb = h_b.next_token_pmf(context)
        hbars.append(Pmf(0.5 * (pa.probs + pb.probs), _checked=True))
        # beta = 0 is the degenerate operating point: every part falls back
        # fully to the public model, even those whose paired models happen
        # to agree bitwise (where the weight search alone would allow 1).
        lam = 0.0 if beta == 0.0 else optimize_lambda(pa, pb, pub, alpha, beta, lambda_mode, tol)
        lambdas.append(lam)

    lambda_star = sum(lambdas) / k
    hbar_mean = sum(h.probs for h in hbars) / k
    answer = _mix_arrays(lambda_star, hbar_mean, pub.probs)
    answer_scaled = temperature_scale(Pmf(answer, _checked=True), temperature)

    charges = []
    for i in range(k):
        lam_loo = sum(lam for j, lam in enumerate(lambdas) if j != i) / (k - 1)
        hbar_loo = sum(h.probs for j, h in enumerate(hbars) if j != i) / (k - 1)
        loo = temperature_scale(Pmf(_mix_arrays(lam_loo, hbar_loo, pub.probs), _checked=True), temperature)
        charges.append(_kernels.sym_renyi_divergence(answer_scaled.probs, loo.probs, alpha))
    ledger.apply_charges(charges)

    if ledger.all_positive():
        token = sample(answer_scaled, rng)
        return StepOutcome(
            token, answer_scaled, lambda_star, tuple(lambdas), tuple(charges),
            tuple(ledger.remaining), False, False,
        )
    ledger.mark_stopped()
    pmf = temperature_scale(pub, temperature)
    token = sample(pmf, rng)
    return StepOutcome(
        token, pmf, lambda_star, tuple(lambdas), tuple(charges),
        tuple(ledger.remaining), True, True,
    )


def _mix_arrays(lam: float, top: np.ndarray, base: np.ndarray) -> np.ndarray:
    # lam in {0, 1} must be bit-exact so that a beta=0 session releases the
    # public distribution literally.
    if lam == 0.0:
        return base
    if lam == 1.0:
        return top
    out = lam * top + (1.0 - lam) * base
    return out / out.sum()


@dataclass
class TranscriptStep:
    t: int
    context_hash: str
    lambda_star: float
    lambdas: tuple[float, ...]
    charges: tuple[float, ...]
    remaining: tuple[float, ...]
    token: int
    stopped: bool

    def to_json(self) -> dict:
        return {
            "t": self.t,
            "context_hash": self.context_hash,
            "lambda_star": self.lambda_star,
            "lambdas": list(self.lambdas),
            "charges": list(self.charges),
            "remaining": list(self.remaining),
            "token": self.token,
            "stopped": self.stopped,
        }


@dataclass
class SessionTranscript:
    """Ordered audit trail of a prediction session."""

    alpha: float
    epsilon: float
    beta: float
    tau: float
    k: int
    steps: list[TranscriptStep] = field(default_factory=list)
    stop_index: int | None = None  # 1-based step at which STOP was issued

    def record(self, outcome: StepOutcome, context: Context) -> None:
        t = len(self.steps) + 1
        if outcome.stop_issued and self.stop_index is None:
            self.stop_index = t
        self.steps.append(
            TranscriptStep(
                t, context_hash(context), outcome.lambda_star, outcome.lambdas,
                outcome.charges, outcome.remaining, outcome.token, outcome.stopped,
            )
        )

    def tokens(self) -> list[int]:
        return [s.token for s in self.steps]

    def released_charge_totals(self) -> list[float]:
        """Per-part charge sums over released private responses only.

        The step that triggered STOP is excluded: its would-be private
        answer was never released (the response fell back to the public
        model), so its overshooting charge is not counted as leakage.
        """
        cutoff = self.stop_index if self.stop_index is not None else len(self.steps) + 1
        totals = [0.0] * self.k
        for step in self.steps:
            if step.t < cutoff:
                for i, c in enumerate(step.charges):
                    totals[i] += c
        return totals

    def to_jsonl(self) -> str:
        return "".join(json.dumps(s.to_json(), sort_keys=True) + "\n" for s in self.steps)

    def write_jsonl(self, path: str | Path) -> None:
        Path(path).write_text(self.to_jsonl(), encoding="utf-8")


def context_hash(context: Context) -> str:
    raw = ",".join(str(int(t)) for t in context)
    return hashlib.sha256(raw.encode("ascii")).hexdigest()[:16]


class Session:
    """Single-writer stateful wrapper: one ledger, one rng, one transcript."""

    def __init__(
        self,
        ensemble: SubMixEnsemble,
        ledger: PrivacyLedger,
        rng: np.random.Generator,
        temperature: float = 1.0,
        lambda_mode: str = "symmetric",
    ):
        self.ensemble = ensemble
        self.ledger = ledger
        self.rng = rng
        self.temperature = temperature
        self.lambda_mode = lambda_mode
        self.transcript = SessionTranscript(
            ledger.alpha, ledger.epsilon, ledger.beta, temperature, ensemble.k
        )

    def step(self, context: Context) -> StepOutcome:
        outcome = predict_step(
            self.ensemble, self.ledger, context, self.rng,
            self.temperature, self.lambda_mode,
        )
        self.transcript.record(outcome, context)
        return outcome

    def force_stop(self) -> None:
        """External termination: all later queries are answered publicly."""
        if not self.ledger.stopped:
            self.ledger.mark_stopped()
            if self.transcript.stop_index is None:
                self.transcript.stop_index = len(self.transcript.steps) + 1


QueryStream = Iterable[Context] | Callable[[list[StepOutcome]], Context | None]


def run_session(
    ensemble: SubMixEnsemble,
    ledger: PrivacyLedger,
    query_stream: QueryStream,
    rng: np.random.Generator,
    temperature: float = 1.0,
    lambda_mode: str = "symmetric",
) -> SessionTranscript:
    """Drive a full session over a fixed or adaptive query stream.

    An adaptive stream is a callable receiving the outcomes so far and
    returning the next context, or None to finish.
    """
    session = Session(ensemble, ledger, rng, temperature, lambda_mode)
    outcomes: list[StepOutcome] = []
    if callable(query_stream):
        while True:
            context = query_stream(outcomes)
            if context is None:
                break
            outcomes.append(session.step(context))
    else:
        for context in query_stream:
            outcomes.append(session.step(context))
    return session.transcript
