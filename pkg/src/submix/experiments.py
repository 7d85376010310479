"""Perplexity evaluation, the privacy-utility sweep harness, and the
secret-code extraction attack.

Perplexity of a protocol session is measured on the pre-sampling pmf of
each step (the budget accounting still runs exactly as in live operation;
only the scoring peeks at the distribution instead of the sampled token).

The extraction attack plants m random ell-digit codes, one per user, trains
an ensemble whose model order spans the prompt plus the full code, and then
asks the protocol to complete the prompt g times. The hit rate counts
generated codes that exactly match a planted code. The public model for
this experiment is trained on one sentence per possible code, so its
next-digit predictions are uniform at every depth and a public-only
attacker succeeds only at the m/10^ell chance level.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from submix import corpus as corpus_mod
from submix.accounting import fano_extractability_bound
from submix.baselines import (
    GNMaxConfig,
    SAConfig,
    gnmax_perplexity_lower_bound,
    gnmax_rdp_charge,
    sa_rdp_charge,
    vote_histogram,
)
from submix.corpus import UserCorpus, Vocab
from submix.errors import ConfigError, ParameterError
from submix.lm import ModelInterface, NGramModel, fine_tune, pretrain
from submix.protocol import PrivacyLedger, Session, SubMixEnsemble, train_ensemble


@dataclass
class PerplexityReport:
    mechanism: str
    epsilon: float | None
    alpha: float | None
    query_budget: int | None
    mean_perplexity: float
    per_sample: list[float]
    tokens_evaluated: int


def perplexity(
    subject: ModelInterface | Session,
    heldout: Sequence[Sequence[int]],
    context_window: int,
    mechanism: str = "model",
    epsilon: float | None = None,
    alpha: float | None = None,
    query_budget: int | None = None,
) -> PerplexityReport:
    """Mean over samples of exp(mean negative log-likelihood per token).

    Contexts are truncated to the last context_window tokens. A session
    subject is queried token by token (teacher forcing); the charge side
    effects are identical to answering the same queries live.
    """
    if context_window < 1:
        raise ParameterError("context window must be >= 1")
    if isinstance(subject, Session):
        def pmf_for(ctx):
            return subject.step(ctx).pmf
    else:
        def pmf_for(ctx):
            return subject.next_token_pmf(ctx)

    per_sample = []
    tokens = 0
    for seq in heldout:
        seq = list(seq)
        if not seq:
            continue
        nll = 0.0
        for i, true_token in enumerate(seq):
            ctx = seq[max(0, i - context_window) : i]
            p = pmf_for(ctx)[true_token]
            nll += -math.log(p) if p > 0.0 else math.inf
            tokens += 1
        per_sample.append(math.exp(nll / len(seq)))
    if not per_sample:
        raise ParameterError("heldout set is empty")
    mean = float(np.mean(per_sample))
    return PerplexityReport(mechanism, epsilon, alpha, query_budget, mean, per_sample, tokens)


# ---------------------------------------------------------------------------
# sweep harness
# ---------------------------------------------------------------------------

SWEEP_COLUMNS = ("mechanism", "epsilon", "alpha", "B", "k", "beta", "perplexity", "tokens", "seed")


@dataclass(frozen=True)
class SweepPoint:
    mechanism: str  # submix | public | ensemble | sa | gnmax
    epsilon: float = math.inf
    alpha: float = 2.0
    k: int | None = None
    beta: float | None = None  # None -> epsilon / B
    tau: float = 1.0
    laplace_scale: float = 0.1
    sigma: float = 1.0
    seed: int = 0


@dataclass
class SweepDesign:
    """Everything a grid point needs to build its models and data."""

    build: Callable[[int], tuple[list[Sequence[int]], list[UserCorpus], list[Sequence[int]]]]
    # seed -> (public docs, users, heldout sequences)
    vocab_size: int
    order: int = 3
    k_add: float = 0.1
    weight: float = 10.0
    k_parts: int = 4
    context_window: int = 32


def run_sweep_point(design: SweepDesign, point: SweepPoint) -> dict:
    public_docs, users, heldout = design.build(point.seed)
    budget = sum(len(s) for s in heldout)
    k = point.k or design.k_parts
    public = pretrain(public_docs, design.order, design.vocab_size, design.k_add)
    rng = np.random.default_rng((point.seed, 0xB0D9E7))

    if point.mechanism == "public":
        report = perplexity(public, heldout, design.context_window, "public")
        beta = 0.0
        row_epsilon = 0.0  # the public model answers are trivially private
    elif point.mechanism in ("submix", "ensemble"):
        epsilon = math.inf if point.mechanism == "ensemble" else point.epsilon
        beta = math.inf if point.mechanism == "ensemble" else point.beta
        ensemble = train_ensemble(public, users, k, point.seed, design.weight)
        ledger = PrivacyLedger(k, point.alpha, epsilon, beta, budget)
        beta = ledger.beta
        session = Session(ensemble, ledger, rng, point.tau)
        report = perplexity(session, heldout, design.context_window, point.mechanism,
                            epsilon, point.alpha, budget)
        row_epsilon = epsilon
    elif point.mechanism in ("sa", "gnmax"):
        report, beta = _baseline_sweep_point(design, point, public, users, heldout, k, rng, budget)
        row_epsilon = point.epsilon
    else:
        raise ConfigError(f"unknown sweep mechanism {point.mechanism!r}")

    return {
        "mechanism": point.mechanism,
        "epsilon": row_epsilon,
        "alpha": point.alpha,
        "B": budget,
        "k": k,
        "beta": beta,
        "perplexity": report.mean_perplexity,
        "tokens": report.tokens_evaluated,
        "seed": point.seed,
    }


def _baseline_sweep_point(design, point, public, users, heldout, k, rng, budget):
    """Per-part models (subparts merged), scored under adaptive composition.

    Mirrors the protocol's overshoot rule: the budget is debited first and
    the query that drives it nonpositive is already answered publicly. The
    GNMax rows score the released-token perplexity lower bound (the
    mechanism has no released pmf to score directly).
    """
    from submix.baselines import sa_predict
    from submix.corpus import make_partition

    by_id = {u.user_id: u for u in users}
    partition = make_partition(users, k, point.seed)
    models = [
        fine_tune(public, [by_id[uid] for uid in part.all_users()], design.weight)
        for part in partition.parts
    ]
    if point.mechanism == "sa":
        cfg = SAConfig(k, point.laplace_scale, point.alpha)
        per_query = sa_rdp_charge(point.alpha, k, point.laplace_scale)
    else:
        cfg = GNMaxConfig(k, point.sigma, point.alpha)
        per_query = gnmax_rdp_charge(point.alpha, point.sigma)

    remaining = point.epsilon
    stopped = False
    per_sample = []
    tokens = 0
    for seq in heldout:
        seq = list(seq)
        if not seq:
            continue
        nll = 0.0
        for i, true_token in enumerate(seq):
            ctx = seq[max(0, i - design.context_window) : i]
            tokens += 1
            if not stopped:
                remaining -= per_query
                if remaining <= 0.0:
                    stopped = True  # overshooting query falls back to public
            if stopped:
                nll += -math.log(public.next_token_pmf(ctx)[true_token])
            elif point.mechanism == "sa":
                pred = sa_predict(models, ctx, cfg, rng)
                p = pred.released[true_token]
                nll += -math.log(p) if p > 0 else math.inf
            else:
                votes = vote_histogram(models, ctx)
                nll += gnmax_perplexity_lower_bound(votes, true_token, point.sigma)
        per_sample.append(math.exp(nll / len(seq)))
    report = PerplexityReport(point.mechanism, point.epsilon, point.alpha, budget,
                              float(np.mean(per_sample)), per_sample, tokens)
    return report, per_query


def run_sweep(design: SweepDesign, points: Sequence[SweepPoint]) -> list[dict]:
    return [run_sweep_point(design, p) for p in points]


def _csv_cell(value) -> str:
    if isinstance(value, float):
        if math.isinf(value):
            return "inf"
        return repr(value)
    return str(value)


def write_sweep_csv(rows: Sequence[dict], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(SWEEP_COLUMNS)
        for row in rows:
            writer.writerow([_csv_cell(row[c]) for c in SWEEP_COLUMNS])


def write_sweep_json(rows: Sequence[dict], path: str | Path) -> None:
    Path(path).write_text(json.dumps(list(rows), sort_keys=True, indent=2), encoding="utf-8")


def pattern_corpus_design(
    n_users: int = 16,
    k_parts: int = 4,
    letters: str = "abcdefgh",
    doc_len: int = 32,
    noise_rate: float = 0.08,
    public_len: int = 2048,
    heldout_samples: int = 4,
    heldout_len: int = 32,
    order: int = 3,
    k_add: float = 0.1,
    weight: float = 10.0,
    window: int = 32,
) -> SweepDesign:
    """Synthetic corpus where private fine-tuning provably helps.

    Users write the same cyclic letter pattern (with a sprinkle of
    user-specific noise so subpart models disagree a little); the public
    corpus is uniform letter noise; heldout samples are clean pattern. An
    order-n model fine-tuned on the users therefore predicts heldout tokens
    far better than the public model at every position.
    """
    vocab = corpus_mod.build_vocab([letters], "character")
    letter_ids = [vocab.id_of(c) for c in letters]
    period = len(letter_ids)

    def cycle(start: int, length: int) -> list[int]:
        return [letter_ids[(start + i) % period] for i in range(length)]

    def build(seed: int):
        rng = np.random.default_rng((seed, 0x5EED))
        public_docs = [[letter_ids[i] for i in rng.integers(0, period, size=public_len)]]
        users = []
        for u in range(n_users):
            doc = cycle(int(rng.integers(0, period)), doc_len)
            for pos in range(doc_len):
                if rng.random() < noise_rate:
                    doc[pos] = letter_ids[int(rng.integers(0, period))]
            users.append(UserCorpus(f"user-{u:03d}", (tuple(doc),)))
        heldout = [
            cycle(int(rng.integers(0, period)), heldout_len) for _ in range(heldout_samples)
        ]
        return public_docs, users, heldout

    return SweepDesign(
        build, vocab.size, order=order, k_add=k_add, weight=weight,
        k_parts=k_parts, context_window=window,
    )


# ---------------------------------------------------------------------------
# extraction attack
# ---------------------------------------------------------------------------


@dataclass
class AttackReport:
    generations: int
    hits: int
    hit_rate: float
    code_length: int
    num_codes: int
    k_parts: int
    epsilon: float
    alpha: float
    per_code_hits: dict[str, int]
    fano_beta_max: float | None
    public_fallback_generations: int
    stop_index: int | None

    def to_json(self) -> dict:
        data = dict(self.__dict__)
        data["epsilon"] = "inf" if math.isinf(self.epsilon) else self.epsilon
        return data


def extraction_attack(
    session_factory: Callable[[], Session],
    prompt_ids: Sequence[int],
    secret_codes: Sequence[str],
    vocab: Vocab,
    code_length: int,
    generations: int,
    session_mode: str = "shared",
) -> AttackReport:
    """Generate `generations` completions of code_length tokens each and
    count exact matches against the secret codes.

    session_mode "shared" reuses one session (and one budget) for all
    generations, modelling an API adversary; "fresh" rebuilds the session
    per generation.
    """
    if session_mode not in ("shared", "fresh"):
        raise ParameterError(f"unknown session mode {session_mode!r}")
    secrets = set(secret_codes)
    per_code = {code: 0 for code in secret_codes}
    hits = 0
    fallback_gens = 0
    session = session_factory() if session_mode == "shared" else None
    stop_index = None
    for _ in range(generations):
        if session_mode == "fresh":
            session = session_factory()
        context = list(prompt_ids)
        used_fallback = False
        for _ in range(code_length):
            outcome = session.step(context)
            context.append(outcome.token)
            used_fallback = used_fallback or outcome.stopped
        generated = "".join(vocab.token(t) for t in context[len(prompt_ids):])
        if generated in secrets:
            hits += 1
            per_code[generated] += 1
        if used_fallback:
            fallback_gens += 1
        if session.transcript.stop_index is not None:
            stop_index = session.transcript.stop_index
    ledger = session.ledger
    fano = None
    if math.isfinite(ledger.epsilon):
        fano = fano_extractability_bound(1, ledger.epsilon, max(len(secrets), 2))
    return AttackReport(
        generations, hits, hits / generations, code_length, len(secret_codes),
        session.ensemble.k, ledger.epsilon, ledger.alpha, per_code, fano,
        fallback_gens, stop_index,
    )


@dataclass
class CodeAttackSetup:
    """Prebuilt pieces of a secret-code extraction run."""

    vocab: Vocab
    prompt_ids: tuple[int, ...]
    secret_codes: list[str]
    public: NGramModel
    ensemble: SubMixEnsemble


def build_code_attack(
    m: int,
    ell: int,
    k_parts: int,
    seed: int,
    weight: float = 1000.0,
    k_add: float = 0.1,
    template: str = corpus_mod.DEFAULT_CODE_TEMPLATE,
) -> CodeAttackSetup:
    """Corpus, public model, and ensemble for the code-extraction game.

    The model order is prompt-plus-code so that each subpart model
    memorizes its user's full code by construction; the public corpus
    enumerates every possible code once, which makes the public model's
    digit predictions uniform at all depths.
    """
    vocab = corpus_mod.code_vocab(template)
    rng = np.random.default_rng((seed, 0xC0DE))
    users, codes = corpus_mod.synthesize_code_corpus(m, ell, template, rng, vocab)
    prompt_ids = tuple(corpus_mod.tokenize(template.format(""), vocab))
    order = len(prompt_ids) + ell
    public_docs = corpus_mod.exhaustive_code_docs(ell, template, vocab)
    public = pretrain(public_docs, order, vocab.size, k_add)
    ensemble = train_ensemble(public, users, k_parts, seed, weight)
    return CodeAttackSetup(vocab, prompt_ids, codes, public, ensemble)


def run_code_attack(
    m: int,
    ell: int,
    k_parts: int,
    epsilon: float,
    alpha: float,
    generations: int,
    seed: int,
    tau: float = 1.0,
    beta: float | None = None,
    weight: float = 1000.0,
    k_add: float = 0.1,
    template: str = corpus_mod.DEFAULT_CODE_TEMPLATE,
    session_mode: str = "shared",
    public_only: bool = False,
) -> AttackReport:
    """End-to-end code-extraction run against the protocol (or, with
    public_only, against the bare public model as the chance baseline)."""
    setup = build_code_attack(m, ell, k_parts, seed, weight, k_add, template)
    budget = generations * ell
    calls = iter(range(generations + 1))

    def factory() -> Session:
        # distinct stream per fresh session; a shared session calls this once
        rng = np.random.default_rng((seed, 0xA77AC4, next(calls)))
        if public_only:
            pairs = [(setup.public, setup.public)] * max(k_parts, 2)
            ensemble = SubMixEnsemble(pairs, setup.public)
            ledger = PrivacyLedger(ensemble.k, alpha, 0.0, beta=0.0)
            ledger.mark_stopped()
            return Session(ensemble, ledger, rng, tau)
        ledger = PrivacyLedger(k_parts, alpha, epsilon, beta, budget)
        return Session(setup.ensemble, ledger, rng, tau)

    return extraction_attack(
        factory, setup.prompt_ids, setup.secret_codes, setup.vocab,
        ell, generations, session_mode,
    )


# ---------------------------------------------------------------------------
# extractability game
# ---------------------------------------------------------------------------


def wilson_interval(successes: int, trials: int, z: float = 1.96) -> tuple[float, float]:
    if trials <= 0:
        raise ParameterError("trials must be > 0")
    phat = successes / trials
    denom = 1.0 + z**2 / trials
    center = (phat + z**2 / (2 * trials)) / denom
    half = z * math.sqrt(phat * (1 - phat) / trials + z**2 / (4 * trials**2)) / denom
    return max(center - half, 0.0), min(center + half, 1.0)


@dataclass
class ExtractabilityReport:
    candidates: list[str]
    per_candidate_rate: dict[str, float]
    min_rate: float
    min_rate_wilson: tuple[float, float]
    trials_per_candidate: int


def sampling_adversary(num_generations: int = 16):
    """Default attack strategy: sample completions, guess the candidate
    generated most often (uniform random among candidates if none match)."""

    def adversary(generate: Callable[[], str], candidates: Sequence[str], rng) -> str:
        counts: dict[str, int] = {}
        for _ in range(num_generations):
            g = generate()
            if g in candidates:
                counts[g] = counts.get(g, 0) + 1
        if counts:
            best = max(counts.values())
            # deterministic tie break: candidate order
            for cand in candidates:
                if counts.get(cand, 0) == best:
                    return cand
        return candidates[int(rng.integers(0, len(candidates)))]

    return adversary


def estimate_extractability(
    mechanism_factory: Callable[[str, np.random.Generator], Callable[[], str]],
    candidates: Sequence[str],
    trials: int,
    seed: int,
    adversary: Callable | None = None,
) -> ExtractabilityReport:
    """Plant each candidate in turn, rebuild the mechanism, and measure how
    often the adversary recovers it. Returns per-candidate success rates
    and the minimum (the figure the Fano bound caps).

    mechanism_factory(planted, rng) must return a zero-argument generator
    of completion strings backed by a fresh mechanism whose corpus contains
    the planted candidate.
    """
    if trials < 1:
        raise ParameterError("need trials >= 1")
    if len(candidates) < 2:
        raise ParameterError("need at least 2 candidates")
    adversary = adversary or sampling_adversary()
    rates = {}
    for ci, cand in enumerate(candidates):
        wins = 0
        for trial in range(trials):
            rng = np.random.default_rng((seed, ci, trial))
            generate = mechanism_factory(cand, rng)
            if adversary(generate, candidates, rng) == cand:
                wins += 1
        rates[cand] = wins / trials
    min_cand = min(rates, key=rates.get)
    wilson = wilson_interval(round(rates[min_cand] * trials), trials)
    return ExtractabilityReport(list(candidates), rates, rates[min_cand], wilson, trials)
