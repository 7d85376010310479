"""Next-token model interface and the smoothed count-table backend.

The backend is an order-n model with additive smoothing: counts are
accumulated for every context length up to n-1 (so short contexts at the
start of a query still hit trained statistics), and

    P(z | ctx) = (count(ctx, z) + k_add) / (total(ctx) + k_add * V)

with ctx truncated to the last n-1 tokens. k_add > 0 keeps every returned
pmf strictly positive, which in turn keeps all divergences in the
prediction protocol finite.

"Fine-tuning" is additive: a fine-tuned model's table is the base table
plus weight * (counts of the private documents). A large weight makes tiny
private corpora shift the pmf visibly, standing in for the memorization
behaviour of heavily fine-tuned neural models.
"""

from __future__ import annotations

import json
from abc import ABC, abstractmethod
from pathlib import Path
from typing import Sequence

import numpy as np

from submix.corpus import UserCorpus
from submix.errors import ModelFormatError, ParameterError
from submix.probdist import Pmf

Context = Sequence[int]

MODEL_FORMAT = "submix-ngram"
MODEL_VERSION = 1


class ModelInterface(ABC):
    """Anything that maps a context to a next-token distribution."""

    @property
    @abstractmethod
    def vocab_size(self) -> int: ...

    @abstractmethod
    def next_token_pmf(self, context: Context) -> Pmf: ...


class NGramModel(ModelInterface):
    def __init__(self, order: int, vocab_size: int, k_add: float = 0.1):
        if order < 1:
            raise ParameterError("order must be >= 1")
        if vocab_size < 1:
            raise ParameterError("vocab_size must be >= 1")
        if not k_add > 0.0:
            raise ParameterError("k_add must be > 0 (strictly positive pmfs are required)")
        self.order = order
        self._vocab_size = vocab_size
        self.k_add = float(k_add)
        # context tuple (length 0..order-1) -> per-token count vector
        self._counts: dict[tuple[int, ...], np.ndarray] = {}

    @property
    def vocab_size(self) -> int:
        return self._vocab_size

    def _key(self, context: Context) -> tuple[int, ...]:
        ctx = tuple(context)
        if self.order == 1:
            return ()
        return ctx[-(self.order - 1):]

    def add_document(self, doc: Sequence[int], weight: float = 1.0) -> None:
        doc = tuple(doc)
        for t, token in enumerate(doc):
            if not 0 <= token < self._vocab_size:
                raise ParameterError(f"token id {token} outside vocab of size {self._vocab_size}")
            for c in range(min(t, self.order - 1) + 1):
                key = doc[t - c : t]
                vec = self._counts.get(key)
                if vec is None:
                    vec = np.zeros(self._vocab_size)
                    self._counts[key] = vec
                vec[token] += weight

    def next_token_pmf(self, context: Context) -> Pmf:
        vec = self._counts.get(self._key(context))
        if vec is None:
            return Pmf.uniform(self._vocab_size)
        probs = (vec + self.k_add) / (vec.sum() + self.k_add * self._vocab_size)
        return Pmf(probs, _checked=True)

    def copy(self) -> "NGramModel":
        clone = NGramModel(self.order, self._vocab_size, self.k_add)
        clone._counts = {key: vec.copy() for key, vec in self._counts.items()}
        return clone


class ConstantModel(ModelInterface):
    """Returns the same pmf for every context; the trivial backend."""

    def __init__(self, pmf: Pmf):
        self._pmf = pmf

    @property
    def vocab_size(self) -> int:
        return self._pmf.vocab_size

    def next_token_pmf(self, context: Context) -> Pmf:
        return self._pmf


def pretrain(
    public_docs: Sequence[Sequence[int]],
    order: int,
    vocab_size: int,
    k_add: float = 0.1,
) -> NGramModel:
    """Count all order-n windows of the public documents.

    An empty public corpus yields the uniform-everywhere model (the
    fine-tune-on-nothing convention).
    """
    model = NGramModel(order, vocab_size, k_add)
    for doc in public_docs:
        model.add_document(doc)
    return model


def fine_tune(base: NGramModel, private_subpart: Sequence[UserCorpus], weight: float = 10.0) -> NGramModel:
    """New model whose counts are base counts plus weight * subpart counts."""
    if not weight > 0.0:
        raise ParameterError("fine-tune weight must be > 0")
    model = base.copy()
    for user in private_subpart:
        for doc in user.docs:
            model.add_document(doc, weight)
    return model


def avg_pair_pmf(h_a: ModelInterface, h_b: ModelInterface, context: Context) -> Pmf:
    """Elementwise mean of the two subpart models' predictions."""
    pa = h_a.next_token_pmf(context)
    pb = h_b.next_token_pmf(context)
    if pa.vocab_size != pb.vocab_size:
        raise ParameterError("paired models disagree on vocab size")
    return Pmf(0.5 * (pa.probs + pb.probs), _checked=True)


def save_model(model: NGramModel, path: str | Path) -> None:
    """Self-describing JSON dump; exact round-trip (floats via repr)."""
    counts = {}
    for key in sorted(model._counts):
        vec = model._counts[key]
        nonzero = {str(tok): float(vec[tok]) for tok in np.nonzero(vec)[0]}
        counts[",".join(map(str, key))] = nonzero
    payload = {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "order": model.order,
        "vocab_size": model.vocab_size,
        "k_add": model.k_add,
        "counts": counts,
    }
    Path(path).write_text(json.dumps(payload, sort_keys=True), encoding="utf-8")


def load_model(path: str | Path) -> NGramModel:
    try:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ModelFormatError(f"{path}: not a valid model file: {exc}") from exc
    if not isinstance(payload, dict) or payload.get("format") != MODEL_FORMAT:
        raise ModelFormatError(f"{path}: missing or unknown format header")
    if payload.get("version") != MODEL_VERSION:
        raise ModelFormatError(
            f"{path}: format version {payload.get('version')!r}, expected {MODEL_VERSION}"
        )
    try:
        model = NGramModel(payload["order"], payload["vocab_size"], payload["k_add"])
        for key_str, tokens in payload["counts"].items():
            key = tuple(int(x) for x in key_str.split(",")) if key_str else ()
            vec = np.zeros(model.vocab_size)
            for tok, count in tokens.items():
                vec[int(tok)] = float(count)
            model._counts[key] = vec
    except (KeyError, ValueError, TypeError) as exc:
        raise ModelFormatError(f"{path}: malformed model payload: {exc}") from exc
    return model
