"""User-level corpora, tokenization, and the randomized partition machinery.

A dataset is a list of UserCorpus values (one per user). Training splits
the users into k parts, each part into two disjoint subparts; every user
lands in exactly one subpart. The module also synthesizes the secret-code
corpora used by the extraction experiments.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from submix.errors import CapacityError, ParameterError

UNK_TOKEN = "<unk>"
UNK_ID = 0

TOKENIZE_MODES = ("character", "word", "digit")

_DIGIT_SPLIT = re.compile(r"[0-9]|[^0-9]+")


@dataclass(frozen=True)
class Vocab:
    """Bijective token-string <-> id table. Id 0 is reserved for unknowns."""

    tokens: tuple[str, ...]
    mode: str = "character"

    def __post_init__(self):
        if self.mode not in TOKENIZE_MODES:
            raise ParameterError(f"unknown tokenization mode {self.mode!r}")
        if not self.tokens or self.tokens[0] != UNK_TOKEN:
            raise ParameterError(f"token id 0 must be {UNK_TOKEN!r}")
        if len(set(self.tokens)) != len(self.tokens):
            raise ParameterError("duplicate token strings in vocab")
        object.__setattr__(self, "_ids", {t: i for i, t in enumerate(self.tokens)})

    @property
    def size(self) -> int:
        return len(self.tokens)

    def id_of(self, token: str) -> int:
        return self._ids.get(token, UNK_ID)

    def token(self, token_id: int) -> str:
        return self.tokens[token_id]

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(list(self.tokens)), encoding="utf-8")

    @staticmethod
    def load(path: str | Path, mode: str) -> "Vocab":
        tokens = json.loads(Path(path).read_text(encoding="utf-8"))
        return Vocab(tuple(tokens), mode)


def _split_text(text: str, mode: str) -> list[str]:
    if mode == "character":
        return list(text)
    if mode == "word":
        return text.split()
    # digit mode: each digit is its own token, maximal non-digit runs collapse
    return _DIGIT_SPLIT.findall(text)


def build_vocab(texts: Iterable[str], mode: str) -> Vocab:
    """Vocabulary over every token string occurring in texts, id 0 = unknown."""
    seen: set[str] = set()
    for text in texts:
        seen.update(_split_text(text, mode))
    return Vocab((UNK_TOKEN, *sorted(seen)), mode)


def tokenize(text: str, vocab: Vocab) -> list[int]:
    """Deterministic text -> token ids; out-of-vocabulary pieces map to id 0."""
    return [vocab.id_of(piece) for piece in _split_text(text, vocab.mode)]


def detokenize(ids: Sequence[int], vocab: Vocab) -> str:
    joiner = " " if vocab.mode == "word" else ""
    return joiner.join(vocab.token(i) for i in ids)


@dataclass(frozen=True)
class UserCorpus:
    """All documents of one user, as token-id sequences."""

    user_id: str
    docs: tuple[tuple[int, ...], ...]

    @staticmethod
    def from_texts(user_id: str, texts: Sequence[str], vocab: Vocab) -> "UserCorpus":
        return UserCorpus(user_id, tuple(tuple(tokenize(t, vocab)) for t in texts))


@dataclass(frozen=True)
class Part:
    """One partition part: two disjoint subparts of user ids."""

    first: tuple[str, ...]
    second: tuple[str, ...]

    def all_users(self) -> tuple[str, ...]:
        return self.first + self.second


@dataclass(frozen=True)
class Partition:
    parts: tuple[Part, ...]
    seed: int

    @property
    def k(self) -> int:
        return len(self.parts)

    def to_manifest(self) -> dict:
        return {
            "seed": self.seed,
            "parts": [[list(p.first), list(p.second)] for p in self.parts],
        }

    @staticmethod
    def from_manifest(data: dict) -> "Partition":
        parts = tuple(Part(tuple(a), tuple(b)) for a, b in data["parts"])
        return Partition(parts, int(data["seed"]))


def make_partition(users: Sequence[UserCorpus], k: int, seed: int) -> Partition:
    """Uniform random balanced split of users into k parts of two subparts.

    Part sizes differ by at most one user; a part of odd size puts the extra
    user in its first subpart. Deterministic given the seed.
    """
    if k < 2:
        raise ParameterError("need at least k=2 parts (leave-one-out is undefined for k=1)")
    n = len(users)
    if n < 2 * k:
        raise CapacityError(f"need at least {2 * k} users for k={k} parts, got {n}")
    ids = [u.user_id for u in users]
    if len(set(ids)) != n:
        raise ParameterError("duplicate user ids")
    rng = np.random.default_rng(seed)
    order = [ids[i] for i in rng.permutation(n)]
    base, extra = divmod(n, k)
    parts = []
    pos = 0
    for i in range(k):
        size = base + (1 if i < extra else 0)
        chunk = order[pos : pos + size]
        pos += size
        half = (size + 1) // 2
        parts.append(Part(tuple(chunk[:half]), tuple(chunk[half:])))
    return Partition(tuple(parts), seed)


DEFAULT_CODE_TEMPLATE = "My number is: {}"


def synthesize_code_corpus(
    m: int,
    ell: int,
    template: str = DEFAULT_CODE_TEMPLATE,
    seed: int | np.random.Generator = 0,
    vocab: Vocab | None = None,
) -> tuple[list[UserCorpus], list[str]]:
    """m single-sentence users, each embedding a distinct ell-digit code.

    Codes are drawn uniformly without replacement from {0, ..., 10^ell - 1}
    and zero-padded to ell digits. Returns the users plus the ground-truth
    code strings for hit-rate scoring.
    """
    if m < 1 or ell < 1:
        raise ParameterError("need m >= 1 codes of ell >= 1 digits")
    space = 10**ell
    if m > space:
        raise CapacityError(f"cannot draw {m} distinct {ell}-digit codes")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    codes = [f"{c:0{ell}d}" for c in draw_distinct_codes(m, space, rng)]
    if vocab is None:
        vocab = code_vocab(template)
    users = [
        UserCorpus.from_texts(f"user-{i:04d}", [template.format(code)], vocab)
        for i, code in enumerate(codes)
    ]
    return users, codes


def draw_distinct_codes(m: int, space: int, rng: np.random.Generator) -> list[int]:
    if space <= 10**6:
        return [int(c) for c in rng.permutation(space)[:m]]
    # sparse regime: rejection sampling stays cheap because m << space
    chosen: dict[int, None] = {}
    while len(chosen) < m:
        c = int(rng.integers(0, space))
        if c not in chosen:
            chosen[c] = None
    return list(chosen)


def code_vocab(template: str = DEFAULT_CODE_TEMPLATE) -> Vocab:
    """Digit-mode vocabulary covering the template text plus all ten digits."""
    rendered = template.format("0123456789")
    return build_vocab([rendered], "digit")


def exhaustive_code_docs(ell: int, template: str, vocab: Vocab) -> list[tuple[int, ...]]:
    """One sentence per possible ell-digit code, in code order.

    Used as a balanced public corpus: every digit transition occurs equally
    often, so a model trained on it predicts digits uniformly at any depth.
    """
    return [
        tuple(tokenize(template.format(f"{c:0{ell}d}"), vocab)) for c in range(10**ell)
    ]


def load_users_jsonl(path: str | Path, vocab: Vocab) -> list[UserCorpus]:
    """One JSON object per line with fields {user_id, text}."""
    users: dict[str, list[str]] = {}
    for line_no, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
            user_id, text = record["user_id"], record["text"]
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise ParameterError(f"{path}:{line_no}: bad corpus record: {exc}") from exc
        users.setdefault(str(user_id), []).append(str(text))
    return [UserCorpus.from_texts(uid, texts, vocab) for uid, texts in users.items()]


def load_users_dir(path: str | Path, vocab: Vocab) -> list[UserCorpus]:
    """One entry per user: either a UTF-8 text file (stem = user id, one
    document) or a subdirectory of document files (name = user id)."""
    root = Path(path)
    users = []
    for entry in sorted(root.iterdir()):
        if entry.is_file():
            users.append(UserCorpus.from_texts(entry.stem, [entry.read_text(encoding="utf-8")], vocab))
        elif entry.is_dir():
            docs = [f.read_text(encoding="utf-8") for f in sorted(entry.iterdir()) if f.is_file()]
            users.append(UserCorpus.from_texts(entry.name, docs, vocab))
    return users


def load_users(path: str | Path, vocab: Vocab) -> list[UserCorpus]:
    p = Path(path)
    if p.is_dir():
        return load_users_dir(p, vocab)
    return load_users_jsonl(p, vocab)


def iter_texts(path: str | Path) -> list[str]:
    """Raw texts from either corpus layout, for vocabulary building."""
    p = Path(path)
    if p.is_dir():
        texts = []
        for entry in sorted(p.iterdir()):
            if entry.is_file():
                texts.append(entry.read_text(encoding="utf-8"))
            elif entry.is_dir():
                texts.extend(f.read_text(encoding="utf-8") for f in sorted(entry.iterdir()) if f.is_file())
        return texts
    texts = []
    for line in p.read_text(encoding="utf-8").splitlines():
        if line.strip():
            texts.append(str(json.loads(line)["text"]))
    return texts
