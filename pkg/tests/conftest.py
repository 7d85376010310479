import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))  # makes `oracles` importable

from submix.lm import ModelInterface
from submix.probdist import Pmf


class HashPmfModel(ModelInterface):
    """Deterministic pseudo-random strictly positive pmf per context.

    The pmf depends only on (model seed, context), so two models with the
    same seed agree everywhere and replays are exact. Used as a cheap
    protocol backend in fuzz tests.
    """

    def __init__(self, seed: int, vocab_size: int, concentration: float = 1.0):
        self.seed = seed
        self._vocab_size = vocab_size
        self.concentration = concentration

    @property
    def vocab_size(self) -> int:
        return self._vocab_size

    def next_token_pmf(self, context) -> Pmf:
        key = (self.seed, len(context), *(int(t) % 997 for t in context))
        rng = np.random.default_rng(key)
        probs = rng.dirichlet([self.concentration] * self._vocab_size)
        probs = (probs + 1e-6) / (1.0 + 1e-6 * self._vocab_size)  # strictly positive
        return Pmf(probs, _checked=True)


def random_pmf(rng, vocab_size: int, zeros: bool = False) -> Pmf:
    probs = rng.dirichlet(np.full(vocab_size, 0.7))
    if zeros and vocab_size > 1:
        kill = rng.random(vocab_size) < 0.3
        if kill.all():
            kill[int(rng.integers(vocab_size))] = False
        probs = np.where(kill, 0.0, probs)
        probs = probs / probs.sum()
    return Pmf(probs)


@pytest.fixture
def rng():
    return np.random.default_rng(20260810)
