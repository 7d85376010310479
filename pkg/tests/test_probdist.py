"""Distribution arithmetic: examples, edge cases, and fuzzed invariants."""

import math

import numpy as np
import pytest
from scipy import stats

from oracles import renyi_oracle, sym_renyi_oracle
from submix.errors import DimensionError, ParameterError
from submix.probdist import (
    Pmf,
    max_divergence,
    mix,
    renyi_divergence,
    sample,
    sym_renyi_divergence,
    temperature_scale,
)

from conftest import random_pmf


class TestPmfInvariants:
    def test_rejects_negative_entries(self):
        with pytest.raises(ParameterError):
            Pmf([0.5, -0.1, 0.6])

    def test_rejects_bad_sum(self):
        with pytest.raises(ParameterError):
            Pmf([0.5, 0.6])

    def test_accepts_tolerated_drift(self):
        Pmf([0.5, 0.5 + 5e-10])

    def test_immutable(self):
        p = Pmf([1.0])
        with pytest.raises((AttributeError, ValueError)):
            p.probs[0] = 0.5

    def test_does_not_freeze_caller_array(self):
        arr = np.array([0.5, 0.5])
        Pmf(arr)
        arr[0] = 0.25  # caller's buffer must stay writable


class TestRenyiDivergence:
    def test_identity_is_zero(self):
        p = Pmf([0.3, 0.7])
        assert renyi_divergence(p, p, 2.0) == 0.0

    def test_two_point_example(self):
        # direct summation: ln(0.25/0.25 + 0.25/0.75) = ln(4/3)
        p, q = Pmf([0.5, 0.5]), Pmf([0.25, 0.75])
        expected = math.log(4.0 / 3.0)
        assert renyi_divergence(p, q, 2.0) == pytest.approx(expected, abs=1e-12)
        assert renyi_oracle(p.probs, q.probs, 2.0) == pytest.approx(expected, abs=1e-12)

    def test_disjoint_support_is_infinite(self):
        assert renyi_divergence(Pmf([1.0, 0.0]), Pmf([0.0, 1.0]), 2.0) == math.inf

    def test_rejects_alpha_at_most_one(self):
        p = Pmf([0.5, 0.5])
        for alpha in (1.0, 0.5, -2.0):
            with pytest.raises(ParameterError):
                renyi_divergence(p, p, alpha)

    def test_rejects_infinite_alpha(self):
        p = Pmf([0.5, 0.5])
        with pytest.raises(ParameterError):
            renyi_divergence(p, p, math.inf)

    def test_rejects_dimension_mismatch(self):
        with pytest.raises(DimensionError):
            renyi_divergence(Pmf([1.0]), Pmf([0.5, 0.5]), 2.0)


class TestMaxDivergence:
    def test_uniform_identity(self):
        u = Pmf.uniform(5)
        assert max_divergence(u, u) == 0.0

    def test_half_vs_quarter(self):
        assert max_divergence(Pmf([0.5, 0.5]), Pmf([0.25, 0.75])) == pytest.approx(
            math.log(2.0), abs=1e-12
        )

    def test_zero_in_p_is_skipped(self):
        p, q = Pmf([0.6, 0.4, 0.0]), Pmf([0.2, 0.4, 0.4])
        assert max_divergence(p, q) == pytest.approx(math.log(3.0), abs=1e-12)

    def test_p_escaping_q_support(self):
        assert max_divergence(Pmf([0.5, 0.5]), Pmf([1.0, 0.0])) == math.inf


class TestSymRenyi:
    def test_identity(self):
        p = Pmf([0.2, 0.8])
        assert sym_renyi_divergence(p, p, 3.0) == 0.0

    def test_two_point_example_against_oracle(self):
        # forward: ln(4/3); reverse: ln(0.0625/0.5 + 0.5625/0.5) = ln(1.25);
        # the max is the forward direction.
        p, q = Pmf([0.5, 0.5]), Pmf([0.25, 0.75])
        expected = sym_renyi_oracle(p.probs, q.probs, 2.0)
        assert expected == pytest.approx(math.log(4.0 / 3.0), abs=1e-12)
        assert sym_renyi_divergence(p, q, 2.0) == pytest.approx(expected, abs=1e-12)

    def test_symmetry(self, rng):
        for _ in range(25):
            p, q = random_pmf(rng, 6), random_pmf(rng, 6)
            assert sym_renyi_divergence(p, q, 2.0) == sym_renyi_divergence(q, p, 2.0)


class TestMix:
    def test_endpoints_are_exact(self):
        p, q = Pmf([0.9, 0.1]), Pmf([0.3, 0.7])
        assert mix(0.0, p, q) is q
        assert mix(1.0, p, q) is p

    def test_point_masses(self):
        assert np.allclose(mix(0.5, Pmf([1.0, 0.0]), Pmf([0.0, 1.0])).probs, [0.5, 0.5])

    def test_quarter_blend(self):
        out = mix(0.25, Pmf([0.8, 0.2]), Pmf([0.4, 0.6]))
        assert np.allclose(out.probs, [0.5, 0.5], atol=1e-12)

    def test_rejects_weight_outside_unit_interval(self):
        p = Pmf([0.5, 0.5])
        for lam in (-0.1, 1.1):
            with pytest.raises(ParameterError):
                mix(lam, p, p)

    def test_fuzz_output_is_valid_pmf(self, rng):
        for _ in range(200):
            v = int(rng.integers(2, 20))
            out = mix(float(rng.random()), random_pmf(rng, v, zeros=True), random_pmf(rng, v))
            assert np.all(out.probs >= 0.0)
            assert abs(out.probs.sum() - 1.0) <= 1e-9


class TestTemperature:
    def test_tau_one_is_identity(self):
        p = Pmf([0.8, 0.2])
        assert temperature_scale(p, 1.0) is p

    def test_sharpening_example(self):
        out = temperature_scale(Pmf([0.8, 0.2]), 0.5)
        assert np.allclose(out.probs, [0.64 / 0.68, 0.04 / 0.68], atol=1e-12)

    def test_large_tau_flattens_to_uniform_support(self, rng):
        p = random_pmf(rng, 4)
        out = temperature_scale(p, 100.0)
        assert np.max(np.abs(out.probs - 0.25)) < 0.01

    def test_zero_entries_stay_zero(self):
        out = temperature_scale(Pmf([0.0, 0.3, 0.7]), 0.25)
        assert out.probs[0] == 0.0
        assert abs(out.probs.sum() - 1.0) < 1e-12

    def test_extreme_sharpening_does_not_underflow(self):
        out = temperature_scale(Pmf([1e-4, 1.0 - 1e-4]), 0.01)
        assert abs(out.probs.sum() - 1.0) < 1e-9

    def test_rejects_nonpositive_tau(self):
        with pytest.raises(ParameterError):
            temperature_scale(Pmf([1.0]), 0.0)


class TestSample:
    def test_point_mass(self, rng):
        p = Pmf([0.0, 1.0, 0.0])
        assert all(sample(p, np.random.default_rng(s)) == 1 for s in range(20))

    def test_deterministic_under_fresh_rng_copies(self):
        p = Pmf([0.1, 0.2, 0.3, 0.4])
        tokens = {sample(p, np.random.default_rng(42)) for _ in range(5)}
        assert len(tokens) == 1

    def test_zero_mass_tokens_never_emitted(self, rng):
        p = Pmf([0.5, 0.0, 0.5])
        draws = {sample(p, np.random.default_rng(s)) for s in range(500)}
        assert 1 not in draws

    def test_law_of_large_numbers_uniform(self):
        p = Pmf.uniform(4)
        rng = np.random.default_rng(11)
        counts = np.bincount([sample(p, rng) for _ in range(100_000)], minlength=4)
        assert np.all(np.abs(counts / 100_000 - 0.25) < 0.01)

    def test_chi_squared_goodness_of_fit(self):
        # 100 random pmfs x 10k draws; the floor keeps every expected count
        # comfortably large for the chi-squared approximation.
        master = np.random.default_rng(987)
        for _ in range(100):
            base = master.dirichlet(np.full(8, 2.0))
            p = Pmf(0.9 * base + 0.1 / 8)
            rng = np.random.default_rng(master.integers(2**63))
            draws = np.searchsorted(np.cumsum(p.probs), rng.random(10_000), side="right")
            counts = np.bincount(np.minimum(draws, 7), minlength=8)
            result = stats.chisquare(counts, p.probs * 10_000)
            assert result.pvalue > 0.001


class TestDivergenceOrderings:
    def test_monotone_in_alpha(self, rng):
        orders = [1.5, 2.0, 4.0, 8.0]
        for _ in range(50):
            v = int(rng.integers(2, 16))
            p, q = random_pmf(rng, v), random_pmf(rng, v)
            values = [renyi_divergence(p, q, a) for a in orders]
            values.append(max_divergence(p, q))
            for lo, hi in zip(values, values[1:]):
                assert lo <= hi + 1e-12

    def test_mixing_path_monotone(self, rng):
        # divergence between mixtures with a common strictly positive
        # component never decreases as the private weight grows
        for _ in range(20):
            v = int(rng.integers(2, 8))
            p, q, r = random_pmf(rng, v), random_pmf(rng, v), random_pmf(rng, v)
            grid = np.linspace(0.0, 1.0, 1001)
            vals = [renyi_divergence(mix(lam, p, r), mix(lam, q, r), 2.0) for lam in grid]
            assert vals[0] <= 1e-12
            assert all(b >= a - 1e-12 for a, b in zip(vals, vals[1:]))
