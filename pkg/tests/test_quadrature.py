import itertools

import numpy as np
import pytest

from linktrace.errors import InvalidArgument
from linktrace.quadrature import LinkPattern, QuadratureRule, cell_prob, cell_prob_excluding, make_rule
from linktrace._numeric import sigmoid


def trapezoid_cell_prob(alpha, sigma, bits, lo=-8.0, hi=8.0, points=100_000):
    """Fine-grid integration of the exact integrand over the latent effect."""
    z = np.linspace(lo, hi, points)
    logits = np.asarray(alpha)[:, None] + sigma * z[None, :]
    p = sigmoid(logits)
    bits = np.asarray(bits)[:, None]
    integrand = np.prod(np.where(bits == 1, p, 1.0 - p), axis=0)
    phi = np.exp(-0.5 * z * z) / np.sqrt(2.0 * np.pi)
    return float(np.trapezoid(integrand * phi, z))


class TestMakeRule:
    def test_two_point_rule_is_analytic(self):
        rule = make_rule(2)
        np.testing.assert_allclose(sorted(rule.nodes), [-1.0, 1.0], atol=1e-12)
        np.testing.assert_allclose(rule.weights, [0.5, 0.5], atol=1e-12)

    def test_three_point_rule_is_analytic(self):
        rule = make_rule(3)
        np.testing.assert_allclose(sorted(rule.nodes), [-np.sqrt(3), 0.0, np.sqrt(3)], atol=1e-12)
        np.testing.assert_allclose(sorted(rule.weights), [1 / 6, 1 / 6, 2 / 3], atol=1e-12)

    @pytest.mark.parametrize("q", [2, 3, 5, 10, 15, 30])
    def test_rule_invariants(self, q):
        rule = make_rule(q)
        assert rule.q == q
        assert abs(rule.weights.sum() - 1.0) < 1e-12
        srt = np.sort(rule.nodes)
        np.testing.assert_allclose(srt, -srt[::-1], atol=1e-12)
        assert abs(rule.weights @ rule.nodes) < 1e-10
        if q >= 10:
            assert abs(rule.weights @ rule.nodes**2 - 1.0) < 1e-6

    def test_fifteen_point_second_moment(self):
        rule = make_rule(15)
        assert abs(rule.weights @ rule.nodes**2 - 1.0) < 1e-8

    def test_deterministic(self):
        a, b = make_rule(15), make_rule(15)
        np.testing.assert_array_equal(a.nodes, b.nodes)
        np.testing.assert_array_equal(a.weights, b.weights)

    @pytest.mark.parametrize("q", [0, 1])
    def test_rejects_tiny_rules(self, q):
        with pytest.raises(InvalidArgument):
            make_rule(q)

    def test_rule_is_immutable(self):
        rule = make_rule(5)
        with pytest.raises(ValueError):
            rule.nodes[0] = 0.0


class TestLinkPattern:
    def test_counts_ones(self):
        p = LinkPattern([1, 0, 1, 1])
        assert p.count_ones == 3
        assert len(p) == 4

    def test_rejects_non_binary(self):
        with pytest.raises(InvalidArgument):
            LinkPattern([0, 2, 1])


class TestCellProb:
    def test_sigma_zero_is_bernoulli_product(self):
        rng = np.random.default_rng(1)
        rule = make_rule(15)
        for _ in range(20):
            n = rng.integers(1, 8)
            alpha = rng.normal(size=n)
            bits = rng.integers(0, 2, size=n)
            p = sigmoid(alpha)
            expected = np.prod(np.where(bits == 1, p, 1 - p))
            got = cell_prob(alpha, 0.0, LinkPattern(bits), rule)
            assert got == pytest.approx(expected, abs=1e-15)

    def test_single_venue_half(self):
        assert cell_prob([0.0], 0.0, LinkPattern([1]), make_rule(5)) == pytest.approx(0.5)

    def test_matches_fine_grid_integration(self):
        rule = make_rule(30)
        alpha = np.array([-1.0, 0.0, 1.0])
        bits = [1, 0, 1]
        oracle = trapezoid_cell_prob(alpha, 1.0, bits)
        assert cell_prob(alpha, 1.0, LinkPattern(bits), rule) == pytest.approx(oracle, abs=1e-8)

    def test_excluding_matches_fine_grid(self):
        rng = np.random.default_rng(7)
        rule = make_rule(30)
        alpha = rng.uniform(-2, 2, size=4)
        bits = [1, 0, 1]
        keep = [0, 2, 3]
        oracle = trapezoid_cell_prob(alpha[keep], 0.8, bits)
        got = cell_prob_excluding(alpha, 0.8, 1, LinkPattern(bits), rule)
        assert got == pytest.approx(oracle, abs=1e-8)

    def test_excluding_singleton_matches_cell_prob(self):
        rule = make_rule(15)
        alpha = np.array([0.3, -0.7])
        got = cell_prob_excluding(alpha, 1.2, 0, LinkPattern([1]), rule)
        want = cell_prob(alpha[[1]], 1.2, LinkPattern([1]), rule)
        assert got == pytest.approx(want, rel=1e-14)

    def test_excluding_sigma_zero_product(self):
        alpha = np.array([0.5, -1.0, 0.25, 2.0])
        rule = make_rule(10)
        bits = [1, 0, 1]
        got = cell_prob_excluding(alpha, 0.0, 2, LinkPattern(bits), rule)
        p = sigmoid(alpha[[0, 1, 3]])
        assert got == pytest.approx(p[0] * (1 - p[1]) * p[2], abs=1e-15)

    def test_normalizes_over_all_patterns(self):
        rng = np.random.default_rng(3)
        rule = make_rule(15)
        for n in (1, 3, 6):
            alpha = rng.normal(size=n)
            sigma = rng.uniform(0, 2)
            total = sum(
                cell_prob(alpha, sigma, LinkPattern(bits), rule)
                for bits in itertools.product((0, 1), repeat=n)
            )
            assert total == pytest.approx(1.0, abs=1e-9)

    def test_monotone_in_alpha_for_all_ones(self):
        rule = make_rule(15)
        ones = LinkPattern([1, 1, 1])
        base = np.array([-0.5, 0.0, 0.5])
        value = cell_prob(base, 0.7, ones, rule)
        for i in range(3):
            bumped = base.copy()
            bumped[i] += 0.3
            assert cell_prob(bumped, 0.7, ones, rule) > value

    def test_symmetric_under_joint_permutation(self):
        rng = np.random.default_rng(11)
        rule = make_rule(15)
        alpha = rng.normal(size=5)
        bits = np.array([1, 0, 0, 1, 1])
        perm = rng.permutation(5)
        a = cell_prob(alpha, 1.3, LinkPattern(bits), rule)
        b = cell_prob(alpha[perm], 1.3, LinkPattern(bits[perm]), rule)
        assert a == pytest.approx(b, rel=1e-12)

    def test_dimension_mismatch(self):
        rule = make_rule(5)
        with pytest.raises(InvalidArgument):
            cell_prob([0.0, 1.0], 0.5, LinkPattern([1]), rule)
        with pytest.raises(InvalidArgument):
            cell_prob_excluding([0.0, 1.0], 0.5, 5, LinkPattern([1]), rule)
        with pytest.raises(InvalidArgument):
            cell_prob_excluding([0.0, 1.0, 2.0], 0.5, 0, LinkPattern([1]), rule)
