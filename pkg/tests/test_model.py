import numpy as np
import pytest

from linktrace.errors import InvalidArgument
from linktrace.model import (FrameGeometry, Portion, RaschParams, clamp_probs,
                             inclusion_prob_u1, inclusion_prob_u2, link_prob)


def test_link_prob_at_zero():
    assert link_prob(0.0, 0.0) == pytest.approx(0.5)


def test_link_prob_sigmoid_symmetry():
    for a, b in [(0.4, 1.1), (-2.0, 0.3), (5.0, -1.0)]:
        assert link_prob(a, b) + link_prob(-a, -b) == pytest.approx(1.0, abs=1e-14)


def test_link_prob_venue_scale_arithmetic():
    # venue effect of a size-8 venue under the simulated-population scaling
    alpha = -5.45 / (0.001 + 8 ** 0.25)
    got = link_prob(alpha, 0.0)
    assert 0.0 < got < 1.0
    assert got == pytest.approx(np.exp(alpha) / (1 + np.exp(alpha)), rel=1e-14)


def test_link_prob_extreme_arguments_are_finite():
    assert link_prob(800.0, 0.0) == 1.0
    assert link_prob(-800.0, 0.0) == 0.0


class TestInclusionU1:
    def test_full_frame_sample_forces_one(self):
        params = RaschParams(alpha=np.array([-1.0, 2.0]), sigma=0.5, portion=Portion.U1)
        geom = FrameGeometry(2, 2)
        assert inclusion_prob_u1(params, -3.0, geom) == pytest.approx(1.0)

    def test_no_links_leaves_venue_chance(self):
        params = RaschParams(alpha=np.full(4, -50.0), sigma=0.0, portion=Portion.U1)
        geom = FrameGeometry(4, 10)
        assert inclusion_prob_u1(params, 0.0, geom) == pytest.approx(0.4, abs=1e-12)

    def test_direct_arithmetic(self):
        params = RaschParams(alpha=np.zeros(2), sigma=0.0, portion=Portion.U1)
        geom = FrameGeometry(2, 4)
        assert inclusion_prob_u1(params, 0.0, geom) == pytest.approx(0.875)

    def test_portion_mismatch(self):
        params = RaschParams(alpha=np.zeros(2), sigma=0.0, portion=Portion.U2)
        with pytest.raises(InvalidArgument):
            inclusion_prob_u1(params, 0.0, FrameGeometry(2, 4))

    def test_lower_bound_and_monotonicity(self):
        rng = np.random.default_rng(2)
        for _ in range(25):
            n, extra = rng.integers(1, 6), rng.integers(0, 5)
            geom = FrameGeometry(int(n), int(n + extra))
            params = RaschParams(alpha=rng.normal(size=n), sigma=0.0, portion=Portion.U1)
            betas = np.sort(rng.normal(size=3))
            vals = [inclusion_prob_u1(params, b, geom) for b in betas]
            assert vals[0] >= geom.venue_fraction - 1e-12
            assert vals[0] < vals[1] < vals[2]


class TestInclusionU2:
    def test_single_venue_half(self):
        params = RaschParams(alpha=np.zeros(1), sigma=0.0, portion=Portion.U2)
        assert inclusion_prob_u2(params, 0.0) == pytest.approx(0.5)

    def test_huge_effect_saturates(self):
        params = RaschParams(alpha=np.array([-3.0, 1.0]), sigma=0.0, portion=Portion.U2)
        assert inclusion_prob_u2(params, 50.0) == pytest.approx(1.0, abs=1e-12)

    def test_direct_arithmetic(self):
        alpha = np.array([-1.0, -2.0, -3.0])
        params = RaschParams(alpha=alpha, sigma=0.0, portion=Portion.U2)
        p = np.exp(alpha + 0.7) / (1 + np.exp(alpha + 0.7))
        assert inclusion_prob_u2(params, 0.7) == pytest.approx(1 - np.prod(1 - p), rel=1e-12)

    def test_portion_mismatch(self):
        params = RaschParams(alpha=np.zeros(1), sigma=0.0, portion=Portion.U1)
        with pytest.raises(InvalidArgument):
            inclusion_prob_u2(params, 0.0)

    def test_u1_degenerates_to_u2_as_frame_grows(self):
        alpha = np.array([-0.5, 0.3, -1.2])
        p1 = RaschParams(alpha=alpha, sigma=0.0, portion=Portion.U1)
        p2 = RaschParams(alpha=alpha, sigma=0.0, portion=Portion.U2)
        geom = FrameGeometry(3, 3_000_000)
        assert inclusion_prob_u1(p1, 0.4, geom) == pytest.approx(
            inclusion_prob_u2(p2, 0.4), abs=1e-5)


def test_rasch_params_validation():
    with pytest.raises(InvalidArgument):
        RaschParams(alpha=np.array([np.inf]), sigma=0.1, portion=Portion.U1)
    with pytest.raises(InvalidArgument):
        RaschParams(alpha=np.zeros(2), sigma=-0.1, portion=Portion.U1)


def test_frame_geometry_validation():
    with pytest.raises(InvalidArgument):
        FrameGeometry(5, 4)
    with pytest.raises(InvalidArgument):
        FrameGeometry(0, 4)


def test_clamp_probs_counts_and_bounds():
    clamped, n = clamp_probs(np.array([0.0, 0.5, 1.0, 0.25]))
    assert n == 2
    assert clamped.min() >= 1e-12
    assert clamped.max() <= 1 - 1e-12
    same, n0 = clamp_probs(np.array([0.2, 0.8]))
    assert n0 == 0
    np.testing.assert_array_equal(same, [0.2, 0.8])
