import math
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate, stats

from mobilifi.channel import ChannelTrace
from mobilifi.rate import (
    Constellation,
    ConstellationError,
    RateConfig,
    choose_beamformers,
    pam_uniform,
    rate_along_trace,
    rate_mimo,
    rate_miso,
    rate_simo,
    rate_siso,
)

B = 20e6
SIGMA2 = 1.4e-19
PAM2 = pam_uniform(2, 1.0, 0.5, 0.5)
PAM4 = pam_uniform(4, 3.0, 1.5, 3.5)
RC = RateConfig(B=B, sigma2=SIGMA2, mc_samples=20_000, seed=3)


def gain_for(a):
    """Gain whose unit level spacing equals ``a`` noise standard deviations of ``sqrt(B) z``."""
    return a * math.sqrt(B * SIGMA2)


def quadrature_rate(points, a):
    """2B * I(s; y) for equiprobable levels, y = a s + N(0, 1), by adaptive quadrature."""
    s = np.asarray(points, dtype=float)
    p = np.full(s.size, 1 / s.size)

    def mixture(y):
        return float(p @ stats.norm.pdf(y - a * s))

    def integrand(y):
        f = mixture(y)
        return -f * math.log2(f) if f > 0 else 0.0

    lo, hi = a * s.min() - 12, a * s.max() + 12
    breaks = list(a * s)
    h_y, _ = integrate.quad(integrand, lo, hi, points=breaks, limit=400, epsabs=1e-12)
    h_noise = 0.5 * math.log2(2 * math.pi * math.e)
    return 2 * B * (h_y - h_noise)


class TestConstellation:
    def test_two_pam(self):
        assert PAM2.points == (0.0, 1.0) and PAM2.probs == (0.5, 0.5)

    def test_four_pam_levels(self):
        assert pam_uniform(4, 3.0, 1.5, 3.5).points == (0.0, 1.0, 2.0, 3.0)

    def test_average_power_violation(self):
        with pytest.raises(ConstellationError, match="Phi"):
            pam_uniform(2, 1.0, 0.4, 0.5)

    def test_electrical_power_violation(self):
        with pytest.raises(ConstellationError, match="eps_hat"):
            pam_uniform(2, 1.0, 0.5, 0.4)

    def test_amplitude_violation(self):
        with pytest.raises(ConstellationError, match="A_hat"):
            Constellation((0.0, 2.0), (0.5, 0.5), 1.0, 1.0, 2.0)

    def test_probabilities_must_sum_to_one(self):
        with pytest.raises(ConstellationError):
            Constellation((0.0, 1.0), (0.5, 0.6), 1.0, 1.0, 1.0)

    def test_single_level_rejected(self):
        with pytest.raises(ConstellationError):
            pam_uniform(1, 1.0, 1.0, 1.0)


class TestRateSiso:
    def test_high_snr_two_pam(self):
        est = rate_siso(gain_for(100), PAM2, RateConfig(B=B, sigma2=SIGMA2))
        assert abs(est.rate - 40e6) <= 0.01 * 40e6

    def test_high_snr_four_pam(self):
        est = rate_siso(gain_for(100), PAM4, RateConfig(B=B, sigma2=SIGMA2))
        assert abs(est.rate - 80e6) <= 0.01 * 80e6

    @pytest.mark.parametrize("estimator", ["reduced", "plain"])
    def test_zero_gain(self, estimator):
        est = rate_siso(0.0, PAM2, RateConfig(B=B, sigma2=SIGMA2, estimator=estimator))
        assert abs(est.rate) <= max(2 * est.stderr, 1e-6)

    @pytest.mark.parametrize("a", [0.5, 1.0, 2.0, 4.0])
    @pytest.mark.parametrize("constellation", [PAM2, PAM4], ids=["2pam", "4pam"])
    def test_matches_quadrature(self, a, constellation):
        rc = RateConfig(B=B, sigma2=SIGMA2, mc_samples=100_000, seed=11)
        est = rate_siso(gain_for(a), constellation, rc)
        oracle = quadrature_rate(constellation.points, a)
        assert abs(est.rate - oracle) <= 4 * est.stderr + 1e-3 * oracle

    def test_plain_estimator_agrees(self):
        a = gain_for(1.5)
        reduced = rate_siso(a, PAM2, RateConfig(B=B, sigma2=SIGMA2, mc_samples=100_000))
        plain = rate_siso(a, PAM2, RateConfig(B=B, sigma2=SIGMA2, mc_samples=100_000, estimator="plain"))
        assert abs(reduced.rate - plain.rate) <= 4 * math.hypot(reduced.stderr, plain.stderr)

    def test_bounds(self):
        for a in [0.0, 0.3, 3.0, 30.0]:
            est = rate_siso(gain_for(a), PAM2, RC)
            eps = 4 * est.stderr
            assert -eps <= est.rate <= 2 * B + eps

    def test_monotone_in_gain(self):
        rates = [rate_siso(gain_for(a), PAM2, RC).rate for a in np.linspace(0, 6, 25)]
        assert all(b >= a for a, b in zip(rates, rates[1:]))

    @given(st.floats(0, 8), st.floats(0, 8))
    def test_monotone_property(self, a, b):
        lo, hi = sorted((a, b))
        rc = RateConfig(B=B, sigma2=SIGMA2, mc_samples=2000, seed=1)
        r_hi, r_lo = rate_siso(gain_for(hi), PAM2, rc), rate_siso(gain_for(lo), PAM2, rc)
        # shared draws make this exact only in expectation; near zero gain the gap is MC noise,
        # and below ~1e-30 noise units it is double-precision round-off (1e-6 bit/s floor)
        assert r_hi.rate >= r_lo.rate - 4 * math.hypot(r_hi.stderr, r_lo.stderr) - 1e-6

    def test_deterministic_per_seed(self):
        a = rate_siso(gain_for(1.0), PAM2, RC)
        b = rate_siso(gain_for(1.0), PAM2, RC)
        assert a == b
        c = rate_siso(gain_for(1.0), PAM2, RateConfig(B=B, sigma2=SIGMA2, mc_samples=20_000, seed=4))
        assert c.rate != a.rate

    def test_negative_gain_rejected(self):
        with pytest.raises(ValueError):
            rate_siso(-1e-6, PAM2, RC)

    def test_clamped(self):
        est = rate_siso(0.0, PAM2, RateConfig(B=B, sigma2=SIGMA2, estimator="plain", seed=7))
        assert est.clamped == max(est.rate, 0.0)

    @pytest.mark.parametrize("kwargs", [{"B": 0.0}, {"sigma2": -1.0}, {"mc_samples": 999}, {"estimator": "gh"}])
    def test_config_validation(self, kwargs):
        with pytest.raises(ValueError):
            RateConfig(**kwargs)


class TestMultiAntenna:
    H1 = gain_for(1.2)

    def test_simo_single_active_pd(self):
        assert rate_simo([self.H1, 0.0], [1.0, 0.0], PAM2, RC) == rate_siso(self.H1, PAM2, RC)

    def test_simo_zero_combiner(self):
        assert rate_simo([self.H1, self.H1], [0.0, 0.0], PAM2, RC).rate == 0.0

    def test_simo_mrc_norm(self):
        h = np.array([3e-6, 4e-6])
        est = rate_simo(h, h / np.linalg.norm(h), PAM2, RC)
        ref = rate_siso(5e-6, PAM2, RC)
        assert est.rate == pytest.approx(ref.rate, rel=1e-12)

    def test_miso_unit_vector(self):
        h = [gain_for(0.4), self.H1, gain_for(2.0)]
        assert rate_miso(h, [0, 1, 0], PAM2, RC) == rate_siso(self.H1, PAM2, RC)

    def test_miso_matched(self):
        h = np.array([1e-6, 2e-6, 2e-6])
        assert rate_miso(h, h / 3e-6, PAM2, RC).rate == pytest.approx(rate_siso(3e-6, PAM2, RC).rate, rel=1e-12)

    def test_miso_zero_channel(self):
        assert rate_miso([0.0, 0.0], [0.6, 0.8], PAM2, RC).rate == 0.0

    def test_mimo_scalar_case(self):
        assert rate_mimo([[self.H1]], [1.0], [1.0], PAM2, RC) == rate_siso(self.H1, PAM2, RC)

    def test_mimo_rank_one(self):
        a, b = np.array([1.0, 2.0]) * 1e-6, np.array([0.5, 0.5, 1.0])
        H = np.outer(a, b)
        est = rate_mimo(H, a / np.linalg.norm(a), b / np.linalg.norm(b), PAM2, RC)
        ref = rate_siso(np.linalg.norm(a) * np.linalg.norm(b), PAM2, RC)
        assert est.rate == pytest.approx(ref.rate, rel=1e-9)

    def test_mimo_zero_beamformer(self):
        assert rate_mimo(np.ones((2, 2)) * 1e-6, [0.0, 0.0], [1.0, 0.0], PAM2, RC).rate == 0.0

    @pytest.mark.parametrize(
        "call",
        [
            lambda: rate_simo([1e-6, 1e-6], [1.0], PAM2, RC),
            lambda: rate_miso([1e-6], [1.0, 0.0], PAM2, RC),
            lambda: rate_mimo(np.ones((2, 3)), [1.0, 0.0], [1.0, 0.0], PAM2, RC),
        ],
    )
    def test_dimension_mismatch(self, call):
        with pytest.raises(ValueError, match="dimension"):
            call()


class TestBeamformers:
    def test_rank_one_dominant_singular(self):
        a, b = np.array([0.3, 1.0, 0.2]), np.array([2.0, 0.5])
        bf = choose_beamformers(np.outer(a, b), "dominant_singular")
        assert abs(bf.effective_gain(np.outer(a, b)) - np.linalg.norm(a) * np.linalg.norm(b)) <= 1e-9

    def test_uniform_scalar(self):
        assert choose_beamformers([[1.0]], "uniform").effective_gain([[1.0]]) == pytest.approx(1.0)

    def test_mrc_single_led_is_matched(self):
        h = np.array([[3.0, 4.0]])
        bf = choose_beamformers(h, "mrc")
        np.testing.assert_allclose(bf.omega, [0.6, 0.8])
        assert bf.effective_gain(h) == pytest.approx(5.0)

    def test_dominant_beats_uniform(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            H = rng.uniform(0, 1, rng.integers(1, 5, size=2))
            top = choose_beamformers(H, "dominant_singular").effective_gain(H)
            assert top >= choose_beamformers(H, "uniform").effective_gain(H) - 1e-12
            assert top == pytest.approx(np.linalg.svd(H, compute_uv=False)[0], rel=1e-9)

    def test_zero_matrix_falls_back(self):
        with pytest.warns(RuntimeWarning, match="zero"):
            bf = choose_beamformers(np.zeros((2, 2)), "mrc")
        assert bf.policy == "uniform" and bf.effective_gain(np.zeros((2, 2))) == 0.0

    def test_negative_entries_rejected(self):
        with pytest.raises(ValueError):
            choose_beamformers([[-1.0]], "mrc")

    def test_unknown_policy(self):
        with pytest.raises(ValueError):
            choose_beamformers([[1.0]], "zf")


def sitting_like_trace(n=200, seed=0):
    rng = np.random.default_rng(seed)
    g = np.abs(rng.normal(gain_for(1.0), gain_for(0.5), (n, 1, 2)))
    return ChannelTrace(g, 1000.0)


class TestRateAlongTrace:
    def test_all_zero_trace(self):
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            series = rate_along_trace(ChannelTrace(np.zeros((5, 1, 2)), 100.0), "simo", PAM2, RC)
        np.testing.assert_array_equal(series.rate, 0.0)

    def test_constant_trace(self):
        series = rate_along_trace(ChannelTrace(np.full((6, 1, 1), gain_for(1.0)), 100.0), "siso", PAM2, RC)
        assert np.all(series.rate == series.rate[0]) and series.rate[0] > 0

    def test_siso_matches_scalar_call(self):
        trace = sitting_like_trace(5)
        series = rate_along_trace(trace, "siso", PAM2, RC, pds=[1])
        for i in range(5):
            assert series.rate[i] == rate_siso(float(trace.gains[i, 0, 1]), PAM2, RC).rate

    def test_mrc_simo_dominates_single_pd(self):
        trace = sitting_like_trace()
        simo = rate_along_trace(trace, "simo", PAM2, RC)
        for n in range(2):
            siso = rate_along_trace(trace, "siso", PAM2, RC, pds=[n])
            assert np.all(simo.rate >= siso.rate - 2 * np.hypot(simo.stderr, siso.stderr))

    def test_mimo_uses_all_links(self):
        g = np.full((3, 2, 2), gain_for(0.5))
        series = rate_along_trace(ChannelTrace(g, 10.0), "mimo", PAM2, RC)
        assert series.rate[0] == pytest.approx(rate_siso(gain_for(1.0), PAM2, RC).rate)

    @pytest.mark.parametrize(
        "kwargs, exc",
        [
            ({"topology": "mesh"}, ValueError),
            ({"topology": "siso", "pds": [0, 1]}, ValueError),
            ({"topology": "simo", "pds": [2]}, IndexError),
        ],
    )
    def test_bad_selection(self, kwargs, exc):
        with pytest.raises(exc):
            rate_along_trace(sitting_like_trace(3), c=PAM2, rc=RC, **kwargs)
