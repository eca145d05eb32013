import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ionclock.freqstats import (FreqSeries, Measurement, NonWhiteError, StabilityCurve,
                                adev_with_diagnostic, campaign_from_series, edf_adev,
                                fit_asymptote, log_taus, measurement_from_series, nsample_std,
                                octave_taus, overlapping_adev, synthetic_campaign,
                                weighted_mean_chi2)
from ionclock.noise import flicker_fm, white_fm


def white(n=10_000, sigma=1e-15, seed=0, dt=1.0):
    return FreqSeries(np.random.default_rng(seed).normal(0, sigma, n), dt)


def exact_curve(a, taus, exponent=-0.5, rel_ci=0.05):
    taus = np.asarray(taus, dtype=float)
    adev = a * taus ** exponent
    return StabilityCurve(taus, adev, adev * (1 - rel_ci), adev * (1 + rel_ci), "overlapping_adev")


class TestOverlappingAdev:
    def test_white_first_point(self):
        c = overlapping_adev(white(), [1.0])
        assert c.adev[0] == pytest.approx(1e-15, rel=0.03)
        assert c.ci_low[0] < c.adev[0] < c.ci_high[0]

    def test_linear_drift(self):
        d = 3e-18
        s = FreqSeries(d * np.arange(1000.0), 1.0)
        c = overlapping_adev(s, [1, 4, 16, 64])
        assert np.allclose(c.adev, d * c.taus / math.sqrt(2), rtol=1e-6, atol=0)

    def test_constant(self):
        c = overlapping_adev(FreqSeries(np.full(500, 3e-16), 1.0))
        assert np.all(c.adev == 0)

    def test_white_scaling(self):
        c = overlapping_adev(white(40_000, seed=1))
        for tau, dev, lo, hi in zip(c.taus, c.adev, c.ci_low, c.ci_high):
            expect = c.adev[0] / math.sqrt(tau)
            # three-sigma band of the point's own interval
            assert dev - 3 * (dev - lo) <= expect <= dev + 3 * (hi - dev)

    def test_default_grid(self):
        s = white(1000)
        c = overlapping_adev(s)
        assert list(c.taus) == [1, 2, 4, 8, 16, 32, 64, 128]
        assert np.all(np.diff(c.taus) > 0)
        assert list(octave_taus(s)) == list(c.taus)

    def test_quarter_octave_grid(self):
        taus = log_taus(white(1000), per_octave=4)
        assert taus[0] == 1 and taus[-1] <= 250
        assert np.all(np.diff(taus) > 0)
        assert np.allclose(taus, np.rint(taus))

    def test_tau_not_multiple(self):
        with pytest.raises(ValueError):
            overlapping_adev(white(100, dt=0.5), [0.75])

    def test_too_long_tau_omitted(self):
        with pytest.warns(UserWarning, match="omitted"):
            c = overlapping_adev(white(100), [1, 2, 64])
        assert list(c.taus) == [1, 2]

    def test_gaps_excluded(self):
        s = white(2000, seed=3)
        y = s.y.copy()
        gaps = np.zeros(y.size, bool)
        gaps[500:600] = True
        y[gaps] = 1.0  # garbage that must not leak into the estimate
        g = FreqSeries(y, 1.0, gaps=gaps)
        clean = overlapping_adev(s, [1, 4])
        c = overlapping_adev(g, [1, 4])
        assert np.all(c.adev < 2e-15)
        assert c.adev == pytest.approx(clean.adev, rel=0.1)

    def test_all_gapped(self):
        s = FreqSeries(np.zeros(10), 1.0, gaps=np.ones(10, bool))
        with pytest.warns(UserWarning):
            c = overlapping_adev(s, [1])
        assert c.taus.size == 0

    def test_too_short(self):
        with pytest.raises(ValueError):
            overlapping_adev(FreqSeries([1.0], 1.0))

    def test_series_validation(self):
        with pytest.raises(ValueError):
            FreqSeries([1.0, 2.0], 0.0)
        with pytest.raises(ValueError):
            FreqSeries([1.0, 2.0], 1.0, gaps=[True])

    def test_edf(self):
        assert edf_adev(10001, 1) > edf_adev(10001, 100) > 0
        assert edf_adev(10001, 4, "flicker_fm") > 0
        with pytest.raises(ValueError):
            edf_adev(100, 1, "random_walk")

    def test_csv(self):
        rows = list(overlapping_adev(white(100)).csv_rows())
        assert rows[0] == ("tau_s", "adev", "ci_low", "ci_high", "estimator")
        assert rows[1][-1] == "overlapping_adev"


@settings(max_examples=25, deadline=None)
@given(st.floats(-1e-12, 1e-12), st.floats(0.1, 100.0), st.integers(0, 1000))
def test_offset_and_scale_invariance(offset, scale, seed):
    s = white(256, seed=seed)
    base_a = overlapping_adev(s).adev
    base_n = nsample_std(s).adev
    shifted = FreqSeries(s.y + offset, 1.0)
    scaled = FreqSeries(s.y * scale, 1.0)
    assert np.allclose(overlapping_adev(shifted).adev, base_a, rtol=1e-3, atol=1e-19)
    assert np.allclose(nsample_std(shifted).adev, base_n, rtol=1e-3, atol=1e-19)
    assert np.allclose(overlapping_adev(scaled).adev, scale * base_a, rtol=1e-9)
    assert np.allclose(nsample_std(scaled).adev, scale * base_n, rtol=1e-9)


class TestNSample:
    def test_agrees_with_adev(self):
        s = white(20_000, seed=4)
        a = overlapping_adev(s, [1, 8, 64])
        n = nsample_std(s, [1, 8, 64])
        for i in range(3):
            width = (a.ci_high[i] - a.ci_low[i]) + (n.ci_high[i] - n.ci_low[i])
            assert abs(a.adev[i] - n.adev[i]) < 1.5 * width

    def test_constant(self):
        assert np.all(nsample_std(FreqSeries(np.ones(64), 1.0)).adev == 0)

    def test_two_samples(self):
        y = np.array([1.0, 4.0])
        n = nsample_std(FreqSeries(y, 1.0), [1])
        a = overlapping_adev(FreqSeries(y, 1.0), [1])
        assert n.adev[0] == pytest.approx(abs(y[0] - y[1]) / math.sqrt(2))
        assert n.adev[0] == pytest.approx(a.adev[0])

    def test_gapped_blocks_skipped(self):
        y = np.arange(8.0)
        gaps = np.zeros(8, bool)
        gaps[2] = True
        n = nsample_std(FreqSeries(y, 1.0, gaps=gaps), [2])
        assert n.adev[0] == pytest.approx(np.std([0.5, 4.5, 6.5], ddof=1))

    def test_estimator_tag(self):
        assert nsample_std(white(64)).estimator == "nsample_std"


class TestAsymptote:
    def test_exact_recovery(self):
        fit = fit_asymptote(exact_curve(2.8e-15, 2.0 ** np.arange(12)))
        assert fit.coefficient == pytest.approx(2.8e-15, rel=1e-6)
        assert fit.exponent == pytest.approx(-0.5, abs=1e-9)
        assert fit.free_coefficient == pytest.approx(fit.coefficient, rel=1e-9)
        assert fit.white
        assert fit.sigma(10_000) == pytest.approx(2.8e-17, rel=1e-6)

    def test_flat_curve_not_white(self):
        fit = fit_asymptote(exact_curve(1e-16, 2.0 ** np.arange(12), exponent=0.0))
        assert fit.exponent == pytest.approx(0.0, abs=1e-9)
        assert not fit.white
        assert fit.sigma(1000) is None

    def test_flicker_series_flagged(self):
        s = FreqSeries(flicker_fm(20_000, 1e-16, np.random.default_rng(2)), 1.0)
        curve, fit = adev_with_diagnostic(s)
        assert not fit.white
        assert abs(fit.exponent) < 0.25
        assert curve.edf[-1] < overlapping_adev(s).edf[-1]
        with pytest.raises(NonWhiteError):
            measurement_from_series(s)

    def test_window(self):
        c = exact_curve(1e-15, 2.0 ** np.arange(12))
        assert fit_asymptote(c, (4, 256)).n_points == 7
        with pytest.raises(ValueError):
            fit_asymptote(c, (1e6, 1e7))
        with pytest.raises(ValueError):
            fit_asymptote(c, (1, 2))

    def test_coverage(self):
        rng = np.random.default_rng(8)
        a, hits, trials = 1e-15, 0, 500
        for _ in range(trials):
            s = FreqSeries(white_fm(4096, 1.0, a * math.sqrt(2), rng), 1.0)
            fit = fit_asymptote(overlapping_adev(s), (10, 410))
            lo, hi = fit.interval(0.95)
            hits += lo <= a <= hi
        assert hits / trials >= 0.90

    def test_measurement(self):
        rng = np.random.default_rng(9)
        s = FreqSeries(5e-17 + white_fm(8000, 1.0, 2.8e-15 * math.sqrt(2), rng), 1.0)
        m, fit = measurement_from_series(s)
        assert m.duration == 8000
        assert m.sigma == pytest.approx(2.8e-15 / math.sqrt(8000), rel=0.15)
        assert abs(m.mean - 5e-17) < 3 * m.sigma


class TestWeightedMean:
    def test_two_equal(self):
        r = weighted_mean_chi2([Measurement(1.0, 0.5), Measurement(3.0, 0.5)])
        assert r.mean == pytest.approx(2.0)
        assert r.sigma_mean == pytest.approx(0.5 / math.sqrt(2))
        assert r.chi2_reduced == pytest.approx(2 * (1.0 / 0.5) ** 2)
        assert r.n == 2

    def test_dominant_point(self):
        r = weighted_mean_chi2([Measurement(1.0, 1e-6), Measurement(3.0, 1.0), Measurement(-5.0, 1.0)])
        assert r.mean == pytest.approx(1.0, abs=1e-9)

    def test_reorder_and_rescale(self):
        rng = np.random.default_rng(1)
        ms = [Measurement(x, s) for x, s in zip(rng.normal(0, 1, 10), rng.uniform(0.5, 2, 10))]
        a = weighted_mean_chi2(ms)
        b = weighted_mean_chi2(ms[::-1])
        assert a.mean == pytest.approx(b.mean, rel=1e-12)
        c = weighted_mean_chi2([Measurement(m.mean, 3 * m.sigma) for m in ms])
        assert c.chi2_reduced == pytest.approx(a.chi2_reduced / 9, rel=1e-12)
        assert c.mean == pytest.approx(a.mean, rel=1e-12)

    def test_errors(self):
        with pytest.raises(ValueError):
            weighted_mean_chi2([Measurement(1.0, 1.0)])
        with pytest.raises(ValueError):
            Measurement(1.0, 0.0)


class TestCampaign:
    def test_small_replication(self):
        rng = np.random.default_rng(12)
        chi2, hits, reps = [], 0, 40
        for _ in range(reps):
            records = synthetic_campaign(rng, n=20, duration_range=(1000, 3000))
            res, ms, rejected = campaign_from_series(records)
            assert len(ms) + len(rejected) == 20
            chi2.append(res.chi2_reduced)
            hits += abs(res.mean + 1.8e-17) <= res.sigma_mean
        assert 0.7 < np.mean(chi2) < 1.3
        assert 0.5 < hits / reps < 0.85

    def test_rejects_non_white(self):
        rng = np.random.default_rng(3)
        records = synthetic_campaign(rng, n=3, duration_range=(2000, 2001))
        records.append(FreqSeries(flicker_fm(2000, 1e-15, rng), 1.0))
        res, ms, rejected = campaign_from_series(records)
        assert rejected == [3]
        assert res.n == 3
