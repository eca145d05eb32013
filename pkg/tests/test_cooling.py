import math

import numpy as np
import pytest

from ionclock.cooling import (REPUMP_TAU_S, REFERENCE_NBAR_CALCULATED, REFERENCE_NBAR_MEASURED,
                              REFERENCE_TD_PER_QUANTUM, CoolingBeam, IncompleteInputError,
                              ModeOccupation, NoCoolingError, RepumpFit, RepumpFitError,
                              cooling_stark_shift, doppler_energy_ratio, doppler_nbar,
                              doppler_occupation, fit_repump, repump_model, saturation_from_tau,
                              scattering_nbar, secular_td_total)
from ionclock.crystal import Mode


@pytest.fixture(scope="module")
def occupation(reference_fit):
    return doppler_occupation(reference_fit.spectrum)


class TestDopplerNbar:
    def test_reference_within_40_percent(self, occupation):
        got = np.array(occupation.nbar)
        want = np.array(REFERENCE_NBAR_CALCULATED.nbar)
        assert np.all(np.abs(got / want - 1) < 0.40)
        assert occupation.provenance == "calculated"

    def test_monotonic_within_axis(self, reference_fit, occupation):
        modes = reference_fit.spectrum.modes
        for axis in "xyz":
            pairs = sorted((m.frequency, n) for m, n in zip(modes, occupation.nbar) if m.axis == axis)
            assert pairs[0][1] > pairs[1][1]

    def test_optimum_detuning(self):
        beam = CoolingBeam()
        g = beam.effective_linewidth
        deltas = np.linspace(-3 * g, -0.05 * g, 2001)
        e = [doppler_energy_ratio(3e6, 0.5, beam, d) for d in deltas]
        assert deltas[int(np.argmin(e))] == pytest.approx(-g / 2, rel=5e-3)

    def test_energy_scales_inverse_frequency(self):
        # n + 1/2 is the energy in units of h f
        mode = lambda f: Mode(f, "z", (1.0, 0.0), (1e-9, 0.0))
        ref = (doppler_nbar(mode(1e6)) + 0.5) * 1e6
        for f in np.linspace(1e6, 8e6, 15):
            assert (doppler_nbar(mode(f)) + 0.5) * f == pytest.approx(ref, rel=1e-2)

    def test_no_logic_participation(self):
        with pytest.raises(NoCoolingError):
            doppler_nbar(Mode(3e6, "z", (0.0, 1.0), (0.0, 5e-9)))

    def test_no_projection(self):
        beam = CoolingBeam(direction=(0.0, 0.0, 1.0))
        with pytest.raises(NoCoolingError):
            doppler_nbar(Mode(3e6, "x", (1.0, 0.0), (5e-9, 0.0)), beam)

    def test_blue_detuning(self):
        with pytest.raises(NoCoolingError):
            doppler_nbar(Mode(3e6, "z", (1.0, 0.0), (5e-9, 0.0)), detuning=5e6)

    def test_beam_validation(self):
        with pytest.raises(ValueError):
            CoolingBeam(direction=(1.0, 1.0, 0.0))
        with pytest.raises(ValueError):
            CoolingBeam(saturation=-0.1)
        with pytest.raises(ValueError):
            ModeOccupation((1.0, -1.0))

    def test_scattering_oracle(self):
        beam = CoolingBeam()
        f, c = 2.5e6, math.sqrt(0.5)
        analytic = doppler_energy_ratio(f, c, beam) - 0.5
        mc = scattering_nbar(f, beam, c, n_traj=400, n_steps=6000, rng=11)
        assert mc == pytest.approx(analytic, rel=0.15)


class TestSecular:
    def test_reference_totals(self):
        total, per_mode = secular_td_total(REFERENCE_TD_PER_QUANTUM, REFERENCE_NBAR_MEASURED)
        want = (0.77, 3.66, 0.77, 1.97, 8.10, 1.00)
        for got, w in zip(per_mode, want):
            assert got / 1e-18 == pytest.approx(w, abs=0.006)
        # -16.27 is the sum of the rounded row
        assert total / 1e-18 == pytest.approx(-16.27, abs=0.02)
        assert f"{total / 1e-18:.1f}" == "-16.3"

    def test_ground_state(self):
        total, _ = secular_td_total(REFERENCE_TD_PER_QUANTUM, ModeOccupation((0.0,) * 6))
        assert total == pytest.approx(-sum(REFERENCE_TD_PER_QUANTUM) / 2, rel=1e-12)

    def test_doubling(self):
        n = np.array(REFERENCE_NBAR_MEASURED.nbar)
        t1, _ = secular_td_total(REFERENCE_TD_PER_QUANTUM, ModeOccupation(tuple(n)))
        t2, _ = secular_td_total(REFERENCE_TD_PER_QUANTUM, ModeOccupation(tuple(2 * n + 0.5)))
        assert t2 == pytest.approx(2 * t1, rel=1e-12)

    def test_spectrum_input(self, reference_fit):
        total, per_mode = secular_td_total(reference_fit.spectrum, REFERENCE_NBAR_MEASURED)
        assert len(per_mode) == 6 and total < 0

    def test_missing_mode(self):
        with pytest.raises(IncompleteInputError):
            secular_td_total(REFERENCE_TD_PER_QUANTUM, ModeOccupation((1.0,) * 5))


def poisson_record(rng, b, tau, n=50, span=10):
    t = np.linspace(tau * span / n, tau * span, n)
    edges = np.concatenate([[0.0], t])
    lam = np.diff(repump_model(edges, b, tau))
    return t, np.cumsum(rng.poisson(lam))


class TestRepump:
    def test_saturation(self):
        s, ds = saturation_from_tau(2.1e-3, 0.8e-3)
        assert s == pytest.approx(0.1033, abs=1e-4)
        assert ds == pytest.approx(s * 0.8 / 2.1)
        assert REPUMP_TAU_S / 2.1e-3 == s

    def test_noiseless_recovery(self):
        t = np.linspace(1e-4, 0.02, 40)
        fit = fit_repump(t, repump_model(t, 5e6, 2.1e-3), poisson_weights=False)
        assert fit.b_ == pytest.approx(5e6, rel=1e-6)
        assert fit.tau_ == pytest.approx(2.1e-3, rel=1e-6)
        assert fit.saturation_ == pytest.approx(0.1033, abs=1e-4)
        assert fit.covariance_.shape == (2, 2)

    def test_poisson_trials(self):
        rng = np.random.default_rng(5)
        tau, ok, pulls = 2.1e-3, 0, []
        for _ in range(200):
            t, c = poisson_record(rng, 1e4 / tau, tau)
            fit = fit_repump(t, c)
            ok += abs(fit.tau_ / tau - 1) < 0.05
            pulls.append((fit.tau_ - tau) / fit.tau_err_)
        assert ok / 200 >= 0.95
        assert 0.8 < np.std(pulls) < 1.2

    def test_quadratic_onset(self):
        t = np.linspace(1e-4, 0.02, 40)
        fit = fit_repump(t, repump_model(t, 5e6, 2.1e-3), poisson_weights=False)
        tiny = np.array([1e-7, 1e-6])
        assert fit.predict(tiny) == pytest.approx(fit.b_ * tiny ** 2 / (2 * fit.tau_), rel=1e-3)

    def test_predict_needs_fit(self):
        from sklearn.exceptions import NotFittedError
        with pytest.raises(NotFittedError):
            RepumpFit().predict([1.0])

    @pytest.mark.parametrize("t, c", [
        ([0.1, 0.2, 0.3, 0.4], [1, 2, 3, 4]),
        ([0.1, 0.2, 0.2, 0.4, 0.5], [1, 2, 3, 4, 5]),
        ([0.1, 0.2, 0.3, 0.4, 0.5], [1, 2, -3, 4, 5]),
    ])
    def test_bad_input(self, t, c):
        with pytest.raises(ValueError):
            fit_repump(t, c)

    def test_no_saturating_curve(self):
        t = np.linspace(1e-3, 0.05, 30)
        with pytest.raises(RepumpFitError):
            fit_repump(t, 1e6 * t ** 2, poisson_weights=False)


class TestCoolingStark:
    def test_budget_entry(self):
        s, ds = saturation_from_tau(2.1e-3, 0.8e-3)
        e = cooling_stark_shift(s, ds)
        assert e.rendered() == ("-3.6", "1.5")

    def test_limits(self):
        assert cooling_stark_shift(0.0).value == 0.0
        assert cooling_stark_shift(1.0).value == pytest.approx(-3.5e-17)

    def test_linear(self):
        assert cooling_stark_shift(0.3).value == pytest.approx(3 * cooling_stark_shift(0.1).value,
                                                               rel=1e-12)

    def test_negative(self):
        with pytest.raises(ValueError):
            cooling_stark_shift(-0.1)
