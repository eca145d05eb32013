"""Doppler-cooling steady state per normal mode and the cooling-laser
intensity calibration from the dark-state repump fluorescence curve.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import optimize
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted, check_X_y, check_array

from . import constants as const
from .crystal import IonSpecies, Mode, ModeSpectrum, MG25, AXES
from .systematics import COOLING_STARK_COEFF, COOLING_STARK_COEFF_UNC, ShiftEntry

# tau = REPUMP_TAU_S / S
REPUMP_TAU_S = 0.217e-3

# beam at 45 degrees to the trap axis, radial part split evenly between x and y
DEFAULT_DIRECTION = (0.5, 0.5, math.sqrt(0.5))


class NoCoolingError(ValueError):
    """The beam exerts no friction on a mode."""


class IncompleteInputError(ValueError):
    pass


class RepumpFitError(RuntimeError):
    pass


@dataclass(frozen=True)
class CoolingBeam:
    detuning: float = -21e6  # Hz, negative = red
    linewidth: float = const.MG_LINEWIDTH  # Hz
    saturation: float = 0.1033
    direction: tuple[float, float, float] = DEFAULT_DIRECTION
    recoil_anisotropy: float = 0.4  # <cos^2> of emission onto the mode axis
    wavelength: float = const.MG_LAMBDA

    def __post_init__(self):
        if self.saturation < 0:
            raise ValueError("saturation must be non-negative")
        norm = math.sqrt(sum(c * c for c in self.direction))
        if abs(norm - 1) > 1e-9:
            raise ValueError("direction cosines must be unit norm")

    @property
    def effective_linewidth(self):
        return self.linewidth * math.sqrt(1 + self.saturation)

    def projection(self, axis):
        return self.direction[AXES.index(axis)]


@dataclass(frozen=True)
class ModeOccupation:
    nbar: tuple[float, ...]
    provenance: str = "calculated"  # or "measured"

    def __post_init__(self):
        if any(n < 0 for n in self.nbar):
            raise ValueError("nbar must be non-negative")


# measured mean quantum numbers, ordered like the modes (descending frequency)
REFERENCE_NBAR_MEASURED = ModeOccupation((2.9, 4.5, 3.4, 6.3, 10.0, 7.0), "measured")
REFERENCE_NBAR_CALCULATED = ModeOccupation((3.3, 3.8, 3.4, 5.9, 8.0, 5.9), "calculated")
REFERENCE_TD_PER_QUANTUM = (0.226e-18, 0.731e-18, 0.197e-18, 0.290e-18, 0.771e-18, 0.133e-18)


def doppler_energy_ratio(frequency, projection, beam: CoolingBeam, detuning=None):
    """Steady-state mode energy in units of h * frequency (low-saturation theory).

    ``E = (h Gamma_eff / 8) (1 + x^2) / |x| (1 + xi / c^2)`` with
    ``x = 2 delta / Gamma_eff`` and ``c`` the beam projection on the mode axis.
    """
    delta = beam.detuning if detuning is None else detuning
    if delta >= 0:
        raise NoCoolingError("detuning must be red (negative) for cooling")
    if projection == 0:
        raise NoCoolingError("beam has no projection on the mode axis")
    g = beam.effective_linewidth
    x = 2 * delta / g
    return g / (8 * frequency) * (1 + x * x) / abs(x) * (1 + beam.recoil_anisotropy / projection ** 2)


def doppler_nbar(mode: Mode, beam: CoolingBeam = CoolingBeam(), logic: IonSpecies = MG25,
                 logic_index=0, detuning=None):
    """Mean quantum number of one normal mode cooled through the logic ion.

    Friction and recoil heating both scale with the logic ion's squared
    mass-weighted participation, so the single-ion limit applies per mode;
    participation only decides whether the mode is coolable at all.
    """
    if abs(mode.eigenvector[logic_index]) < 1e-12:
        raise NoCoolingError(f"mode at {mode.frequency:.4g} Hz has no {logic.name} participation")
    ratio = doppler_energy_ratio(mode.frequency, beam.projection(mode.axis), beam, detuning)
    return max(ratio - 0.5, 0.0)


def doppler_occupation(spectrum: ModeSpectrum, beam: CoolingBeam = CoolingBeam()):
    return ModeOccupation(tuple(doppler_nbar(m, beam, spectrum.species[0]) for m in spectrum.modes),
                          "calculated")


def scattering_nbar(frequency, beam: CoolingBeam = CoolingBeam(), projection=1.0,
                    mass=MG25.mass, n_traj=2000, n_steps=20000, rng=None):
    """Brute-force Doppler cooling of a 1-D classical harmonic oscillator.

    Scattering candidates arrive as a Poisson process at the peak rate and are
    thinned with the instantaneous, Doppler-shifted Lorentzian rate.  Each
    accepted event applies the absorption kick along the beam and an emission
    kick with projection drawn from ``1 + a u^2`` so ``<u^2>`` equals the recoil
    anisotropy.  Energies are sampled at candidate times (uniform in time),
    discarding the first half of each trajectory.
    """
    rng = np.random.default_rng(rng)
    w = 2 * math.pi * frequency
    gam = 2 * math.pi * beam.linewidth
    delta = 2 * math.pi * beam.detuning
    s = beam.saturation
    k = 2 * math.pi / beam.wavelength
    v_rec = const.HBAR * k / mass
    kc = k * projection
    r_max = gam / 2 * s / (1 + s)
    xi = beam.recoil_anisotropy
    a = (xi - 1 / 3) / (1 / 5 - xi / 3)
    a_max = max(a, 0.0)

    x = np.zeros(n_traj)
    v = np.zeros(n_traj)
    burn = n_steps // 2
    acc_e = 0.0
    count = 0
    for step in range(n_steps):
        dt = rng.exponential(1 / r_max, n_traj)
        c, sn = np.cos(w * dt), np.sin(w * dt)
        x, v = x * c + v / w * sn, -x * w * sn + v * c
        if step >= burn:
            acc_e += np.sum(v * v + (w * x) ** 2)
            count += n_traj
        det = delta - kc * v
        rate = gam / 2 * s / (1 + s + (2 * det / gam) ** 2)
        hit = rng.random(n_traj) < rate / r_max
        nh = int(hit.sum())
        if nh:
            u = _sample_emission(rng, nh, a, a_max)
            v[hit] += v_rec * (projection + u)
    energy = 0.5 * mass * acc_e / count
    return energy / (const.HBAR * w) - 0.5


def _sample_emission(rng, n, a, a_max):
    out = np.empty(0)
    while out.size < n:
        u = rng.uniform(-1, 1, 2 * n)
        keep = rng.random(2 * n) * (1 + a_max) < 1 + a * u * u
        out = np.concatenate([out, u[keep]])
    return out[:n]


def secular_td_total(spectrum: ModeSpectrum | Sequence[float], occ: ModeOccupation):
    """Total time-dilation shift of thermal secular motion.

    ``spectrum`` is a ModeSpectrum or a sequence of TD-per-quantum magnitudes.
    Returns ``(total, per_mode)`` where ``per_mode`` are magnitudes
    ``td * (nbar + 1/2)`` and ``total`` is their negated sum.
    """
    if isinstance(spectrum, ModeSpectrum):
        tds = [m.td_per_quantum for m in spectrum.modes]
    else:
        tds = list(spectrum)
    if len(occ.nbar) != len(tds):
        raise IncompleteInputError(f"need occupations for {len(tds)} modes, got {len(occ.nbar)}")
    per_mode = [td * (n + 0.5) for td, n in zip(tds, occ.nbar)]
    return -math.fsum(per_mode), per_mode


def repump_model(t, b, tau):
    """Cumulative counts from dark-state repumping: b (t + tau (exp(-t/tau) - 1))."""
    t = np.asarray(t, dtype=float)
    return b * (t + tau * np.expm1(-t / tau))


def saturation_from_tau(tau, tau_unc=0.0):
    s = REPUMP_TAU_S / tau
    return s, s * tau_unc / tau


def _initial_guess(t, counts):
    n = len(t)
    tail = max(n // 3, 2)
    b0 = np.polyfit(t[-tail:], counts[-tail:], 1)[0]
    slope = np.gradient(counts, t)
    # smooth the derivative a little; noise otherwise triggers early crossings
    k = max(n // 10, 1)
    if k > 1:
        slope = np.convolve(slope, np.ones(k) / k, mode="same")
    above = np.nonzero(slope >= 0.5 * b0)[0]
    if b0 > 0 and above.size and 0 < above[0] < n - 1:
        tau0 = t[above[0]] / math.log(2)
    else:
        intercept = np.polyfit(t[-tail:], counts[-tail:], 1)[1]
        tau0 = -intercept / b0 if b0 > 0 and intercept < 0 else t[-1] / 5
    return max(b0, 1e-12), max(tau0, t[-1] * 1e-3)


class RepumpFit(RegressorMixin, BaseEstimator):
    """Fit of the repump fluorescence curve; the regressor maps time to
    cumulative counts.

    Counts collected between consecutive sample times are independent
    Poisson variables, so the fit runs on those increments (with
    ``F(0) = 0``) rather than on the correlated cumulative record.

    Attributes
    ----------
    b_ : float
        Bright-state count rate (counts/s).
    tau_ : float
        Repump time constant (s).
    saturation_ : float
        Saturation parameter ``0.217 ms / tau_``.
    covariance_ : ndarray of shape (2, 2)
        Covariance of ``(b_, tau_)``.
    """

    def __init__(self, tau_bounds=(0.0, 1.0), poisson_weights=True, maxfev=5000):
        self.tau_bounds = tau_bounds
        self.poisson_weights = poisson_weights
        self.maxfev = maxfev

    def fit(self, X, y):
        X, y = check_X_y(X, y, ensure_2d=False, y_numeric=True)
        t = np.asarray(X, dtype=float).reshape(-1)
        counts = np.asarray(y, dtype=float)
        if t.size < 5:
            raise ValueError("need at least 5 samples")
        if t[0] < 0 or np.any(np.diff(t) <= 0):
            raise ValueError("times must be non-negative and strictly increasing")
        if np.any(counts < 0):
            raise ValueError("counts must be non-negative")
        if not counts[-1] > 0:
            raise RepumpFitError("no fluorescence counts recorded")
        edges = np.concatenate([[0.0], t])
        inc = np.diff(np.concatenate([[0.0], counts]))

        def model(_, b, tau):
            if tau <= 0:  # keep the optimizer out of the unphysical region
                return np.full(inc.shape, 1e30)
            return np.diff(repump_model(edges, b, tau))

        p0 = _initial_guess(t, counts)
        sigma = np.sqrt(np.maximum(inc, 1.0)) if self.poisson_weights else None
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("error", optimize.OptimizeWarning)
                popt, pcov = optimize.curve_fit(model, t, inc, p0=p0, sigma=sigma,
                                                absolute_sigma=self.poisson_weights,
                                                maxfev=self.maxfev)
        except (RuntimeError, optimize.OptimizeWarning) as exc:
            raise RepumpFitError(f"repump fit did not converge: {exc}") from exc
        b, tau = popt
        if not b > 0:
            raise RepumpFitError(f"no fluorescence signal (fitted rate {b:.3g} counts/s)")
        lo, hi = self.tau_bounds
        if not (lo < tau < hi) or not np.all(np.isfinite(pcov)):
            raise RepumpFitError(f"fitted tau={tau:.3g} s outside ({lo}, {hi}) s")
        if math.sqrt(pcov[1, 1]) > 10 * tau:
            raise RepumpFitError("tau is not constrained by the data")
        self.b_, self.tau_ = float(b), float(tau)
        self.covariance_ = pcov
        self.tau_err_ = float(math.sqrt(pcov[1, 1]))
        self.saturation_, self.saturation_err_ = saturation_from_tau(self.tau_, self.tau_err_)
        return self

    def predict(self, X):
        check_is_fitted(self, "tau_")
        t = check_array(X, ensure_2d=False).reshape(-1)
        return repump_model(t, self.b_, self.tau_)


def fit_repump(t, counts, **kw):
    """Fit ``(b, tau, S)`` to cumulative repump counts; returns the fitted estimator."""
    return RepumpFit(**kw).fit(np.asarray(t), np.asarray(counts))


def cooling_stark_shift(saturation, saturation_unc=0.0,
                        coeff=COOLING_STARK_COEFF, coeff_unc=COOLING_STARK_COEFF_UNC):
    if saturation < 0:
        raise ValueError("saturation must be non-negative")
    value = coeff * saturation
    u = math.hypot(coeff_unc * saturation, coeff * saturation_unc)
    return ShiftEntry("Cooling laser Stark shift", value, u,
                      {"S": saturation, "S_unc": saturation_unc})
