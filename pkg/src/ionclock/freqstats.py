"""Frequency-stability estimators and measurement-campaign statistics."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import stats

from .noise import white_fm

ONE_SIGMA = stats.norm.cdf(1) - stats.norm.cdf(-1)


@dataclass(frozen=True)
class FreqSeries:
    """Fractional-frequency samples at fixed cadence; ``gaps`` marks bad samples."""

    y: np.ndarray
    dt: float
    t0: float = 0.0
    gaps: np.ndarray | None = None

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        y = np.asarray(self.y, dtype=float)
        object.__setattr__(self, "y", y)
        if self.gaps is not None:
            g = np.asarray(self.gaps, dtype=bool)
            if g.shape != y.shape:
                raise ValueError("gap mask must match the series length")
            object.__setattr__(self, "gaps", g)

    def __len__(self):
        return self.y.size

    @property
    def duration(self):
        return self.y.size * self.dt

    @property
    def valid(self):
        return np.ones(self.y.size, bool) if self.gaps is None else ~self.gaps

    def mean(self):
        return float(self.y[self.valid].mean())


@dataclass(frozen=True)
class StabilityCurve:
    taus: np.ndarray
    adev: np.ndarray
    ci_low: np.ndarray
    ci_high: np.ndarray
    estimator: str
    edf: np.ndarray = field(default=None, compare=False)

    def csv_rows(self):
        yield ("tau_s", "adev", "ci_low", "ci_high", "estimator")
        for row in zip(self.taus, self.adev, self.ci_low, self.ci_high):
            yield (*row, self.estimator)


@dataclass(frozen=True)
class Measurement:
    mean: float
    sigma: float
    duration: float = 0.0

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("measurement sigma must be positive")


def octave_taus(series: FreqSeries, max_fraction=0.25):
    """Octave-spaced averaging times from ``dt`` to ``len * dt * max_fraction``."""
    m_max = max(int(len(series) * max_fraction), 1)
    ms = 2 ** np.arange(int(math.log2(m_max)) + 1)
    return ms * series.dt


def log_taus(series: FreqSeries, per_octave=1, max_fraction=0.25):
    """Log-spaced averaging times (integer multiples of ``dt``), ``per_octave``
    points per factor of two; ``per_octave=1`` gives the octave grid."""
    if per_octave == 1:
        return octave_taus(series, max_fraction)
    m_max = max(int(len(series) * max_fraction), 1)
    k = np.arange(int(per_octave * math.log2(m_max)) + 1)
    ms = np.unique(np.rint(2.0 ** (k / per_octave)).astype(int))
    return ms[ms <= m_max] * series.dt


def _ms(series, taus):
    taus = np.atleast_1d(np.asarray(taus, dtype=float))
    ms = np.rint(taus / series.dt).astype(int)
    if np.any(ms < 1) or not np.allclose(ms * series.dt, taus, rtol=1e-9, atol=0):
        raise ValueError("every tau must be a positive integer multiple of dt")
    return ms


def edf_adev(n, m, noise="white_fm"):
    """Equivalent degrees of freedom of the overlapping Allan variance.

    Simple approximations from the stability-analysis handbook; ``n`` is the
    number of phase points (frequency samples + 1).
    """
    if noise == "white_fm":
        return (3 * (n - 1) / (2 * m) - 2 * (n - 2) / n) * 4 * m * m / (4 * m * m + 5)
    if noise == "flicker_fm":
        if m == 1:
            return 2 * (n - 2) ** 2 / (2.3 * n - 4.9)
        return 5 * n * n / (4 * m * (n + 3 * m))
    raise ValueError(f"unknown noise type {noise!r}")


def _chi2_interval(var, edf):
    lo_q, hi_q = (1 - ONE_SIGMA) / 2, (1 + ONE_SIGMA) / 2
    lo = np.sqrt(var * edf / stats.chi2.ppf(hi_q, edf))
    hi = np.sqrt(var * edf / stats.chi2.ppf(lo_q, edf))
    return lo, hi


def overlapping_adev(series: FreqSeries, taus=None, noise="white_fm") -> StabilityCurve:
    """Overlapping Allan deviation of fractional-frequency data.

    Averaging windows touching a gapped sample are skipped.  Averaging times
    with fewer than one complete pair are omitted with a warning.
    """
    if len(series) < 2:
        raise ValueError("need at least two samples")
    taus = octave_taus(series) if taus is None else taus
    ms = _ms(series, taus)
    valid = series.valid
    # referencing to one sample keeps a constant record exactly zero
    ref = series.y[valid][0] if valid.any() else 0.0
    y = np.where(valid, series.y - ref, 0.0)
    cs = np.concatenate([[0.0], np.cumsum(y)])
    cbad = np.concatenate([[0], np.cumsum(~valid)])
    n_y = y.size
    out_tau, out_dev, out_edf = [], [], []
    for m in ms:
        npair = n_y - 2 * m + 1
        if npair < 1:
            warnings.warn(f"tau={m * series.dt:g} s omitted: series too short", stacklevel=2)
            continue
        i = np.arange(npair)
        d = cs[i + 2 * m] - 2 * cs[i + m] + cs[i]  # m * (ybar_2 - ybar_1)
        ok = cbad[i + 2 * m] == cbad[i]
        if not ok.any():
            warnings.warn(f"tau={m * series.dt:g} s omitted: no gap-free pairs", stacklevel=2)
            continue
        var = np.mean(d[ok] ** 2) / (2 * m * m)
        out_tau.append(m * series.dt)
        out_dev.append(math.sqrt(var))
        n_eff = int(ok.sum()) + 2 * m  # phase points spanned by the used pairs
        out_edf.append(max(edf_adev(n_eff, m, noise), 1.0))
    dev, edf = np.array(out_dev), np.array(out_edf)
    lo, hi = _chi2_interval(dev ** 2, edf)
    return StabilityCurve(np.array(out_tau), dev, lo, hi, "overlapping_adev", edf)


def nsample_std(series: FreqSeries, taus=None) -> StabilityCurve:
    """Standard deviation of contiguous, non-overlapping tau-averages."""
    if len(series) < 2:
        raise ValueError("need at least two samples")
    taus = octave_taus(series) if taus is None else taus
    ms = _ms(series, taus)
    valid = series.valid
    out_tau, out_dev, out_edf = [], [], []
    for m in ms:
        k = len(series) // m
        if k < 2:
            warnings.warn(f"tau={m * series.dt:g} s omitted: series too short", stacklevel=2)
            continue
        blocks = series.y[: k * m].reshape(k, m)
        ok = valid[: k * m].reshape(k, m).all(axis=1)
        if ok.sum() < 2:
            warnings.warn(f"tau={m * series.dt:g} s omitted: fewer than two gap-free blocks",
                          stacklevel=2)
            continue
        avg = blocks[ok].mean(axis=1)
        out_tau.append(m * series.dt)
        out_dev.append(float(np.std(avg, ddof=1)))
        out_edf.append(float(ok.sum() - 1))
    dev, edf = np.array(out_dev), np.array(out_edf)
    lo, hi = _chi2_interval(dev ** 2, edf)
    return StabilityCurve(np.array(out_tau), dev, lo, hi, "nsample_std", edf)


@dataclass(frozen=True)
class AsymptoteFit:
    coefficient: float  # a in a * tau**-0.5 (slope fixed)
    coefficient_err: float
    exponent: float  # free-slope fit
    exponent_err: float
    free_coefficient: float
    white: bool
    n_points: int

    def interval(self, level=ONE_SIGMA):
        """Two-sided confidence interval of the slope-fixed coefficient."""
        z = stats.norm.ppf(0.5 + level / 2)
        return self.coefficient - z * self.coefficient_err, self.coefficient + z * self.coefficient_err

    def sigma(self, duration):
        """Statistical uncertainty of a measurement of the given duration, or
        None if the curve is not white-FM-like."""
        if not self.white:
            return None
        return self.coefficient / math.sqrt(duration)


def fit_asymptote(curve: StabilityCurve, window=(0.0, math.inf), slope_tol=0.1) -> AsymptoteFit:
    """Log-log weighted fit of a stability curve inside ``window`` (seconds).

    Point weights come from the confidence intervals.  The slope-fixed error
    bar treats all points as fully correlated (the estimates share data), so
    it is the weighted mean of the per-point errors.  The curve counts as
    white FM when the free exponent is within ``max(2 sigma, slope_tol)`` of -0.5.
    """
    lo, hi = window
    sel = (curve.taus >= lo) & (curve.taus <= hi) & (curve.adev > 0)
    if sel.sum() == 0:
        raise ValueError("fit window excludes all points")
    if sel.sum() < 3:
        raise ValueError("need at least 3 points in the fit window")
    lt = np.log(curve.taus[sel])
    ly = np.log(curve.adev[sel])
    # per-point log error from the 1-sigma interval half-width
    err = 0.5 * (np.log(curve.ci_high[sel]) - np.log(curve.ci_low[sel]))
    err = np.where(err > 0, err, np.max(err[err > 0]) if np.any(err > 0) else 1.0)
    w = 1 / err ** 2

    la = np.sum(w * (ly + 0.5 * lt)) / w.sum()
    la_err = np.sum(w * err) / w.sum()

    A = np.vstack([np.ones_like(lt), lt]).T
    W = np.diag(w)
    cov = np.linalg.inv(A.T @ W @ A)
    beta = cov @ A.T @ W @ ly
    # inflate the free-fit covariance the same way (correlated points)
    infl = sel.sum()
    slope, slope_err = float(beta[1]), float(math.sqrt(cov[1, 1] * infl))
    white = abs(slope + 0.5) <= max(2 * slope_err, slope_tol)
    a = math.exp(la)
    return AsymptoteFit(a, a * la_err, slope, slope_err, math.exp(beta[0]), bool(white),
                        int(sel.sum()))


class NonWhiteError(ValueError):
    """The stability curve does not follow a tau^-1/2 law in the fit window."""


def default_window(series: FreqSeries):
    return 10 * series.dt, series.duration / 10


def adev_with_diagnostic(series: FreqSeries, taus=None, window=None):
    """Overlapping ADEV whose error bars switch to flicker-FM degrees of
    freedom when the asymptote fit rejects white FM.

    Returns ``(curve, fit)``; ``fit`` is None when the window holds fewer
    than three points.
    """
    window = default_window(series) if window is None else window
    curve = overlapping_adev(series, taus)
    try:
        fit = fit_asymptote(curve, window)
    except ValueError:
        return curve, None
    if not fit.white:
        curve = overlapping_adev(series, taus, noise="flicker_fm")
    return curve, fit


def measurement_from_series(series: FreqSeries, window=None, noise="white_fm"):
    """Reduce one comparison record to (mean, sigma, duration).

    The default window spans ``[10 dt, duration / 10]``.

    Raises
    ------
    NonWhiteError
        If the record is not white-FM limited, so no sigma can be assigned.
    """
    window = default_window(series) if window is None else window
    curve = overlapping_adev(series, noise=noise)
    fit = fit_asymptote(curve, window)
    sigma = fit.sigma(series.duration)
    if sigma is None:
        raise NonWhiteError(f"record is not white-FM limited (fitted slope {fit.exponent:.2f})")
    return Measurement(series.mean(), sigma, series.duration), fit


@dataclass(frozen=True)
class CampaignResult:
    mean: float
    sigma_mean: float
    chi2_reduced: float
    n: int


def weighted_mean_chi2(ms: Sequence[Measurement]) -> CampaignResult:
    """Inverse-variance weighted mean, its uncertainty and the reduced chi^2."""
    if len(ms) < 2:
        raise ValueError("need at least two measurements")
    x = np.array([m.mean for m in ms])
    s = np.array([m.sigma for m in ms])
    if np.any(s <= 0):
        raise ValueError("all sigmas must be positive")
    w = 1 / s ** 2
    mean = float(np.sum(w * x) / w.sum())
    chi2 = float(np.sum(w * (x - mean) ** 2) / (len(ms) - 1))
    return CampaignResult(mean, float(w.sum() ** -0.5), chi2, len(ms))


def measurements_from_series(records: Sequence[FreqSeries], window=None):
    """Reduce each record; returns ``(measurements, rejected_indices)`` where
    rejected records had no white-FM asymptote."""
    ms, rejected = [], []
    for i, rec in enumerate(records):
        try:
            ms.append(measurement_from_series(rec, window)[0])
        except NonWhiteError:
            rejected.append(i)
    return ms, rejected


def campaign_from_series(records: Sequence[FreqSeries], window=None):
    """Weighted campaign over comparison records.

    Records without a white-FM asymptote get no sigma and are left out;
    their indices are returned alongside the result.
    """
    ms, rejected = measurements_from_series(records, window)
    return weighted_mean_chi2(ms), ms, rejected


def synthetic_campaign(rng, n=56, coefficient=2.8e-15, truth=-1.8e-17,
                       duration_range=(1000.0, 11000.0), dt=1.0):
    """White-FM records consistent with one true offset, for calibrating the
    campaign pipeline.  ``rng`` is a numpy Generator."""
    lo, hi = duration_range
    out = []
    for _ in range(n):
        k = int(rng.uniform(lo, hi) / dt)
        y = truth + white_fm(k, dt, coefficient * math.sqrt(2), rng)
        out.append(FreqSeries(y, dt))
    return out
