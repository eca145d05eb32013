"""Monte Carlo simulation of clock servo loops and of a two-clock comparison
sharing one probe laser.

Clock A steers the laser to its ion.  Clock B probes with the same light
and locks a second frequency shifter (the AOM2 analog) to its own ion; the
record of that shifter is the difference of the two clocks.

Frequencies inside the loop are offsets in Hz from the nominal clock
frequency; recorded series are fractional.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from math import comb

import numpy as np
from scipy import optimize

from . import constants as const
from . import noise as noisegen
from .freqstats import FreqSeries

# stream channels; a stream is keyed by (seed, clock id, channel)
CH_LASER, CH_PROJECTION, CH_DETECTION, CH_ORDER = range(4)
LASER_STREAM = 255  # clock id of the shared laser


class ServoInstabilityError(RuntimeError):
    """The servo loop oscillated or lost the line."""


def stream(seed, clock_id, channel):
    """Independent counter-based generator for one (clock, channel) stream."""
    ss = np.random.SeedSequence(seed, spawn_key=(clock_id, channel))
    return np.random.Generator(np.random.Philox(ss))


def rabi_excitation(detuning, rabi_freq, probe_time):
    """Rabi lineshape; ``detuning`` and ``rabi_freq`` in Hz (cyclic)."""
    if probe_time <= 0:
        raise ValueError("probe_time must be positive")
    om2 = (2 * math.pi * rabi_freq) ** 2
    d = 2 * math.pi * np.asarray(detuning, dtype=float)
    w2 = om2 + d * d
    p = om2 / w2 * np.sin(np.sqrt(w2) * probe_time / 2) ** 2
    return p if p.ndim else float(p)


def pi_pulse_rabi_freq(probe_time):
    return 1 / (2 * probe_time)


def half_max_detuning(probe_time):
    """Positive detuning (Hz) where the pi-pulse lineshape falls to 1/2."""
    r = pi_pulse_rabi_freq(probe_time)
    return optimize.brentq(lambda d: rabi_excitation(d, r, probe_time) - 0.5,
                           1e-6 / probe_time, 0.79 / probe_time, xtol=1e-14)


def lineshape_slope(probe_time):
    """|dp/d(detuning)| at the half-maximum point (1/Hz), by central difference."""
    r = pi_pulse_rabi_freq(probe_time)
    d = half_max_detuning(probe_time)
    h = 1e-5 / probe_time
    return abs(rabi_excitation(d + h, r, probe_time) - rabi_excitation(d - h, r, probe_time)) / (2 * h)


@dataclass(frozen=True)
class DetectionModel:
    """Repeated quantum-non-demolition readout.

    ``scheme="majority"`` takes a majority vote over ``reps`` readouts (ties
    are broken at random).  ``scheme="sequential"`` repeats until one outcome
    leads by ``margin`` votes, capped at ``max_reps``.
    """

    single_rep_fidelity: float = 0.8
    reps: int = 5
    scheme: str = "majority"
    margin: int = 4
    max_reps: int = 25

    def __post_init__(self):
        if not 0.5 <= self.single_rep_fidelity <= 1:
            raise ValueError("single_rep_fidelity must lie in [0.5, 1]")
        if self.reps < 1:
            raise ValueError("reps must be >= 1")
        if self.scheme not in ("majority", "sequential"):
            raise ValueError(f"unknown detection scheme {self.scheme!r}")

    @property
    def fidelity(self):
        """Aggregate probability that the reported state is correct."""
        f, n = self.single_rep_fidelity, self.reps
        if self.scheme == "sequential":
            if f == 1:
                return 1.0
            return 1 / (1 + ((1 - f) / f) ** self.margin)
        total = 0.0
        for k in range(n + 1):
            pk = comb(n, k) * f ** k * (1 - f) ** (n - k)
            if 2 * k > n:
                total += pk
            elif 2 * k == n:
                total += pk / 2
        return total

    @property
    def contrast(self):
        return 2 * self.fidelity - 1

    def readout_correct(self, n, rng):
        """Vectorized: whether each of ``n`` readouts reports the true state."""
        f = self.single_rep_fidelity
        if f == 1:
            return np.ones(n, bool)
        if self.scheme == "majority":
            votes = (rng.random((n, self.reps)) < f).sum(axis=1)
            out = 2 * votes > self.reps
            tie = 2 * votes == self.reps
            if tie.any():
                out[tie] = rng.random(int(tie.sum())) < 0.5
            return out
        steps = np.where(rng.random((n, self.max_reps)) < f, 1, -1)
        walk = np.cumsum(steps, axis=1)
        hit = np.abs(walk) >= self.margin
        first = np.where(hit.any(axis=1), hit.argmax(axis=1), self.max_reps - 1)
        final = walk[np.arange(n), first]
        out = final > 0
        tie = final == 0
        if tie.any():
            out[tie] = rng.random(int(tie.sum())) < 0.5
        return out

    def mean_reps(self, n, rng):
        """Monte Carlo mean number of repetitions used."""
        if self.scheme == "majority":
            return float(self.reps)
        steps = np.where(rng.random((n, self.max_reps)) < self.single_rep_fidelity, 1, -1)
        hit = np.abs(np.cumsum(steps, axis=1)) >= self.margin
        first = np.where(hit.any(axis=1), hit.argmax(axis=1), self.max_reps - 1)
        return float(np.mean(first + 1))


@dataclass(frozen=True)
class NoiseModel:
    laser_white_fm: float = 0.0  # fractional / sqrt(Hz)
    laser_flicker_floor: float = 0.0  # fractional Allan floor
    detection: DetectionModel = DetectionModel()
    projection_noise: bool = True

    def __post_init__(self):
        if self.laser_white_fm < 0 or self.laser_flicker_floor < 0:
            raise ValueError("noise amplitudes must be non-negative")


def qndt_detect(excited, noise: NoiseModel, rng):
    """Report the clock-ion state after repeated QND readout."""
    correct = bool(noise.detection.readout_correct(1, rng)[0])
    return bool(excited) if correct else not excited


@dataclass(frozen=True)
class ServoConfig:
    probe_time: float = 0.150
    duty: float = 0.65
    zeeman_alternation_period: float = 5.0
    probes_per_side: int = 1
    gain: float = 0.0923
    direction_alternation: bool = True
    direction_gain_imbalance: float = 0.0  # fractional gain difference between directions

    def __post_init__(self):
        if not 0 < self.duty <= 1 or self.probe_time <= 0:
            raise ValueError("need 0 < probe_time <= cycle_time")
        if not self.gain > 0:
            raise ValueError("gain must be positive")
        if self.probes_per_side < 1:
            raise ValueError("probes_per_side must be >= 1")

    @classmethod
    def with_time_constant(cls, time_constant, **kw):
        base = cls(**kw)
        return replace(base, gain=base.update_interval / time_constant)

    @property
    def cycle_time(self):
        return self.probe_time / self.duty

    @property
    def update_interval(self):
        """Mean time between updates of one Zeeman line's lock point."""
        share = 2 if self.zeeman_alternation_period > 0 else 1
        return 2 * self.probes_per_side * self.cycle_time * share

    @property
    def time_constant(self):
        return self.update_interval / self.gain

    @cached_property
    def half_width(self):
        return half_max_detuning(self.probe_time)

    @cached_property
    def slope(self):
        return lineshape_slope(self.probe_time)


@dataclass(frozen=True)
class LockState:
    """Lock points (Hz) of the two Zeeman lines (+5/2, -5/2)."""

    lock: tuple[float, float] = (0.0, 0.0)
    updates: int = 0

    @property
    def average(self):
        return 0.5 * (self.lock[0] + self.lock[1])


def servo_step(state: LockState, error_signal, config: ServoConfig, line=0, direction=1,
               slope=None):
    """Integrating update of one line's lock point.

    ``error_signal`` is mean(low-side) minus mean(high-side) excitation; a
    positive value means the lock point sits above the line.
    """
    if error_signal == 0:
        return replace(state, updates=state.updates + 1)
    s = config.slope if slope is None else slope
    g = config.gain * (1 + direction * config.direction_gain_imbalance / 2)
    lock = list(state.lock)
    lock[line] -= g * error_signal / (2 * s)
    return LockState(tuple(lock), state.updates + 1)


@dataclass(frozen=True)
class IonOrderModel:
    reorder_mean_interval: float = 200.0  # s
    check_interval: float = 10.0  # s
    swap_displacement: float = 3e-6  # m
    wrong_order_shift: float = -2.7e-17
    latency: str = "next_check"  # or "full_interval"

    def __post_init__(self):
        if self.reorder_mean_interval <= 0 or self.check_interval <= 0:
            raise ValueError("intervals must be positive")
        if self.latency not in ("next_check", "full_interval"):
            raise ValueError(f"unknown latency convention {self.latency!r}")

    def expected_fraction(self):
        """Analytic wrong-order time fraction."""
        lam, t = 1 / self.reorder_mean_interval, self.check_interval
        if self.latency == "full_interval":
            return lam * t / (1 + lam * t)
        # order flips at every collision; restored at each check
        x = 2 * lam * t
        return 0.5 - (-math.expm1(-x)) / (2 * x)


@dataclass
class IonOrderResult:
    fraction: float
    events: list  # (t_start, t_end) of wrong-order intervals

    def mask(self, times):
        """True where ``times`` fall inside a wrong-order interval."""
        times = np.asarray(times, dtype=float)
        if not self.events:
            return np.zeros(times.shape, bool)
        starts = np.array([e[0] for e in self.events])
        ends = np.array([e[1] for e in self.events])
        idx = np.searchsorted(starts, times, side="right") - 1
        ok = idx >= 0
        out = np.zeros(times.shape, bool)
        out[ok] = times[ok] < ends[idx[ok]]
        return out


def simulate_ion_order(model: IonOrderModel, duration, rng) -> IonOrderResult:
    """Poisson re-ordering events; the order is restored at periodic checks."""
    if duration <= 0:
        raise ValueError("duration must be positive")
    if not math.isfinite(model.reorder_mean_interval):
        return IonOrderResult(0.0, [])
    n_exp = duration / model.reorder_mean_interval
    n = rng.poisson(n_exp)
    times = np.sort(rng.uniform(0, duration, n))
    events = []
    chk = model.check_interval
    if model.latency == "full_interval":
        end = -math.inf
        for t in times:
            if t >= end:
                end = min(t + chk, duration)
                events.append((float(t), end))
    else:
        i = 0
        while i < len(times):
            nxt = min((math.floor(times[i] / chk) + 1) * chk, duration)
            # collisions before the check flip the order back and forth
            j = i
            while j < len(times) and times[j] < nxt:
                j += 1
            flips = times[i:j]
            for k in range(0, len(flips), 2):
                end = flips[k + 1] if k + 1 < len(flips) else nxt
                events.append((float(flips[k]), float(end)))
            i = j
    wrong = sum(e - s for s, e in events)
    return IonOrderResult(wrong / duration, events)


@dataclass(frozen=True)
class ClockConfig:
    name: str = "clock"
    servo: ServoConfig = ServoConfig()
    systematic_offset: float = 0.0  # fractional, injected truth
    zeeman_splitting: float = 400.0  # Hz between the two lines
    doppler_differential: float = 0.0  # fractional shift difference between probe directions
    probe_phase: float = 0.0  # probe-window start as a fraction of the cycle
    ion_order: IonOrderModel | None = None


@dataclass
class ComparisonRun:
    seed: int
    series: FreqSeries  # difference record (B lock average), fractional
    zeeman_state: np.ndarray
    probe_direction: np.ndarray
    ion_order: np.ndarray  # 1 where clock A was in the wrong order
    in_loop_error: np.ndarray  # clock A per-update frequency-error estimate, fractional
    truth: dict
    config: dict = field(default_factory=dict)

    @property
    def times(self):
        return self.series.t0 + self.series.dt * np.arange(len(self.series))

    def csv_rows(self):
        yield ("t_seconds", "offset_fractional", "zeeman_state", "probe_direction", "ion_order")
        for row in zip(self.times, self.series.y, self.zeeman_state, self.probe_direction,
                       self.ion_order):
            yield row


def _laser_windows(noise: NoiseModel, n_cycles, n_sub, win_len, starts, dt_fine,
                   laser_offset, rng):
    """Laser fractional frequency averaged over each clock's probe windows."""
    n_fine = n_cycles * n_sub + max(starts) + win_len
    y = noisegen.white_fm(n_fine, dt_fine, noise.laser_white_fm, rng)
    y += noisegen.flicker_fm(n_fine, noise.laser_flicker_floor, rng)
    cs = np.concatenate([[0.0], np.cumsum(y)])
    base = np.arange(n_cycles) * n_sub
    out = []
    for s in starts:
        i = base + s
        out.append((cs[i + win_len] - cs[i]) / win_len + laser_offset)
    return out


class _Clock:
    """Mutable per-run bookkeeping of one clock's probe schedule and lock."""

    def __init__(self, cfg: ClockConfig, noise: NoiseModel, seed, clock_id, n_cycles, nu0):
        self.cfg = cfg
        sv = cfg.servo
        self.nu0 = nu0
        self.rabi = pi_pulse_rabi_freq(sv.probe_time)
        self.dh = sv.half_width
        det = noise.detection
        self.slope = sv.slope * det.contrast
        self.fid = det.fidelity
        self.projection = noise.projection_noise
        if self.projection:
            self.u = stream(seed, clock_id, CH_PROJECTION).random(n_cycles)
            self.correct = det.readout_correct(n_cycles, stream(seed, clock_id, CH_DETECTION))
        half = cfg.zeeman_splitting / 2
        self.state = LockState((half, -half))
        self.centers = (half, -half)
        self.block = 2 * sv.probes_per_side
        self.line = 0
        self.direction = 1
        self.acc = [0.0, 0.0]  # (low, high) detected sums
        self.k = 0
        self.excitations = []
        self.errors = []

    def probe(self, n, laser_hz, truth):
        """One probe cycle; returns a frequency-error estimate (Hz) on block completion."""
        cfg, sv = self.cfg, self.cfg.servo
        side = 1 if self.k % 2 == 0 else -1  # high side first
        shift = truth + self.direction * cfg.doppler_differential / 2
        center = self.nu0 * shift + self.centers[self.line]
        det = laser_hz + self.state.lock[self.line] + side * self.dh - center
        p = rabi_excitation(det, self.rabi, sv.probe_time)
        if self.projection:
            excited = self.u[n] < p
            d = float(excited == self.correct[n])
        else:
            d = self.fid * p + (1 - self.fid) * (1 - p)
        self.acc[0 if side < 0 else 1] += d
        self.excitations.append(d)
        self.k += 1
        if self.k < self.block:
            return None
        err = (self.acc[0] - self.acc[1]) / sv.probes_per_side
        self.state = servo_step(self.state, err, sv, self.line, self.direction, self.slope)
        self.acc = [0.0, 0.0]
        self.k = 0
        if sv.direction_alternation:
            self.direction = -self.direction
        est = err / (2 * self.slope)
        self.errors.append(est)
        return est

    def set_line(self, line):
        if line != self.line:
            self.line = line
            self.acc = [0.0, 0.0]
            self.k = 0

    def check_stable(self, lock_history):
        ex = np.asarray(self.excitations)
        q = max(len(ex) // 4, 1)
        if ex[-q:].mean() < 0.25:
            raise ServoInstabilityError(
                f"{self.cfg.name}: lost the clock line (mean excitation {ex[-q:].mean():.2f})")
        # a loop gain above 2 oscillates: errors alternate in sign at large amplitude
        e = np.asarray(self.errors)
        if e.size > 8:
            late = e[-max(e.size // 4, 4):]
            rms = float(np.sqrt(np.mean(late ** 2)))
            ac = float(np.corrcoef(late[:-1], late[1:])[0, 1]) if np.std(late) > 0 else 0.0
            if ac < -0.75 and rms > 0.1 * self.dh:
                raise ServoInstabilityError(
                    f"{self.cfg.name}: loop oscillates (lag-1 autocorrelation {ac:.2f}, "
                    f"rms error {rms:.3g} Hz)")
        lh = np.asarray(lock_history)
        dev = lh - np.median(lh)
        early = np.sqrt(np.mean(dev[q:2 * q] ** 2))
        late_dev = np.sqrt(np.mean(dev[-q:] ** 2))
        if late_dev > 10 * max(early, 1e-3 * self.dh) and late_dev > self.dh:
            raise ServoInstabilityError(f"{self.cfg.name}: lock-point variance grew "
                                        f"({early:.3g} Hz -> {late_dev:.3g} Hz)")


def run_comparison(clock_a: ClockConfig, clock_b: ClockConfig | None, noise: NoiseModel,
                   duration, seed=0, laser_offset=0.0, n_sub=20,
                   nu0=const.NU_AL_CLOCK) -> ComparisonRun:
    """Simulate clock A steering the shared laser and clock B tracking it.

    With ``clock_b=None`` the recorded series is clock A's laser steer
    (a single-clock servo run).  ``laser_offset`` is a static fractional
    offset of the free-running laser.
    """
    sv = clock_a.servo
    tc = sv.cycle_time
    if clock_b is not None and not math.isclose(clock_b.servo.cycle_time, tc, rel_tol=1e-12):
        raise ValueError("both clocks must share one cycle time")
    if duration < 100 * tc:
        raise ValueError("duration must cover at least 100 cycles")
    n = int(duration // tc)
    dt_fine = tc / n_sub
    clocks_cfg = [clock_a] + ([clock_b] if clock_b is not None else [])
    win = [max(int(round(c.servo.probe_time / dt_fine)), 1) for c in clocks_cfg]
    if len(set(win)) != 1:
        raise ValueError("probe windows of different length are not supported")
    starts = [int(round(c.probe_phase * n_sub)) % n_sub for c in clocks_cfg]
    lasers = _laser_windows(noise, n, n_sub, win[0], starts, dt_fine, laser_offset,
                            stream(seed, LASER_STREAM, CH_LASER))

    times = np.arange(n) * tc
    order = np.zeros(n, bool)
    order_frac = 0.0
    if clock_a.ion_order is not None:
        res = simulate_ion_order(clock_a.ion_order, n * tc, stream(seed, 0, CH_ORDER))
        order = res.mask(times + starts[0] * dt_fine)
        order_frac = res.fraction
    truth_a = clock_a.systematic_offset + np.where(
        order, clock_a.ion_order.wrong_order_shift if clock_a.ion_order else 0.0, 0.0)

    clocks = [_Clock(c, noise, seed, i, n, nu0) for i, c in enumerate(clocks_cfg)]
    period = sv.zeeman_alternation_period
    record = np.empty(n)
    zee = np.empty(n, np.int8)
    direc = np.empty(n, np.int8)
    inloop = []
    la = lasers[0] * nu0
    lb = lasers[1] * nu0 if clock_b is not None else None
    tb = clock_b.systematic_offset if clock_b is not None else 0.0
    hist = [[], []]
    for i in range(n):
        line = int(times[i] // period) % 2 if period > 0 else 0
        for c in clocks:
            c.set_line(line)
        a = clocks[0]
        zee[i] = 1 if line == 0 else -1
        direc[i] = a.direction
        steer = a.state.average  # laser steer, Hz
        est = a.probe(i, la[i], truth_a[i])
        if est is not None:
            inloop.append(est / nu0)
        if clock_b is not None:
            b = clocks[1]
            b.probe(i, lb[i] + steer, tb)
            record[i] = b.state.average / nu0
        else:
            record[i] = a.state.average / nu0
        for k, c in enumerate(clocks):
            hist[k].append(c.state.average)
    for k, c in enumerate(clocks):
        c.check_stable(hist[k])

    truth = {"offset_a": clock_a.systematic_offset, "offset_b": tb,
             "wrong_order_fraction": order_frac,
             "mean_truth_a": float(truth_a.mean())}
    if clock_b is not None:
        truth["expected_difference"] = tb - truth["mean_truth_a"]
    else:
        truth["expected_difference"] = truth["mean_truth_a"] - laser_offset
    return ComparisonRun(seed, FreqSeries(record, tc), zee, direc, order.astype(np.int8),
                         np.asarray(inloop), truth)


def projection_noise_coefficient(clocks, detection: DetectionModel = DetectionModel()):
    """Analytic tau^-1/2 coefficient of the comparison for projection noise only.

    Each probe at a half-maximum point yields a bit of variance 1/4 and a
    frequency estimate of variance ``1 / (4 slope^2)`` per cycle, with the
    slope reduced by the detection contrast.  Independent clocks add in
    quadrature.
    """
    total = 0.0
    for c in clocks:
        sv = c.servo
        s = sv.slope * detection.contrast
        total += sv.cycle_time / (4 * s * s)
    return math.sqrt(total) / const.NU_AL_CLOCK
