"""Normal modes of a two-ion, mixed-species crystal in a linear RF trap.

The trap is described in the pseudopotential approximation.  Frequencies are
cyclic (Hz) throughout; angular frequencies only appear inside formulas.

Radial confinement of ion ``i`` is modelled as::

    nu_r,i**2 = nu_pseudo,i**2 - nu_z,i**2 / 2 +/- asym * (m_ref / m_i)

with ``nu_pseudo,i = nu_pseudo,ref * m_ref / m_i``.  The static splitting
``asym`` is a curvature (charge-dependent, mass-independent), quoted as a
frequency squared for the reference species; ``+`` applies to ``y``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy import optimize

from . import constants as const

AXES = ("x", "y", "z")


class InvalidConfigError(ValueError):
    """Trap or species parameters outside their physical domain."""


class UnstableTrapError(ValueError):
    """A mode curvature is non-positive; the crystal is not confined."""


class FitError(RuntimeError):
    """Trap parameter fit did not produce an acceptable solution."""

    def __init__(self, message, residual=math.inf, trap=None):
        super().__init__(f"{message} (best max relative residual {residual:.3g})")
        self.residual = residual
        self.trap = trap


@dataclass(frozen=True)
class IonSpecies:
    name: str
    mass: float  # kg
    charge: int = 1
    clock_frequency: float | None = None  # Hz

    def __post_init__(self):
        if not self.mass > 0:
            raise InvalidConfigError(f"{self.name}: mass must be positive")
        if self.charge != 1:
            raise InvalidConfigError(f"{self.name}: only singly charged ions are supported")

    @classmethod
    def from_u(cls, name, mass_u, charge=1, clock_frequency=None):
        return cls(name, mass_u * const.AMU, charge, clock_frequency)

    @property
    def mass_u(self):
        return self.mass / const.AMU


MG25 = IonSpecies.from_u("25Mg+", const.MASS_MG25_U)
AL27 = IonSpecies.from_u("27Al+", const.MASS_AL27_U, clock_frequency=const.NU_AL_CLOCK)


@dataclass(frozen=True)
class TrapConfig:
    """Linear Paul trap in the pseudopotential approximation.

    Parameters
    ----------
    axial_curvature : float
        Static axial curvature ``k`` in J/m^2, i.e. ``U = k z**2 / 2`` per ion.
    pseudo_radial_freq_ref : float
        Pure-pseudopotential radial frequency (Hz) of a ion of mass
        ``ref_mass``; scales as ``1 / mass``.
    radial_asymmetry : float
        Static x/y splitting term in Hz^2 (reference species).
    """

    axial_curvature: float
    pseudo_radial_freq_ref: float
    radial_asymmetry: float = 0.0
    ref_mass: float = MG25.mass
    nu_rf: float = const.NU_RF
    rf_power: float = 15.0
    stark_scale_freq: float = const.STARK_SCALE_FREQ

    def __post_init__(self):
        if not self.nu_rf > 0:
            raise InvalidConfigError("nu_rf must be positive")
        if not self.ref_mass > 0:
            raise InvalidConfigError("ref_mass must be positive")

    @classmethod
    def from_frequencies(cls, nu_axial_ref, nu_pseudo_ref, radial_asymmetry=0.0,
                         ref_mass=MG25.mass, **kw):
        """Build a trap from single-ion frequencies of the reference species."""
        k = ref_mass * (2 * math.pi * nu_axial_ref) ** 2
        return cls(k, nu_pseudo_ref, radial_asymmetry, ref_mass, **kw)

    def axial_freq(self, ion: IonSpecies):
        return math.sqrt(self.axial_curvature / ion.mass) / (2 * math.pi)

    def pseudo_freq(self, ion: IonSpecies):
        return self.pseudo_radial_freq_ref * self.ref_mass / ion.mass

    def radial_freq2(self, ion: IonSpecies, axis):
        """Squared single-ion radial secular frequency (Hz^2); may be negative."""
        sign = 1.0 if axis == "y" else -1.0
        return (self.pseudo_freq(ion) ** 2 - self.axial_freq(ion) ** 2 / 2
                + sign * self.radial_asymmetry * self.ref_mass / ion.mass)

    def radial_freq(self, ion: IonSpecies, axis):
        f2 = self.radial_freq2(ion, axis)
        if f2 <= 0:
            raise UnstableTrapError(f"{ion.name} deconfined along {axis}")
        return math.sqrt(f2)


@dataclass(frozen=True)
class Mode:
    frequency: float  # Hz
    axis: str
    eigenvector: tuple[float, float]  # mass-weighted, unit norm, (logic, clock)
    zpa: tuple[float, float]  # signed zero-point amplitude per ion, m
    td_per_quantum: float = 0.0  # magnitude; the shift is a red shift

    @property
    def in_phase(self):
        return self.eigenvector[0] * self.eigenvector[1] > 0


@dataclass(frozen=True)
class ModeSpectrum:
    modes: tuple[Mode, ...]
    species: tuple[IonSpecies, IonSpecies]  # (logic, clock)

    @property
    def frequencies(self):
        return np.array([m.frequency for m in self.modes])

    def axis_modes(self, axis):
        return [m for m in self.modes if m.axis == axis]

    def with_logic_signs(self, signs: Sequence[float]) -> "ModeSpectrum":
        """Flip the overall sign of each mode so the logic-ion amplitude has
        the given sign (a mode's global sign carries no physics)."""
        if len(signs) != len(self.modes):
            raise ValueError(f"need {len(self.modes)} signs, got {len(signs)}")
        out = []
        for m, sg in zip(self.modes, signs):
            if sg * m.eigenvector[0] < 0:
                m = replace(m, eigenvector=(-m.eigenvector[0], -m.eigenvector[1]),
                            zpa=(-m.zpa[0], -m.zpa[1]))
            out.append(m)
        return ModeSpectrum(tuple(out), self.species)

    def csv_rows(self):
        yield ("axis", "freq_hz", "zpa_logic_m", "zpa_clock_m", "td_per_quantum")
        for m in self.modes:
            yield (m.axis, m.frequency, m.zpa[0], m.zpa[1], m.td_per_quantum)


def zero_point_scale(ion: IonSpecies, frequency):
    """Single-ion zero-point amplitude sqrt(hbar / (2 m omega)) in m."""
    return math.sqrt(const.HBAR / (2 * ion.mass * 2 * math.pi * frequency))


def equilibrium_separation(trap: TrapConfig, pair: Sequence[IonSpecies] = (MG25, AL27)):
    """Axial ion-ion distance of the two-ion crystal (m).

    Harmonic force ``k s / 2`` on each ion balances the Coulomb repulsion,
    so ``s**3 = q1 q2 / (2 pi eps0 k)`` independent of the masses.
    """
    if not trap.axial_curvature > 0:
        raise InvalidConfigError("axial_curvature must be positive")
    q1, q2 = (ion.charge * const.E_CHARGE for ion in pair)
    return (q1 * q2 / (2 * math.pi * const.EPS0 * trap.axial_curvature)) ** (1 / 3)


def _hessians(trap, pair):
    """Per-axis 2x2 potential Hessians (J/m^2) at equilibrium."""
    s = equilibrium_separation(trap, pair)
    q1, q2 = (ion.charge * const.E_CHARGE for ion in pair)
    kc = q1 * q2 / (4 * math.pi * const.EPS0 * s ** 3)  # = k / 2 for equal charges
    k = trap.axial_curvature
    out = {"z": np.array([[k + 2 * kc, -2 * kc], [-2 * kc, k + 2 * kc]])}
    for axis in ("x", "y"):
        kr = [ion.mass * (2 * math.pi) ** 2 * trap.radial_freq2(ion, axis) for ion in pair]
        out[axis] = np.array([[kr[0] - kc, kc], [kc, kr[1] - kc]])
    return out


def _orient(vec):
    # in-phase modes: both components positive; out-of-phase: logic ion positive
    if vec[0] * vec[1] > 0:
        return np.abs(vec)
    return vec if vec[0] > 0 else -vec


def td_per_quantum(mode: Mode, trap: TrapConfig, clock: IonSpecies, clock_index=1):
    """Time-dilation magnitude per motional quantum for the clock ion.

    Includes the motional Stark correction ``(f / stark_scale_freq)**2``.
    Radial modes also carry intrinsic micromotion with mean-square velocity
    ``(omega_pseudo * x)**2`` per secular displacement ``x``; that term is
    Stark-corrected at the RF frequency.
    """
    a = mode.zpa[clock_index]
    w = 2 * math.pi * mode.frequency
    td = (a * w / const.C) ** 2 * (1 + (mode.frequency / trap.stark_scale_freq) ** 2)
    if mode.axis != "z":
        ratio = trap.pseudo_freq(clock) / mode.frequency
        td *= 1 + ratio ** 2 * (1 + (trap.nu_rf / trap.stark_scale_freq) ** 2)
    return td


def normal_modes(trap: TrapConfig, pair: Sequence[IonSpecies] = (MG25, AL27)) -> ModeSpectrum:
    """Solve the three mass-weighted 2x2 eigenproblems; modes sorted by frequency, descending."""
    pair = tuple(pair)
    m = np.array([ion.mass for ion in pair])
    inv_sqrt_m = 1 / np.sqrt(m)
    modes = []
    for axis, hess in _hessians(trap, pair).items():
        dyn = hess * np.outer(inv_sqrt_m, inv_sqrt_m)
        evals, evecs = np.linalg.eigh(dyn)
        if np.any(evals <= 0):
            raise UnstableTrapError(f"non-positive curvature along {axis}")
        for lam, vec in zip(evals, evecs.T):
            f = math.sqrt(lam) / (2 * math.pi)
            b = _orient(vec)
            zpa = tuple(float(b[i] * zero_point_scale(pair[i], f)) for i in range(2))
            modes.append(Mode(f, axis, (float(b[0]), float(b[1])), zpa))
    modes.sort(key=lambda md: -md.frequency)
    clock = pair[1]
    modes = [replace(md, td_per_quantum=td_per_quantum(md, trap, clock)) for md in modes]
    return ModeSpectrum(tuple(modes), pair)


@dataclass(frozen=True)
class ModeTargets:
    """Target frequencies per axis as ``(upper, lower)`` pairs, optionally with
    the expected in-phase flag of each (True = same-sign amplitudes)."""

    frequencies: Mapping[str, tuple[float, float]]
    in_phase: Mapping[str, tuple[bool, bool]] | None = None

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[str, float]], signs=None):
        """Build from ``(axis, freq)`` items, two per axis, upper mode first."""
        freqs: dict[str, list[float]] = {}
        for axis, f in pairs:
            freqs.setdefault(axis, []).append(float(f))
        if sorted(freqs) != list(AXES) or any(len(v) != 2 for v in freqs.values()):
            raise InvalidConfigError("need exactly two target frequencies per axis x, y, z")
        return cls({a: tuple(v) for a, v in freqs.items()}, signs)


# Measured Al-Mg modes: frequency (Hz) and axis, plus the
# signed zero-point amplitudes (m) of (Mg, Al).
REFERENCE_MODES = (
    ("y", 6.53e6, 4.9e-9, 2.6e-9),
    ("y", 5.66e6, 2.9e-9, -5.0e-9),
    ("z", 5.20e6, 4.6e-9, -4.1e-9),
    ("x", 4.64e6, 5.5e-9, 3.5e-9),
    ("x", 3.41e6, -4.2e-9, 6.2e-9),
    ("z", 3.00e6, 5.6e-9, 5.8e-9),
)
REFERENCE_LOGIC_SIGNS = tuple(1 if zm > 0 else -1 for _, _, zm, _ in REFERENCE_MODES)
REFERENCE_TARGETS = ModeTargets.from_pairs(
    [(a, f) for a, f, _, _ in REFERENCE_MODES],
    signs={"x": (True, False), "y": (True, False), "z": (False, True)},
)


@dataclass
class TrapFitResult:
    trap: TrapConfig
    spectrum: ModeSpectrum
    residuals: np.ndarray  # relative, ordered x-hi, x-lo, y-hi, y-lo, z-hi, z-lo
    nfev: int = 0
    converged: bool = True

    @property
    def max_residual(self):
        return float(np.max(np.abs(self.residuals)))

    @property
    def residual_norm(self):
        return float(np.linalg.norm(self.residuals))


def _model_freqs(trap, pair):
    spec = normal_modes(trap, pair)
    out = []
    for axis in AXES:
        hi, lo = spec.axis_modes(axis)
        out += [hi.frequency, lo.frequency]
    return np.array(out), spec


def fit_trap_params(targets: ModeTargets = REFERENCE_TARGETS,
                    pair: Sequence[IonSpecies] = (MG25, AL27),
                    base: TrapConfig | None = None,
                    max_residual=0.05, max_nfev=2000) -> TrapFitResult:
    """Least-squares fit of (axial curvature, pseudopotential frequency, radial
    asymmetry) to six target mode frequencies, using relative residuals.

    Raises
    ------
    FitError
        If the optimizer fails or the best max relative residual exceeds
        ``max_residual``.
    """
    pair = tuple(pair)
    ref = base or TrapConfig(1.0, 1.0, ref_mass=pair[0].mass)
    target = np.array([f for axis in AXES for f in targets.frequencies[axis]])
    if np.any(target <= 0):
        raise InvalidConfigError("target frequencies must be positive")

    # initial guess from the single-ion limits of each mode family
    m_ratio = pair[0].mass / ref.ref_mass
    z_lo = targets.frequencies["z"][1]
    nu_z0 = z_lo * math.sqrt(m_ratio)
    ry2 = np.mean(np.square(targets.frequencies["y"]))
    rx2 = np.mean(np.square(targets.frequencies["x"]))
    nu_p0 = math.sqrt(max((rx2 + ry2) / 2 + nu_z0 ** 2 / 2, 1.0))
    asym0 = max((ry2 - rx2) / 2, 1.0)
    scale = np.array([nu_z0, nu_p0, max(asym0, 1e6)])

    def make(p):
        nz, npf, asym = (float(v) for v in p * scale)
        return replace(ref, axial_curvature=ref.ref_mass * (2 * math.pi * nz) ** 2,
                       pseudo_radial_freq_ref=npf, radial_asymmetry=asym)

    def resid(p):
        if p[0] <= 0:
            return np.full(6, 10.0)
        try:
            f, _ = _model_freqs(make(p), pair)
        except (UnstableTrapError, InvalidConfigError):
            return np.full(6, 10.0)
        return f / target - 1

    sol = optimize.least_squares(resid, np.array([nu_z0, nu_p0, asym0]) / scale,
                                 method="lm", xtol=1e-15, ftol=1e-15, gtol=1e-15,
                                 max_nfev=max_nfev)
    trap = make(sol.x)
    try:
        freqs, spec = _model_freqs(trap, pair)
    except (UnstableTrapError, InvalidConfigError) as exc:
        raise FitError(f"fit ended in an unconfined trap: {exc}") from exc
    result = TrapFitResult(trap, spec, freqs / target - 1, sol.nfev, sol.status > 0)
    if not result.converged:
        raise FitError("trap fit did not converge", result.max_residual, trap)
    if result.max_residual > max_residual:
        raise FitError("targets inconsistent with the trap model", result.max_residual, trap)
    if targets.in_phase is not None:
        for axis in AXES:
            got = tuple(m.in_phase for m in spec.axis_modes(axis))
            if got != tuple(targets.in_phase[axis]):
                raise FitError(f"amplitude sign pattern mismatch on {axis}",
                               result.max_residual, trap)
    return result


def zpa_normalization(zpa: Sequence[float], frequency, pair=(MG25, AL27)):
    """Sum over ions of (zpa_i / zero_point_scale_i)**2; equals 1 for a normal mode."""
    return sum((a / zero_point_scale(ion, frequency)) ** 2 for a, ion in zip(zpa, pair))


def fit_pseudo_frequency(td_rows: Iterable[tuple[float, float, float]],
                         trap: TrapConfig | None = None, clock: IonSpecies = AL27):
    """Clock-ion pseudopotential frequency (Hz) best reproducing radial
    time-dilation-per-quantum values.

    ``td_rows`` holds ``(frequency_hz, zpa_clock_m, td_per_quantum)`` for radial
    modes.  Solves the relative least-squares problem in closed form, as
    td / secular_td - 1 is linear in ``nu_pseudo**2 / f**2``.
    """
    trap = trap or TrapConfig(1.0, 1.0)
    rf_factor = 1 + (trap.nu_rf / trap.stark_scale_freq) ** 2
    xs, ys = [], []
    for f, a, td in td_rows:
        sec = (a * 2 * math.pi * f / const.C) ** 2 * (1 + (f / trap.stark_scale_freq) ** 2)
        # relative residual: (sec (1 + u x) - td) / td, u = nu_p**2
        xs.append(sec * rf_factor / f ** 2 / td)
        ys.append(1 - sec / td)
    xs, ys = np.array(xs), np.array(ys)
    u = float(xs @ ys / (xs @ xs))
    if u <= 0:
        raise FitError("radial rows imply no intrinsic micromotion")
    return math.sqrt(u)
