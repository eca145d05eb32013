"""Systematic frequency-shift calculators and budget aggregation.

All shifts are dimensionless fractional frequencies.  Reports render them in
units of 1e-18 with one decimal.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from . import constants as const

UNIT = 1e-18

# Derived once from the AC-field pair: B_AC^2 = 2.17e-11 T^2 shifts the clock by
# -1.4e-18, so the quadratic Zeeman coefficient is -1.4e-18 / 2.17e-11 per T^2.
QUAD_ZEEMAN_COEFF = -1.4e-18 / 2.17e-11  # 1/T^2
BAC2_PER_WATT = 1.45e-12  # T^2/W, RF-power calibration
COOLING_STARK_COEFF = -3.5e-17  # per unit saturation parameter
COOLING_STARK_COEFF_UNC = 0.6e-17
BBR_SHIFT_AT_REF = -9e-18
BBR_REF_TEMPERATURE = 304.15  # K, 31 C


@dataclass(frozen=True)
class ShiftEntry:
    name: str
    value: float
    uncertainty: float
    inputs: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if not self.uncertainty >= 0:
            raise ValueError(f"{self.name}: uncertainty must be non-negative")

    def rendered(self, unit=UNIT):
        return f"{self.value / unit:.1f}", f"{self.uncertainty / unit:.1f}"


@dataclass(frozen=True)
class ShiftBudget:
    entries: tuple[ShiftEntry, ...]
    total_value: float
    total_uncertainty: float

    def __getitem__(self, name):
        for e in self.entries:
            if e.name == name:
                return e
        raise KeyError(name)

    def render_text(self, unit=UNIT):
        width = max([len(e.name) for e in self.entries] + [len("Total")])
        lines = [f"{'Effect':<{width}}  {'Shift':>9}  {'Uncertainty':>11}",
                 f"{'':<{width}}  {'(1e-18)':>9}  {'(1e-18)':>11}",
                 "-" * (width + 24)]
        for e in self.entries:
            v, u = e.rendered(unit)
            lines.append(f"{e.name:<{width}}  {v:>9}  {u:>11}")
        lines.append("-" * (width + 24))
        lines.append(f"{'Total':<{width}}  {self.total_value / unit:>9.1f}  "
                     f"{self.total_uncertainty / unit:>11.1f}")
        return "\n".join(lines)

    def csv_rows(self, unit=UNIT):
        yield ("name", "value_1e18", "uncertainty_1e18", "inputs")
        for e in self.entries:
            inputs = ";".join(f"{k}={v}" for k, v in e.inputs.items())
            yield (e.name, e.value / unit, e.uncertainty / unit, inputs)
        yield ("Total", self.total_value / unit, self.total_uncertainty / unit, "")


@dataclass(frozen=True)
class EmmMeasurement:
    eta: tuple[float, float, float]
    nu_rf: float = const.NU_RF
    nu_l: float = const.NU_AL_CLOCK

    def __post_init__(self):
        if len(self.eta) != 3 or any(e < 0 for e in self.eta):
            raise ValueError("eta must hold three non-negative Lamb-Dicke parameters")


@dataclass(frozen=True)
class ZeemanCal:
    b_mean: float  # T
    rf_power: float = 15.0  # W
    bac2_coeff: float = BAC2_PER_WATT  # T^2/W
    quad_coeff: float = QUAD_ZEEMAN_COEFF  # 1/T^2

    def __post_init__(self):
        if not self.bac2_coeff > 0:
            raise ValueError("bac2_coeff must be positive")
        if not self.quad_coeff < 0:
            raise ValueError("quad_coeff must be negative")


def round_up_1sig(x):
    """Round a non-negative number up to one significant figure."""
    if x <= 0:
        return 0.0
    exp = math.floor(math.log10(x))
    mant = x / 10 ** exp
    # guard against 2.0000000001 -> 3 from float noise
    return math.ceil(round(mant, 9)) * 10.0 ** exp


def time_dilation(v2, f, stark_scale_freq=const.STARK_SCALE_FREQ):
    """Fractional shift -<v^2>/(2c^2) (1 + (f/stark_scale_freq)^2)."""
    if v2 < 0 or f < 0:
        raise ValueError("v2 and f must be non-negative")
    return -v2 / (2 * const.C ** 2) * (1 + (f / stark_scale_freq) ** 2)


def stark_correction_factor(f, stark_scale_freq=const.STARK_SCALE_FREQ):
    return 1 + (f / stark_scale_freq) ** 2


def emm_prefactor(nu_rf=const.NU_RF, nu_l=const.NU_AL_CLOCK):
    return (nu_rf / nu_l) ** 2


def emm_shift(m: EmmMeasurement, uncertainty=0.0, name="Excess micromotion"):
    eta2 = sum(e * e for e in m.eta)
    value = -emm_prefactor(m.nu_rf, m.nu_l) * eta2
    return ShiftEntry(name, value, uncertainty, {"eta": tuple(m.eta), "nu_rf": m.nu_rf})


def order_weighted_shift(p_wrong, shift_wrong, shift_right=0.0):
    if not 0 <= p_wrong <= 1:
        raise ValueError("p_wrong must lie in [0, 1]")
    return p_wrong * shift_wrong + (1 - p_wrong) * shift_right


def temperature_from_bounds(t_low, t_high):
    """Midpoint and half-width of a bounding temperature interval."""
    if t_high < t_low:
        t_low, t_high = t_high, t_low
    return (t_low + t_high) / 2, (t_high - t_low) / 2


def bbr_shift(t_ion, t_unc=0.0, coeff_rel_unc=0.0,
              shift_at_ref=BBR_SHIFT_AT_REF, t_ref=BBR_REF_TEMPERATURE):
    """Blackbody shift scaled as T^4 from its value at ``t_ref`` (kelvin).

    The uncertainty combines the temperature bound through dS/dT = 4 S / T with a
    relative coefficient uncertainty, in quadrature.
    """
    if not t_ion > 0:
        raise ValueError("temperature must be positive (kelvin)")
    value = shift_at_ref * (t_ion / t_ref) ** 4
    u_t = abs(4 * value * t_unc / t_ion)
    u = math.hypot(u_t, coeff_rel_unc * value)
    return ShiftEntry("Blackbody radiation shift", value, u,
                      {"t_ion_K": t_ion, "t_unc_K": t_unc, "coeff_rel_unc": coeff_rel_unc})


def bac2_from_power(p, cal: ZeemanCal | None = None):
    if p < 0:
        raise ValueError("RF power must be non-negative")
    coeff = cal.bac2_coeff if cal else BAC2_PER_WATT
    return coeff * p


def fit_bac2_coeff(powers: Sequence[float], bac2: Sequence[float]):
    """Slope through the origin of B_AC^2 against RF power."""
    num = sum(p * b for p, b in zip(powers, bac2))
    den = sum(p * p for p in powers)
    return num / den


def quad_zeeman_shift(cal: ZeemanCal, coeff_rel_unc=0.0, bac2_rel_unc=0.0):
    """Quadratic Zeeman shift from <B^2> = <B>^2 + B_AC^2.

    The entry's inputs carry the AC-only part under ``ac_shift``.
    """
    if cal.b_mean < 0:
        raise ValueError("b_mean must be non-negative")
    bac2 = bac2_from_power(cal.rf_power, cal)
    value = cal.quad_coeff * (cal.b_mean ** 2 + bac2)
    ac = cal.quad_coeff * bac2
    u = math.hypot(coeff_rel_unc * value, bac2_rel_unc * ac)
    return ShiftEntry("Quad. Zeeman shift", value, u,
                      {"b_mean_T": cal.b_mean, "bac2_T2": bac2, "ac_shift": ac,
                       "quad_coeff": cal.quad_coeff})


def b_mean_for_shift(total_shift, cal: ZeemanCal):
    """Mean field (T) that produces ``total_shift`` given the AC contribution."""
    b2 = total_shift / cal.quad_coeff - bac2_from_power(cal.rf_power, cal)
    if b2 < 0:
        raise ValueError("shift smaller than the AC contribution alone")
    return math.sqrt(b2)


def doppler_residual(diff, imbalance, diff_unc=0.0):
    """First-order Doppler residual after averaging counter-propagating probes.

    The value is zero (averaged out).  The bound is ``(|diff| + diff_unc) *
    imbalance`` rounded up to one significant figure; the central estimate
    ``|diff| * imbalance`` is kept in the inputs.
    """
    if not 0 <= imbalance <= 1:
        raise ValueError("imbalance must lie in [0, 1]")
    central = abs(diff) * imbalance
    bound = round_up_1sig((abs(diff) + diff_unc) * imbalance)
    return ShiftEntry("Linear Doppler shift", 0.0, bound,
                      {"diff": diff, "diff_unc": diff_unc, "imbalance": imbalance,
                       "central": central})


def probe_stark_bound(bound_at_high, attenuation_db):
    if attenuation_db < 0:
        raise ValueError("attenuation must be non-negative")
    return ShiftEntry("Clock laser Stark shift", 0.0, bound_at_high / 10 ** (attenuation_db / 10),
                      {"bound_at_high": bound_at_high, "attenuation_db": attenuation_db})


def constant_entry(name, value=0.0, uncertainty=0.0, source=""):
    return ShiftEntry(name, value, uncertainty, {"source": source} if source else {})


def budget_total(entries: Iterable[ShiftEntry]) -> ShiftBudget:
    entries = tuple(entries)
    value = math.fsum(e.value for e in entries)
    unc = math.sqrt(math.fsum(e.uncertainty ** 2 for e in entries))
    return ShiftBudget(entries, value, unc)
