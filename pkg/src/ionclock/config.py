"""Run configuration: TOML schema, validation and builders.

Every key carries its unit in the name. Unknown sections or keys are
rejected. Omitted optional keys take their defaults, each logged as a
notice.
"""

from __future__ import annotations

import copy
import hashlib
import json
import logging
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import constants as const
from .clocksim import ClockConfig, DetectionModel, IonOrderModel, NoiseModel, ServoConfig
from .cooling import (CoolingBeam, ModeOccupation, REPUMP_TAU_S, cooling_stark_shift,
                      saturation_from_tau, secular_td_total)
from .crystal import IonSpecies, ModeTargets, TrapConfig, fit_trap_params, normal_modes
from .systematics import (BAC2_PER_WATT, BBR_SHIFT_AT_REF, EmmMeasurement, ZeemanCal,
                          bbr_shift, budget_total, constant_entry, doppler_residual, emm_shift,
                          order_weighted_shift, probe_stark_bound, quad_zeeman_shift,
                          round_up_1sig, temperature_from_bounds, ShiftEntry)

log = logging.getLogger(__name__)

REQUIRED = object()
SHIPPED = ("paper_tableI", "paper_tableII", "comparison_fig2", "equal_mass_demo")


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending key."""


def floats(n=None):
    return ("floats", n)


def bools(n):
    return ("bools", n)


def choice(*options):
    return ("choice", options)


def _species(default_name):
    return {"name": (str, default_name), "mass_u": (float, REQUIRED),
            "charge": (int, 1), "clock_frequency_hz": (float, None)}


SCHEMA = {
    "species.logic": _species("logic"),
    "species.clock": _species("clock"),
    "trap": {
        "axial_freq_ref_hz": (float, None),
        "pseudo_radial_freq_ref_hz": (float, None),
        "radial_asymmetry_hz2": (float, 0.0),
        "nu_rf_hz": (float, const.NU_RF),
        "rf_power_w": (float, 15.0),
        "stark_scale_freq_hz": (float, const.STARK_SCALE_FREQ),
    },
    "modes": {
        "target_x_hz": (floats(2), None),
        "target_y_hz": (floats(2), None),
        "target_z_hz": (floats(2), None),
        "in_phase_x": (bools(2), None),
        "in_phase_y": (bools(2), None),
        "in_phase_z": (bools(2), None),
        "max_residual": (float, 0.05),
        "logic_sign": (floats(6), None),
        "nbar": (floats(), None),
        "nbar_provenance": (choice("measured", "calculated"), "measured"),
    },
    "cooling": {
        "detuning_hz": (float, -21e6),
        "linewidth_hz": (float, const.MG_LINEWIDTH),
        "saturation": (float, None),
        "repump_tau_s": (float, None),
        "repump_tau_unc_s": (float, 0.0),
        "direction": (floats(3), None),
        "recoil_anisotropy": (float, 0.4),
        "wavelength_m": (float, const.MG_LAMBDA),
    },
    "systematics.emm": {
        "eta": (floats(3), (0.0, 0.0, 0.0)),
        "uncertainty": (float, 0.0),
        "wrong_order_fraction": (float, 0.0),
        "wrong_order_shift": (float, -2.7e-17),
    },
    "systematics.secular": {
        "td_per_quantum": (floats(), None),
        "nbar": (floats(), None),
        "relative_uncertainty": (float, 0.3),
        "round_uncertainty_up": (bool, True),
    },
    "systematics.bbr": {
        "t_min_c": (float, 31.0),
        "t_max_c": (float, 31.0),
        "coeff_rel_unc": (float, 0.0),
        "shift_at_ref": (float, BBR_SHIFT_AT_REF),
    },
    "systematics.cooling_stark": {
        "saturation": (float, None),
        "saturation_unc": (float, None),
    },
    "systematics.zeeman": {
        "b_mean_t": (float, 0.0),
        "rf_power_w": (float, 15.0),
        "bac2_per_w_t2": (float, BAC2_PER_WATT),
        "coeff_rel_unc": (float, 0.0),
        "bac2_rel_unc": (float, 0.0),
    },
    "systematics.doppler": {
        "differential": (float, 0.0),
        "differential_unc": (float, 0.0),
        "gain_imbalance": (float, 0.0),
    },
    "systematics.probe_stark": {
        "bound_at_high": (float, 0.0),
        "attenuation_db": (float, 0.0),
    },
    "systematics.background_gas": {"value": (float, 0.0), "uncertainty": (float, 0.0)},
    "systematics.aom": {"value": (float, 0.0), "uncertainty": (float, 0.0)},
    "servo": {
        "probe_time_s": (float, 0.150),
        "duty": (float, 0.65),
        "zeeman_alternation_period_s": (float, 5.0),
        "probes_per_side": (int, 1),
        "time_constant_s": (float, 10.0),
        "direction_alternation": (bool, True),
        "direction_gain_imbalance": (float, 0.0),
    },
    "clock_a": {
        "name": (str, "clock_a"),
        "systematic_offset": (float, 0.0),
        "zeeman_splitting_hz": (float, 400.0),
        "doppler_differential": (float, 0.0),
        "probe_phase": (float, 0.0),
        "ion_order": (bool, False),
    },
    "clock_b": {
        "enabled": (bool, True),
        "name": (str, "clock_b"),
        "systematic_offset": (float, 0.0),
        "zeeman_splitting_hz": (float, 400.0),
        "doppler_differential": (float, 0.0),
        "probe_phase": (float, 0.5),
        "ion_order": (bool, False),
    },
    "noise": {
        "laser_white_fm_per_rthz": (float, 0.0),
        "laser_flicker_floor": (float, 0.0),
        "laser_offset": (float, 0.0),
        "projection_noise": (bool, True),
        "single_rep_fidelity": (float, 0.8),
        "qndt_reps": (int, 5),
        "detection_scheme": (choice("majority", "sequential"), "majority"),
        "sequential_margin": (int, 4),
    },
    "ion_order": {
        "reorder_mean_interval_s": (float, 200.0),
        "check_interval_s": (float, 10.0),
        "swap_displacement_m": (float, 3e-6),
        "wrong_order_shift": (float, -2.7e-17),
        "latency": (choice("next_check", "full_interval"), "next_check"),
    },
    "run": {
        "duration_s": (float, 10700.0),
        "seed": (int, 0),
        "fine_steps_per_cycle": (int, 20),
    },
    "stats": {
        "fit_window_min_s": (float, None),
        "fit_window_max_fraction": (float, 0.1),
        "taus_per_octave": (int, 1),
    },
}


def _check(section, key, kind, value):
    where = f"[{section}] {key}"
    if kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number, got {value!r}")
        value = float(value)
        if not math.isfinite(value):
            raise ConfigError(f"{where}: must be finite")
        return value
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer, got {value!r}")
        return value
    if kind is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected true or false, got {value!r}")
        return value
    if kind is str:
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected a string, got {value!r}")
        return value
    tag, arg = kind
    if tag == "choice":
        if value not in arg:
            raise ConfigError(f"{where}: must be one of {', '.join(arg)}, got {value!r}")
        return value
    if not isinstance(value, list):
        raise ConfigError(f"{where}: expected a list, got {value!r}")
    if arg is not None and len(value) != arg:
        raise ConfigError(f"{where}: expected {arg} entries, got {len(value)}")
    item = float if tag == "floats" else bool
    return tuple(_check(section, key, item, v) for v in value)


def _flatten(raw, prefix=""):
    """Map nested TOML tables to dotted section names."""
    out = {}
    for k, v in raw.items():
        name = f"{prefix}{k}"
        if name in SCHEMA:
            if not isinstance(v, dict):
                raise ConfigError(f"[{name}] must be a table")
            out[name] = v
        elif isinstance(v, dict) and any(s.startswith(name + ".") for s in SCHEMA):
            out.update(_flatten(v, name + "."))
        else:
            raise ConfigError(f"unknown section or key {name!r}")
    return out


def validate(raw: dict) -> dict:
    """Return normalized sections (only those present in ``raw``)."""
    sections = {}
    for name, table in _flatten(raw).items():
        spec = SCHEMA[name]
        for k in table:
            if k not in spec:
                raise ConfigError(f"[{name}] unknown key {k!r}")
        sec = {}
        for k, (kind, default) in spec.items():
            if k in table:
                sec[k] = _check(name, k, kind, table[k])
            elif default is REQUIRED:
                raise ConfigError(f"[{name}] missing required key {k!r}")
            else:
                if default is not None:
                    log.info("[%s] %s not given, using default %r", name, k, default)
                sec[k] = default
        sections[name] = sec
    return sections


@dataclass(frozen=True)
class RunConfig:
    sections: dict
    source: str = "<memory>"

    @classmethod
    def from_dict(cls, raw: dict, source="<memory>"):
        return cls(validate(raw), source)

    @classmethod
    def from_toml(cls, text: str, source="<memory>"):
        try:
            raw = tomllib.loads(text)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{source}: not valid TOML ({exc})") from exc
        return cls.from_dict(raw, source)

    @classmethod
    def load(cls, path_or_name):
        """Load a TOML file, or a shipped config by name (e.g. ``paper_tableI``)."""
        p = Path(path_or_name)
        if p.exists():
            return cls.from_toml(p.read_text(encoding="utf-8"), str(p))
        name = p.name[:-5] if p.name.endswith(".toml") else p.name
        if name in SHIPPED and p.parent == Path("."):
            text = resources.files("ionclock.configs").joinpath(f"{name}.toml").read_text("utf-8")
            return cls.from_toml(text, name)
        raise ConfigError(f"config {str(path_or_name)!r} not found")

    def has(self, name):
        return name in self.sections

    def section(self, name):
        """Validated section; absent sections are built from defaults."""
        if name in self.sections:
            return self.sections[name]
        spec = SCHEMA[name]
        req = [k for k, (_, d) in spec.items() if d is REQUIRED]
        if req:
            raise ConfigError(f"missing section [{name}] (required key {req[0]!r})")
        log.info("[%s] not given, using defaults", name)
        return {k: d for k, (_, d) in spec.items()}

    def resolved(self):
        """All sections with defaults filled in, for manifests and hashing."""
        out = {}
        for name in SCHEMA:
            try:
                out[name] = copy.deepcopy(self.section(name))
            except ConfigError:
                continue
        return out

    @property
    def hash(self):
        blob = json.dumps(self.resolved(), sort_keys=True, default=list).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


# builders

def species_pair(cfg: RunConfig):
    out = []
    for role in ("logic", "clock"):
        s = cfg.section(f"species.{role}")
        f = s["clock_frequency_hz"]
        if role == "clock" and f is None:
            f = const.NU_AL_CLOCK
        try:
            out.append(IonSpecies.from_u(s["name"], s["mass_u"], s["charge"], f))
        except ValueError as exc:
            raise ConfigError(f"[species.{role}] {exc}") from exc
    return tuple(out)


def mode_targets(cfg: RunConfig):
    m = cfg.section("modes")
    given = [m[f"target_{a}_hz"] for a in "xyz"]
    if all(g is None for g in given):
        return None
    for a, g in zip("xyz", given):
        if g is None:
            raise ConfigError(f"[modes] missing key 'target_{a}_hz' (targets need all three axes)")
    signs = [m[f"in_phase_{a}"] for a in "xyz"]
    in_phase = dict(zip("xyz", signs)) if all(s is not None for s in signs) else None
    freqs = {a: tuple(sorted(g, reverse=True)) for a, g in zip("xyz", given)}
    return ModeTargets(freqs, in_phase)


def trap_config(cfg: RunConfig, logic: IonSpecies):
    t = cfg.section("trap")
    kw = dict(nu_rf=t["nu_rf_hz"], rf_power=t["rf_power_w"],
              stark_scale_freq=t["stark_scale_freq_hz"])
    if t["axial_freq_ref_hz"] is None or t["pseudo_radial_freq_ref_hz"] is None:
        return None, kw
    if not t["axial_freq_ref_hz"] > 0:
        raise ConfigError("[trap] axial_freq_ref_hz must be positive")
    try:
        trap = TrapConfig.from_frequencies(t["axial_freq_ref_hz"], t["pseudo_radial_freq_ref_hz"],
                                           t["radial_asymmetry_hz2"], logic.mass, **kw)
    except ValueError as exc:
        raise ConfigError(f"[trap] {exc}") from exc
    return trap, kw


def mode_spectrum(cfg: RunConfig):
    """Returns ``(trap, spectrum, fit_result_or_None)``."""
    pair = species_pair(cfg)
    targets = mode_targets(cfg)
    trap, kw = trap_config(cfg, pair[0])
    if targets is not None:
        base = TrapConfig(1.0, 1.0, ref_mass=pair[0].mass, **kw)
        res = fit_trap_params(targets, pair, base, max_residual=cfg.section("modes")["max_residual"])
        trap, spec = res.trap, res.spectrum
    elif trap is None:
        raise ConfigError("[trap] need axial_freq_ref_hz and pseudo_radial_freq_ref_hz, "
                          "or [modes] target frequencies")
    else:
        res, spec = None, normal_modes(trap, pair)
    signs = cfg.section("modes")["logic_sign"]
    if signs is not None:
        spec = spec.with_logic_signs(signs)
    return trap, spec, res


def occupation(cfg: RunConfig, n_modes=6):
    m = cfg.section("modes")
    if m["nbar"] is None:
        return None
    if len(m["nbar"]) != n_modes:
        raise ConfigError(f"[modes] nbar: expected {n_modes} entries, got {len(m['nbar'])}")
    try:
        return ModeOccupation(m["nbar"], m["nbar_provenance"])
    except ValueError as exc:
        raise ConfigError(f"[modes] nbar: {exc}") from exc


def saturation(cfg: RunConfig):
    """Saturation parameter and its uncertainty from [cooling]."""
    c = cfg.section("cooling")
    if c["saturation"] is not None:
        return c["saturation"], 0.0
    if c["repump_tau_s"] is not None:
        if not c["repump_tau_s"] > 0:
            raise ConfigError("[cooling] repump_tau_s must be positive")
        return saturation_from_tau(c["repump_tau_s"], c["repump_tau_unc_s"])
    s = REPUMP_TAU_S / 2.1e-3
    log.info("[cooling] neither saturation nor repump_tau_s given, using S=%.4f", s)
    return s, 0.0


def cooling_beam(cfg: RunConfig):
    c = cfg.section("cooling")
    kw = {}
    if c["direction"] is not None:
        kw["direction"] = c["direction"]
    try:
        return CoolingBeam(c["detuning_hz"], c["linewidth_hz"], saturation(cfg)[0],
                           recoil_anisotropy=c["recoil_anisotropy"],
                           wavelength=c["wavelength_m"], **kw)
    except ValueError as exc:
        raise ConfigError(f"[cooling] {exc}") from exc


def _entry(section, fn, *args, **kw):
    """Call a shift calculator, reporting bad inputs against ``section``."""
    try:
        return fn(*args, **kw)
    except ValueError as exc:
        raise ConfigError(f"[{section}] {exc}") from exc


def secular_entry(cfg: RunConfig):
    s = cfg.section("systematics.secular")
    tds = s["td_per_quantum"]
    if tds is None:
        _, spec, _ = mode_spectrum(cfg)
        tds = [m.td_per_quantum for m in spec.modes]
    nbar = s["nbar"]
    if nbar is None:
        occ = occupation(cfg, len(tds))
        if occ is None:
            raise ConfigError("[systematics.secular] missing key 'nbar' (or [modes] nbar)")
    else:
        occ = _entry("systematics.secular", ModeOccupation, nbar)
    try:
        value, per_mode = secular_td_total(tds, occ)
    except ValueError as exc:
        raise ConfigError(f"[systematics.secular] {exc}") from exc
    u = s["relative_uncertainty"] * abs(value)
    if s["round_uncertainty_up"]:
        u = round_up_1sig(u)
    return ShiftEntry("Secular motion", value, u,
                      {"td_per_quantum": tuple(tds), "nbar": tuple(occ.nbar),
                       "per_mode": tuple(per_mode), "relative_uncertainty": s["relative_uncertainty"]})


def budget(cfg: RunConfig):
    """All nine budget rows and their totals."""
    e = cfg.section("systematics.emm")
    nu_rf = cfg.section("trap")["nu_rf_hz"]
    emm = _entry("systematics.emm", emm_shift, EmmMeasurement(tuple(e["eta"]), nu_rf))
    order = _entry("systematics.emm", order_weighted_shift, e["wrong_order_fraction"],
                   e["wrong_order_shift"])
    emm = ShiftEntry("Excess micromotion", emm.value + order, e["uncertainty"],
                     {**emm.inputs, "measured": emm.value, "wrong_order": order,
                      "wrong_order_fraction": e["wrong_order_fraction"]})

    b = cfg.section("systematics.bbr")
    t_mid, t_half = temperature_from_bounds(b["t_min_c"], b["t_max_c"])
    bbr = _entry("systematics.bbr", bbr_shift, t_mid + const.ZERO_CELSIUS, t_half,
                 b["coeff_rel_unc"], shift_at_ref=b["shift_at_ref"])

    cs = cfg.section("systematics.cooling_stark")
    if cs["saturation"] is not None:
        s, s_unc = cs["saturation"], cs["saturation_unc"] or 0.0
    else:
        s, s_unc = saturation(cfg)
    stark = _entry("systematics.cooling_stark", cooling_stark_shift, s, s_unc)

    z = cfg.section("systematics.zeeman")
    try:
        cal = ZeemanCal(z["b_mean_t"], z["rf_power_w"], z["bac2_per_w_t2"])
    except ValueError as exc:
        raise ConfigError(f"[systematics.zeeman] {exc}") from exc
    qz = _entry("systematics.zeeman", quad_zeeman_shift, cal, z["coeff_rel_unc"], z["bac2_rel_unc"])

    d = cfg.section("systematics.doppler")
    dop = _entry("systematics.doppler", doppler_residual, d["differential"], d["gain_imbalance"],
                 d["differential_unc"])
    p = cfg.section("systematics.probe_stark")
    probe = _entry("systematics.probe_stark", probe_stark_bound, p["bound_at_high"],
                   p["attenuation_db"])
    g = cfg.section("systematics.background_gas")
    a = cfg.section("systematics.aom")
    gas = _entry("systematics.background_gas", constant_entry, "Background gas collisions",
                 g["value"], g["uncertainty"], "config")
    aom = _entry("systematics.aom", constant_entry, "AOM freq. error", a["value"],
                 a["uncertainty"], "config")
    rows = (emm, secular_entry(cfg), bbr, stark, qz, dop, probe, gas, aom)
    return budget_total(rows)


def servo_config(cfg: RunConfig):
    s = cfg.section("servo")
    try:
        return ServoConfig.with_time_constant(
            s["time_constant_s"], probe_time=s["probe_time_s"], duty=s["duty"],
            zeeman_alternation_period=s["zeeman_alternation_period_s"],
            probes_per_side=s["probes_per_side"], direction_alternation=s["direction_alternation"],
            direction_gain_imbalance=s["direction_gain_imbalance"])
    except (ValueError, ZeroDivisionError) as exc:
        raise ConfigError(f"[servo] {exc}") from exc


def ion_order_model(cfg: RunConfig):
    o = cfg.section("ion_order")
    try:
        return IonOrderModel(o["reorder_mean_interval_s"], o["check_interval_s"],
                             o["swap_displacement_m"], o["wrong_order_shift"], o["latency"])
    except ValueError as exc:
        raise ConfigError(f"[ion_order] {exc}") from exc


def clock_config(cfg: RunConfig, which):
    c = cfg.section(which)
    if which == "clock_b" and not c["enabled"]:
        return None
    return ClockConfig(c["name"], servo_config(cfg), c["systematic_offset"],
                       c["zeeman_splitting_hz"], c["doppler_differential"], c["probe_phase"],
                       ion_order_model(cfg) if c["ion_order"] else None)


def noise_model(cfg: RunConfig):
    n = cfg.section("noise")
    try:
        det = DetectionModel(n["single_rep_fidelity"], n["qndt_reps"], n["detection_scheme"],
                             n["sequential_margin"])
        return NoiseModel(n["laser_white_fm_per_rthz"], n["laser_flicker_floor"], det,
                          n["projection_noise"])
    except ValueError as exc:
        raise ConfigError(f"[noise] {exc}") from exc


def fit_window(cfg: RunConfig, series):
    s = cfg.section("stats")
    lo = s["fit_window_min_s"]
    lo = 10 * series.dt if lo is None else lo
    return lo, series.duration * s["fit_window_max_fraction"]
