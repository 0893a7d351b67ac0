"""Constants table and validated configuration models for nvzero.

All energies are carried as frequencies (energy/h). Inside the library the unit is
MHz; fine-structure inputs are given in GHz the way they are usually quoted and are
converted by the ``*_mhz`` accessors. Times follow the unit in the field name
(``_ns`` or ``_s``).
"""

import json
import logging
import math
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError as PydanticError
from pydantic import field_validator, model_validator

from .catalog_manager import get_preset
from .exceptions import ConfigurationError

logger = logging.getLogger(__name__)

# Physical constants (frequency units)
MU_B_MHZ_PER_G = 1.3996245  # Bohr magneton / h
K_B_MEV_PER_K = 0.08617  # Boltzmann constant
ZPL_NV0_THZ = 521.22  # 575.17 nm
ZPL_NV0_NM = 575.17
ZPL_NVMINUS_THZ = 470.45  # 637.25 nm
GAUSS_FWHM_TO_SIGMA = 1.0 / (2.0 * math.sqrt(2.0 * math.log(2.0)))  # ≈ 1/2.355

# Measured defaults
DEFAULT_G = 2.003
DEFAULT_B_Z_G = 1890.0
TRANSFORM_LIMIT_MHZ = 7.6
POWER_BROADENING_A = 18.6  # MHz/sqrt(nW)
POWER_BROADENING_B = 25.1  # MHz
COLLECTION_EFFICIENCY = 0.03

# Basis labels of the six-level model, in matrix order
LEVEL_LABELS = ("+,down", "-,up", "-,down", "+,up", "0,down", "0,up")
NV_MINUS_LABEL = "NV-"


class _Frozen(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")


class FineStructureParams(_Frozen):
    """Parameters of the NV⁰ ground-state fine-structure Hamiltonian.

    ``lambda_so`` and ``eps_perp`` are in GHz, ``b_z`` in Gauss. Use the
    ``*_mhz`` accessors inside calculations.
    """

    g: float = Field(DEFAULT_G, gt=0)
    l: float = Field(0.039, ge=0)
    lambda_so: float = Field(4.9, gt=0)  # GHz
    eps_perp: float = Field(1.9, ge=0)  # GHz
    b_z: float = Field(DEFAULT_B_Z_G, ge=0)  # Gauss
    mu_b: float = Field(MU_B_MHZ_PER_G, gt=0)  # MHz/G
    k_b: float = Field(K_B_MEV_PER_K, gt=0)  # meV/K

    @property
    def lambda_mhz(self) -> float:
        return self.lambda_so * 1e3

    @property
    def eps_perp_mhz(self) -> float:
        return self.eps_perp * 1e3

    @property
    def spin_zeeman_mhz(self) -> float:
        """g·μ_B·B_z in MHz."""
        return self.g * self.mu_b * self.b_z

    @property
    def orbit_zeeman_mhz(self) -> float:
        """l·μ_B·B_z in MHz."""
        return self.l * self.mu_b * self.b_z

    def with_strain(self, eps_perp_ghz: float) -> "FineStructureParams":
        return self.model_copy(update={"eps_perp": float(eps_perp_ghz)})


class PulseShape(_Frozen):
    """Optical power versus time for one or more AOM-gated pulses.

    Every edge is exponential: the power approaches ``power_nw`` with time constant
    ``rise_ns`` after an on edge and decays with ``fall_ns`` after an off edge. The
    level is continuous across edges unless ``reopen_from_zero`` is set, in which
    case every window opens from zero power.
    """

    power_nw: float = Field(5.0, ge=0)
    windows: List[Tuple[float, float]] = Field(default_factory=lambda: [(0.0, 1000.0)])
    rise_ns: float = Field(30.0, ge=0)
    fall_ns: float = Field(7.0, ge=0)
    reopen_from_zero: bool = False

    @field_validator("windows")
    @classmethod
    def _ordered_windows(cls, windows: List[Tuple[float, float]]):
        last_off = -math.inf
        for on, off in windows:
            if not on < off:
                raise ValueError(f"window ({on}, {off}) must have on < off")
            if on < last_off:
                raise ValueError("windows must be ordered and non-overlapping")
            last_off = off
        return windows

    def edges(self) -> List[float]:
        """All on/off edge times in ascending order."""
        return [t for window in self.windows for t in window]

    def power(self, t):
        """Power in nW at time(s) ``t`` in ns."""
        t = np.asarray(t, dtype=float)
        out = np.zeros_like(t)
        level = 0.0
        prev_off = None
        for on, off in self.windows:
            if prev_off is not None:
                level = 0.0 if self.reopen_from_zero else _relax(level, 0.0, on - prev_off,
                                                                  self.fall_ns)
            start = level
            inside = (t >= on) & (t < off)
            out = np.where(inside, _relax(start, self.power_nw, t - on, self.rise_ns), out)
            level = _relax(start, self.power_nw, off - on, self.rise_ns)
            prev_off = off
            nxt = self._next_on(off)
            after = (t >= off) & (t < nxt)
            out = np.where(after, _relax(level, 0.0, t - off, self.fall_ns), out)
        return np.maximum(out, 0.0) if out.ndim else float(max(out, 0.0))

    def _next_on(self, off: float) -> float:
        for on, _ in self.windows:
            if on >= off:
                return on
        return math.inf

    @classmethod
    def single(cls, power_nw: float, start_ns: float, duration_ns: float, **kw) -> "PulseShape":
        return cls(power_nw=power_nw, windows=[(start_ns, start_ns + duration_ns)], **kw)

    @classmethod
    def constant(cls, power_nw: float) -> "PulseShape":
        """Continuous illumination with no edges inside any practical horizon."""
        return cls(power_nw=power_nw, windows=[(-1e30, 1e30)], rise_ns=0.0, fall_ns=0.0)


def _relax(start, target, dt, tau):
    if tau == 0:
        return np.where(np.asarray(dt) >= 0, target, start) if np.ndim(dt) else target
    return target + (start - target) * np.exp(-np.asarray(dt, dtype=float) / tau)


class RechargeConfig(_Frozen):
    """NV⁰→NV⁻ recharging under resonant yellow light.

    ``rate_per_nw_hz`` is the conversion rate out of the driven spin manifold per nW
    of drive power. ``rescale`` speeds up all slow processes by a fixed factor in the
    simulation; times are mapped back afterwards.
    """

    rate_per_nw_hz: float = Field(9.3, ge=0)
    rescale: float = Field(1e4, gt=0)


class LindbladConfig(_Frozen):
    """Parameters of the six-level (optionally seven-level) master equation."""

    tau_exc_ns: float = Field(22.0, gt=0)
    tau_orbit_ns: float = Field(430.0, gt=0)
    tau_spin_s: float = Field(1.51, gt=0)
    tau_exc_spin_s: Optional[float] = Field(None, gt=0)  # None: no excited-state mixing
    delta_opposite_mhz: float = 160.0
    rabi_slope: float = Field(5.3, ge=0)  # MHz/sqrt(nW)
    detuning_fwhm_mhz: float = Field(20.0, ge=0)
    pulse: PulseShape = Field(default_factory=PulseShape)
    recharge: Optional[RechargeConfig] = None
    collection_efficiency: float = Field(COLLECTION_EFFICIENCY, gt=0, le=1)
    polarization: Literal["linear", "circular"] = "linear"
    n_samples: int = Field(100, ge=1)
    rtol: float = Field(1e-8, gt=0)
    atol: float = Field(1e-10, gt=0)

    @property
    def detuning_sigma_mhz(self) -> float:
        return self.detuning_fwhm_mhz * GAUSS_FWHM_TO_SIGMA

    def with_pulse(self, pulse: PulseShape) -> "LindbladConfig":
        return self.model_copy(update={"pulse": pulse})


class StepConfig(_Frozen):
    """One step of the charge-resonance protocol."""

    power_nw: float = Field(ge=0)
    duration_s: float = Field(gt=0)
    threshold: int = Field(0, ge=0)


class ProtocolConfig(_Frozen):
    """Charge-resonance check, readout and stochastic rate settings."""

    reset: StepConfig = StepConfig(power_nw=12000.0, duration_s=300e-6)
    check_minus: StepConfig = StepConfig(power_nw=4.0, duration_s=70e-6, threshold=6)
    ionise: StepConfig = StepConfig(power_nw=15.0, duration_s=1e-3)
    check_zero: StepConfig = StepConfig(power_nw=25.0, duration_s=250e-6, threshold=25)
    readout_threshold: int = Field(5, ge=0)
    minus_after_threshold: int = Field(1, ge=0)

    p_minus_after_reset: float = Field(0.75, ge=0, le=1)
    ionise_probability: float = Field(0.02, ge=0, le=1)
    minus_mean_counts: float = Field(12.0, ge=0)  # per check_minus window, on resonance
    red_background_counts: float = Field(0.02, ge=0)
    bright_mean_counts: float = Field(25.2, ge=0)  # per check_zero window
    dark_mean_counts: float = Field(0.171, ge=0)

    recharge_rate_per_nw_hz: float = Field(9.3, ge=0)
    spin_pump_rate_per_nw_hz: float = Field(1.0 / (0.090 * 5.0), ge=0)
    tau_spin_s: float = Field(1.51, gt=0)
    dark_leakage_rate_hz: float = Field(0.0, ge=0)
    experiment_duration_s: float = Field(1e-3, gt=0)
    ssro_short_delay_s: float = Field(1e-4, ge=0)
    mixed_delay_s: float = Field(10.0, gt=0)

    spectral_diffusion_step_mhz: float = Field(0.0, ge=0)
    spectral_diffusion_range_mhz: float = Field(200.0, ge=0)
    transform_limit_mhz: float = Field(TRANSFORM_LIMIT_MHZ, ge=0)
    broadening_a: float = Field(POWER_BROADENING_A, ge=0)
    broadening_b: float = Field(POWER_BROADENING_B, ge=0)
    seed: Optional[int] = None


class StrobeConfig(_Frozen):
    """Stroboscopic alternation of yellow pumping and red ionisation periods."""

    yellow_period_s: float = Field(1e-3, gt=0)
    red_period_s: float = Field(1e-3, gt=0)
    ionisation_rate_hz: float = Field(1.0 / 0.018, ge=0)  # during red periods
    spin_relax_override_hz: Optional[float] = Field(None, ge=0)

    @property
    def yellow_duty(self) -> float:
        return self.yellow_period_s / (self.yellow_period_s + self.red_period_s)


class SpectrumConfig(_Frozen):
    """Synthetic photoluminescence-excitation scans."""

    power_nw: float = Field(0.5, ge=0)
    step_mhz: float = Field(1.0, gt=0)
    margin_mhz: float = Field(600.0, gt=0)
    peak_counts: float = Field(200.0, gt=0)
    background_counts: float = Field(0.0, ge=0)
    n_scans: int = Field(1, ge=1)
    drift_mhz: float = Field(0.0, ge=0)
    noise: bool = False
    transform_limit_mhz: float = Field(TRANSFORM_LIMIT_MHZ, ge=0)
    broadening_a: float = Field(POWER_BROADENING_A, ge=0)
    broadening_b: float = Field(POWER_BROADENING_B, ge=0)


class RunConfig(_Frozen):
    """A complete run configuration as read from a JSON file."""

    nv: FineStructureParams = Field(default_factory=FineStructureParams)
    lindblad: LindbladConfig = Field(default_factory=LindbladConfig)
    protocol: ProtocolConfig = Field(default_factory=ProtocolConfig)
    spectrum: SpectrumConfig = Field(default_factory=SpectrumConfig)
    run: Dict[str, Any] = Field(default_factory=dict)

    @model_validator(mode="after")
    def _check_seed(self):
        seed = self.run.get("seed")
        if seed is not None and (not isinstance(seed, int) or seed < 0):
            raise ValueError("run.seed must be a non-negative integer")
        return self


_SECTION_MODELS = {
    "nv": FineStructureParams,
    "lindblad": LindbladConfig,
    "protocol": ProtocolConfig,
    "spectrum": SpectrumConfig,
}


def resolve_section(section: str, data: Optional[Dict[str, Any]] = None) -> BaseModel:
    """Build one configuration section, expanding an optional ``preset`` key.

    Keys given next to ``preset`` override the preset values.

    Raises:
        ConfigurationError: Unknown section, unknown preset or invalid values.
    """
    if section not in _SECTION_MODELS:
        raise ConfigurationError("Unknown configuration section", key=section)
    data = dict(data or {})
    preset_name = data.pop("preset", None)
    merged: Dict[str, Any] = {}
    if preset_name is not None:
        merged.update(get_preset(section, preset_name))
    merged.update(data)
    try:
        return _SECTION_MODELS[section].model_validate(merged)
    except PydanticError as e:
        raise ConfigurationError(str(e), key=section) from e


def load_params_preset(name: str) -> FineStructureParams:
    """Fine-structure parameters of a named preset (e.g. ``"nv_a_method1"``)."""
    return resolve_section("nv", {"preset": name})  # type: ignore[return-value]


def load_run_config(path: Optional[Path] = None) -> RunConfig:
    """Load a run configuration file; ``None`` gives all defaults.

    Raises:
        ConfigurationError: File missing, not JSON, or invalid content.
    """
    if path is None:
        return RunConfig()
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"Configuration file not found: {path}", key="config")
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ConfigurationError(f"Invalid JSON: {e}", key="config") from e
    if not isinstance(raw, dict):
        raise ConfigurationError("Configuration must be a JSON object", key="config")

    unknown = set(raw) - set(_SECTION_MODELS) - {"run"}
    if unknown:
        raise ConfigurationError(f"Unknown sections: {sorted(unknown)}", key="config")

    sections = {name: resolve_section(name, raw.get(name)) for name in _SECTION_MODELS}
    try:
        config = RunConfig(run=raw.get("run", {}), **sections)
    except PydanticError as e:
        raise ConfigurationError(str(e), key="run") from e
    logger.info(f"Loaded run configuration from {path}")
    return config
