"""Monte-Carlo simulation of the charge-resonance check and the readout experiments.

The emitter is either NV⁻ (a single placeholder level) or NV⁰ with spin ↓ or ↑.
Under yellow light the ↓ state fluoresces and can convert to NV⁻ (recharging) or be
pumped into ↑; these in-step events are drawn as exponential waiting times and the
photon counts are split around them. Waits between steps use exact propagators.

Step flow of one protocol cycle::

    RESET → CHECK_MINUS ─ 0 counts ──────────────→ RESET
                        ─ below threshold ──────→ CHECK_MINUS
                        ─ at/above threshold ───→ IONISE → CHECK_ZERO
    CHECK_ZERO ─ counts > threshold (herald) ───→ EXPERIMENT → CHECK_MINUS_AFTER → CHECK_ZERO
               ─ otherwise ─────────────────────→ CHECK_MINUS
"""

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.linalg import expm

from .config import ProtocolConfig, StepConfig, StrobeConfig
from .estimation import ReadoutFidelity, readout_fidelity
from .exceptions import ValidationError
from .models import CountHistogram, RatePopulations
from .rate_models import ThreeLevelRates, power_broadened_gaussian, voigt_profile
from .utils.seeding import SeedLike, derive_seeds, make_rng

logger = logging.getLogger(__name__)

MAX_STEPS_PER_HERALD = 100_000
MIXED_STATE_TOLERANCE = 2e-3  # excess ↓ population tolerated in a mixed run


class Charge(str, Enum):
    NV_MINUS = "NV-"
    NV_ZERO = "NV0"


class Spin(str, Enum):
    DOWN = "down"
    UP = "up"
    UNSPECIFIED = "unspecified"


class Step(str, Enum):
    RESET = "reset"
    CHECK_MINUS = "check_minus"
    IONISE = "ionise"
    CHECK_ZERO = "check_zero"
    EXPERIMENT = "experiment"
    CHECK_MINUS_AFTER = "check_minus_after"


@dataclass
class ProtocolState:
    """Charge, spin and optical-line offset of the simulated emitter."""
    charge: Charge = Charge.NV_MINUS
    spin: Spin = Spin.UNSPECIFIED
    spectral_offset_mhz: float = 0.0
    clock_s: float = 0.0

    def set_minus(self) -> None:
        self.charge, self.spin = Charge.NV_MINUS, Spin.UNSPECIFIED

    def set_zero(self, spin: Spin) -> None:
        self.charge, self.spin = Charge.NV_ZERO, spin

    @property
    def is_bright(self) -> bool:
        return self.charge == Charge.NV_ZERO and self.spin == Spin.DOWN

    def advance(self, dt: float) -> None:
        if dt < 0:
            raise ValidationError("Clock must be monotone")
        self.clock_s += dt


def sample_photon_count(rate_hz: float, duration_s: float, rng: np.random.Generator) -> int:
    """Poisson-distributed detector counts for a mean rate over a window."""
    if rate_hz < 0 or duration_s < 0:
        raise ValidationError("Rate and duration must be >= 0")
    mean = rate_hz * duration_s
    return int(rng.poisson(mean)) if mean > 0 else 0


def _random_spin(rng: np.random.Generator) -> Spin:
    return Spin.DOWN if rng.random() < 0.5 else Spin.UP


class ProtocolSimulator:
    """Executes protocol steps on a :class:`ProtocolState` with one random stream."""

    def __init__(self, cfg: ProtocolConfig, rng: np.random.Generator,
                 event_log: Optional[List[str]] = None):
        self.cfg = cfg
        self.rng = rng
        self.event_log = event_log

    # -- line shape and rates -------------------------------------------------

    def line_factor(self, state: ProtocolState, power_nw: float) -> float:
        """Relative excitation of the resonant line at the current spectral offset."""
        if state.spectral_offset_mhz == 0.0:
            return 1.0
        f_g = float(power_broadened_gaussian(power_nw, self.cfg.broadening_a, self.cfg.broadening_b))
        return float(voigt_profile(state.spectral_offset_mhz, 0.0, f_g, self.cfg.transform_limit_mhz))

    def _log(self, state: ProtocolState, step: Step, duration: float, counts: int, decision: str):
        if self.event_log is not None:
            self.event_log.append(
                f"{state.clock_s:.9f}\t{step.value}\t{duration:.3e}\t{counts}\t{decision}"
            )

    # -- steps ----------------------------------------------------------------

    def reset(self, state: ProtocolState) -> None:
        """Green repump: NV⁻ with the configured probability, and a diffusion step."""
        cfg = self.cfg
        if self.rng.random() < cfg.p_minus_after_reset:
            state.set_minus()
        else:
            state.set_zero(_random_spin(self.rng))
        if cfg.spectral_diffusion_step_mhz > 0:
            offset = state.spectral_offset_mhz + self.rng.normal(0.0, cfg.spectral_diffusion_step_mhz)
            limit = cfg.spectral_diffusion_range_mhz
            state.spectral_offset_mhz = float(min(max(offset, -limit), limit))
        state.advance(cfg.reset.duration_s)
        self._log(state, Step.RESET, cfg.reset.duration_s, 0, "check_minus")

    def red_check(self, state: ProtocolState, step: StepConfig) -> int:
        """Counts of a red NV⁻ check; NV⁰ contributes background only."""
        cfg = self.cfg
        mean = cfg.red_background_counts
        if state.charge == Charge.NV_MINUS:
            mean += cfg.minus_mean_counts * self.line_factor(state, step.power_nw)
        counts = int(self.rng.poisson(mean))
        state.advance(step.duration_s)
        return counts

    def yellow_step(self, state: ProtocolState, step: StepConfig) -> int:
        """Counts under resonant yellow light, including in-step charge and spin events.

        The ↓ state fluoresces at the bright mean rate scaled by the line shape and
        leaves either to NV⁻ or to ↑; the first event time is exponential.
        """
        cfg = self.cfg
        duration = step.duration_s
        factor = self.line_factor(state, step.power_nw)
        bright_rate = cfg.bright_mean_counts / cfg.check_zero.duration_s * factor
        dark_rate = cfg.dark_mean_counts / cfg.check_zero.duration_s
        scale = step.power_nw / cfg.check_zero.power_nw if cfg.check_zero.power_nw > 0 else 0.0
        bright_rate *= scale
        dark_rate *= scale

        if not state.is_bright:
            state.advance(duration)
            return sample_photon_count(dark_rate, duration, self.rng)

        recharge = cfg.recharge_rate_per_nw_hz * step.power_nw * factor
        pump = cfg.spin_pump_rate_per_nw_hz * step.power_nw * factor
        total = recharge + pump
        t_event = self.rng.exponential(1.0 / total) if total > 0 else math.inf
        if t_event >= duration:
            state.advance(duration)
            return sample_photon_count(bright_rate, duration, self.rng)

        counts = sample_photon_count(bright_rate, t_event, self.rng)
        if self.rng.random() < recharge / total:
            state.set_minus()
        else:
            state.set_zero(Spin.UP)
        counts += sample_photon_count(dark_rate, duration - t_event, self.rng)
        state.advance(duration)
        return counts

    def ionise(self, state: ProtocolState) -> None:
        """Yellow plus red pulse: NV⁻ ionises with low probability into a random spin."""
        cfg = self.cfg
        if state.charge == Charge.NV_MINUS:
            state.advance(cfg.ionise.duration_s)
            if self.rng.random() < cfg.ionise_probability:
                state.set_zero(_random_spin(self.rng))
        else:
            self.yellow_step(state, cfg.ionise)
        self._log(state, Step.IONISE, cfg.ionise.duration_s, 0, "check_zero")

    def wait(self, state: ProtocolState, duration_s: float) -> None:
        """Dark evolution: exact spin relaxation and optional charge leakage."""
        cfg = self.cfg
        if duration_s <= 0:
            return
        if state.charge == Charge.NV_ZERO:
            if cfg.dark_leakage_rate_hz > 0 and self.rng.random() < -math.expm1(-cfg.dark_leakage_rate_hz * duration_s):
                state.set_minus()
            else:
                stay = 0.5 * (1.0 + math.exp(-duration_s / cfg.tau_spin_s))
                if self.rng.random() >= stay:
                    state.spin = Spin.UP if state.spin == Spin.DOWN else Spin.DOWN
        state.advance(duration_s)

    # -- state machine ----------------------------------------------------------

    def run_until_herald(self, state: ProtocolState, start: Step = Step.RESET,
                         counts_by_step: Optional[Dict[Step, List[int]]] = None) -> Tuple[bool, int]:
        """Step the state machine until a successful NV⁰ check.

        Returns (heralded, number of NV⁰ checks). Gives up after
        ``MAX_STEPS_PER_HERALD`` steps.
        """
        cfg = self.cfg
        step = start
        checks = 0
        for _ in range(MAX_STEPS_PER_HERALD):
            if step == Step.RESET:
                self.reset(state)
                step = Step.CHECK_MINUS
            elif step in (Step.CHECK_MINUS, Step.CHECK_MINUS_AFTER):
                counts = self.red_check(state, cfg.check_minus)
                if counts_by_step is not None:
                    counts_by_step[step].append(counts)
                if step == Step.CHECK_MINUS_AFTER:
                    self._log(state, step, cfg.check_minus.duration_s, counts, "check_zero")
                    step = Step.CHECK_ZERO
                elif counts == 0:
                    self._log(state, step, cfg.check_minus.duration_s, counts, "reset")
                    step = Step.RESET
                elif counts < cfg.check_minus.threshold:
                    self._log(state, step, cfg.check_minus.duration_s, counts, "repeat")
                else:
                    self._log(state, step, cfg.check_minus.duration_s, counts, "ionise")
                    step = Step.IONISE
            elif step == Step.IONISE:
                self.ionise(state)
                step = Step.CHECK_ZERO
            elif step == Step.CHECK_ZERO:
                counts = self.yellow_step(state, cfg.check_zero)
                checks += 1
                if counts_by_step is not None:
                    counts_by_step[step].append(counts)
                if counts > cfg.check_zero.threshold:
                    self._log(state, step, cfg.check_zero.duration_s, counts, "herald")
                    return True, checks
                self._log(state, step, cfg.check_zero.duration_s, counts, "check_minus")
                step = Step.CHECK_MINUS
            else:
                raise ValidationError(f"Cannot start the herald loop at step {step}")
        logger.warning(f"No herald after {MAX_STEPS_PER_HERALD} steps")
        return False, checks


@dataclass
class ProtocolStatistics:
    """Summary of a charge-resonance protocol run."""
    n_heralds: int
    n_checks: int
    herald_success_rate: float
    mean_overhead_s: float
    charge_fidelity: float
    spin_fidelity: float
    false_herald_rate: float
    count_histograms: Dict[str, CountHistogram]
    event_log: List[str] = field(default_factory=list)

    def to_dict(self) -> Dict[str, float]:
        return {
            "n_heralds": self.n_heralds,
            "n_checks": self.n_checks,
            "herald_success_rate": self.herald_success_rate,
            "mean_overhead_s": self.mean_overhead_s,
            "charge_fidelity": self.charge_fidelity,
            "spin_fidelity": self.spin_fidelity,
            "false_herald_rate": self.false_herald_rate,
        }


def run_cr_protocol(cfg: ProtocolConfig, n_heralds: int, seed: SeedLike = None,
                    keep_log: bool = False) -> ProtocolStatistics:
    """Run repeated herald/experiment cycles and collect statistics.

    After every experiment the emitter goes through the NV⁻-after check and back
    to the NV⁰ check, as in the hardware sequence. Overhead is the time spent
    outside the experiment step, per herald.
    """
    if n_heralds < 1:
        raise ValidationError("n_heralds must be >= 1")
    rng = make_rng(seed if seed is not None else cfg.seed)
    log: Optional[List[str]] = [] if keep_log else None
    sim = ProtocolSimulator(cfg, rng, log)
    state = ProtocolState()
    counts: Dict[Step, List[int]] = {s: [] for s in (Step.CHECK_MINUS, Step.CHECK_ZERO,
                                                      Step.CHECK_MINUS_AFTER)}

    heralds = checks = good_charge = good_spin = 0
    experiment_time = 0.0
    start = Step.RESET
    while heralds < n_heralds:
        ok, n = sim.run_until_herald(state, start, counts)
        checks += n
        if not ok:
            break
        heralds += 1
        good_charge += state.charge == Charge.NV_ZERO
        good_spin += state.is_bright
        sim.wait(state, cfg.experiment_duration_s)
        experiment_time += cfg.experiment_duration_s
        sim._log(state, Step.EXPERIMENT, cfg.experiment_duration_s, 0, "check_minus_after")
        start = Step.CHECK_MINUS_AFTER

    if heralds < n_heralds:
        logger.warning(f"Protocol stopped after {heralds} of {n_heralds} heralds")
    denom = max(heralds, 1)
    return ProtocolStatistics(
        n_heralds=heralds,
        n_checks=checks,
        herald_success_rate=heralds / checks if checks else 0.0,
        mean_overhead_s=(state.clock_s - experiment_time) / denom,
        charge_fidelity=good_charge / denom,
        spin_fidelity=good_spin / denom,
        false_herald_rate=1.0 - good_spin / denom if heralds else math.nan,
        count_histograms={s.value: CountHistogram.from_counts(c) for s, c in counts.items() if c},
        event_log=log or [],
    )


def _ssro_shot(cfg: ProtocolConfig, delay_s: float, rng: np.random.Generator) -> Optional[int]:
    """Herald, wait, discard on an NV⁻ signal, read out. ``None`` marks a discard."""
    sim = ProtocolSimulator(cfg, rng)
    state = ProtocolState()
    ok, _ = sim.run_until_herald(state)
    if not ok:
        return None
    sim.wait(state, delay_s)
    if sim.red_check(state, cfg.check_minus) >= cfg.minus_after_threshold:
        return None
    return sim.yellow_step(state, cfg.check_zero)


def _histogram(cfg: ProtocolConfig, delay_s: float, seeds) -> CountHistogram:
    results = [_ssro_shot(cfg, delay_s, make_rng(s)) for s in seeds]
    kept = [c for c in results if c is not None]
    return CountHistogram.from_counts(kept, discarded=len(results) - len(kept))


def simulate_ssro(delay_s: float, n_shots: int, cfg: ProtocolConfig,
                  seed: SeedLike = None) -> Tuple[CountHistogram, CountHistogram]:
    """Readout histograms right after preparation and after ``delay_s``.

    Each shot is heralded in ↓, relaxes in the dark, is discarded when the NV⁻ check
    shows a photon, and is read out under the NV⁰-check illumination. Shots use
    independent streams derived from ``seed``.
    """
    if n_shots < 1:
        raise ValidationError("n_shots must be >= 1")
    if delay_s < 0:
        raise ValidationError("delay must be >= 0")
    prepared_seeds, delayed_seeds = derive_seeds(seed if seed is not None else cfg.seed, 2)
    prepared = _histogram(cfg, cfg.ssro_short_delay_s, prepared_seeds.spawn(n_shots))
    delayed = _histogram(cfg, delay_s, delayed_seeds.spawn(n_shots))
    return prepared, delayed


def mixed_down_population(delay_s: float, cfg: ProtocolConfig) -> float:
    """↓ population of a heralded ↓ state after ``delay_s`` of dark spin relaxation."""
    if delay_s < 0:
        raise ValidationError("delay must be >= 0")
    return 0.5 * (1.0 + math.exp(-delay_s / cfg.tau_spin_s))


def simulate_readout_fidelity(n_shots: int, cfg: ProtocolConfig, seed: SeedLike = None,
                              mixed_delay_s: Optional[float] = None
                              ) -> Tuple[ReadoutFidelity, CountHistogram, CountHistogram]:
    """Readout fidelity from a prepared-↓ run and a mixed run after ``mixed_delay_s``
    (default ``cfg.mixed_delay_s``).

    The mixed-state relation uses the ↓ population left after the delay, so a
    partly relaxed mixed run does not bias F↑|↑.
    """
    delay = cfg.mixed_delay_s if mixed_delay_s is None else mixed_delay_s
    p_down = mixed_down_population(delay, cfg)
    if p_down - 0.5 > MIXED_STATE_TOLERANCE:
        logger.warning(f"Mixed run after {delay:g} s keeps {p_down:.4f} in down; "
                       "F(up|up) uses the corrected relation")
    prepared, mixed = simulate_ssro(delay, n_shots, cfg, seed)
    fidelity = readout_fidelity(prepared, mixed, cfg.readout_threshold, p_down_mixed=p_down)
    logger.info(f"Simulated readout fidelity {fidelity.f_ro:.4f} from {n_shots} shots per run")
    return fidelity, prepared, mixed


@dataclass
class RelaxationSweep:
    delays_s: np.ndarray
    bright_fraction: np.ndarray
    retained: np.ndarray
    histograms: List[CountHistogram]


def simulate_t1_sweep(delays_s: Sequence[float], n_shots: int, cfg: ProtocolConfig,
                      seed: SeedLike = None) -> RelaxationSweep:
    """Bright (↓-assigned) fraction after each dark delay."""
    delays = np.asarray(delays_s, dtype=float)
    hists = []
    for k, child in enumerate(derive_seeds(seed if seed is not None else cfg.seed, delays.size)):
        hists.append(_histogram(cfg, float(delays[k]), child.spawn(n_shots)))
    return RelaxationSweep(
        delays_s=delays,
        bright_fraction=np.array([h.fraction_at_least(cfg.readout_threshold) for h in hists]),
        retained=np.array([h.retained for h in hists]),
        histograms=hists,
    )


# ---------------------------------------------------------------------------
# Ensemble experiments on the three-level (N, D, U) chain
# ---------------------------------------------------------------------------

@dataclass
class PopulationCurves:
    """Shot fractions of NV⁻ (N), NV⁰ ↓ (D) and NV⁰ ↑ (U) on a time grid (s)."""
    times_s: np.ndarray
    N: np.ndarray
    D: np.ndarray
    U: np.ndarray
    n_shots: int

    def as_populations(self) -> RatePopulations:
        return RatePopulations(self.N, self.D, self.U)

    def standard_error(self, values: np.ndarray) -> np.ndarray:
        return np.sqrt(np.clip(values * (1 - values), 0, None) / self.n_shots)

    def to_dataframe(self) -> pd.DataFrame:
        return pd.DataFrame({"t_s": self.times_s, "N": self.N, "D": self.D, "U": self.U})


def yellow_rates(power_nw: float, cfg: ProtocolConfig) -> ThreeLevelRates:
    """Scenario-1 rates at a yellow power from the per-nW recharge and pump rates."""
    return ThreeLevelRates(
        r=cfg.recharge_rate_per_nw_hz * power_nw,
        p=cfg.spin_pump_rate_per_nw_hz * power_nw,
        s=1.0 / cfg.tau_spin_s,
    )


def _sample_chain(transitions: Sequence[np.ndarray], init: Tuple[float, float],
                  n_shots: int, rng: np.random.Generator) -> np.ndarray:
    """States (0=N, 1=D, 2=U) of every shot after each transition matrix."""
    c1, c2 = init
    p0 = np.array([1.0 - c1 - c2, c1, c2])
    states = rng.choice(3, size=n_shots, p=p0 / p0.sum())
    out = [states.copy()]
    for M in transitions:
        cumulative = np.cumsum(M, axis=0)  # columns are "from" states
        cumulative[-1, :] = 1.0
        u = rng.random(n_shots)
        states = np.argmax(u[None, :] < cumulative[:, states], axis=0)
        out.append(states.copy())
    return np.array(out)


def _curves(times: np.ndarray, states: np.ndarray, n_shots: int) -> PopulationCurves:
    return PopulationCurves(
        times_s=times,
        N=np.mean(states == 0, axis=1),
        D=np.mean(states == 1, axis=1),
        U=np.mean(states == 2, axis=1),
        n_shots=n_shots,
    )


def _check_grid(t_grid) -> np.ndarray:
    t = np.asarray(t_grid, dtype=float)
    if t.ndim != 1 or t.size == 0 or t[0] < 0 or np.any(np.diff(t) < 0):
        raise ValidationError("Time grid must be non-negative and non-decreasing")
    return t


def simulate_spin_pumping_experiment(power_nw: float, t_grid, n_shots: int, cfg: ProtocolConfig,
                                     seed: SeedLike = None, c1: float = 0.960, c2: float = 0.012,
                                     rates: Optional[ThreeLevelRates] = None) -> PopulationCurves:
    """Monte-Carlo populations under continuous yellow light (no ionisation).

    ``rates`` overrides the rates derived from ``power_nw``.
    """
    if n_shots < 1:
        raise ValidationError("n_shots must be >= 1")
    t = _check_grid(t_grid)
    rates = rates or yellow_rates(power_nw, cfg)
    if rates.i != 0:
        raise ValidationError("Spin pumping runs without ionisation")
    G = rates.generator()
    steps = np.diff(np.concatenate([[0.0], t]))
    transitions = [expm(G * dt) for dt in steps]
    rng = make_rng(seed if seed is not None else cfg.seed)
    states = _sample_chain(transitions, (c1, c2), n_shots, rng)[1:]
    return _curves(t, states, n_shots)


def _strobe_generators(rates: ThreeLevelRates, strobe: StrobeConfig) -> Tuple[np.ndarray, np.ndarray]:
    yellow = ThreeLevelRates(r=rates.r, p=rates.p, s=rates.s).generator()
    s_red = strobe.spin_relax_override_hz if strobe.spin_relax_override_hz is not None else rates.s
    red = ThreeLevelRates(s=s_red, i=strobe.ionisation_rate_hz).generator()
    return yellow, red


def strobe_transition(rates: ThreeLevelRates, strobe: StrobeConfig, y_from: float,
                      y_to: float) -> np.ndarray:
    """Transition matrix between two yellow-time points of a strobe sequence.

    A red period follows every completed yellow period; a point sitting exactly at
    the end of a yellow period is taken before its red period.
    """
    G_y, G_r = _strobe_generators(rates, strobe)
    T_y = strobe.yellow_period_s
    red = expm(G_r * strobe.red_period_s)
    M = np.eye(3)
    y = y_from
    boundary = (math.floor(y_from / T_y + 1e-12) + 1) * T_y
    if y_from > 0 and abs(y_from / T_y - round(y_from / T_y)) < 1e-12:
        # starting at the end of a yellow period: its red period comes first
        M = red @ M
        boundary = y_from + T_y
    while boundary < y_to - 1e-15:
        M = red @ expm(G_y * (boundary - y)) @ M
        y = boundary
        boundary += T_y
    return expm(G_y * (y_to - y)) @ M


def simulate_charge_cycling_experiment(power_nw: float, strobe: StrobeConfig, t_grid,
                                       n_shots: int, cfg: ProtocolConfig, seed: SeedLike = None,
                                       c1: float = 0.960, c2: float = 0.012,
                                       rates: Optional[ThreeLevelRates] = None) -> PopulationCurves:
    """Monte-Carlo populations for alternating yellow and red periods.

    ``t_grid`` is yellow illumination time. Red periods ionise NV⁻ into a random
    NV⁰ spin at ``strobe.ionisation_rate_hz``.
    """
    if n_shots < 1:
        raise ValidationError("n_shots must be >= 1")
    t = _check_grid(t_grid)
    rates = rates or yellow_rates(power_nw, cfg)
    points = np.concatenate([[0.0], t])
    transitions = [strobe_transition(rates, strobe, a, b) for a, b in zip(points[:-1], points[1:])]
    rng = make_rng(seed if seed is not None else cfg.seed)
    states = _sample_chain(transitions, (c1, c2), n_shots, rng)[1:]
    return _curves(t, states, n_shots)


def strobe_average_rates(rates: ThreeLevelRates, strobe: StrobeConfig) -> ThreeLevelRates:
    """Rates averaged over the total sequence time of a strobe cycle."""
    duty = strobe.yellow_duty
    s_red = strobe.spin_relax_override_hz if strobe.spin_relax_override_hz is not None else rates.s
    return ThreeLevelRates(
        r=rates.r * duty,
        p=rates.p * duty,
        s=rates.s * duty + s_red * (1.0 - duty),
        i=strobe.ionisation_rate_hz * (1.0 - duty),
    )


def write_event_log(lines: Sequence[str], path) -> None:
    """Write protocol events as tab-separated lines with a header."""
    with open(path, "w", encoding="utf-8") as f:
        f.write("clock_s\tstep\tduration_s\tcounts\tdecision\n")
        for line in lines:
            f.write(line + "\n")
