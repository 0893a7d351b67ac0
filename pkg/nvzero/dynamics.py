"""Lindblad master-equation dynamics of the driven NV⁰ center.

Six-level basis in ``LEVEL_LABELS`` order: the four ground states
(|+,↓⟩, |−,↑⟩, |−,↓⟩, |+,↑⟩) and the excited states (|0,↓⟩, |0,↑⟩). An NV⁻ sink
can be appended as a seventh level. Long recharging runs use the orbit-free
``SPIN_LEVELS`` basis instead.

Time is in ns and frequencies in MHz; the Hamiltonian is built in rad/ns. Density
matrices are vectorized column-major, so vec(AρB) = (Bᵀ ⊗ A) vec(ρ).
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.integrate import solve_ivp, trapezoid
from scipy.linalg import expm

from .caching import cached_result, generate_cache_key, get_result_cache
from .config import LEVEL_LABELS, NV_MINUS_LABEL, LindbladConfig, PulseShape
from .exceptions import (
    HermiticityError,
    IntegrationError,
    InvariantViolationError,
    NormalizationError,
    ValidationError,
)
from .models import TrajectoryResult
from .utils.seeding import SeedLike, derive_seeds, make_rng

logger = logging.getLogger(__name__)

PLUS_DOWN, MINUS_UP, MINUS_DOWN, PLUS_UP, EXC_DOWN, EXC_UP, NV_MINUS = range(7)
GROUND_DOWN = (PLUS_DOWN, MINUS_DOWN)
GROUND_UP = (MINUS_UP, PLUS_UP)
EXCITED = (EXC_DOWN, EXC_UP)
SPIN_DOWN_MANIFOLD = (PLUS_DOWN, MINUS_DOWN, EXC_DOWN)

# Orbit-free basis of the recharging runs
S_DOWN, S_UP, S_EXC_DOWN, S_EXC_UP, S_NV_MINUS = range(5)
SPIN_LEVELS = ("down", "up", "0,down", "0,up", NV_MINUS_LABEL)

HERALDED_STATE = (0.5, 0.0, 0.5, 0.0, 0.0, 0.0)
MHZ_TO_RAD_PER_NS = 2.0 * math.pi * 1e-3

TRACE_RENORMALIZE_TOL = 1e-8
TRACE_FAIL_TOL = 1e-6
HERMITICITY_TOL = 1e-10
POSITIVITY_TOL = 1e-9
TRACE_GRID_NS = 0.25
PROBE_WINDOW_NS = 40.0


def initial_mixed_state(populations: Sequence[float]) -> np.ndarray:
    """Diagonal density matrix with the given level populations (6 or 7 levels).

    Raises:
        ValidationError: Wrong length or a negative population.
        NormalizationError: Populations do not sum to one within 1e-12.
    """
    p = np.asarray(populations, dtype=float)
    if p.ndim != 1 or p.size not in (6, 7):
        raise ValidationError(f"Expected 6 or 7 populations, got {p.size}")
    if np.any(p < 0):
        raise ValidationError("Populations must be non-negative")
    deficit = float(p.sum() - 1.0)
    if abs(deficit) > 1e-12:
        raise NormalizationError(deficit)
    return np.diag(p).astype(complex)


def heralded_state(n_levels: int = 6) -> np.ndarray:
    """Orbitally mixed spin-down state left behind by a successful charge check."""
    return initial_mixed_state(HERALDED_STATE + (0.0,) * (n_levels - 6))


def check_density_matrix(rho: np.ndarray, trace_tol: float = 1e-8) -> None:
    """Raise if ``rho`` is not a valid density matrix.

    Raises:
        HermiticityError: Anti-Hermitian part above 1e-10.
        InvariantViolationError: Trace off by more than ``trace_tol`` or an eigenvalue
            below −1e-9.
    """
    rho = np.asarray(rho)
    residual = float(np.max(np.abs(rho - rho.conj().T)))
    if residual > HERMITICITY_TOL:
        raise HermiticityError(residual, HERMITICITY_TOL)
    deviation = abs(float(np.trace(rho).real) - 1.0)
    if deviation > trace_tol:
        raise InvariantViolationError("trace(rho) = 1", deviation)
    lowest = float(np.min(np.linalg.eigvalsh(0.5 * (rho + rho.conj().T))))
    if lowest < -POSITIVITY_TOL:
        raise InvariantViolationError("rho >= 0", lowest)


def _drive_weights(cfg: LindbladConfig) -> Tuple[float, float]:
    # Circular light leaves the off-resonant |−,↑⟩ ↔ |0,↑⟩ line undriven.
    return (1.0, 0.0) if cfg.polarization == "circular" else (1.0, 1.0)


def rabi_frequency_mhz(cfg: LindbladConfig, t) -> np.ndarray:
    """Ω(t) = α√P(t) in MHz."""
    return cfg.rabi_slope * np.sqrt(cfg.pulse.power(t))


def _hamiltonian_parts(cfg: LindbladConfig, delta_mhz: float,
                       n_levels: int = 6) -> Tuple[np.ndarray, np.ndarray]:
    """(H0, D) in rad/ns with H(t) = H0 + Ω(t)[MHz]·D."""
    H0 = np.zeros((n_levels, n_levels), dtype=complex)
    H0[EXC_DOWN, EXC_DOWN] = delta_mhz
    H0[EXC_UP, EXC_UP] = cfg.delta_opposite_mhz + delta_mhz
    w_down, w_up = _drive_weights(cfg)
    D = np.zeros((n_levels, n_levels), dtype=complex)
    D[PLUS_DOWN, EXC_DOWN] = D[EXC_DOWN, PLUS_DOWN] = 0.5 * w_down
    D[MINUS_UP, EXC_UP] = D[EXC_UP, MINUS_UP] = 0.5 * w_up
    return H0 * MHZ_TO_RAD_PER_NS, D * MHZ_TO_RAD_PER_NS


def build_drive_hamiltonian(t: float, cfg: LindbladConfig, delta_sample: float = 0.0) -> np.ndarray:
    """Rotating-frame Hamiltonian at time ``t`` (ns) in rad/ns.

    Ω(t)/2 couples |+,↓⟩↔|0,↓⟩ and |−,↑⟩↔|0,↑⟩; |0,↓⟩ sits at δ and |0,↑⟩ at Δ + δ.
    The far-detuned upper spin-orbit branch is not driven.
    """
    H0, D = _hamiltonian_parts(cfg, delta_sample)
    return H0 + float(rabi_frequency_mhz(cfg, t)) * D


def _jump(n_levels: int, to: int, frm: int, rate_per_ns: float) -> np.ndarray:
    C = np.zeros((n_levels, n_levels), dtype=complex)
    C[to, frm] = math.sqrt(rate_per_ns)
    return C


def build_collapse_operators(cfg: LindbladConfig, n_levels: int = 6,
                             recharge_rate_per_ns: float = 0.0) -> List[np.ndarray]:
    """One collapse operator √γ|to⟩⟨from| per directed relaxation channel.

    Each channel runs at half the inverse time constant, so population differences
    relax at 1/τ. Channels with zero rate are omitted.
    """
    channels: List[Tuple[int, int, float]] = []
    orbit = 0.5 / cfg.tau_orbit_ns
    for plus, minus in ((PLUS_DOWN, MINUS_DOWN), (PLUS_UP, MINUS_UP)):
        channels += [(minus, plus, orbit), (plus, minus, orbit)]

    spin = 0.5 / (cfg.tau_spin_s * 1e9)
    for down, up in ((PLUS_DOWN, PLUS_UP), (MINUS_DOWN, MINUS_UP)):
        channels += [(up, down, spin), (down, up, spin)]

    radiative = 0.5 / cfg.tau_exc_ns
    channels += [
        (PLUS_DOWN, EXC_DOWN, radiative), (MINUS_DOWN, EXC_DOWN, radiative),
        (MINUS_UP, EXC_UP, radiative), (PLUS_UP, EXC_UP, radiative),
    ]

    if cfg.tau_exc_spin_s is not None:
        mixing = 0.5 / (cfg.tau_exc_spin_s * 1e9)
        channels += [(EXC_UP, EXC_DOWN, mixing), (EXC_DOWN, EXC_UP, mixing)]

    if recharge_rate_per_ns > 0:
        if n_levels < 7:
            raise ValidationError("Recharging needs the seven-level basis")
        channels += [(NV_MINUS, EXC_DOWN, recharge_rate_per_ns),
                     (NV_MINUS, EXC_UP, recharge_rate_per_ns)]

    return [_jump(n_levels, to, frm, rate) for to, frm, rate in channels if rate > 0]


def _commutator_super(H: np.ndarray) -> np.ndarray:
    eye = np.eye(H.shape[0])
    return -1j * (np.kron(eye, H) - np.kron(H.T, eye))


def _dissipator_super(ops: Sequence[np.ndarray], n: int) -> np.ndarray:
    eye = np.eye(n)
    out = np.zeros((n * n, n * n), dtype=complex)
    for C in ops:
        CdC = C.conj().T @ C
        out += np.kron(C.conj(), C) - 0.5 * np.kron(eye, CdC) - 0.5 * np.kron(CdC.T, eye)
    return out


def liouvillian_parts(cfg: LindbladConfig, delta_mhz: float = 0.0, n_levels: int = 6,
                      recharge_rate_per_ns: float = 0.0) -> Tuple[np.ndarray, np.ndarray]:
    """(L0, L1) with dvec(ρ)/dt = (L0 + Ω(t)[MHz]·L1) vec(ρ)."""
    H0, D = _hamiltonian_parts(cfg, delta_mhz, n_levels)
    ops = build_collapse_operators(cfg, n_levels, recharge_rate_per_ns)
    L0 = _commutator_super(H0) + _dissipator_super(ops, n_levels)
    L1 = _commutator_super(D)
    return L0, L1


def _vec(rho: np.ndarray) -> np.ndarray:
    return np.asarray(rho, dtype=complex).reshape(-1, order="F")


def _unvec(y: np.ndarray, n: int) -> np.ndarray:
    """Column-major vectors of shape (..., n²) back to (..., n, n)."""
    return np.swapaxes(y.reshape(y.shape[:-1] + (n, n)), -1, -2)


def _segment_bounds(edges: Sequence[float], start: float, stop: float) -> List[float]:
    inner = sorted({e for e in edges if start < e < stop})
    return [start, *inner, stop]


def _finish_trajectory(grid: np.ndarray, rhos: np.ndarray, cfg: LindbladConfig) -> TrajectoryResult:
    n = rhos.shape[-1]
    traces = np.real(np.trace(rhos, axis1=1, axis2=2))
    deviation = np.abs(traces - 1.0)
    worst = float(deviation.max())
    if worst > TRACE_FAIL_TOL:
        k = int(np.argmax(deviation > TRACE_FAIL_TOL))
        logger.error(f"Trace drift {worst:.3e} exceeds {TRACE_FAIL_TOL:.0e}")
        raise IntegrationError(f"Trace drift {deviation[k]:.3e}", float(grid[k]))
    if worst > TRACE_RENORMALIZE_TOL:
        logger.warning(f"Renormalizing trajectory: trace drift {worst:.3e}")
        rhos = rhos / traces[:, None, None]
    rhos = 0.5 * (rhos + np.conj(np.swapaxes(rhos, -1, -2)))

    populations = np.real(np.diagonal(rhos, axis1=1, axis2=2)).copy()
    excited = populations[:, EXC_DOWN] + populations[:, EXC_UP]
    labels = list(LEVEL_LABELS) + ([NV_MINUS_LABEL] if n == 7 else [])
    return TrajectoryResult(
        times_ns=grid,
        populations=populations,
        excited_population=excited,
        fluorescence=fluorescence_from_excited(excited, cfg),
        labels=labels,
        trace_deviation=worst,
        final_state=rhos[-1],
    )


def fluorescence_from_excited(excited, cfg: LindbladConfig):
    """Detected counts per second: ρ_ee / τ_exc × collection efficiency."""
    return np.asarray(excited) / (cfg.tau_exc_ns * 1e-9) * cfg.collection_efficiency


def evolve(rho0, cfg: LindbladConfig, grid, delta_sample: float = 0.0,
           recharge_rate_per_ns: float = 0.0) -> TrajectoryResult:
    """Integrate the master equation from ``grid[0]`` and sample it on ``grid``.

    The integration is split at every pulse edge; each segment uses an adaptive
    8th-order Runge-Kutta scheme with dense output.

    Raises:
        ValidationError: Invalid state or grid.
        IntegrationError: The solver fails or the trace drifts by more than 1e-6.
    """
    rho0 = np.asarray(rho0, dtype=complex)
    n = rho0.shape[0]
    if rho0.shape not in ((6, 6), (7, 7)):
        raise ValidationError(f"Density matrix must be 6x6 or 7x7, got {rho0.shape}")
    check_density_matrix(rho0)
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size == 0:
        raise ValidationError("Time grid must be a non-empty 1-D array")
    if grid.size > 1 and np.any(np.diff(grid) <= 0):
        raise ValidationError("Time grid must be strictly increasing")

    L0, L1 = liouvillian_parts(cfg, delta_sample, n, recharge_rate_per_ns)
    driven = bool(np.any(L1))

    def rhs(t, y):
        if not driven:
            return L0 @ y
        return L0 @ y + float(rabi_frequency_mhz(cfg, t)) * (L1 @ y)

    out = np.empty((grid.size, n * n), dtype=complex)
    y = _vec(rho0)
    out[0] = y
    bounds = _segment_bounds(cfg.pulse.edges(), grid[0], grid[-1])
    for a, b in zip(bounds[:-1], bounds[1:]):
        sol = solve_ivp(rhs, (a, b), y, method="DOP853", rtol=cfg.rtol, atol=cfg.atol,
                        dense_output=True)
        if sol.status < 0:
            logger.error(f"Integrator failed on [{a}, {b}] ns: {sol.message}")
            raise IntegrationError(sol.message, a)
        mask = (grid > a) & (grid <= b)
        if np.any(mask):
            out[mask] = sol.sol(grid[mask]).T
        y = sol.y[:, -1]
    return _finish_trajectory(grid, _unvec(out, n), cfg)


def sample_detunings(cfg: LindbladConfig, n_samples: int, seed: SeedLike = None) -> np.ndarray:
    """Laser detunings δ (MHz), one independent stream per sample.

    With zero jitter width a single δ = 0 is returned.
    """
    if n_samples < 1:
        raise ValidationError("n_samples must be >= 1")
    sigma = cfg.detuning_sigma_mhz
    if sigma == 0.0:
        return np.zeros(1)
    return np.array([make_rng(child).normal(0.0, sigma) for child in derive_seeds(seed, n_samples)])


def _map_samples(func, deltas: np.ndarray, max_workers: Optional[int]):
    if max_workers and max_workers > 1 and len(deltas) > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            return list(pool.map(func, deltas))
    return [func(d) for d in deltas]


def ensemble_average(rho0, cfg: LindbladConfig, grid, n_samples: Optional[int] = None,
                     seed: SeedLike = None, max_workers: Optional[int] = None) -> TrajectoryResult:
    """Mean trajectory over Gaussian laser detunings (σ = FWHM/2.355).

    Samples may run concurrently; the average is always taken in sample order.
    """
    n_samples = cfg.n_samples if n_samples is None else n_samples
    deltas = sample_detunings(cfg, n_samples, seed)
    runs = _map_samples(lambda d: evolve(rho0, cfg, grid, float(d)), deltas, max_workers)

    populations = np.zeros_like(runs[0].populations)
    final = np.zeros_like(runs[0].final_state)
    for run in runs:
        populations = populations + run.populations
        final = final + run.final_state
    populations /= len(runs)
    excited = populations[:, EXC_DOWN] + populations[:, EXC_UP]
    return TrajectoryResult(
        times_ns=runs[0].times_ns,
        populations=populations,
        excited_population=excited,
        fluorescence=fluorescence_from_excited(excited, cfg),
        labels=runs[0].labels,
        trace_deviation=max(run.trace_deviation for run in runs),
        final_state=final / len(runs),
    )


def _restrict(matrix: np.ndarray, levels: Sequence[int]) -> np.ndarray:
    return matrix[np.ix_(levels, levels)]


def _stationary(H: np.ndarray, ops: Sequence[np.ndarray]) -> np.ndarray:
    """Null vector of the Liouvillian with unit trace."""
    n = H.shape[0]
    L = _commutator_super(H) + _dissipator_super(ops, n)
    A = L.copy()
    A[0, :] = _vec(np.eye(n))
    b = np.zeros(n * n, dtype=complex)
    b[0] = 1.0
    rho = _unvec(np.linalg.solve(A, b), n)
    rho = 0.5 * (rho + rho.conj().T)
    return rho / np.trace(rho).real


@cached_result("steady_state")
def steady_state(cfg: LindbladConfig, power_nw: float, delta_mhz: float = 0.0,
                 levels: Optional[Tuple[int, ...]] = None) -> np.ndarray:
    """Stationary density matrix under constant power.

    ``levels`` restricts the model to a closed subset of the six levels (for example
    the spin-down manifold ``(0, 2, 4)``); channels leaving the subset are dropped.
    The result is returned on the restricted basis.
    """
    if power_nw < 0:
        raise ValidationError("Power must be >= 0")
    H0, D = _hamiltonian_parts(cfg, delta_mhz)
    H = H0 + cfg.rabi_slope * math.sqrt(power_nw) * D
    ops = build_collapse_operators(cfg)
    if levels is not None:
        levels = tuple(levels)
        outside = [k for k in range(6) if k not in levels]
        ops = [C for C in ops if not np.any(C[:, outside]) and not np.any(C[outside, :])]
        H = _restrict(H, levels)
        ops = [_restrict(C, levels) for C in ops]
    return _stationary(H, ops)


@cached_result("cycling_state")
def cycling_state(cfg: LindbladConfig, power_nw: float, delta_mhz: float = 0.0) -> np.ndarray:
    """Stationary state of the optical cycle on the spin-down manifold.

    |+,↓⟩ is driven to |0,↓⟩, which decays to |+,↓⟩ or to the dark |−,↓⟩ with equal
    probability. The dark state returns to |+,↓⟩ by orbital relaxation at 1/τ_orbit.
    Spin flips and recharging end the cycle and are left out. Basis order is
    ``SPIN_DOWN_MANIFOLD``.
    """
    if power_nw < 0:
        raise ValidationError("Power must be >= 0")
    H0, D = _hamiltonian_parts(cfg, delta_mhz)
    H = _restrict(H0 + cfg.rabi_slope * math.sqrt(power_nw) * D, SPIN_DOWN_MANIFOLD)
    plus, minus, excited = range(3)
    radiative = 0.5 / cfg.tau_exc_ns
    ops = [_jump(3, plus, excited, radiative), _jump(3, minus, excited, radiative),
           _jump(3, plus, minus, 1.0 / cfg.tau_orbit_ns)]
    return _stationary(H, ops)


def excited_population(rho: np.ndarray, levels: Optional[Sequence[int]] = None) -> float:
    """Total |0,s⟩ population of a full or restricted density matrix."""
    levels = list(levels) if levels is not None else list(range(rho.shape[0]))
    return float(sum(rho[levels.index(k), levels.index(k)].real for k in EXCITED if k in levels))


def scattering_rate(cfg: LindbladConfig, power_nw: float, delta_mhz: float = 0.0) -> float:
    """Photons scattered per second in steady state: ρ_ee / τ_exc."""
    return excited_population(steady_state(cfg, power_nw, delta_mhz)) / (cfg.tau_exc_ns * 1e-9)


def cycling_scattering_rate(cfg: LindbladConfig, power_nw: float, delta_mhz: float = 0.0) -> float:
    """Photons per second scattered by the spin-down optical cycle (``cycling_state``)."""
    rho = cycling_state(cfg, power_nw, delta_mhz)
    return excited_population(rho, SPIN_DOWN_MANIFOLD) / (cfg.tau_exc_ns * 1e-9)


def steady_state_fluorescence(cfg: LindbladConfig, power_nw: float, n_samples: Optional[int] = None,
                              seed: SeedLike = None) -> float:
    """Detected counts per second at constant power, averaged over detunings."""
    n_samples = cfg.n_samples if n_samples is None else n_samples
    deltas = sample_detunings(cfg, n_samples, seed)
    excited = np.mean([excited_population(steady_state(cfg, power_nw, float(d))) for d in deltas])
    return float(fluorescence_from_excited(excited, cfg))


def simulate_pump_trace(power_nw: float, duration_ns: float, cfg: LindbladConfig,
                        seed: SeedLike = None, n_samples: Optional[int] = None,
                        tail_ns: float = 100.0, dt_ns: float = TRACE_GRID_NS,
                        max_workers: Optional[int] = None) -> TrajectoryResult:
    """Fluorescence under one shaped pulse starting from the heralded state.

    The pulse opens at t = 0 with the configured rise and fall constants; the trace
    continues ``tail_ns`` after the pulse closes, sampled every ``dt_ns`` (250 ps).
    """
    if power_nw < 0 or duration_ns <= 0:
        raise ValidationError("Need power >= 0 and duration > 0")
    pulse = PulseShape.single(power_nw, 0.0, duration_ns, rise_ns=cfg.pulse.rise_ns,
                              fall_ns=cfg.pulse.fall_ns)
    run_cfg = cfg.with_pulse(pulse)
    grid = np.arange(0.0, duration_ns + tail_ns + 0.5 * dt_ns, dt_ns)
    return ensemble_average(heralded_state(), run_cfg, grid, n_samples, seed, max_workers)


@dataclass
class PumpProbeResult:
    """Probe/pump ratio of the 40 ns integrated fluorescence per dark delay."""
    delays_ns: np.ndarray
    ratios: np.ndarray
    pump_counts: float
    probe_counts: np.ndarray

    def to_dataframe(self) -> pd.DataFrame:
        return pd.DataFrame({"t_delay_ns": self.delays_ns, "ratio": self.ratios})


def _window_integral(result: TrajectoryResult, start: float, window_ns: float) -> float:
    t = result.times_ns
    mask = (t >= start - 1e-9) & (t <= start + window_ns + 1e-9)
    return float(trapezoid(result.fluorescence[mask], t[mask]))


def _pump_states(cfg: LindbladConfig, deltas: np.ndarray, pump_ns: float, window_ns: float,
                 dt_ns: float, max_workers: Optional[int]):
    cache = get_result_cache()
    key = generate_cache_key("pump_state", cfg=cfg, deltas=deltas, pump_ns=pump_ns,
                             window_ns=window_ns, dt_ns=dt_ns)
    cached = cache.get(key)
    if cached is not None:
        return cached

    pulse = PulseShape.single(cfg.pulse.power_nw, 0.0, pump_ns, rise_ns=cfg.pulse.rise_ns,
                              fall_ns=cfg.pulse.fall_ns)
    pump_cfg = cfg.with_pulse(pulse)
    grid = np.unique(np.concatenate([np.arange(0.0, window_ns + 0.5 * dt_ns, dt_ns), [pump_ns]]))

    def run(delta):
        result = evolve(heralded_state(), pump_cfg, grid, float(delta))
        return result.final_state, _window_integral(result, 0.0, window_ns)

    states = _map_samples(run, deltas, max_workers)
    cache.set(key, states, label="pump_state")
    return states


def pump_probe_sweep(delays_ns, cfg: LindbladConfig, seed: SeedLike = None,
                     n_samples: Optional[int] = None, window_ns: float = PROBE_WINDOW_NS,
                     dt_ns: float = TRACE_GRID_NS,
                     max_workers: Optional[int] = None) -> PumpProbeResult:
    """Pump-probe recovery curve.

    The pump is the first window of ``cfg.pulse`` (its duration and power). Its end
    state is computed once per detuning sample and reused for every delay. The
    probe has the same power and opens from zero power ``t_delay`` after the pump
    closes, so every probe has its own rise edge. Delays shorter than a few τ_exc
    still carry emission of the pump's residual excited population.
    """
    delays = np.atleast_1d(np.asarray(delays_ns, dtype=float))
    if np.any(delays < 0):
        raise ValidationError("Pump-probe delays must be >= 0")
    on, off = cfg.pulse.windows[0]
    pump_ns = off - on
    if pump_ns < window_ns:
        raise ValidationError("Pump pulse must be at least as long as the integration window")
    n_samples = cfg.n_samples if n_samples is None else n_samples
    deltas = sample_detunings(cfg, n_samples, seed)
    states = _pump_states(cfg, deltas, pump_ns, window_ns, dt_ns, max_workers)
    pump_total = sum(counts for _, counts in states)
    if pump_total <= 0:
        raise ValidationError("Pump pulse produced no fluorescence (zero power?)")

    probe_totals = np.empty(delays.size)
    for k, delay in enumerate(delays):
        probe_on = pump_ns + delay
        pulse = PulseShape(power_nw=cfg.pulse.power_nw,
                           windows=[(0.0, pump_ns), (probe_on, probe_on + window_ns)],
                           rise_ns=cfg.pulse.rise_ns, fall_ns=cfg.pulse.fall_ns,
                           reopen_from_zero=True)
        probe_cfg = cfg.with_pulse(pulse)
        grid = np.unique(np.concatenate([
            [pump_ns], np.arange(probe_on, probe_on + window_ns + 0.5 * dt_ns, dt_ns),
        ]))

        def run(args):
            (rho, _), delta = args
            result = evolve(rho, probe_cfg, grid, float(delta))
            return _window_integral(result, probe_on, window_ns)

        if max_workers and max_workers > 1:
            with ThreadPoolExecutor(max_workers=max_workers) as pool:
                values = list(pool.map(run, zip(states, deltas)))
        else:
            values = [run(item) for item in zip(states, deltas)]
        probe_totals[k] = sum(values)

    return PumpProbeResult(
        delays_ns=delays,
        ratios=probe_totals / pump_total,
        pump_counts=pump_total / len(states),
        probe_counts=probe_totals / len(states),
    )


def simulate_pump_probe(t_delay_ns: float, cfg: LindbladConfig, seed: SeedLike = None,
                        n_samples: Optional[int] = None) -> float:
    """Probe/pump ratio for one dark delay; tends to 1 for long delays."""
    return float(pump_probe_sweep([t_delay_ns], cfg, seed, n_samples).ratios[0])


def recovery_fit_start_ns(cfg: LindbladConfig) -> float:
    """Shortest delay worth fitting: ten excited-state lifetimes after the pump, or
    half the orbital relaxation time when that is shorter."""
    return min(10.0 * cfg.tau_exc_ns, 0.5 * cfg.tau_orbit_ns)


@dataclass
class RechargeCurve:
    """NV⁻ population versus physical recharge time."""
    times_s: np.ndarray
    nv_minus: np.ndarray
    power_nw: float
    polarization: str
    rescale: float

    def to_dataframe(self) -> pd.DataFrame:
        return pd.DataFrame({"t_s": self.times_s, "nv_minus": self.nv_minus})


def _spin_hamiltonian(cfg: LindbladConfig, power_nw: float, delta_mhz: float) -> np.ndarray:
    """Orbit-free drive Hamiltonian on ``SPIN_LEVELS`` in rad/ns."""
    H = np.zeros((5, 5), dtype=complex)
    H[S_EXC_DOWN, S_EXC_DOWN] = delta_mhz
    H[S_EXC_UP, S_EXC_UP] = cfg.delta_opposite_mhz + delta_mhz
    half_rabi = 0.5 * cfg.rabi_slope * math.sqrt(power_nw)
    w_down, w_up = _drive_weights(cfg)
    H[S_DOWN, S_EXC_DOWN] = H[S_EXC_DOWN, S_DOWN] = half_rabi * w_down
    H[S_UP, S_EXC_UP] = H[S_EXC_UP, S_UP] = half_rabi * w_up
    return H * MHZ_TO_RAD_PER_NS


def _spin_collapse_operators(cfg: LindbladConfig, recharge_rate_per_ns: float) -> List[np.ndarray]:
    radiative = 1.0 / cfg.tau_exc_ns
    channels = [(S_DOWN, S_EXC_DOWN, radiative), (S_UP, S_EXC_UP, radiative)]
    spin = 0.5 / (cfg.tau_spin_s * 1e9)
    channels += [(S_UP, S_DOWN, spin), (S_DOWN, S_UP, spin)]
    if cfg.tau_exc_spin_s is not None:
        mixing = 0.5 / (cfg.tau_exc_spin_s * 1e9)
        channels += [(S_EXC_UP, S_EXC_DOWN, mixing), (S_EXC_DOWN, S_EXC_UP, mixing)]
    channels += [(S_NV_MINUS, S_EXC_DOWN, recharge_rate_per_ns),
                 (S_NV_MINUS, S_EXC_UP, recharge_rate_per_ns)]
    return [_jump(5, to, frm, rate) for to, frm, rate in channels if rate > 0]


def driven_transition_state(cfg: LindbladConfig, power_nw: float, delta_mhz: float = 0.0) -> np.ndarray:
    """Stationary 2×2 state of the driven |↓⟩ ↔ |0,↓⟩ transition without orbital structure."""
    if power_nw < 0:
        raise ValidationError("Power must be >= 0")
    levels = (S_DOWN, S_EXC_DOWN)
    H = _restrict(_spin_hamiltonian(cfg, power_nw, delta_mhz), levels)
    return _stationary(H, [_jump(2, 0, 1, 1.0 / cfg.tau_exc_ns)])


def recharge_rate_per_ns(cfg: LindbladConfig, power_nw: float, delta_mhz: float = 0.0) -> float:
    """Excited-state recharge rate (1/ns, rescaled) reproducing the configured
    NV⁰→NV⁻ conversion of the driven spin-down transition.

    The conversion rate per nW is divided by the stationary excited population of
    the driven transition at the same power.
    """
    if cfg.recharge is None:
        raise ValidationError("Recharge configuration missing")
    target_hz = cfg.recharge.rate_per_nw_hz * power_nw * cfg.recharge.rescale
    if target_hz == 0.0:
        return 0.0
    rho_ee = float(driven_transition_state(cfg, power_nw, delta_mhz)[1, 1].real)
    if rho_ee <= 0:
        raise ValidationError("No excited population at this power; cannot calibrate recharging")
    return target_hz / rho_ee * 1e-9


def simulate_recharging(power_nw: float, polarization: str, t_max_s: float, cfg: LindbladConfig,
                        seed: SeedLike = None, n_points: int = 60, t_min_s: Optional[float] = None,
                        n_samples: Optional[int] = None) -> RechargeCurve:
    """NV⁻ population versus time under continuous resonant drive.

    Runs on ``SPIN_LEVELS``: the orbital doublets relax within a microsecond, far
    faster than any recharging timescale, so only the spin-resolved levels and the
    NV⁻ sink are kept. The run starts from the stationary state of the driven |↓⟩
    transition, which is reached within tens of nanoseconds.

    The Liouvillian is constant, so each step of the log-spaced time grid is
    propagated exactly with a matrix exponential. Slow processes (spin relaxation,
    excited-state spin mixing, recharging) are sped up by the configured rescale
    factor and the time axis is mapped back.

    Raises:
        ValidationError: No recharge configuration or invalid arguments.
    """
    if cfg.recharge is None:
        raise ValidationError("simulate_recharging requires a recharge configuration")
    if polarization not in ("linear", "circular"):
        raise ValidationError(f"Polarization must be 'linear' or 'circular', got '{polarization}'")
    if power_nw < 0 or t_max_s <= 0 or n_points < 2:
        raise ValidationError("Need power >= 0, t_max > 0 and at least two points")

    rescale = cfg.recharge.rescale
    if rescale != 1.0:
        logger.debug(f"Recharging uses rescale factor {rescale:g}")
    sim_cfg = cfg.model_copy(update={
        "polarization": polarization,
        "tau_spin_s": cfg.tau_spin_s / rescale,
        "tau_exc_spin_s": None if cfg.tau_exc_spin_s is None else cfg.tau_exc_spin_s / rescale,
    })

    t_min_s = t_min_s if t_min_s is not None else t_max_s * 1e-4
    times = np.concatenate([[0.0], np.geomspace(t_min_s, t_max_s, n_points - 1)])
    steps_ns = np.diff(times) * 1e9 / rescale
    driven = (S_DOWN, S_EXC_DOWN)

    n_samples = cfg.n_samples if n_samples is None else n_samples
    deltas = sample_detunings(cfg, n_samples, seed)
    curves = []
    for delta in deltas:
        gamma = recharge_rate_per_ns(sim_cfg, power_nw, float(delta))
        H = _spin_hamiltonian(sim_cfg, power_nw, float(delta))
        L = _commutator_super(H) + _dissipator_super(_spin_collapse_operators(sim_cfg, gamma), 5)
        rho0 = np.zeros((5, 5), dtype=complex)
        rho0[np.ix_(driven, driven)] = driven_transition_state(sim_cfg, power_nw, float(delta))
        y = _vec(rho0)
        nv = [0.0]
        for t_end, dt in zip(times[1:], steps_ns):
            y = expm(L * dt) @ y
            rho = _unvec(y, 5)
            deviation = abs(np.trace(rho).real - 1.0)
            if deviation > TRACE_FAIL_TOL:
                raise IntegrationError(f"Trace drift {deviation:.3e}", float(t_end * 1e9))
            nv.append(float(rho[S_NV_MINUS, S_NV_MINUS].real))
        curves.append(nv)

    logger.info(f"Simulated recharging at {power_nw} nW ({polarization}) over {t_max_s} s")
    return RechargeCurve(
        times_s=times,
        nv_minus=np.mean(np.asarray(curves), axis=0),
        power_nw=power_nw,
        polarization=polarization,
        rescale=rescale,
    )
