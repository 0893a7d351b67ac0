"""Model functions and analytic rate-equation solutions.

Every curve that is fitted somewhere in nvzero is registered in ``MODEL_REGISTRY``
with its parameter names, units and domain, so fits can be requested by name.

Units: temperatures in K, rates of the temperature laws in MHz, Δ in meV,
optical powers in nW, linewidths in MHz, kinetic rates in 1/s.
"""

import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import wofz

from .catalog_manager import get_preset
from .config import K_B_MEV_PER_K, LindbladConfig
from .exceptions import ValidationError
from .models import RatePopulations

DEGENERACY_GAP = 1e-9  # relative eigenvalue gap below which the repeated-root form is used


@dataclass(frozen=True)
class ModelSpec:
    """A named model curve y = func(x, *params)."""
    name: str
    func: Callable[..., np.ndarray]
    param_names: Tuple[str, ...]
    units: Tuple[str, ...]
    domain: str
    description: str = ""
    fixed_by_default: Tuple[str, ...] = ()

    def __call__(self, x, *params):
        return self.func(np.asarray(x, dtype=float), *params)


MODEL_REGISTRY: Dict[str, ModelSpec] = {}


def register_model(name: str, param_names: Sequence[str], units: Sequence[str], domain: str,
                   fixed_by_default: Sequence[str] = ()):
    """Decorator adding a model function to the registry."""

    def decorator(func):
        MODEL_REGISTRY[name] = ModelSpec(
            name=name,
            func=func,
            param_names=tuple(param_names),
            units=tuple(units),
            domain=domain,
            description=(func.__doc__ or "").strip().splitlines()[0] if func.__doc__ else "",
            fixed_by_default=tuple(fixed_by_default),
        )
        return func

    return decorator


def get_model(name: str) -> ModelSpec:
    """Look up a registered model.

    Raises:
        ValidationError: Unknown model name (the message lists the available ones).
    """
    if name not in MODEL_REGISTRY:
        available = ", ".join(sorted(MODEL_REGISTRY))
        raise ValidationError(f"Unknown model '{name}'. Available: {available}")
    return MODEL_REGISTRY[name]


def list_models() -> List[ModelSpec]:
    return [MODEL_REGISTRY[name] for name in sorted(MODEL_REGISTRY)]


# ---------------------------------------------------------------------------
# Fitted curves
# ---------------------------------------------------------------------------

@register_model("linear", ["a"], ["y/x"], "any x")
def linear_model(x, a):
    """Proportional law y = a·x."""
    return a * np.asarray(x, dtype=float)


@register_model("recovery", ["a", "A", "t0", "T"], ["", "", "ns", "ns"], "t_delay >= 0",
                fixed_by_default=["t0"])
def recovery_model(t_delay, a, A, t0, T):
    """Pump-probe recovery f = a + A(1 − exp(−(t − t0)/T))."""
    t_delay = np.asarray(t_delay, dtype=float)
    return a + A * (1.0 - np.exp(-(t_delay - t0) / T))


@register_model("orbach", ["A", "B", "delta_meV"], ["MHz/K", "MHz", "meV"], "T > 0 K")
def temperature_model_orbach(T_kelvin, A, B, delta_meV, k_b: float = K_B_MEV_PER_K):
    """Linear (direct) plus Orbach law f = A·T + B·exp(−Δ/k_B T), in MHz."""
    T = np.asarray(T_kelvin, dtype=float)
    return A * T + B * np.exp(-delta_meV / (k_b * T))


@register_model("raman", ["A", "C", "n"], ["MHz/K", "MHz/K^n", ""], "T > 0 K")
def temperature_model_raman(T_kelvin, A, C, n):
    """Linear (direct) plus two-phonon Raman law f = A·T + C·T^n, in MHz."""
    T = np.asarray(T_kelvin, dtype=float)
    return A * T + C * np.power(T, n)


@register_model("saturation", ["A", "P_sat"], ["cts/s", "nW"], "P >= 0")
def saturation_model(P, A, P_sat):
    """Saturation curve f = A·P/(P + P_sat)."""
    P = np.asarray(P, dtype=float)
    return A * P / (P + P_sat)


@register_model("rabi", ["alpha"], ["MHz/sqrt(nW)"], "P >= 0")
def rabi_frequency(P, alpha):
    """Rabi frequency Ω = α·√P in MHz."""
    return alpha * np.sqrt(np.asarray(P, dtype=float))


def voigt_fwhm(f_L, f_G):
    """Voigt FWHM from the Lorentzian and Gaussian FWHMs (Olivero approximation)."""
    f_L = np.asarray(f_L, dtype=float)
    f_G = np.asarray(f_G, dtype=float)
    return 0.5446 * f_L + np.sqrt(0.2166 * f_L**2 + f_G**2)


def power_broadened_gaussian(P, a, b):
    """Gaussian FWHM f_G = √(a²P + b²)."""
    return np.sqrt(a**2 * np.asarray(P, dtype=float) + b**2)


@register_model("power_broadening", ["a", "b", "f_L"], ["MHz/sqrt(nW)", "MHz", "MHz"], "P >= 0",
                fixed_by_default=["f_L"])
def power_broadened_fwhm(P, a, b, f_L):
    """Voigt FWHM with a power-broadened Gaussian part."""
    return voigt_fwhm(f_L, power_broadened_gaussian(P, a, b))


@register_model("double_exp_recharge", ["A", "tau_fast", "tau_slow"], ["", "s", "s"], "t >= 0")
def double_exp_recharge(t, A, tau_fast, tau_slow):
    """NV⁻ growth 1 − [A·exp(−t/τ_fast) + (1 − A)·exp(−t/τ_slow)]."""
    t = np.asarray(t, dtype=float)
    return 1.0 - (A * np.exp(-t / tau_fast) + (1.0 - A) * np.exp(-t / tau_slow))


@register_model("single_exp_recharge", ["tau"], ["s"], "t >= 0")
def single_exp_recharge(t, tau):
    """NV⁻ growth 1 − exp(−t/τ), used at high power."""
    return 1.0 - np.exp(-np.asarray(t, dtype=float) / tau)


@register_model("exponential_decay", ["A", "tau", "c"], ["", "x", ""], "x >= 0")
def exponential_decay(t, A, tau, c):
    """A·exp(−t/τ) + c."""
    return A * np.exp(-np.asarray(t, dtype=float) / tau) + c


@register_model("spin_relaxation", ["B", "tau", "p_inf"], ["", "s", ""], "t >= 0",
                fixed_by_default=["p_inf"])
def spin_relaxation(t, B, tau, p_inf):
    """Bright-state population p_inf + B·exp(−t/τ) relaxing toward the mixture."""
    return p_inf + B * np.exp(-np.asarray(t, dtype=float) / tau)


@register_model("damped_rabi", ["amplitude", "rabi_mhz", "tau_ns", "offset", "t0"],
                ["", "MHz", "ns", "", "ns"], "t >= t0", fixed_by_default=["t0"])
def damped_rabi(t, amplitude, rabi_mhz, tau_ns, offset, t0):
    """Driven population offset − amplitude·exp(−(t−t0)/τ)·cos(2πΩ(t−t0))."""
    dt = np.asarray(t, dtype=float) - t0
    return offset - amplitude * np.exp(-dt / tau_ns) * np.cos(2.0 * math.pi * rabi_mhz * 1e-3 * dt)


def voigt_profile(x, center, fwhm_g, fwhm_l):
    """Voigt line shape with unit peak height.

    Evaluated with the Faddeeva function; the pure Lorentzian and pure Gaussian
    limits are handled exactly.
    """
    dx = np.asarray(x, dtype=float) - center
    gamma = 0.5 * fwhm_l
    if fwhm_g <= 0.0:
        if gamma <= 0.0:
            return (dx == 0.0).astype(float)
        return gamma**2 / (dx**2 + gamma**2)
    sigma = fwhm_g / (2.0 * math.sqrt(2.0 * math.log(2.0)))
    if gamma <= 0.0:
        return np.exp(-0.5 * (dx / sigma) ** 2)
    scale = sigma * math.sqrt(2.0)
    peak = wofz(1j * gamma / scale).real
    return wofz((dx + 1j * gamma) / scale).real / peak


# ---------------------------------------------------------------------------
# Three-level charge/spin kinetics
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ThreeLevelRates:
    """Rates (1/s) of the NV⁻ (N), spin-down (D), spin-up (U) model.

    r: recharging D→N, p: spin pumping D→U, s: spin relaxation D↔U,
    i: ionisation N→D and N→U with equal weight (zero without red light).
    """
    r: float = 0.0
    p: float = 0.0
    s: float = 0.0
    i: float = 0.0

    def __post_init__(self):
        for name in ("r", "p", "s", "i"):
            value = getattr(self, name)
            if not math.isfinite(value) or value < 0:
                raise ValidationError(f"Rate '{name}' must be finite and >= 0, got {value}")

    @classmethod
    def from_times(cls, tau_recharge=None, tau_pump=None, tau_spin=None, tau_ion=None):
        inv = lambda tau: 0.0 if tau is None else 1.0 / tau  # noqa: E731
        return cls(r=inv(tau_recharge), p=inv(tau_pump), s=inv(tau_spin), i=inv(tau_ion))

    @classmethod
    def from_preset(cls, name: str) -> Tuple["ThreeLevelRates", float, float]:
        """Rates and initial (c1, c2) of a named ``rates`` preset."""
        data = get_preset("rates", name)
        rates = cls.from_times(
            data.get("tau_recharge_s"), data.get("tau_pump_s"),
            data.get("tau_spin_s"), data.get("tau_ion_s"),
        )
        return rates, float(data.get("c1", 1.0)), float(data.get("c2", 0.0))

    def scaled(self, factor: float) -> "ThreeLevelRates":
        return ThreeLevelRates(self.r * factor, self.p * factor, self.s * factor, self.i * factor)

    def generator(self) -> np.ndarray:
        """3×3 generator G acting on the column (N, D, U); columns sum to zero."""
        r, p, s, i = self.r, self.p, self.s, self.i
        return np.array([
            [-i, r, 0.0],
            [0.5 * i, -(r + s + p), s],
            [0.5 * i, s + p, -s],
        ])


def _check_initial(c1: float, c2: float) -> None:
    if c1 < 0 or c2 < 0 or c1 + c2 > 1.0 + 1e-12:
        raise ValidationError(f"Initial populations must satisfy c1, c2 >= 0 and c1 + c2 <= 1 "
                              f"(got c1={c1}, c2={c2})")


def _expm_2x2(M: np.ndarray, t: np.ndarray) -> np.ndarray:
    """exp(M t) for a real 2×2 matrix, shape (len(t), 2, 2).

    Uses e^{Mt} = e^{λ̄t}[cosh(x) I + t·sinh(x)/x (M − λ̄I)] with x = (λ₁−λ₂)t/2,
    switching to the repeated-root form below a relative gap of 1e-9.
    """
    tr = M[0, 0] + M[1, 1]
    det = M[0, 0] * M[1, 1] - M[0, 1] * M[1, 0]
    mean = 0.5 * tr
    half_gap = np.sqrt(complex(mean * mean - det))
    lam1, lam2 = mean + half_gap, mean - half_gap
    scale = max(abs(lam1), abs(lam2))
    K = M - mean * np.eye(2)
    t = np.asarray(t, dtype=float)[:, None, None]

    with np.errstate(over="ignore", invalid="ignore"):
        if scale == 0.0 or 2.0 * abs(half_gap) <= DEGENERACY_GAP * scale:
            a0 = np.exp(mean * t)
            a1 = t * a0
        else:
            x = half_gap * t
            big = np.abs(x.real) > 20.0
            e_mean = np.exp(mean * t)
            sinhc = np.where(np.abs(x) < 1e-8, 1.0 + x * x / 6.0, np.sinh(x) / np.where(x == 0, 1.0, x))
            small_a0 = e_mean * np.cosh(x)
            small_a1 = e_mean * t * sinhc
            e1, e2 = np.exp(lam1 * t), np.exp(lam2 * t)
            big_a0 = 0.5 * (e1 + e2)
            big_a1 = (e1 - e2) / (2.0 * half_gap)
            a0 = np.where(big, big_a0, small_a0)
            a1 = np.where(big, big_a1, small_a1)
    return np.real(a0 * np.eye(2) + a1 * K)


def _homogeneous(M: np.ndarray, x0: np.ndarray, t: np.ndarray) -> np.ndarray:
    return np.einsum("nij,j->ni", _expm_2x2(M, t), x0)


def _reduced_matrix(rates: ThreeLevelRates) -> np.ndarray:
    r, p, s, i = rates.r, rates.p, rates.s, rates.i
    return np.array([
        [-(r + s + p + 0.5 * i), s - 0.5 * i],
        [s + p - 0.5 * i, -(s + 0.5 * i)],
    ])


def _populations(DU: np.ndarray, scalar: bool) -> RatePopulations:
    D, U = DU[:, 0], DU[:, 1]
    N = 1.0 - D - U
    if scalar:
        return RatePopulations(N[0], D[0], U[0])
    return RatePopulations(N, D, U)


def solve_spin_pumping(rates: ThreeLevelRates, c1: float, c2: float, t) -> RatePopulations:
    """Analytic populations of the yellow-only model (no ionisation).

    D(0)=c1, U(0)=c2, N(0)=1−c1−c2; N follows from conservation.

    Raises:
        ValidationError: ``rates.i`` is not zero or the initial state is invalid.
    """
    if rates.i != 0.0:
        raise ValidationError("solve_spin_pumping requires i = 0; use solve_charge_cycling")
    return solve_charge_cycling(rates, c1, c2, t)


def solve_charge_cycling(rates: ThreeLevelRates, c1: float, c2: float, t) -> RatePopulations:
    """Analytic populations with ionisation N→(D, U)/2 at rate i.

    Conservation reduces the 3×3 system to the affine 2×2 system
    x' = M x + (i/2)(1, 1) for x = (D, U). Its fixed point is written in closed form
    (D∞ = i·s/det M, U∞ = i(r + 2s + 2p)/(2 det M)), which satisfies r·D∞ = i·N∞.
    """
    _check_initial(c1, c2)
    scalar = np.ndim(t) == 0
    t = np.atleast_1d(np.asarray(t, dtype=float))
    if np.any(t < 0):
        raise ValidationError("Times must be non-negative")
    x0 = np.array([c1, c2], dtype=float)
    M = _reduced_matrix(rates)

    if rates.i == 0.0:
        return _populations(_homogeneous(M, x0, t), scalar)

    r, p, s, i = rates.r, rates.p, rates.s, rates.i
    det = r * s + 0.5 * i * (r + 4.0 * s + 2.0 * p)
    if det == 0.0:
        # r = s = p = 0: only ionisation acts; D − U is conserved.
        w = 1.0 - (1.0 - c1 - c2) * np.exp(-i * t)
        diff = c1 - c2
        return _populations(np.column_stack([0.5 * (w + diff), 0.5 * (w - diff)]), scalar)

    x_inf = np.array([i * s / det, i * (r + 2.0 * s + 2.0 * p) / (2.0 * det)])
    return _populations(x_inf + _homogeneous(M, x0 - x_inf, t), scalar)


def steady_state_populations(rates: ThreeLevelRates) -> RatePopulations:
    """Long-time limit: null vector of the generator normalized to one."""
    G = rates.generator()
    w, v = np.linalg.eig(G)
    k = int(np.argmin(np.abs(w)))
    null = np.real(v[:, k])
    null = null / null.sum()
    return RatePopulations(null[0], null[1], null[2])


def yellow_axis_rates(rates_total: ThreeLevelRates, duty: float = 0.5) -> ThreeLevelRates:
    """Convert rates per total sequence time to rates per yellow illumination time."""
    if not 0 < duty <= 1:
        raise ValidationError(f"Duty cycle must be in (0, 1], got {duty}")
    return rates_total.scaled(1.0 / duty)


def solve_charge_cycling_yellow_axis(rates_total: ThreeLevelRates, c1: float, c2: float,
                                     t_yellow, duty: float = 0.5) -> RatePopulations:
    """Populations versus yellow-only time for a stroboscopic sequence.

    ``rates_total`` are averaged over the full sequence; with equal yellow and red
    periods the yellow time is half the total sequence time.
    """
    return solve_charge_cycling(rates_total, c1, c2, np.asarray(t_yellow, dtype=float) / duty)


def _taylor_step(G: np.ndarray, h: float, order: int = 14) -> np.ndarray:
    A = G * h
    S = np.eye(G.shape[0])
    for k in range(order, 0, -1):
        S = np.eye(G.shape[0]) + A @ S / k
    return S


def numeric_rate_oracle(rates: ThreeLevelRates, init: Tuple[float, float], grid,
                        max_step_norm: float = 0.25) -> RatePopulations:
    """Fixed-step high-order (Taylor) integration of the full 3×3 kinetics.

    Cross-check for the analytic solvers. Steps are chosen so ‖G‖·h ≤ 0.25.
    """
    c1, c2 = init
    _check_initial(c1, c2)
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or np.any(np.diff(grid) < 0) or (grid.size and grid[0] < 0):
        raise ValidationError("Grid must be non-negative and non-decreasing")
    G = rates.generator()
    norm = float(np.max(np.sum(np.abs(G), axis=0)))
    x = np.array([1.0 - c1 - c2, c1, c2])
    out = np.empty((grid.size, 3))
    t_prev = 0.0
    for k, t in enumerate(grid):
        dt = t - t_prev
        if dt > 0 and norm > 0:
            n_steps = max(1, math.ceil(dt * norm / max_step_norm))
            S = _taylor_step(G, dt / n_steps)
            x = np.linalg.matrix_power(S, n_steps) @ x
        out[k] = x
        t_prev = t
    return RatePopulations(out[:, 0], out[:, 1], out[:, 2])


def cyclicity(tau_limit_s: float, cfg: LindbladConfig, P: float) -> float:
    """Expected scattered photons before the limiting process: R_scatter·τ_limit.

    R_scatter is the photon rate of the resonantly driven spin-down cycle at power
    ``P``, where |−,↓⟩ is dark and refills |+,↓⟩ by orbital relaxation.
    """
    if tau_limit_s < 0:
        raise ValidationError("tau_limit must be >= 0")
    from .dynamics import cycling_scattering_rate

    return cycling_scattering_rate(cfg, P) * tau_limit_s
