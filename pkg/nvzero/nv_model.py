"""NV⁰ ground (²E) and excited (²A₂) state model.

Basis order of the ground manifold is (|+,↓⟩, |−,↑⟩, |−,↓⟩, |+,↑⟩) and of the excited
manifold (|0,↓⟩, |0,↑⟩). The circular polarization component ε_L drives the |+⟩
orbital and ε_R drives |−⟩. Contrasts do not depend on that choice.
"""

import logging
import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .config import (
    ZPL_NV0_THZ,
    FineStructureParams,
    SpectrumConfig,
)
from .exceptions import HermiticityError, ValidationError
from .models import Spectrum
from .rate_models import power_broadened_gaussian, voigt_profile
from .utils.seeding import SeedLike

logger = logging.getLogger(__name__)

GROUND_LABELS = ("+,down", "-,up", "-,down", "+,up")
SPIN_SECTORS = {"down": (0, 2), "up": (3, 1)}  # indices of (|+⟩, |−⟩) per spin
_SPIN_OF_INDEX = ("down", "up", "down", "up")
_ORBIT_OF_INDEX = (1, -1, -1, 1)
_SZ_OF_INDEX = (-0.5, 0.5, -0.5, 0.5)

N_SWEEP_ANGLES = 36
CIRCULAR_PERIOD_DEG = 180.0  # input rotation in front of the quarter-wave plate
LINEAR_PERIOD_DEG = 90.0  # half-wave plate rotation


def _rotation(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, s], [-s, c]])


def _wave_plate(fast_axis: float, retardance: float) -> np.ndarray:
    """Jones matrix in the (x, y) basis, global phase dropped."""
    return _rotation(-fast_axis) @ np.diag([1.0, np.exp(1j * retardance)]) @ _rotation(fast_axis)


@dataclass(frozen=True)
class Polarization:
    """Optical polarization as a Jones vector in the (L, R) circular basis.

    Named states use L=(1,0), R=(0,1), H=(1,1)/√2, V=(1,−1)/√2.
    """
    jones: Tuple[complex, complex]

    def __post_init__(self):
        vec = np.asarray(self.jones, dtype=complex)
        if vec.shape != (2,):
            raise ValidationError("Jones vector must have two components")
        norm = float(np.linalg.norm(vec))
        if abs(norm - 1.0) > 1e-12:
            raise ValidationError(f"Jones vector must be normalized (norm {norm:.15f})")

    @property
    def eps_l(self) -> complex:
        return complex(self.jones[0])

    @property
    def eps_r(self) -> complex:
        return complex(self.jones[1])

    @classmethod
    def named(cls, name: str) -> "Polarization":
        r = 1.0 / math.sqrt(2.0)
        table = {"L": (1.0, 0.0), "R": (0.0, 1.0), "H": (r, r), "V": (r, -r)}
        try:
            return cls(tuple(complex(c) for c in table[name.upper()]))
        except KeyError:
            raise ValidationError(f"Unknown polarization '{name}'. Use one of L, R, H, V")

    @classmethod
    def from_linear_field(cls, ex: complex, ey: complex) -> "Polarization":
        """Convert a lab-frame (x=H, y=V) Jones vector to the circular basis."""
        vec = np.array([ex, ey], dtype=complex)
        vec = vec / np.linalg.norm(vec)
        eps_l = (vec[0] - 1j * vec[1]) / math.sqrt(2.0)
        eps_r = (vec[0] + 1j * vec[1]) / math.sqrt(2.0)
        norm = math.hypot(abs(eps_l), abs(eps_r))
        return cls((complex(eps_l / norm), complex(eps_r / norm)))

    @classmethod
    def from_quarter_wave_plate(cls, angle_deg: float) -> "Polarization":
        """Linear light at ``angle_deg`` to H through a quarter-wave plate at 45°.

        0° gives a circular state, 45° the diagonal, 90° the opposite circular state.
        The H/V (strain-axis) Stokes component stays zero along the sweep.
        """
        theta = math.radians(angle_deg)
        field = _wave_plate(math.pi / 4, math.pi / 2) @ np.array([math.cos(theta), math.sin(theta)])
        return cls.from_linear_field(*field)

    @classmethod
    def from_half_wave_plate(cls, angle_deg: float) -> "Polarization":
        """H light through a half-wave plate at ``angle_deg`` (linear at twice the angle)."""
        field = _wave_plate(math.radians(angle_deg), math.pi) @ np.array([1.0, 0.0])
        return cls.from_linear_field(*field)


def build_ground_hamiltonian(p: FineStructureParams) -> np.ndarray:
    """Ground-state fine-structure Hamiltonian in MHz.

    H = gμ_B Ŝ_z B_z + lμ_B L̂_z B_z + 2λ L̂_z Ŝ_z + ε⊥(L̂₋ + L̂₊)
    """
    diag = [
        s * p.spin_zeeman_mhz + o * p.orbit_zeeman_mhz + 2.0 * p.lambda_mhz * o * s
        for o, s in zip(_ORBIT_OF_INDEX, _SZ_OF_INDEX)
    ]
    H = np.diag(np.asarray(diag, dtype=float))
    for plus, minus in SPIN_SECTORS.values():
        H[plus, minus] = H[minus, plus] = p.eps_perp_mhz
    return H


def build_excited_hamiltonian(p: FineStructureParams) -> np.ndarray:
    """Excited-state Zeeman Hamiltonian in MHz; strain does not enter."""
    half = 0.5 * p.spin_zeeman_mhz
    return np.diag([-half, half])


@dataclass
class GroundEigensystem:
    """Eigenenergies (ascending, MHz) and eigenvectors (columns) of the ground manifold."""
    energies: np.ndarray
    states: np.ndarray
    branch_labels: List[str]
    spin_labels: List[str]

    def orbital_components(self, k: int) -> Tuple[complex, complex]:
        """(c₊, c₋) of eigenvector ``k`` within its spin sector."""
        plus, minus = SPIN_SECTORS[self.spin_labels[k]]
        v = self.states[:, k]
        return complex(v[plus]), complex(v[minus])

    def index(self, spin: str, branch: str) -> int:
        for k, (s, b) in enumerate(zip(self.spin_labels, self.branch_labels)):
            if s == spin and b == branch:
                return k
        raise KeyError(f"No eigenstate with spin={spin}, branch={branch}")


def _fix_phase(v: np.ndarray) -> np.ndarray:
    k = int(np.argmax(np.round(np.abs(v), 12)))
    return v * (np.conj(v[k]) / abs(v[k]))


def diagonalize_ground(H: np.ndarray) -> GroundEigensystem:
    """Diagonalize a 4×4 ground-state Hamiltonian and label the eigenstates.

    Spin-block-diagonal input is diagonalized block by block so every eigenvector
    lives in exactly one spin sector even at degeneracies. Within each spin
    sector the lower-energy state is assigned to the lower spin-orbit branch.

    Raises:
        ValidationError: Wrong shape.
        HermiticityError: Input not Hermitian within 1e-10 relative.
    """
    H = np.asarray(H)
    if H.shape != (4, 4):
        raise ValidationError(f"Ground Hamiltonian must be 4x4, got {H.shape}")
    scale = max(float(np.max(np.abs(H))), 1.0)
    residual = float(np.max(np.abs(H - H.conj().T))) / scale
    if residual > 1e-10:
        raise HermiticityError(residual, 1e-10)
    H = 0.5 * (H + H.conj().T)

    down, up = list(SPIN_SECTORS["down"]), list(SPIN_SECTORS["up"])
    cross = float(np.max(np.abs(H[np.ix_(down, up)])))

    energies: List[float] = []
    vectors: List[np.ndarray] = []
    spins: List[str] = []
    if cross <= 1e-12 * scale:
        for spin, idx in (("down", down), ("up", up)):
            block = H[np.ix_(idx, idx)]
            w, v = np.linalg.eigh(block)
            for j in range(2):
                full = np.zeros(4, dtype=complex)
                full[idx] = v[:, j]
                energies.append(float(w[j]))
                vectors.append(full)
                spins.append(spin)
    else:
        logger.warning(f"Ground Hamiltonian mixes spin sectors (|H_cross| = {cross:.3e} MHz)")
        w, v = np.linalg.eigh(H)
        for j in range(4):
            weight_down = float(np.sum(np.abs(v[down, j]) ** 2))
            energies.append(float(w[j]))
            vectors.append(v[:, j].astype(complex))
            spins.append("down" if weight_down >= 0.5 else "up")

    order = np.argsort(np.asarray(energies), kind="stable")
    energies_arr = np.asarray(energies)[order]
    states = np.column_stack([_fix_phase(vectors[k]) for k in order])
    spin_labels = [spins[k] for k in order]

    branch_labels = [""] * 4
    for spin in ("down", "up"):
        members = [k for k, s in enumerate(spin_labels) if s == spin]
        for rank, k in enumerate(members):
            branch_labels[k] = "lower" if rank == 0 else "upper"

    return GroundEigensystem(
        energies=energies_arr,
        states=states,
        branch_labels=branch_labels,
        spin_labels=spin_labels,
    )


def transition_amplitude(state: Sequence[complex], pol: Polarization) -> float:
    """Relative excitation rate |ε_L c₊ + ε_R c₋|² of a ground eigenvector.

    ``state`` is a normalized 4-vector in the ground basis with support in one spin
    sector.

    Raises:
        ValidationError: Vector not normalized or spread over both spin sectors.
    """
    v = np.asarray(state, dtype=complex)
    if v.shape != (4,):
        raise ValidationError("Ground state must be a 4-component vector")
    norm = float(np.linalg.norm(v))
    if abs(norm - 1.0) > 1e-9:
        raise ValidationError(f"Ground state must be normalized (norm {norm:.12f})")
    weight_down = float(np.sum(np.abs(v[list(SPIN_SECTORS["down"])]) ** 2))
    if 1e-9 < weight_down < 1.0 - 1e-9:
        raise ValidationError("Ground state must lie in a single spin sector")
    plus, minus = SPIN_SECTORS["down" if weight_down >= 0.5 else "up"]
    amp = abs(pol.eps_l * v[plus] + pol.eps_r * v[minus]) ** 2
    return float(min(max(amp, 0.0), 1.0))


@dataclass
class TransitionLine:
    """One spin-conserving optical line."""
    label: str
    spin: str
    branch: str
    freq_offset_mhz: float
    state: np.ndarray  # ground eigenvector

    @property
    def frequency_thz(self) -> float:
        return ZPL_NV0_THZ + self.freq_offset_mhz * 1e-6

    def amplitude(self, pol: Polarization) -> float:
        return transition_amplitude(self.state, pol)


@dataclass
class TransitionTable:
    """The four spin-conserving lines, ordered lower↓, lower↑, upper↓, upper↑."""
    lines: List[TransitionLine]

    def line(self, spin: str, branch: str) -> TransitionLine:
        for ln in self.lines:
            if ln.spin == spin and ln.branch == branch:
                return ln
        raise KeyError(f"No line with spin={spin}, branch={branch}")

    def offsets(self) -> np.ndarray:
        return np.array([ln.freq_offset_mhz for ln in self.lines])

    def amplitudes(self, pol: Polarization) -> np.ndarray:
        return np.array([ln.amplitude(pol) for ln in self.lines])

    def to_dataframe(self) -> pd.DataFrame:
        named = {name: Polarization.named(name) for name in ("L", "R", "H", "V")}
        rows = []
        for ln in self.lines:
            row = {
                "label": ln.label,
                "spin": ln.spin,
                "branch": ln.branch,
                "freq_offset_MHz": ln.freq_offset_mhz,
            }
            for name, pol in named.items():
                row[f"amp_{name}"] = ln.amplitude(pol)
            rows.append(row)
        return pd.DataFrame(rows)


_LINE_ORDER = (("lower", "down"), ("lower", "up"), ("upper", "down"), ("upper", "up"))


def transition_table(p: FineStructureParams) -> TransitionTable:
    """Build the transition table for a parameter set.

    The offset of each line is E_excited(s) − E_ground(s, branch); the spin Zeeman
    term cancels, leaving ∓√((lμ_B B_z + 2λs)² + ε⊥²).
    """
    eig = diagonalize_ground(build_ground_hamiltonian(p))
    excited = np.diag(build_excited_hamiltonian(p))
    e_exc = {"down": float(excited[0]), "up": float(excited[1])}

    lines = []
    for branch, spin in _LINE_ORDER:
        k = eig.index(spin, branch)
        lines.append(
            TransitionLine(
                label=f"{branch}-{spin}",
                spin=spin,
                branch=branch,
                freq_offset_mhz=e_exc[spin] - float(eig.energies[k]),
                state=eig.states[:, k],
            )
        )
    return TransitionTable(lines=lines)


def splittings(p: FineStructureParams) -> Tuple[float, float]:
    """(Δ_spin, Δ_spin-orbit) in MHz, derived from the transition table."""
    table = transition_table(p)
    lower_down = table.line("down", "lower").freq_offset_mhz
    lower_up = table.line("up", "lower").freq_offset_mhz
    upper_down = table.line("down", "upper").freq_offset_mhz
    upper_up = table.line("up", "upper").freq_offset_mhz
    delta_spin = abs(lower_up - lower_down)
    delta_so = 0.5 * (lower_down + lower_up) - 0.5 * (upper_down + upper_up)
    return delta_spin, delta_so


def contrast_sweep(
    p: FineStructureParams, n_angles: int = N_SWEEP_ANGLES
) -> Dict[str, np.ndarray]:
    """Simulated amplitudes of the lower-branch lines versus wave-plate angle.

    Returns a dict with ``circular_angles``, ``circular`` (n×2, columns ↓ and ↑
    line), ``linear_angles`` and ``linear``.
    """
    table = transition_table(p)
    pair = (table.line("down", "lower"), table.line("up", "lower"))
    circ_angles = np.arange(n_angles) * CIRCULAR_PERIOD_DEG / n_angles
    lin_angles = np.arange(n_angles) * LINEAR_PERIOD_DEG / n_angles
    circular = np.array([
        [ln.amplitude(Polarization.from_quarter_wave_plate(a)) for ln in pair]
        for a in circ_angles
    ])
    linear = np.array([
        [ln.amplitude(Polarization.from_half_wave_plate(a)) for ln in pair]
        for a in lin_angles
    ])
    return {
        "circular_angles": circ_angles,
        "circular": circular,
        "linear_angles": lin_angles,
        "linear": linear,
    }


def contrasts(p: FineStructureParams, n_angles: int = N_SWEEP_ANGLES) -> Tuple[float, float]:
    """(orbit contrast, spin-orbit contrast) from simulated wave-plate sweeps.

    The sweeps go through the same normalization and fixed-period sine fit as
    measured data (see ``estimation.extract_contrasts``); each simulated circular
    scan is normalized by its integrated line amplitude.
    """
    from .estimation import extract_contrasts

    sweep = contrast_sweep(p, n_angles)
    orbit = extract_contrasts(
        sweep["circular_angles"], sweep["circular"], mode="circular",
        period_deg=CIRCULAR_PERIOD_DEG, scan_totals=sweep["circular"].sum(axis=1),
    )
    spin_orbit = extract_contrasts(
        sweep["linear_angles"], sweep["linear"], mode="linear",
        period_deg=LINEAR_PERIOD_DEG,
    )
    return orbit.contrast, spin_orbit.contrast


def synthesize_spectrum(
    p: FineStructureParams,
    pol: Polarization,
    cfg: Optional[SpectrumConfig] = None,
    seed: SeedLike = None,
    label: Optional[str] = None,
) -> List[Spectrum]:
    """Four-line photoluminescence-excitation scans for one polarization.

    Each line is a Voigt profile with the transform-limited Lorentzian width and the
    power-broadened Gaussian width, scaled by its transition amplitude. Scans are
    shifted by a uniform random drift within ±``drift_mhz`` and optionally carry
    Poisson noise.
    """
    cfg = cfg or SpectrumConfig()
    rng = np.random.default_rng(seed)
    table = transition_table(p)
    offsets = table.offsets()
    amps = table.amplitudes(pol)
    f_g = power_broadened_gaussian(cfg.power_nw, cfg.broadening_a, cfg.broadening_b)

    lo = offsets.min() - cfg.margin_mhz - cfg.drift_mhz
    hi = offsets.max() + cfg.margin_mhz + cfg.drift_mhz
    grid = np.arange(math.floor(lo), math.ceil(hi) + cfg.step_mhz, cfg.step_mhz)

    scans = []
    for index in range(cfg.n_scans):
        drift = rng.uniform(-cfg.drift_mhz, cfg.drift_mhz) if cfg.drift_mhz > 0 else 0.0
        model = np.full_like(grid, cfg.background_counts)
        for center, amp in zip(offsets, amps):
            model += cfg.peak_counts * amp * voigt_profile(
                grid, center + drift, f_g, cfg.transform_limit_mhz
            )
        counts = rng.poisson(model).astype(float) if cfg.noise else model
        scans.append(Spectrum(grid.copy(), counts, polarization=label, power_nw=cfg.power_nw,
                              scan_index=index))
    return scans
