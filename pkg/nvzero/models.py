"""Shared data models for nvzero results."""

import json
import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from .exceptions import InvariantViolationError, ValidationError


@dataclass
class Spectrum:
    """Photoluminescence-excitation scan on a uniform frequency grid."""
    frequencies: np.ndarray  # MHz offsets from the ZPL
    counts: np.ndarray
    polarization: Optional[str] = None
    power_nw: Optional[float] = None
    scan_index: Optional[int] = None

    def __post_init__(self):
        self.frequencies = np.asarray(self.frequencies, dtype=float)
        self.counts = np.asarray(self.counts, dtype=float)
        if self.frequencies.ndim != 1 or self.frequencies.shape != self.counts.shape:
            raise ValidationError("Spectrum frequencies and counts must be 1-D and equal length")
        if self.frequencies.size == 0:
            raise ValidationError("Spectrum is empty")
        if np.any(np.diff(self.frequencies) <= 0):
            raise ValidationError("Spectrum frequency grid must be strictly increasing")
        if np.any(self.counts < 0):
            raise ValidationError("Spectrum counts must be non-negative")

    @property
    def step_mhz(self) -> float:
        if self.frequencies.size < 2:
            return 0.0
        return float(np.median(np.diff(self.frequencies)))

    def to_dataframe(self) -> pd.DataFrame:
        return pd.DataFrame({"freq_offset_MHz": self.frequencies, "counts": self.counts})


@dataclass
class FitResult:
    """Outcome of a least-squares fit.

    Uncertainties are 1σ from the local covariance and are NaN unless the fit
    converged.
    """
    model: str
    param_names: List[str]
    values: Dict[str, float]
    uncertainties: Dict[str, float]
    residual_norm: float
    converged: bool
    n_iterations: int
    covariance: Optional[np.ndarray] = None
    chi2_dof: Optional[float] = None
    units: Dict[str, str] = field(default_factory=dict)
    message: str = ""

    def __getitem__(self, name: str) -> float:
        return self.values[name]

    def sigma(self, name: str) -> float:
        return self.uncertainties[name]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "model": self.model,
            "converged": self.converged,
            "n_iterations": self.n_iterations,
            "residual_norm": self.residual_norm,
            "chi2_dof": self.chi2_dof,
            "parameters": {
                name: {
                    "value": self.values[name],
                    "sigma": self.uncertainties.get(name, math.nan),
                    "unit": self.units.get(name, ""),
                }
                for name in self.param_names
            },
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, allow_nan=True)

    def to_text(self) -> str:
        """Aligned report: parameter, value, sigma, unit."""
        lines = [f"model: {self.model}  converged: {self.converged}  "
                 f"evaluations: {self.n_iterations}  residual: {self.residual_norm:.6g}"]
        lines.append(f"{'parameter':<16}{'value':>16}{'sigma':>16}  unit")
        for name in self.param_names:
            lines.append(
                f"{name:<16}{self.values[name]:>16.8g}"
                f"{self.uncertainties.get(name, math.nan):>16.4g}  {self.units.get(name, '')}"
            )
        return "\n".join(lines)


@dataclass
class CountHistogram:
    """Photon-count histogram of single-shot records.

    ``discarded`` counts shots removed because the emitter was found in NV⁻.
    """
    bins: np.ndarray
    occurrences: np.ndarray
    total_shots: int
    discarded: int = 0

    def __post_init__(self):
        self.bins = np.asarray(self.bins, dtype=int)
        self.occurrences = np.asarray(self.occurrences, dtype=int)
        if int(self.occurrences.sum()) != self.total_shots - self.discarded:
            raise InvariantViolationError(
                "histogram occurrences = total - discarded",
                float(self.occurrences.sum() - (self.total_shots - self.discarded)),
            )

    @classmethod
    def from_counts(cls, counts: Sequence[int], discarded: int = 0) -> "CountHistogram":
        counts = np.asarray(counts, dtype=int)
        n_bins = int(counts.max()) + 1 if counts.size else 1
        occurrences = np.bincount(counts, minlength=n_bins)
        return cls(
            bins=np.arange(n_bins),
            occurrences=occurrences,
            total_shots=int(counts.size) + discarded,
            discarded=discarded,
        )

    @property
    def retained(self) -> int:
        return self.total_shots - self.discarded

    def fraction_at_least(self, threshold: int) -> float:
        if self.retained == 0:
            return math.nan
        return float(self.occurrences[self.bins >= threshold].sum() / self.retained)

    def mean(self) -> float:
        return float((self.bins * self.occurrences).sum() / max(self.retained, 1))

    def to_dataframe(self) -> pd.DataFrame:
        return pd.DataFrame({"counts": self.bins, "occurrences": self.occurrences})


@dataclass
class TrajectoryResult:
    """Time-resolved level populations of a master-equation run."""
    times_ns: np.ndarray
    populations: np.ndarray  # shape (n_times, n_levels)
    excited_population: np.ndarray
    fluorescence: np.ndarray  # detected counts per second
    labels: List[str]
    trace_deviation: float = 0.0
    final_state: Optional[np.ndarray] = None

    def level(self, label: str) -> np.ndarray:
        return self.populations[:, self.labels.index(label)]

    def to_dataframe(self) -> pd.DataFrame:
        data = {"t_ns": self.times_ns}
        for i, label in enumerate(self.labels):
            data[f"pop_{label}"] = self.populations[:, i]
        data["fluorescence_cps"] = self.fluorescence
        return pd.DataFrame(data)


@dataclass
class RatePopulations:
    """NV⁻ (N), NV⁰ spin-down (D) and NV⁰ spin-up (U) occupations."""
    N: np.ndarray
    D: np.ndarray
    U: np.ndarray

    def __post_init__(self):
        self.N = np.asarray(self.N, dtype=float)
        self.D = np.asarray(self.D, dtype=float)
        self.U = np.asarray(self.U, dtype=float)

    def check(self, tol: float = 1e-12) -> None:
        total = self.N + self.D + self.U
        residual = float(np.max(np.abs(total - 1.0))) if total.size else 0.0
        if residual > tol:
            raise InvariantViolationError("N + D + U = 1", residual)

    def as_array(self) -> np.ndarray:
        return np.stack([self.N, self.D, self.U], axis=-1)

    def to_dataframe(self, times) -> pd.DataFrame:
        return pd.DataFrame({"t_s": np.asarray(times, dtype=float),
                             "N": self.N, "D": self.D, "U": self.U})
