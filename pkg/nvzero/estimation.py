"""Least-squares engine and the analysis pipelines built on it.

Spectra: peak finding, drift alignment, Voigt multiplet fits. Fine structure:
contrast extraction from wave-plate sweeps and the joint (l, λ, ε⊥) fit. Readout:
threshold classification, Poisson error rates and fidelity from histograms.
Kinetics: recovery, recharging, temperature-law and three-level population fits.
"""

import logging
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.ndimage import gaussian_filter1d
from scipy.optimize import least_squares
from scipy.signal import find_peaks as _scipy_find_peaks
from scipy.stats import median_abs_deviation, poisson

from . import nv_model
from .config import DEFAULT_B_Z_G, DEFAULT_G, K_B_MEV_PER_K, TRANSFORM_LIMIT_MHZ, FineStructureParams
from .exceptions import UnderdeterminedFitError, ValidationError
from .models import CountHistogram, FitResult, RatePopulations, Spectrum
from .rate_models import (
    ModelSpec,
    ThreeLevelRates,
    get_model,
    solve_charge_cycling,
    voigt_fwhm,
    voigt_profile,
)

logger = logging.getLogger(__name__)

MAX_ITERATIONS = 200
STEP_TOL = 1e-10
MIN_CONTRAST_ANGLES = 6

ModelLike = Union[str, ModelSpec, Callable[..., np.ndarray]]


# ---------------------------------------------------------------------------
# Generic nonlinear least squares
# ---------------------------------------------------------------------------

def _resolve_model(model: ModelLike, param_names: Optional[Sequence[str]],
                   units: Optional[Sequence[str]]) -> ModelSpec:
    if isinstance(model, ModelSpec):
        return model
    if isinstance(model, str):
        return get_model(model)
    if not callable(model) or not param_names:
        raise ValidationError("A callable model needs explicit param_names")
    return ModelSpec(
        name=getattr(model, "__name__", "custom"),
        func=model,
        param_names=tuple(param_names),
        units=tuple(units) if units else ("",) * len(param_names),
        domain="user supplied",
    )


def _as_dict(values, names: Sequence[str], what: str) -> Dict[str, float]:
    if isinstance(values, dict):
        unknown = set(values) - set(names)
        if unknown:
            raise ValidationError(f"Unknown {what} parameters: {sorted(unknown)}")
        return {k: float(v) for k, v in values.items()}
    values = list(values)
    if len(values) != len(names):
        raise ValidationError(f"Expected {len(names)} {what} values, got {len(values)}")
    return {name: float(v) for name, v in zip(names, values)}


def nls_fit(
    model: ModelLike,
    x,
    y,
    p0,
    sigma=None,
    bounds: Optional[Dict[str, Tuple[float, float]]] = None,
    fixed: Optional[Dict[str, float]] = None,
    starts: Optional[Sequence] = None,
    param_names: Optional[Sequence[str]] = None,
    units: Optional[Sequence[str]] = None,
    max_iterations: int = MAX_ITERATIONS,
) -> FitResult:
    """Weighted least-squares fit of a registered or user-supplied model.

    Unbounded problems use Levenberg-Marquardt, bounded ones a trust-region
    reflective scheme. ``starts`` lists further initial points; the lowest-cost
    converged start wins. Parameters named in the model's ``fixed_by_default`` are
    held at their ``p0`` value unless listed in ``fixed`` with another value.

    Non-convergence is reported through ``converged=False``; uncertainties are then
    NaN.

    Raises:
        ValidationError: Non-finite data, fewer points than free parameters or
            unknown parameter names.
    """
    spec = _resolve_model(model, param_names, units)
    names = list(spec.param_names)
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if y.ndim != 1 or x.shape[0] != y.shape[0]:
        raise ValidationError("x and y must have the same length")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise ValidationError("Data must be finite")
    weights = None
    if sigma is not None:
        sigma = np.broadcast_to(np.asarray(sigma, dtype=float), y.shape)
        if np.any(sigma <= 0) or not np.all(np.isfinite(sigma)):
            raise ValidationError("Uncertainties must be finite and > 0")
        weights = 1.0 / sigma

    initial = _as_dict(p0, names, "initial")
    fixed_values = dict(fixed or {})
    for name in spec.fixed_by_default:
        if name not in fixed_values and name in initial:
            fixed_values[name] = initial[name]
    missing = [n for n in names if n not in initial and n not in fixed_values]
    if missing:
        raise ValidationError(f"No initial value for parameters: {missing}")
    free = [n for n in names if n not in fixed_values]
    if not free:
        raise ValidationError("All parameters are fixed")
    if y.size < len(free):
        raise ValidationError(f"{y.size} points cannot constrain {len(free)} free parameters")

    lower = np.array([(bounds or {}).get(n, (-np.inf, np.inf))[0] for n in free])
    upper = np.array([(bounds or {}).get(n, (-np.inf, np.inf))[1] for n in free])
    bounded = bool(np.any(np.isfinite(lower)) or np.any(np.isfinite(upper)))

    def full_params(theta):
        values = dict(fixed_values)
        values.update(zip(free, theta))
        return [values[n] for n in names]

    def residuals(theta):
        r = np.asarray(spec.func(x, *full_params(theta)), dtype=float) - y
        if weights is not None:
            r = r * weights
        return np.where(np.isfinite(r), r, 1e150)

    candidates = [np.array([initial.get(n, fixed_values.get(n)) for n in free], dtype=float)]
    for start in starts or []:
        start_values = dict(initial)
        start_values.update(_as_dict(start, names, "start") if isinstance(start, dict)
                            else dict(zip(free, map(float, start))))
        candidates.append(np.array([start_values[n] for n in free], dtype=float))

    best = None
    for theta0 in candidates:
        if bounded:
            theta0 = np.clip(theta0, lower, upper)
        try:
            res = least_squares(
                residuals, theta0,
                method="trf" if bounded else "lm",
                bounds=(lower, upper) if bounded else (-np.inf, np.inf),
                xtol=STEP_TOL, ftol=STEP_TOL, gtol=STEP_TOL,
                x_scale="jac",
                max_nfev=max_iterations * (len(free) + 1),
            )
        except (ValueError, np.linalg.LinAlgError) as e:
            logger.debug(f"Fit start {theta0} of {spec.name} failed: {e}")
            continue
        ok = bool(res.success and res.status > 0 and np.all(np.isfinite(res.x)))
        if best is None or (ok, -res.cost) > (best[1], -best[0].cost):
            best = (res, ok)

    units_map = dict(zip(names, spec.units))
    if best is None:
        logger.warning(f"Fit of {spec.name} failed for every start")
        return FitResult(
            model=spec.name, param_names=names,
            values={n: initial.get(n, fixed_values.get(n, math.nan)) for n in names},
            uncertainties={n: math.nan for n in names}, residual_norm=math.inf,
            converged=False, n_iterations=0, units=units_map, message="all starts failed",
        )

    res, converged = best
    dof = y.size - len(free)
    chi2 = 2.0 * res.cost
    chi2_dof = chi2 / dof if dof > 0 else math.nan
    J = np.asarray(res.jac, dtype=float)
    covariance = np.linalg.pinv(J.T @ J)
    if weights is None and dof > 0:
        covariance = covariance * chi2_dof

    values = dict(zip(names, full_params(res.x)))
    uncertainties = {n: 0.0 if n in fixed_values else math.nan for n in names}
    if converged:
        for k, n in enumerate(free):
            uncertainties[n] = float(math.sqrt(max(covariance[k, k], 0.0)))
    else:
        logger.warning(f"Fit of {spec.name} did not converge: {res.message}")

    return FitResult(
        model=spec.name,
        param_names=names,
        values={n: float(v) for n, v in values.items()},
        uncertainties=uncertainties,
        residual_norm=float(math.sqrt(chi2)),
        converged=converged,
        n_iterations=int(res.nfev),
        covariance=covariance,
        chi2_dof=chi2_dof,
        units=units_map,
        message=str(res.message),
    )


# ---------------------------------------------------------------------------
# Spectra
# ---------------------------------------------------------------------------

def find_peaks(spec: Spectrum, smoothing_bins: float = 2.0,
               prominence: Optional[float] = None) -> np.ndarray:
    """Peak positions (MHz, ascending) of a spectrum.

    The counts are smoothed with a Gaussian kernel of ``smoothing_bins`` bins and
    maxima are kept when their prominence exceeds three median absolute deviations
    of the raw counts.
    """
    counts = spec.counts
    span = float(np.ptp(counts))
    if span == 0.0:
        return np.array([])
    smooth = gaussian_filter1d(counts, smoothing_bins) if smoothing_bins > 0 else counts
    if prominence is None:
        prominence = max(3.0 * float(median_abs_deviation(counts)), 1e-6 * span)
    idx, _ = _scipy_find_peaks(smooth, prominence=prominence)
    return np.sort(spec.frequencies[idx])


@dataclass
class AlignmentResult:
    """Summed spectrum with the applied per-scan shifts (MHz) and excluded scans."""
    spectrum: Spectrum
    shifts_mhz: Dict[int, float]
    excluded: List[int]


def _shift_bins(counts: np.ndarray, k: int) -> np.ndarray:
    out = np.zeros_like(counts)
    if k > 0:
        out[k:] = counts[:-k]
    elif k < 0:
        out[:k] = counts[-k:]
    else:
        out[:] = counts
    return out


def align_and_sum(scans: Sequence[Spectrum], smoothing_bins: float = 2.0) -> AlignmentResult:
    """Shift every scan so its mean peak position matches the mean over all scans,
    then sum bin by bin.

    Shifts are whole bins with zero fill. Scans without a detectable peak are
    excluded and reported.

    Raises:
        ValidationError: No scans, mismatched grids, or no scan with a peak.
    """
    if not scans:
        raise ValidationError("align_and_sum needs at least one scan")
    reference = scans[0]
    step = reference.step_mhz
    for s in scans[1:]:
        if s.frequencies.size != reference.frequencies.size or \
                abs(s.step_mhz - step) > 1e-6 * max(abs(step), 1.0):
            raise ValidationError("All scans must share the same grid spacing and length")

    centers: Dict[int, float] = {}
    excluded: List[int] = []
    for k, s in enumerate(scans):
        peaks = find_peaks(s, smoothing_bins)
        if peaks.size == 0:
            logger.warning(f"Scan {k} has no detectable peak; excluded")
            excluded.append(k)
            continue
        # Position relative to the reference grid so scans on offset grids align
        centers[k] = float(np.mean(peaks)) - (s.frequencies[0] - reference.frequencies[0])
    if not centers:
        raise ValidationError("No scan contains a detectable peak")

    target = float(np.mean(list(centers.values())))
    total = np.zeros_like(reference.counts)
    shifts: Dict[int, float] = {}
    for k, center in centers.items():
        bins = int(round((target - center) / step))
        total += _shift_bins(scans[k].counts, bins)
        shifts[k] = bins * step

    summed = Spectrum(reference.frequencies.copy(), total, polarization=reference.polarization,
                      power_nw=reference.power_nw)
    return AlignmentResult(spectrum=summed, shifts_mhz=shifts, excluded=excluded)


@dataclass
class VoigtPeak:
    center: float
    amplitude: float
    fwhm_g: float
    fwhm: float


@dataclass
class VoigtMultipletFit:
    fit: FitResult
    peaks: List[VoigtPeak]
    fwhm_l: float


def _multiplet_model(n_peaks: int, fwhm_l: float):
    def model(x, background, *params):
        out = np.full_like(x, background, dtype=float)
        for k in range(n_peaks):
            center, amplitude, fwhm_g = params[3 * k: 3 * k + 3]
            out = out + amplitude * voigt_profile(x, center, abs(fwhm_g), fwhm_l)
        return out

    return model


def fit_voigt_multiplet(spec: Spectrum, n_peaks: int, f_L: float = TRANSFORM_LIMIT_MHZ,
                        centers: Optional[Sequence[float]] = None,
                        fwhm_g_guess: float = 25.0) -> VoigtMultipletFit:
    """Sum of ``n_peaks`` Voigt profiles with a shared Lorentzian FWHM ``f_L``.

    Initial centers default to the most prominent detected peaks.
    """
    if n_peaks < 1:
        raise ValidationError("n_peaks must be >= 1")
    x, y = spec.frequencies, spec.counts
    if centers is None:
        peaks = find_peaks(spec)
        if peaks.size >= n_peaks:
            heights = np.interp(peaks, x, y)
            centers = np.sort(peaks[np.argsort(heights)[::-1][:n_peaks]])
        else:
            centers = np.linspace(x[0], x[-1], n_peaks + 2)[1:-1]
            centers[: peaks.size] = peaks
    centers = list(centers)
    if len(centers) != n_peaks:
        raise ValidationError(f"Expected {n_peaks} initial centers, got {len(centers)}")

    names = ["background"]
    p0 = [float(np.min(y))]
    bounds: Dict[str, Tuple[float, float]] = {"background": (0.0, np.inf)}
    units = ["cts"]
    for k, c in enumerate(centers, start=1):
        names += [f"center_{k}", f"amplitude_{k}", f"fwhm_g_{k}"]
        p0 += [float(c), float(max(np.interp(c, x, y) - p0[0], 1e-9)), fwhm_g_guess]
        bounds[f"center_{k}"] = (float(x[0]), float(x[-1]))
        bounds[f"amplitude_{k}"] = (0.0, np.inf)
        bounds[f"fwhm_g_{k}"] = (0.0, float(x[-1] - x[0]))
        units += ["MHz", "cts", "MHz"]

    fit = nls_fit(_multiplet_model(n_peaks, f_L), x, y, p0, bounds=bounds,
                  param_names=names, units=units)
    fit.model = f"voigt_multiplet_{n_peaks}"
    peaks_out = []
    for k in range(1, n_peaks + 1):
        f_g = abs(fit[f"fwhm_g_{k}"])
        peaks_out.append(VoigtPeak(center=fit[f"center_{k}"], amplitude=fit[f"amplitude_{k}"],
                                   fwhm_g=f_g, fwhm=float(voigt_fwhm(f_L, f_g))))
    peaks_out.sort(key=lambda p: p.center)
    return VoigtMultipletFit(fit=fit, peaks=peaks_out, fwhm_l=f_L)


# ---------------------------------------------------------------------------
# Contrasts and fine structure
# ---------------------------------------------------------------------------

@dataclass
class ContrastResult:
    """Fixed-period sine fit of normalized line amplitudes.

    ``contrast`` is the fitted modulation amplitude divided by the fitted offset.
    """
    contrast: float
    phase_deg: float
    amplitude: float
    offset: float
    normalized: np.ndarray


def _normalize_sweep(amps: np.ndarray, mode: str) -> np.ndarray:
    if mode == "circular":
        mean_sum = float(amps.sum(axis=1).mean())
        if mean_sum <= 0:
            raise ValidationError("Sweep has no signal")
        return amps[:, 0] / mean_sum
    if mode == "linear":
        mean_pair = amps.mean(axis=1)
        overall = float(mean_pair.mean())
        if overall <= 0:
            raise ValidationError("Sweep has no signal")
        return mean_pair / overall
    raise ValidationError(f"Unknown contrast mode '{mode}'; use 'circular' or 'linear'")


def extract_contrasts(angles_deg, amplitudes, mode: str = "circular",
                      period_deg: Optional[float] = None, scan_totals=None) -> ContrastResult:
    """Contrast of a wave-plate sweep of the two lower-branch lines.

    ``amplitudes`` has one row per angle and one column per line (↓, ↑).
    ``scan_totals`` holds the integrated counts of the PL scan at each angle; when
    given, every row is first divided by its scan total. Circular sweeps then divide
    the ↓ amplitude by the mean over angles of the pair sum; linear sweeps average
    the pair and normalize by the global mean. A sine of fixed period is then fitted
    by linear least squares.

    Raises:
        ValidationError: Fewer than six angles or malformed input.
    """
    angles = np.asarray(angles_deg, dtype=float)
    amps = np.asarray(amplitudes, dtype=float)
    if amps.ndim == 1:
        amps = np.column_stack([amps, amps]) if mode == "linear" else None
        if amps is None:
            raise ValidationError("Circular sweeps need both lines (n x 2 amplitudes)")
    if amps.shape != (angles.size, 2):
        raise ValidationError(f"Amplitudes must have shape ({angles.size}, 2), got {amps.shape}")
    if angles.size < MIN_CONTRAST_ANGLES:
        raise ValidationError(f"Need at least {MIN_CONTRAST_ANGLES} angles, got {angles.size}")
    if scan_totals is not None:
        totals = np.asarray(scan_totals, dtype=float)
        if totals.shape != (angles.size,) or np.any(totals <= 0):
            raise ValidationError("scan_totals needs one positive total per angle")
        amps = amps / totals[:, None]
    if period_deg is None:
        period_deg = nv_model.CIRCULAR_PERIOD_DEG if mode == "circular" else nv_model.LINEAR_PERIOD_DEG

    normalized = _normalize_sweep(amps, mode)
    phase = 2.0 * math.pi * angles / period_deg
    design = np.column_stack([np.ones_like(phase), np.sin(phase), np.cos(phase)])
    (offset, a_sin, a_cos), *_ = np.linalg.lstsq(design, normalized, rcond=None)
    amplitude = float(math.hypot(a_sin, a_cos))
    contrast = amplitude / offset if offset > 0 else math.nan
    return ContrastResult(
        contrast=float(contrast),
        phase_deg=float(math.degrees(math.atan2(a_cos, a_sin))),
        amplitude=amplitude,
        offset=float(offset),
        normalized=normalized,
    )


OBSERVABLES = ("orbit_contrast", "spin_orbit_contrast", "delta_spin_mhz", "delta_so_mhz")


@dataclass
class NVObservables:
    """Measured fine-structure observables of one NV; ``None`` marks a missing value."""
    name: str
    orbit_contrast: Optional[float] = None
    spin_orbit_contrast: Optional[float] = None
    delta_spin_mhz: Optional[float] = None
    delta_so_mhz: Optional[float] = None
    sigmas: Dict[str, float] = field(default_factory=dict)

    def present(self) -> List[str]:
        return [k for k in OBSERVABLES if getattr(self, k) is not None]


@dataclass
class FineStructureFit:
    """Shared (l, λ) and per-NV strains with their 1σ uncertainties."""
    l: float
    lambda_so: float
    eps_perp: Dict[str, float]
    sigma_l: float
    sigma_lambda: float
    sigma_eps: Dict[str, float]
    method: int
    fit: FitResult

    def params_for(self, name: str, b_z: float = DEFAULT_B_Z_G, g: float = DEFAULT_G) -> FineStructureParams:
        return FineStructureParams(g=g, l=self.l, lambda_so=self.lambda_so,
                                   eps_perp=self.eps_perp[name], b_z=b_z)


def predict_observables(p: FineStructureParams, polarization_loss: float = 0.0) -> Dict[str, float]:
    """Observable values for one parameter set (contrasts scaled by 1 − loss)."""
    orbit, spin_orbit = nv_model.contrasts(p)
    delta_spin, delta_so = nv_model.splittings(p)
    scale = 1.0 - polarization_loss
    return {
        "orbit_contrast": orbit * scale,
        "spin_orbit_contrast": spin_orbit * scale,
        "delta_spin_mhz": delta_spin,
        "delta_so_mhz": delta_so,
    }


def _numeric_rank(func, theta: np.ndarray, rel_step: float = 1e-6) -> int:
    base = func(theta)
    J = np.empty((base.size, theta.size))
    for k in range(theta.size):
        h = rel_step * max(abs(theta[k]), 1e-3)
        bumped = theta.copy()
        bumped[k] += h
        J[:, k] = (func(bumped) - base) / h
    if J.size == 0:
        return 0
    s = np.linalg.svd(J, compute_uv=False)
    return int(np.sum(s > s[0] * 1e-8)) if s[0] > 0 else 0


def joint_finestructure_fit(
    datasets: Sequence[NVObservables],
    method: int = 1,
    fixed_strains: Optional[Sequence[float]] = None,
    p0: Optional[Dict[str, float]] = None,
    b_z: float = DEFAULT_B_Z_G,
    g: float = DEFAULT_G,
    polarization_mixing: bool = False,
) -> FineStructureFit:
    """Simultaneous fit of all observables of all NVs with shared (l, λ).

    Method 1 fits one strain per NV; method 2 holds the strains at ``fixed_strains``
    (GHz). Residuals are weighted by the supplied 1σ values, unit weights otherwise.
    ``polarization_mixing`` adds one shared factor scaling all contrasts down.

    Raises:
        ValidationError: Unknown method, missing strains for method 2, no data.
        UnderdeterminedFitError: Fewer independent observables than free parameters.
    """
    if method not in (1, 2):
        raise ValidationError(f"Unknown fit method {method}; use 1 or 2")
    if not datasets:
        raise ValidationError("No datasets given")
    names = [d.name for d in datasets]
    if len(set(names)) != len(names):
        raise ValidationError("Dataset names must be unique")
    if method == 2:
        if fixed_strains is None or len(fixed_strains) != len(datasets):
            raise ValidationError("Method 2 needs one fixed strain per dataset")

    p0 = dict(p0 or {})
    param_names = ["l", "lambda_so"]
    initial = [p0.get("l", 0.04), p0.get("lambda_so", 5.0)]
    bounds = {"l": (0.0, 1.0), "lambda_so": (0.05, 50.0)}
    units = ["", "GHz"]
    if method == 1:
        for d in datasets:
            key = f"eps_{d.name}"
            param_names.append(key)
            initial.append(p0.get(key, 3.0))
            bounds[key] = (0.0, 100.0)
            units.append("GHz")
    if polarization_mixing:
        param_names.append("polarization_loss")
        initial.append(p0.get("polarization_loss", 0.05))
        bounds["polarization_loss"] = (0.0, 0.5)
        units.append("")

    rows: List[Tuple[int, str]] = [(i, key) for i, d in enumerate(datasets) for key in d.present()]
    y = np.array([getattr(datasets[i], key) for i, key in rows], dtype=float)
    sig = np.array([datasets[i].sigmas.get(key, 1.0) for i, key in rows], dtype=float)

    def strains(params) -> List[float]:
        if method == 1:
            return list(params[2: 2 + len(datasets)])
        return [float(e) for e in fixed_strains]  # type: ignore[union-attr]

    def model(_x, *params):
        l, lam = params[0], params[1]
        loss = params[-1] if polarization_mixing else 0.0
        predicted = []
        for d, eps in zip(datasets, strains(params)):
            p = FineStructureParams(g=g, l=max(l, 0.0), lambda_so=max(lam, 1e-6),
                                    eps_perp=max(eps, 0.0), b_z=b_z)
            predicted.append(predict_observables(p, loss))
        return np.array([predicted[i][key] for i, key in rows])

    n_free = len(param_names)
    theta0 = np.array(initial, dtype=float)
    rank = _numeric_rank(lambda th: model(None, *th) / sig, theta0)
    if y.size < n_free or rank < n_free:
        logger.error(f"Joint fit under-determined: rank {rank} for {n_free} parameters")
        raise UnderdeterminedFitError(rank, n_free, int(y.size))

    x = np.arange(y.size, dtype=float)
    fit = nls_fit(model, x, y, theta0, sigma=sig, bounds=bounds, param_names=param_names,
                  units=units)
    fit.model = f"finestructure_method{method}"

    eps_values = strains([fit[n] for n in param_names])
    return FineStructureFit(
        l=fit["l"],
        lambda_so=fit["lambda_so"],
        eps_perp={d.name: float(e) for d, e in zip(datasets, eps_values)},
        sigma_l=fit.sigma("l"),
        sigma_lambda=fit.sigma("lambda_so"),
        sigma_eps={d.name: (fit.sigma(f"eps_{d.name}") if method == 1 else 0.0) for d in datasets},
        method=method,
        fit=fit,
    )


@dataclass
class StrainExclusion:
    """Normalized Δ_spin misfit |pred − obs|/σ over a strain grid."""
    eps_grid: np.ndarray
    predicted_mhz: np.ndarray
    misfit_sigma: np.ndarray
    threshold_sigma: float

    @property
    def excluded(self) -> bool:
        """True when no strain on the grid reproduces the observation."""
        return bool(np.all(self.misfit_sigma > self.threshold_sigma))

    @property
    def best_eps(self) -> float:
        return float(self.eps_grid[int(np.argmin(self.misfit_sigma))])


def strain_exclusion_scan(base: FineStructureParams, delta_spin_obs_mhz: float,
                          sigma_mhz: float, eps_grid=None,
                          threshold_sigma: float = 1.0) -> StrainExclusion:
    """Test whether any ε⊥ ≥ 0 reproduces a measured Δ_spin for fixed (l, λ)."""
    if sigma_mhz <= 0:
        raise ValidationError("sigma must be > 0")
    eps_grid = np.linspace(0.0, 20.0, 2001) if eps_grid is None else np.asarray(eps_grid, float)
    predicted = np.array([nv_model.splittings(base.with_strain(e))[0] for e in eps_grid])
    return StrainExclusion(
        eps_grid=eps_grid,
        predicted_mhz=predicted,
        misfit_sigma=np.abs(predicted - delta_spin_obs_mhz) / sigma_mhz,
        threshold_sigma=threshold_sigma,
    )


# ---------------------------------------------------------------------------
# Readout
# ---------------------------------------------------------------------------

class ReadoutOutcome(str, Enum):
    """Spin assignment of one readout record."""
    BRIGHT = "bright"
    DARK = "dark"


def threshold_classify(counts: int, threshold: int) -> ReadoutOutcome:
    """Bright when the counts match or exceed the threshold."""
    if counts < 0 or threshold < 0:
        raise ValidationError("Counts and threshold must be >= 0")
    return ReadoutOutcome.BRIGHT if counts >= threshold else ReadoutOutcome.DARK


def classify_counts(counts, threshold: int) -> np.ndarray:
    """Vectorized :func:`threshold_classify`; True marks bright."""
    return np.asarray(counts) >= threshold


def poisson_error_rates(mu_bright: float, mu_dark: float, threshold: int) -> Tuple[float, float]:
    """(P(dark call | bright), P(bright call | dark)) for Poisson counts."""
    if mu_bright < 0 or mu_dark < 0:
        raise ValidationError("Poisson means must be >= 0")
    if threshold < 0:
        raise ValidationError("Threshold must be >= 0")
    return float(poisson.cdf(threshold - 1, mu_bright)), float(poisson.sf(threshold - 1, mu_dark))


@dataclass
class ReadoutFidelity:
    """Single-shot readout fidelities with binomial 1σ uncertainties.

    ``f_x_given_y`` is the probability of assigning x when y was prepared; the
    bright (driven) state is spin down.
    """
    f_ro: float
    f_down_down: float
    f_up_down: float
    f_up_up: float
    f_down_up: float
    f_up_mixed: float
    sigma_f_ro: float
    sigma_down_down: float
    sigma_up_up: float
    sigma_up_mixed: float
    n_prepared: int
    n_mixed: int

    def to_dict(self) -> Dict[str, float]:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def _binomial_sigma(p: float, n: int) -> float:
    return math.sqrt(max(p * (1.0 - p), 0.0) / n) if n > 0 else math.nan


def fidelity_from_fractions(f_down_down: float, n_prepared: int, f_up_mixed: float,
                            n_mixed: int, p_down_mixed: float = 0.5) -> ReadoutFidelity:
    """Fidelities from the bright fraction of a prepared-↓ run and the dark fraction
    of a mixed-state run.

    A mixed run holding ↓ with probability p gives F_↑ = p·F↑|↓ + (1 − p)·F↑|↑, so
    F↑|↑ = (F_↑ − p·F↑|↓)/(1 − p), clamped to [0, 1]. For a fully mixed state
    (p = ½) this is F↑|↑ = 2F_↑ − F↑|↓.

    Raises:
        ValidationError: ``p_down_mixed`` outside [0, 1).
    """
    if not 0.0 <= p_down_mixed < 1.0:
        raise ValidationError(f"p_down_mixed must lie in [0, 1), got {p_down_mixed}")
    weight = 1.0 / (1.0 - p_down_mixed)
    f_up_down = 1.0 - f_down_down
    f_up_up = weight * (f_up_mixed - p_down_mixed * f_up_down)
    if not 0.0 <= f_up_up <= 1.0:
        logger.warning(f"Mixed-state relation gives F(up|up) = {f_up_up:.4f}; clamped")
        f_up_up = min(max(f_up_up, 0.0), 1.0)
    s_dd = _binomial_sigma(f_down_down, n_prepared)
    s_mix = _binomial_sigma(f_up_mixed, n_mixed)
    return ReadoutFidelity(
        f_ro=0.5 * (f_down_down + f_up_up),
        f_down_down=f_down_down,
        f_up_down=f_up_down,
        f_up_up=f_up_up,
        f_down_up=1.0 - f_up_up,
        f_up_mixed=f_up_mixed,
        sigma_f_ro=0.5 * weight * math.hypot(s_dd, s_mix),
        sigma_down_down=s_dd,
        sigma_up_up=weight * math.hypot(s_mix, p_down_mixed * s_dd),
        sigma_up_mixed=s_mix,
        n_prepared=n_prepared,
        n_mixed=n_mixed,
    )


def readout_fidelity(hist_prepared_down: CountHistogram, hist_mixed: CountHistogram,
                     threshold: int, p_down_mixed: float = 0.5) -> ReadoutFidelity:
    """Readout fidelity from histograms with NV⁻ shots already discarded.

    ``p_down_mixed`` is the ↓ population of the mixed run; ½ assumes full relaxation.
    """
    if hist_prepared_down.retained == 0 or hist_mixed.retained == 0:
        raise ValidationError("Histograms must contain retained shots")
    f_dd = hist_prepared_down.fraction_at_least(threshold)
    f_up_mixed = 1.0 - hist_mixed.fraction_at_least(threshold)
    return fidelity_from_fractions(f_dd, hist_prepared_down.retained, f_up_mixed,
                                   hist_mixed.retained, p_down_mixed)


# ---------------------------------------------------------------------------
# Kinetics
# ---------------------------------------------------------------------------

def fit_recovery(delays_ns, ratios, t0: float = 0.0, sigma=None,
                 min_delay_ns: float = 0.0) -> FitResult:
    """Pump-probe recovery fit with the onset ``t0`` held fixed.

    Delays below ``min_delay_ns`` are left out of the fit.
    """
    delays = np.asarray(delays_ns, dtype=float)
    ratios = np.asarray(ratios, dtype=float)
    keep = delays >= min_delay_ns
    if np.count_nonzero(keep) < 4:
        raise ValidationError(f"Need at least four delays >= {min_delay_ns:g} ns for a recovery fit")
    delays, ratios = delays[keep], ratios[keep]
    if sigma is not None:
        sigma = np.broadcast_to(np.asarray(sigma, dtype=float), keep.shape)[keep]
    a0 = float(ratios[np.argmin(delays)])
    A0 = float(ratios[np.argmax(delays)] - a0)
    target = a0 + (1.0 - math.exp(-1.0)) * A0
    crossing = delays[np.argmin(np.abs(ratios - target))]
    T0 = float(max(crossing - t0, np.ptp(delays) / 10 or 1.0))
    return nls_fit("recovery", delays, ratios, {"a": a0, "A": A0, "t0": t0, "T": T0},
                   sigma=sigma, fixed={"t0": t0},
                   starts=[{"T": T0 * 0.3}, {"T": T0 * 3.0}])


def fit_rabi_frequency(times_ns, excited, t0: float = 0.0) -> FitResult:
    """Damped-Rabi fit of an excited-population trace starting at ``t0``."""
    t = np.asarray(times_ns, dtype=float)
    y = np.asarray(excited, dtype=float)
    mask = t >= t0
    t, y = t[mask], y[mask]
    spectrum = np.abs(np.fft.rfft(y - y.mean()))
    freqs = np.fft.rfftfreq(t.size, d=float(np.median(np.diff(t)))) * 1e3  # MHz
    guess = float(freqs[1:][np.argmax(spectrum[1:])]) if t.size > 4 else 10.0
    p0 = {"amplitude": float(np.ptp(y) / 2), "rabi_mhz": guess, "tau_ns": 50.0,
          "offset": float(y[-1]), "t0": t0}
    return nls_fit("damped_rabi", t, y, p0, fixed={"t0": t0},
                   starts=[{"rabi_mhz": guess * 0.8}, {"rabi_mhz": guess * 1.2}])


@dataclass
class RechargeFitSeries:
    """Double-exponential fits per power and the fast-rate slope."""
    powers_nw: np.ndarray
    fits: List[FitResult]
    fast_rates_hz: np.ndarray
    slow_rates_hz: np.ndarray
    slope_hz_per_nw: float
    slope_sigma: float


def _fit_one_recharge(t: np.ndarray, pop: np.ndarray) -> FitResult:
    half = t[np.argmin(np.abs(pop - 0.5))] if np.any(pop > 0.5) else t[-1]
    tau_guess = max(float(half) / math.log(2.0), float(t[t > 0].min()) if np.any(t > 0) else 1.0)
    bounds = {"A": (0.0, 1.0), "tau_fast": (0.0, np.inf), "tau_slow": (0.0, np.inf)}
    fit = nls_fit("double_exp_recharge", t, pop,
                  {"A": 0.7, "tau_fast": tau_guess, "tau_slow": 10.0 * tau_guess},
                  bounds=bounds,
                  starts=[{"A": 0.9, "tau_fast": 0.5 * tau_guess, "tau_slow": 30.0 * tau_guess},
                          {"A": 0.5, "tau_fast": tau_guess, "tau_slow": 3.0 * tau_guess}])
    if fit["tau_fast"] > fit["tau_slow"]:
        v, s = fit.values, fit.uncertainties
        v["tau_fast"], v["tau_slow"] = v["tau_slow"], v["tau_fast"]
        s["tau_fast"], s["tau_slow"] = s["tau_slow"], s["tau_fast"]
        v["A"] = 1.0 - v["A"]
    if not fit.converged:
        logger.warning("Double-exponential recharge fit failed; using single exponential")
        single = nls_fit("single_exp_recharge", t, pop, {"tau": tau_guess}, bounds={"tau": (0, np.inf)})
        if single.converged:
            return FitResult(
                model="double_exp_recharge", param_names=["A", "tau_fast", "tau_slow"],
                values={"A": 1.0, "tau_fast": single["tau"], "tau_slow": single["tau"]},
                uncertainties={"A": 0.0, "tau_fast": single.sigma("tau"),
                               "tau_slow": single.sigma("tau")},
                residual_norm=single.residual_norm, converged=True,
                n_iterations=single.n_iterations, units={"tau_fast": "s", "tau_slow": "s"},
                message="single exponential",
            )
    return fit


def fit_recharge_curves(powers_nw: Sequence[float], times_s: Sequence[np.ndarray],
                        populations: Sequence[np.ndarray]) -> RechargeFitSeries:
    """Fit each NV⁻ growth curve and a line through the origin to the fast rates."""
    if not (len(powers_nw) == len(times_s) == len(populations)) or not powers_nw:
        raise ValidationError("Need one time axis and population curve per power")
    fits = [_fit_one_recharge(np.asarray(t, float), np.asarray(p, float))
            for t, p in zip(times_s, populations)]
    fast = np.array([1.0 / f["tau_fast"] if f["tau_fast"] > 0 else math.nan for f in fits])
    slow = np.array([1.0 / f["tau_slow"] if f["tau_slow"] > 0 else math.nan for f in fits])
    powers = np.asarray(powers_nw, dtype=float)
    ok = np.isfinite(fast)
    slope_fit = nls_fit("linear", powers[ok], fast[ok], {"a": float(np.median(fast[ok] / powers[ok]))})
    return RechargeFitSeries(
        powers_nw=powers,
        fits=fits,
        fast_rates_hz=fast,
        slow_rates_hz=slow,
        slope_hz_per_nw=slope_fit["a"],
        slope_sigma=slope_fit.sigma("a"),
    )


def fit_temperature_series(temperatures_k, rates_mhz, model: str = "orbach", sigma=None,
                           p0: Optional[Dict[str, float]] = None) -> FitResult:
    """Fit recovery rates versus temperature with the Orbach or Raman law.

    Without ``p0`` the linear coefficient starts from the coldest point and several
    activation energies (or exponents) are tried.
    """
    T = np.asarray(temperatures_k, dtype=float)
    rates = np.asarray(rates_mhz, dtype=float)
    if np.any(T <= 0):
        raise ValidationError("Temperatures must be > 0 K")
    a_guess = float(rates[np.argmin(T)] / T.min())
    excess = float(max(rates[np.argmax(T)] - a_guess * T.max(), 1e-3 * rates.max()))
    bounds: Dict[str, Tuple[float, float]]
    if model == "orbach":
        if p0 is None:
            grid = [6.0, 9.0, 12.0, 15.0, 18.0]
            starts = [{"A": a_guess, "B": excess * math.exp(d / (K_B_MEV_PER_K * T.max())),
                       "delta_meV": d} for d in grid]
            p0, starts = starts[2], starts[:2] + starts[3:]
        else:
            starts = []
        bounds = {"A": (0.0, np.inf), "B": (0.0, np.inf), "delta_meV": (0.0, 200.0)}
    elif model == "raman":
        if p0 is None:
            grid = [5.0, 9.0, 13.0, 17.0]
            starts = [{"A": a_guess, "C": excess / T.max() ** n, "n": n} for n in grid]
            p0, starts = starts[2], starts[:2] + starts[3:]
        else:
            starts = []
        bounds = {"A": (0.0, np.inf), "C": (0.0, np.inf), "n": (0.0, 40.0)}
    else:
        raise ValidationError(f"Unknown temperature model '{model}'; use 'orbach' or 'raman'")
    return nls_fit(model, T, rates, p0, sigma=sigma, bounds=bounds, starts=starts)


def fit_spin_relaxation(delays_s, bright_fraction, n_shots: Optional[Sequence[int]] = None,
                        p_inf: Optional[float] = None) -> FitResult:
    """Exponential decay of the ↓-assigned fraction toward the spin mixture.

    With ``n_shots`` the points are weighted by their binomial error. ``p_inf`` is
    fitted unless given.
    """
    t = np.asarray(delays_s, dtype=float)
    y = np.asarray(bright_fraction, dtype=float)
    sigma = None
    if n_shots is not None:
        n = np.broadcast_to(np.asarray(n_shots, dtype=float), y.shape)
        sigma = np.sqrt(np.clip(y * (1 - y), 0.25 / n, None) / n)
    tail = float(y[np.argmax(t)])
    start_inf = tail if p_inf is None else p_inf
    B0 = float(y[np.argmin(t)] - start_inf)
    crossing = t[np.argmin(np.abs(y - (start_inf + B0 / math.e)))]
    tau0 = float(crossing) if crossing > 0 else float(np.ptp(t) / 3 or 1.0)
    p0 = {"B": B0, "tau": tau0, "p_inf": start_inf}
    fixed = {"p_inf": p_inf} if p_inf is not None else {}
    spec = get_model("spin_relaxation")
    if p_inf is None:
        spec = replace(spec, fixed_by_default=())
    return nls_fit(spec, t, y, p0, sigma=sigma, fixed=fixed, bounds={"tau": (0.0, np.inf)},
                   starts=[{"tau": tau0 * 0.3}, {"tau": tau0 * 3.0}])


# ---------------------------------------------------------------------------
# Three-level population fits
# ---------------------------------------------------------------------------

RATE_PARAMS = ("r", "p", "s", "i", "c1", "c2")


class RateFitMode(str, Enum):
    """How the charge-cycling fit treats spin relaxation."""
    CONSTRAINED = "constrained"  # s fixed to twice the yellow-only value
    UNCONSTRAINED = "unconstrained"


def fit_rate_populations(times_s, populations: RatePopulations, p0: ThreeLevelRates,
                         c1: float, c2: float, fixed: Sequence[str] = (),
                         sigma=None) -> FitResult:
    """Joint fit of the N, D and U curves with the analytic three-level solution.

    Parameters are the rates ``r, p, s, i`` (1/s) and the initial populations
    ``c1, c2``; names in ``fixed`` stay at their start values. The three curves are
    stacked into one residual vector.
    """
    t = np.asarray(times_s, dtype=float)
    data = np.concatenate([np.broadcast_to(np.asarray(v, dtype=float), t.shape)
                           for v in (populations.N, populations.D, populations.U)])
    unknown = set(fixed) - set(RATE_PARAMS)
    if unknown:
        raise ValidationError(f"Unknown rate parameters: {sorted(unknown)}")

    def model(_x, r, p, s, i, a, b):
        if a + b > 1.0:
            return np.full(data.shape, np.nan)
        pops = solve_charge_cycling(ThreeLevelRates(r=r, p=p, s=s, i=i), a, b, t)
        return pops.as_array().T.ravel()

    start = {"r": p0.r, "p": p0.p, "s": p0.s, "i": p0.i, "c1": c1, "c2": c2}
    bounds = {n: (0.0, np.inf) for n in ("r", "p", "s", "i")}
    bounds.update({"c1": (0.0, 1.0), "c2": (0.0, 1.0)})
    return nls_fit(model, np.arange(data.size), data, start, sigma=sigma, bounds=bounds,
                   fixed={n: start[n] for n in fixed}, param_names=RATE_PARAMS,
                   units=("1/s", "1/s", "1/s", "1/s", "", ""))


def fit_spin_pumping(times_s, populations: RatePopulations, p0: ThreeLevelRates,
                     c1: float = 0.960, c2: float = 0.012, sigma=None) -> FitResult:
    """Yellow-only populations: ionisation is held at zero."""
    return fit_rate_populations(times_s, populations, replace(p0, i=0.0), c1, c2,
                                fixed=("i",), sigma=sigma)


def fit_charge_cycling(times_yellow_s, populations: RatePopulations,
                       yellow_only: ThreeLevelRates, i0: float,
                       mode: Union[str, RateFitMode] = RateFitMode.CONSTRAINED,
                       c1: float = 0.960, c2: float = 0.012, sigma=None) -> FitResult:
    """Stroboscopic populations on the yellow-time axis.

    Recharging, pumping and the initial populations come from the yellow-only fit.
    In the constrained mode spin relaxation is fixed to twice its yellow-only rate
    and only ``i`` is fitted; the unconstrained mode frees ``s`` as well.
    """
    mode = RateFitMode(mode)
    s0 = 2.0 * yellow_only.s
    fixed = ["r", "p", "c1", "c2"]
    if mode == RateFitMode.CONSTRAINED:
        fixed.append("s")
    start = ThreeLevelRates(r=yellow_only.r, p=yellow_only.p, s=s0, i=i0)
    fit = fit_rate_populations(times_yellow_s, populations, start, c1, c2, fixed=fixed,
                               sigma=sigma)
    logger.info(f"Charge-cycling fit ({mode.value}): i = {fit['i']:.4g} /s, s = {fit['s']:.4g} /s")
    return fit
