"""Tests for fitting, spectrum analysis, fine-structure inference and readout."""

import math

import numpy as np
import pytest

from nvzero.config import FineStructureParams, load_params_preset, resolve_section
from nvzero.dynamics import simulate_recharging
from nvzero.estimation import (
    NVObservables,
    RateFitMode,
    ReadoutOutcome,
    align_and_sum,
    classify_counts,
    extract_contrasts,
    fidelity_from_fractions,
    find_peaks,
    fit_charge_cycling,
    fit_rabi_frequency,
    fit_rate_populations,
    fit_recharge_curves,
    fit_recovery,
    fit_spin_pumping,
    fit_spin_relaxation,
    fit_temperature_series,
    fit_voigt_multiplet,
    joint_finestructure_fit,
    nls_fit,
    poisson_error_rates,
    predict_observables,
    readout_fidelity,
    strain_exclusion_scan,
    threshold_classify,
)
from nvzero.exceptions import UnderdeterminedFitError, ValidationError
from nvzero.models import CountHistogram, Spectrum
from nvzero.rate_models import (
    ThreeLevelRates,
    damped_rabi,
    double_exp_recharge,
    exponential_decay,
    recovery_model,
    solve_charge_cycling,
    spin_relaxation,
    temperature_model_orbach,
    voigt_fwhm,
    voigt_profile,
)


def poisson_tail(mu: float, lo: int, hi: int) -> float:
    return sum(math.exp(-mu) * mu**k / math.factorial(k) for k in range(lo, hi + 1))


class TestNlsFit:
    """Tests for the generic least-squares engine."""

    def test_recovers_exact_parameters(self):
        """Test that noiseless data gives back the true parameters."""
        x = np.linspace(0.0, 10.0, 50)
        y = exponential_decay(x, 2.0, 3.0, 0.5)
        fit = nls_fit("exponential_decay", x, y, {"A": 1.0, "tau": 1.0, "c": 0.0})
        assert fit.converged
        assert fit["A"] == pytest.approx(2.0, rel=1e-6)
        assert fit["tau"] == pytest.approx(3.0, rel=1e-6)
        assert fit["c"] == pytest.approx(0.5, rel=1e-6)

    def test_uncertainties_cover_noise(self):
        """Test that noisy data lands within a few sigma of the truth."""
        rng = np.random.default_rng(5)
        x = np.linspace(0.0, 10.0, 200)
        y = exponential_decay(x, 2.0, 3.0, 0.5) + rng.normal(0.0, 0.01, x.size)
        fit = nls_fit("exponential_decay", x, y, [1.0, 1.0, 0.0], sigma=0.01)
        assert fit.converged
        assert abs(fit["tau"] - 3.0) < 5.0 * fit.sigma("tau")
        assert fit.chi2_dof == pytest.approx(1.0, abs=0.3)

    def test_fixed_by_default(self):
        """Test that the recovery onset stays at its initial value."""
        t = np.linspace(0.0, 3000.0, 40)
        y = recovery_model(t, 0.2, 0.8, 0.0, 430.0)
        fit = nls_fit("recovery", t, y, {"a": 0.5, "A": 0.5, "t0": 0.0, "T": 200.0})
        assert fit["t0"] == 0.0
        assert fit.sigma("t0") == 0.0
        assert fit["T"] == pytest.approx(430.0, rel=1e-5)

    def test_custom_callable(self):
        """Test a user function with explicit parameter names."""
        x = np.linspace(-1.0, 1.0, 21)
        fit = nls_fit(lambda x, m, q: m * x + q, x, 3.0 * x - 1.0, [0.0, 0.0],
                      param_names=["m", "q"])
        assert fit["m"] == pytest.approx(3.0)
        assert fit["q"] == pytest.approx(-1.0)

    def test_callable_without_names_rejected(self):
        """Test that a bare callable raises ValidationError."""
        with pytest.raises(ValidationError, match="param_names"):
            nls_fit(lambda x, a: a * x, [1.0, 2.0], [1.0, 2.0], [1.0])

    def test_invalid_data(self):
        """Test length mismatch, non-finite values and too few points."""
        with pytest.raises(ValidationError, match="same length"):
            nls_fit("linear", [1.0, 2.0], [1.0], [1.0])
        with pytest.raises(ValidationError, match="finite"):
            nls_fit("linear", [1.0, 2.0], [1.0, math.nan], [1.0])
        with pytest.raises(ValidationError, match="cannot constrain"):
            nls_fit("exponential_decay", [1.0, 2.0], [1.0, 2.0], [1.0, 1.0, 0.0])

    def test_unknown_parameter_names(self):
        """Test that unknown names in p0 are reported."""
        with pytest.raises(ValidationError, match="Unknown initial parameters"):
            nls_fit("linear", [1.0, 2.0], [1.0, 2.0], {"a": 1.0, "b": 2.0})

    def test_bounds_respected(self):
        """Test that a bounded parameter stays inside its interval."""
        x = np.linspace(0.0, 5.0, 30)
        y = 2.0 * x
        fit = nls_fit("linear", x, y, [1.0], bounds={"a": (0.0, 1.5)})
        assert fit["a"] <= 1.5 + 1e-12

    def test_report_formats(self):
        """Test the text and JSON reports."""
        x = np.linspace(0.0, 5.0, 30)
        fit = nls_fit("linear", x, 2.0 * x + 0.01 * np.sin(x), [1.0])
        text = fit.to_text()
        assert "parameter" in text and "a" in text
        assert '"model": "linear"' in fit.to_json()


class TestSpectra:
    """Tests for peak finding, alignment and Voigt fits."""

    grid = np.arange(-500.0, 501.0, 1.0)

    def _scan(self, center: float, height: float = 100.0) -> Spectrum:
        return Spectrum(self.grid, height * voigt_profile(self.grid, center, 25.1, 7.6))

    def test_flat_spectrum_has_no_peaks(self):
        """Test that a flat scan yields no peaks."""
        assert find_peaks(Spectrum(self.grid, np.ones_like(self.grid))).size == 0

    def test_peak_positions(self):
        """Test two well separated peaks."""
        spec = Spectrum(self.grid, self._scan(-100.0).counts + self._scan(150.0).counts)
        np.testing.assert_allclose(find_peaks(spec), [-100.0, 150.0], atol=1.0)

    def test_align_and_sum(self):
        """Test that two drifted scans are summed onto their mean position."""
        scans = [self._scan(-15.0), self._scan(15.0), Spectrum(self.grid, np.zeros_like(self.grid))]
        result = align_and_sum(scans)
        assert result.excluded == [2]
        assert result.shifts_mhz == {0: 15.0, 1: -15.0}
        peak = self.grid[np.argmax(result.spectrum.counts)]
        assert peak == pytest.approx(0.0, abs=1.0)
        assert result.spectrum.counts.max() == pytest.approx(200.0, rel=1e-3)

    def test_align_requires_matching_grids(self):
        """Test that scans on different grids are refused."""
        other = Spectrum(np.arange(0.0, 100.0, 2.0), np.ones(50))
        with pytest.raises(ValidationError, match="same grid"):
            align_and_sum([self._scan(0.0), other])

    def test_align_without_scans(self):
        """Test that an empty list raises ValidationError."""
        with pytest.raises(ValidationError):
            align_and_sum([])

    def test_voigt_multiplet_fit(self):
        """Test centers and widths of a noiseless doublet with background."""
        counts = (2.0 + 100.0 * voigt_profile(self.grid, -100.0, 25.1, 7.6)
                  + 50.0 * voigt_profile(self.grid, 90.0, 30.0, 7.6))
        result = fit_voigt_multiplet(Spectrum(self.grid, counts), 2)
        assert result.fit.converged
        centers = [p.center for p in result.peaks]
        np.testing.assert_allclose(centers, [-100.0, 90.0], atol=0.05)
        assert result.peaks[0].fwhm == pytest.approx(float(voigt_fwhm(7.6, 25.1)), rel=1e-3)
        assert result.fit["background"] == pytest.approx(2.0, abs=0.05)


class TestContrasts:
    """Tests for contrast extraction from wave-plate sweeps."""

    def test_circular_sine(self):
        """Test a circular sweep with a known modulation depth."""
        angles = np.arange(0.0, 180.0, 10.0)
        down = 0.5 * (1.0 + 0.6 * np.sin(2.0 * np.pi * angles / 180.0))
        result = extract_contrasts(angles, np.column_stack([down, 1.0 - down]), "circular")
        assert result.contrast == pytest.approx(0.6, abs=1e-9)

    def test_circular_scan_totals(self):
        """Test that per-scan totals remove a total-count modulation from the contrast."""
        angles = np.arange(0.0, 180.0, 10.0)
        phi = 2.0 * np.pi * angles / 180.0
        totals = 2.0 + np.cos(phi)
        amps = np.column_stack([0.5 * (1.0 + 0.6 * np.sin(phi)) * totals,
                                0.5 * (1.0 - 0.6 * np.sin(phi)) * totals])
        corrected = extract_contrasts(angles, amps, "circular", scan_totals=totals)
        assert corrected.contrast == pytest.approx(0.6, abs=1e-9)
        assert extract_contrasts(angles, amps, "circular").contrast > 0.7

    def test_invalid_scan_totals(self):
        """Test that totals of the wrong shape or sign raise ValidationError."""
        angles = np.arange(0.0, 180.0, 10.0)
        amps = np.ones((angles.size, 2))
        with pytest.raises(ValidationError, match="one positive total"):
            extract_contrasts(angles, amps, "circular", scan_totals=np.ones(3))
        with pytest.raises(ValidationError, match="one positive total"):
            extract_contrasts(angles, amps, "circular", scan_totals=np.zeros(angles.size))

    def test_linear_sine(self):
        """Test a linear sweep with a known modulation depth."""
        angles = np.arange(0.0, 90.0, 5.0)
        amp = 1.0 + 0.4 * np.cos(2.0 * np.pi * angles / 90.0)
        result = extract_contrasts(angles, np.column_stack([amp, amp]), "linear")
        assert result.contrast == pytest.approx(0.4, abs=1e-9)

    def test_too_few_angles(self):
        """Test that five angles are not enough."""
        with pytest.raises(ValidationError, match="at least 6"):
            extract_contrasts(np.arange(5.0), np.ones((5, 2)), "circular")

    def test_unknown_mode(self):
        """Test that an unknown mode raises ValidationError."""
        with pytest.raises(ValidationError, match="Unknown contrast mode"):
            extract_contrasts(np.arange(8.0), np.ones((8, 2)), "elliptic")


def observables_for(name: str, p: FineStructureParams) -> NVObservables:
    values = predict_observables(p)
    return NVObservables(name=name, **values)


class TestFineStructureFit:
    """Tests for the joint (l, λ, ε⊥) fit and the strain exclusion scan."""

    @pytest.mark.slow
    def test_method1_recovers_parameters(self):
        """Test that simulated observables of two NVs give back l, λ and both strains."""
        a = load_params_preset("nv_a_method1")
        c = load_params_preset("nv_c_method1")
        data = [observables_for("A", a), observables_for("C", c)]
        fit = joint_finestructure_fit(
            data, method=1, p0={"l": 0.042, "lambda_so": 4.7, "eps_A": 2.2, "eps_C": 6.8}
        )
        assert fit.fit.converged
        assert fit.l == pytest.approx(0.040, rel=1e-3)
        assert fit.lambda_so == pytest.approx(4.5, rel=1e-3)
        assert fit.eps_perp["A"] == pytest.approx(1.9, rel=1e-2)
        assert fit.eps_perp["C"] == pytest.approx(7.2, rel=1e-2)
        assert fit.params_for("A").eps_perp == fit.eps_perp["A"]

    @pytest.mark.slow
    def test_noisy_three_nv_coverage(self):
        """Test 2σ coverage of the method-1 fit over seeded 5%-noise three-NV datasets."""
        truth = {"l": 0.040, "lambda_so": 4.5, "eps_A": 1.9, "eps_B": 3.2, "eps_C": 7.2}
        exact = {name: predict_observables(FineStructureParams(
                     l=truth["l"], lambda_so=truth["lambda_so"], eps_perp=truth[f"eps_{name}"]))
                 for name in "ABC"}
        rng = np.random.default_rng(5)
        inside = total = 0
        for _ in range(100):
            data = []
            for name, values in exact.items():
                sigmas = {k: 0.05 * abs(v) for k, v in values.items()}
                noisy = {k: v + sigmas[k] * rng.standard_normal() for k, v in values.items()}
                data.append(NVObservables(name=name, sigmas=sigmas, **noisy))
            fit = joint_finestructure_fit(
                data, method=1,
                p0={"l": 0.042, "lambda_so": 4.7, "eps_A": 2.2, "eps_B": 3.0, "eps_C": 6.8},
            )
            for key, value in truth.items():
                error = abs(fit.fit[key] - value)
                inside += bool(fit.fit.converged and error <= 2.0 * fit.fit.sigma(key))
                total += 1
        # Gaussian 2σ coverage is 95.4%; 500 checks spread it by about 1%.
        assert inside / total >= 0.93

    @pytest.mark.slow
    def test_method2_fixed_strains(self):
        """Test that fixed strains leave only l and λ free."""
        strains = [1.05, 4.15]
        truth = [FineStructureParams(l=0.037, lambda_so=5.2, eps_perp=e) for e in strains]
        data = [observables_for(name, p) for name, p in zip(("A", "B"), truth)]
        fit = joint_finestructure_fit(data, method=2, fixed_strains=strains,
                                      p0={"l": 0.035, "lambda_so": 5.0})
        assert fit.l == pytest.approx(0.037, rel=1e-3)
        assert fit.lambda_so == pytest.approx(5.2, rel=1e-3)
        assert fit.sigma_eps == {"A": 0.0, "B": 0.0}

    def test_underdetermined(self):
        """Test that one splitting cannot fix three parameters."""
        data = [NVObservables(name="A", delta_spin_mhz=190.0)]
        with pytest.raises(UnderdeterminedFitError) as exc_info:
            joint_finestructure_fit(data, method=1)
        assert exc_info.value.n_params == 3

    def test_method2_needs_strains(self):
        """Test that method 2 without strains raises ValidationError."""
        data = [observables_for("A", load_params_preset("nv_a_mean"))]
        with pytest.raises(ValidationError, match="fixed strain"):
            joint_finestructure_fit(data, method=2)

    def test_unknown_method(self):
        """Test that method 3 raises ValidationError."""
        with pytest.raises(ValidationError):
            joint_finestructure_fit([NVObservables(name="A")], method=3)

    def test_literature_parameters_excluded(self):
        """Test that no strain reconciles the MCD values with Δ_spin = 192 ± 5 MHz."""
        base = load_params_preset("mcd_literature")
        scan = strain_exclusion_scan(base, 192.0, 5.0)
        assert scan.predicted_mhz[0] <= 98.5
        assert scan.excluded

    def test_fitted_parameters_not_excluded(self):
        """Test that the fitted parameters admit a strain giving 190 MHz."""
        scan = strain_exclusion_scan(load_params_preset("unstrained"), 190.0, 5.0)
        assert not scan.excluded
        assert scan.best_eps > 0.0

    def test_exclusion_needs_positive_sigma(self):
        """Test that sigma = 0 raises ValidationError."""
        with pytest.raises(ValidationError):
            strain_exclusion_scan(load_params_preset("unstrained"), 190.0, 0.0)


class TestReadout:
    """Tests for threshold readout and fidelities."""

    def test_threshold_classify(self):
        """Test that the threshold itself counts as bright."""
        assert threshold_classify(5, 5) is ReadoutOutcome.BRIGHT
        assert threshold_classify(4, 5) is ReadoutOutcome.DARK
        with pytest.raises(ValidationError):
            threshold_classify(-1, 5)
        np.testing.assert_array_equal(classify_counts([0, 4, 5, 9], 5), [False, False, True, True])

    def test_poisson_error_rates(self):
        """Test both misassignment probabilities at threshold 5."""
        p_dark_given_bright, p_bright_given_dark = poisson_error_rates(25.2, 0.171, 5)
        assert p_dark_given_bright == pytest.approx(poisson_tail(25.2, 0, 4), rel=1e-9)
        assert p_bright_given_dark == pytest.approx(1.0 - poisson_tail(0.171, 0, 4), rel=1e-6)
        assert p_dark_given_bright == pytest.approx(2.25e-7, rel=0.02)
        assert p_bright_given_dark == pytest.approx(1.06e-6, rel=0.02)

    def test_poisson_invalid(self):
        """Test negative means."""
        with pytest.raises(ValidationError):
            poisson_error_rates(-1.0, 0.1, 5)

    def test_fidelity_from_fractions(self):
        """Test F↑|↑ = 2F_↑ − F↑|↓ and the average readout fidelity."""
        fid = fidelity_from_fractions(0.984, 2948, 0.498, 3086)
        assert fid.f_up_down == pytest.approx(0.016)
        assert fid.f_up_up == pytest.approx(0.980)
        assert fid.f_ro == pytest.approx(0.982)
        assert fid.sigma_down_down == pytest.approx(math.sqrt(0.984 * 0.016 / 2948))
        assert 0.0 < fid.sigma_f_ro < 0.01

    def test_fidelity_clamped(self):
        """Test that an inconsistent mixed fraction is clamped to one."""
        fid = fidelity_from_fractions(0.99, 100, 0.6, 100)
        assert fid.f_up_up == 1.0
        assert fid.f_down_up == 0.0

    def test_partly_mixed_state_corrected(self):
        """Test that a known ↓ excess in the mixed run is removed from F↑|↑."""
        p_down = 0.518
        f_up_mixed = p_down * 0.016 + (1.0 - p_down) * 0.999
        fid = fidelity_from_fractions(0.984, 3000, f_up_mixed, 3000, p_down_mixed=p_down)
        assert fid.f_up_up == pytest.approx(0.999, abs=1e-12)
        assert fid.f_ro == pytest.approx(0.9915, abs=1e-12)
        naive = fidelity_from_fractions(0.984, 3000, f_up_mixed, 3000)
        assert naive.f_up_up < fid.f_up_up - 0.03
        with pytest.raises(ValidationError):
            fidelity_from_fractions(0.984, 3000, 0.5, 3000, p_down_mixed=1.0)

    def test_readout_fidelity_from_histograms(self):
        """Test the histogram route with discarded NV⁻ shots."""
        prepared = CountHistogram.from_counts([0, 6, 7, 8, 9, 10, 12, 20, 2, 30], discarded=2)
        mixed = CountHistogram.from_counts([0, 0, 1, 0, 9, 12, 0, 15, 6, 7], discarded=1)
        fid = readout_fidelity(prepared, mixed, 5)
        assert fid.f_down_down == pytest.approx(0.8)
        assert fid.f_up_mixed == pytest.approx(0.5)
        assert fid.n_prepared == 10
        assert fid.f_up_up == pytest.approx(0.8)

    def test_empty_histogram_rejected(self):
        """Test that histograms without retained shots are refused."""
        empty = CountHistogram.from_counts([], discarded=3)
        full = CountHistogram.from_counts([1, 2])
        with pytest.raises(ValidationError):
            readout_fidelity(empty, full, 5)


class TestKineticFits:
    """Tests for the recovery, Rabi, recharge, relaxation and temperature fits."""

    def test_recovery_fit(self):
        """Test T = 430 ns from a noiseless recovery curve."""
        delays = np.linspace(0.0, 3000.0, 31)
        fit = fit_recovery(delays, recovery_model(delays, 0.15, 0.85, 0.0, 430.0))
        assert fit.converged
        assert fit["T"] == pytest.approx(430.0, rel=1e-4)
        assert fit["a"] == pytest.approx(0.15, abs=1e-5)

    def test_rabi_fit(self):
        """Test the Rabi frequency of a damped oscillation."""
        t = np.arange(0.0, 300.0, 0.25)
        trace = damped_rabi(t, 0.2, 10.0, 60.0, 0.25, 0.0)
        fit = fit_rabi_frequency(t, trace)
        assert fit.converged
        assert fit["rabi_mhz"] == pytest.approx(10.0, rel=1e-3)

    def test_recharge_slope(self):
        """Test that the fast rates grow linearly with power at 9.3 Hz/nW."""
        powers = [2.0, 5.0, 10.0, 20.0]
        times, curves = [], []
        for P in powers:
            tau_fast = 1.0 / (9.3 * P)
            t = np.concatenate([[0.0], np.geomspace(tau_fast * 1e-2, tau_fast * 200.0, 60)])
            times.append(t)
            curves.append(double_exp_recharge(t, 0.8, tau_fast, 10.0 * tau_fast))
        series = fit_recharge_curves(powers, times, curves)
        np.testing.assert_allclose(series.fast_rates_hz, 9.3 * np.asarray(powers), rtol=1e-3)
        assert series.slope_hz_per_nw == pytest.approx(9.3, rel=1e-3)

    @staticmethod
    def _simulated_series(preset: str, polarization: str, powers):
        cfg = resolve_section("lindblad", {"preset": preset})
        curves = [simulate_recharging(P, polarization, 5.0, cfg) for P in powers]
        return fit_recharge_curves(powers, [c.times_s for c in curves],
                                   [c.nv_minus for c in curves])

    @pytest.mark.slow
    def test_simulated_recharge_slope(self):
        """Test a fast-rate slope of 9.3 Hz/nW ± 20% from simulated NV⁻ growth."""
        series = self._simulated_series("recharge_linear", "linear",
                                        [1.0, 2.0, 5.0, 10.0, 20.0, 30.0])
        assert 7.44 <= series.slope_hz_per_nw <= 11.16
        assert np.all(np.diff(series.fast_rates_hz) > 0)

    @pytest.mark.slow
    def test_circular_slow_timescale_exceeds_linear(self):
        """Test that circular drive slows the spin-up return at 5 and 20 nW."""
        powers = [5.0, 20.0]
        linear = self._simulated_series("recharge_linear", "linear", powers)
        circular = self._simulated_series("recharge_circular", "circular", powers)
        assert np.all(1.0 / circular.slow_rates_hz > 1.0 / linear.slow_rates_hz)

    def test_recharge_inputs_checked(self):
        """Test mismatched inputs."""
        with pytest.raises(ValidationError):
            fit_recharge_curves([1.0, 2.0], [np.arange(3.0)], [np.arange(3.0)])

    def test_spin_relaxation_free_and_fixed(self):
        """Test τ with the plateau fitted and with it held at one half."""
        t = np.linspace(0.0, 8.0, 25)
        y = spin_relaxation(t, 0.48, 1.51, 0.5)
        free = fit_spin_relaxation(t, y)
        assert free["tau"] == pytest.approx(1.51, rel=1e-4)
        assert free["p_inf"] == pytest.approx(0.5, abs=1e-5)
        fixed = fit_spin_relaxation(t, y, n_shots=1000, p_inf=0.5)
        assert fixed["tau"] == pytest.approx(1.51, rel=1e-4)
        assert fixed.sigma("p_inf") == 0.0

    def test_orbach_series(self):
        """Test that the activation energy is recovered from noiseless rates."""
        T = np.array([4.65, 6.0, 8.0, 10.1, 12.0, 15.0, 20.0])
        rates = temperature_model_orbach(T, 0.53, 1e7, 12.0)
        fit = fit_temperature_series(T, rates, "orbach")
        assert fit.converged
        assert fit["delta_meV"] == pytest.approx(12.0, rel=1e-3)

    @pytest.mark.slow
    def test_orbach_noisy_trials(self):
        """Test that 10%-noise rate series mostly refit the 12 meV activation energy."""
        rng = np.random.default_rng(12)
        T = np.linspace(4.65, 11.8, 10)
        truth = temperature_model_orbach(T, 0.53, 1e7, 12.0)
        hits = 0
        for _ in range(100):
            rates = truth * (1.0 + 0.1 * rng.standard_normal(T.size))
            fit = fit_temperature_series(T, rates, "orbach", sigma=0.1 * truth)
            hits += fit.converged and abs(fit["delta_meV"] - 12.0) <= 2.0
        assert hits >= 90

    def test_temperature_inputs_checked(self):
        """Test zero kelvin and unknown laws."""
        with pytest.raises(ValidationError):
            fit_temperature_series([0.0, 5.0, 10.0], [1.0, 2.0, 3.0])
        with pytest.raises(ValidationError, match="Unknown temperature model"):
            fit_temperature_series([4.0, 5.0, 10.0], [1.0, 2.0, 3.0], "arrhenius")


class TestRateFits:
    """Test joint fits of the three-level populations."""

    YELLOW = ThreeLevelRates.from_times(0.027, 0.090, 1.51)
    T = np.linspace(0.0, 2.0, 41)

    def test_spin_pumping_recovery(self):
        """Test the yellow-only rates are recovered from noiseless curves."""
        pops = solve_charge_cycling(self.YELLOW, 0.960, 0.012, self.T)
        start = ThreeLevelRates(r=self.YELLOW.r * 1.3, p=self.YELLOW.p * 0.8, s=self.YELLOW.s * 1.5)
        fit = fit_spin_pumping(self.T, pops, start, c1=0.9, c2=0.05)
        assert fit.converged
        assert fit["r"] == pytest.approx(self.YELLOW.r, rel=1e-4)
        assert fit["p"] == pytest.approx(self.YELLOW.p, rel=1e-4)
        assert fit["s"] == pytest.approx(self.YELLOW.s, rel=1e-3)
        assert fit["c1"] == pytest.approx(0.960, abs=1e-5)
        assert fit["i"] == 0.0

    def test_constrained_charge_cycling(self):
        """Test the ionisation rate is fitted with spin relaxation held at twice its rate."""
        truth = ThreeLevelRates(r=self.YELLOW.r, p=self.YELLOW.p, s=2.0 * self.YELLOW.s, i=1.0 / 0.018)
        pops = solve_charge_cycling(truth, 0.960, 0.012, self.T)
        fit = fit_charge_cycling(self.T, pops, self.YELLOW, i0=30.0)
        assert fit.converged
        assert fit["i"] == pytest.approx(1.0 / 0.018, rel=1e-5)
        assert fit["s"] == pytest.approx(2.0 * self.YELLOW.s)
        assert fit.sigma("s") == 0.0

    def test_unconstrained_charge_cycling(self):
        """Test the free spin-relaxation mode recovers a fast relaxation."""
        truth = ThreeLevelRates(r=self.YELLOW.r, p=self.YELLOW.p, s=1.0 / 0.14, i=1.0 / 0.018)
        pops = solve_charge_cycling(truth, 0.960, 0.012, self.T)
        fit = fit_charge_cycling(self.T, pops, self.YELLOW, i0=30.0, mode=RateFitMode.UNCONSTRAINED)
        assert fit.converged
        assert fit["s"] == pytest.approx(1.0 / 0.14, rel=1e-3)
        assert fit["i"] == pytest.approx(1.0 / 0.018, rel=1e-3)

    def test_rate_fit_inputs_checked(self):
        """Test unknown fixed names and fitting modes."""
        pops = solve_charge_cycling(self.YELLOW, 0.960, 0.012, self.T)
        with pytest.raises(ValidationError):
            fit_rate_populations(self.T, pops, self.YELLOW, 0.96, 0.012, fixed=("tau",))
        with pytest.raises(ValueError):
            fit_charge_cycling(self.T, pops, self.YELLOW, i0=30.0, mode="loose")
