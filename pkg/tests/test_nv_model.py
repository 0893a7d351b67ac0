"""Tests for the NV⁰ fine-structure model."""

import math

import numpy as np
import pytest

from nvzero.config import MU_B_MHZ_PER_G, FineStructureParams, SpectrumConfig
from nvzero.exceptions import HermiticityError, ValidationError
from nvzero.estimation import find_peaks
from nvzero.nv_model import (
    Polarization,
    build_excited_hamiltonian,
    build_ground_hamiltonian,
    contrast_sweep,
    contrasts,
    diagonalize_ground,
    splittings,
    synthesize_spectrum,
    transition_amplitude,
    transition_table,
)


def load_unstrained() -> FineStructureParams:
    return FineStructureParams(l=0.039, lambda_so=4.9, eps_perp=0.0)


def closed_form_energies(p: FineStructureParams) -> np.ndarray:
    """s·gμ_B B_z ± √((lμ_B B_z + 2λs)² + ε⊥²) for both spin projections."""
    values = []
    for s in (-0.5, 0.5):
        root = math.hypot(p.orbit_zeeman_mhz + 2.0 * p.lambda_mhz * s, p.eps_perp_mhz)
        values += [s * p.spin_zeeman_mhz - root, s * p.spin_zeeman_mhz + root]
    return np.sort(values)


class TestPolarization:
    """Tests for Jones vectors in the circular basis."""

    def test_named_states(self):
        """Test the four named polarizations."""
        assert abs(Polarization.named("L").eps_l) == pytest.approx(1.0)
        assert abs(Polarization.named("R").eps_r) == pytest.approx(1.0)
        h = Polarization.named("h")
        assert h.eps_l == pytest.approx(h.eps_r)
        v = Polarization.named("V")
        assert v.eps_l == pytest.approx(-v.eps_r)

    def test_unknown_name_rejected(self):
        """Test that an unknown name raises ValidationError."""
        with pytest.raises(ValidationError, match="Unknown polarization"):
            Polarization.named("X")

    def test_unnormalized_vector_rejected(self):
        """Test that a non-unit Jones vector raises ValidationError."""
        with pytest.raises(ValidationError, match="normalized"):
            Polarization((1.0, 1.0))

    def test_quarter_wave_plate_sweep(self):
        """Test circular states at 0° and 90° and the diagonal state at 45°."""
        for angle in (0.0, 90.0):
            pol = Polarization.from_quarter_wave_plate(angle)
            assert max(abs(pol.eps_l) ** 2, abs(pol.eps_r) ** 2) == pytest.approx(1.0, abs=1e-12)
        at_0 = Polarization.from_quarter_wave_plate(0.0)
        at_90 = Polarization.from_quarter_wave_plate(90.0)
        assert abs(at_0.eps_l) ** 2 == pytest.approx(abs(at_90.eps_r) ** 2, abs=1e-12)
        diagonal = Polarization.from_quarter_wave_plate(45.0)
        assert abs(diagonal.eps_l) ** 2 == pytest.approx(0.5, abs=1e-12)

    def test_half_wave_plate_keeps_linear(self):
        """Test that every half-wave plate angle gives equal circular weights."""
        for angle in np.linspace(0.0, 90.0, 7):
            pol = Polarization.from_half_wave_plate(angle)
            assert abs(pol.eps_l) ** 2 == pytest.approx(0.5, abs=1e-12)
        assert Polarization.from_half_wave_plate(0.0).eps_l == pytest.approx(
            Polarization.named("H").eps_l
        )


class TestGroundHamiltonian:
    """Tests for the ²E Hamiltonian and its eigensystem."""

    def test_trivial_parameters_give_spin_orbit_diagonal(self, trivial_params):
        """Test H = diag(−λ, −λ, λ, λ) without strain or field."""
        H = build_ground_hamiltonian(trivial_params)
        np.testing.assert_allclose(H, np.diag([-1000.0, -1000.0, 1000.0, 1000.0]))

    def test_hamiltonian_is_hermitian_and_traceless(self, nv_params):
        """Test Hermiticity and zero trace."""
        H = build_ground_hamiltonian(nv_params)
        np.testing.assert_allclose(H, H.conj().T)
        assert np.trace(H) == pytest.approx(0.0, abs=1e-9)

    def test_eigenvalues_match_closed_form(self):
        """Test the numeric eigenvalues against the closed form over random draws."""
        rng = np.random.default_rng(1234)
        for _ in range(1000):
            p = FineStructureParams(
                g=rng.uniform(1.9, 2.1),
                l=rng.uniform(0.0, 0.1),
                lambda_so=rng.uniform(0.5, 10.0),
                eps_perp=rng.uniform(0.0, 10.0),
                b_z=rng.uniform(0.0, 3000.0),
            )
            eig = diagonalize_ground(build_ground_hamiltonian(p))
            np.testing.assert_allclose(eig.energies, closed_form_energies(p), rtol=0, atol=1e-6)

    def test_fitted_nv_parameters(self, nv_params):
        """Test the closed form at l=0.039, λ=4.9 GHz, ε⊥=1.9 GHz, B=1890 G."""
        eig = diagonalize_ground(build_ground_hamiltonian(nv_params))
        np.testing.assert_allclose(eig.energies, closed_form_energies(nv_params), atol=1e-6)

    def test_diagonal_input(self):
        """Test that a diagonal input gives identity eigenvectors in energy order."""
        eig = diagonalize_ground(np.diag([1.0, 2.0, 3.0, 4.0]))
        np.testing.assert_allclose(eig.energies, [1.0, 2.0, 3.0, 4.0])
        np.testing.assert_allclose(np.abs(eig.states), np.eye(4), atol=1e-12)
        assert eig.spin_labels == ["down", "up", "down", "up"]
        assert eig.branch_labels == ["lower", "lower", "upper", "upper"]

    def test_eigenvectors_unitary(self, nv_params):
        """Test that the eigenvector matrix is unitary."""
        eig = diagonalize_ground(build_ground_hamiltonian(nv_params))
        np.testing.assert_allclose(eig.states.conj().T @ eig.states, np.eye(4), atol=1e-10)

    def test_non_hermitian_rejected(self):
        """Test that a non-Hermitian matrix raises HermiticityError."""
        H = np.zeros((4, 4))
        H[0, 1] = 1.0
        with pytest.raises(HermiticityError):
            diagonalize_ground(H)

    def test_wrong_shape_rejected(self):
        """Test that a 3×3 matrix raises ValidationError."""
        with pytest.raises(ValidationError, match="4x4"):
            diagonalize_ground(np.eye(3))

    def test_each_branch_labelled_once(self, nv_params):
        """Test one lower and one upper state per spin sector."""
        eig = diagonalize_ground(build_ground_hamiltonian(nv_params))
        for spin in ("down", "up"):
            lower = eig.index(spin, "lower")
            upper = eig.index(spin, "upper")
            assert eig.energies[lower] < eig.energies[upper]


class TestExcitedHamiltonian:
    """Tests for the ²A₂ Zeeman Hamiltonian."""

    def test_zeeman_splitting(self):
        """Test gμ_B B_z = 5290.58 MHz at g=2, B=1890 G."""
        p = FineStructureParams(g=2.0, b_z=1890.0)
        diag = np.diag(build_excited_hamiltonian(p))
        assert diag[1] - diag[0] == pytest.approx(2.0 * MU_B_MHZ_PER_G * 1890.0)
        assert diag[1] - diag[0] == pytest.approx(5290.58, abs=0.05)

    def test_no_strain_dependence(self, nv_params):
        """Test that strain does not enter the excited state."""
        np.testing.assert_array_equal(
            build_excited_hamiltonian(nv_params),
            build_excited_hamiltonian(nv_params.with_strain(7.0)),
        )


class TestTransitions:
    """Tests for the transition table and optical amplitudes."""

    def test_pure_orbital_states_without_strain(self):
        """Test that L drives |+,↓⟩ and R drives |−,↑⟩ without strain."""
        table = transition_table(load_unstrained())
        lower_down = table.line("down", "lower")
        lower_up = table.line("up", "lower")
        assert lower_down.amplitude(Polarization.named("L")) == pytest.approx(1.0)
        assert lower_down.amplitude(Polarization.named("R")) == pytest.approx(0.0, abs=1e-12)
        assert lower_up.amplitude(Polarization.named("R")) == pytest.approx(1.0)
        assert lower_up.amplitude(Polarization.named("L")) == pytest.approx(0.0, abs=1e-12)
        for line in (lower_down, lower_up):
            assert line.amplitude(Polarization.named("H")) == pytest.approx(0.5)

    def test_strain_limit_linear_selection(self):
        """Test that the lower lines follow V and vanish for H at large strain."""
        p = FineStructureParams(l=0.0, lambda_so=4.9, eps_perp=4.9e4, b_z=0.0)
        table = transition_table(p)
        for spin in ("down", "up"):
            line = table.line(spin, "lower")
            assert line.amplitude(Polarization.named("H")) == pytest.approx(0.0, abs=1e-3)
            assert line.amplitude(Polarization.named("V")) == pytest.approx(1.0, abs=1e-3)

    def test_amplitudes_complete_per_spin_sector(self, nv_params):
        """Test that the two lines of a spin sector share the full weight."""
        table = transition_table(nv_params)
        for angle in np.linspace(0.0, 180.0, 13):
            pol = Polarization.from_quarter_wave_plate(angle)
            for spin in ("down", "up"):
                total = table.line(spin, "lower").amplitude(pol) + table.line(spin, "upper").amplitude(pol)
                assert total == pytest.approx(1.0, abs=1e-12)

    def test_amplitudes_bounded(self, nv_params):
        """Test that every amplitude lies in [0, 1]."""
        table = transition_table(nv_params)
        for name in ("L", "R", "H", "V"):
            amps = table.amplitudes(Polarization.named(name))
            assert np.all((amps >= 0.0) & (amps <= 1.0))

    def test_mixed_spin_state_rejected(self):
        """Test that a state spread over both spin sectors is rejected."""
        state = np.array([1.0, 1.0, 0.0, 0.0]) / math.sqrt(2.0)
        with pytest.raises(ValidationError, match="single spin sector"):
            transition_amplitude(state, Polarization.named("L"))

    def test_unnormalized_state_rejected(self):
        """Test that a non-unit state is rejected."""
        with pytest.raises(ValidationError, match="normalized"):
            transition_amplitude([2.0, 0.0, 0.0, 0.0], Polarization.named("L"))

    def test_trivial_offsets(self, trivial_params):
        """Test lines at ±λ without strain and field."""
        offsets = np.sort(transition_table(trivial_params).offsets())
        np.testing.assert_allclose(offsets, [-1000.0, -1000.0, 1000.0, 1000.0])

    def test_line_order_and_frequencies(self, nv_params):
        """Test the line order and the absolute frequency near the ZPL."""
        table = transition_table(nv_params)
        assert [ln.label for ln in table.lines] == [
            "lower-down", "lower-up", "upper-down", "upper-up",
        ]
        for ln in table.lines:
            assert ln.frequency_thz == pytest.approx(521.22, abs=0.01)

    def test_dataframe_columns(self, nv_params):
        """Test the exported columns."""
        df = transition_table(nv_params).to_dataframe()
        assert list(df.columns) == [
            "label", "spin", "branch", "freq_offset_MHz", "amp_L", "amp_R", "amp_H", "amp_V",
        ]
        assert len(df) == 4


class TestSplittings:
    """Tests for Δ_spin and Δ_spin-orbit."""

    def test_unstrained_values(self):
        """Test Δ_spin = 2lμ_B B_z ≈ 206.3 MHz and Δ_so = 2λ without strain."""
        delta_spin, delta_so = splittings(load_unstrained())
        assert delta_spin == pytest.approx(2 * 0.039 * MU_B_MHZ_PER_G * 1890.0, rel=1e-9)
        assert delta_spin == pytest.approx(206.33, abs=0.01)
        assert delta_so == pytest.approx(9800.0, rel=1e-9)

    def test_spin_splitting_decreases_with_strain(self):
        """Test that Δ_spin falls and Δ_so grows with ε⊥."""
        base = load_unstrained()
        values = [splittings(base.with_strain(e)) for e in np.linspace(0.0, 10.0, 21)]
        spin = np.array([v[0] for v in values])
        so = np.array([v[1] for v in values])
        assert np.all(np.diff(spin) < 0)
        assert np.all(np.diff(so) > 0)

    def test_splittings_match_closed_form(self, nv_params):
        """Test both splittings against the square-root expressions."""
        lam, orbit, eps = nv_params.lambda_mhz, nv_params.orbit_zeeman_mhz, nv_params.eps_perp_mhz
        low = math.hypot(lam - orbit, eps)
        high = math.hypot(lam + orbit, eps)
        delta_spin, delta_so = splittings(nv_params)
        assert delta_spin == pytest.approx(high - low, rel=1e-9)
        assert delta_so == pytest.approx(high + low, rel=1e-9)


class TestContrasts:
    """Tests for simulated wave-plate sweeps and contrasts."""

    def test_no_strain_limit(self):
        """Test full orbit contrast and no spin-orbit contrast without strain."""
        orbit, spin_orbit = contrasts(load_unstrained())
        assert orbit == pytest.approx(1.0, abs=1e-9)
        assert spin_orbit == pytest.approx(0.0, abs=1e-9)

    def test_large_strain_limit(self):
        """Test vanishing orbit contrast and full spin-orbit contrast at large strain."""
        base = load_unstrained()
        orbit, spin_orbit = contrasts(base.with_strain(100.0 * base.lambda_so))
        assert orbit == pytest.approx(0.0100, abs=1e-4)
        assert spin_orbit > 0.99
        orbit, _ = contrasts(base.with_strain(1e4 * base.lambda_so))
        assert orbit < 1e-3

    def test_orbit_contrast_monotone_in_strain(self):
        """Test that the orbit contrast never grows with strain."""
        base = load_unstrained()
        values = np.array([contrasts(base.with_strain(e))[0] for e in np.linspace(0.0, 10.0, 21)])
        assert np.all(np.diff(values) <= 1e-9)
        assert np.all((values >= 0.0) & (values <= 1.0 + 1e-9))

    def test_sweep_shapes(self, nv_params):
        """Test the sweep arrays."""
        sweep = contrast_sweep(nv_params, n_angles=12)
        assert sweep["circular"].shape == (12, 2)
        assert sweep["linear"].shape == (12, 2)
        assert sweep["circular_angles"][-1] < 180.0
        assert sweep["linear_angles"][-1] < 90.0


class TestSynthesizeSpectrum:
    """Tests for synthetic photoluminescence-excitation scans."""

    def test_clean_spectrum_has_four_peaks_at_line_offsets(self, nv_params):
        """Test that a noiseless H scan shows all four lines where the table puts them."""
        (scan,) = synthesize_spectrum(nv_params, Polarization.named("H"))
        peaks = find_peaks(scan)
        expected = np.sort(transition_table(nv_params).offsets())
        assert peaks.size == 4
        np.testing.assert_allclose(peaks, expected, atol=2.0)

    def test_seeded_noise_reproducible(self, nv_params):
        """Test that the same seed gives identical noisy scans."""
        cfg = SpectrumConfig(noise=True, n_scans=2, drift_mhz=50.0)
        first = synthesize_spectrum(nv_params, Polarization.named("L"), cfg, seed=7)
        second = synthesize_spectrum(nv_params, Polarization.named("L"), cfg, seed=7)
        for a, b in zip(first, second):
            np.testing.assert_array_equal(a.counts, b.counts)
        assert len(first) == 2
        assert first[1].scan_index == 1

    def test_counts_non_negative_with_background(self, nv_params):
        """Test the background floor of a noiseless scan."""
        cfg = SpectrumConfig(background_counts=3.0)
        (scan,) = synthesize_spectrum(nv_params, Polarization.named("V"), cfg)
        assert scan.counts.min() >= 3.0
