"""nvzero CLI - NV⁰ fine structure, dynamics and readout simulations from the terminal."""

import json
import logging
import time
from contextlib import contextmanager
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np
import pandas as pd
import typer
from rich.console import Console
from rich.table import Table

from nvzero import __version__
from nvzero.catalog_manager import CATALOG_SECTIONS, get_preset_description, list_presets
from nvzero.config import RunConfig, StrobeConfig, load_run_config, resolve_section
from nvzero.exceptions import (
    ConfigurationError,
    ConvergenceError,
    InvariantViolationError,
    NVSimError,
    ValidationError,
)
from nvzero.manifest import RunManifest, write_json_atomic, write_manifest
from nvzero.models import FitResult
from nvzero.utils.csv_io import write_csv

logger = logging.getLogger(__name__)

app = typer.Typer(
    name="nvzero",
    help="nvzero - NV⁰ fine structure, optical dynamics and charge-resonance protocol toolkit",
    add_completion=False,
)
console = Console()

EXIT_ERROR = 1
EXIT_CONFIG = 2
EXIT_CONVERGENCE = 3
EXIT_INVARIANT = 4

POLARIZATIONS = ("L", "R", "H", "V")


# ---------------------------------------------------------------------------
# Shared plumbing
# ---------------------------------------------------------------------------

ConfigOption = typer.Option(None, "--config", "-c", help="Run configuration JSON file")
SeedOption = typer.Option(None, "--seed", "-s", help="Random seed (default: run.seed or 0)")
OutOption = typer.Option(Path("results"), "--out", "-o", help="Output directory")
SamplesOption = typer.Option(None, "--samples", "-n", help="Detuning samples per ensemble")


@app.callback()
def main_callback(
    verbose: bool = typer.Option(False, "--verbose", "-v", help="Enable debug logging"),
):
    """Simulate and fit NV⁰ spectra, dynamics, rate equations and readout."""
    logging.basicConfig(level=logging.DEBUG if verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")


@contextmanager
def _handle_errors() -> Iterator[None]:
    """Render library errors in red and exit with their category code."""
    try:
        yield
    except ConfigurationError as e:
        console.print(f"[red]Configuration error:[/red] {e}")
        raise typer.Exit(EXIT_CONFIG)
    except ConvergenceError as e:
        console.print(f"[red]Fit did not converge:[/red] {e}")
        raise typer.Exit(EXIT_CONVERGENCE)
    except InvariantViolationError as e:
        console.print(f"[red]Invariant violated:[/red] {e}")
        raise typer.Exit(EXIT_INVARIANT)
    except NVSimError as e:
        console.print(f"[red]Error:[/red] {e}")
        raise typer.Exit(EXIT_ERROR)


def _load(config: Optional[Path], section: Optional[str] = None,
          preset: Optional[str] = None) -> RunConfig:
    """Run configuration with an optional preset replacing one section."""
    cfg = load_run_config(config)
    if preset is not None and section is not None:
        cfg = cfg.model_copy(update={section: resolve_section(section, {"preset": preset})})
    return cfg


def _seed(seed: Optional[int], cfg: RunConfig) -> int:
    return seed if seed is not None else int(cfg.run.get("seed", 0))


def _floats(text: str, name: str) -> List[float]:
    try:
        values = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigurationError(f"Cannot parse '{text}' as comma-separated numbers", key=name)
    if not values:
        raise ConfigurationError("Empty list", key=name)
    return values


def _write_fit(fit: FitResult, out: Path, stem: str, manifest: RunManifest,
               require_convergence: bool = True) -> None:
    (out / f"{stem}.txt").write_text(fit.to_text() + "\n", encoding="utf-8")
    (out / f"{stem}.json").write_text(fit.to_json() + "\n", encoding="utf-8")
    manifest.add_output(out / f"{stem}.txt")
    manifest.add_output(out / f"{stem}.json")
    if require_convergence and not fit.converged:
        raise ConvergenceError(fit.model, fit.n_iterations)


def _csv(df: pd.DataFrame, out: Path, name: str, kind: str, manifest: RunManifest) -> None:
    manifest.add_output(write_csv(df, out / name, kind))


def _start(command: str, seed: Optional[int], config: Optional[Path], preset: Optional[str],
           **parameters) -> Tuple[RunManifest, float]:
    manifest = RunManifest(command=command, version=__version__, seed=seed,
                           config_path=str(config) if config else None, preset=preset,
                           parameters=parameters)
    return manifest, time.perf_counter()


def _finish(manifest: RunManifest, out: Path, started: float) -> None:
    manifest.duration_s = round(time.perf_counter() - started, 3)
    write_manifest(manifest, out)
    console.print(f"[green]✓[/green] Wrote {len(manifest.outputs)} files to [cyan]{out}[/cyan]")


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

@app.command()
def spectrum(
    config: Optional[Path] = ConfigOption,
    preset: Optional[str] = typer.Option(None, "--preset", "-p", help="NV parameter preset"),
    seed: Optional[int] = SeedOption,
    out: Path = OutOption,
    extract: bool = typer.Option(False, "--extract", help="Run peak, Voigt and contrast extraction"),
):
    """Synthesize the four-line spectra for L, R, H and V polarization."""
    from nvzero import estimation, nv_model

    with _handle_errors():
        cfg = _load(config, "nv", preset)
        run_seed = _seed(seed, cfg)
        manifest, started = _start("spectrum", run_seed, config, preset, extract=extract)
        out.mkdir(parents=True, exist_ok=True)

        table = nv_model.transition_table(cfg.nv)
        _csv(table.to_dataframe(), out, "transitions.csv", "transitions", manifest)

        summary: Dict[str, object] = {}
        for pol_name, child in zip(POLARIZATIONS, np.random.SeedSequence(run_seed).spawn(4)):
            scans = nv_model.synthesize_spectrum(cfg.nv, nv_model.Polarization.named(pol_name),
                                                 cfg.spectrum, seed=child, label=pol_name)
            summed = estimation.align_and_sum(scans).spectrum if len(scans) > 1 else scans[0]
            _csv(summed.to_dataframe(), out, f"spectrum_{pol_name}.csv", "spectrum", manifest)
            if extract:
                n_peaks = max(1, min(4, estimation.find_peaks(summed).size))
                multiplet = estimation.fit_voigt_multiplet(summed, n_peaks)
                _write_fit(multiplet.fit, out, f"voigt_{pol_name}", manifest,
                           require_convergence=False)
                summary[pol_name] = [round(p.center, 3) for p in multiplet.peaks]

        if extract:
            sweep = nv_model.contrast_sweep(cfg.nv)
            for mode in ("circular", "linear"):
                angles, amps = sweep[f"{mode}_angles"], sweep[mode]
                _csv(pd.DataFrame({"angle_deg": angles, "amp_down": amps[:, 0],
                                   "amp_up": amps[:, 1]}),
                     out, f"sweep_{mode}.csv", "sweep", manifest)
            summary["circular_contrast"], summary["linear_contrast"] = nv_model.contrasts(cfg.nv)
            delta_spin, delta_so = nv_model.splittings(cfg.nv)
            summary["delta_spin_MHz"] = delta_spin
            summary["delta_spin_orbit_MHz"] = delta_so
            write_json_atomic(summary, out / "extraction.json")
            manifest.add_output(out / "extraction.json")
            console.print(f"Orbit contrast: [yellow]{summary['circular_contrast']:.4f}[/yellow]  "
                          f"spin-orbit contrast: [yellow]{summary['linear_contrast']:.4f}[/yellow]")
        _finish(manifest, out, started)


@app.command()
def pump(
    config: Optional[Path] = ConfigOption,
    preset: Optional[str] = typer.Option(None, "--preset", "-p", help="Lindblad preset"),
    seed: Optional[int] = SeedOption,
    out: Path = OutOption,
    samples: Optional[int] = SamplesOption,
    powers: str = typer.Option("2,4,10,20", "--powers", help="Drive powers in nW"),
    duration: float = typer.Option(400.0, "--duration", help="Pulse length in ns"),
):
    """Fluorescence under a shaped yellow pulse, saturation and Rabi-slope fits."""
    from nvzero import dynamics, estimation
    from nvzero.estimation import nls_fit

    with _handle_errors():
        cfg = _load(config, "lindblad", preset)
        run_seed = _seed(seed, cfg)
        power_list = _floats(powers, "powers")
        manifest, started = _start("pump", run_seed, config, preset, powers=power_list,
                                   duration_ns=duration, samples=samples)
        out.mkdir(parents=True, exist_ok=True)

        rabi, steady = [], []
        children = np.random.SeedSequence(run_seed).spawn(len(power_list))
        for P, child in zip(power_list, children):
            trace = dynamics.simulate_pump_trace(P, duration, cfg.lindblad, seed=child,
                                                 n_samples=samples)
            _csv(trace.to_dataframe(), out, f"pump_{P:g}nW.csv", "trajectory", manifest)
            if P > 0:
                fit = estimation.fit_rabi_frequency(trace.times_ns, trace.excited_population)
                rabi.append((P, fit["rabi_mhz"]) if fit.converged else (P, np.nan))
            steady.append(dynamics.steady_state_fluorescence(cfg.lindblad, P, n_samples=samples,
                                                             seed=child))

        _csv(pd.DataFrame({"power_nW": power_list, "fluorescence_cps": steady}),
             out, "saturation.csv", "saturation", manifest)
        sat = nls_fit("saturation", power_list, steady,
                      {"A": float(max(steady)), "P_sat": float(np.median(power_list))},
                      bounds={"A": (0, np.inf), "P_sat": (0, np.inf)})
        _write_fit(sat, out, "saturation_fit", manifest)

        ok = [(P, f) for P, f in rabi if np.isfinite(f)]
        if len(ok) >= 1:
            slope = nls_fit("rabi", [P for P, _ in ok], [f for _, f in ok],
                            {"alpha": ok[0][1] / np.sqrt(ok[0][0])})
            _write_fit(slope, out, "rabi_slope_fit", manifest)
            console.print(f"Rabi slope: [yellow]{slope['alpha']:.3f}[/yellow] MHz/√nW")
        console.print(f"Saturation power: [yellow]{sat['P_sat']:.3g}[/yellow] nW")
        _finish(manifest, out, started)


@app.command(name="pump-probe")
def pump_probe(
    config: Optional[Path] = ConfigOption,
    preset: Optional[str] = typer.Option(None, "--preset", "-p", help="Lindblad preset"),
    seed: Optional[int] = SeedOption,
    out: Path = OutOption,
    samples: Optional[int] = SamplesOption,
    delays: str = typer.Option("50,100,200,300,500,750,1000,1500,2000,3000",
                               "--delays", help="Pump-probe delays in ns"),
):
    """Pump-probe recovery ratio versus delay and its recovery-time fit.

    Delays before ``recovery_fit_start_ns`` are written but not fitted.
    """
    from nvzero import dynamics, estimation

    with _handle_errors():
        cfg = _load(config, "lindblad", preset)
        run_seed = _seed(seed, cfg)
        delay_list = _floats(delays, "delays")
        manifest, started = _start("pump-probe", run_seed, config, preset, delays_ns=delay_list,
                                   samples=samples)
        out.mkdir(parents=True, exist_ok=True)

        result = dynamics.pump_probe_sweep(delay_list, cfg.lindblad, seed=run_seed,
                                           n_samples=samples)
        _csv(result.to_dataframe(), out, "pump_probe.csv", "pump_probe", manifest)
        fit = estimation.fit_recovery(result.delays_ns, result.ratios,
                                      min_delay_ns=dynamics.recovery_fit_start_ns(cfg.lindblad))
        _write_fit(fit, out, "recovery_fit", manifest)
        console.print(f"Recovery time: [yellow]{fit['T']:.1f}[/yellow] ± {fit.sigma('T'):.1f} ns")
        _finish(manifest, out, started)


@app.command()
def rates(
    config: Optional[Path] = ConfigOption,
    preset: str = typer.Option("spin_pumping", "--preset", "-p", help="Rate-table preset"),
    seed: Optional[int] = SeedOption,
    out: Path = OutOption,
    samples: int = typer.Option(0, "--samples", "-n",
                                help="Monte-Carlo shots per point (0: analytic only)"),
    t_max: float = typer.Option(1.0, "--t-max", help="Last yellow illumination time in s"),
    points: int = typer.Option(101, "--points", help="Number of time points"),
):
    """Three-level charge/spin populations versus yellow illumination time."""
    from nvzero import protocol_sim
    from nvzero.rate_models import ThreeLevelRates, solve_charge_cycling

    with _handle_errors():
        cfg = _load(config)
        run_seed = _seed(seed, cfg)
        manifest, started = _start("rates", run_seed, config, preset, samples=samples,
                                   t_max_s=t_max, points=points)
        out.mkdir(parents=True, exist_ok=True)
        if points < 2 or t_max <= 0:
            raise ValidationError("Need at least two points and t_max > 0")

        three_level, c1, c2 = ThreeLevelRates.from_preset(preset)
        t = np.linspace(0.0, t_max, points)
        pops = solve_charge_cycling(three_level, c1, c2, t)
        pops.check(1e-9)
        _csv(pops.to_dataframe(t), out, "rates_analytic.csv", "rate_curve", manifest)

        if samples > 0:
            if three_level.i > 0:
                strobe = StrobeConfig(ionisation_rate_hz=three_level.i, spin_relax_override_hz=0.0)
                yellow_only = ThreeLevelRates(r=three_level.r, p=three_level.p, s=three_level.s)
                curves = protocol_sim.simulate_charge_cycling_experiment(
                    0.0, strobe, t, samples, cfg.protocol, seed=run_seed, c1=c1, c2=c2,
                    rates=yellow_only)
            else:
                curves = protocol_sim.simulate_spin_pumping_experiment(
                    0.0, t, samples, cfg.protocol, seed=run_seed, c1=c1, c2=c2,
                    rates=three_level)
            _csv(curves.to_dataframe(), out, "rates_montecarlo.csv", "rate_curve", manifest)
        console.print(f"U at {t_max:g} s: [yellow]{float(pops.U[-1]):.3f}[/yellow]  "
                      f"max U: [yellow]{float(pops.U.max()):.3f}[/yellow]")
        _finish(manifest, out, started)


@app.command()
def protocol(
    config: Optional[Path] = ConfigOption,
    preset: Optional[str] = typer.Option(None, "--preset", "-p", help="Protocol preset"),
    seed: Optional[int] = SeedOption,
    out: Path = OutOption,
    samples: int = typer.Option(3000, "--samples", "-n", help="Readout shots per histogram"),
    heralds: int = typer.Option(1000, "--heralds", help="Heralds for the protocol statistics"),
    mixed_delay: Optional[float] = typer.Option(
        None, "--mixed-delay", help="Dark delay of the mixed run in s (default: protocol config)"),
    event_log: bool = typer.Option(False, "--event-log", help="Write the protocol event log"),
):
    """Charge-resonance protocol statistics and single-shot readout fidelity."""
    from nvzero import protocol_sim

    with _handle_errors():
        cfg = _load(config, "protocol", preset)
        run_seed = _seed(seed, cfg)
        mixed_delay = cfg.protocol.mixed_delay_s if mixed_delay is None else mixed_delay
        manifest, started = _start("protocol", run_seed, config, preset, samples=samples,
                                   heralds=heralds, mixed_delay_s=mixed_delay)
        out.mkdir(parents=True, exist_ok=True)
        protocol_seed, ssro_seed = np.random.SeedSequence(run_seed).spawn(2)

        stats = protocol_sim.run_cr_protocol(cfg.protocol, heralds, seed=protocol_seed,
                                             keep_log=event_log)
        for step, hist in stats.count_histograms.items():
            _csv(hist.to_dataframe(), out, f"counts_{step}.csv", "histogram", manifest)
        if event_log:
            protocol_sim.write_event_log(stats.event_log, out / "events.tsv")
            manifest.add_output(out / "events.tsv")

        fidelity, prepared, mixed = protocol_sim.simulate_readout_fidelity(
            samples, cfg.protocol, seed=ssro_seed, mixed_delay_s=mixed_delay)
        _csv(prepared.to_dataframe(), out, "histogram_prepared.csv", "histogram", manifest)
        _csv(mixed.to_dataframe(), out, "histogram_mixed.csv", "histogram", manifest)

        report = {"protocol": stats.to_dict(), "readout": fidelity.to_dict(),
                  "discarded_prepared": prepared.discarded, "discarded_mixed": mixed.discarded}
        write_json_atomic(report, out / "protocol_report.json")
        manifest.add_output(out / "protocol_report.json")

        table = Table(title="Readout", show_header=True, header_style="bold magenta")
        table.add_column("Quantity", style="cyan")
        table.add_column("Value", justify="right", style="yellow")
        table.add_row("Herald success rate", f"{stats.herald_success_rate:.4f}")
        table.add_row("Overhead per herald", f"{stats.mean_overhead_s * 1e3:.2f} ms")
        table.add_row("F↓|↓", f"{fidelity.f_down_down:.4f}")
        table.add_row("F↑|↑", f"{fidelity.f_up_up:.4f}")
        table.add_row("F_RO", f"{fidelity.f_ro:.4f}")
        console.print(table)
        _finish(manifest, out, started)


@app.command()
def recharge(
    config: Optional[Path] = ConfigOption,
    preset: Optional[str] = typer.Option("recharge_linear", "--preset", "-p",
                                         help="Lindblad preset with a recharge section"),
    seed: Optional[int] = SeedOption,
    out: Path = OutOption,
    samples: Optional[int] = SamplesOption,
    powers: str = typer.Option("1,2,5,10,20,30", "--powers", help="Drive powers in nW"),
    polarization: str = typer.Option("linear", "--polarization", help="linear or circular"),
    t_max: float = typer.Option(5.0, "--t-max", help="Longest recharge time in s"),
):
    """NV⁻ recharging curves and their double-exponential fits."""
    from nvzero import dynamics, estimation

    with _handle_errors():
        cfg = _load(config, "lindblad", preset)
        run_seed = _seed(seed, cfg)
        power_list = _floats(powers, "powers")
        manifest, started = _start("recharge", run_seed, config, preset, powers=power_list,
                                   polarization=polarization, t_max_s=t_max, samples=samples)
        out.mkdir(parents=True, exist_ok=True)

        curves = []
        for P, child in zip(power_list, np.random.SeedSequence(run_seed).spawn(len(power_list))):
            curve = dynamics.simulate_recharging(P, polarization, t_max, cfg.lindblad, seed=child,
                                                 n_samples=samples)
            _csv(curve.to_dataframe(), out, f"recharge_{polarization}_{P:g}nW.csv", "recharge",
                 manifest)
            curves.append(curve)
        series = estimation.fit_recharge_curves(power_list, [c.times_s for c in curves],
                                                [c.nv_minus for c in curves])
        for P, fit in zip(power_list, series.fits):
            _write_fit(fit, out, f"recharge_fit_{polarization}_{P:g}nW", manifest,
                       require_convergence=False)
        summary = {
            "powers_nW": power_list,
            "fast_rate_hz": series.fast_rates_hz.tolist(),
            "slow_rate_hz": series.slow_rates_hz.tolist(),
            "slope_hz_per_nW": series.slope_hz_per_nw,
            "slope_sigma": series.slope_sigma,
        }
        write_json_atomic(summary, out / f"recharge_{polarization}_summary.json")
        manifest.add_output(out / f"recharge_{polarization}_summary.json")
        console.print(f"Fast-rate slope: [yellow]{series.slope_hz_per_nw:.2f}[/yellow] Hz/nW")
        _finish(manifest, out, started)


def _parse_assignments(items: Optional[List[str]], name: str) -> Dict[str, float]:
    values: Dict[str, float] = {}
    for item in items or []:
        key, sep, raw = item.partition("=")
        if not sep:
            raise ConfigurationError(f"Expected name=value, got '{item}'", key=name)
        try:
            values[key.strip()] = float(raw)
        except ValueError:
            raise ConfigurationError(f"Value of '{key}' is not a number", key=name)
    return values


@app.command()
def fit(
    model: str = typer.Argument(..., help="Registered model name (see 'nvzero models')"),
    data: Path = typer.Argument(..., help="CSV file with the data",
                                exists=True, file_okay=True, dir_okay=False, readable=True),
    x: str = typer.Option("x", "--x", help="Column of the independent variable"),
    y: str = typer.Option("y", "--y", help="Column of the dependent variable"),
    sigma: Optional[str] = typer.Option(None, "--sigma", help="Column of 1σ uncertainties"),
    p0: Optional[List[str]] = typer.Option(None, "--p0", help="Initial value name=value"),
    fix: Optional[List[str]] = typer.Option(None, "--fix", help="Fixed parameter name=value"),
    out: Path = OutOption,
):
    """Fit any registered model to two columns of a CSV file."""
    from nvzero.estimation import nls_fit
    from nvzero.rate_models import get_model

    with _handle_errors():
        spec = get_model(model)
        try:
            frame = pd.read_csv(data)
        except (OSError, pd.errors.ParserError) as e:
            raise ConfigurationError(f"Cannot read {data}: {e}", key="data")
        missing = [c for c in (x, y, sigma) if c is not None and c not in frame.columns]
        if missing:
            raise ConfigurationError(f"Columns not found: {missing}", key="data")

        initial = {name: 1.0 for name in spec.param_names}
        initial.update(_parse_assignments(p0, "p0"))
        fixed = _parse_assignments(fix, "fix")
        manifest, started = _start("fit", None, None, None, model=model, data=str(data),
                                   p0=initial, fixed=fixed)
        out.mkdir(parents=True, exist_ok=True)
        result = nls_fit(spec, frame[x].to_numpy(), frame[y].to_numpy(), initial,
                         sigma=frame[sigma].to_numpy() if sigma else None, fixed=fixed)
        console.print(result.to_text())
        _write_fit(result, out, f"fit_{model}", manifest)
        _finish(manifest, out, started)


@app.command()
def models():
    """List the registered fit models."""
    from nvzero.rate_models import list_models

    table = Table(title="Fit Models", show_header=True, header_style="bold magenta")
    table.add_column("Model", style="cyan")
    table.add_column("Parameters", style="green")
    table.add_column("Domain", style="yellow")
    for spec in list_models():
        params = ", ".join(f"{n} [{u}]" if u else n for n, u in zip(spec.param_names, spec.units))
        table.add_row(spec.name, params, spec.domain)
    console.print(table)


@app.command()
def presets(
    section: Optional[str] = typer.Option(None, "--section", help="Only this catalog section"),
):
    """List the shipped parameter presets."""
    with _handle_errors():
        if section is not None and section not in CATALOG_SECTIONS:
            raise ConfigurationError(
                f"Unknown section '{section}'. Available: {', '.join(CATALOG_SECTIONS)}",
                key="section")
        table = Table(title="Presets", show_header=True, header_style="bold magenta")
        table.add_column("Section", style="cyan", width=10)
        table.add_column("Preset", style="green")
        table.add_column("Description", style="yellow")
        total = 0
        for sec, names in list_presets(section).items():
            for name in names:
                table.add_row(sec, name, get_preset_description(sec, name))
                total += 1
        console.print(table)
        console.print(f"\n[dim]Total: {total} presets[/dim]")


@app.command()
def version():
    """Show the package version."""
    console.print(json.dumps({"nvzero": __version__}))


def main():
    """Entry point for CLI."""
    app()


if __name__ == "__main__":
    main()
