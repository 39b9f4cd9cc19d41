"""
Command-line interface for the fractional counting simulator.
Provides one command per pipeline stage plus reporting, comparison and
the acceptance experiments.
"""

import json
import sys
from pathlib import Path
from typing import List, Optional

import typer
from rich.console import Console
from rich.table import Table

from . import __version__
from .config import ConfigurationError, PipelineConfig
from .estimation.base import EstimationError
from .experiments import ExperimentError, experiments
from .persistence import PersistenceError, read_manifest, read_table, write_table
from .pipeline import PipelineError, PipelineStep, merge_tables, run_replicates, write_outputs
from .reporting.report import ReportError, compare_methods, summarise
from .rolling.base import RollingError
from .simulation.base import SimulationError

EXIT_CONFIG_ERROR = 2
EXIT_RUNTIME_ERROR = 3

RUNTIME_ERRORS = (EstimationError, SimulationError, RollingError, PipelineError, PersistenceError,
                  ReportError, ExperimentError, OSError)

# Initialize typer app and rich console
app = typer.Typer(
    name="fraccount",
    help="Fractional counting simulator - register-based population counts with placement, "
         "displacement and erroneous-record counters",
    add_completion=False,
    rich_markup_mode="rich",
    epilog="""
[bold]Examples:[/bold]
  [cyan]python scripts/fraccount.py simulate -c scenarios/latvia.toml --seed 7 -o runs/latvia[/cyan]
  [cyan]python scripts/fraccount.py count -r 100 -j 4 -o runs/mc[/cyan]     Monte-Carlo counts
  [cyan]python scripts/fraccount.py report runs/mc[/cyan]                   Bias, MC SE and coverage
  [cyan]python scripts/fraccount.py compare runs/ebp runs/refit[/cyan]      Compare two runs
  [cyan]python scripts/fraccount.py experiment unbiasedness[/cyan]          Run an acceptance experiment

[bold]Exit codes:[/bold] 0 ok, 1 failed experiment or validation, 2 configuration error, 3 runtime error
    """
)
console = Console()


def _fail(kind: str, message: str, code: int) -> None:
    """Write the single-line machine-readable error to stderr and exit."""
    typer.echo(json.dumps({"error": kind, "message": message}), err=True)
    raise typer.Exit(code)


def _load_config(config_file: Optional[Path], seed: Optional[int] = None, replicates: Optional[int] = None,
                 jobs: Optional[int] = None, out: Optional[Path] = None) -> PipelineConfig:
    """
    Load configuration from file or defaults and apply command-line overrides.

    Raises:
        ConfigurationError: If the file is missing or unreadable or the result is invalid
    """
    config = None

    if config_file:
        if not config_file.exists():
            raise ConfigurationError(f"Configuration file not found: {config_file}")
        config = PipelineConfig.from_file(config_file)
        console.print(f"[dim]Using configuration: {config_file}[/dim]")
    else:
        # Try to find default config files
        default_configs = [
            Path("fractional_counting.toml"),
            Path("fractional_counting.json"),
            Path("scripts/fractional_counting.toml"),
            Path("scripts/fractional_counting.json")
        ]

        for config_path in default_configs:
            if config_path.exists():
                console.print(f"[dim]Using configuration: {config_path}[/dim]")
                config = PipelineConfig.from_file(config_path)
                break

        if config is None:
            console.print("[dim]Using default configuration[/dim]")
            config = PipelineConfig.default()

    output = {}
    if replicates is not None:
        output["replicates"] = replicates
    if jobs is not None:
        output["jobs"] = jobs
    if out is not None:
        output["directory"] = str(out)
    overrides = {}
    if output:
        overrides["output"] = output
    if seed is not None:
        overrides["scenario"] = {"seed": seed}
    if overrides:
        config = config.with_overrides(**overrides)

    errors = config.validate()
    if errors:
        raise ConfigurationError("Invalid configuration: " + "; ".join(errors), errors)
    return config


def _run_stage(step: PipelineStep, config_file: Optional[Path], seed: Optional[int], replicates: Optional[int],
               jobs: Optional[int], out: Optional[Path]) -> None:
    """Run the pipeline up to ``step`` (with its dependencies) and write the outputs."""
    try:
        config = _load_config(config_file, seed, replicates, jobs, out)
    except (ConfigurationError, FileNotFoundError, ImportError) as e:
        _fail("config", str(e), EXIT_CONFIG_ERROR)

    console.print(f"[bold blue]Running {step.value} for scenario '{config.scenario.name}' "
                  f"({config.output.replicates} replicates)...[/bold blue]")
    try:
        steps = [step]
        results = run_replicates(config, steps)
        out_dir = Path(config.output.directory)
        manifest = write_outputs(config, results, out_dir, steps, __version__)
    except RUNTIME_ERRORS as e:
        _fail(type(e).__name__, str(e), EXIT_RUNTIME_ERROR)

    console.print(f"[green]✓[/green] Wrote {len(manifest.outputs)} files to {out_dir}")
    _display_outputs(merge_tables(results), manifest.config_hash)


# Shared option declarations
ConfigOption = typer.Option(None, "--config", "-c", help="Configuration file path")
SeedOption = typer.Option(None, "--seed", help="Master seed")
ReplicatesOption = typer.Option(None, "--replicates", "-r", help="Number of Monte-Carlo replicates")
JobsOption = typer.Option(None, "--jobs", "-j", help="Parallel worker processes")
OutOption = typer.Option(None, "--out", "-o", help="Output directory")


@app.command()
def simulate(
    config_file: Optional[Path] = ConfigOption,
    seed: Optional[int] = SeedOption,
    replicates: Optional[int] = ReplicatesOption,
    jobs: Optional[int] = JobsOption,
    out: Optional[Path] = OutOption,
):
    """Generate worlds, registers and the census, then step through the epochs."""
    _run_stage(PipelineStep.SIMULATE, config_file, seed, replicates, jobs, out)


@app.command()
def initiate(
    config_file: Optional[Path] = ConfigOption,
    seed: Optional[int] = SeedOption,
    replicates: Optional[int] = ReplicatesOption,
    jobs: Optional[int] = JobsOption,
    out: Optional[Path] = OutOption,
):
    """Fit the census-year models and initiate the counters."""
    _run_stage(PipelineStep.INITIATE, config_file, seed, replicates, jobs, out)


@app.command()
def roll(
    config_file: Optional[Path] = ConfigOption,
    seed: Optional[int] = SeedOption,
    replicates: Optional[int] = ReplicatesOption,
    jobs: Optional[int] = JobsOption,
    out: Optional[Path] = OutOption,
):
    """Roll models, counters and the tree through the post-census epochs."""
    _run_stage(PipelineStep.ROLL, config_file, seed, replicates, jobs, out)


@app.command()
def count(
    config_file: Optional[Path] = ConfigOption,
    seed: Optional[int] = SeedOption,
    replicates: Optional[int] = ReplicatesOption,
    jobs: Optional[int] = JobsOption,
    out: Optional[Path] = OutOption,
):
    """Count the localities with every method at every epoch."""
    _run_stage(PipelineStep.COUNT, config_file, seed, replicates, jobs, out)


@app.command()
def audit(
    config_file: Optional[Path] = ConfigOption,
    seed: Optional[int] = SeedOption,
    replicates: Optional[int] = ReplicatesOption,
    jobs: Optional[int] = JobsOption,
    out: Optional[Path] = OutOption,
):
    """Audit the model-based statistic with a probability sample at every epoch."""
    _run_stage(PipelineStep.AUDIT, config_file, seed, replicates, jobs, out)


@app.command()
def report(
    run_dir: Path = typer.Argument(..., help="Directory of a completed count run"),
    out: Optional[Path] = typer.Option(None, "--out", "-o", help="Report file (default: RUN_DIR/report.csv)"),
    level: float = typer.Option(0.95, "--level", help="Nominal coverage of the variance-based intervals"),
):
    """Summarise per-replicate counts: bias, MC SE, RMSE and coverage."""
    try:
        manifest = read_manifest(run_dir)
        counts, config_hash = read_table(run_dir / "counts.csv")
        summary = summarise(counts, level)
        target = out or run_dir / "report.csv"
        write_table(summary, target, config_hash)
    except RUNTIME_ERRORS as e:
        _fail(type(e).__name__, str(e), EXIT_RUNTIME_ERROR)

    console.print(f"[green]✓[/green] Report over {manifest.replicates} replicates written to {target}")
    _display_frame(summary, f"Report: {manifest.scenario}",
                   ["method", "locality_id", "epoch", "bias", "mc_se", "rmse", "coverage"])


@app.command()
def compare(
    run_dirs: List[Path] = typer.Argument(..., help="Two or more completed run directories"),
    out: Optional[Path] = typer.Option(None, "--out", "-o", help="Comparison CSV file"),
):
    """Compare bias and RMSE of every method across runs of one scenario."""
    try:
        table = compare_methods(run_dirs)
        if out:
            write_table(table, out, read_manifest(run_dirs[0]).config_hash)
    except RUNTIME_ERRORS as e:
        _fail(type(e).__name__, str(e), EXIT_RUNTIME_ERROR)

    if out:
        console.print(f"[green]✓[/green] Comparison of {len(run_dirs)} runs written to {out}")
    _display_frame(table, "Method comparison", list(table.columns))


@app.command()
def experiment(
    name: Optional[str] = typer.Argument(None, help="Experiment name"),
    config_file: Optional[Path] = ConfigOption,
    seed: Optional[int] = SeedOption,
    replicates: Optional[int] = ReplicatesOption,
    out: Optional[Path] = typer.Option(None, "--out", "-o", help="CSV file for the experiment table"),
    list_all: bool = typer.Option(False, "--list", help="List available experiments"),
):
    """Run a Monte-Carlo acceptance experiment."""
    if list_all or name is None:
        table = Table(title="Experiments")
        table.add_column("Name", style="cyan")
        table.add_column("Replicates", style="yellow")
        table.add_column("Checks", style="white")
        for key in experiments.available():
            exp = experiments.get(key)
            table.add_row(exp.name, str(exp.default_replicates), exp.description)
        console.print(table)
        return

    try:
        config = _load_config(config_file)
    except (ConfigurationError, FileNotFoundError, ImportError) as e:
        _fail("config", str(e), EXIT_CONFIG_ERROR)

    console.print(f"[bold blue]Running experiment {name}...[/bold blue]")
    try:
        result = experiments.run(name, config, replicates, seed, progress=True)
        if out and result.table is not None:
            write_table(result.table, out, config.config_hash())
    except RUNTIME_ERRORS as e:
        _fail(type(e).__name__, str(e), EXIT_RUNTIME_ERROR)

    metrics = Table(show_header=False, box=None)
    metrics.add_column("Metric", style="cyan")
    metrics.add_column("Value", style="green")
    for key, value in result.metrics.items():
        metrics.add_row(key, f"{value:.6g}")
    console.print(metrics)

    if result.passed:
        console.print(f"[green]✓ {name} passed[/green] {result.message}")
    else:
        console.print(f"[red]✗ {name} failed[/red] {result.message}")
        raise typer.Exit(1)


@app.command()
def config(
    show: bool = typer.Option(False, "--show", help="Show current configuration"),
    validate_config: bool = typer.Option(False, "--validate", help="Validate configuration file"),
    config_file: Optional[Path] = ConfigOption,
):
    """Manage simulator configuration."""
    if not (show or validate_config):
        console.print("Use --show to display configuration or --validate to check it.")
        return

    try:
        cfg = PipelineConfig.from_file(config_file) if config_file else _load_config(None)
    except (ConfigurationError, FileNotFoundError, ImportError) as e:
        _fail("config", str(e), EXIT_CONFIG_ERROR)

    if show:
        _display_config(cfg)

    if validate_config:
        errors = cfg.validate()
        if errors:
            console.print("[red]Configuration validation errors:[/red]")
            for error in errors:
                console.print(f"  • {error}")
            raise typer.Exit(1)
        console.print("[green]✓ Configuration is valid[/green]")
        console.print(f"[dim]config_hash={cfg.config_hash()}[/dim]")


@app.command()
def version():
    """Show version information."""
    console.print("[bold]Fractional counting simulator[/bold]")
    console.print(f"Version: {__version__}")
    console.print("Python: " + sys.version.split()[0])

    deps_status = []
    for module_name, label in (("numpy", "NumPy"), ("scipy", "SciPy"), ("pandas", "pandas"),
                               ("toml", "toml"), ("typer", "Typer"), ("tqdm", "tqdm")):
        try:
            module = __import__(module_name)
            deps_status.append((label, getattr(module, "__version__", "Unknown"), "✓"))
        except ImportError:
            deps_status.append((label, "Not installed", "✗"))

    try:
        import importlib.metadata
        deps_status.append(("Rich", importlib.metadata.version("rich"), "✓"))
    except Exception:
        deps_status.append(("Rich", "Unknown", "✗"))

    console.print("\n[bold]Dependencies:[/bold]")
    table = Table(show_header=False)
    table.add_column("Status", width=3)
    table.add_column("Package", style="cyan")
    table.add_column("Version", style="green")
    for name, dep_version, status in deps_status:
        color = "green" if status == "✓" else "red"
        table.add_row(f"[{color}]{status}[/{color}]", name, str(dep_version))
    console.print(table)


def _display_outputs(tables, config_hash: str) -> None:
    """Display the written tables and their sizes."""
    table = Table(title="Outputs")
    table.add_column("Table", style="cyan")
    table.add_column("Rows", style="green")
    for name, frame in tables.items():
        table.add_row(f"{name}.csv", str(len(frame)))
    console.print(table)
    console.print(f"[dim]config_hash={config_hash}[/dim]")


def _display_frame(frame, title: str, columns: List[str], limit: int = 20) -> None:
    """Display the first rows of a data frame."""
    table = Table(title=title)
    for column in columns:
        table.add_column(column, style="cyan" if column == "method" else "white")
    for row in frame[columns].head(limit).itertuples(index=False):
        table.add_row(*[f"{v:.4g}" if isinstance(v, float) else str(v) for v in row])
    console.print(table)
    if len(frame) > limit:
        console.print(f"[dim]... {len(frame) - limit} more rows[/dim]")


def _display_config(config: PipelineConfig) -> None:
    """Display configuration in a formatted table, one block per section."""
    table = Table(title="Fractional Counting Configuration")
    table.add_column("Setting", style="cyan")
    table.add_column("Value", style="green")

    for section, values in config.to_dict().items():
        for key, value in values.items():
            table.add_row(f"{section}.{key}", str(value))

    console.print(table)


if __name__ == "__main__":
    app()
