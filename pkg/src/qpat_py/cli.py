"""Command-line interface for qpat-py.

This module requires optional CLI dependencies (typer, rich).
Install with: pip install qpat-py[cli]
"""

import logging
from contextlib import contextmanager
from pathlib import Path
from typing import Iterator, List, Optional

# Check for optional CLI dependencies
try:
    import typer
    from rich.console import Console
    from rich.logging import RichHandler
    from rich.table import Table

    CLI_AVAILABLE = True
except ImportError:
    CLI_AVAILABLE = False

EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_ACCEPTANCE = 4


def _check_cli_dependencies():
    """Raise error if CLI dependencies are not installed."""
    if not CLI_AVAILABLE:
        raise ImportError("CLI dependencies not installed. Install with: pip install qpat-py[cli]")


# Only define CLI if dependencies are available
if CLI_AVAILABLE:
    from pydantic import BaseModel, ValidationError

    from qpat_py import __version__
    from qpat_py.errors import (
        ConfigurationError,
        GeometryError,
        PhantomSpecError,
        QpatError,
        StageError,
    )
    from qpat_py.experiments import (
        EXPERIMENTS,
        SyntheticCase,
        flatness_experiment,
        psi_decay_experiment,
        reconstruction_errors,
        stability_sweep,
        synthesize_case,
    )
    from qpat_py.grid import ComplexField, boundary_trace
    from qpat_py.internal_data import add_noise
    from qpat_py.models import ExperimentReport, MaskConfig, RunConfig
    from qpat_py.parser import parse_config, read_internal_data, read_report
    from qpat_py.phantom import class_norms, make_phantom
    from qpat_py.pipeline import ReconResult, liouville_forward, run_multi_data, run_two_data
    from qpat_py.writer import (
        write_boundary,
        write_config,
        write_field,
        write_internal_data,
        write_manifest,
        write_path_dump,
        write_recon_result,
        write_report,
    )

    app = typer.Typer(
        name="qpat",
        help="Quantitative photoacoustic reconstruction of (D, σ_a) from internal data",
        add_completion=False,
    )
    console = Console()

    class CLIOptions(BaseModel):
        """Global flags shared by every subcommand."""

        config: Optional[Path] = None
        out: Path = Path("qpat-out")
        seed: Optional[int] = None
        resolution: Optional[int] = None
        kmag: Optional[float] = None
        mask: Optional[str] = None

        def load(self) -> RunConfig:
            """Read the config file (or defaults) and apply the flag overrides."""
            cfg = parse_config(self.config) if self.config else RunConfig()
            return apply_overrides(cfg, self.seed, self.resolution, self.kmag, self.mask)

    def apply_overrides(
        cfg: RunConfig,
        seed: Optional[int] = None,
        resolution: Optional[int] = None,
        kmag: Optional[float] = None,
        mask: Optional[str] = None,
    ) -> RunConfig:
        """Return a copy of ``cfg`` with the command-line overrides applied and revalidated."""
        data = cfg.model_dump()
        if seed is not None:
            data["seed"] = seed
        if resolution is not None:
            data["phantom"]["resolution"] = resolution
            data["potential"]["resolution"] = resolution
        if kmag is not None:
            data["cgo"]["kmag"] = kmag
        if mask is not None:
            try:
                parsed = MaskConfig.parse(mask).model_dump()
            except ValueError as e:
                raise ConfigurationError(str(e)) from e
            data["phantom"]["mask"] = parsed
            data["potential"]["mask"] = parsed
        return RunConfig.model_validate(data)

    def exit_code_for(error: BaseException) -> int:
        """2 for configuration problems, 3 for numerical failures."""
        if isinstance(error, StageError):
            return EXIT_CONFIG if error.is_configuration else EXIT_NUMERICAL
        if isinstance(
            error,
            (ConfigurationError, PhantomSpecError, GeometryError, ValidationError,
             FileNotFoundError),
        ):
            return EXIT_CONFIG
        return EXIT_NUMERICAL

    @contextmanager
    def handled(action: str) -> Iterator[None]:
        """Print library errors and exit with the mapped code."""
        try:
            yield
        except (QpatError, ValidationError, FileNotFoundError) as e:
            console.print(f"[bold red]✗ {action} failed:[/bold red] {e}")
            raise typer.Exit(code=exit_code_for(e))

    def version_callback(value: bool) -> None:
        """Print version and exit."""
        if value:
            console.print(f"qpat-py version: {__version__}")
            raise typer.Exit()

    @app.callback()
    def main(
        ctx: typer.Context,
        config: Optional[Path] = typer.Option(
            None, "--config", "-c", help="Run configuration ([section] key = value)",
            exists=True, dir_okay=False, readable=True,
        ),
        out: Path = typer.Option(Path("qpat-out"), "--out", "-o", help="Output directory"),
        seed: Optional[int] = typer.Option(None, "--seed", min=0, help="Random seed"),
        resolution: Optional[int] = typer.Option(
            None, "--resolution", "-n", min=5, help="Nodes per side"
        ),
        kmag: Optional[float] = typer.Option(
            None, "--kmag", "-k", help="Domain-scaled CGO frequency |κ|"
        ),
        mask: Optional[str] = typer.Option(None, "--mask", help="rect or disk:<radius>"),
        version: Optional[bool] = typer.Option(
            None,
            "--version",
            "-v",
            help="Show version and exit",
            callback=version_callback,
            is_eager=True,
        ),
        verbose: bool = typer.Option(
            False,
            "--verbose",
            "-V",
            help="Enable verbose logging",
        ),
    ) -> None:
        """Quantitative photoacoustic reconstruction toolkit."""
        log_level = logging.DEBUG if verbose else logging.INFO
        logging.basicConfig(
            level=log_level,
            format="%(message)s",
            handlers=[RichHandler(console=console, rich_tracebacks=True)],
        )
        ctx.obj = CLIOptions(
            config=config, out=out, seed=seed, resolution=resolution, kmag=kmag, mask=mask
        )

    def _options(ctx: typer.Context) -> "CLIOptions":
        return ctx.obj if isinstance(ctx.obj, CLIOptions) else CLIOptions()

    # ------------------------------------------------------------------ commands

    @app.command()
    def phantom(ctx: typer.Context) -> None:
        """Build the configured phantom and write D, σ_a, q and μ as PFG fields."""
        opts = _options(ctx)
        with handled("Phantom"):
            cfg = opts.load()
            ph = make_phantom(cfg.phantom)
            truth = liouville_forward(ph.D, ph.sigma_a)
            out = opts.out
            for name, field in (("D", ph.D), ("sigma_a", ph.sigma_a), ("q", truth.q),
                                ("mu", truth.mu)):
                write_field(field, out / f"{name}.pfg")
            norms = class_norms(ph)
            write_manifest(
                {"config_hash": cfg.config_hash(), "mask": cfg.phantom.mask.label,
                 "r0": ph.mask.satisfies_r0, **norms},
                out / "manifest.txt",
                comment="phantom",
            )
            write_config(cfg, out / "config.txt")
        console.print(f"[bold green]✓[/bold green] Phantom written to: {out}")
        _print_mapping("Phantom norms", norms)

    @app.command()
    def cgo(ctx: typer.Context) -> None:
        """Construct the CGO solutions of the phantom's potential and write u, ψ and traces."""
        opts = _options(ctx)
        with handled("CGO construction"):
            cfg = opts.load()
            case = synthesize_case(cfg)
            out = opts.out
            s = case.mask.arclength()
            residuals = {}
            for k, sol in enumerate(case.solutions):
                write_field(sol.u, out / f"u_{k}.pfg")
                write_field(ComplexField(grid=sol.u.grid, values=sol.psi_on_grid()),
                            out / f"psi_{k}.pfg")
                write_boundary(sol.trace, s, out / f"g_{k}.pfgb")
                residuals[f"residual_{k}"] = sol.residual_norm
            write_manifest(
                {"config_hash": cfg.config_hash(), "kmag": cfg.cgo.kmag, "route": cfg.route,
                 **residuals},
                out / "manifest.txt",
                comment="cgo solutions",
            )
        console.print(f"[bold green]✓[/bold green] {len(case.solutions)} CGO solutions "
                      f"written to: {out}")
        _print_mapping("CGO residuals", residuals)

    @app.command()
    def forward(ctx: typer.Context) -> None:
        """Solve the diffusion problem for the CGO illuminations and write u and g."""
        opts = _options(ctx)
        with handled("Forward solve"):
            cfg = opts.load()
            case = synthesize_case(cfg)
            out = opts.out
            s = case.mask.arclength()
            sigma = case.phantom.sigma_a.values
            for k, (d, g) in enumerate(zip(case.data.data, case.data.illuminations)):
                write_field(d.with_values(d.values / sigma), out / f"u_{k}.pfg")
                write_boundary(g, s, out / f"g_{k}.pfgb")
            write_config(cfg, out / "config.txt")
        console.print(f"[bold green]✓[/bold green] {len(case.data)} forward solutions "
                      f"written to: {out}")

    @app.command()
    def synthesize(ctx: typer.Context) -> None:
        """Write internal data d = σ_a·u (noisy when ``[noise] level`` is set)."""
        opts = _options(ctx)
        with handled("Synthesis"):
            cfg = opts.load()
            case = synthesize_case(cfg)
            data = add_noise(
                case.data,
                cfg.noise.level,
                cfg.noise.corr_width_cells * case.mask.grid.h,
                seed=cfg.seed,
                where=case.mask.inside,
                weighting=cfg.noise.weighting,
            )
            write_internal_data(data, case.mask, opts.out / "data")
            write_config(cfg, opts.out / "config.txt")
        console.print(f"[bold green]✓[/bold green] Internal data ({data.provenance}) "
                      f"written to: {opts.out / 'data'}")

    def _reconstruct(
        ctx: typer.Context, route: str, data_dir: Optional[Path], dump_paths: bool = False
    ) -> None:
        opts = _options(ctx)
        with handled("Reconstruction"):
            cfg = opts.load()
            ph = make_phantom(cfg.phantom)
            truth = liouville_forward(ph.D, ph.sigma_a)
            sqrtD_b = boundary_trace(truth.sqrtD, ph.mask)
            if data_dir is not None:
                data = read_internal_data(data_dir)
            else:
                data = synthesize_case(cfg, route, phantom=ph).data
            if route == "two-data":
                result = run_two_data(data, sqrtD_b, ph.mask, cfg.recon, record_paths=dump_paths)
            else:
                result = run_multi_data(data, sqrtD_b, ph.mask, cfg.recon)
            case = SyntheticCase(phantom=ph, truth=truth, data=data, solutions=[])
            errors = reconstruction_errors(result, case)
            extra = {"config_hash": cfg.config_hash(), "provenance": data.provenance}
            extra.update({f"{k}_sup_error": v[0] for k, v in errors.items()})
            write_recon_result(result, opts.out / "recon", extra)
            if result.sweep is not None:
                write_path_dump(result.sweep, opts.out / "recon" / "paths.csv")
        console.print(f"[bold green]✓[/bold green] Reconstruction written to: "
                      f"{opts.out / 'recon'}")
        _print_recon_summary(result, errors)

    @app.command("recon-two")
    def recon_two(
        ctx: typer.Context,
        data: Optional[Path] = typer.Option(
            None, "--data", "-d", help="Internal data directory (default: synthesize)",
            exists=True, file_okay=False,
        ),
        dump_paths: bool = typer.Option(
            False, "--dump-paths", help="Also write every traced characteristic to recon/paths.csv"
        ),
    ) -> None:
        """Reconstruct from one complex datum via the transport equation."""
        _reconstruct(ctx, "two-data", data, dump_paths)

    @app.command("recon-multi")
    def recon_multi(
        ctx: typer.Context,
        data: Optional[Path] = typer.Option(
            None, "--data", "-d", help="Internal data directory (default: synthesize)",
            exists=True, file_okay=False,
        ),
    ) -> None:
        """Reconstruct from two complex data via the gradient equation for μ."""
        _reconstruct(ctx, "multi-data", data)

    def _write_and_show(report: ExperimentReport, out: Path) -> None:
        write_report(report, out)
        console.print(f"[bold green]✓[/bold green] Report '{report.name}' written to: {out}")
        _print_report(report)

    @app.command("sweep-stability")
    def sweep_stability(ctx: typer.Context) -> None:
        """Noise sweep: reconstruction deviation against the data perturbation norm."""
        opts = _options(ctx)
        with handled("Stability sweep"):
            cfg = opts.load()
            report = stability_sweep(cfg)
        _write_and_show(report, opts.out / "stability")

    @app.command("sweep-flatness")
    def sweep_flatness(ctx: typer.Context) -> None:
        """Flatness gap of β against |κ|."""
        opts = _options(ctx)
        with handled("Flatness sweep"):
            cfg = opts.load()
            report = flatness_experiment(cfg)
        _write_and_show(report, opts.out / "flatness")

    @app.command("sweep-psi")
    def sweep_psi(
        ctx: typer.Context,
        born: bool = typer.Option(False, "--born", help="Sum the Born series instead"),
    ) -> None:
        """Decay of the CGO remainder ψ against |κ|."""
        opts = _options(ctx)
        with handled("ψ sweep"):
            cfg = opts.load()
            report = psi_decay_experiment(cfg, method="born" if born else "direct")
        _write_and_show(report, opts.out / "psi_decay")

    @app.command()
    def report(
        ctx: typer.Context,
        reports: Optional[List[Path]] = typer.Argument(
            None, help="Report directories written by the sweep commands"
        ),
        run: Optional[List[str]] = typer.Option(
            None, "--run", "-r", help=f"Run experiments first: {', '.join(EXPERIMENTS)}"
        ),
    ) -> None:
        """Summarize reports; exit 4 when an acceptance check fails."""
        opts = _options(ctx)
        collected: List[ExperimentReport] = []
        with handled("Report"):
            if run:
                cfg = opts.load()
                for name in run:
                    if name not in EXPERIMENTS:
                        raise ConfigurationError(
                            f"unknown experiment {name!r}; choose from {', '.join(EXPERIMENTS)}"
                        )
                    rep = EXPERIMENTS[name](cfg)
                    write_report(rep, opts.out / name)
                    collected.append(rep)
            for d in reports or []:
                collected.append(read_report(d))
        if not collected:
            console.print("[yellow]⚠[/yellow] No reports given")
            raise typer.Exit(code=EXIT_CONFIG)
        for rep in collected:
            _print_report(rep)
        failed = [rep.name for rep in collected if not rep.passed]
        if failed:
            console.print(f"[bold red]✗ Acceptance failed:[/bold red] {', '.join(failed)}")
            raise typer.Exit(code=EXIT_ACCEPTANCE)
        console.print(f"[bold green]✓[/bold green] All {len(collected)} reports pass")

    # ------------------------------------------------------------------ output

    def _print_mapping(title: str, items: dict) -> None:
        table = Table(title=title, show_header=True)
        table.add_column("Key", style="cyan")
        table.add_column("Value", justify="right")
        for key, value in items.items():
            table.add_row(key, f"{value:.6g}" if isinstance(value, float) else str(value))
        console.print(table)

    def _print_recon_summary(result: "ReconResult", errors: dict) -> None:
        """Print relative errors against the configured phantom."""
        table = Table(title=f"Reconstruction ({result.route})", show_header=True)
        table.add_column("Quantity", style="cyan")
        table.add_column("Sup error", justify="right")
        table.add_column("C1 error", justify="right")
        for name, (e_sup, e_c1) in errors.items():
            table.add_row(name, f"{e_sup:.3e}", f"{e_c1:.3e}")
        console.print(table)
        for w in result.warnings:
            console.print(f"[yellow]⚠[/yellow] {w}")

    def _print_report(rep: "ExperimentReport") -> None:
        """Print fits and acceptance flags of one report."""
        table = Table(title=f"{rep.name} ({rep.config_hash})", show_header=True)
        table.add_column("Check", style="cyan")
        table.add_column("Value", justify="right")
        table.add_column("Status", justify="center")
        for key, value in rep.fits.items():
            table.add_row(key, f"{value:.4g}", "[dim]○[/dim]")
        for key, ok in rep.acceptance.items():
            table.add_row(key, "", "[green]✓[/green]" if ok else "[red]✗[/red]")
        console.print(table)
        console.print(f"  rows: {len(rep.rows)}, R0 mask: {rep.r0}, runtime {rep.runtime_s:.1f}s")

else:
    # Stub app when CLI dependencies are not available
    def app():
        """Raise error when CLI is not available."""
        _check_cli_dependencies()


if __name__ == "__main__":
    _check_cli_dependencies()
    app()
