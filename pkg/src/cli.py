"""Command-line adapter for the LIS capacity simulator."""

from __future__ import annotations

import json
import logging
import os
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import click
import pandas as pd
import structlog
from dotenv import load_dotenv
from pydantic import ValidationError

_SRC = Path(__file__).resolve().parent
if str(_SRC) not in sys.path:
    sys.path.insert(0, str(_SRC))

load_dotenv(_SRC.parent / ".env")

from capacity import (  # noqa: E402
    CapacityReport,
    dims_1d,
    dims_2d,
    line_sweep,
    plane_sweep,
)
from experiments import (  # noqa: E402
    ExperimentConfig,
    MonteCarloPreset,
    figure_preset,
    run_experiment,
    run_preset,
    sample_deployment,
    write_json,
)
from fields import SurfaceSpec, Terminal  # noqa: E402
from gram import build_gram, effective_rank  # noqa: E402
from quadrature import QuadratureBudgetError, approximation_audit  # noqa: E402
from run_config import ConfigError, RunConfig, resolve_run_config  # noqa: E402

logger = structlog.get_logger(__name__)

EXIT_INVALID = 2
EXIT_BUDGET = 3
EXIT_IO = 4
FLOAT_FORMAT = "%.10g"


def configure_logging(verbose: bool = False) -> None:
    """Key-value console logs on stderr; stdout stays reserved for the one-line summary."""
    name = "DEBUG" if verbose else os.getenv("LIS_LOG_LEVEL", "WARNING").upper()
    level = getattr(logging, name, logging.WARNING)
    structlog.configure(
        processors=[
            structlog.processors.add_log_level,
            structlog.processors.TimeStamper(fmt="iso"),
            structlog.dev.ConsoleRenderer(colors=False),
        ],
        wrapper_class=structlog.make_filtering_bound_logger(level),
        logger_factory=structlog.PrintLoggerFactory(file=sys.stderr),
        cache_logger_on_first_use=False,
    )


def error_record(err: BaseException, exit_code: int) -> str:
    return json.dumps({"error": type(err).__name__, "message": str(err), "exit_code": exit_code}, sort_keys=True)


class LisGroup(click.Group):
    """Maps domain exceptions to exit codes with a JSON error record on stderr."""

    def invoke(self, ctx: click.Context) -> Any:
        try:
            result = super().invoke(ctx)
            logger.info("cli.done", command=ctx.invoked_subcommand)
            return result
        except (click.exceptions.Exit, click.exceptions.Abort, click.ClickException):
            raise
        except QuadratureBudgetError as err:
            self._fail(ctx, err, EXIT_BUDGET)
        except (ValidationError, ValueError) as err:
            self._fail(ctx, err, EXIT_INVALID)
        except OSError as err:
            self._fail(ctx, err, EXIT_IO)

    @staticmethod
    def _fail(ctx: click.Context, err: BaseException, code: int) -> None:
        logger.error("cli.failed", error=type(err).__name__, exit_code=code)
        click.echo(error_record(err, code), err=True)
        ctx.exit(code)


def common_options(func):
    func = click.option("--units", type=click.Choice(["nats", "bits"]), default=None, help="Display units for printed capacities.")(func)
    func = click.option("--threads", type=click.IntRange(min=1), envvar="LIS_THREADS", default=None, help="Worker cap (env LIS_THREADS).")(func)
    func = click.option("--out", type=click.Path(path_type=Path, file_okay=False), default=None, help="Output directory.")(func)
    func = click.option("--config", "config_path", type=click.Path(path_type=Path, dir_okay=False), default=None, help="Flat YAML run config; flags override it.")(func)
    return func


def _shown(report: CapacityReport, units: str) -> CapacityReport:
    return report.in_bits() if units == "bits" else report


def _echo_config(run: RunConfig) -> Dict[str, Any]:
    return run.model_dump()


def _floats(text: Optional[str]) -> Optional[List[float]]:
    if text is None:
        return None
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as err:
        raise click.BadParameter(f"expected comma-separated numbers, got {text!r}") from err


@click.group(cls=LisGroup)
@click.option("--verbose", is_flag=True, help="Debug logging on stderr.")
@click.pass_context
def cli(ctx: click.Context, verbose: bool) -> None:
    """LIS capacity simulator: closed forms, quadrature oracles and Monte-Carlo deployments."""
    configure_logging(verbose)
    # the renderer holds this invocation's stderr
    ctx.call_on_close(structlog.reset_defaults)


@cli.command("sinc-audit")
@click.option("--z", type=float, default=None, help="Terminal distance to the surface (m).")
@click.option("--lambda", "lam", type=float, default=None, help="Wavelength (m).")
@click.option("--grid-start", type=float, default=None)
@click.option("--grid-stop", type=float, default=None)
@click.option("--grid-points", type=int, default=None)
@click.option("--rel-tol", type=float, default=None)
@common_options
def sinc_audit(config_path: Optional[Path], **flags: Any) -> None:
    """Numerical line correlation against the sinc model."""
    run = resolve_run_config(config_path, flags)
    if run.z is None or run.lam is None:
        raise ConfigError("sinc-audit needs both z and lambda.")
    report = approximation_audit(run.z, run.lam, run.audit_grid(), run.quadrature())
    run.out.mkdir(parents=True, exist_ok=True)
    report.write_csv(run.out / "sinc_audit.csv")
    write_json(
        run.out / "sinc_audit_summary.json",
        {
            "config": _echo_config(run),
            "peak": report.peak,
            "max_abs_deviation": report.max_abs_deviation,
            "rms_deviation": report.rms_deviation,
            "null_locations": report.null_locations,
            "null_offsets": report.null_offsets,
        },
    )
    nulls = " ".join(f"{v:.6g}" for v in report.null_locations)
    click.echo(
        f"sinc-audit: points={len(report.table)} max_dev={report.max_abs_deviation:.3e} "
        f"rms_dev={report.rms_deviation:.3e} nulls=[{nulls}]"
    )


def _read_terminals(path: Path, default_power: float) -> List[Terminal]:
    frame = pd.read_csv(path)
    missing = {"x", "y", "z"} - set(frame.columns)
    if missing:
        raise ConfigError(f"{path} is missing column(s): {', '.join(sorted(missing))}.")
    powers = frame["power"] if "power" in frame.columns else pd.Series(default_power, index=frame.index)
    return [Terminal(float(r.x), float(r.y), float(r.z), float(p)) for r, p in zip(frame.itertuples(), powers)]


@cli.command("gram")
@click.option("--terminals", type=click.Path(path_type=Path, dir_okay=False), default=None, help="CSV with x, y, z[, power].")
@click.option("--geometry", type=click.Choice(["line", "plane", "cube"]), default=None, help="Sample one deployment instead.")
@click.option("--dims", type=str, default=None, help="Comma-separated geometry size (m).")
@click.option("--density", type=float, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--z", type=float, default=None)
@click.option("--lambda", "lam", type=float, default=None)
@click.option("--surface-a", type=float, default=None)
@click.option("--surface-b", type=float, default=None)
@click.option("--power", type=float, default=None)
@click.option("--mode", "gram_mode", type=click.Choice(["auto", "numeric", "sinc-approx"]), default=None)
@click.option("--threshold", type=float, default=None)
@click.option("--rel-tol", type=float, default=None)
@common_options
def gram_cmd(config_path: Optional[Path], dims: Optional[str], **flags: Any) -> None:
    """Build a Gram matrix and write it in the 'K lambda mode' / 'i j re im' text format."""
    flags["dims"] = _floats(dims)
    run = resolve_run_config(config_path, flags)
    if run.lam is None:
        raise ConfigError("gram needs lambda.")
    surface = SurfaceSpec(run.surface_a, run.surface_b)
    if run.terminals is not None:
        terminals = _read_terminals(run.terminals, run.power if run.power is not None else 1.0)
        volume = None
    else:
        if run.geometry is None or run.dims is None or run.density is None:
            raise ConfigError("gram needs --terminals, or geometry, dims and density to sample a deployment.")
        experiment = ExperimentConfig(
            geometry=run.geometry,
            dims=run.dims,
            density=run.density,
            surface_a=run.surface_a,
            surface_b=run.surface_b,
            lam=run.lam,
            n0=run.n0 if run.n0 is not None else 1.0,
            power_mode="per_terminal",
            power=run.power if run.power is not None else 1.0,
            trials=1,
            base_seed=run.seed or 0,
            z0=run.z,
        )
        terminals = list(sample_deployment(experiment, 0).terminals)
        volume = experiment.volume
    if not terminals:
        raise ConfigError("The deployment has no terminals.")
    mode = run.gram_mode
    if mode == "auto":
        mode = "sinc-approx" if surface.is_infinite and len({t.z for t in terminals}) == 1 else "numeric"
    g = build_gram(terminals, surface, run.lam, run.quadrature(), mode)
    dim = effective_rank(g, run.threshold, volume)
    eig = g.eigenvalues()
    run.out.mkdir(parents=True, exist_ok=True)
    (run.out / "gram.txt").write_text(g.to_text(), encoding="utf-8")
    write_json(
        run.out / "gram_summary.json",
        {
            "config": _echo_config(run),
            "K": g.size,
            "mode": mode,
            "effective_rank": dim.effective_rank,
            "density": dim.density,
            "min_eigenvalue": float(eig[0]),
            "max_eigenvalue": float(eig[-1]),
        },
    )
    click.echo(f"gram: K={g.size} mode={mode} eff_rank={dim.effective_rank} max_eig={float(eig[-1]):.6g}")


@cli.command("capacity-1d")
@click.option("--lambda", "lam", type=float, default=None)
@click.option("--delta-x", type=float, default=None)
@click.option("--theta", type=float, default=None)
@click.option("--nu", type=float, default=None)
@click.option("--n0", type=float, default=None)
@click.option("--pbar", "p_bar", type=float, default=None, help="Power per meter.")
@click.option("--power", type=float, default=None, help="Power per terminal.")
@common_options
def capacity_1d_cmd(config_path: Optional[Path], **flags: Any) -> None:
    """Optimal and MF capacities of equi-spaced terminals on a line."""
    run = resolve_run_config(config_path, flags)
    line = run.line()
    table = line_sweep([(line.lam, line.delta_x)], nu=line.nu, n0=line.n0, p_bar=line.per_terminal_power / line.delta_x)
    run.out.mkdir(parents=True, exist_ok=True)
    table.to_csv(run.out / "capacity_1d.csv", index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    row = table.iloc[0]
    write_json(run.out / "capacity_1d_summary.json", {"config": _echo_config(run), **{k: float(v) for k, v in row.items()}})
    opt = _shown(CapacityReport("optimal", per_user=row["c_opt"], space_normalized=row["c_bar_opt"]), run.units)
    mf = _shown(CapacityReport("mf", per_user=row["c_mf"], space_normalized=row["c_bar_mf"]), run.units)
    click.echo(
        f"capacity-1d: theta={row['theta']:.6g} c_opt={opt.per_user:.6g} c_mf={mf.per_user:.6g} "
        f"c_bar_opt={opt.space_normalized:.6g} c_bar_mf={mf.space_normalized:.6g} [{opt.units}]"
    )


@cli.command("capacity-2d")
@click.option("--lambda", "lam", type=float, default=None)
@click.option("--pbar", "p_bar", type=float, default=None, help="Power per m^2.")
@click.option("--n0", type=float, default=None)
@common_options
def capacity_2d_cmd(config_path: Optional[Path], **flags: Any) -> None:
    """Space-normalized capacity of a dense plane deployment and its high-SNR slope."""
    run = resolve_run_config(config_path, flags)
    if run.lam is None or run.p_bar is None or run.n0 is None:
        raise ConfigError("capacity-2d needs lambda, pbar and n0.")
    table = plane_sweep([run.lam], [run.p_bar / run.n0], run.slope_grid)
    run.out.mkdir(parents=True, exist_ok=True)
    table.to_csv(run.out / "capacity_2d.csv", index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    row = table.iloc[0]
    write_json(
        run.out / "capacity_2d_summary.json",
        {"config": _echo_config(run), "dims_2d": dims_2d(run.lam), **{k: float(v) for k, v in row.items()}},
    )
    report = _shown(CapacityReport("optimal", space_normalized=row["c_bar_2d"], units="nats/s/Hz/m^2"), run.units)
    click.echo(
        f"capacity-2d: c_bar={report.space_normalized:.6g} [{report.units}] "
        f"slope={row['slope']:.6g} dims={dims_2d(run.lam):.6g}"
    )


@cli.command("dims")
@click.option("--lambda", "lam", type=float, default=None)
@click.option("--geometry", type=click.Choice(["line", "plane", "cube"]), default=None)
@click.option("--theta", type=float, default=None)
@common_options
def dims_cmd(config_path: Optional[Path], **flags: Any) -> None:
    """Signal dimensions per meter (line) or per m^2 of deployed surface (plane, cube)."""
    run = resolve_run_config(config_path, flags)
    if run.lam is None or run.geometry is None:
        raise ConfigError("dims needs lambda and geometry.")
    if run.geometry == "line":
        value, unit = dims_1d(run.lam, run.theta if run.theta is not None else 1.0), "per m"
    else:
        value, unit = dims_2d(run.lam), "per m^2"
    run.out.mkdir(parents=True, exist_ok=True)
    write_json(run.out / "dims_summary.json", {"config": _echo_config(run), "dims": value, "unit": unit})
    click.echo(f"dims: {value:.5g} {unit}")


@cli.command("simulate")
@click.option("--geometry", type=click.Choice(["line", "plane", "cube"]), default=None)
@click.option("--dims", type=str, default=None, help="Comma-separated geometry size (m).")
@click.option("--density", type=float, default=None)
@click.option("--lambda", "lam", type=float, default=None)
@click.option("--n0", type=float, default=None)
@click.option("--pbar", "p_bar", type=float, default=None)
@click.option("--power", type=float, default=None)
@click.option("--power-mode", type=click.Choice(["per_terminal", "per_volume"]), default=None)
@click.option("--receiver", type=click.Choice(["optimal", "mf"]), default=None, help="Receiver reported on stdout and in the summary.")
@click.option("--surface-a", type=float, default=None)
@click.option("--surface-b", type=float, default=None)
@click.option("--z", type=float, default=None)
@click.option("--trials", type=int, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--mode", "gram_mode", type=click.Choice(["auto", "numeric", "sinc-approx"]), default=None)
@common_options
def simulate_cmd(config_path: Optional[Path], dims: Optional[str], **flags: Any) -> None:
    """Monte-Carlo random deployment experiment."""
    flags["dims"] = _floats(dims)
    run = resolve_run_config(config_path, flags)
    result = run_experiment(run.experiment(), threads=run.threads)
    result.write(run.out, "simulate", extra={"run": _echo_config(run)})
    report = _shown(result.report(), run.units)
    click.echo(
        f"simulate: trials={len(result.trials)} mean_K={result.means['K']:.6g} receiver={report.receiver} "
        f"c_per_user={report.per_user:.6g} c_bar={report.space_normalized:.6g} [{report.units}]"
    )


@cli.command("preset")
@click.argument("name")
@click.option("--seed", type=int, default=None)
@click.option("--trials", type=int, default=None)
@click.option("--dims", type=str, default=None, help="Override the Monte-Carlo geometry size.")
@click.option("--densities", type=str, default=None, help="Override the density sweep.")
@common_options
def preset_cmd(name: str, config_path: Optional[Path], dims: Optional[str], densities: Optional[str], **flags: Any) -> None:
    """Reproduce a figure: fig4, fig6, fig7 (closed-form sweeps) or fig8, fig9, fig11 (Monte-Carlo)."""
    flags["dims"] = _floats(dims)
    flags["densities"] = _floats(densities)
    run = resolve_run_config(config_path, flags)
    preset = figure_preset(name, seed=run.seed, trials=run.trials, dims=run.dims, densities=run.densities)
    output = run_preset(preset, threads=run.threads)
    if isinstance(preset, MonteCarloPreset):
        run = run.model_copy(
            update={
                "seed": preset.experiment.base_seed,
                "trials": preset.experiment.trials,
                "dims": preset.experiment.dims,
                "densities": preset.densities,
            }
        )
    output.summary["config"] = _echo_config(run)
    paths = output.write(run.out)
    click.echo(f"preset {name}: points={len(output.sweep)} files={','.join(p.name for p in paths)}")


@cli.command("schema")
def schema_cmd() -> None:
    """Print the JSON schema of the run config file."""
    click.echo(json.dumps(RunConfig.model_json_schema(), sort_keys=True, indent=2))


def dispatch(argv: Optional[Sequence[str]] = None) -> int:
    try:
        status = cli.main(args=list(argv) if argv is not None else None, prog_name="lis-capacity", standalone_mode=False)
    except click.ClickException as err:
        err.show()
        click.echo(error_record(err, EXIT_INVALID), err=True)
        return EXIT_INVALID
    except click.exceptions.Abort:
        return 1
    return status if isinstance(status, int) else 0


if __name__ == "__main__":
    sys.exit(dispatch())
