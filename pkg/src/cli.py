"""
qec-steer command line interface.

Global options (config, profile, seed, output directory, threads, decoder,
dumps, log level) go before the subcommand:

    qec-steer --profile smoke --seed 7 --out runs/demo steer
    qec-steer --config exp.json phase --f 0.01 --f 0.1 --lam 0 --lam 0.01
"""

from typing import Dict, Iterator, List, Optional
from contextlib import contextmanager
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
import logging

import typer
from dotenv import load_dotenv
from rich.console import Console
from rich.logging import RichHandler
from rich.table import Table

# Conditional imports for different execution contexts
try:
    from .circuit import build_memory_circuit
    from .circuit_text import dump_circuit_text
    from .experiments import (
        ScenarioTrace, analyze_psd, build_context, profile_manager, run_finetune,
        run_gradient_relation_check, run_phase_diagram, run_randomized_recovery,
        run_scaling, run_steering,
    )
    from .experiments.common import ExperimentContext
    from .experiments.steering import summarize
    from .noise_model import optimal_policy
    from .results_store import ResultStore
    from .schema import DecoderMethod, ExperimentConfig, load_config
    from .simulator import derive_seed
except ImportError:
    from circuit import build_memory_circuit
    from circuit_text import dump_circuit_text
    from experiments import (
        ScenarioTrace, analyze_psd, build_context, profile_manager, run_finetune,
        run_gradient_relation_check, run_phase_diagram, run_randomized_recovery,
        run_scaling, run_steering,
    )
    from experiments.common import ExperimentContext
    from experiments.steering import summarize
    from noise_model import optimal_policy
    from results_store import ResultStore
    from schema import DecoderMethod, ExperimentConfig, load_config
    from simulator import derive_seed

load_dotenv()

logger = logging.getLogger(__name__)
console = Console()

app = typer.Typer(
    name="qec-steer",
    help="RL steering laboratory for surface-code quantum error correction",
    no_args_is_help=True,
    add_completion=False,
)


class Series(str, Enum):
    LER = "ler"
    DR = "dr"


@dataclass
class Session:
    cfg: ExperimentConfig
    dump_model: bool = False
    dump_graph: bool = False
    dump_records: bool = False
    quiet: bool = False

    def store(self) -> ResultStore:
        store = ResultStore(self.cfg.output.out_dir)
        store.write_config(self.cfg)
        return store


def configure_logging(level: str) -> None:
    logging.basicConfig(
        level=level.upper(),
        format="%(message)s",
        datefmt="[%X]",
        handlers=[RichHandler(console=console, show_path=False)],
        force=True,
    )


def resolve_config(
    config: Optional[Path],
    profile: Optional[str],
    seed: Optional[int] = None,
    out: Optional[str] = None,
    threads: Optional[int] = None,
    decoder: Optional[DecoderMethod] = None,
) -> ExperimentConfig:
    """Config file (or defaults), then the profile's overrides, then CLI flags"""
    cfg = load_config(config) if config else ExperimentConfig()
    if profile:
        if not profile_manager.is_profile_supported(profile):
            raise ValueError(
                f"unknown profile '{profile}'; choose one of {profile_manager.get_supported_profiles()}"
            )
        cfg = profile_manager.get_config(profile, cfg)
    return cfg.with_overrides(**{
        "seed": seed,
        "threads": threads,
        "output.out_dir": out,
        "evaluation.decoder": decoder.value if decoder else None,
    })


@contextmanager
def guarded() -> Iterator[None]:
    """Turn library errors into a red message and exit code 1"""
    try:
        yield
    except (ValueError, OSError) as e:
        logger.debug("Command failed", exc_info=True)
        console.print(f"[bold red]❌ Error:[/bold red] {e}")
        raise typer.Exit(code=1)


def print_summary(title: str, values: Dict[str, object]) -> None:
    table = Table(title=title)
    table.add_column("metric", style="cyan")
    table.add_column("value", justify="right")
    for key, value in values.items():
        if isinstance(value, float):
            value = f"{value:.9g}"
        table.add_row(str(key), str(value))
    console.print(table)


def write_dumps(session: Session, store: ResultStore, ctx: ExperimentContext) -> None:
    if session.dump_model:
        console.print(f"📦 model: {store.dump_model(ctx.model)}")
    if session.dump_graph:
        console.print(f"📦 graph: {store.dump_graph(ctx.graph)}")
    if session.dump_records:
        cfg = session.cfg
        rec = ctx.simulate(optimal_policy(ctx.model, 0.0), 0.0, cfg.evaluation.shots, derive_seed(cfg.seed, "dump"))
        console.print(f"📦 records: {store.dump_records('optimal', rec)}")


@app.callback()
def main(
    typer_ctx: typer.Context,
    config: Optional[Path] = typer.Option(None, "--config", "-c", help="Experiment config (JSON or YAML)"),
    profile: Optional[str] = typer.Option(None, "--profile", "-p", help="Preset: desk, full or smoke"),
    seed: Optional[int] = typer.Option(None, "--seed", help="Root seed"),
    out: Optional[str] = typer.Option(None, "--out", "-o", envvar="QEC_STEER_OUT", help="Output directory"),
    threads: Optional[int] = typer.Option(None, "--threads", "-j", envvar="QEC_STEER_THREADS", help="Worker threads"),
    decoder: Optional[DecoderMethod] = typer.Option(None, "--decoder", help="Evaluation decoder"),
    dump_model: bool = typer.Option(False, "--dump-model", help="Write model.json"),
    dump_graph: bool = typer.Option(False, "--dump-graph", help="Write graph.json"),
    dump_records: bool = typer.Option(False, "--dump-records", help="Write a QSDR1 record dump of the optimal policy"),
    quiet: bool = typer.Option(False, "--quiet", "-q", help="Hide progress bars"),
    log_level: str = typer.Option("INFO", "--log-level", envvar="QEC_STEER_LOG_LEVEL", help="Logging level"),
):
    configure_logging(log_level)
    with guarded():
        cfg = resolve_config(config, profile, seed, out, threads, decoder)
    output = cfg.output
    typer_ctx.obj = Session(
        cfg=cfg,
        dump_model=dump_model or output.dump_model,
        dump_graph=dump_graph or output.dump_graph,
        dump_records=dump_records or output.dump_records,
        quiet=quiet,
    )


@app.command()
def circuit(
    typer_ctx: typer.Context,
    dump: Optional[Path] = typer.Option(None, "--dump", help="Write the text circuit here ('-' for stdout)"),
):
    """Build the memory circuit and print its summary"""
    session: Session = typer_ctx.obj
    cfg = session.cfg
    with guarded():
        built = build_memory_circuit(cfg.code, cfg.d, cfg.cycles, cfg.basis)
        if dump is not None:
            text = dump_circuit_text(built)
            if str(dump) == "-":
                typer.echo(text, nl=False)
                return
            dump.write_text(text, encoding="utf-8")
            console.print(f"✅ Circuit written to {dump}")
        print_summary("🔧 Circuit", built.summary())
        if session.dump_model or session.dump_graph or session.dump_records:
            store = session.store()
            write_dumps(session, store, build_context(cfg))


@app.command()
def calibrate(typer_ctx: typer.Context):
    """Fit per-parameter-type sensitivity scales"""
    session: Session = typer_ctx.obj
    with guarded():
        cfg = session.cfg.with_overrides(**{"calibration.enabled": True})
        store = session.store()
        ctx = build_context(cfg)
        write_dumps(session, store, ctx)
        table = Table(title="📊 Sensitivity calibration")
        for column in ("group", "sigma0", "DR0", "residual", "flagged"):
            table.add_column(column)
        for name, scale in ctx.sensitivities.items():
            table.add_row(name, f"{scale.sigma0:.9g}", f"{scale.dr0:.9g}", f"{scale.residual:.3g}",
                          "⚠️" if scale.flagged else "")
        console.print(table)
        store.write_summary({"sensitivities": {name: scale.__dict__ for name, scale in ctx.sensitivities.items()}})


@app.command()
def steer(
    typer_ctx: typer.Context,
    resume: bool = typer.Option(False, "--resume", help="Continue from checkpoint.npz in the output directory"),
):
    """Real-time steering run with the four evaluation scenarios"""
    session: Session = typer_ctx.obj
    with guarded():
        store = session.store()
        ctx = build_context(session.cfg)
        write_dumps(session, store, ctx)
        trace = run_steering(session.cfg, store=store, resume=resume, quiet=session.quiet, context=ctx)
        summary = summarize(trace)
        print_summary("🎉 Steering", {k: v for k, v in summary.items() if not isinstance(v, dict)})


@app.command()
def phase(
    typer_ctx: typer.Context,
    f: List[float] = typer.Option(..., "--f", help="Drift frequency in 1/epochs (repeat)"),
    lam: List[float] = typer.Option(..., "--lam", help="Entropy coefficient lambda_H (repeat)"),
):
    """Steering-advantage grid over drift frequency and entropy coefficient"""
    session: Session = typer_ctx.obj
    with guarded():
        store = session.store()
        diagram = run_phase_diagram(session.cfg, f, lam, quiet=session.quiet)
        store.write_phase_csv(diagram.rows())
        store.write_summary({"points": [p.__dict__ for p in diagram.points]})
        failed = sum(p.error is not None for p in diagram.points)
        print_summary("📊 Phase diagram", {"points": len(diagram.points), "failed": failed})
        if failed:
            console.print(f"[yellow]⚠️ {failed} grid points failed; see phase.csv[/yellow]")


@app.command()
def scale(
    typer_ctx: typer.Context,
    d: Optional[List[int]] = typer.Option(None, "--d", help="Code distance (repeat)"),
    P: Optional[List[int]] = typer.Option(None, "--P", help="Parameters per site (repeat)"),
):
    """Convergence of Lambda(t) across distances and parameter counts"""
    session: Session = typer_ctx.obj
    with guarded():
        store = session.store()
        result = run_scaling(session.cfg, d or None, P or None, quiet=session.quiet)
        store.write_scaling_csv(result.rows())
        store.write_summary(result.summary())
        table = Table(title="📊 Scaling")
        for column in ("d", "P", "P_tot", "eps_L*", "gamma", "R^2"):
            table.add_column(column, justify="right")
        for run in result.runs:
            table.add_row(str(run.d), str(run.P), str(run.P_tot), f"{run.eps_L_star:.9g}",
                          f"{run.gamma.gamma_exp:.9g}", f"{run.gamma.r_squared:.3g}")
        console.print(table)


def _report_recovery(store: ResultStore, title: str, result) -> None:
    store.rewrite_trace(result.history)
    summary = result.summary()
    store.write_summary(summary)
    print_summary(title, {k: v for k, v in summary.items() if not isinstance(v, list)})


@app.command()
def finetune(typer_ctx: typer.Context):
    """RL from a slightly miscalibrated start on the drift-free model"""
    session: Session = typer_ctx.obj
    with guarded():
        store = session.store()
        _report_recovery(store, "🎉 Fine-tune", run_finetune(session.cfg, quiet=session.quiet))


@app.command()
def recover(typer_ctx: typer.Context):
    """RL from a policy spoiled to P_err in [0.45, 0.5]"""
    session: Session = typer_ctx.obj
    with guarded():
        store = session.store()
        _report_recovery(store, "🎉 Randomized recovery", run_randomized_recovery(session.cfg, quiet=session.quiet))


@app.command()
def gradcheck(typer_ctx: typer.Context):
    """Check d log eps_L = ((d+1)/2) d log C along random directions"""
    session: Session = typer_ctx.obj
    with guarded():
        store = session.store()
        relation = run_gradient_relation_check(session.cfg, quiet=session.quiet)
        summary = {
            "slope": relation.slope,
            "slope_stderr": relation.slope_stderr,
            "expected": relation.expected,
            "directions": relation.num_points,
        }
        store.write_summary({**summary, "d_log_c": relation.d_log_c, "d_log_eps": relation.d_log_eps})
        print_summary("📊 Gradient relation", summary)


@app.command()
def psd(
    typer_ctx: typer.Context,
    traces: List[Path] = typer.Argument(..., help="trace.jsonl files of steering runs"),
    series: Series = typer.Option(Series.LER, "--series", help="ler: decoded eps_L evaluations; dr: per-epoch mean DR"),
    grid_points: int = typer.Option(64, "--grid-points", help="Log-spaced frequency points"),
    smoothing: Optional[float] = typer.Option(None, "--smoothing", help="Gaussian smoothing width in grid points"),
):
    """Spectra of fixed vs. steered traces and the steering filter function"""
    session: Session = typer_ctx.obj
    with guarded():
        fixed, steered = [], []
        for path in traces:
            trace = ScenarioTrace.from_records(ResultStore.read_trace(path))
            if series == Series.LER:
                fixed.append(trace.ler_series("fixed"))
                steered.append(trace.ler_series("learned"))
            else:
                fixed.append(trace.mean_dr("fixed"))
                steered.append(trace.mean_dr("learned"))
        result = analyze_psd(fixed, steered, grid_points=grid_points, smoothing_sigma=smoothing)
        store = session.store()
        store.write_psd_csv(result.rows())
        print_summary("📊 Filter function", {
            "traces": len(traces),
            "min_filter_db": float(result.filter_db.min()),
            "max_filter_db": float(result.filter_db.max()),
        })


if __name__ == "__main__":
    app()
