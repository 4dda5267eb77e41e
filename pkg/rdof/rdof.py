"""
rdof command line
"""

# pylint: disable=invalid-name

import logging
from typing import Optional
import numpy as np
import typer
from pydantic import ValidationError
from rich.logging import RichHandler
from rdof import __version__
from rdof.console import console, err_console
from rdof.datamodels import (
    ConfigException,
    DatasetException,
    DegenerateDataException,
    NumericException,
    StudyEnum,
)
from rdof.main import (
    do_gen_data,
    do_run,
    do_simulate,
    gen_config,
    load_run_config,
    load_study_config,
    load_tree,
    resolve_workers,
)
from rdof.multiverse import SpecTreeException, enumerate_specs, validate_tree
from rdof.preprocess import PreprocessException, SurrogateException
from rdof.adjust import AdjustmentException
from rdof.simstudy import StudyException
from rdof.report import print_gen_summary, print_report, print_specs, print_study

app = typer.Typer(pretty_exceptions_enable=False, no_args_is_help=True)

logger = logging.getLogger(__name__)

EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

EXIT_CODES = (
    (
        (ConfigException, SpecTreeException, StudyException, AdjustmentException),
        EXIT_CONFIG,
    ),
    (
        (
            DatasetException,
            DegenerateDataException,
            SurrogateException,
            PreprocessException,
            ValidationError,
        ),
        EXIT_DATA,
    ),
    ((NumericException, FloatingPointError, np.linalg.LinAlgError), EXIT_NUMERIC),
)


def fail(e: Exception):
    for exceptions, code in EXIT_CODES:
        if isinstance(e, exceptions):
            err_console.print(f"Error: {e}", style="bold red")
            raise typer.Exit(code) from e
    raise e


def parse_list(value: Optional[str], kind, name: str) -> Optional[list]:
    if value is None:
        return None
    try:
        return [kind(v) for v in value.split(",") if v.strip()]
    except ValueError as e:
        raise typer.BadParameter(
            f"{name}: expected a comma separated list, got {value!r}"
        ) from e


def version_callback(value: bool):
    if value:
        typer.echo(f"rdof CLI Version: {__version__}")
        raise typer.Exit()


@app.callback()
def main(
    loglevel: str = typer.Option("WARNING", help="Logging level"),
    version: bool = typer.Option(
        None, "--version", callback=version_callback, is_eager=True
    ),
):
    """Multiplicity adjustment for researcher degrees of freedom"""
    lognames = logging.getLevelNamesMapping()
    if loglevel not in lognames:
        raise typer.BadParameter(f"Invalid loglevel: {loglevel}")

    logging.basicConfig(
        level=lognames[loglevel],
        handlers=[RichHandler(rich_tracebacks=False, console=err_console)],
        force=True,
    )


@app.command("gen-data")
def gen_data(
    output: str = typer.Option("cases.csv", "--output", "-o", help="CSV file to write"),
    n: Optional[int] = typer.Option(None, "--n", help="Number of cases"),
    seed: Optional[int] = typer.Option(None, "--seed"),
    effect: Optional[float] = typer.Option(None, "--effect", help="Log-odds per 100 mmHg"),
    missing_rate: Optional[float] = typer.Option(None, "--missing-rate"),
    proxies: Optional[int] = typer.Option(None, "--proxies", help="Number of proxy vitals"),
):
    """Write a synthetic paO2 case table"""
    try:
        config = gen_config(
            n_cases=n,
            seed=seed,
            effect_size=effect,
            missing_rate=missing_rate,
            n_proxies=proxies,
        )
        stats = do_gen_data(config, output)
    except Exception as e:  # pylint: disable=broad-except
        fail(e)
    print_gen_summary(stats, output, console)


@app.command()
def run(
    config: Optional[str] = typer.Option(None, "--config", "-c", help="JSON run config"),
    input_file: Optional[str] = typer.Option(None, "--input", "-i", help="Case table CSV"),
    B: Optional[int] = typer.Option(None, "--B", "-B", help="Permutations"),
    alpha: Optional[float] = typer.Option(None, "--alpha"),
    seed: Optional[int] = typer.Option(None, "--seed", help="Master seed"),
    output: Optional[str] = typer.Option(None, "--output", "-o", help="Output directory"),
    workers: Optional[int] = typer.Option(None, "--workers", help="Worker threads"),
    holm: Optional[bool] = typer.Option(None, "--holm/--no-holm", help="Report Holm too"),
    collapse_duplicates: Optional[bool] = typer.Option(
        None, "--collapse-duplicates/--keep-duplicates"
    ),
    top: int = typer.Option(0, "--top", help="List the N smallest p-values"),
):
    """Run every specification and adjust for multiplicity"""
    try:
        cfg = load_run_config(
            config,
            {
                "input": input_file,
                "B": B,
                "alpha": alpha,
                "master_seed": seed,
                "output": output,
                "workers": workers,
                "holm": holm,
                "collapse_duplicates": collapse_duplicates,
            },
        )
        result = do_run(cfg, resolve_workers(cfg.workers))
    except Exception as e:  # pylint: disable=broad-except
        fail(e)
    print_report(result.report, holm=cfg.holm, top=top)
    for f in result.files:
        logger.info("Wrote %s", f)


@app.command()
def simulate(
    study: StudyEnum,
    config: Optional[str] = typer.Option(None, "--config", "-c", help="JSON study config"),
    sizes: Optional[str] = typer.Option(None, "--sizes", help="e.g. 100,300,1000"),
    alphas: Optional[str] = typer.Option(None, "--alphas", help="Power study levels"),
    alpha: Optional[float] = typer.Option(None, "--alpha", help="FWER study level"),
    runs: Optional[int] = typer.Option(None, "--runs"),
    B: Optional[int] = typer.Option(None, "--B", "-B", help="Permutations per run"),
    effect: Optional[float] = typer.Option(None, "--effect", help="Power study effect"),
    seed: Optional[int] = typer.Option(None, "--seed", help="Master seed"),
    holm: Optional[bool] = typer.Option(None, "--holm/--no-holm"),
    full_scale: bool = typer.Option(False, "--full-scale", help="1000 runs, B=1000"),
    output: Optional[str] = typer.Option(None, "--output", "-o", help="Output directory"),
    workers: Optional[int] = typer.Option(None, "--workers", help="Worker threads"),
):
    """Monte-Carlo study of FWER under the null or power under signal"""
    overrides = {
        "sample_sizes": parse_list(sizes, int, "--sizes"),
        "runs": runs,
        "B": B,
        "master_seed": seed,
        "holm": holm,
    }
    if study == StudyEnum.FWER:
        if alphas is not None or effect is not None:
            raise typer.BadParameter("--alphas and --effect apply to the power study")
        overrides["alpha"] = alpha
    else:
        if alpha is not None:
            raise typer.BadParameter("--alpha applies to the fwer study, use --alphas")
        overrides["alphas"] = parse_list(alphas, float, "--alphas")
        overrides["effect_size"] = effect
    try:
        cfg, tree, extra = load_study_config(study, config, overrides, full_scale)
        result = do_simulate(
            study,
            cfg,
            tree,
            output or extra.get("output", "rdof-out"),
            resolve_workers(workers, extra.get("workers")),
        )
    except Exception as e:  # pylint: disable=broad-except
        fail(e)
    print_study(result.result, console)
    logger.info("Wrote %s", result.file)


@app.command()
def specs(
    config: Optional[str] = typer.Option(None, "--config", "-c", help="JSON config"),
):
    """List the specifications of the tree without running them"""
    try:
        tree = load_tree(config)
        validate_tree(tree)
        enumerated = enumerate_specs(tree)
    except Exception as e:  # pylint: disable=broad-except
        fail(e)
    print_specs(enumerated, console)


if __name__ == "__main__":
    app()
