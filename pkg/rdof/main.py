"""
rdof main entry points: configuration loading, the output directory lock,
and the runs behind each command.
"""

# pylint: disable=invalid-name
import logging
import os
from contextlib import contextmanager
from pathlib import Path
from typing import NamedTuple, Optional, Union
import simplejson as json
from pydantic import ValidationError
from rich.progress import (
    BarColumn,
    MofNCompleteColumn,
    Progress,
    TextColumn,
    TimeElapsedColumn,
)
from rdof.console import err_console
from rdof.datamodels import (
    AdjustmentReport,
    CaseTable,
    ConfigException,
    FwerStudyConfig,
    GenConfig,
    PowerStudyConfig,
    RunConfig,
    SpecTree,
    StudyEnum,
    StudyResult,
)
from rdof.dataset import generate, load_csv, summary, write_csv
from rdof.multiverse import write_pvalues
from rdof.adjust import adjust_all, write_report_csv, write_report_json
from rdof.simstudy import (
    power_trend,
    run_fwer_study,
    run_power_study,
    write_study_csv,
)

logger = logging.getLogger(__name__)

WORKERS_ENV = "RDOF_WORKERS"
LOCK_NAME = ".rdof.lock"

StudyConfig = Union[FwerStudyConfig, PowerStudyConfig]


class RunReturn(NamedTuple):
    report: AdjustmentReport
    table: CaseTable
    files: list[Path]


class StudyReturn(NamedTuple):
    result: StudyResult
    file: Path


def json_load(path) -> dict:
    """Load a JSON config file"""
    try:
        with open(path, encoding="utf-8") as f:
            data = json.load(f)
    except OSError as e:
        raise ConfigException(f"cannot read config {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise ConfigException(f"invalid JSON in {path}: {e}") from e
    if not isinstance(data, dict):
        raise ConfigException(f"config {path} must hold a JSON object")
    return data


def _validate(model, data: dict, what: str):
    try:
        return model.model_validate(data)
    except ValidationError as e:
        raise ConfigException(f"invalid {what}: {e}") from e


def load_run_config(path: Optional[str], overrides: dict) -> RunConfig:
    """RunConfig from an optional file; non-None overrides win over the file"""
    data = json_load(path) if path else {}
    overrides = {k: v for k, v in overrides.items() if v is not None}
    # A source given on the command line replaces the file's source
    if "input" in overrides:
        data.pop("generator", None)
    if "generator" in overrides:
        data.pop("input", None)
    collapse = overrides.pop("collapse_duplicates", None)
    data.update(overrides)
    config = _validate(RunConfig, data, "run configuration")
    if collapse is not None:
        config = config.model_copy(
            update={"tree": config.tree.model_copy(update={"collapse_duplicates": collapse})}
        )
    return config


def load_tree(path: Optional[str]) -> SpecTree:
    """The tree block of a config file, or the default tree"""
    if not path:
        return SpecTree.default()
    data = json_load(path)
    if "tree" not in data:
        return SpecTree.default()
    return _validate(SpecTree, data["tree"], "specification tree")


def load_study_config(
    study: StudyEnum,
    path: Optional[str],
    overrides: dict,
    full_scale: bool = False,
) -> tuple[StudyConfig, SpecTree, dict]:
    """Study config, tree and the remaining file keys (output, workers)"""
    data = json_load(path) if path else {}
    tree = (
        _validate(SpecTree, data.pop("tree"), "specification tree")
        if "tree" in data
        else SpecTree.default()
    )
    extra = {k: data.pop(k) for k in ("output", "workers") if k in data}
    data.update({k: v for k, v in overrides.items() if v is not None})
    model = FwerStudyConfig if study == StudyEnum.FWER else PowerStudyConfig
    if full_scale:
        base = model.full_scale().model_dump(include={"sample_sizes", "runs", "B"})
        data = {**base, **data}
    return _validate(model, data, f"{study} study configuration"), tree, extra


def gen_config(**kwargs) -> GenConfig:
    return _validate(
        GenConfig, {k: v for k, v in kwargs.items() if v is not None}, "generator settings"
    )


def resolve_workers(*candidates: Optional[int]) -> int:
    """First given worker budget, else RDOF_WORKERS, else 1"""
    for w in candidates:
        if w is not None:
            if w < 1:
                raise ConfigException(f"worker budget must be at least 1, got {w}")
            return w
    env = os.environ.get(WORKERS_ENV)
    if env:
        try:
            workers = int(env)
        except ValueError as e:
            raise ConfigException(f"{WORKERS_ENV}={env!r} is not an integer") from e
        if workers < 1:
            raise ConfigException(f"{WORKERS_ENV} must be at least 1, got {workers}")
        return workers
    return 1


@contextmanager
def output_lock(directory):
    """Exclusive use of an output directory for one invocation"""
    directory = Path(directory)
    try:
        directory.mkdir(parents=True, exist_ok=True)
        fd = os.open(directory / LOCK_NAME, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError as e:
        raise ConfigException(
            f"output directory {directory} is locked by another run "
            f"(remove {directory / LOCK_NAME} if stale)"
        ) from e
    except OSError as e:
        raise ConfigException(f"cannot use output directory {directory}: {e}") from e
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield directory
    finally:
        (directory / LOCK_NAME).unlink(missing_ok=True)


@contextmanager
def progress_bar(description: str, total: int):
    """Advance callback bound to a progress bar on stderr"""
    with Progress(
        TextColumn("{task.description}"),
        BarColumn(),
        MofNCompleteColumn(),
        TimeElapsedColumn(),
        console=err_console,
        transient=True,
    ) as progress:
        task = progress.add_task(description, total=total)
        yield lambda n: progress.advance(task, n)


def do_gen_data(config: GenConfig, path) -> dict:
    table = generate(config)
    try:
        write_csv(table, path)
    except OSError as e:
        raise ConfigException(f"cannot write {path}: {e}") from e
    return summary(table)


def load_table(config: RunConfig) -> CaseTable:
    if config.input is None:
        return generate(config.generator)
    if not Path(config.input).is_file():
        raise ConfigException(f"input file not found: {config.input}")
    return load_csv(config.input)


def do_run(config: RunConfig, workers: int) -> RunReturn:
    """Multiverse run with all adjustments, written to the output directory"""
    table = load_table(config)
    with output_lock(config.output) as out:
        with progress_bar("Permutations", config.B) as advance:
            report = adjust_all(
                table,
                config.tree,
                config.B,
                config.alpha,
                config.master_seed,
                workers=workers,
                progress=advance,
            )
        files = [out / "pvalues.csv", out / "report.csv", out / "summary.json"]
        write_pvalues(report.raw, files[0])
        write_report_csv(report, files[1])
        write_report_json(report, files[2])
    return RunReturn(report, table, files)


def do_simulate(
    study: StudyEnum,
    config: StudyConfig,
    tree: SpecTree,
    output,
    workers: int,
) -> StudyReturn:
    total = len(config.sample_sizes) * config.runs
    with output_lock(output) as out:
        with progress_bar(f"{study} runs", total) as advance:
            if study == StudyEnum.FWER:
                result = run_fwer_study(config, tree, workers=workers, progress=advance)
            else:
                result = run_power_study(config, tree, workers=workers, progress=advance)
                power_trend(result)
        path = out / f"{study}.csv"
        write_study_csv(result, path)
    return StudyReturn(result, path)
