# app/main.py
# --- Environment Variable Loading ---
# This must be at the very top, before any other app modules are imported.
from dotenv import load_dotenv
load_dotenv()

import time
from pathlib import Path
from typing import Any, Dict, Optional, get_args

import click
from pydantic import ValidationError

from app.core.config import get_settings
from app.core.exceptions import BilinearError, ConfigError, NumericalFailure
from app.core.manifest import config_hash, read_manifest, write_manifest
from app.schemas.experiment import ExperimentConfig, ExperimentKind
from app.services.experiment_runner import run_experiment
from app.utils.io_utils import load_config_file

# Import pre-configured loggers from logging_config
from app.core.logging_config import cli_logger, console_logger, error_logger

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3

GLOBAL_FIELDS = {"kind", "master_seed", "threads", "out_dir"}
LIST_FIELDS = {"sigma", "x0", "eps_grid", "x0_norms", "p_list"}
# Flags whose field names are not snake_case keep their exact spelling.
EXACT_FLAGS = {"J", "T", "C0"}


def _flag(name: str) -> str:
    return f"--{name}" if name in EXACT_FLAGS else "--" + name.replace("_", "-")


def config_options(func):
    """One string-valued flag per ExperimentConfig field; pydantic does the typing."""
    for name, field in reversed(list(ExperimentConfig.model_fields.items())):
        if name in GLOBAL_FIELDS:
            continue
        help_text = "comma-separated list" if name in LIST_FIELDS else None
        func = click.option(_flag(name), name, type=str, default=None, help=help_text)(func)
    return func


def _parse_overrides(overrides: Dict[str, Optional[str]]) -> Dict[str, Any]:
    data: Dict[str, Any] = {}
    for name, raw in overrides.items():
        if raw is None:
            continue
        if name in LIST_FIELDS:
            data[name] = [item.strip() for item in raw.split(",") if item.strip()]
        else:
            data[name] = raw
    return data


def _format_validation(exc: ValidationError) -> str:
    lines = []
    for err in exc.errors():
        loc = ".".join(str(part) for part in err["loc"])
        msg = err["msg"]
        if msg.startswith("Value error, "):
            msg = msg[len("Value error, "):]
        lines.append(f"{loc}: {msg}" if loc else msg)
    return "\n".join(lines)


def _config_failure(ctx: click.Context, message: str) -> None:
    cli_logger.info(f"[CONFIG] rejected: {message}")
    click.echo(f"invalid config:\n{message}", err=True)
    ctx.exit(EXIT_CONFIG)


def _execute(ctx: click.Context, data: Dict[str, Any], default_out: Optional[Path] = None) -> None:
    opts = ctx.obj
    if opts["seed"] is not None:
        data["master_seed"] = opts["seed"]
    if opts["threads"] is not None:
        data["threads"] = opts["threads"]
    if opts["out"] is not None:
        data["out_dir"] = opts["out"]

    try:
        cfg = ExperimentConfig(**data)
    except ValidationError as exc:
        return _config_failure(ctx, _format_validation(exc))
    except ConfigError as exc:
        return _config_failure(ctx, str(exc))

    echo = cfg.model_dump(mode="json", exclude={"out_dir", "threads"})
    if cfg.out_dir:
        out_dir = Path(cfg.out_dir)
    elif default_out is not None:
        out_dir = default_out
    else:
        out_dir = Path(get_settings().OUTPUT_DIR) / f"{cfg.kind}-{config_hash(echo)[:12]}"

    started = time.perf_counter()
    status, error, code = "ok", None, EXIT_OK
    artifacts = []
    try:
        artifacts = run_experiment(cfg, out_dir)
    except NumericalFailure as exc:
        status, error, code = "numerical_failure", f"{type(exc).__name__}: {exc}", EXIT_NUMERICAL
        error_logger.error(f"[RUN] kind={cfg.kind} numerical failure: {exc}", exc_info=True)
    except (BilinearError, ValueError) as exc:
        status, error, code = "invalid_input", f"{type(exc).__name__}: {exc}", EXIT_CONFIG
        error_logger.error(f"[RUN] kind={cfg.kind} rejected input: {exc}")

    out_dir.mkdir(parents=True, exist_ok=True)
    write_manifest(out_dir, echo, artifacts, time.perf_counter() - started, cfg.master_seed, status, error)
    if code != EXIT_OK:
        click.echo(error, err=True)
        ctx.exit(code)
    console_logger.info(f"[RUN] kind={cfg.kind} done in {time.perf_counter() - started:.2f}s")
    click.echo(str(out_dir))


@click.group()
@click.option("--seed", type=int, default=None, help="Master seed (default from settings).")
@click.option("--threads", type=int, default=None, help="Worker threads for ensembles.")
@click.option("--out", type=click.Path(file_okay=False), default=None, help="Output directory (env BILINEAR_OUTPUT_DIR sets the parent default).")
@click.option("--config", "config_file", type=click.Path(exists=True, dir_okay=False), default=None, help="Flat TOML experiment file.")
@click.pass_context
def cli(ctx, seed, threads, out, config_file):
    """Bilinear constraint class certificates and partially damped SDE experiments."""
    ctx.ensure_object(dict)
    ctx.obj.update(seed=seed, threads=threads, out=out, config_file=config_file)


def _file_data(ctx: click.Context, path: Optional[str]) -> Dict[str, Any]:
    data: Dict[str, Any] = {}
    for source in (ctx.obj["config_file"], path):
        if source:
            try:
                data.update(load_config_file(source))
            except ConfigError as exc:
                _config_failure(ctx, str(exc))
    return data


def _make_kind_command(kind: str) -> click.Command:
    @click.command(name=kind, help=f"Run a {kind} experiment.")
    @config_options
    @click.pass_context
    def command(ctx, **overrides):
        data = _file_data(ctx, None)
        data.update(_parse_overrides(overrides))
        data["kind"] = kind
        _execute(ctx, data)

    return command


for _kind in get_args(ExperimentKind):
    cli.add_command(_make_kind_command(_kind))


@cli.command("run")
@click.argument("config_path", type=click.Path(exists=True, dir_okay=False))
@config_options
@click.pass_context
def run(ctx, config_path, **overrides):
    """Run the experiment described by a config file (its `kind` key picks the operation)."""
    data = _file_data(ctx, config_path)
    data.update(_parse_overrides(overrides))
    _execute(ctx, data)


@cli.command("rerun")
@click.argument("manifest_path", type=click.Path(exists=True))
@click.pass_context
def rerun(ctx, manifest_path):
    """Repeat a run from its manifest.json into a sibling `-rerun` directory (or --out)."""
    manifest = read_manifest(Path(manifest_path))
    source = Path(manifest_path)
    source_dir = source if source.is_dir() else source.parent
    cli_logger.info(f"[RERUN] from {source_dir} hash={manifest.get('config_sha256', '')[:16]}")
    _execute(ctx, dict(manifest["config"]), default_out=source_dir.with_name(source_dir.name + "-rerun"))


if __name__ == "__main__":
    cli()
