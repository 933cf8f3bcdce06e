"""
Command-line interface.

Subcommands: gen-data, train, dpo, stream, evaluate, ablate and grad-check.
Errors of the reactive_avatar hierarchy exit with their code (2 bad config,
3 numeric abort, 4 artifact mismatch, 5 IO).
"""

import logging
from pathlib import Path
from typing import Optional, Tuple

import click
import torch

from .core.config import TOOL_VERSION, ConfigManager
from .core.errors import ReactiveAvatarError
from .pipeline import Pipeline

logger = logging.getLogger(__name__)

MASK_KINDS = ("framewise", "blockwise", "lookahead")
TRAIN_VARIANTS = {"codec": "codec", "df": "full", "talking-only": "talking-only", "no-user-motion": "no-user-motion"}
MODEL_VARIANTS = ("full", "no-user-motion", "talking-only", "full-dpo")


class ExitCodeGroup(click.Group):
    """Group mapping reactive_avatar errors to their exit codes."""

    def invoke(self, ctx: click.Context):
        try:
            return super().invoke(ctx)
        except ReactiveAvatarError as e:
            click.echo(f"error: {e}", err=True)
            ctx.exit(e.exit_code)


def configure_logging(level: str) -> None:
    logging.basicConfig(
        level=getattr(logging, level.upper(), logging.INFO),
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )


@click.group(cls=ExitCodeGroup)
@click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None, help="Run config file.")
@click.option("--seed", type=click.IntRange(0, 2**64 - 1), default=None, help="Override every seed.")
@click.option("--out", "out_dir", type=click.Path(file_okay=False), default="runs/default", show_default=True)
@click.option("--force", is_flag=True, help="Accept artifacts written under another config digest.")
@click.version_option(TOOL_VERSION)
@click.pass_context
def main(ctx: click.Context, config_path: Optional[str], seed: Optional[int], out_dir: str, force: bool) -> None:
    """Reactive avatar motion generation: data, training, streaming and evaluation."""
    config = ConfigManager.load_config(config_path)
    if seed is not None:
        config = ConfigManager.with_seed(config, seed)
    configure_logging(config.run.log_level)
    torch.set_num_threads(config.run.threads)
    ConfigManager.save_config(config, Path(out_dir) / "run.cfg")
    ctx.obj = Pipeline(config, out_dir, force=force)


@main.command("gen-data")
@click.pass_obj
def gen_data(pipeline: Pipeline) -> None:
    """Generate the synthetic dyadic dataset."""
    path = pipeline.generate_data()
    click.echo(f"clips={pipeline.config.data.clip_count} digest={pipeline.digest} path={path}")


@main.command()
@click.option("--variant", type=click.Choice(sorted(TRAIN_VARIANTS)), default="df", show_default=True)
@click.option("--mask", type=click.Choice(MASK_KINDS), default=None, help="Override the self-attention mask.")
@click.pass_obj
def train(pipeline: Pipeline, variant: str, mask: Optional[str]) -> None:
    """Train the codec or a vector field variant."""
    if variant == "codec":
        result = pipeline.train_codec()
        click.echo(f"codec loss {result.initial_loss:.4g} -> {result.final_loss:.4g}")
        return
    name = TRAIN_VARIANTS[variant]
    _, result = pipeline.train_model(name, mask)
    final = result.losses[-1] if result.losses else float("nan")
    click.echo(f"{name}: {len(result.losses)} steps, final loss {final:.5f} -> {pipeline.model_path(name, mask)}")


@main.command()
@click.pass_obj
def dpo(pipeline: Pipeline) -> None:
    """Fine-tune the full model with the preference objective."""
    result = pipeline.preference_finetune()
    if result.totals:
        click.echo(
            f"L_DF {result.df_losses[-1]:.5f} L_DPO {result.dpo_losses[-1]:.5f} "
            f"accuracy {result.accuracy[-1]:.2f} -> {pipeline.model_path('full-dpo')}"
        )


@main.command()
@click.option("--checkpoint", "variant", type=click.Choice(MODEL_VARIANTS), default="full", show_default=True)
@click.option("--clip", "clip_index", type=click.IntRange(min=0), default=0, show_default=True)
@click.option("--frames", type=click.IntRange(min=1), default=None, help="Stream only the first frames.")
@click.option("--dump-stream", "dump_path", type=click.Path(dir_okay=False), default=None)
@click.pass_obj
def stream(pipeline: Pipeline, variant: str, clip_index: int, frames: Optional[int], dump_path: Optional[str]) -> None:
    """Stream one clip block by block and report per-block latency."""
    result = pipeline.stream(variant, clip_index, frames, dump_path)
    click.echo(f"blocks={result.blocks}")
    if result.latency is not None:
        click.echo(
            f"first_block_ms={result.latency.first_block_ms:.3f} "
            f"max_min_ratio={result.latency.max_min_ratio:.3f}"
        )


@main.command()
@click.option("--checkpoint", "variant", type=click.Choice(MODEL_VARIANTS), default="full", show_default=True)
@click.option("--mask", type=click.Choice(MASK_KINDS), default=None)
@click.pass_obj
def evaluate(pipeline: Pipeline, variant: str, mask: Optional[str]) -> None:
    """Score a checkpoint with the interaction metrics."""
    from .metrics.report import format_table

    click.echo(format_table(pipeline.evaluate(variant, mask)), nl=False)


@main.command()
@click.option("--no-masks", is_flag=True, help="Skip the mask comparison rows.")
@click.pass_obj
def ablate(pipeline: Pipeline, no_masks: bool) -> None:
    """Tabulate the conditioning/DPO ablation and the mask comparison."""
    from .ablation import run_ablation, write_ablation

    table = run_ablation(pipeline, include_masks=not no_masks)
    write_ablation(pipeline, table)
    click.echo(table.to_text(), nl=False)


@main.command("grad-check")
@click.option("--check", "names", multiple=True, help="Run only these checks.")
@click.pass_context
def grad_check(ctx: click.Context, names: Tuple[str, ...]) -> None:
    """Compare backprop with finite differences for every registered operation."""
    from .gradcheck import run_checks
    from .utils.csv_out import write_csv

    pipeline: Pipeline = ctx.obj
    results = run_checks(list(names) or None)
    for result in results:
        status = "pass" if result.passed else "FAIL"
        detail = f" ({result.error})" if result.error else ""
        click.echo(f"{result.name:<22} rel_err={result.rel_error:.3e} {status}{detail}")
    rows = [
        {"check": r.name, "rel_error": r.rel_error, "tolerance": r.tolerance, "parameters": r.parameters, "passed": r.passed}
        for r in results
    ]
    write_csv(
        pipeline.path("gradcheck.csv"),
        ("check", "rel_error", "tolerance", "parameters", "passed"),
        rows,
        pipeline.provenance("gradcheck"),
    )
    if not all(r.passed for r in results):
        ctx.exit(1)


if __name__ == "__main__":
    main()
