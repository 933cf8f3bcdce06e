"""
Ablation module.

Scores the user-motion and preference-optimisation ablation (rows without
user motion, with user motion, and with user motion plus DPO) and the
self-attention mask comparison (framewise, blockwise, blockwise with
look-ahead), each with a mean-jerk smoothness column.
"""

import logging
import math
from typing import Dict, List, Optional, Tuple

from pydantic import BaseModel, Field

from .core.errors import ArtifactIOError
from .core.schema import MetricReport
from .metrics.interaction import evaluate_parameters, generate_all, mean_jerk, metric_echo
from .metrics.report import format_table, write_report_csv, write_report_text
from .pipeline import Pipeline

logger = logging.getLogger(__name__)

# (label, variant, mask) in table order: no user motion, user motion, user motion + DPO
CONDITIONING_ROWS: Tuple[Tuple[str, str, Optional[str]], ...] = (
    ("no-user-motion", "no-user-motion", None),
    ("full", "full", None),
    ("full+dpo", "full-dpo", None),
)
MASK_ROWS: Tuple[Tuple[str, str, Optional[str]], ...] = (
    ("mask-framewise", "full", "framewise"),
    ("mask-blockwise", "full", "blockwise"),
    ("mask-lookahead", "full", "lookahead"),
)
JERK_COLUMN = "Jerk"


class AblationTable(BaseModel):
    """
    Labelled metric rows of an ablation run.

    Args:
        reports: Label to report; None marks a row whose checkpoint is absent.
        jerk: Label to mean jerk of the generated parameters.
    """

    reports: Dict[str, Optional[MetricReport]] = Field(default_factory=dict)
    jerk: Dict[str, float] = Field(default_factory=dict)

    @property
    def extra(self) -> Dict[str, Dict[str, float]]:
        return {label: {JERK_COLUMN: value} for label, value in self.jerk.items()}

    def absent(self) -> List[str]:
        return [label for label, report in self.reports.items() if report is None]

    def to_text(self) -> str:
        return format_table(self.reports, (JERK_COLUMN,), self.extra)


def score_row(pipeline: Pipeline, variant: str, mask: Optional[str]) -> Tuple[MetricReport, float]:
    """
    Generate every clip with one checkpoint and score it.

    Raises:
        ArtifactIOError: If the checkpoint does not exist.
    """
    model = pipeline.load_model(variant, mask)
    generated = generate_all(model, pipeline.latents(), pipeline.codec(), pipeline.space, pipeline.config.sampler)
    clips = pipeline.clips()
    report = evaluate_parameters(
        [c.avatar_motion for c in clips],
        generated,
        [c.user_motion for c in clips],
        pipeline.config.metrics,
        metric_echo(pipeline.config.metrics, pipeline.config.sampler),
    )
    kept = [g for g in generated if g is not None]
    return report, mean_jerk(kept) if kept else math.nan


def run_ablation(pipeline: Pipeline, include_masks: bool = True) -> AblationTable:
    """
    Score every ablation row whose checkpoint exists.

    A missing checkpoint marks its row absent instead of failing the run.
    """
    rows = CONDITIONING_ROWS + (MASK_ROWS if include_masks else ())
    table = AblationTable()
    for label, variant, mask in rows:
        try:
            report, jerk = score_row(pipeline, variant, mask)
        except ArtifactIOError as e:
            logger.warning(f"Ablation row '{label}' is absent: {e}")
            table.reports[label] = None
            continue
        table.reports[label] = report
        table.jerk[label] = jerk
    return table


def write_ablation(pipeline: Pipeline, table: AblationTable) -> None:
    provenance = pipeline.provenance("ablation", **metric_echo(pipeline.config.metrics, pipeline.config.sampler))
    write_report_csv(pipeline.path("ablation.csv"), table.reports, provenance, (JERK_COLUMN,), table.extra)
    write_report_text(pipeline.path("ablation.txt"), table.reports, provenance, (JERK_COLUMN,), table.extra)
