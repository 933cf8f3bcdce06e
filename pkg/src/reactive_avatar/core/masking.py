"""
Attention mask module.

This module builds the boolean attention masks used by the motion
generator (blockwise causal with look-ahead, plain blockwise causal,
framewise causal, the banded streaming mask) and by its condition
cross-attention (sliding window), and provides the causality probe that
verifies a sequence function honours a mask.
"""

import logging
from typing import Callable, List, Literal, Optional, Sequence, Tuple

import torch
from pydantic import BaseModel, ConfigDict, Field

logger = logging.getLogger(__name__)

MaskKind = Literal["lookahead", "blockwise", "framewise", "sliding-window", "banded", "custom"]
LookaheadUnit = Literal["block", "frame"]


class AttentionMask(BaseModel):
    """
    Boolean attention mask with construction metadata.

    Args:
        allowed: (rows, cols) boolean tensor; True means the query row may
                 attend the key column.
        kind: Which construction produced the mask.
        block_size: Frames per block, when the construction is blockwise.
        look_ahead: Look-ahead (blocks or frames, see `unit`), when relevant.
        unit: Granularity of `look_ahead`.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    allowed: torch.Tensor
    kind: MaskKind = "custom"
    block_size: Optional[int] = None
    look_ahead: Optional[int] = None
    unit: LookaheadUnit = "block"

    @property
    def rows(self) -> int:
        return int(self.allowed.shape[0])

    @property
    def cols(self) -> int:
        return int(self.allowed.shape[1])

    def row(self, i: int) -> List[int]:
        """Return the admitted column indices of row `i`."""
        return torch.nonzero(self.allowed[i]).flatten().tolist()

    def to_pgm(self) -> str:
        """Render the mask as a plain (P2) PGM image; admitted entries are white."""
        lines = ["P2", f"{self.cols} {self.rows}", "1"]
        for r in range(self.rows):
            lines.append(" ".join("1" if v else "0" for v in self.allowed[r].tolist()))
        return "\n".join(lines) + "\n"


def _positions(n: int, offset: int = 0) -> torch.Tensor:
    return torch.arange(offset, offset + n)


def lookahead_allowed(
    q_pos: torch.Tensor,
    k_pos: torch.Tensor,
    block_size: int,
    look_ahead: int,
    unit: LookaheadUnit = "block",
) -> torch.Tensor:
    """
    Evaluate the look-ahead causal inequality for absolute frame indices.

    With `unit="block"`: floor(j / B) <= floor(i / B) + l.
    With `unit="frame"`: j <= last frame of i's block + l.

    Returns:
        Boolean tensor of shape (len(q_pos), len(k_pos)).
    """
    q_block = torch.div(q_pos, block_size, rounding_mode="floor")[:, None]
    if unit == "block":
        k_block = torch.div(k_pos, block_size, rounding_mode="floor")[None, :]
        return k_block <= q_block + look_ahead
    block_end = (q_block + 1) * block_size - 1
    return k_pos[None, :] <= block_end + look_ahead


def past_region(q_pos: torch.Tensor, k_pos: torch.Tensor, block_size: int) -> torch.Tensor:
    """Return True where the key lies in the query's own block or an earlier one."""
    q_block = torch.div(q_pos, block_size, rounding_mode="floor")[:, None]
    k_block = torch.div(k_pos, block_size, rounding_mode="floor")[None, :]
    return k_block <= q_block


def history_allowed(
    q_pos: torch.Tensor, k_pos: torch.Tensor, block_size: int, history_blocks: int
) -> torch.Tensor:
    """Return True where the key block lies in [q_block - history_blocks, q_block]."""
    q_block = torch.div(q_pos, block_size, rounding_mode="floor")[:, None]
    k_block = torch.div(k_pos, block_size, rounding_mode="floor")[None, :]
    return (k_block <= q_block) & (k_block >= q_block - history_blocks)


def sliding_window_allowed(q_pos: torch.Tensor, k_pos: torch.Tensor, window: int) -> torch.Tensor:
    """Return True where i - window <= j < i + window."""
    diff = k_pos[None, :] - q_pos[:, None]
    return (diff >= -window) & (diff < window)


def build_lookahead_mask(
    n: int, block_size: int, look_ahead: int, unit: LookaheadUnit = "block"
) -> AttentionMask:
    """
    Build the blockwise look-ahead causal mask over `n` frames.

    Args:
        n: Number of frames (N >= 1).
        block_size: Frames per block (B >= 1).
        look_ahead: Look-ahead l >= 0, in blocks by default.
        unit: "block" to follow the block-index inequality, "frame" to admit
              l frames past the end of the query's block.

    Returns:
        The mask with kind "lookahead" (or "blockwise" when l == 0).
    """
    if n < 1 or block_size < 1 or look_ahead < 0:
        raise ValueError(f"Invalid mask parameters N={n}, B={block_size}, l={look_ahead}")
    pos = _positions(n)
    return AttentionMask(
        allowed=lookahead_allowed(pos, pos, block_size, look_ahead, unit),
        kind="lookahead" if look_ahead > 0 else "blockwise",
        block_size=block_size,
        look_ahead=look_ahead,
        unit=unit,
    )


def build_blockwise_mask(n: int, block_size: int) -> AttentionMask:
    """Build the plain blockwise causal mask (look-ahead 0)."""
    return build_lookahead_mask(n, block_size, 0)


def build_framewise_causal_mask(n: int) -> AttentionMask:
    """Build the lower-triangular (inclusive) framewise causal mask."""
    if n < 1:
        raise ValueError(f"Invalid mask size N={n}")
    allowed = torch.ones(n, n, dtype=torch.bool).tril()
    return AttentionMask(allowed=allowed, kind="framewise", block_size=1, look_ahead=0)


def build_sliding_window_mask(n: int, look_ahead: int) -> AttentionMask:
    """
    Build the condition sliding-window mask of width 2l.

    Frame i admits condition indices j with i - l <= j < i + l, clipped to
    the sequence.
    """
    if n < 1 or look_ahead < 1:
        raise ValueError(f"Invalid sliding window parameters N={n}, l={look_ahead}")
    pos = _positions(n)
    return AttentionMask(
        allowed=sliding_window_allowed(pos, pos, look_ahead),
        kind="sliding-window",
        look_ahead=look_ahead,
    )


def build_banded_mask(n: int, block_size: int, history_blocks: int) -> AttentionMask:
    """
    Build the blockwise causal mask limited to the `history_blocks` most
    recent earlier blocks; this is the attention pattern of a rolling KV
    cache holding that many blocks.
    """
    pos = _positions(n)
    return AttentionMask(
        allowed=history_allowed(pos, pos, block_size, history_blocks),
        kind="banded",
        block_size=block_size,
        look_ahead=0,
    )


def build_mask(
    kind: str, n: int, block_size: int, look_ahead: int, unit: LookaheadUnit = "block"
) -> AttentionMask:
    """
    Build the self-attention mask named by a model configuration.

    Args:
        kind: "lookahead", "blockwise" or "framewise".
        n: Number of frames.
        block_size: Frames per block.
        look_ahead: Look-ahead used by "lookahead".
        unit: Look-ahead granularity.

    Raises:
        ValueError: For an unknown kind.
    """
    if kind == "lookahead":
        return build_lookahead_mask(n, block_size, look_ahead, unit)
    if kind == "blockwise":
        return build_blockwise_mask(n, block_size)
    if kind == "framewise":
        return build_framewise_causal_mask(n)
    raise ValueError(f"Unknown mask kind '{kind}'")


class CausalityReport(BaseModel):
    """
    Result of a causality probe.

    Args:
        rows_checked: Query rows whose outputs were compared.
        rows_passed: Per-row pass flags, aligned with `rows_checked`.
        violations: (row, perturbed column) pairs where a forbidden input
                    changed the row's output.
    """

    rows_checked: List[int] = Field(default_factory=list)
    rows_passed: List[bool] = Field(default_factory=list)
    violations: List[Tuple[int, int]] = Field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.violations and all(self.rows_passed)


def _row_groups(mask: AttentionMask) -> List[List[int]]:
    if mask.block_size and mask.kind in ("lookahead", "blockwise", "banded"):
        size = mask.block_size
        return [list(range(s, min(s + size, mask.rows))) for s in range(0, mask.rows, size)]
    return [[r] for r in range(mask.rows)]


def causality_probe(
    forward: Callable[..., torch.Tensor],
    mask: AttentionMask,
    inputs: Sequence[torch.Tensor],
    seed: int = 0,
) -> CausalityReport:
    """
    Verify that `forward` never lets a masked-out input reach a query row.

    For every group of rows (a block for blockwise masks, otherwise a single
    row) the inputs at columns no row of the group admits are replaced by
    fresh uniform values. The group's outputs must stay bit-identical. When
    they change, each forbidden column is perturbed on its own to name the
    offending (row, column) pairs.

    Args:
        forward: Deterministic function of `inputs`; every input and the
                 output carry frames on dimension 0.
        mask: The dependency structure the function claims to honour.
        inputs: Tensors to perturb; dimension 0 has mask.cols entries.
        seed: Seed of the perturbation values.

    Returns:
        The probe report.
    """
    generator = torch.Generator().manual_seed(seed)

    def perturbed(columns: List[int]) -> List[torch.Tensor]:
        result = []
        for tensor in inputs:
            clone = tensor.clone()
            noise = torch.rand(clone[columns].shape, generator=generator, dtype=clone.dtype)
            clone[columns] = noise
            result.append(clone)
        return result

    with torch.no_grad():
        baseline = forward(*inputs)
        report = CausalityReport()
        for rows in _row_groups(mask):
            admitted = mask.allowed[rows].any(dim=0)
            forbidden = torch.nonzero(~admitted).flatten().tolist()
            report.rows_checked.extend(rows)
            if not forbidden:
                report.rows_passed.extend([True] * len(rows))
                continue
            output = forward(*perturbed(forbidden))
            changed = [r for r in rows if not torch.equal(output[r], baseline[r])]
            report.rows_passed.extend(r not in changed for r in rows)
            if not changed:
                continue
            found = set()
            for column in forbidden:
                single = forward(*perturbed([column]))
                for r in changed:
                    if not torch.equal(single[r], baseline[r]):
                        report.violations.append((r, column))
                        found.add(r)
            # -1 marks a change only reproduced by the joint perturbation
            report.violations.extend((r, -1) for r in changed if r not in found)
    if report.violations:
        logger.warning(f"Causality probe found {len(report.violations)} violations")
    return report
