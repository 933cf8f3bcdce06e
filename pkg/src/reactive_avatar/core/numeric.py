"""
Numeric core module.

This module provides the dense-tensor primitives every other part of
reactive_avatar builds on: seeded random sampling, rotary position
embedding, masked multi-head attention, reverse-mode gradients and the
central finite-difference oracle used to check them.

Tensors are torch tensors. Training and inference run in float32, the
gradient oracles run in float64.
"""

import hashlib
import logging
import math
from typing import Callable, Dict, Optional, Sequence, Tuple, Union

import torch

from .errors import DegenerateMaskError, ShapeMismatchError
from .masking import AttentionMask
from .params import ParamStore

logger = logging.getLogger(__name__)

ROPE_BASE = 10000.0
SEED_MASK = (1 << 63) - 1


def derive_seed(seed: int, *keys: Union[int, str]) -> int:
    """
    Derive a child seed from a parent seed and a sequence of keys.

    Args:
        seed: The parent seed.
        *keys: Integers or strings identifying the child stream.

    Returns:
        A 63-bit seed that depends only on the inputs.
    """
    text = ":".join([str(seed)] + [str(k) for k in keys])
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little") & SEED_MASK


class SeededRng:
    """
    Deterministic random stream.

    Identical seeds with identical call sequences produce identical outputs.
    The stream is backed by a CPU torch generator, which is platform
    independent.

    Args:
        seed: The 64-bit seed of the stream.
    """

    def __init__(self, seed: int):
        self.seed = int(seed) & SEED_MASK
        self.generator = torch.Generator(device="cpu")
        self.generator.manual_seed(self.seed)

    def spawn(self, *keys: Union[int, str]) -> "SeededRng":
        """Return an independent child stream keyed by `keys`."""
        return SeededRng(derive_seed(self.seed, *keys))

    def normal(self, shape: Sequence[int], dtype: torch.dtype = torch.float32) -> torch.Tensor:
        """Draw i.i.d. standard normal values."""
        return torch.randn(tuple(shape), generator=self.generator, dtype=dtype)

    def uniform(self, shape: Sequence[int], dtype: torch.dtype = torch.float32) -> torch.Tensor:
        """Draw i.i.d. values from U[0, 1)."""
        return torch.rand(tuple(shape), generator=self.generator, dtype=dtype)

    def randint(self, low: int, high: int, shape: Sequence[int] = ()) -> torch.Tensor:
        """Draw integers from [low, high)."""
        return torch.randint(low, high, tuple(shape), generator=self.generator)


def gaussian(rng: SeededRng, shape: Sequence[int], dtype: torch.dtype = torch.float32) -> torch.Tensor:
    """
    Sample a tensor of i.i.d. standard normal values.

    Args:
        rng: The random stream to draw from.
        shape: Shape of the tensor.
        dtype: Floating dtype of the result.

    Returns:
        The sampled tensor.
    """
    return rng.normal(shape, dtype=dtype)


def apply_rotary(
    x: torch.Tensor, positions: torch.Tensor, base: float = ROPE_BASE
) -> torch.Tensor:
    """
    Rotate adjacent channel pairs of `x` by position-dependent angles.

    Args:
        x: Tensor of shape (..., N, D) with D even.
        positions: Frame indices of shape (N,).
        base: Frequency base of the embedding.

    Returns:
        The rotated tensor, same shape as `x`.
    """
    dim = x.shape[-1]
    if dim % 2 != 0:
        raise ShapeMismatchError(f"Rotary embedding needs an even channel count, got {dim}")
    if positions.shape[0] != x.shape[-2]:
        raise ShapeMismatchError(
            f"Got {positions.shape[0]} positions for {x.shape[-2]} tokens"
        )
    pair = torch.arange(0, dim, 2, dtype=x.dtype)
    inv_freq = 1.0 / (base ** (pair / dim))
    angles = torch.outer(positions.to(x.dtype), inv_freq)
    cos, sin = torch.cos(angles), torch.sin(angles)
    x_even = x[..., 0::2]
    x_odd = x[..., 1::2]
    rotated = torch.stack(
        (x_even * cos - x_odd * sin, x_even * sin + x_odd * cos), dim=-1
    )
    return rotated.flatten(-2)


def _mask_tensor(mask: Union[AttentionMask, torch.Tensor], rows: int, cols: int) -> torch.Tensor:
    allowed = mask.allowed if isinstance(mask, AttentionMask) else mask
    if allowed.dtype != torch.bool:
        allowed = allowed.bool()
    if tuple(allowed.shape[-2:]) != (rows, cols):
        raise ShapeMismatchError(
            f"Mask of shape {tuple(allowed.shape[-2:])} does not match {rows}x{cols} scores"
        )
    if not bool(allowed.any(dim=-1).all()):
        empty = torch.nonzero(~allowed.any(dim=-1)).flatten().tolist()
        raise DegenerateMaskError(f"Query rows {empty[:8]} have no admissible key")
    return allowed


def split_heads(x: torch.Tensor, heads: int) -> torch.Tensor:
    """Reshape (..., N, h) into (..., heads, N, h / heads)."""
    *lead, n, width = x.shape
    return x.reshape(*lead, n, heads, width // heads).transpose(-3, -2)


def merge_heads(x: torch.Tensor) -> torch.Tensor:
    """Reshape (..., heads, N, d) back into (..., N, heads * d)."""
    *lead, heads, n, dim = x.shape
    return x.transpose(-3, -2).reshape(*lead, n, heads * dim)


def masked_attention(
    q: torch.Tensor,
    k: torch.Tensor,
    v: torch.Tensor,
    mask: Union[AttentionMask, torch.Tensor],
    heads: int,
    rotary: bool = False,
    q_positions: Optional[torch.Tensor] = None,
    k_positions: Optional[torch.Tensor] = None,
    return_weights: bool = False,
) -> Union[torch.Tensor, Tuple[torch.Tensor, torch.Tensor]]:
    """
    Multi-head scaled dot-product attention under a boolean mask.

    Masked scores receive an additive -inf before the softmax, so masked keys
    contribute exactly zero to the output.

    Args:
        q: Queries of shape (..., N, h).
        k: Keys of shape (..., Nk, h).
        v: Values of shape (..., Nk, h).
        mask: Boolean (N, Nk) mask or AttentionMask; True means may attend.
        heads: Number of attention heads; must divide h.
        rotary: Whether to rotate q and k per head before scoring.
        q_positions: Frame indices of the queries (default 0..N-1).
        k_positions: Frame indices of the keys (default 0..Nk-1).
        return_weights: Also return the (..., heads, N, Nk) attention weights.

    Returns:
        Attention output of shape (..., N, h), optionally with the weights.

    Raises:
        ShapeMismatchError: If shapes are inconsistent or h % heads != 0.
        DegenerateMaskError: If a query row has no admissible key.
    """
    width = q.shape[-1]
    if width % heads != 0:
        raise ShapeMismatchError(f"Width {width} is not divisible by {heads} heads")
    if k.shape[-1] != width or v.shape[-1] != width or k.shape[-2] != v.shape[-2]:
        raise ShapeMismatchError(
            f"Incompatible attention shapes q={tuple(q.shape)} k={tuple(k.shape)} v={tuple(v.shape)}"
        )
    n, nk = q.shape[-2], k.shape[-2]
    allowed = _mask_tensor(mask, n, nk)
    if allowed.dim() > 2:
        # per-sample masks broadcast over heads
        allowed = allowed.unsqueeze(-3)

    qh, kh, vh = split_heads(q, heads), split_heads(k, heads), split_heads(v, heads)
    if rotary:
        if q_positions is None:
            q_positions = torch.arange(n)
        if k_positions is None:
            k_positions = torch.arange(nk)
        qh = apply_rotary(qh, q_positions)
        kh = apply_rotary(kh, k_positions)

    scale = 1.0 / math.sqrt(width // heads)
    scores = torch.matmul(qh, kh.transpose(-1, -2)) * scale
    scores = scores.masked_fill(~allowed, float("-inf"))
    weights = torch.softmax(scores, dim=-1)
    out = merge_heads(torch.matmul(weights, vh))
    if return_weights:
        return out, weights
    return out


def backprop(loss: torch.Tensor, store: ParamStore) -> Dict[str, torch.Tensor]:
    """
    Compute gradients of a scalar loss for every trainable parameter.

    Args:
        loss: A 0-dim tensor built from the store's tensors.
        store: The parameters to differentiate against.

    Returns:
        Gradients keyed by parameter name, in store order. Parameters the
        loss does not reach receive zeros.

    Raises:
        ShapeMismatchError: If `loss` is not a scalar.
    """
    if loss.dim() != 0:
        raise ShapeMismatchError(f"backprop needs a scalar loss, got shape {tuple(loss.shape)}")
    names = [name for name, _ in store.trainable_items()]
    tensors = [store[name] for name in names]
    grads = torch.autograd.grad(loss, tensors, allow_unused=True)
    return {
        name: (torch.zeros_like(t) if g is None else g.detach())
        for name, t, g in zip(names, tensors, grads)
    }


def finite_diff_grad(
    f: Callable[[], Union[float, torch.Tensor]], store: ParamStore, step: float = 1e-5
) -> Dict[str, torch.Tensor]:
    """
    Estimate gradients by central differences, one coordinate at a time.

    Args:
        f: Zero-argument function evaluating the scalar objective with the
           current values in `store`.
        store: Float64 parameters to perturb in place; restored afterwards.
        step: Perturbation size h > 0.

    Returns:
        Gradient estimates keyed by parameter name.

    Raises:
        ValueError: If `step` is not positive, a parameter is not float64, or
                    `f` returns a non-finite value.
    """
    if step <= 0:
        raise ValueError(f"Finite-difference step must be positive, got {step}")

    def evaluate() -> float:
        value = f()
        value = float(value.item() if isinstance(value, torch.Tensor) else value)
        if not math.isfinite(value):
            raise ValueError("Objective returned a non-finite value during finite differences")
        return value

    estimates: Dict[str, torch.Tensor] = {}
    with torch.no_grad():
        for name, tensor in store.trainable_items():
            if tensor.dtype != torch.float64:
                raise ValueError(f"Parameter '{name}' must be float64 for finite differences")
            flat = tensor.view(-1)
            grad = torch.zeros_like(flat)
            for i in range(flat.numel()):
                original = flat[i].item()
                flat[i] = original + step
                upper = evaluate()
                flat[i] = original - step
                lower = evaluate()
                flat[i] = original
                grad[i] = (upper - lower) / (2.0 * step)
            estimates[name] = grad.view_as(tensor)
    return estimates


def relative_error(a: Dict[str, torch.Tensor], b: Dict[str, torch.Tensor]) -> float:
    """
    Relative L2 error between two gradient dictionaries over shared names.

    Returns:
        ||a - b|| / max(||a||, ||b||, 1e-12).
    """
    names = [name for name in a if name in b]
    if not names:
        return 0.0
    flat_a = torch.cat([a[n].reshape(-1).double() for n in names])
    flat_b = torch.cat([b[n].reshape(-1).double() for n in names])
    denom = max(flat_a.norm().item(), flat_b.norm().item(), 1e-12)
    return (flat_a - flat_b).norm().item() / denom
