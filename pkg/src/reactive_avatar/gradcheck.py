"""
Gradient checks.

Registers an analytic-versus-finite-difference comparison for every
differentiable operation the training code relies on. All checks run in
float64 on a tiny architecture so central differences are tight.
"""

import logging
from typing import Callable, List, Optional

import torch

from .codec.latent_codec import LatentCodec
from .core.config import CodecConfig, ModelConfig
from .core.masking import build_lookahead_mask
from .core.numeric import SeededRng, backprop, finite_diff_grad, masked_attention, relative_error
from .core.params import ParamStore
from .core.registry import GradCheckRegistry, GradCheckResult, register_check
from .core.schema import ConditionTriplet, PreferencePair
from .models.vector_field import MotionVectorField
from .training.diffusion_forcing import df_loss
from .training.preference import dpo_loss
from .world.dataset import WindowBatch

logger = logging.getLogger(__name__)

FD_STEP = 1e-5
TOLERANCE = 1e-4

TINY_MODEL = ModelConfig(
    latent_dim=4,
    audio_dim=2,
    width=8,
    heads=2,
    encoder_heads=2,
    depth=2,
    ffn_mult=2,
    block_size=1,
    look_ahead=1,
    cond_window=1,
    time_freq_dim=8,
)
TINY_CODEC = CodecConfig(obs_dim=16, id_dim=4, latent_dim=4, hidden=8)


def compare_gradients(
    name: str, store: ParamStore, objective: Callable[[], torch.Tensor], step: float = FD_STEP
) -> GradCheckResult:
    """Compare backprop against central differences of `objective` over `store`."""
    analytic = backprop(objective(), store)
    numeric = finite_diff_grad(objective, store, step)
    return GradCheckResult(
        name=name,
        rel_error=relative_error(analytic, numeric),
        tolerance=TOLERANCE,
        parameters=sum(t.numel() for _, t in store.trainable_items()),
    )


def _generator(seed: int) -> torch.Generator:
    return torch.Generator().manual_seed(seed)


def _random(shape, generator: torch.Generator, scale: float = 1.0) -> torch.Tensor:
    return scale * torch.randn(*shape, generator=generator, dtype=torch.float64)


def tiny_field(seed: int = 0, config: ModelConfig = TINY_MODEL) -> MotionVectorField:
    """A float64 field whose output head is randomised so every parameter gets a gradient."""
    model = MotionVectorField(config, seed=seed).double()
    generator = _generator(seed + 1000)
    with torch.no_grad():
        model.dfot.head.weight.copy_(_random(model.dfot.head.weight.shape, generator, 0.5))
        model.dfot.head.bias.copy_(_random(model.dfot.head.bias.shape, generator, 0.1))
    return model


def tiny_condition(n: int, generator: torch.Generator, config: ModelConfig = TINY_MODEL) -> ConditionTriplet:
    return ConditionTriplet(
        user_audio=_random((n, config.audio_dim), generator),
        user_motion=_random((n, config.latent_dim), generator),
        avatar_audio=_random((n, config.audio_dim), generator),
    )


@register_check("masked_attention")
def check_masked_attention() -> GradCheckResult:
    generator = _generator(1)
    n, width, heads = 4, 8, 2
    store = ParamStore()
    for key in ("q", "k", "v"):
        store.add(key, _random((n, width), generator).requires_grad_(True))
    weights = _random((n, width), generator)
    mask = build_lookahead_mask(n, 2, 0)

    def objective() -> torch.Tensor:
        out = masked_attention(store["q"], store["k"], store["v"], mask, heads, rotary=True)
        return (out * weights).sum()

    return compare_gradients("masked_attention", store, objective)


@register_check("dual_motion_encoder")
def check_encoder() -> GradCheckResult:
    model = tiny_field()
    condition = tiny_condition(3, _generator(2)).batched()
    weights = _random((1, 3, TINY_MODEL.width), _generator(3))
    store = ParamStore.from_module(model.encoder)

    def objective() -> torch.Tensor:
        return (model.encode_condition(condition) * weights).sum()

    return compare_gradients("dual_motion_encoder", store, objective)


@register_check("df_loss")
def check_df_loss() -> GradCheckResult:
    model = tiny_field()
    generator = _generator(4)
    n, batch = 2, 2
    window = WindowBatch(
        target=_random((batch, n, TINY_MODEL.latent_dim), generator),
        condition=ConditionTriplet.stack([tiny_condition(n, generator) for _ in range(batch)]),
        m_s=_random((batch, TINY_MODEL.latent_dim), generator),
        starts=[0] * batch,
        clip_indices=list(range(batch)),
    )
    store = model.parameter_store()

    def objective() -> torch.Tensor:
        return df_loss(model, window, SeededRng(5), p_drop=0.5)

    return compare_gradients("df_loss", store, objective)


@register_check("dpo_loss")
def check_dpo_loss() -> GradCheckResult:
    model = tiny_field(seed=0)
    ref = tiny_field(seed=1)
    for param in ref.parameters():
        param.requires_grad_(False)
    generator = _generator(6)
    n = 2
    pair = PreferencePair(
        winner=_random((n, TINY_MODEL.latent_dim), generator),
        loser=_random((n, TINY_MODEL.latent_dim), generator),
        condition=tiny_condition(n, generator),
        reference_motion=_random((TINY_MODEL.latent_dim,), generator),
    )
    store = model.parameter_store()

    def objective() -> torch.Tensor:
        return dpo_loss(model, ref, pair, SeededRng(7), beta=10.0).loss

    return compare_gradients("dpo_loss", store, objective)


@register_check("codec_reenactment")
def check_codec() -> GradCheckResult:
    codec = LatentCodec(TINY_CODEC, seed=0).double()
    generator = _generator(8)
    source = _random((3, TINY_CODEC.obs_dim), generator)
    driving = _random((3, TINY_CODEC.obs_dim), generator)
    target = _random((3, TINY_CODEC.obs_dim), generator)
    store = codec.parameter_store()

    def objective() -> torch.Tensor:
        return ((codec.reenact(source, driving) - target) ** 2).mean()

    return compare_gradients("codec_reenactment", store, objective)


def run_checks(names: Optional[List[str]] = None) -> List[GradCheckResult]:
    results = GradCheckRegistry.run(names)
    for result in results:
        status = "ok" if result.passed else "FAILED"
        logger.info(f"{result.name}: rel. err {result.rel_error:.3e} over {result.parameters} coordinates [{status}]")
    return results
