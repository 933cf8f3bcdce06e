"""
Interaction metrics module.

This module scores motion-parameter sequences for reactiveness (rPCC
against the user's motion), richness (SID over K-means cluster occupancy
and temporal variance) and distributional fit (Frechet distance), plus
the jerk smoothness statistic used by the mask ablation.

Sequences are numpy arrays of shape (N, channels). Expression and pose
channels are selected by index.
"""

import logging
import math
from typing import Callable, Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg
from scipy.stats import entropy
from sklearn.cluster import KMeans

from ..codec.latent_codec import LatentCodec, ObservationSpace, decode_parameters
from ..core.config import MetricConfig, SamplerConfig
from ..core.field import VectorField
from ..core.schema import MetricReport
from ..sampling.session import stream_clip
from ..world.dataset import LatentClip
from ..world.dyadic import EXPRESSION, POSE, DyadicClip

logger = logging.getLogger(__name__)

EIGEN_TOLERANCE = 1e-8
CHANNEL_GROUPS = {"Exp": EXPRESSION, "Pose": POSE}


def pcc(z: np.ndarray, x: np.ndarray) -> np.ndarray:
    """
    Pearson correlation per channel between two sequences over frames.

    Args:
        z: (N, c) sequence.
        x: (N, c) sequence.

    Returns:
        (c,) correlations; NaN where either channel has zero variance.

    Raises:
        ValueError: If the shapes differ or N < 2.
    """
    z = np.asarray(z, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if z.shape != x.shape:
        raise ValueError(f"PCC needs equal shapes, got {z.shape} and {x.shape}")
    if z.shape[0] < 2:
        raise ValueError("PCC needs at least two frames")
    dz = z - z.mean(axis=0)
    dx = x - x.mean(axis=0)
    denom = np.sqrt((dz ** 2).sum(axis=0) * (dx ** 2).sum(axis=0))
    with np.errstate(invalid="ignore", divide="ignore"):
        values = (dz * dx).sum(axis=0) / denom
    values[denom == 0] = np.nan
    return values


class RPCCResult(NamedTuple):
    """rPCC per channel group and the number of undefined channels."""

    values: Dict[str, float]
    undefined: int


def rpcc(
    y_gt: np.ndarray,
    y_gen: np.ndarray,
    x_user: np.ndarray,
    groups: Optional[Dict[str, Tuple[int, ...]]] = None,
) -> RPCCResult:
    """
    |PCC(y | x) - PCC(y_hat | x)| averaged within each channel group.

    Channels where a correlation is undefined are excluded and counted; a
    group with no defined channel scores NaN.
    """
    groups = CHANNEL_GROUPS if groups is None else groups
    if not (np.shape(y_gt) == np.shape(y_gen) == np.shape(x_user)):
        raise ValueError("rPCC needs three sequences of equal shape")
    delta = np.abs(pcc(y_gt, x_user) - pcc(y_gen, x_user))
    values = {}
    undefined = 0
    for name, channels in groups.items():
        group = delta[list(channels)]
        defined = group[~np.isnan(group)]
        undefined += int(group.size - defined.size)
        values[name] = float(defined.mean()) if defined.size else math.nan
    if undefined:
        logger.warning(f"rPCC excluded {undefined} channels with zero variance")
    return RPCCResult(values, undefined)


def assignment_entropy(labels: np.ndarray, k: int) -> float:
    """Natural-log Shannon entropy of cluster occupancy."""
    counts = np.bincount(np.asarray(labels, dtype=np.int64), minlength=k)
    return float(entropy(counts))


def sid(sequences: Sequence[np.ndarray], k: int, restarts: int = 5, seed: int = 0) -> float:
    """
    Shannon index of K-means cluster occupancy.

    K-means (random initialisation, `restarts` runs, best inertia kept) is
    fit on the frames of all sequences pooled; each sequence's entropy of
    assignments is averaged.

    Raises:
        ValueError: If there are fewer pooled frames than clusters.
    """
    arrays = [np.asarray(s, dtype=np.float64) for s in sequences]
    pooled = np.concatenate(arrays, axis=0)
    if k > pooled.shape[0]:
        raise ValueError(f"SID needs at least K={k} frames, got {pooled.shape[0]}")
    if np.unique(pooled, axis=0).shape[0] == 1:
        return 0.0
    kmeans = KMeans(n_clusters=k, init="random", n_init=restarts, random_state=seed).fit(pooled)
    labels = kmeans.labels_
    bounds = np.cumsum([0] + [a.shape[0] for a in arrays])
    return float(np.mean([assignment_entropy(labels[lo:hi], k) for lo, hi in zip(bounds[:-1], bounds[1:])]))


def var_metric(sequences: Sequence[np.ndarray]) -> float:
    """Temporal variance per channel, averaged over channels then sequences."""
    values = []
    for sequence in sequences:
        sequence = np.asarray(sequence, dtype=np.float64)
        if sequence.shape[0] < 2:
            raise ValueError("Var needs at least two frames")
        values.append(sequence.var(axis=0).mean())
    return float(np.mean(values))


def _symmetric_sqrt(matrix: np.ndarray, label: str) -> np.ndarray:
    eigenvalues, vectors = scipy.linalg.eigh((matrix + matrix.T) / 2.0)
    if eigenvalues.min() < -EIGEN_TOLERANCE:
        raise ValueError(f"{label} is not positive semi-definite: eigenvalues {eigenvalues.tolist()}")
    return (vectors * np.sqrt(np.clip(eigenvalues, 0.0, None))) @ vectors.T


def frechet_from_moments(
    mu_gen: np.ndarray, cov_gen: np.ndarray, mu_gt: np.ndarray, cov_gt: np.ndarray
) -> float:
    """
    ||mu_gen - mu_gt||^2 + tr(S_gen + S_gt - 2 (S_gen S_gt)^(1/2)).

    The trace of the square root is taken from the eigenvalues of
    S_gt^(1/2) S_gen S_gt^(1/2).

    Raises:
        ValueError: If an eigenvalue falls below -1e-8.
    """
    mu_gen, mu_gt = np.atleast_1d(mu_gen).astype(np.float64), np.atleast_1d(mu_gt).astype(np.float64)
    cov_gen, cov_gt = np.atleast_2d(cov_gen).astype(np.float64), np.atleast_2d(cov_gt).astype(np.float64)
    root_gt = _symmetric_sqrt(cov_gt, "Ground-truth covariance")
    product = root_gt @ cov_gen @ root_gt
    eigenvalues = scipy.linalg.eigvalsh((product + product.T) / 2.0)
    if eigenvalues.min() < -EIGEN_TOLERANCE:
        raise ValueError(f"Covariance product is not positive semi-definite: eigenvalues {eigenvalues.tolist()}")
    trace_root = np.sqrt(np.clip(eigenvalues, 0.0, None)).sum()
    mean_term = float(((mu_gen - mu_gt) ** 2).sum())
    return mean_term + float(np.trace(cov_gen) + np.trace(cov_gt) - 2.0 * trace_root)


def frechet_distance(generated: Sequence[np.ndarray], ground_truth: Sequence[np.ndarray]) -> float:
    """
    Frechet distance between Gaussian fits of pooled frames.

    Raises:
        ValueError: If either set has no more frames than channels.
    """
    gen = np.concatenate([np.asarray(s, dtype=np.float64) for s in generated], axis=0)
    gt = np.concatenate([np.asarray(s, dtype=np.float64) for s in ground_truth], axis=0)
    dim = gt.shape[1]
    if gen.shape[0] < dim + 1 or gt.shape[0] < dim + 1:
        raise ValueError(f"Frechet distance needs at least {dim + 1} frames per set")
    return frechet_from_moments(
        gen.mean(axis=0), np.cov(gen, rowvar=False), gt.mean(axis=0), np.cov(gt, rowvar=False)
    )


def jerk(sequence: np.ndarray) -> float:
    """Mean per-frame norm of the second difference m[n+1] - 2 m[n] + m[n-1]."""
    sequence = np.asarray(sequence, dtype=np.float64)
    if sequence.shape[0] < 3:
        raise ValueError("Jerk needs at least three frames")
    second = sequence[2:] - 2.0 * sequence[1:-1] + sequence[:-2]
    return float(np.linalg.norm(second, axis=-1).mean())


def mean_jerk(sequences: Sequence[np.ndarray]) -> float:
    return float(np.mean([jerk(s) for s in sequences]))


def metric_echo(config: MetricConfig, sampler: Optional[SamplerConfig] = None) -> Dict[str, str]:
    echo = {
        "metrics.k_expression": str(config.expression_k),
        "metrics.k_pose": str(config.pose_k),
        "metrics.restarts": str(config.restarts),
        "metrics.kmeans_seed": str(config.kmeans_seed),
    }
    if sampler is not None:
        echo.update({
            "sampler.seed": str(sampler.seed),
            "sampler.ode_steps": str(sampler.ode_steps),
            "sampler.guidance_scale": str(sampler.guidance_scale),
        })
    return echo


def evaluate_parameters(
    ground_truth: Sequence[np.ndarray],
    generated: Sequence[Optional[np.ndarray]],
    user: Sequence[np.ndarray],
    config: MetricConfig,
    echo: Optional[Dict[str, str]] = None,
) -> MetricReport:
    """
    Score generated avatar parameters against ground truth and the user.

    A None entry in `generated` marks a clip whose generation failed; it is
    counted and left out.

    Returns:
        The metric report; values of metrics that failed are NaN.
    """
    kept = [i for i, g in enumerate(generated) if g is not None]
    report = MetricReport(
        clips=len(generated),
        failed_clips=len(generated) - len(kept),
        config=echo if echo is not None else metric_echo(config),
    )
    gt, gen, usr = [], [], []
    for i in kept:
        n = min(len(ground_truth[i]), len(generated[i]))
        gt.append(np.asarray(ground_truth[i], dtype=np.float64)[:n])
        gen.append(np.asarray(generated[i], dtype=np.float64)[:n])
        usr.append(np.asarray(user[i], dtype=np.float64)[:n])

    rpcc_values: Dict[str, List[float]] = {name: [] for name in CHANNEL_GROUPS}
    for y, y_hat, x in zip(gt, gen, usr):
        try:
            result = rpcc(y, y_hat, x)
        except ValueError as e:
            report.failed_clips += 1
            logger.warning(f"rPCC failed for a clip: {e}")
            continue
        report.undefined_channels += result.undefined
        for name, value in result.values.items():
            if not math.isnan(value):
                rpcc_values[name].append(value)

    clusters = {"Exp": config.expression_k, "Pose": config.pose_k}
    metrics: Dict[str, Callable[[str, Tuple[int, ...]], float]] = {
        "rPCC": lambda name, _: float(np.mean(rpcc_values[name])) if rpcc_values[name] else math.nan,
        "SID": lambda name, ch: sid([g[:, ch] for g in gen], clusters[name], config.restarts, config.kmeans_seed),
        "Var": lambda name, ch: var_metric([g[:, ch] for g in gen]),
        "FD": lambda name, ch: frechet_distance([g[:, ch] for g in gen], [y[:, ch] for y in gt]),
    }
    for metric, compute in metrics.items():
        for name, channels in CHANNEL_GROUPS.items():
            key = f"{metric}-{name}"
            try:
                report.values[key] = compute(name, list(channels)) if gen else math.nan
            except ValueError as e:
                logger.warning(f"{key} failed: {e}")
                report.values[key] = math.nan
    return report


def generate_parameters(
    field: VectorField,
    latent: LatentClip,
    codec: LatentCodec,
    space: ObservationSpace,
    sampler: SamplerConfig,
) -> np.ndarray:
    """Stream a clip's avatar motion and decode it to motion parameters."""
    config = sampler.model_copy(update={"seed": sampler.seed + latent.clip_index})
    n = (latent.n_frames // field.block_size) * field.block_size
    motion = stream_clip(field, latent.condition(0, n), latent.z_s, latent.m_s, config)
    return decode_parameters(codec, space, latent.z_s.to(motion.dtype), motion)


def generate_all(
    field: VectorField,
    latents: Sequence[LatentClip],
    codec: LatentCodec,
    space: ObservationSpace,
    sampler: SamplerConfig,
) -> List[Optional[np.ndarray]]:
    """Generate parameters for every clip; a failed clip yields None."""
    generated: List[Optional[np.ndarray]] = []
    for latent in latents:
        try:
            parameters = generate_parameters(field, latent, codec, space, sampler)
            if not np.isfinite(parameters).all():
                raise ValueError("decoded parameters are not finite")
            generated.append(parameters)
        except (ValueError, RuntimeError) as e:
            logger.warning(f"Generation failed for clip {latent.clip_index}: {e}")
            generated.append(None)
    return generated


def evaluate(
    field: VectorField,
    clips: Sequence[DyadicClip],
    latents: Sequence[LatentClip],
    codec: LatentCodec,
    space: ObservationSpace,
    sampler: SamplerConfig,
    config: MetricConfig,
) -> MetricReport:
    """
    Generate avatar motion for every clip and score it.

    Generation failures are recorded per clip; the report is still produced.
    """
    generated = generate_all(field, latents, codec, space, sampler)
    report = evaluate_parameters(
        [c.avatar_motion for c in clips],
        generated,
        [c.user_motion for c in clips],
        config,
        metric_echo(config, sampler),
    )
    logger.info(f"Evaluated {report.clips} clips ({report.failed_clips} failed)")
    return report
