"""Out-of-distribution scoring and threshold calibration.

The primary score is the VAE reconstruction error of a volume's feature
codes, minimized over the task identities seen so far; a volume is accepted
as in-distribution when its score stays at or below a threshold calibrated
to a 95% true-positive rate on validation volumes. Baseline scorers
(feature-space Mahalanobis distance and maximum softmax probability) share
the same calibrate/classify machinery. Scoring never mutates model state
and never touches the segmentation output.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cvae import FeatureVae
from .datagen import Volume, slice_volume
from .errors import InputError, StateError
from .segmenter import UNet2D

TPR_TARGET = 0.95


@dataclass
class OodVerdict:
    score: float
    tau: float
    is_id: bool
    best_task: int
    per_task_scores: dict[int, float]


@dataclass
class TaskGaussian:
    """Diagonal Gaussian over posterior means of one task's training slices."""

    mean: np.ndarray
    var: np.ndarray  # variance floor applied at fit time


def _encode_volume(unet: UNet2D, vae: FeatureVae, v: Volume):
    samples = slice_volume(v, task=0, input_shape=tuple(unet.config.input_shape))
    x = np.stack([sm.image for sm in samples])[:, None]
    u, _ = unet.encode_batch(x)
    s = np.array([sm.s for sm in samples])
    return vae.normalize(u), s


def reconstruction_score(
    vae: FeatureVae, unet: UNet2D, v: Volume, tasks_seen: list[int]
) -> tuple[dict[int, float], float]:
    """Mean per-slice reconstruction MSE under each seen task; min over tasks.

    Reconstruction goes through the posterior mean so verdicts are
    deterministic, and errors live in the normalized feature space.
    """
    if not tasks_seen:
        raise StateError("no tasks seen yet")
    if vae.norm_mean is None:
        raise StateError("VAE has no normalization statistics; train it first")
    u_n, s = _encode_volume(unet, vae, v)
    per_task = {}
    for t in tasks_seen:
        u_hat = vae.reconstruct_mean(u_n, np.full(len(s), t, dtype=int), s)
        per_task[int(t)] = float(((u_n - u_hat) ** 2).mean(axis=1).mean())
    score = min(per_task.values())
    return per_task, float(score)


def calibrate_threshold(id_val_scores: list[float]) -> float:
    """Threshold at the 95th percentile (linear interpolation) of ID scores.

    With few samples the interpolated percentile can sit below the value
    needed to accept 95% of the calibration set; in that case the threshold
    is raised to the smallest order statistic that restores the guarantee.
    """
    scores = np.asarray(id_val_scores, dtype=np.float64)
    if scores.size == 0:
        raise StateError("cannot calibrate on an empty score list")
    if scores.size < 5:
        raise StateError("need at least 5 calibration scores")
    tau = float(np.percentile(scores, 100 * TPR_TARGET, method="linear"))
    if (scores <= tau).mean() < TPR_TARGET:
        k = int(np.ceil(TPR_TARGET * scores.size)) - 1
        tau = float(np.sort(scores)[k])
    return tau


def classify(score: float, tau: float) -> bool:
    """In-distribution iff score <= tau (boundary inclusive)."""
    return bool(score <= tau)


def verdict(per_task_scores: dict[int, float], tau: float) -> OodVerdict:
    best_task = min(per_task_scores, key=per_task_scores.get)
    score = per_task_scores[best_task]
    return OodVerdict(
        score=float(score),
        tau=float(tau),
        is_id=classify(score, tau),
        best_task=int(best_task),
        per_task_scores={int(k): float(v) for k, v in per_task_scores.items()},
    )


# ---------------------------------------------------------------------------
# baseline / ablation scorers
# ---------------------------------------------------------------------------


def fit_task_gaussian(mus: np.ndarray, var_floor: float = 1e-6) -> TaskGaussian:
    """Fit the diagonal Gaussian of posterior means for one task."""
    if mus.ndim != 2:
        raise InputError("expected (N, d) posterior means")
    return TaskGaussian(mean=mus.mean(axis=0), var=np.maximum(mus.var(axis=0), var_floor))


def mahalanobis_distance(point: np.ndarray, gaussian: TaskGaussian) -> float:
    d = point - gaussian.mean
    return float(np.sqrt((d * d / gaussian.var).sum()))


def mahalanobis_score(
    vae: FeatureVae,
    unet: UNet2D,
    v: Volume,
    tasks_seen: list[int],
    task_gaussians: dict[int, TaskGaussian],
) -> tuple[dict[int, float], float]:
    """Min over tasks of the mean slice-wise Mahalanobis distance of the
    posterior mean to that task's Gaussian."""
    if not tasks_seen:
        raise StateError("no tasks seen yet")
    missing = [t for t in tasks_seen if t not in task_gaussians]
    if missing:
        raise StateError(f"no fitted Gaussians for tasks {missing}")
    u_n, s = _encode_volume(unet, vae, v)
    per_task = {}
    for t in tasks_seen:
        mu, _ = vae.encode_batch(u_n, np.full(len(s), t, dtype=int), s)
        dists = [mahalanobis_distance(mu[k], task_gaussians[t]) for k in range(mu.shape[0])]
        per_task[int(t)] = float(np.mean(dists))
    return per_task, float(min(per_task.values()))


def max_softmax_score(unet: UNet2D, v: Volume) -> float:
    """1 - mean over pixels of the max class probability (higher = more OoD)."""
    samples = slice_volume(v, task=0, input_shape=tuple(unet.config.input_shape))
    x = np.stack([sm.image for sm in samples])[:, None]
    probs = unet.forward_batch(x)
    return float(1.0 - probs.max(axis=1).mean())
