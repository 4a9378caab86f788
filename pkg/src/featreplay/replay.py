"""Pseudo-feature memory: synthesize, pseudo-label, store, flush.

The memory holds only model-generated content. It lives in process memory
for the duration of one task boundary and is never serialized; flushing it
(plus dropping encoded real features) is what keeps checkpoints free of
subject data.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .cvae import FeatureVae
from .errors import InputError, StateError
from .segmenter import UNet2D

DEFAULT_STRATA = 16


@dataclass
class MemoryEntry:
    u_n: np.ndarray  # pseudo-feature, normalized space
    soft_label: np.ndarray  # (C, H, W) probabilities
    t: int
    s: float


@dataclass
class Memory:
    entries: list[MemoryEntry] = field(default_factory=list)
    capacity_per_task: int = 0

    def __len__(self) -> int:
        return len(self.entries)

    def per_task_counts(self) -> dict[int, int]:
        counts: dict[int, int] = {}
        for e in self.entries:
            counts[e.t] = counts.get(e.t, 0) + 1
        return counts

    def sample(self, n: int, rng: np.random.Generator) -> list[MemoryEntry]:
        if not self.entries:
            raise StateError("memory is empty")
        idx = rng.integers(len(self.entries), size=n)
        return [self.entries[i] for i in idx]


def pseudo_label(unet: UNet2D, u_feature: np.ndarray) -> np.ndarray:
    """Soft label map for one feature vector, decoded without skips."""
    if u_feature.ndim != 1 or u_feature.size != unet.config.feature_dim:
        raise InputError(f"expected a flat ({unet.config.feature_dim},) feature vector")
    return unet.decode_batch(u_feature[None], skips=None)[0]


def _slice_positions(vae: FeatureVae, t: int, n: int, rng: np.random.Generator) -> np.ndarray:
    """Stratified slice positions for task ``t``.

    Prefers the grid of positions the VAE actually saw during training;
    otherwise stratifies the unit interval.
    """
    grid = vae.slice_grid.get(t)
    if grid is not None and len(grid) >= 2:
        reps = int(np.ceil(n / len(grid)))
        pos = np.tile(np.asarray(grid, dtype=np.float64), reps)[:n]
    else:
        strata = (np.arange(n) % DEFAULT_STRATA).astype(np.float64)
        pos = (strata + rng.uniform(size=n)) / DEFAULT_STRATA
    return pos


def build_memory(
    vae: FeatureVae, unet: UNet2D, tasks_seen: list[int], size_per_task: int, seed
) -> Memory:
    """Fill a balanced memory of (pseudo-feature, soft label, t, s) tuples.

    For each seen task: draw z from the unit Gaussian, decode it under the
    task/slice conditioning, then label the decoded feature with the current
    decoder (no skips). Deterministic in the seed.
    """
    if not vae.tasks_seen:
        raise StateError("VAE has not been trained on any task")
    unknown = [t for t in tasks_seen if t not in vae.tasks_seen]
    if unknown:
        raise StateError(f"VAE never saw tasks {unknown}")
    if size_per_task < 1:
        raise InputError("size_per_task must be positive")
    memory = Memory(capacity_per_task=size_per_task)
    for t in sorted(tasks_seen):
        rng = np.random.default_rng([seed, t] if np.isscalar(seed) else list(seed) + [t])
        pos = _slice_positions(vae, t, size_per_task, rng)
        z = rng.normal(size=(size_per_task, vae.config.d_u))
        u_n = vae.decode_batch(z, np.full(size_per_task, t, dtype=int), pos)
        u_raw = vae.denormalize(u_n)
        soft = unet.decode_batch(u_raw, skips=None)
        for i in range(size_per_task):
            memory.entries.append(
                MemoryEntry(u_n=u_n[i], soft_label=soft[i], t=int(t), s=float(pos[i]))
            )
    return memory


def flush_memory(memory: Memory) -> None:
    """Empty the buffer. Idempotent; nothing survives the task boundary."""
    memory.entries.clear()
