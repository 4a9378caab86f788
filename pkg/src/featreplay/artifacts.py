"""Seeded MRI-style artifact augmentations for building synthetic OoD data.

Three families: multiplicative polynomial bias fields, frequency-domain line
attenuation (ghosting) and frequency-domain impulses (spiking). All reduce to
the identity as their strength parameter goes to zero, and all are applied
per 2D slice.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .datagen import Volume, slicing_axis
from .errors import ConfigError, InputError

ARTIFACT_KINDS = ("bias_field", "ghosting", "spiking")


@dataclass
class ArtifactConfig:
    """Default severities; pronounced enough to be visible at a glance."""

    bias_order: int = 3
    bias_coeff_range: float = 0.5
    ghost_count: int = 4
    ghost_axis: int = 0
    ghost_intensity: float = 0.7
    spike_count: int = 2
    spike_amplitude: float = 0.3

    def validate(self) -> None:
        if self.bias_order < 1 or self.bias_coeff_range <= 0:
            raise ConfigError("bias field needs order >= 1 and a positive coefficient range")
        if self.ghost_count < 1 or not (0 < self.ghost_intensity <= 1):
            raise ConfigError("ghosting needs >= 1 ghost and intensity in (0, 1]")
        if self.ghost_axis not in (0, 1):
            raise ConfigError("ghost axis must be 0 or 1")
        if self.spike_count < 1 or self.spike_amplitude <= 0:
            raise ConfigError("spiking needs >= 1 spike and a positive amplitude")


def _check_image(image: np.ndarray) -> np.ndarray:
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2:
        raise InputError("artifact ops expect a 2D slice")
    if not np.isfinite(image).all():
        raise InputError("non-finite input image")
    return image


def apply_bias_field(image: np.ndarray, order: int, coeff_range: float, seed) -> np.ndarray:
    """Multiply by exp(P(x, y)) for a random degree-``order`` polynomial P.

    Coordinates are normalized to [-1, 1]; coefficients are drawn uniformly
    from [-coeff_range, coeff_range]. The field exp(P) is strictly positive.
    """
    image = _check_image(image)
    if order < 1:
        raise ConfigError("polynomial order must be >= 1")
    if coeff_range < 0:
        raise ConfigError("coeff_range must be non-negative")
    rng = np.random.default_rng(seed)
    h, w = image.shape
    ys = np.linspace(-1.0, 1.0, h)[:, None]
    xs = np.linspace(-1.0, 1.0, w)[None, :]
    poly = np.zeros_like(image)
    for i in range(order + 1):
        for j in range(order + 1 - i):
            if i == 0 and j == 0:
                continue  # constant term would rescale globally, not shade
            c = rng.uniform(-coeff_range, coeff_range)
            poly += c * (ys**i) * (xs**j)
    return image * np.exp(poly)


def apply_ghosting(image: np.ndarray, n_ghosts: int, axis: int, intensity: float, seed) -> np.ndarray:
    """Attenuate every (n_ghosts+1)-th frequency line along ``axis``.

    The affected lines (phase offset chosen by the seed) are scaled by
    (1 - intensity); the DC line is always left untouched.
    """
    image = _check_image(image)
    if axis not in (0, 1):
        raise ConfigError("axis must be 0 or 1")
    if n_ghosts < 1 or not (0 < intensity <= 1):
        raise ConfigError("need n_ghosts >= 1 and intensity in (0, 1]")
    period = n_ghosts + 1
    offset = int(np.random.default_rng(seed).integers(period))
    f = np.fft.fft2(image)
    n_lines = image.shape[axis]
    lines = np.arange(n_lines)
    hit = (lines % period == offset) & (lines != 0)
    scale = np.where(hit, 1.0 - intensity, 1.0)
    if axis == 0:
        f *= scale[:, None]
    else:
        f *= scale[None, :]
    return np.fft.ifft2(f).real


def apply_spiking(image: np.ndarray, n_spikes: int, amplitude: float, seed) -> np.ndarray:
    """Add ``n_spikes`` impulses of magnitude amplitude*max|F| at random
    non-DC frequency coordinates."""
    image = _check_image(image)
    if n_spikes < 1 or amplitude <= 0:
        raise ConfigError("need n_spikes >= 1 and a positive amplitude")
    rng = np.random.default_rng(seed)
    f = np.fft.fft2(image)
    mag = amplitude * np.abs(f).max()
    h, w = image.shape
    coords = set()
    while len(coords) < n_spikes:
        cy = int(rng.integers(h))
        cx = int(rng.integers(w))
        if (cy, cx) == (0, 0):
            continue
        coords.add((cy, cx))
    for cy, cx in sorted(coords):
        f[cy, cx] += mag
    return np.fft.ifft2(f).real


def spike_coordinates(shape: tuple[int, int], n_spikes: int, seed) -> list[tuple[int, int]]:
    """The coordinates :func:`apply_spiking` hits for this (shape, seed)."""
    rng = np.random.default_rng(seed)
    h, w = shape
    coords = set()
    while len(coords) < n_spikes:
        cy = int(rng.integers(h))
        cx = int(rng.integers(w))
        if (cy, cx) == (0, 0):
            continue
        coords.add((cy, cx))
    return sorted(coords)


def apply_artifact_volume(v: Volume, kind: str, cfg: ArtifactConfig, seed) -> Volume:
    """Apply one artifact slice-wise along the volume's slicing axis.

    Voxels change, the mask does not; the input volume is left untouched.
    """
    cfg.validate()
    if kind not in ARTIFACT_KINDS:
        raise ConfigError(f"unknown artifact kind {kind!r}")
    axis = slicing_axis(v.spacing)
    voxels = np.moveaxis(v.voxels.copy(), axis, 0)
    for k in range(voxels.shape[0]):
        slice_seed = [seed, k] if np.isscalar(seed) else list(seed) + [k]
        if kind == "bias_field":
            voxels[k] = apply_bias_field(voxels[k], cfg.bias_order, cfg.bias_coeff_range, slice_seed)
        elif kind == "ghosting":
            voxels[k] = apply_ghosting(
                voxels[k], cfg.ghost_count, cfg.ghost_axis, cfg.ghost_intensity, slice_seed
            )
        else:
            voxels[k] = apply_spiking(voxels[k], cfg.spike_count, cfg.spike_amplitude, slice_seed)
    return Volume(
        voxels=np.moveaxis(voxels, 0, axis),
        spacing=v.spacing,
        mask=v.mask.copy(),
        subject_id=v.subject_id,
        domain_id=v.domain_id,
    )


def augment_test_set(
    tests: list[Volume], seed, cfg: ArtifactConfig | None = None
) -> list[tuple[Volume, bool]]:
    """Return the originals plus one artifact copy each (kind drawn per volume)."""
    if not tests:
        raise InputError("empty test list")
    cfg = cfg or ArtifactConfig()
    cfg.validate()
    rng = np.random.default_rng(seed)
    out: list[tuple[Volume, bool]] = [(v, False) for v in tests]
    for i, v in enumerate(tests):
        kind = ARTIFACT_KINDS[int(rng.integers(len(ARTIFACT_KINDS)))]
        out.append((apply_artifact_volume(v, kind, cfg, [seed, i] if np.isscalar(seed) else list(seed) + [i]), True))
    return out
