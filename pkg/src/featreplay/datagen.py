"""Synthetic multi-domain volume streams, ingestion, splitting and slicing.

Each domain is a procedurally generated stand-in for one acquisition site:
a randomly deformed ellipsoid organ rendered with a domain-specific intensity
transfer (gamma + linear contrast) plus additive Gaussian noise. Everything
is a pure function of (parameters, seed).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter, zoom

from .errors import ConfigError, InputError

TRAIN_FRAC = 0.56
VAL_FRAC = 0.24
TEST_FRAC = 0.20


@dataclass
class Volume:
    """A 3D scalar image with spacing, labels and provenance."""

    voxels: np.ndarray  # (D, H, W) float
    spacing: tuple[float, float, float]  # mm per voxel, per axis
    mask: np.ndarray  # (D, H, W) integer labels, 0 = background
    subject_id: str
    domain_id: str

    def __post_init__(self):
        self.voxels = np.asarray(self.voxels, dtype=np.float64)
        self.mask = np.asarray(self.mask)
        if self.voxels.shape != self.mask.shape:
            raise InputError(f"voxels {self.voxels.shape} and mask {self.mask.shape} differ")
        if self.voxels.ndim != 3:
            raise InputError("volumes are 3D")
        if not np.isfinite(self.voxels).all():
            raise InputError("non-finite intensities")
        if not np.issubdtype(self.mask.dtype, np.integer):
            raise InputError("mask must be integer-labeled")
        if self.mask.min() < 0:
            raise InputError("negative mask labels")
        if len(self.spacing) != 3 or any(s <= 0 for s in self.spacing):
            raise InputError("spacing must be three positive numbers")

    @property
    def n_slices_axis(self) -> int:
        return slicing_axis(self.spacing)


@dataclass
class SliceSample:
    """One 2D training sample: image, mask, normalized position, task id."""

    image: np.ndarray  # (H, W)
    mask: np.ndarray  # (H, W)
    s: float  # normalized slice position in [0, 1]
    t: int  # task index
    subject_id: str


@dataclass
class TaskDataset:
    name: str
    subjects: list[Volume] = field(default_factory=list)
    train: list[Volume] = field(default_factory=list)
    val: list[Volume] = field(default_factory=list)
    test: list[Volume] = field(default_factory=list)


@dataclass
class TaskStream:
    """Ordered tasks; order is part of the experiment identity."""

    tasks: list[TaskDataset]

    @property
    def task_names(self) -> list[str]:
        return [t.name for t in self.tasks]


@dataclass
class DomainSpec:
    """Parameters of one synthetic acquisition domain.

    Geometry: organ center jitter and per-axis radius ranges are fractions of
    the volume shape; ``deform_amp`` scales a smooth radial perturbation of
    the ellipsoid surface. Intensity: foreground/background levels feed a
    gamma + linear contrast transfer; ``noise_sigma`` is additive Gaussian.
    """

    name: str
    shape: tuple[int, int, int] = (12, 32, 32)
    spacing: tuple[float, float, float] = (4.0, 1.0, 1.0)
    center_jitter: float = 0.08
    radius_frac: tuple[tuple[float, float], ...] = ((0.22, 0.34), (0.20, 0.32), (0.20, 0.32))
    deform_amp: float = 0.25
    fg_level: float = 0.8
    bg_level: float = 0.25
    gamma: float = 1.0
    contrast: float = 1.0
    brightness: float = 0.0
    noise_sigma: float = 0.03
    texture_amp: float = 0.05

    def validate(self) -> None:
        if any(d <= 0 for d in self.shape):
            raise ConfigError(f"non-positive volume shape {self.shape}")
        if any(s <= 0 for s in self.spacing):
            raise ConfigError("non-positive spacing")
        for lo, hi in self.radius_frac:
            if not (0 < lo <= hi):
                raise ConfigError("radius fractions must satisfy 0 < lo <= hi")
            if hi >= 0.5:
                raise ConfigError("organ radius exceeds the volume")
        if not (0 <= self.deform_amp < 0.5):
            raise ConfigError("deform_amp must lie in [0, 0.5)")
        if self.noise_sigma < 0 or self.texture_amp < 0:
            raise ConfigError("noise parameters must be non-negative")
        if self.gamma <= 0 or self.contrast <= 0:
            raise ConfigError("gamma and contrast must be positive")


def slicing_axis(spacing) -> int:
    """Axis with the largest voxel spacing (lowest resolution); ties -> lowest index."""
    return int(np.argmax(np.asarray(spacing, dtype=float)))


# ---------------------------------------------------------------------------
# generation
# ---------------------------------------------------------------------------


def _smooth_field(rng: np.random.Generator, shape, coarse=4, sigma=1.0) -> np.ndarray:
    """Low-frequency random field in roughly [-1, 1], trilinearly upsampled."""
    coarse_shape = tuple(max(2, min(coarse, s)) for s in shape)
    grid = rng.normal(size=coarse_shape)
    grid = gaussian_filter(grid, sigma)
    factors = [s / c for s, c in zip(shape, coarse_shape)]
    up = zoom(grid, factors, order=1)
    up = up[: shape[0], : shape[1], : shape[2]]
    m = np.abs(up).max()
    return up / m if m > 0 else up


def _make_organ_mask(rng: np.random.Generator, spec: DomainSpec) -> np.ndarray:
    d, h, w = spec.shape
    center = []
    for dim in spec.shape:
        c = dim / 2.0 + rng.uniform(-spec.center_jitter, spec.center_jitter) * dim
        center.append(c)
    radii = [rng.uniform(lo, hi) * dim for (lo, hi), dim in zip(spec.radius_frac, spec.shape)]
    zz, yy, xx = np.meshgrid(np.arange(d), np.arange(h), np.arange(w), indexing="ij")
    rho = np.sqrt(
        ((zz - center[0]) / radii[0]) ** 2
        + ((yy - center[1]) / radii[1]) ** 2
        + ((xx - center[2]) / radii[2]) ** 2
    )
    bump = _smooth_field(rng, spec.shape)
    mask = rho <= 1.0 + spec.deform_amp * bump
    if not mask.any():  # radii >= 2 voxels make this unreachable in practice
        raise ConfigError(f"domain {spec.name!r} produced an empty organ mask")
    return mask.astype(np.uint8)


def _render_intensities(rng: np.random.Generator, spec: DomainSpec, mask: np.ndarray) -> np.ndarray:
    soft = gaussian_filter(mask.astype(np.float64), sigma=0.7)
    img = spec.bg_level + (spec.fg_level - spec.bg_level) * soft
    img += spec.texture_amp * _smooth_field(rng, spec.shape, coarse=6)
    img = np.clip(img, 1e-3, None) ** spec.gamma
    img = spec.contrast * img + spec.brightness
    img += rng.normal(0.0, spec.noise_sigma, size=spec.shape)
    return img


def generate_volume(spec: DomainSpec, subject_idx: int, seed: int) -> Volume:
    rng = np.random.default_rng([seed, subject_idx])
    mask = _make_organ_mask(rng, spec)
    voxels = _render_intensities(rng, spec, mask)
    return Volume(
        voxels=voxels,
        spacing=tuple(spec.spacing),
        mask=mask,
        subject_id=f"{spec.name}_{subject_idx:03d}",
        domain_id=spec.name,
    )


def generate_domain_dataset(spec: DomainSpec, n_subjects: int, seed: int) -> TaskDataset:
    """Generate one synthetic domain; deterministic in (spec, seed)."""
    spec.validate()
    if n_subjects < 5:
        raise ConfigError("need at least 5 subjects per domain")
    subjects = [generate_volume(spec, i, seed) for i in range(n_subjects)]
    return TaskDataset(name=spec.name, subjects=subjects)


def split_dataset(dataset: TaskDataset, seed: int) -> TaskDataset:
    """Partition subjects 56/24/20 (floor fractions, remainder to train)."""
    n = len(dataset.subjects)
    if n < 5:
        raise ConfigError("cannot split fewer than 5 subjects")
    n_test = int(np.floor(TEST_FRAC * n))
    n_val = int(np.floor(VAL_FRAC * n))
    n_train = int(np.floor(TRAIN_FRAC * n))
    n_train += n - (n_train + n_val + n_test)
    order = np.random.default_rng(seed).permutation(n)
    subjects = [dataset.subjects[i] for i in order]
    dataset.train = subjects[:n_train]
    dataset.val = subjects[n_train : n_train + n_val]
    dataset.test = subjects[n_train + n_val :]
    return dataset


def crop_or_pad(plane: np.ndarray, target: tuple[int, int], fill=0) -> np.ndarray:
    """Center-crop/pad a 2D array to ``target`` (no interpolation)."""
    out = np.full(target, fill, dtype=plane.dtype)
    th, tw = target
    h, w = plane.shape
    copy_h, copy_w = min(h, th), min(w, tw)
    src_y, src_x = (h - copy_h) // 2, (w - copy_w) // 2
    dst_y, dst_x = (th - copy_h) // 2, (tw - copy_w) // 2
    out[dst_y : dst_y + copy_h, dst_x : dst_x + copy_w] = plane[
        src_y : src_y + copy_h, src_x : src_x + copy_w
    ]
    return out


def slice_volume(v: Volume, task: int, input_shape: tuple[int, int]) -> list[SliceSample]:
    """Cut a volume into 2D samples along its lowest-resolution axis.

    Slice ``k`` of ``K`` carries position ``s = k/(K-1)`` (0.5 when K == 1);
    planes are center-cropped/padded to ``input_shape``.
    """
    axis = slicing_axis(v.spacing)
    k_total = v.voxels.shape[axis]
    samples = []
    for k in range(k_total):
        img = np.take(v.voxels, k, axis=axis)
        msk = np.take(v.mask, k, axis=axis)
        s = 0.5 if k_total == 1 else k / (k_total - 1)
        samples.append(
            SliceSample(
                image=crop_or_pad(img, input_shape, fill=0.0),
                mask=crop_or_pad(msk, input_shape, fill=0),
                s=float(s),
                t=task,
                subject_id=v.subject_id,
            )
        )
    return samples


# ---------------------------------------------------------------------------
# domain presets
# ---------------------------------------------------------------------------


def hippocampus_like_domains() -> list[DomainSpec]:
    """Two training domains with an inverted contrast relationship, plus one
    held-out domain that is shifted in contrast, noise and geometry."""
    return [
        DomainSpec(name="hipp_t2", fg_level=0.85, bg_level=0.25, gamma=1.0, noise_sigma=0.03),
        DomainSpec(name="hipp_t1", fg_level=0.25, bg_level=0.75, gamma=1.0, noise_sigma=0.03),
        DomainSpec(
            name="hipp_ood",
            fg_level=0.62,
            bg_level=0.40,
            gamma=2.4,
            noise_sigma=0.14,
            deform_amp=0.4,
            radius_frac=((0.28, 0.42), (0.28, 0.44), (0.28, 0.44)),
        ),
    ]


def prostate_like_domains() -> list[DomainSpec]:
    """Four training domains alternating a high-contrast "coil" signature,
    plus one held-out domain."""
    return [
        DomainSpec(name="prost_a_coil", fg_level=0.92, bg_level=0.18, gamma=1.2, noise_sigma=0.04),
        DomainSpec(name="prost_b", fg_level=0.35, bg_level=0.70, gamma=0.9, noise_sigma=0.05),
        DomainSpec(name="prost_c_coil", fg_level=0.88, bg_level=0.22, gamma=1.4, noise_sigma=0.03),
        DomainSpec(name="prost_d", fg_level=0.55, bg_level=0.35, gamma=0.7, noise_sigma=0.08),
        DomainSpec(
            name="prost_ood",
            fg_level=0.52,
            bg_level=0.44,
            gamma=2.8,
            noise_sigma=0.15,
            deform_amp=0.42,
            radius_frac=((0.30, 0.44), (0.30, 0.44), (0.30, 0.44)),
        ),
    ]


def build_stream(
    domains: list[DomainSpec], n_subjects: int, seed: int, task_order: list[int] | None = None
) -> TaskStream:
    """Generate + split one dataset per domain, in the given task order."""
    order = task_order if task_order is not None else list(range(len(domains)))
    tasks = []
    for rank, idx in enumerate(order):
        ds = generate_domain_dataset(domains[idx], n_subjects, seed=seed + 1000 * idx)
        split_dataset(ds, seed=seed + 1000 * idx + 7)
        tasks.append(ds)
    return TaskStream(tasks=tasks)


# ---------------------------------------------------------------------------
# raw volume ingestion (float32 voxels + uint8 mask + JSON sidecar)
# ---------------------------------------------------------------------------


def save_volume(v: Volume, directory: str | Path, is_artifact: bool = False) -> Path:
    """Write ``<subject_id>.json`` sidecar plus raw little-endian blobs."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    stem = v.subject_id + ("_art" if is_artifact else "")
    vox_file = f"{stem}.f32"
    mask_file = f"{stem}.mask.u8"
    v.voxels.astype("<f4").tofile(directory / vox_file)
    v.mask.astype("<u1").tofile(directory / mask_file)
    sidecar = {
        "shape": list(v.voxels.shape),
        "spacing": list(v.spacing),
        "voxel_file": vox_file,
        "mask_file": mask_file,
        "domain_id": v.domain_id,
        "subject_id": v.subject_id,
    }
    if is_artifact:
        sidecar["is_artifact"] = True
    path = directory / f"{stem}.json"
    path.write_text(json.dumps(sidecar, indent=1))
    return path


def load_volume(sidecar_path: str | Path) -> tuple[Volume, bool]:
    """Read a volume from its JSON sidecar; returns (volume, is_artifact)."""
    sidecar_path = Path(sidecar_path)
    meta = json.loads(sidecar_path.read_text())
    shape = tuple(meta["shape"])
    base = sidecar_path.parent
    vox = np.fromfile(base / meta.get("voxel_file", sidecar_path.stem + ".f32"), dtype="<f4")
    mask = np.fromfile(base / meta["mask_file"], dtype="<u1")
    if vox.size != int(np.prod(shape)) or mask.size != int(np.prod(shape)):
        raise InputError(f"blob size does not match sidecar shape for {sidecar_path}")
    v = Volume(
        voxels=vox.reshape(shape).astype(np.float64),
        spacing=tuple(meta["spacing"]),
        mask=mask.reshape(shape).astype(np.int64),
        subject_id=meta["subject_id"],
        domain_id=meta["domain_id"],
    )
    return v, bool(meta.get("is_artifact", False))


def spec_to_dict(spec: DomainSpec) -> dict:
    return asdict(spec)


def spec_from_dict(d: dict) -> DomainSpec:
    d = dict(d)
    for key in ("shape", "spacing"):
        if key in d:
            d[key] = tuple(d[key])
    if "radius_frac" in d:
        d["radius_frac"] = tuple(tuple(r) for r in d["radius_frac"])
    return DomainSpec(**d)
