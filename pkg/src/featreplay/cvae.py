"""Conditional VAE over the segmentation network's feature distribution.

The latent dimension equals the feature dimension (enforced at build time),
so the model can aim for a lossless mapping between the unknown feature
distribution and an isotropic Gaussian prior. Conditioning on the task id
(one-hot) and the slice position (scalar) is concatenated to both the
encoder input and the latent code. Features are modeled in a standardized
space whose per-dimension statistics come from the first task.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import nn
from .errors import ConfigError, InputError, StateError

LOGVAR_MIN, LOGVAR_MAX = -10.0, 10.0


@dataclass
class VaeConfig:
    d_u: int
    max_tasks: int
    hidden: tuple[int, int, int] = (512, 512, 512)
    use_slice_cond: bool = True  # False gives the task-only ablation

    def validate(self) -> None:
        if self.d_u < 1 or self.max_tasks < 1:
            raise ConfigError("d_u and max_tasks must be positive")
        if len(self.hidden) != 3 or any(h < 1 for h in self.hidden):
            raise ConfigError("hidden must be three positive widths")

    @property
    def cond_dim(self) -> int:
        return self.max_tasks + (1 if self.use_slice_cond else 0)

    @property
    def input_dim(self) -> int:
        return self.d_u + self.cond_dim


@dataclass
class LatentCode:
    mu: np.ndarray
    logvar: np.ndarray
    z: np.ndarray


def _mlp(widths: list[int], rng: np.random.Generator, name: str) -> nn.Sequential:
    """Linear+BN+LeakyReLU stack with a linear final layer (4 linears total)."""
    layers: list[nn.Layer] = []
    for i in range(len(widths) - 2):
        layers.append(nn.Linear(widths[i], widths[i + 1], rng, name=f"{name}.fc{i}"))
        layers.append(nn.BatchNorm1d(widths[i + 1], name=f"{name}.bn{i}"))
        layers.append(nn.LeakyReLU(0.01))
    layers.append(nn.Linear(widths[-2], widths[-1], rng, name=f"{name}.fc{len(widths) - 2}"))
    return nn.Sequential(layers)


class FeatureVae:
    """Task- and slice-conditioned VAE with dim(z) == dim(u)."""

    def __init__(self, config: VaeConfig, seed: int):
        config.validate()
        self.config = config
        rng = np.random.default_rng([seed, 1])
        h1, h2, h3 = config.hidden
        self.encoder = _mlp([config.input_dim, h1, h2, h3, 2 * config.d_u], rng, "vae_enc")
        self.decoder = _mlp([config.d_u + config.cond_dim, h3, h2, h1, config.d_u], rng, "vae_dec")
        self.norm_mean: np.ndarray | None = None
        self.norm_std: np.ndarray | None = None
        self.tasks_seen: list[int] = []
        # sorted unique slice positions observed per task; replay samples on it
        self.slice_grid: dict[int, np.ndarray] = {}

    # -- conditioning ---------------------------------------------------------

    def cond_vector(self, t, s) -> np.ndarray:
        """(N, cond_dim) conditioning block for task ids ``t`` and positions ``s``."""
        t = np.atleast_1d(np.asarray(t, dtype=int))
        if np.any(t < 0) or np.any(t >= self.config.max_tasks):
            raise InputError(f"task index out of range [0, {self.config.max_tasks})")
        onehot = np.zeros((t.size, self.config.max_tasks))
        onehot[np.arange(t.size), t] = 1.0
        if not self.config.use_slice_cond:
            return onehot
        s = np.atleast_1d(np.asarray(s, dtype=np.float64))
        if s.size == 1 and t.size > 1:
            s = np.full(t.size, float(s[0]))
        return np.concatenate([onehot, s[:, None]], axis=1)

    # -- normalization ----------------------------------------------------------

    def set_normalization(self, feats: np.ndarray) -> None:
        """Fix per-dimension standardization statistics (first-task features)."""
        if feats.ndim != 2 or feats.shape[1] != self.config.d_u:
            raise InputError("normalization stats need (N, d_u) features")
        self.norm_mean = feats.mean(axis=0)
        self.norm_std = np.maximum(feats.std(axis=0), 1e-6)

    def normalize(self, u: np.ndarray) -> np.ndarray:
        if self.norm_mean is None:
            raise StateError("normalization statistics not set")
        return (u - self.norm_mean) / self.norm_std

    def denormalize(self, u_n: np.ndarray) -> np.ndarray:
        if self.norm_mean is None:
            raise StateError("normalization statistics not set")
        return u_n * self.norm_std + self.norm_mean

    # -- core passes (normalized feature space) ----------------------------------

    def encode_batch(self, u_n: np.ndarray, t, s, train: bool = False):
        """Posterior parameters (mu, logvar) for normalized features."""
        if u_n.ndim != 2 or u_n.shape[1] != self.config.d_u:
            raise InputError(f"expected (N, {self.config.d_u}) features, got {u_n.shape}")
        x = np.concatenate([u_n, self.cond_vector(t, s)], axis=1)
        out = self.encoder.forward(x, train=train)
        mu = out[:, : self.config.d_u]
        logvar = np.clip(out[:, self.config.d_u :], LOGVAR_MIN, LOGVAR_MAX)
        return mu, logvar

    def decode_batch(self, z: np.ndarray, t, s, train: bool = False) -> np.ndarray:
        if z.ndim != 2 or z.shape[1] != self.config.d_u:
            raise InputError(f"expected (N, {self.config.d_u}) latents, got {z.shape}")
        x = np.concatenate([z, self.cond_vector(t, s)], axis=1)
        return self.decoder.forward(x, train=train)

    def reconstruct_mean(self, u_n: np.ndarray, t, s) -> np.ndarray:
        """Deterministic reconstruction through the posterior mean."""
        mu, _ = self.encode_batch(u_n, t, s)
        return self.decode_batch(mu, t, s)


# ---------------------------------------------------------------------------
# functional pieces
# ---------------------------------------------------------------------------


def build_vae(config: VaeConfig, seed: int, d_u_expected: int | None = None) -> FeatureVae:
    if d_u_expected is not None and config.d_u != d_u_expected:
        raise ConfigError(f"latent dim {config.d_u} must equal the feature dim {d_u_expected}")
    return FeatureVae(config, seed)


def vae_encode(vae: FeatureVae, u_n: np.ndarray, t: int, s: float):
    """Single-vector convenience wrapper; returns (mu, logvar) as vectors."""
    mu, logvar = vae.encode_batch(u_n[None], [t], [s])
    return mu[0], logvar[0]


def vae_decode(vae: FeatureVae, z: np.ndarray, t: int, s: float) -> np.ndarray:
    return vae.decode_batch(z[None], [t], [s])[0]


def reparameterize(mu: np.ndarray, logvar: np.ndarray, rng) -> np.ndarray:
    """z = mu + exp(logvar/2) * eps with eps ~ N(0, I)."""
    if mu.shape != logvar.shape:
        raise InputError("mu and logvar shapes differ")
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    eps = rng.normal(size=mu.shape)
    return mu + np.exp(0.5 * logvar) * eps


def kl_divergence(mu: np.ndarray, logvar: np.ndarray) -> float:
    """KL[N(mu, diag exp(logvar)) || N(0, I)], summed over dimensions.

    For batched inputs the per-sample KLs are averaged.
    """
    if mu.shape != logvar.shape:
        raise InputError("mu and logvar shapes differ")
    per_dim = -0.5 * (1.0 + logvar - mu**2 - np.exp(logvar))
    if mu.ndim == 1:
        return float(per_dim.sum())
    return float(per_dim.sum(axis=1).mean())


def elbo_loss(u_n, u_hat, mu, logvar, beta: float = 1.0):
    """Negative evidence bound up to constants: sum-form MSE + beta * KL.

    recon is the per-sample mean squared error scaled by d_u, i.e. the
    summed squared error of a unit-variance Gaussian likelihood.
    """
    if beta <= 0:
        raise ConfigError("beta must be positive")
    d_u = u_n.shape[-1]
    recon = float(((u_n - u_hat) ** 2).mean() * d_u)
    kl = kl_divergence(mu, logvar)
    return recon, kl, recon + beta * kl


def sample_pseudo_feature(vae: FeatureVae, t: int, s: float, seed) -> np.ndarray:
    """Draw z ~ N(0, I) and decode it under (t, s); normalized feature space."""
    if t not in vae.tasks_seen:
        raise InputError(f"task {t} not among seen tasks {vae.tasks_seen}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    z = rng.normal(size=(1, vae.config.d_u))
    return vae.decode_batch(z, [t], [s])[0]


# ---------------------------------------------------------------------------
# training-step gradients
# ---------------------------------------------------------------------------


def elbo_backward(vae: FeatureVae, u_n, t, s, rng, beta: float, train: bool = True):
    """One ELBO forward/backward pass; returns (recon, kl, total).

    Accumulates gradients into the VAE parameters. The reparameterization
    noise comes from ``rng``.
    """
    x = np.concatenate([u_n, vae.cond_vector(t, s)], axis=1)
    out = vae.encoder.forward(x, train=train)
    d_u = vae.config.d_u
    mu = out[:, :d_u]
    logvar_raw = out[:, d_u:]
    logvar = np.clip(logvar_raw, LOGVAR_MIN, LOGVAR_MAX)
    eps = rng.normal(size=mu.shape)
    sigma = np.exp(0.5 * logvar)
    z = mu + sigma * eps
    zc = np.concatenate([z, vae.cond_vector(t, s)], axis=1)
    u_hat = vae.decoder.forward(zc, train=train)

    n = u_n.shape[0]
    recon = float(((u_n - u_hat) ** 2).sum() / n)
    kl_per_dim = -0.5 * (1.0 + logvar - mu**2 - np.exp(logvar))
    kl = float(kl_per_dim.sum() / n)
    total = recon + beta * kl

    # d recon / d u_hat, then back through decoder to z
    g_uhat = 2.0 * (u_hat - u_n) / n
    g_zc = vae.decoder.backward(g_uhat)
    g_z = g_zc[:, :d_u]
    # reparameterization: z = mu + exp(logvar/2) * eps
    g_mu = g_z + beta * (mu / n)
    g_logvar = g_z * (0.5 * sigma * eps) + beta * (-0.5 * (1.0 - np.exp(logvar)) / n)
    g_logvar = np.where((logvar_raw > LOGVAR_MIN) & (logvar_raw < LOGVAR_MAX), g_logvar, 0.0)
    vae.encoder.backward(np.concatenate([g_mu, g_logvar], axis=1))
    return recon, kl, total


# ---------------------------------------------------------------------------
# checkpointing
# ---------------------------------------------------------------------------


def save_vae(vae: FeatureVae, directory: str | Path) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    params = vae.encoder.params() + vae.decoder.params()
    manifest = {
        "format_version": 1,
        "config": {
            "d_u": vae.config.d_u,
            "max_tasks": vae.config.max_tasks,
            "hidden": list(vae.config.hidden),
            "use_slice_cond": vae.config.use_slice_cond,
        },
        "tasks_seen": list(vae.tasks_seen),
        "slice_grid": {str(k): v.tolist() for k, v in vae.slice_grid.items()},
        "params": [{"name": p.name, "shape": list(p.data.shape)} for p in params],
        "has_norm": vae.norm_mean is not None,
    }
    (directory / "vae.json").write_text(json.dumps(manifest, indent=1))
    blob = np.concatenate([p.data.ravel() for p in params])
    # batch-norm running stats are model state too; append them after params
    running = []
    for layer in vae.encoder.layers + vae.decoder.layers:
        if isinstance(layer, nn.BatchNorm1d):
            running.extend([layer.running_mean, layer.running_var])
    blob = np.concatenate([blob] + [r.ravel() for r in running])
    blob.astype("<f8").tofile(directory / "vae.bin")
    if vae.norm_mean is not None:
        np.concatenate([vae.norm_mean, vae.norm_std]).astype("<f8").tofile(directory / "norm.bin")


def load_vae(directory: str | Path) -> FeatureVae:
    directory = Path(directory)
    manifest = json.loads((directory / "vae.json").read_text())
    cfg = VaeConfig(
        d_u=manifest["config"]["d_u"],
        max_tasks=manifest["config"]["max_tasks"],
        hidden=tuple(manifest["config"]["hidden"]),
        use_slice_cond=manifest["config"]["use_slice_cond"],
    )
    vae = FeatureVae(cfg, seed=0)
    params = vae.encoder.params() + vae.decoder.params()
    blob = np.fromfile(directory / "vae.bin", dtype="<f8")
    offset = 0
    for p, meta in zip(params, manifest["params"]):
        shape = tuple(meta["shape"])
        n = int(np.prod(shape))
        p.data = blob[offset : offset + n].reshape(shape).copy()
        p.grad = np.zeros_like(p.data)
        offset += n
    for layer in vae.encoder.layers + vae.decoder.layers:
        if isinstance(layer, nn.BatchNorm1d):
            n = layer.running_mean.size
            layer.running_mean = blob[offset : offset + n].copy()
            offset += n
            layer.running_var = blob[offset : offset + n].copy()
            offset += n
    if offset != blob.size:
        raise InputError("vae checkpoint blob size mismatch")
    vae.tasks_seen = [int(t) for t in manifest["tasks_seen"]]
    vae.slice_grid = {int(k): np.asarray(v) for k, v in manifest["slice_grid"].items()}
    if manifest["has_norm"]:
        stats = np.fromfile(directory / "norm.bin", dtype="<f8")
        vae.norm_mean = stats[: cfg.d_u].copy()
        vae.norm_std = stats[cfg.d_u :].copy()
    return vae
