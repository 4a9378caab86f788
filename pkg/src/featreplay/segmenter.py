"""Compact 2D encoder-decoder segmentation network.

The encoder exposes its flattened bottleneck activations as the feature code
of a slice; the decoder can run either with the encoder's skip activations
(normal forward pass) or with zero-filled skips, which is how generated
feature codes are decoded. The encoder can be frozen after the first task.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import nn
from .datagen import SliceSample, Volume, crop_or_pad, slice_volume, slicing_axis
from .errors import ConfigError, InputError


def feature_dim(spatial: tuple[int, ...], channels: int) -> int:
    """Flattened size of a bottleneck with the given spatial grid and channels."""
    return int(np.prod(spatial)) * channels


def slicewise_feature_dim(spatial: tuple[int, ...], channels: int, axis: int = 0) -> int:
    """Feature size after dropping one spatial axis (slice-wise 2D operation)."""
    reduced = tuple(s for i, s in enumerate(spatial) if i != axis)
    return feature_dim(reduced, channels)


@dataclass
class UNetConfig:
    input_shape: tuple[int, int] = (32, 32)
    n_levels: int = 3
    base_channels: int = 4
    n_classes: int = 2

    def validate(self) -> None:
        h, w = self.input_shape
        div = 2**self.n_levels
        if h % div or w % div:
            raise ConfigError(f"input shape {self.input_shape} not divisible by 2^{self.n_levels}")
        if self.n_levels < 1 or self.base_channels < 1 or self.n_classes < 2:
            raise ConfigError("need n_levels >= 1, base_channels >= 1, n_classes >= 2")

    @property
    def bottleneck_channels(self) -> int:
        return self.base_channels * 2**self.n_levels

    @property
    def bottleneck_shape(self) -> tuple[int, int, int]:
        h, w = self.input_shape
        div = 2**self.n_levels
        return (self.bottleneck_channels, h // div, w // div)

    @property
    def feature_dim(self) -> int:
        c, h, w = self.bottleneck_shape
        return feature_dim((h, w), c)


@dataclass
class FeatureCode:
    """Flattened bottleneck features of one slice, with conditioning metadata."""

    u: np.ndarray  # (feature_dim,)
    t: int
    s: float
    skips: list[np.ndarray] | None = None  # absent for generated features


class ConvBlock(nn.Layer):
    """conv -> instance norm -> leaky ReLU."""

    def __init__(self, cin, cout, stride, rng, name):
        self.conv = nn.Conv2d(cin, cout, 3, stride, rng, name=f"{name}.conv")
        self.norm = nn.InstanceNorm2d(cout, name=f"{name}.norm")
        self.act = nn.LeakyReLU(0.01)

    def params(self):
        return self.conv.params() + self.norm.params()

    def forward(self, x, train=False):
        return self.act.forward(self.norm.forward(self.conv.forward(x, train), train), train)

    def backward(self, gy):
        return self.conv.backward(self.norm.backward(self.act.backward(gy)))


class UNet2D:
    """Encoder levels with stride-2 downsampling, mirrored decoder with skips."""

    def __init__(self, config: UNetConfig, seed: int):
        config.validate()
        self.config = config
        self.frozen = False
        rng = np.random.default_rng([seed, 0])
        L = config.n_levels
        base = config.base_channels
        ch = [base * 2**i for i in range(L + 1)]
        self.enc_blocks: list[ConvBlock] = []
        cin = 1
        for i in range(L + 1):  # blocks 0..L-1 produce skips, block L the bottleneck
            stride = 1 if i == 0 else 2
            self.enc_blocks.append(ConvBlock(cin, ch[i], stride, rng, name=f"enc{i}"))
            cin = ch[i]
        self.up = nn.NearestUpsample2d()
        self.dec_blocks: list[ConvBlock] = []
        for i in reversed(range(L)):  # decoder level i consumes up(deeper) + skip i
            self.dec_blocks.append(ConvBlock(ch[i + 1] + ch[i], ch[i], 1, rng, name=f"dec{i}"))
        self.head = nn.Conv2d(ch[0], config.n_classes, 1, 1, rng, name="head")
        self._dec_cache = None

    # -- parameter groups ---------------------------------------------------

    def encoder_params(self) -> list[nn.Param]:
        out = []
        for blk in self.enc_blocks:
            out.extend(blk.params())
        return out

    def decoder_params(self) -> list[nn.Param]:
        out = []
        for blk in self.dec_blocks:
            out.extend(blk.params())
        out.extend(self.head.params())
        return out

    def trainable_params(self) -> list[nn.Param]:
        if self.frozen:
            return self.decoder_params()
        return self.encoder_params() + self.decoder_params()

    def freeze_encoder(self) -> None:
        """Exclude the encoder from all future optimization. Idempotent."""
        if self.frozen:
            warnings.warn("encoder already frozen; ignoring")
            return
        self.frozen = True

    # -- forward / backward -------------------------------------------------

    def encode_batch(self, x: np.ndarray, train: bool = False) -> tuple[np.ndarray, list[np.ndarray]]:
        """Run the encoder; returns (u, skips) with u of shape (N, feature_dim)."""
        if x.ndim != 4 or x.shape[2:] != tuple(self.config.input_shape):
            raise InputError(f"expected (N,1,{self.config.input_shape}), got {x.shape}")
        skips = []
        a = x
        for i, blk in enumerate(self.enc_blocks):
            a = blk.forward(a, train=train)
            if i < len(self.enc_blocks) - 1:
                skips.append(a)
        u = a.reshape(a.shape[0], -1)
        return u, skips

    def decode_batch(
        self, u: np.ndarray, skips: list[np.ndarray] | None, train: bool = False
    ) -> np.ndarray:
        """Decode feature codes to per-pixel class probabilities.

        ``skips=None`` replaces every skip input with zeros (the path used
        for generated features, which have no encoder activations).
        """
        if u.ndim != 2 or u.shape[1] != self.config.feature_dim:
            raise InputError(f"feature dim {u.shape} != {self.config.feature_dim}")
        n = u.shape[0]
        c, bh, bw = self.config.bottleneck_shape
        a = u.reshape(n, c, bh, bw)
        L = self.config.n_levels
        if skips is None:
            skips = []
            h, w = self.config.input_shape
            base = self.config.base_channels
            for i in range(L):
                f = 2**i
                skips.append(np.zeros((n, base * f, h // f, w // f)))
        if len(skips) != L:
            raise InputError(f"expected {L} skip tensors, got {len(skips)}")
        split_channels = []
        for i, blk in enumerate(self.dec_blocks):
            level = L - 1 - i
            upped = self.up.forward(a, train=train)
            cat = np.concatenate([upped, skips[level]], axis=1)
            split_channels.append(upped.shape[1])
            a = blk.forward(cat, train=train)
        logits = self.head.forward(a, train=train)
        if train:
            self._dec_cache = split_channels
        return nn.softmax(logits, axis=1)

    def forward_batch(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        u, skips = self.encode_batch(x, train=train)
        return self.decode_batch(u, skips, train=train)

    def backward_batch(self, dlogits: np.ndarray, had_skips: bool) -> None:
        """Backpropagate a gradient on the head logits through the network.

        Must follow a ``train=True`` forward pass. Encoder gradients are only
        produced when the pass used real skips and the encoder is not frozen.
        """
        a = self.head.backward(dlogits)
        L = self.config.n_levels
        skip_grads: dict[int, np.ndarray] = {}
        for i in reversed(range(len(self.dec_blocks))):
            level = L - 1 - i
            blk = self.dec_blocks[i]
            gcat = blk.backward(a)
            n_up = self._dec_cache[i]
            gup = gcat[:, :n_up]
            skip_grads[level] = gcat[:, n_up:]
            a = self.up.backward(gup)
        if not had_skips or self.frozen:
            return
        g = a  # gradient into the bottleneck block output
        for i in reversed(range(len(self.enc_blocks))):
            gin = self.enc_blocks[i].backward(g)
            if i - 1 >= 0:
                gin = gin + skip_grads.get(i - 1, 0.0)
            g = gin


# ---------------------------------------------------------------------------
# slice / volume level API
# ---------------------------------------------------------------------------


def build_unet(config: UNetConfig, seed: int) -> UNet2D:
    return UNet2D(config, seed)


def encode(net: UNet2D, sample: SliceSample) -> FeatureCode:
    """Feature code (with skips) for one slice, inference mode."""
    x = sample.image[None, None].astype(np.float64)
    u, skips = net.encode_batch(x)
    return FeatureCode(u=u[0], t=sample.t, s=sample.s, skips=[sk[0] for sk in skips])


def decode(net: UNet2D, code: FeatureCode, use_skips: bool) -> np.ndarray:
    """Per-pixel class probability map (C, H, W) for one feature code."""
    if use_skips:
        if code.skips is None:
            raise InputError("use_skips=True but the code carries no skip activations")
        skips = [sk[None] for sk in code.skips]
    else:
        skips = None
    probs = net.decode_batch(code.u[None], skips)
    return probs[0]


def segment_volume(net: UNet2D, v: Volume) -> np.ndarray:
    """Slice-wise argmax segmentation restacked to the volume's shape."""
    axis = slicing_axis(v.spacing)
    samples = slice_volume(v, task=0, input_shape=tuple(net.config.input_shape))
    x = np.stack([s.image for s in samples])[:, None]
    probs = net.forward_batch(x)
    pred2d = probs.argmax(axis=1)
    planes = []
    plane_shape = tuple(np.delete(np.array(v.voxels.shape), axis))
    for k in range(pred2d.shape[0]):
        planes.append(crop_or_pad(pred2d[k].astype(np.int64), plane_shape, fill=0))
    return np.moveaxis(np.stack(planes), 0, axis)


def predict_probs_volume(net: UNet2D, v: Volume) -> np.ndarray:
    """Stacked per-slice class probabilities, shape (K, C, H, W) at net size."""
    samples = slice_volume(v, task=0, input_shape=tuple(net.config.input_shape))
    x = np.stack([s.image for s in samples])[:, None]
    return net.forward_batch(x)


# ---------------------------------------------------------------------------
# checkpointing
# ---------------------------------------------------------------------------


def _param_manifest(params: list[nn.Param]) -> list[dict]:
    return [{"name": p.name, "shape": list(p.data.shape)} for p in params]


def save_unet(net: UNet2D, directory: str | Path) -> None:
    """Write manifest.json plus one raw float64 blob; bit-exact round trip."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    params = net.encoder_params() + net.decoder_params()
    manifest = {
        "format_version": 1,
        "config": {
            "input_shape": list(net.config.input_shape),
            "n_levels": net.config.n_levels,
            "base_channels": net.config.base_channels,
            "n_classes": net.config.n_classes,
        },
        "frozen": net.frozen,
        "params": _param_manifest(params),
    }
    (directory / "unet.json").write_text(json.dumps(manifest, indent=1))
    blob = np.concatenate([p.data.ravel() for p in params])
    blob.astype("<f8").tofile(directory / "unet.bin")


def load_unet(directory: str | Path) -> UNet2D:
    directory = Path(directory)
    manifest = json.loads((directory / "unet.json").read_text())
    cfg = UNetConfig(
        input_shape=tuple(manifest["config"]["input_shape"]),
        n_levels=manifest["config"]["n_levels"],
        base_channels=manifest["config"]["base_channels"],
        n_classes=manifest["config"]["n_classes"],
    )
    net = UNet2D(cfg, seed=0)
    params = net.encoder_params() + net.decoder_params()
    blob = np.fromfile(directory / "unet.bin", dtype="<f8")
    offset = 0
    for p, meta in zip(params, manifest["params"]):
        shape = tuple(meta["shape"])
        if p.data.shape != shape:
            raise InputError(f"checkpoint shape mismatch for {meta['name']}")
        n = int(np.prod(shape))
        p.data = blob[offset : offset + n].reshape(shape).copy()
        p.grad = np.zeros_like(p.data)
        offset += n
    if offset != blob.size:
        raise InputError("checkpoint blob size mismatch")
    net.frozen = bool(manifest["frozen"])
    return net
