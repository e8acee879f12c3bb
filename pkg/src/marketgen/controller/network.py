"""The 1-D convolutional U-Net noise predictor and its condition encoders.

Three resolutions (two stride-2 downsamples), channel widths given by
``base_width * width_mults``. Each stage runs two residual blocks and one
single-head self-attention layer over the length axis; conditioning enters
every residual block through the step-embedding pathway.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..tensorkit import (
    Conv1d,
    Embedding,
    GroupNorm,
    Linear,
    Module,
    Tensor,
    concat,
    crop_length,
    edge_pad_right,
    embedding_lookup,
    matmul,
    mul,
    reshape,
    silu,
    sinusoidal_embedding,
    softmax,
    transpose,
    upsample_nearest_2x,
)


@dataclass(frozen=True)
class DenoiserConfig:
    channels: int = 2
    length: int = 236
    base_width: int = 64
    width_mults: tuple[int, ...] = (1, 4, 16)
    resnet_blocks: int = 2
    kernel_size: int = 15
    embed_dim: int = 256
    norm_groups: int = 8

    def __post_init__(self):
        if self.kernel_size % 2 == 0:
            raise ValueError("kernel size must be odd")
        if self.embed_dim % 2:
            raise ValueError("embed dim must be even")
        if min(self.width_mults) < 1 or self.base_width < 1:
            raise ValueError("widths must be positive")
        if self.length < self.downsample_factor:
            raise ValueError("length too short for the number of resolutions")

    @property
    def padding(self) -> int:
        return (self.kernel_size - 1) // 2

    @property
    def downsample_factor(self) -> int:
        return 2 ** (len(self.width_mults) - 1)

    @property
    def padded_length(self) -> int:
        f = self.downsample_factor
        return ((self.length + f - 1) // f) * f

    @property
    def stage_widths(self) -> tuple[int, ...]:
        return tuple(self.base_width * m for m in self.width_mults)

    def to_dict(self) -> dict:
        return {
            "channels": self.channels,
            "length": self.length,
            "base_width": self.base_width,
            "width_mults": list(self.width_mults),
            "resnet_blocks": self.resnet_blocks,
            "kernel_size": self.kernel_size,
            "embed_dim": self.embed_dim,
            "norm_groups": self.norm_groups,
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "DenoiserConfig":
        payload = dict(payload)
        payload["width_mults"] = tuple(payload["width_mults"])
        return cls(**payload)


class ResidualBlock(Module):
    def __init__(self, cin: int, cout: int, cfg: DenoiserConfig, rng: np.random.Generator):
        k, p, g = cfg.kernel_size, cfg.padding, cfg.norm_groups
        self.norm1 = GroupNorm(cin, g)
        self.conv1 = Conv1d(cin, cout, k, rng, padding=p)
        self.emb_proj = Linear(cfg.embed_dim, cout, rng)
        self.norm2 = GroupNorm(cout, g)
        self.conv2 = Conv1d(cout, cout, k, rng, padding=p)
        self.skip = Conv1d(cin, cout, 1, rng) if cin != cout else None

    def __call__(self, x: Tensor, emb: Tensor) -> Tensor:
        h = self.conv1(silu(self.norm1(x)))
        bias = self.emb_proj(silu(emb))
        h = h + reshape(bias, (*bias.shape, 1))
        h = self.conv2(silu(self.norm2(h)))
        return h + (self.skip(x) if self.skip is not None else x)


class SelfAttention(Module):
    """Pre-norm single-head attention over the length axis."""

    def __init__(self, channels: int, cfg: DenoiserConfig, rng: np.random.Generator):
        self.norm = GroupNorm(channels, cfg.norm_groups)
        self.to_q = Conv1d(channels, channels, 1, rng)
        self.to_k = Conv1d(channels, channels, 1, rng)
        self.to_v = Conv1d(channels, channels, 1, rng)
        self.proj = Conv1d(channels, channels, 1, rng)
        self.scale = 1.0 / math.sqrt(channels)

    def __call__(self, x: Tensor) -> Tensor:
        h = self.norm(x)
        q, k, v = self.to_q(h), self.to_k(h), self.to_v(h)
        scores = mul(matmul(transpose(q, (0, 2, 1)), k), self.scale)  # (B, L, L)
        attn = softmax(scores, axis=-1)
        out = matmul(v, transpose(attn, (0, 2, 1)))                    # (B, C, L)
        return x + self.proj(out)


class DownStage(Module):
    def __init__(self, cin: int, cout: int, cfg: DenoiserConfig,
                 rng: np.random.Generator, downsample: bool):
        self.blocks = [ResidualBlock(cin if i == 0 else cout, cout, cfg, rng)
                       for i in range(cfg.resnet_blocks)]
        self.attn = SelfAttention(cout, cfg, rng)
        self.down = Conv1d(cout, cout, 4, rng, stride=2, padding=1) if downsample else None


class UpStage(Module):
    def __init__(self, cout: int, cnext: int | None, cfg: DenoiserConfig,
                 rng: np.random.Generator):
        self.blocks = [ResidualBlock(2 * cout, cout, cfg, rng)
                       for _ in range(cfg.resnet_blocks)]
        self.attn = SelfAttention(cout, cfg, rng)
        self.up = Conv1d(cout, cnext, 3, rng, padding=1) if cnext is not None else None


class Denoiser(Module):
    """Predicts the injected noise from a corrupted state day and its step."""

    def __init__(self, cfg: DenoiserConfig, rng: np.random.Generator):
        self.cfg = cfg
        widths = cfg.stage_widths
        self.init_conv = Conv1d(cfg.channels, widths[0], cfg.kernel_size, rng,
                                padding=cfg.padding)
        self.time_fc1 = Linear(cfg.embed_dim, cfg.embed_dim, rng)
        self.time_fc2 = Linear(cfg.embed_dim, cfg.embed_dim, rng)

        self.downs = []
        for i, width in enumerate(widths):
            cin = widths[i - 1] if i else widths[0]
            last = i == len(widths) - 1
            self.downs.append(DownStage(cin, width, cfg, rng, downsample=not last))

        mid = widths[-1]
        self.mid_block1 = ResidualBlock(mid, mid, cfg, rng)
        self.mid_attn = SelfAttention(mid, cfg, rng)
        self.mid_block2 = ResidualBlock(mid, mid, cfg, rng)

        self.ups = []
        for i in range(len(widths) - 1, -1, -1):
            cnext = widths[i - 1] if i else None
            self.ups.append(UpStage(widths[i], cnext, cfg, rng))

        self.out_block = ResidualBlock(widths[0], widths[0], cfg, rng)
        self.out_conv = Conv1d(widths[0], cfg.channels, 1, rng, zero_init=True)

    def __call__(self, x: Tensor, steps: np.ndarray, cond_emb: Tensor | None) -> Tensor:
        cfg = self.cfg
        batch, _, length = x.shape
        if length != cfg.length:
            raise ValueError(f"expected length {cfg.length}, got {length}")

        emb = sinusoidal_embedding(steps, cfg.embed_dim)
        emb = self.time_fc2(silu(self.time_fc1(emb)))
        if cond_emb is not None:
            emb = emb + cond_emb

        pad = cfg.padded_length - length
        h = edge_pad_right(x, pad) if pad else x
        h = self.init_conv(h)

        skips: list[Tensor] = []
        for stage in self.downs:
            for block in stage.blocks:
                h = block(h, emb)
                skips.append(h)
            h = stage.attn(h)
            if stage.down is not None:
                h = stage.down(h)

        h = self.mid_block1(h, emb)
        h = self.mid_attn(h)
        h = self.mid_block2(h, emb)

        for stage in self.ups:
            for block in stage.blocks:
                h = block(concat([h, skips.pop()], axis=1), emb)
            h = stage.attn(h)
            if stage.up is not None:
                h = stage.up(upsample_nearest_2x(h))

        h = self.out_block(h, emb)
        h = self.out_conv(h)
        return crop_length(h, length) if pad else h


class DiscreteConditionEncoder(Module):
    """Class-label embedding table with one extra trainable unconditional row."""

    def __init__(self, num_classes: int, embed_dim: int, rng: np.random.Generator):
        self.num_classes = num_classes
        self.table = Embedding(num_classes + 1, embed_dim, rng)

    @property
    def uncond_index(self) -> int:
        return self.num_classes

    def encode(self, labels, drop_mask=None) -> Tensor:
        labels = np.asarray(labels, dtype=np.int64)
        if np.any(labels < 0) or np.any(labels > self.num_classes):
            raise ValueError(f"labels must lie in 0..{self.num_classes}")
        if drop_mask is not None:
            labels = np.where(np.asarray(drop_mask, bool), self.uncond_index, labels)
        return embedding_lookup(self.table.weight, labels)

    def encode_uncond(self, batch: int) -> Tensor:
        return self.encode(np.full(batch, self.uncond_index))


class ContinuousConditionEncoder(Module):
    """Two-layer map from a scalar target to the embedding space.

    The unconditional identifier is a separate trainable vector, never the
    zero vector by construction (random initialisation).
    """

    HIDDEN = 64

    def __init__(self, embed_dim: int, rng: np.random.Generator):
        self.fc1 = Linear(1, self.HIDDEN, rng)
        self.fc2 = Linear(self.HIDDEN, embed_dim, rng)
        self.uncond = Tensor(0.02 * rng.standard_normal(embed_dim), requires_grad=True)

    def encode(self, values, drop_mask=None) -> Tensor:
        values = np.asarray(values, dtype=np.float64).reshape(-1, 1)
        if not np.all(np.isfinite(values)):
            raise ValueError("condition values must be finite")
        emb = self.fc2(silu(self.fc1(Tensor(values))))
        if drop_mask is None:
            return emb
        mask = np.asarray(drop_mask, dtype=np.float64).reshape(-1, 1)
        uncond_rows = mul(reshape(self.uncond, (1, -1)), mask)
        return emb * (1.0 - mask) + uncond_rows

    def encode_uncond(self, batch: int) -> Tensor:
        return mul(reshape(self.uncond, (1, -1)), np.ones((batch, 1)))
