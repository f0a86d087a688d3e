"""Noise-prediction U-Net over (channels x time) EEG grids.

The condition x_delta and the noisy target y_t are stacked as two input
planes.  Residual blocks are BigGAN-style (norm -> SiLU -> conv) with a
FiLM-style noise-level modulation, U-Net skips are merged additively and
rescaled by 1/sqrt(2), and self-attention runs on every stage whose grid is
no larger than ``attention_resolution`` along either axis.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

SKIP_SCALE = 1.0 / math.sqrt(2.0)
EMBED_SCALE = 1000.0
MAX_PERIOD = 10000.0


@dataclass
class DenoiserConfig:
    base_width: int = 32
    channel_multipliers: tuple[int, ...] = (1, 2, 4, 8)
    blocks_per_stage: int = 2
    attention_resolution: int = 16
    dropout: float = 0.2
    gamma_embed_dim: int = 128

    def __post_init__(self):
        self.channel_multipliers = tuple(int(m) for m in self.channel_multipliers)
        if self.depth < 1:
            raise ValueError("need at least one stage")
        if self.base_width < 1 or self.blocks_per_stage < 1:
            raise ValueError("base_width and blocks_per_stage must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        if self.gamma_embed_dim < 2 or self.gamma_embed_dim % 2:
            raise ValueError("gamma_embed_dim must be a positive even number")

    @property
    def depth(self) -> int:
        return len(self.channel_multipliers)

    def stage_grids(self, epoch_shape: tuple[int, int]) -> list[tuple[int, int]]:
        """Spatial grid at each stage, validating divisibility."""
        c, l = epoch_shape
        factor = 2 ** (self.depth - 1)
        if c % factor or l % factor:
            raise ValueError(
                f"epoch shape {epoch_shape} is not divisible by 2**{self.depth - 1}"
            )
        return [(c // 2**i, l // 2**i) for i in range(self.depth)]

    def attention_stages(self, epoch_shape: tuple[int, int]) -> list[int]:
        return [
            i
            for i, grid in enumerate(self.stage_grids(epoch_shape))
            if max(grid) <= self.attention_resolution
        ]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["channel_multipliers"] = list(self.channel_multipliers)
        return d


def gamma_embedding(gamma, dim: int):
    """Sinusoidal features of sqrt(gamma) at geometrically spaced frequencies.

    Accepts a float, a numpy array or a torch tensor of levels and returns
    the matching type with a trailing axis of length ``dim``.
    """
    if dim % 2:
        raise ValueError(f"embedding dim must be even, got {dim}")
    half = dim // 2
    if isinstance(gamma, torch.Tensor):
        freqs = torch.exp(
            -math.log(MAX_PERIOD)
            * torch.arange(half, dtype=gamma.dtype, device=gamma.device)
            / half
        )
        arg = EMBED_SCALE * gamma.sqrt()[..., None] * freqs
        return torch.cat([torch.sin(arg), torch.cos(arg)], dim=-1)
    g = np.asarray(gamma, dtype=np.float64)
    freqs = np.exp(-math.log(MAX_PERIOD) * np.arange(half) / half)
    arg = EMBED_SCALE * np.sqrt(g)[..., None] * freqs
    return np.concatenate([np.sin(arg), np.cos(arg)], axis=-1)


def _groups(width: int) -> int:
    for g in (32, 16, 8, 4, 2):
        if width % g == 0:
            return g
    return 1


class ResBlock(nn.Module):
    def __init__(self, in_width: int, out_width: int, embed_dim: int, dropout: float):
        super().__init__()
        self.norm1 = nn.GroupNorm(_groups(in_width), in_width)
        self.conv1 = nn.Conv2d(in_width, out_width, 3, padding=1)
        self.film = nn.Linear(embed_dim, 2 * out_width)
        self.norm2 = nn.GroupNorm(_groups(out_width), out_width)
        self.dropout = nn.Dropout(dropout)
        self.conv2 = nn.Conv2d(out_width, out_width, 3, padding=1)
        self.shortcut = (
            nn.Conv2d(in_width, out_width, 1) if in_width != out_width else nn.Identity()
        )

    def forward(self, x, emb):
        h = self.conv1(F.silu(self.norm1(x)))
        scale, shift = self.film(emb)[:, :, None, None].chunk(2, dim=1)
        h = self.norm2(h) * (1 + scale) + shift
        h = self.conv2(self.dropout(F.silu(h)))
        return (self.shortcut(x) + h) * SKIP_SCALE


class SelfAttention(nn.Module):
    def __init__(self, width: int):
        super().__init__()
        self.norm = nn.GroupNorm(_groups(width), width)
        self.qkv = nn.Conv2d(width, 3 * width, 1)
        self.proj = nn.Conv2d(width, width, 1)

    def forward(self, x, emb=None):
        b, c, h, w = x.shape
        q, k, v = self.qkv(self.norm(x)).reshape(b, 3, c, h * w).unbind(1)
        attn = torch.softmax(torch.einsum("bci,bcj->bij", q, k) / math.sqrt(c), dim=-1)
        out = torch.einsum("bij,bcj->bci", attn, v).reshape(b, c, h, w)
        return (x + self.proj(out)) * SKIP_SCALE


class SkipMerge(nn.Module):
    """(h + skip) / sqrt(2)."""

    def forward(self, h, skip):
        return (h + skip) * SKIP_SCALE


class Downsample(nn.Module):
    def __init__(self, width: int):
        super().__init__()
        self.conv = nn.Conv2d(width, width, 3, stride=2, padding=1)

    def forward(self, x):
        return self.conv(x)


class Upsample(nn.Module):
    def __init__(self, in_width: int, out_width: int):
        super().__init__()
        self.conv = nn.Conv2d(in_width, out_width, 3, padding=1)

    def forward(self, x):
        return self.conv(F.interpolate(x, scale_factor=2.0, mode="nearest"))


class _Stage(nn.Module):
    def __init__(self, blocks, attentions):
        super().__init__()
        self.blocks = nn.ModuleList(blocks)
        self.attentions = nn.ModuleList(attentions)

    def forward(self, h, emb):
        for block, attn in zip(self.blocks, self.attentions):
            h = attn(block(h, emb))
        return h


class _NoAttention(nn.Module):
    def forward(self, x):
        return x


class UNet(nn.Module):
    """f(x_delta, y_t, gamma) -> predicted noise, all grids ``(B, C, L)``."""

    def __init__(self, config: DenoiserConfig, epoch_shape: tuple[int, int]):
        super().__init__()
        self.config = config
        self.epoch_shape = tuple(int(s) for s in epoch_shape)
        attn_stages = set(config.attention_stages(self.epoch_shape))
        widths = [config.base_width * m for m in config.channel_multipliers]
        edim = config.gamma_embed_dim
        tdim = 4 * edim

        self.embed = nn.Sequential(nn.Linear(edim, tdim), nn.SiLU(), nn.Linear(tdim, tdim))
        self.head = nn.Conv2d(2, widths[0], 3, padding=1)

        def attention(i, w):
            return SelfAttention(w) if i in attn_stages else _NoAttention()

        self.down = nn.ModuleList()
        self.downsample = nn.ModuleList()
        width = widths[0]
        for i, w in enumerate(widths):
            blocks, attns = [], []
            for _ in range(config.blocks_per_stage):
                blocks.append(ResBlock(width, w, tdim, config.dropout))
                attns.append(attention(i, w))
                width = w
            self.down.append(_Stage(blocks, attns))
            if i < config.depth - 1:
                self.downsample.append(Downsample(w))

        bottom = config.depth - 1
        self.mid = _Stage(
            [ResBlock(width, width, tdim, config.dropout) for _ in range(2)],
            [attention(bottom, width), _NoAttention()],
        )

        self.merge = SkipMerge()
        self.up = nn.ModuleList()
        self.upsample = nn.ModuleList()
        for i in reversed(range(config.depth)):
            w = widths[i]
            blocks = [
                ResBlock(w, w, tdim, config.dropout) for _ in range(config.blocks_per_stage)
            ]
            attns = [attention(i, w) for _ in blocks]
            self.up.append(_Stage(blocks, attns))
            if i > 0:
                self.upsample.append(Upsample(w, widths[i - 1]))

        self.tail = nn.Sequential(
            nn.GroupNorm(_groups(widths[0]), widths[0]),
            nn.SiLU(),
            nn.Conv2d(widths[0], 1, 3, padding=1),
        )

    @property
    def has_attention(self) -> bool:
        return any(isinstance(m, SelfAttention) for m in self.modules())

    def forward(self, x_delta, y_t, gamma):
        if x_delta.shape != y_t.shape or tuple(y_t.shape[-2:]) != self.epoch_shape:
            raise ValueError(
                f"expected inputs of shape (B, {self.epoch_shape[0]}, {self.epoch_shape[1]}),"
                f" got {tuple(x_delta.shape)} and {tuple(y_t.shape)}"
            )
        gamma = torch.as_tensor(gamma, dtype=y_t.dtype, device=y_t.device).reshape(-1)
        if gamma.numel() == 1 and y_t.shape[0] != 1:
            gamma = gamma.expand(y_t.shape[0])
        emb = self.embed(gamma_embedding(gamma, self.config.gamma_embed_dim))

        h = self.head(torch.stack([x_delta, y_t], dim=1))
        skips = []
        for i, stage in enumerate(self.down):
            h = stage(h, emb)
            skips.append(h)
            if i < len(self.downsample):
                h = self.downsample[i](h)
        h = self.mid(h, emb)
        for j, stage in enumerate(self.up):
            h = stage(self.merge(h, skips.pop()), emb)
            if j < len(self.upsample):
                h = self.upsample[j](h)
        return self.tail(h)[:, 0]


def build_denoiser(
    config: DenoiserConfig | None = None,
    epoch_shape: tuple[int, int] = (32, 128),
    seed: int | None = 0,
) -> "Denoiser":
    config = config or DenoiserConfig()
    if seed is not None:
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(seed)
            net = UNet(config, epoch_shape)
    else:
        net = UNet(config, epoch_shape)
    return Denoiser(net)


class Denoiser:
    """Inference wrapper turning the U-Net into a numpy-in/numpy-out callable.

    Calling it with torch tensors goes straight to the network (train mode is
    left as is), which is what the training loss relies on.
    """

    def __init__(self, net: UNet):
        self.net = net

    @property
    def config(self) -> DenoiserConfig:
        return self.net.config

    @property
    def epoch_shape(self) -> tuple[int, int]:
        return self.net.epoch_shape

    def n_parameters(self) -> int:
        return sum(p.numel() for p in self.net.parameters())

    def __call__(self, x_delta, y_t, gamma):
        if isinstance(y_t, torch.Tensor):
            return self.net(x_delta, y_t, gamma)
        return denoise_forward(self, x_delta, y_t, gamma)

    def state_dict(self):
        return self.net.state_dict()


def denoise_forward(model: Denoiser, x_delta, y_t, gamma, batch_size: int = 256) -> np.ndarray:
    """Predicted noise for one epoch ``(C, L)`` or a stack ``(N, C, L)``."""
    x_delta = np.asarray(x_delta)
    y_t = np.asarray(y_t)
    if x_delta.shape != y_t.shape:
        raise ValueError(f"condition {x_delta.shape} and target {y_t.shape} differ")
    single = y_t.ndim == 2
    if single:
        x_delta, y_t = x_delta[None], y_t[None]
    if tuple(y_t.shape[1:]) != model.epoch_shape:
        raise ValueError(f"model expects epochs of shape {model.epoch_shape}, got {y_t.shape[1:]}")
    gamma = np.array(np.broadcast_to(np.asarray(gamma, dtype=np.float64), (len(y_t),)))
    net = model.net
    dtype = next(net.parameters()).dtype
    was_training = net.training
    net.eval()
    out = []
    try:
        with torch.no_grad():
            for s in range(0, len(y_t), batch_size):
                sl = slice(s, s + batch_size)
                pred = net(
                    torch.as_tensor(x_delta[sl], dtype=dtype),
                    torch.as_tensor(y_t[sl], dtype=dtype),
                    torch.as_tensor(gamma[sl], dtype=dtype),
                )
                out.append(pred.numpy())
    finally:
        net.train(was_training)
    eps = np.concatenate(out).astype(y_t.dtype if y_t.dtype.kind == "f" else np.float32)
    if not np.all(np.isfinite(eps)):
        raise FloatingPointError("denoiser output is not finite")
    return eps[0] if single else eps


def save_checkpoint(path, model: Denoiser, meta: dict | None = None, extra: dict | None = None):
    """Write ``<path>/model.pt`` plus a JSON sidecar ``<path>/checkpoint.json``."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    blob = {"state_dict": model.net.state_dict()}
    if extra:
        blob.update(extra)
    torch.save(blob, path / "model.pt")
    sidecar = {
        "config": model.config.to_dict(),
        "epoch_shape": list(model.epoch_shape),
        **(meta or {}),
    }
    (path / "checkpoint.json").write_text(json.dumps(sidecar, indent=2))
    return path


def load_checkpoint(path) -> tuple[Denoiser, dict, dict]:
    """Return ``(model, sidecar, blob)``; ``blob`` carries optimizer/rng state if saved."""
    path = Path(path)
    sidecar_file = path / "checkpoint.json"
    if not sidecar_file.exists():
        raise FileNotFoundError(f"no checkpoint sidecar in {path}")
    sidecar = json.loads(sidecar_file.read_text())
    config = DenoiserConfig(**sidecar["config"])
    net = UNet(config, tuple(sidecar["epoch_shape"]))
    blob = torch.load(path / "model.pt", map_location="cpu", weights_only=False)
    net.load_state_dict(blob["state_dict"])
    return Denoiser(net), sidecar, blob
