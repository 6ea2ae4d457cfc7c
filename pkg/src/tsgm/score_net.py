"""Conditional score network M(s, h_n^s, h_{n-1}^0): a 1-D U-net over the latent axis."""
from __future__ import annotations

import copy
import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import torch
from torch import nn
from torch.optim.swa_utils import AveragedModel, get_ema_multi_avg_fn

from .sde import SdeSpec

SCORE_FORMAT = "tsgm-score/1"


@dataclass
class ScoreNetConfig:
    latent_dim: int
    depth: int = 4
    base_channels: int = 32
    channel_mult: tuple = (1, 2, 2, 2)
    time_embed_dim: int = 32
    max_freq: float = 50.0
    cond_mode: str = "channel_concat"
    zero_head: bool = True
    # divide the raw output by the kernel std, so the network predicts noise
    scale_by_std: bool = True
    ema_decay: float = 0.999

    def __post_init__(self):
        if self.depth < 2:
            raise ValueError("U-net depth must be >= 2")
        if self.cond_mode != "channel_concat":
            raise ValueError(f"unsupported cond_mode {self.cond_mode!r}")
        self.channel_mult = tuple(self.channel_mult)
        if len(self.channel_mult) < self.depth:
            self.channel_mult = self.channel_mult + (self.channel_mult[-1],) * (self.depth - len(self.channel_mult))

    @property
    def padded_length(self) -> int:
        unit = 2 ** (self.depth - 1)
        return unit * math.ceil(self.latent_dim / unit)


def time_embed(s: torch.Tensor, dim: int = 32, max_freq: float = 50.0) -> torch.Tensor:
    """Sinusoidal embedding of diffusion time; frequencies are geometric in [1, max_freq]."""
    s = torch.as_tensor(s)
    if not s.is_floating_point():
        s = s.float()
    if s.ndim == 0:
        s = s[None]
    half = dim // 2
    freqs = max_freq ** (torch.arange(half, dtype=s.dtype) / max(half - 1, 1))
    angles = s[:, None] * freqs[None, :]
    return torch.cat([torch.sin(angles), torch.cos(angles)], dim=-1)


def _groups(channels: int) -> int:
    for g in (8, 4, 2, 1):
        if channels % g == 0:
            return g
    return 1


class ResBlock(nn.Module):
    def __init__(self, c_in: int, c_out: int, t_dim: int):
        super().__init__()
        self.norm1 = nn.GroupNorm(_groups(c_in), c_in)
        self.conv1 = nn.Conv1d(c_in, c_out, 3, padding=1)
        self.temb = nn.Linear(t_dim, c_out)
        self.norm2 = nn.GroupNorm(_groups(c_out), c_out)
        self.conv2 = nn.Conv1d(c_out, c_out, 3, padding=1)
        self.skip = nn.Conv1d(c_in, c_out, 1) if c_in != c_out else nn.Identity()

    def forward(self, x, temb):
        y = self.conv1(torch.nn.functional.silu(self.norm1(x)))
        y = y + self.temb(temb)[:, :, None]
        y = self.conv2(torch.nn.functional.silu(self.norm2(y)))
        return self.skip(x) + y


class UNet1d(nn.Module):
    def __init__(self, cfg: ScoreNetConfig):
        super().__init__()
        self.cfg = cfg
        t_dim = cfg.time_embed_dim * 2
        self.t_mlp = nn.Sequential(nn.Linear(cfg.time_embed_dim, t_dim), nn.SiLU(), nn.Linear(t_dim, t_dim))
        chans = [cfg.base_channels * m for m in cfg.channel_mult[: cfg.depth]]
        self.stem = nn.Conv1d(2, chans[0], 3, padding=1)
        self.down = nn.ModuleList()
        c_prev = chans[0]
        for c in chans:
            self.down.append(ResBlock(c_prev, c, t_dim))
            c_prev = c
        self.mid = ResBlock(c_prev, c_prev, t_dim)
        self.up = nn.ModuleList()
        for c in reversed(chans):
            self.up.append(ResBlock(c_prev + c, c, t_dim))
            c_prev = c
        self.head_norm = nn.GroupNorm(_groups(c_prev), c_prev)
        self.head = nn.Conv1d(c_prev, 1, 3, padding=1)
        if cfg.zero_head:
            nn.init.zeros_(self.head.weight)
            nn.init.zeros_(self.head.bias)

    def forward(self, s, h_s, h_prev):
        cfg = self.cfg
        length = h_s.shape[-1]
        pad = cfg.padded_length - length
        x = torch.stack([h_s, h_prev], dim=1)
        if pad:
            x = nn.functional.pad(x, (0, pad))
        temb = self.t_mlp(time_embed(s, cfg.time_embed_dim, cfg.max_freq))
        x = self.stem(x)
        skips = []
        for i, block in enumerate(self.down):
            x = block(x, temb)
            skips.append(x)
            if i < len(self.down) - 1:
                x = nn.functional.avg_pool1d(x, 2)
        x = self.mid(x, temb)
        for i, block in enumerate(self.up):
            skip = skips.pop()
            if x.shape[-1] != skip.shape[-1]:
                x = nn.functional.interpolate(x, size=skip.shape[-1], mode="nearest")
            x = block(torch.cat([x, skip], dim=1), temb)
        out = self.head(nn.functional.silu(self.head_norm(x)))[:, 0]
        return out[:, :length]


class ScoreModel(nn.Module):
    """Wraps the U-net so calls return a score estimate for h_s.

    The diffusion runs on standardized latents (h - latent_mean) / latent_std;
    the statistics are fixed buffers fitted once on encoded training data.
    """

    def __init__(self, cfg: ScoreNetConfig, sde: SdeSpec):
        super().__init__()
        self.cfg = cfg
        self.sde = sde
        self.net = UNet1d(cfg)
        self.register_buffer("latent_mean", torch.zeros(cfg.latent_dim))
        self.register_buffer("latent_std", torch.ones(cfg.latent_dim))

    @torch.no_grad()
    def fit_latent_stats(self, latents: torch.Tensor, min_std: float = 1e-3) -> None:
        flat = latents.reshape(-1, latents.shape[-1])
        self.latent_mean.copy_(flat.mean(0))
        self.latent_std.copy_(flat.std(0).clamp_min(min_std))

    def standardize(self, h: torch.Tensor) -> torch.Tensor:
        return (h - self.latent_mean) / self.latent_std

    def unstandardize(self, z: torch.Tensor) -> torch.Tensor:
        return z * self.latent_std + self.latent_mean

    def forward(self, s, h_s, h_prev):
        if h_s.shape != h_prev.shape:
            raise ValueError(f"h_s {tuple(h_s.shape)} and h_prev {tuple(h_prev.shape)} differ")
        if h_s.ndim != 2 or h_s.shape[-1] != self.cfg.latent_dim:
            raise ValueError(f"expected [batch, {self.cfg.latent_dim}] latents, got {tuple(h_s.shape)}")
        if not (torch.isfinite(h_s).all() and torch.isfinite(h_prev).all()):
            raise ValueError("non-finite score network input")
        s = torch.as_tensor(s, dtype=h_s.dtype)
        if s.ndim == 0:
            s = s.expand(h_s.shape[0])
        out = self.net(s, h_s, h_prev)
        if self.cfg.scale_by_std:
            out = -out / self.sde.transition(s).std[:, None]
        return out


@dataclass
class ScoreNetState:
    model: ScoreModel
    ema: AveragedModel = field(default=None)

    def __post_init__(self):
        if self.ema is None:
            self.ema = AveragedModel(
                self.model, multi_avg_fn=get_ema_multi_avg_fn(self.model.cfg.ema_decay), use_buffers=True
            )

    @property
    def config(self) -> ScoreNetConfig:
        return self.model.cfg

    def update_ema(self) -> None:
        self.ema.update_parameters(self.model)

    def ema_model(self) -> ScoreModel:
        return self.ema.module

    def fit_latent_stats(self, latents: torch.Tensor) -> None:
        self.model.fit_latent_stats(latents)
        self.ema.module.fit_latent_stats(latents)


def new_score_state(cfg: ScoreNetConfig, sde: SdeSpec, seed: Optional[int] = None) -> ScoreNetState:
    if seed is not None:
        torch.manual_seed(seed)
    return ScoreNetState(ScoreModel(cfg, sde))


def score_forward(state: ScoreNetState, s, h_s, h_prev, use_ema: bool = False) -> torch.Tensor:
    model = state.ema_model() if use_ema else state.model
    return model(s, h_s, h_prev)


def save_score(path, state: ScoreNetState, **meta) -> None:
    torch.save(
        {
            "format": SCORE_FORMAT,
            "config": asdict(state.config),
            "sde": state.model.sde.to_dict(),
            "state_dict": state.model.state_dict(),
            "ema_state_dict": state.ema.state_dict(),
            "meta": meta,
        },
        path,
    )


def load_score(path) -> ScoreNetState:
    ckpt = torch.load(path, map_location="cpu", weights_only=False)
    if ckpt.get("format") != SCORE_FORMAT:
        raise ValueError(f"{path}: not a score-network checkpoint")
    model = ScoreModel(ScoreNetConfig(**ckpt["config"]), SdeSpec.from_dict(ckpt["sde"]))
    model.load_state_dict(ckpt["state_dict"])
    state = ScoreNetState(model)
    state.ema.load_state_dict(ckpt["ema_state_dict"])
    return state


def clone_state(state: ScoreNetState) -> ScoreNetState:
    return copy.deepcopy(state)
