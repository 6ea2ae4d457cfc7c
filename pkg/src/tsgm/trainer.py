"""Autoencoder pre-training and conditional denoising score matching."""
from __future__ import annotations

import copy
import csv
import logging
import math
from collections import deque
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import torch
from torch import nn

from .codec import recon_loss, take
from .score_net import ScoreModel, ScoreNetState
from .sde import SdeSpec

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "tsgm-train/1"


class TrainingError(RuntimeError):
    pass


class NonFiniteLossError(TrainingError):
    pass


class DivergenceError(TrainingError):
    pass


@dataclass
class TrainConfig:
    iter_pre: int = 50000
    iter_main: int = 40000
    use_alt: bool = False
    batch_size: int = 128
    lr_codec: float = 1e-3
    lr_score: float = 2e-4
    grad_clip: float = 1.0
    alt_period: int = 5
    eps: float = 1e-5
    seed: int = 0
    sde: SdeSpec = field(default_factory=SdeSpec)
    divergence_window: int = 100
    divergence_factor: float = 10.0

    def __post_init__(self):
        if self.iter_pre < 1 or self.iter_main < 1:
            raise ValueError("iter_pre and iter_main must be >= 1")
        if isinstance(self.sde, dict):
            self.sde = SdeSpec.from_dict(self.sde)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["sde"] = self.sde.to_dict()
        return d


# Best settings per dataset: (dim(h), use_alt, iter_pre, iter_main[, D_hidden])
REGULAR_PRESETS = {
    "stocks": dict(latent_dim=24, use_alt=True, iter_pre=50000, iter_main=40000),
    "energy": dict(latent_dim=56, use_alt=False, iter_pre=100000, iter_main=40000),
    "air": dict(latent_dim=40, use_alt=True, iter_pre=50000, iter_main=40000),
    "ai4i": dict(latent_dim=24, use_alt=True, iter_pre=50000, iter_main=40000),
}
IRREGULAR_PRESETS = {
    "stocks": dict(decoder_hidden=48, latent_dim=24, use_alt=True, iter_pre=50000, iter_main=40000),
    "energy": dict(decoder_hidden=112, latent_dim=56, use_alt=False, iter_pre=50000, iter_main=40000),
    "air": dict(decoder_hidden=40, latent_dim=40, use_alt=True, iter_pre=50000, iter_main=40000),
    "ai4i": dict(decoder_hidden=48, latent_dim=24, use_alt=True, iter_pre=50000, iter_main=40000),
}


def preset_train_config(dataset: str, regular: bool = True, **overrides) -> TrainConfig:
    table = REGULAR_PRESETS if regular else IRREGULAR_PRESETS
    p = table[dataset.lower()]
    kw = dict(iter_pre=p["iter_pre"], iter_main=p["iter_main"], use_alt=p["use_alt"])
    kw.update(overrides)
    return TrainConfig(**kw)


def _n_rows(inputs: dict) -> int:
    return next(v.shape[0] for v in inputs.values() if v.ndim > 0)


def _batch_index(n: int, size: int, gen: torch.Generator) -> torch.Tensor:
    if size >= n:
        return torch.randperm(n, generator=gen)
    return torch.randperm(n, generator=gen)[:size]


def _check_loss(loss: torch.Tensor, step: int, what: str) -> None:
    if not torch.isfinite(loss):
        raise NonFiniteLossError(f"{what}: non-finite loss {loss.item()} at step {step}")


def _codec_step(codec, inputs, opt, clip) -> torch.Tensor:
    opt.zero_grad(set_to_none=True)
    recon = codec.decode(codec.encode(inputs))
    loss = recon_loss(inputs["target"], recon, None if codec.kind == "regular" else inputs["mask"])
    loss.backward()
    nn.utils.clip_grad_norm_(codec.parameters(), clip)
    opt.step()
    return loss.detach()


def pretrain_codec(codec: nn.Module, data, cfg: TrainConfig, steps: Optional[int] = None, callback: Optional[Callable] = None):
    """Fit encoder and decoder on the reconstruction loss. Returns (codec, loss curve).

    ``data`` is a SeriesBatch or the dict returned by ``codec.prepare``.
    """
    inputs = data if isinstance(data, dict) else codec.prepare(data)
    steps = steps or cfg.iter_pre
    gen = torch.Generator().manual_seed(cfg.seed)
    opt = torch.optim.Adam(codec.parameters(), lr=cfg.lr_codec)
    n = _n_rows(inputs)
    curve = []
    codec.train()
    for step in range(1, steps + 1):
        idx = _batch_index(n, cfg.batch_size, gen)
        loss = _codec_step(codec, take(inputs, idx), opt, cfg.grad_clip)
        _check_loss(loss, step, "codec pre-training")
        curve.append(loss.item())
        if callback is not None and callback(step, loss.item()) is False:
            break
    codec.eval()
    return codec, curve


def _score_callable(score):
    if isinstance(score, ScoreNetState):
        return score.model
    return score


def shifted_conditions(h0: torch.Tensor) -> torch.Tensor:
    """h_{n-1}^0 for every order n, with h_0^0 = 0."""
    return torch.cat([torch.zeros_like(h0[:, :1]), h0[:, :-1]], dim=1)


def dsm_loss(score, codec, inputs: dict, sde: SdeSpec, gen: torch.Generator, eps: float = 1e-5) -> torch.Tensor:
    """Conditional denoising score-matching loss on latent sequences.

    Every (sample, order) pair gets its own diffusion time s ~ U(eps, 1).  With
    ``codec=None`` the clean sequences are read from ``inputs["latents"]``.
    A ScoreModel sees standardized latents; plain callables see them raw.
    """
    model = _score_callable(score)
    if codec is None:
        h0 = inputs["latents"]
    else:
        with torch.no_grad():
            h0 = codec.encode(inputs)
    h0 = h0.detach()
    if isinstance(model, ScoreModel):
        h0 = model.standardize(h0)
    b, n, dh = h0.shape
    h_prev = shifted_conditions(h0).reshape(b * n, dh)
    h0 = h0.reshape(b * n, dh)
    s = eps + (1.0 - eps) * torch.rand(b * n, generator=gen)
    noise = torch.randn(b * n, dh, generator=gen)
    h_s = sde.perturb(s, h0, noise)
    target = sde.kernel_score(s, h_s, h0)
    pred = model(s, h_s, h_prev)
    weight = sde.lambda_weight(s)
    return (weight * ((pred - target) ** 2).sum(dim=-1)).mean()


def train_score(
    score_state: ScoreNetState,
    codec: Optional[nn.Module],
    data,
    cfg: TrainConfig,
    steps: Optional[int] = None,
    callback: Optional[Callable] = None,
    resume: Optional[dict] = None,
    checkpoint_every: int = 0,
    checkpoint_path=None,
    fit_latents: bool = True,
):
    """Main training phase. Returns (score_state, loss curve).

    When ``cfg.use_alt`` is set, one codec reconstruction step follows every
    ``cfg.alt_period`` score steps; otherwise the codec is never touched.
    Latent standardization statistics are fitted from the codec before the
    first step (skipped on resume, where they come from the checkpoint).
    """
    if codec is None:
        inputs = data
    else:
        inputs = data if isinstance(data, dict) else codec.prepare(data)
    steps = steps or cfg.iter_main
    model = score_state.model
    gen = torch.Generator().manual_seed(cfg.seed + 1)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr_score)
    codec_opt = torch.optim.Adam(codec.parameters(), lr=cfg.lr_codec) if (cfg.use_alt and codec is not None) else None
    start = 1
    curve: list = []
    if resume is not None:
        opt.load_state_dict(resume["score_opt"])
        if codec_opt is not None and resume.get("codec_opt") is not None:
            codec_opt.load_state_dict(resume["codec_opt"])
        gen.set_state(resume["rng"])
        start = resume["step"] + 1
        curve = list(resume["curve"])
    n = _n_rows(inputs)
    if resume is None and codec is not None and fit_latents:
        with torch.no_grad():
            score_state.fit_latent_stats(codec.encode(inputs))
    window: deque = deque(maxlen=cfg.divergence_window)
    best = math.inf
    if codec is not None:
        codec.eval()
    model.train()
    for step in range(start, steps + 1):
        idx = _batch_index(n, cfg.batch_size, gen)
        batch = take(inputs, idx)
        opt.zero_grad(set_to_none=True)
        loss = dsm_loss(score_state, codec, batch, cfg.sde, gen, cfg.eps)
        _check_loss(loss, step, "score training")
        loss.backward()
        nn.utils.clip_grad_norm_(model.parameters(), cfg.grad_clip)
        opt.step()
        score_state.update_ema()
        curve.append(loss.item())

        window.append(loss.item())
        if len(window) == window.maxlen:
            smooth = sum(window) / len(window)
            best = min(best, smooth)
            if smooth > cfg.divergence_factor * best:
                raise DivergenceError(
                    f"smoothed score loss {smooth:.4g} exceeds {cfg.divergence_factor}x its minimum {best:.4g} at step {step}"
                )

        if codec_opt is not None and step % cfg.alt_period == 0:
            codec.train()
            closs = _codec_step(codec, batch, codec_opt, cfg.grad_clip)
            _check_loss(closs, step, "alternating codec step")
            codec.eval()

        if checkpoint_every and checkpoint_path and step % checkpoint_every == 0:
            save_training_checkpoint(checkpoint_path, score_state, codec, opt, codec_opt, gen, step, curve, cfg)
        if callback is not None and callback(step, loss.item()) is False:
            break
    model.eval()
    return score_state, curve


def save_training_checkpoint(path, score_state, codec, opt, codec_opt, gen, step, curve, cfg: TrainConfig) -> None:
    torch.save(
        {
            "format": CHECKPOINT_FORMAT,
            "step": step,
            "score_state_dict": score_state.model.state_dict(),
            "ema_state_dict": score_state.ema.state_dict(),
            "codec_state_dict": None if codec is None else codec.state_dict(),
            "score_opt": opt.state_dict(),
            "codec_opt": None if codec_opt is None else codec_opt.state_dict(),
            "rng": gen.get_state(),
            "curve": list(curve),
            "config": cfg.to_dict(),
        },
        path,
    )


def load_training_checkpoint(path, score_state, codec=None) -> dict:
    """Restore model weights in place and return the resume dict for ``train_score``."""
    ckpt = torch.load(path, map_location="cpu", weights_only=False)
    if ckpt.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: not a training checkpoint")
    score_state.model.load_state_dict(ckpt["score_state_dict"])
    score_state.ema.load_state_dict(ckpt["ema_state_dict"])
    if codec is not None and ckpt["codec_state_dict"] is not None:
        codec.load_state_dict(ckpt["codec_state_dict"])
    return ckpt


def write_curve(path, curve, name: str = "loss") -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", name])
        for i, v in enumerate(curve, start=1):
            w.writerow([i, f"{v:.8g}"])


def smooth(curve, window: int = 100) -> list:
    out, acc = [], deque(maxlen=window)
    for v in curve:
        acc.append(v)
        out.append(sum(acc) / len(acc))
    return out


def snapshot(module: nn.Module) -> dict:
    return copy.deepcopy(module.state_dict())
