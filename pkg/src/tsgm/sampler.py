"""Recursive predictor-corrector sampling of latent sequences."""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Callable, Optional

import numpy as np
import torch

from .data import SeriesBatch
from .score_net import ScoreNetState
from .sde import SdeKind, SdeSpec

ScoreFn = Callable[[torch.Tensor, torch.Tensor, torch.Tensor], torch.Tensor]


class SamplingError(RuntimeError):
    def __init__(self, msg, order=None, step=None):
        super().__init__(msg)
        self.order = order
        self.step = step


@dataclass
class SamplerConfig:
    n_steps: int = 1000
    corrector_steps: int = 1
    snr: float = 0.16
    seed: int = 0
    eps: float = 1e-3
    eta_floor: float = 1e-8
    use_ema: bool = True

    def __post_init__(self):
        if self.n_steps < 1:
            raise ValueError("n_steps must be >= 1")
        if self.corrector_steps > 0 and self.snr <= 0:
            raise ValueError("snr must be > 0 when the corrector is enabled")

    def to_dict(self) -> dict:
        return asdict(self)


def order_generator(seed: int, order: int) -> torch.Generator:
    """Independent noise stream for one sequential order, derived from the run seed."""
    state = np.random.SeedSequence([seed, order]).generate_state(1, dtype=np.uint64)[0]
    return torch.Generator().manual_seed(int(state) & 0x7FFF_FFFF_FFFF_FFFF)


def _as_score_fn(score, use_ema: bool = True) -> ScoreFn:
    if isinstance(score, ScoreNetState):
        return score.ema_model() if use_ema else score.model
    return score


def _svec(s, h):
    return torch.full((h.shape[0],), float(s), dtype=h.dtype)


def predictor_step(sde: SdeSpec, score, s: float, ds: float, h, h_prev, gen, add_noise: bool = True):
    """One Euler-Maruyama step of the conditional reverse SDE (ds < 0).

    Returns (new state, noise-free mean).
    """
    if ds >= 0:
        raise ValueError("reverse-time step ds must be negative")
    score_fn = _as_score_fn(score)
    sv = _svec(s, h)
    g = sde.diffusion(sv)[:, None]
    rev_drift = sde.drift(sv, h) - g**2 * score_fn(sv, h, h_prev)
    mean = h + rev_drift * ds
    if not add_noise:
        return mean, mean
    z = torch.randn(h.shape, generator=gen, dtype=h.dtype)
    return mean + g * np.sqrt(-ds) * z, mean


def corrector_step(sde: SdeSpec, score, s: float, h, h_prev, snr: float, gen, n_steps: int = 1000, eta_floor: float = 1e-8):
    """One Langevin correction step at fixed diffusion time s.

    The step size follows the signal-to-noise rule eta = 2 alpha (snr |z| / |score|)^2,
    with both norms averaged over the batch, where alpha = 1 - beta(s) / n_steps for
    VP/subVP (clamped at 0 for very coarse grids) and 1 for VE.  Per-sample norms are unstable in low dimension: a sample
    whose score happens to vanish would receive an unbounded step.
    """
    score_fn = _as_score_fn(score)
    sv = _svec(s, h)
    grad = score_fn(sv, h, h_prev)
    z = torch.randn(h.shape, generator=gen, dtype=h.dtype)
    grad_norm = grad.flatten(1).norm(dim=1).mean()
    noise_norm = z.flatten(1).norm(dim=1).mean()
    alpha = 1.0 if sde.kind is SdeKind.VE else max(0.0, 1.0 - float(sde.beta_at(float(s))) / n_steps)
    eta = 2.0 * alpha * (snr * noise_norm / grad_norm.clamp_min(1e-30)) ** 2
    if not grad_norm > 0:
        eta = torch.full_like(eta, eta_floor)
    mean = h + eta * grad
    return mean + torch.sqrt(2.0 * eta) * z, mean


def time_grid(n_steps: int, eps: float) -> np.ndarray:
    """n_steps + 1 diffusion times from 1 down to eps."""
    return np.linspace(1.0, eps, n_steps + 1)


def denoise(sde: SdeSpec, score, h_prev: torch.Tensor, cfg: SamplerConfig, gen: torch.Generator, order: int = 1):
    """Run one reverse trajectory from a fresh prior draw, conditioned on h_prev."""
    score_fn = _as_score_fn(score, cfg.use_ema)
    h = sde.prior_sample(tuple(h_prev.shape), gen).to(h_prev.dtype)
    grid = time_grid(cfg.n_steps, cfg.eps)
    for k in range(cfg.n_steps):
        s, ds = grid[k], grid[k + 1] - grid[k]
        for _ in range(cfg.corrector_steps):
            h, _ = corrector_step(sde, score_fn, s, h, h_prev, cfg.snr, gen, cfg.n_steps, cfg.eta_floor)
        h, _ = predictor_step(sde, score_fn, s, ds, h, h_prev, gen)
        if not torch.isfinite(h).all():
            raise SamplingError(f"non-finite latent at order {order}, step {k}", order, k)
    return h


@torch.no_grad()
def generate_latents(
    sde: SdeSpec,
    score,
    n_orders: int,
    batch: int,
    latent_dim: int,
    cfg: SamplerConfig,
    prefix: Optional[torch.Tensor] = None,
) -> torch.Tensor:
    """Recursively generate h_1..h_N, each conditioned on the previously generated latent.

    With ``prefix`` ([batch, k, dim]) generation resumes at order k+1.
    """
    score_fn = _as_score_fn(score, cfg.use_ema)
    out = [] if prefix is None else list(prefix.unbind(dim=1))
    h_prev = torch.zeros(batch, latent_dim) if not out else out[-1]
    for order in range(len(out) + 1, n_orders + 1):
        gen = order_generator(cfg.seed, order)
        h = denoise(sde, score_fn, h_prev, cfg, gen, order)
        out.append(h)
        h_prev = h
    return torch.stack(out, dim=1)


@torch.no_grad()
def generate_sequence(sde: SdeSpec, score_state, codec, n_orders: int, batch: int, cfg: SamplerConfig) -> SeriesBatch:
    """Generate latents order by order, then decode the full sequence at once."""
    latents = generate_latents(sde, score_state, n_orders, batch, codec.latent_dim, cfg)
    model = _as_score_fn(score_state, cfg.use_ema)
    if hasattr(model, "unstandardize"):
        latents = model.unstandardize(latents)
    x = codec.decode(latents)
    return SeriesBatch.from_values(x.numpy().astype(np.float64))
