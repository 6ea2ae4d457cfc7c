"""Encoders/decoders between series space and the latent sequence space.

Regular series use a GRU encoder and a GRU decoder.  Irregular series use a
neural CDE encoder driven by a natural cubic spline of the observations and a
GRU-ODE decoder that emits the complete regular grid.
"""
from __future__ import annotations

from typing import Optional

import numpy as np
import torch
from torch import nn

from .data import SeriesBatch, uniform_grid
from .spline import natural_cubic_spline

CODEC_FORMAT = "tsgm-codec/1"


class SolverDivergenceError(RuntimeError):
    """Raised when an ODE solve produces a non-finite hidden state."""


def _check_finite(x: torch.Tensor, where: str) -> torch.Tensor:
    if not torch.isfinite(x).all():
        raise SolverDivergenceError(f"non-finite hidden state in {where}")
    return x


def recon_loss(target: torch.Tensor, recon: torch.Tensor, mask: Optional[torch.Tensor] = None) -> torch.Tensor:
    """Mean squared error over observed entries (all entries when mask is None)."""
    if target.shape != recon.shape:
        raise ValueError(f"shape mismatch: {tuple(target.shape)} vs {tuple(recon.shape)}")
    sq = (recon - target) ** 2
    if mask is None:
        return sq.mean()
    w = mask.to(sq.dtype).unsqueeze(-1).expand_as(sq)
    total = w.sum()
    if total == 0:
        raise ValueError("every entry is masked")
    return (sq * w).sum() / total


class GRUCodec(nn.Module):
    """Single-layer GRU encoder h_n = e(h_{n-1}, x_n) and GRU decoder x_n = d(h_n)."""

    kind = "regular"

    def __init__(self, input_dim: int, latent_dim: int):
        super().__init__()
        self.input_dim = input_dim
        self.latent_dim = latent_dim
        self.encoder = nn.GRU(input_dim, latent_dim, batch_first=True)
        self.decoder = nn.GRU(latent_dim, latent_dim, batch_first=True)
        self.readout = nn.Linear(latent_dim, input_dim)

    def descriptor(self) -> dict:
        return {"kind": self.kind, "input_dim": self.input_dim, "latent_dim": self.latent_dim}

    def prepare(self, batch: SeriesBatch) -> dict:
        if not batch.regular:
            raise ValueError("the GRU codec only accepts regular batches")
        values = torch.as_tensor(batch.values, dtype=torch.float32)
        return {"values": values, "target": values, "mask": torch.as_tensor(batch.mask)}

    def encode(self, inputs: dict) -> torch.Tensor:
        x = inputs["values"]
        if x.shape[-1] != self.input_dim:
            raise ValueError(f"expected {self.input_dim} features, got {x.shape[-1]}")
        h, _ = self.encoder(x)
        return h

    def decode(self, h: torch.Tensor) -> torch.Tensor:
        if h.shape[-1] != self.latent_dim:
            raise ValueError(f"expected latent dim {self.latent_dim}, got {h.shape[-1]}")
        d, _ = self.decoder(h)
        return self.readout(d)


class CDEVectorField(nn.Module):
    """f(h): R^{dim(h)} -> R^{dim(h) x (dim(x)+1)}, three ReLU layers then Tanh."""

    def __init__(self, input_dim: int, latent_dim: int):
        super().__init__()
        width = 4 * input_dim
        self.latent_dim = latent_dim
        self.control_dim = input_dim + 1
        self.net = nn.Sequential(
            nn.Linear(latent_dim, width),
            nn.ReLU(),
            nn.Linear(width, width),
            nn.ReLU(),
            nn.Linear(width, width),
            nn.ReLU(),
            nn.Linear(width, latent_dim * self.control_dim),
            nn.Tanh(),
        )

    def forward(self, h: torch.Tensor) -> torch.Tensor:
        return self.net(h).view(*h.shape[:-1], self.latent_dim, self.control_dim)


class GRUODEField(nn.Module):
    """GRU-ODE dynamics dd/dt = (1 - z) * (u - d) with ReLU r/z gates and Tanh candidate."""

    def __init__(self, hidden_dim: int):
        super().__init__()
        self.lin_r = nn.Linear(hidden_dim, hidden_dim)
        self.lin_z = nn.Linear(hidden_dim, hidden_dim)
        self.lin_u = nn.Linear(hidden_dim, hidden_dim)

    def forward(self, d: torch.Tensor) -> torch.Tensor:
        r = torch.relu(self.lin_r(d))
        z = torch.relu(self.lin_z(d))
        u = torch.tanh(self.lin_u(r * d))
        return (1 - z) * (u - d)


def _rk4(field, y, dt, k_args):
    """One classical Runge-Kutta step; k_args supplies the extra input at t, t+dt/2, t+dt."""
    a0, a_mid, a1 = k_args
    k1 = field(y, a0)
    k2 = field(y + 0.5 * dt * k1, a_mid)
    k3 = field(y + 0.5 * dt * k2, a_mid)
    k4 = field(y + dt * k3, a1)
    return y + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)


class NCDECodec(nn.Module):
    """Neural CDE encoder with a GRU-ODE decoder for irregularly observed series.

    The encoder integrates dh = f(h) dX with fixed-step RK4, ``substeps`` steps per
    grid interval, and reports h at every order of the full regular grid.
    """

    kind = "irregular"

    def __init__(self, input_dim: int, latent_dim: int, decoder_hidden: Optional[int] = None, substeps: int = 4):
        super().__init__()
        self.input_dim = input_dim
        self.latent_dim = latent_dim
        self.decoder_hidden = decoder_hidden or 2 * latent_dim
        self.substeps = substeps
        self.initial = nn.Linear(input_dim + 1, latent_dim)
        self.func_f = CDEVectorField(input_dim, latent_dim)
        self.func_g = GRUODEField(self.decoder_hidden)
        self.jump = nn.GRUCell(latent_dim, self.decoder_hidden)
        self.readout = nn.Linear(self.decoder_hidden, input_dim)

    def descriptor(self) -> dict:
        return {
            "kind": self.kind,
            "input_dim": self.input_dim,
            "latent_dim": self.latent_dim,
            "decoder_hidden": self.decoder_hidden,
            "substeps": self.substeps,
        }

    def prepare(self, batch: SeriesBatch, substeps: Optional[int] = None) -> dict:
        """Spline the observations (time appended as channel 0) and tabulate dX/dt.

        dX is sampled at every half substep of the full grid, which is exactly
        what the RK4 stages need.
        """
        substeps = substeps or self.substeps
        n = batch.length
        grid = uniform_grid(n)
        channels = np.concatenate([batch.times[..., None], batch.values], axis=-1)
        path = natural_cubic_spline(batch.times, channels, batch.mask)
        q_times = np.linspace(0.0, 1.0, (n - 1) * substeps * 2 + 1)
        dx = np.stack([path.derivative(t) for t in q_times], axis=1)
        x_first = path.evaluate(grid[0])
        values = torch.as_tensor(np.where(batch.mask[..., None], batch.values, 0.0), dtype=torch.float32)
        return {
            "x_first": torch.as_tensor(x_first, dtype=torch.float32),
            "dX": torch.as_tensor(dx, dtype=torch.float32),
            "target": values,
            "mask": torch.as_tensor(batch.mask),
            "substeps": torch.tensor(substeps),
        }

    def encode(self, inputs: dict) -> torch.Tensor:
        x_first, dx = inputs["x_first"], inputs["dX"]
        substeps = int(inputs["substeps"])
        n_intervals = (dx.shape[1] - 1) // (2 * substeps)
        dt = 1.0 / (n_intervals * substeps)

        def field(h, dxdt):
            return (self.func_f(h) @ dxdt.unsqueeze(-1)).squeeze(-1)

        h = self.initial(x_first)
        out = [h]
        q = 0
        for n in range(n_intervals):
            for _ in range(substeps):
                h = _rk4(field, h, dt, (dx[:, q], dx[:, q + 1], dx[:, q + 2]))
                q += 2
            out.append(_check_finite(h, f"NCDE encoder, interval {n + 1}"))
        return torch.stack(out, dim=1)

    def decode(self, h: torch.Tensor) -> torch.Tensor:
        if h.shape[-1] != self.latent_dim:
            raise ValueError(f"expected latent dim {self.latent_dim}, got {h.shape[-1]}")
        n = h.shape[1]
        dt = 1.0 / ((n - 1) * self.substeps) if n > 1 else 0.0

        def field(d, _):
            return self.func_g(d)

        d = h.new_zeros(h.shape[0], self.decoder_hidden)
        d = self.jump(h[:, 0], d)
        outs = [self.readout(d)]
        for k in range(1, n):
            for _ in range(self.substeps):
                d = _rk4(field, d, dt, (None, None, None))
            _check_finite(d, f"GRU-ODE decoder, order {k + 1}")
            d = self.jump(h[:, k], d)
            outs.append(self.readout(d))
        return torch.stack(outs, dim=1)


def take(inputs: dict, idx) -> dict:
    """Row-select every batched tensor of a prepared-input dict."""
    out = {}
    for key, val in inputs.items():
        out[key] = val if val.ndim == 0 else val[idx]
    return out


def build_codec(descriptor: dict) -> nn.Module:
    desc = dict(descriptor)
    kind = desc.pop("kind")
    if kind == "regular":
        return GRUCodec(desc["input_dim"], desc["latent_dim"])
    if kind == "irregular":
        return NCDECodec(**desc)
    raise ValueError(f"unknown codec kind {kind!r}")


def save_codec(path, codec: nn.Module, **meta) -> None:
    torch.save(
        {"format": CODEC_FORMAT, "descriptor": codec.descriptor(), "state_dict": codec.state_dict(), "meta": meta},
        path,
    )


def load_codec(path) -> nn.Module:
    ckpt = torch.load(path, map_location="cpu", weights_only=False)
    if ckpt.get("format") != CODEC_FORMAT:
        raise ValueError(f"{path}: not a codec checkpoint")
    codec = build_codec(ckpt["descriptor"])
    codec.load_state_dict(ckpt["state_dict"])
    return codec


# thin functional aliases mirroring the operation names


def gru_encode(codec: GRUCodec, batch: SeriesBatch) -> torch.Tensor:
    if not isinstance(codec, GRUCodec):
        raise ValueError("gru_encode needs a regular codec")
    return codec.encode(codec.prepare(batch))


def gru_decode(codec: GRUCodec, latents: torch.Tensor) -> torch.Tensor:
    return codec.decode(latents)


def ncde_encode(codec: NCDECodec, batch: SeriesBatch) -> torch.Tensor:
    if not isinstance(codec, NCDECodec):
        raise ValueError("ncde_encode needs an irregular codec")
    return codec.encode(codec.prepare(batch))


def gruode_decode(codec: NCDECodec, latents: torch.Tensor) -> torch.Tensor:
    return codec.decode(latents)
