"""Forward diffusion SDEs (VP, subVP, VE) and their Gaussian transition kernels.

All coefficient functions accept python floats, numpy arrays or torch tensors
and return the same kind of object, so the same schedule drives both the
torch training loop and the numpy oracles.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import NamedTuple

import numpy as np
import torch


class SdeKind(str, Enum):
    VP = "VP"
    SUBVP = "subVP"
    VE = "VE"


class KernelMoments(NamedTuple):
    """Moments of p(x_s | x_0) = N(mean_coeff * x_0, std**2)."""

    mean_coeff: object
    std: object


def _xp(x):
    return torch if isinstance(x, torch.Tensor) else np


def _check_time(s, allow_zero: bool = True) -> None:
    if isinstance(s, torch.Tensor):
        lo, hi = float(s.min()), float(s.max())
    else:
        arr = np.asarray(s, dtype=float)
        lo, hi = float(arr.min()), float(arr.max())
    if not (math.isfinite(lo) and math.isfinite(hi)):
        raise ValueError("diffusion time must be finite")
    if lo < 0.0 or hi > 1.0:
        raise ValueError(f"diffusion time must lie in [0, 1], got [{lo}, {hi}]")
    if not allow_zero and lo <= 0.0:
        raise ValueError("diffusion time must be > 0 (degenerate kernel at s = 0)")


@dataclass(frozen=True)
class SdeSpec:
    kind: SdeKind = SdeKind.VP
    beta_min: float = 0.1
    beta_max: float = 20.0
    sigma_min: float = 0.01
    sigma_max: float = 50.0

    def __post_init__(self):
        object.__setattr__(self, "kind", SdeKind(self.kind))
        if self.beta_min < 0 or self.beta_max < self.beta_min:
            raise ValueError("need 0 <= beta_min <= beta_max")
        if not (0 < self.sigma_min < self.sigma_max):
            raise ValueError("need 0 < sigma_min < sigma_max")

    @classmethod
    def vp(cls, beta_min: float = 0.1, beta_max: float = 20.0) -> "SdeSpec":
        return cls(SdeKind.VP, beta_min, beta_max)

    @classmethod
    def subvp(cls, beta_min: float = 0.1, beta_max: float = 20.0) -> "SdeSpec":
        return cls(SdeKind.SUBVP, beta_min, beta_max)

    @classmethod
    def ve(cls, sigma_min: float = 0.01, sigma_max: float = 50.0) -> "SdeSpec":
        return cls(SdeKind.VE, sigma_min=sigma_min, sigma_max=sigma_max)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "beta_min": self.beta_min,
            "beta_max": self.beta_max,
            "sigma_min": self.sigma_min,
            "sigma_max": self.sigma_max,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SdeSpec":
        return cls(**d)

    # -- noise schedules -------------------------------------------------

    def beta_at(self, s):
        """Linear noise rate beta(s) for VP/subVP."""
        if self.kind is SdeKind.VE:
            raise ValueError("beta(s) is undefined for the VE SDE")
        _check_time(s)
        return self.beta_min + s * (self.beta_max - self.beta_min)

    def beta_integral(self, s):
        """B(s) = int_0^s beta(t) dt."""
        if self.kind is SdeKind.VE:
            raise ValueError("beta(s) is undefined for the VE SDE")
        _check_time(s)
        return self.beta_min * s + 0.5 * (self.beta_max - self.beta_min) * s**2

    def sigma_at(self, s):
        """Geometric VE noise level sigma(s)."""
        if self.kind is not SdeKind.VE:
            raise ValueError("sigma(s) is only defined for the VE SDE")
        _check_time(s)
        return self.sigma_min * (self.sigma_max / self.sigma_min) ** s

    # -- SDE coefficients ------------------------------------------------

    def drift(self, s, x):
        _check_time(s)
        if self.kind is SdeKind.VE:
            return x * 0.0
        beta = self.beta_at(s)
        return -0.5 * _broadcast(beta, x) * x

    def diffusion(self, s):
        _check_time(s)
        xp = _xp(s)
        if self.kind is SdeKind.VP:
            return xp.sqrt(self.beta_at(s) + 0.0 * s)
        if self.kind is SdeKind.SUBVP:
            decay = 1.0 - xp.exp(-2.0 * self.beta_integral(s) + 0.0 * s)
            return xp.sqrt(self.beta_at(s) * decay)
        sigma = self.sigma_at(s)
        # d sigma^2 / ds = 2 sigma^2 log(sigma_max / sigma_min)
        return sigma * math.sqrt(2.0 * math.log(self.sigma_max / self.sigma_min))

    def transition(self, s) -> KernelMoments:
        _check_time(s)
        xp = _xp(s)
        if self.kind is SdeKind.VE:
            var = self.sigma_at(s) ** 2 - self.sigma_min**2
            return KernelMoments(1.0 + 0.0 * s, xp.sqrt(var))
        big_b = self.beta_integral(s) + 0.0 * s
        mean_coeff = xp.exp(-0.5 * big_b)
        if self.kind is SdeKind.VP:
            std = xp.sqrt(-xp.expm1(-big_b))
        else:
            std = -xp.expm1(-big_b)
        return KernelMoments(mean_coeff, std)

    def prior_std(self) -> float:
        if self.kind is SdeKind.VE:
            return math.sqrt(self.sigma_max**2 - self.sigma_min**2)
        return 1.0

    # -- sampling helpers ------------------------------------------------

    def perturb(self, s, x0, noise):
        if tuple(np.shape(x0)) != tuple(np.shape(noise)):
            raise ValueError(f"noise shape {tuple(np.shape(noise))} != x0 shape {tuple(np.shape(x0))}")
        mean_coeff, std = self.transition(s)
        return _broadcast(mean_coeff, x0) * x0 + _broadcast(std, x0) * noise

    def kernel_score(self, s, x_s, x0):
        """grad_{x_s} log p(x_s | x0) = -(x_s - m(s) x0) / std(s)^2."""
        if tuple(np.shape(x_s)) != tuple(np.shape(x0)):
            raise ValueError("x_s and x0 must have the same shape")
        _check_time(s, allow_zero=False)
        mean_coeff, std = self.transition(s)
        return -(x_s - _broadcast(mean_coeff, x0) * x0) / _broadcast(std, x0) ** 2

    def prior_sample(self, shape, rng):
        """Draw from the terminal distribution p_1.

        ``rng`` is a ``numpy.random.Generator`` (numpy output) or a
        ``torch.Generator`` (tensor output).
        """
        if isinstance(rng, torch.Generator):
            return torch.randn(*shape, generator=rng) * self.prior_std()
        return rng.standard_normal(shape) * self.prior_std()

    def lambda_weight(self, s):
        """Loss weight lambda(s) = std(s)^2."""
        _check_time(s, allow_zero=False)
        return self.transition(s).std ** 2


def _broadcast(coeff, x):
    """Reshape a per-sample coefficient [B] so it broadcasts against x [B, ...]."""
    ndim = getattr(coeff, "ndim", 0)
    if ndim == 0 or ndim == getattr(x, "ndim", 0):
        return coeff
    extra = x.ndim - ndim
    return coeff.reshape(tuple(coeff.shape) + (1,) * extra)


def beta_at(spec: SdeSpec, s):
    return spec.beta_at(s)


def beta_integral(spec: SdeSpec, s):
    return spec.beta_integral(s)


def drift(spec: SdeSpec, s, x):
    return spec.drift(s, x)


def diffusion(spec: SdeSpec, s):
    return spec.diffusion(s)


def transition(spec: SdeSpec, s) -> KernelMoments:
    return spec.transition(s)


def perturb(spec: SdeSpec, s, x0, noise):
    return spec.perturb(s, x0, noise)


def kernel_score(spec: SdeSpec, s, x_s, x0):
    return spec.kernel_score(s, x_s, x0)


def prior_sample(spec: SdeSpec, shape, rng):
    return spec.prior_sample(shape, rng)


def lambda_weight(spec: SdeSpec, s):
    return spec.lambda_weight(s)
