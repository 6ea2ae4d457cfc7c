"""Numerical oracles for the diffusion and score-matching machinery.

* transition kernels against brute-force Euler-Maruyama simulation
* equality of the autoregressive score-matching gradients (conditional-score
  targets vs kernel-score targets) on a linear-Gaussian AR(1) process
* reverse-time sampling driven by exact scores
"""
from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np
import torch

from .sampler import SamplerConfig, denoise, generate_latents
from .score_net import time_embed
from .sde import SdeKind, SdeSpec


@dataclass(frozen=True)
class LinearGaussianProcess:
    """x_1 = a*x_0 + q*e_1 with x_0 = 0, then x_n = a*x_{n-1} + q*e_n.

    ``init_std`` overrides the spread of x_1 (defaults to ``noise_std``, which
    makes the first step obey the same conditional law with x_0 = 0).
    """

    N: int = 3
    ar_coeff: float = 0.8
    noise_std: float = 0.6
    init_std: Optional[float] = None

    def __post_init__(self):
        if abs(self.ar_coeff) >= 1:
            raise ValueError("|ar_coeff| must be < 1")
        if self.noise_std <= 0:
            raise ValueError("noise_std must be positive")

    @property
    def first_std(self) -> float:
        return self.noise_std if self.init_std is None else self.init_std

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        x = np.empty((n, self.N))
        x[:, 0] = self.first_std * rng.standard_normal(n)
        for k in range(1, self.N):
            x[:, k] = self.ar_coeff * x[:, k - 1] + self.noise_std * rng.standard_normal(n)
        return x

    def marginal_var(self) -> np.ndarray:
        v = np.empty(self.N)
        v[0] = self.first_std**2
        for k in range(1, self.N):
            v[k] = self.ar_coeff**2 * v[k - 1] + self.noise_std**2
        return v

    def covariance(self) -> np.ndarray:
        v = self.marginal_var()
        idx = np.arange(self.N)
        lo = np.minimum.outer(idx, idx)
        lag = np.abs(np.subtract.outer(idx, idx))
        return v[lo] * self.ar_coeff**lag


def _conditional_moments(proc, sde, s, x_prev, order):
    mean_coeff, std = sde.transition(s)
    cond_std = proc.first_std if order == 1 else proc.noise_std
    mean = mean_coeff * proc.ar_coeff * x_prev
    var = mean_coeff**2 * cond_std**2 + std**2
    return mean, var


def analytic_conditional_score(proc: LinearGaussianProcess, sde: SdeSpec, s, x_s, x_prev, order: Optional[int] = None):
    """Exact grad log p(x_n^s | x_{n-1}^0) for the AR(1) process."""
    mean, var = _conditional_moments(proc, sde, s, x_prev, order)
    return -(x_s - mean) / var


def analytic_conditional_logpdf(proc, sde, s, x_s, x_prev, order=None):
    mean, var = _conditional_moments(proc, sde, s, x_prev, order)
    return -0.5 * (x_s - mean) ** 2 / var - 0.5 * np.log(2 * np.pi * var)


def kernel_logpdf(sde: SdeSpec, s, x_s, x0):
    mean_coeff, std = sde.transition(s)
    return -0.5 * ((x_s - mean_coeff * x0) / std) ** 2 - np.log(std) - 0.5 * np.log(2 * np.pi)


# -- gradient equivalence ----------------------------------------------------


@dataclass
class GradEquivalenceReport:
    n_mc: int
    rel_diff: float
    rel_diff_ci: tuple
    ci_contains_zero: bool
    insufficient_samples: bool
    tolerance: float
    # standard error of the mean gradient difference, relative to |grad|
    rel_se: float = math.nan
    grad_conditional: list = field(repr=False, default_factory=list)
    grad_kernel: list = field(repr=False, default_factory=list)
    seconds: float = 0.0

    @property
    def passed(self) -> bool:
        return self.rel_diff < self.tolerance and self.ci_contains_zero


class OracleScoreMLP(torch.nn.Module):
    """Smooth score network on scalar latents: M(s, x_s, x_prev).

    The U-net normalizes over a length-1 axis here, which makes per-sample
    gradients heavy-tailed; a tanh MLP keeps Monte-Carlo error on the 1/sqrt(n) law.
    """

    def __init__(self, hidden: int = 32, t_dim: int = 16):
        super().__init__()
        self.t_dim = t_dim
        self.net = torch.nn.Sequential(
            torch.nn.Linear(2 + t_dim, hidden), torch.nn.Tanh(), torch.nn.Linear(hidden, hidden), torch.nn.Tanh(), torch.nn.Linear(hidden, 1)
        )

    def forward(self, s, x_s, x_prev):
        emb = time_embed(torch.as_tensor(s, dtype=x_s.dtype), self.t_dim)
        return self.net(torch.cat([x_s, x_prev, emb], dim=-1))


def oracle_score_model(sde: Optional[SdeSpec] = None, seed: int = 0) -> torch.nn.Module:
    """Fixed, randomly initialised float64 score network for the gradient oracle."""
    with torch.random.fork_rng():
        torch.manual_seed(seed)
        model = OracleScoreMLP()
    return model.double()


def _probe_params(model, n_probe, seed):
    flat = torch.cat([p.detach().flatten() for p in model.parameters()])
    gen = torch.Generator().manual_seed(seed)
    return torch.randperm(flat.numel(), generator=gen)[:n_probe]


def mc_grad_equivalence(
    proc: LinearGaussianProcess,
    model: Optional[torch.nn.Module] = None,
    sde: Optional[SdeSpec] = None,
    n_mc: int = 100_000,
    n_batches: int = 200,
    n_probe: int = 10,
    tolerance: float = 0.05,
    eps: float = 1e-5,
    seed: int = 0,
    n_boot: int = 2000,
    ci_level: float = 0.95,
    target_proc: Optional[LinearGaussianProcess] = None,
) -> GradEquivalenceReport:
    """Compare MC gradients of the conditional-score loss and the kernel-score loss.

    Both losses share every random draw (clean series, diffusion times, noise),
    so the difference of the two gradient estimates isolates the target swap.
    ``target_proc`` supplies the conditional-score targets (default: ``proc``);
    a mismatched one is a negative control.
    """
    t0 = time.perf_counter()
    tp = target_proc or proc
    sde = sde or SdeSpec.vp()
    model = model if model is not None else oracle_score_model(sde, seed)
    params = [p for p in model.parameters()]
    probe = _probe_params(model, n_probe, seed)
    rng = np.random.default_rng(seed)
    x0 = proc.sample(n_mc, rng)
    per = n_mc // n_batches
    if per < 1:
        raise ValueError("n_mc must be >= n_batches")
    g_cond = np.empty((n_batches, len(probe)))
    g_kern = np.empty((n_batches, len(probe)))
    dtype = next(model.parameters()).dtype
    for b in range(n_batches):
        xb = torch.as_tensor(x0[b * per : (b + 1) * per], dtype=dtype)
        rows = xb.shape[0]
        prev = torch.cat([torch.zeros(rows, 1, dtype=dtype), xb[:, :-1]], dim=1)
        s = torch.as_tensor(eps + (1 - eps) * rng.random((rows, proc.N)), dtype=dtype)
        z = torch.as_tensor(rng.standard_normal((rows, proc.N)), dtype=dtype)
        x_s = sde.perturb(s, xb, z)
        order = torch.arange(1, proc.N + 1).expand(rows, -1)
        mean_coeff, std = sde.transition(s)
        cond_std = torch.where(order == 1, torch.tensor(tp.first_std, dtype=dtype), torch.tensor(tp.noise_std, dtype=dtype))
        t_cond = -(x_s - mean_coeff * tp.ar_coeff * prev) / (mean_coeff**2 * cond_std**2 + std**2)
        t_kern = sde.kernel_score(s, x_s, xb)
        weight = sde.lambda_weight(s)
        out = model(s.reshape(-1), x_s.reshape(-1, 1), prev.reshape(-1, 1)).reshape(rows, proc.N)
        # sum over orders, mean over series
        l_cond = (weight * (out - t_cond) ** 2).sum(dim=1).mean()
        l_kern = (weight * (out - t_kern) ** 2).sum(dim=1).mean()
        gc = torch.autograd.grad(l_cond, params, retain_graph=True)
        gk = torch.autograd.grad(l_kern, params)
        g_cond[b] = torch.cat([g.flatten() for g in gc])[probe].numpy()
        g_kern[b] = torch.cat([g.flatten() for g in gk])[probe].numpy()

    mean_c, mean_k = g_cond.mean(0), g_kern.mean(0)
    rel = float(np.linalg.norm(mean_c - mean_k) / np.linalg.norm(mean_c))

    boot_rng = np.random.default_rng(seed + 1)
    idx = boot_rng.integers(0, n_batches, size=(n_boot, n_batches))
    diff = g_cond - g_kern
    boot_diff = diff[idx].mean(axis=1)  # [n_boot, n_probe]
    boot_c = g_cond[idx].mean(axis=1)
    boot_rel = np.linalg.norm(boot_diff, axis=1) / np.linalg.norm(boot_c, axis=1)
    # simultaneous (Bonferroni) interval over the probe coordinates
    alpha = (1 - ci_level) / len(probe)
    lo, hi = np.quantile(boot_diff, [alpha / 2, 1 - alpha / 2], axis=0)
    contains = bool(np.all((lo <= 0) & (hi >= 0)))
    rel_ci = tuple(float(v) for v in np.quantile(boot_rel, [(1 - ci_level) / 2, 1 - (1 - ci_level) / 2]))
    rel_se = float(np.linalg.norm(diff.std(axis=0, ddof=1) / math.sqrt(n_batches)) / np.linalg.norm(mean_c))
    return GradEquivalenceReport(
        n_mc=per * n_batches,
        rel_diff=rel,
        rel_diff_ci=rel_ci,
        ci_contains_zero=contains,
        insufficient_samples=rel_ci[1] > tolerance,
        tolerance=tolerance,
        rel_se=rel_se,
        grad_conditional=mean_c.tolist(),
        grad_kernel=mean_k.tolist(),
        seconds=time.perf_counter() - t0,
    )


# -- transition kernel vs Euler-Maruyama --------------------------------------


@dataclass
class KernelCheckReport:
    kind: str
    s_points: list
    mean_emp: list
    mean_true: list
    std_emp: list
    std_true: list
    mean_rel_err: list
    std_rel_err: list
    seconds: float = 0.0

    @property
    def max_rel_err(self) -> float:
        return float(max(max(self.mean_rel_err), max(self.std_rel_err)))

    def passed(self, tol: float = 0.02) -> bool:
        return self.max_rel_err < tol


def em_kernel_check(
    sde: SdeSpec, s_points: Sequence[float] = (0.25, 0.5, 1.0), n_paths: int = 10_000, n_steps: int = 1000, x0: float = 1.0, seed: int = 0
) -> KernelCheckReport:
    """Simulate the forward SDE with Euler-Maruyama and compare moments to the closed form.

    Paths come in antithetic pairs (w, -w), which removes Monte-Carlo noise
    from the empirical mean of an affine SDE without biasing the spread.
    """
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    dt = 1.0 / n_steps
    want = {int(round(s * n_steps)): s for s in s_points}
    half = n_paths // 2
    x = np.full(2 * half, float(x0))
    record = {}
    if 0 in want:
        record[0] = x.copy()
    for k in range(n_steps):
        s = k * dt
        dw = rng.standard_normal(half) * math.sqrt(dt)
        dw = np.concatenate([dw, -dw])
        x = x + sde.drift(s, x) * dt + sde.diffusion(s) * dw
        if k + 1 in want:
            record[k + 1] = x.copy()
        if len(record) == len(want) and k + 1 >= max(want):
            break
    mean_emp, std_emp, mean_true, std_true, mre, sre = [], [], [], [], [], []
    for k in sorted(want):
        s = want[k]
        m, sd = sde.transition(s)
        m_true, sd_true = float(m) * x0, float(sd)
        xs = record[k]
        me, se = float(xs.mean()), float(xs.std(ddof=1)) if k > 0 else 0.0
        mean_emp.append(me)
        std_emp.append(se)
        mean_true.append(m_true)
        std_true.append(sd_true)
        mre.append(abs(me - m_true) / abs(m_true) if m_true != 0 else abs(me))
        sre.append(abs(se - sd_true) / sd_true if sd_true > 0 else abs(se))
    return KernelCheckReport(
        sde.kind.value, [want[k] for k in sorted(want)], mean_emp, mean_true, std_emp, std_true, mre, sre, time.perf_counter() - t0
    )


# -- reverse process with exact scores -----------------------------------------


@dataclass
class ReverseReport:
    kind: str
    n_steps: int
    corrector_steps: int
    mean: float
    std: float
    target_mean: float
    target_std: float

    @property
    def mean_err(self) -> float:
        return abs(self.mean - self.target_mean)

    @property
    def std_rel_err(self) -> float:
        return abs(self.std - self.target_std) / self.target_std


def gaussian_marginal_score(sde: SdeSpec, data_mean: float = 0.0, data_std: float = 1.0):
    """Exact score of the diffused marginal when the data law is N(data_mean, data_std^2)."""

    def score(s, h, h_prev=None):
        mean_coeff, std = sde.transition(s)
        mean_coeff, std = mean_coeff[:, None], std[:, None]
        return -(h - mean_coeff * data_mean) / (mean_coeff**2 * data_std**2 + std**2)

    return score


def reverse_with_analytic_score(
    sde: SdeSpec, cfg: SamplerConfig, n_samples: int = 10_000, data_mean: float = 0.0, data_std: float = 1.0
) -> ReverseReport:
    score = gaussian_marginal_score(sde, data_mean, data_std)
    gen = torch.Generator().manual_seed(cfg.seed)
    with torch.no_grad():
        h = denoise(sde, score, torch.zeros(n_samples, 1, dtype=torch.float64), cfg, gen)
    return ReverseReport(
        sde.kind.value, cfg.n_steps, cfg.corrector_steps, float(h.mean()), float(h.std()), data_mean, data_std
    )


@dataclass
class CorrectorBenefitReport:
    n_seeds: int
    n_steps: int
    err_without: float
    err_with: float

    @property
    def passed(self) -> bool:
        return self.err_with <= self.err_without


def corrector_benefit_check(
    sde: SdeSpec, n_steps: int = 25, n_seeds: int = 20, n_samples: int = 10_000, data_mean: float = 1.0, data_std: float = 0.5
) -> CorrectorBenefitReport:
    """Average moment error (|mean err| + relative std err) with and without the Langevin corrector.

    A coarse grid is used on purpose: at 1000 steps the predictor alone is
    already within Monte-Carlo noise and the comparison carries no signal.
    """
    errs = {0: [], 1: []}
    for seed in range(n_seeds):
        for cs in (0, 1):
            rep = reverse_with_analytic_score(sde, SamplerConfig(n_steps=n_steps, corrector_steps=cs, seed=seed), n_samples, data_mean, data_std)
            errs[cs].append(rep.mean_err + rep.std_rel_err)
    return CorrectorBenefitReport(n_seeds, n_steps, float(np.mean(errs[0])), float(np.mean(errs[1])))


def langevin_ks_trace(sde: SdeSpec, s: float = 0.5, n_corrector: int = 20, n_samples: int = 5_000, snr: float = 0.16, seed: int = 0) -> list:
    """KS distance to the exact marginal at fixed s while repeating corrector steps from a mis-scaled start."""
    from scipy import stats

    from .sampler import corrector_step

    score = gaussian_marginal_score(sde)
    mean_coeff, std = sde.transition(s)
    target_std = float(np.sqrt(mean_coeff**2 + std**2))
    gen = torch.Generator().manual_seed(seed)
    h = 3.0 * target_std * torch.randn(n_samples, 1, generator=gen, dtype=torch.float64)
    prev = torch.zeros_like(h)
    trace = [float(stats.kstest(h[:, 0].numpy(), "norm", args=(0, target_std)).statistic)]
    for _ in range(n_corrector):
        h, _ = corrector_step(sde, score, s, h, prev, snr, gen)
        trace.append(float(stats.kstest(h[:, 0].numpy(), "norm", args=(0, target_std)).statistic))
    return trace


def ar_conditional_score(proc: LinearGaussianProcess, sde: SdeSpec):
    """Score closure for the sampler: exact conditional score of the AR(1) process."""

    def score(s, h, h_prev):
        mean_coeff, std = sde.transition(s)
        mean_coeff, std = mean_coeff[:, None], std[:, None]
        return -(h - mean_coeff * proc.ar_coeff * h_prev) / (mean_coeff**2 * proc.noise_std**2 + std**2)

    return score


def generate_ar_process(proc: LinearGaussianProcess, sde: SdeSpec, cfg: SamplerConfig, n_samples: int = 10_000) -> np.ndarray:
    """Recursive sampling of the AR(1) process with exact conditional scores: [n_samples, N]."""
    if proc.init_std is not None and proc.init_std != proc.noise_std:
        raise ValueError("recursive sampling assumes the first step follows the conditional law with x_0 = 0")
    score = ar_conditional_score(proc, sde)
    lat = generate_latents(sde, score, proc.N, n_samples, 1, SamplerConfig(**{**cfg.to_dict(), "use_ema": False}))
    return lat[..., 0].double().numpy()


def ar_moment_errors(proc: LinearGaussianProcess, sde: SdeSpec, cfg: SamplerConfig, n_samples: int = 10_000) -> dict:
    """Worst entry-wise relative covariance error of generated AR(1) paths, plus the mean error.

    Means are zero, so they are judged in units of the marginal std.
    """
    x = generate_ar_process(proc, sde, cfg, n_samples)
    cov_true = proc.covariance()
    sd_true = np.sqrt(np.diag(cov_true))
    cov_emp = np.cov(x, rowvar=False)
    return {
        "mean": float(np.max(np.abs(x.mean(0)) / sd_true)),
        "cov": float(np.max(np.abs(cov_emp - cov_true) / np.abs(cov_true))),
    }


# -- suite -------------------------------------------------------------------


@dataclass
class OracleCheck:
    name: str
    passed: bool
    measured: str
    threshold: str
    seconds: float


def run_oracle_suite(quick: bool = False, seed: int = 0) -> list:
    """Run every oracle check; returns a list of OracleCheck."""
    checks = []

    for sde in (SdeSpec.vp(), SdeSpec.subvp()):
        rep = em_kernel_check(sde, (0.25, 0.5, 1.0), 2_000 if quick else 10_000, 1000, seed=seed)
        tol = 0.05 if quick else 0.02
        checks.append(
            OracleCheck(f"em_kernel_{sde.kind.value}", rep.passed(tol), f"max_rel_err={rep.max_rel_err:.4g}", f"<{tol}", rep.seconds)
        )

    proc = LinearGaussianProcess(N=3, ar_coeff=0.8, noise_std=0.6)
    rep = mc_grad_equivalence(proc, n_mc=20_000 if quick else 100_000, seed=seed)
    checks.append(
        OracleCheck(
            "grad_equivalence",
            rep.passed,
            f"rel_diff={rep.rel_diff:.4g}, ci_contains_zero={rep.ci_contains_zero}",
            f"<{rep.tolerance}",
            rep.seconds,
        )
    )

    t0 = time.perf_counter()
    fd_err = _finite_difference_errors(seed)
    checks.append(
        OracleCheck(
            "score_finite_differences",
            fd_err["kernel"] < 1e-4 and fd_err["conditional"] < 1e-5,
            f"kernel={fd_err['kernel']:.3g}, conditional={fd_err['conditional']:.3g}",
            "<1e-4 / <1e-5",
            time.perf_counter() - t0,
        )
    )

    n = 2_000 if quick else 10_000
    for sde, steps, mean_tol, std_tol in ((SdeSpec.vp(), 1000, 0.03, 0.03), (SdeSpec.subvp(), 100, None, 0.05)):
        if quick and steps == 1000:
            steps = 200
        t0 = time.perf_counter()
        rep = reverse_with_analytic_score(sde, SamplerConfig(n_steps=steps, seed=seed), n_samples=n)
        ok = rep.std_rel_err < std_tol and (mean_tol is None or rep.mean_err < mean_tol)
        checks.append(
            OracleCheck(
                f"reverse_{sde.kind.value}_{steps}",
                ok,
                f"mean_err={rep.mean_err:.4g}, std_rel_err={rep.std_rel_err:.4g}",
                f"mean<{mean_tol}, std<{std_tol}",
                time.perf_counter() - t0,
            )
        )

    t0 = time.perf_counter()
    rep = corrector_benefit_check(SdeSpec.vp(), n_seeds=5 if quick else 20, n_samples=n)
    checks.append(
        OracleCheck(
            "corrector_benefit",
            rep.passed,
            f"err_with={rep.err_with:.4g}, err_without={rep.err_without:.4g}",
            "with <= without",
            time.perf_counter() - t0,
        )
    )

    t0 = time.perf_counter()
    errs = ar_moment_errors(LinearGaussianProcess(), SdeSpec.vp(), SamplerConfig(n_steps=200 if quick else 1000, corrector_steps=0, seed=seed), n)
    checks.append(
        OracleCheck(
            "ar_joint_moments",
            errs["mean"] < 0.05 and errs["cov"] < 0.05,
            f"mean={errs['mean']:.4g}, cov={errs['cov']:.4g}",
            "<0.05",
            time.perf_counter() - t0,
        )
    )

    t0 = time.perf_counter()
    grid = np.linspace(0, 1, 100)
    ok = bool(np.all(SdeSpec.subvp().transition(grid).std <= SdeSpec.vp().transition(grid).std))
    checks.append(OracleCheck("variance_ordering", ok, "subVP std <= VP std on 100-point grid", "exact", time.perf_counter() - t0))
    return checks


def _finite_difference_errors(seed: int = 0, h: float = 1e-5) -> dict:
    rng = np.random.default_rng(seed)
    proc = LinearGaussianProcess()
    worst = {"kernel": 0.0, "conditional": 0.0}
    for sde in (SdeSpec.vp(), SdeSpec.subvp(), SdeSpec.ve()):
        for _ in range(50):
            s = rng.uniform(0.05, 1.0)
            x0, xs, xp = rng.normal(size=3)
            fd = (kernel_logpdf(sde, s, xs + h, x0) - kernel_logpdf(sde, s, xs - h, x0)) / (2 * h)
            an = sde.kernel_score(s, xs, x0)
            worst["kernel"] = max(worst["kernel"], abs(fd - an) / max(abs(an), 1e-12))
            if sde.kind is not SdeKind.VE:
                fd = (analytic_conditional_logpdf(proc, sde, s, xs + h, xp) - analytic_conditional_logpdf(proc, sde, s, xs - h, xp)) / (2 * h)
                an = analytic_conditional_score(proc, sde, s, xs, xp)
                worst["conditional"] = max(worst["conditional"], abs(fd - an) / max(abs(an), 1e-12))
    return worst


def format_report(checks) -> str:
    lines = ["check\tstatus\tmeasured\tthreshold\tseconds"]
    for c in checks:
        lines.append(f"{c.name}\t{'PASS' if c.passed else 'FAIL'}\t{c.measured}\t{c.threshold}\t{c.seconds:.2f}")
    return "\n".join(lines) + "\n"


def report_dicts(checks) -> list:
    return [asdict(c) for c in checks]
