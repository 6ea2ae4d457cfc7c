"""Discriminative / predictive scores, multi-seed aggregation and plot artifacts."""
from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np
import torch
from torch import nn

from .data import SeriesBatch


class EvaluationError(ValueError):
    pass


def _values(x) -> np.ndarray:
    if isinstance(x, SeriesBatch):
        return x.values
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 3:
        raise EvaluationError(f"expected [samples, N, dim] data, got shape {arr.shape}")
    return arr


def _check_pair(real, synthetic):
    if real.shape[1:] != synthetic.shape[1:]:
        raise EvaluationError(f"real {real.shape} and synthetic {synthetic.shape} windows differ")
    if len(real) < 2 or len(synthetic) < 2:
        raise EvaluationError("need at least 2 windows in each set")


class _Classifier(nn.Module):
    def __init__(self, dim: int, hidden: int):
        super().__init__()
        self.rnn = nn.LSTM(dim, hidden, num_layers=2, batch_first=True)
        self.out = nn.Linear(hidden, 1)

    def forward(self, x):
        _, (h, _) = self.rnn(x)
        return self.out(h[-1]).squeeze(-1)


class _Forecaster(nn.Module):
    def __init__(self, dim: int, hidden: int):
        super().__init__()
        self.rnn = nn.LSTM(dim, hidden, num_layers=1, batch_first=True)
        self.out = nn.Linear(hidden, dim)

    def forward(self, x):
        y, _ = self.rnn(x)
        return torch.sigmoid(self.out(y))


def _hidden(dim: int) -> int:
    return max(8, dim)


def _content_split(x: np.ndarray, frac: float, seed: int):
    """Train/test split keyed on window content.

    A window present in both sets falls on the same side for each class, so the
    classifier cannot score by memorizing training items.
    """
    u = np.empty(len(x))
    salt = str(seed).encode()
    for i, w in enumerate(np.ascontiguousarray(x, dtype=np.float64)):
        digest = hashlib.blake2b(w.tobytes(), digest_size=8, key=salt).digest()
        u[i] = int.from_bytes(digest, "little") / 2.0**64
    train = u < frac
    return torch.as_tensor(np.flatnonzero(train)), torch.as_tensor(np.flatnonzero(~train))


def discriminative_score(
    real, synthetic, seed: int = 0, steps: int = 2000, batch_size: int = 128, train_frac: float = 0.8, return_accuracy: bool = False
):
    """|test accuracy - 0.5| of a 2-layer LSTM real/fake classifier (lower is better)."""
    real, synthetic = _values(real), _values(synthetic)
    _check_pair(real, synthetic)
    gen = torch.Generator().manual_seed(seed)
    with torch.random.fork_rng():
        torch.manual_seed(seed)
        model = _Classifier(real.shape[2], _hidden(real.shape[2]))
    xr = torch.as_tensor(real, dtype=torch.float32)
    xs = torch.as_tensor(synthetic, dtype=torch.float32)
    r_tr, r_te = _content_split(real, train_frac, seed)
    s_tr, s_te = _content_split(synthetic, train_frac, seed)
    if len(r_te) == 0 or len(s_te) == 0:
        raise EvaluationError("degenerate classifier test split: one class is empty")
    opt = torch.optim.Adam(model.parameters())
    loss_fn = nn.BCEWithLogitsLoss()
    half = max(1, batch_size // 2)
    for _ in range(steps):
        ir = r_tr[torch.randint(len(r_tr), (half,), generator=gen)]
        is_ = s_tr[torch.randint(len(s_tr), (half,), generator=gen)]
        x = torch.cat([xr[ir], xs[is_]])
        y = torch.cat([torch.ones(half), torch.zeros(half)])
        opt.zero_grad(set_to_none=True)
        loss_fn(model(x), y).backward()
        opt.step()
    with torch.no_grad():
        pr = model(xr[r_te]) > 0
        ps = model(xs[s_te]) > 0
    correct = pr.sum().item() + (~ps).sum().item()
    acc = correct / (len(r_te) + len(s_te))
    score = abs(acc - 0.5)
    return (score, acc) if return_accuracy else score


def predictive_score(real, synthetic, seed: int = 0, steps: int = 2000, batch_size: int = 128) -> float:
    """Train-on-synthetic, test-on-real one-step-ahead MAE over the whole sequence."""
    real, synthetic = _values(real), _values(synthetic)
    _check_pair(real, synthetic)
    gen = torch.Generator().manual_seed(seed)
    with torch.random.fork_rng():
        torch.manual_seed(seed)
        model = _Forecaster(real.shape[2], _hidden(real.shape[2]))
    xs = torch.as_tensor(synthetic, dtype=torch.float32)
    xr = torch.as_tensor(real, dtype=torch.float32)
    opt = torch.optim.Adam(model.parameters())
    for _ in range(steps):
        idx = torch.randint(len(xs), (min(batch_size, len(xs)),), generator=gen)
        x = xs[idx]
        opt.zero_grad(set_to_none=True)
        (model(x[:, :-1]) - x[:, 1:]).abs().mean().backward()
        opt.step()
    with torch.no_grad():
        mae = (model(xr[:, :-1]) - xr[:, 1:]).abs().mean().item()
    return mae


# -- aggregation -----------------------------------------------------------


@dataclass
class MeanStd:
    mean: float
    std: float

    def __str__(self):
        return f"{_fmt(self.mean)}±{_fmt(self.std)}"


def _fmt(v: float) -> str:
    # three decimals without the leading zero, e.g. .021
    s = f"{v:.3f}"
    return s[1:] if s.startswith("0.") else s


@dataclass
class EvalReport:
    disc: MeanStd
    pred: MeanStd
    n_runs: int
    dataset: str = "unknown"
    regime: str = "regular"
    method: str = "TSGM"
    runs: list = field(default_factory=list)
    artifacts: dict = field(default_factory=dict)

    def table(self) -> str:
        """Delimited text mirroring the results-table layout: metric, method, dataset cell."""
        lines = [f"metric\tmethod\t{self.dataset} ({self.regime})"]
        lines.append(f"Disc.\t{self.method}\t{self.disc}")
        lines.append(f"Pred.\t{self.method}\t{self.pred}")
        return "\n".join(lines) + "\n"

    def to_dict(self) -> dict:
        d = asdict(self)
        return d

    def key_values(self) -> str:
        kv = {
            "dataset": self.dataset,
            "regime": self.regime,
            "method": self.method,
            "n_runs": self.n_runs,
            "disc_mean": self.disc.mean,
            "disc_std": self.disc.std,
            "pred_mean": self.pred.mean,
            "pred_std": self.pred.std,
        }
        return "\n".join(f"{k}={v}" for k, v in kv.items()) + "\n"

    def save(self, stem) -> None:
        with open(f"{stem}.tsv", "w") as fh:
            fh.write(self.table())
        with open(f"{stem}.txt", "w") as fh:
            fh.write(self.key_values())
        with open(f"{stem}.json", "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)


def aggregate(run_scores: Sequence[dict], dataset: Optional[str] = None, regime: Optional[str] = None) -> EvalReport:
    """Mean and population std of per-run {'disc', 'pred'} scores."""
    runs = list(run_scores)
    if len(runs) < 2:
        raise EvaluationError("aggregation needs at least 2 runs")
    regimes = {r.get("regime", regime) for r in runs}
    datasets = {r.get("dataset", dataset) for r in runs}
    if len(regimes) > 1 or len(datasets) > 1:
        raise EvaluationError(f"runs mix regimes {sorted(map(str, regimes))} / datasets {sorted(map(str, datasets))}")
    disc = np.array([r["disc"] for r in runs], dtype=np.float64)
    pred = np.array([r["pred"] for r in runs], dtype=np.float64)
    return EvalReport(
        disc=MeanStd(float(disc.mean()), float(disc.std())),
        pred=MeanStd(float(pred.mean()), float(pred.std())),
        n_runs=len(runs),
        dataset=dataset or datasets.pop() or "unknown",
        regime=regime or regimes.pop() or "regular",
        runs=runs,
    )


# -- plots -----------------------------------------------------------------


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def kde_curves(real, synthetic, n_grid: int = 512):
    """Per-feature Gaussian KDEs of pooled values (time stamps ignored).

    Returns (grid [dim, n_grid], real density, synthetic density).
    """
    from scipy.stats import gaussian_kde

    real, synthetic = _values(real), _values(synthetic)
    if real.size == 0 or synthetic.size == 0:
        raise EvaluationError("empty input")
    dim = real.shape[2]
    grids, dr, ds = [], [], []
    for j in range(dim):
        a, b = real[..., j].ravel(), synthetic[..., j].ravel()
        ka, kb = gaussian_kde(_jitter(a)), gaussian_kde(_jitter(b))
        lo = min(a.min(), b.min())
        hi = max(a.max(), b.max())
        pad = 4 * max(ka.factor * a.std(), kb.factor * b.std(), 1e-3)
        g = np.linspace(lo - pad, hi + pad, n_grid)
        grids.append(g)
        dr.append(ka(g))
        ds.append(kb(g))
    return np.array(grids), np.array(dr), np.array(ds)


def _jitter(a: np.ndarray) -> np.ndarray:
    if np.ptp(a) > 0:
        return a
    return a + np.linspace(-1e-6, 1e-6, a.size)


def total_variation(grid: np.ndarray, p: np.ndarray, q: np.ndarray) -> float:
    return 0.5 * float(np.trapezoid(np.abs(p - q), grid)) if hasattr(np, "trapezoid") else 0.5 * float(np.trapz(np.abs(p - q), grid))


def kde_plot(real, synthetic, out_path, feature_names: Optional[Sequence[str]] = None) -> dict:
    """Overlay real/synthetic KDEs per feature; writes an image and a delimited grid."""
    grid, dr, ds = kde_curves(real, synthetic)
    plt = _pyplot()
    dim = grid.shape[0]
    fig, axes = plt.subplots(1, dim, figsize=(3.2 * dim, 2.8), squeeze=False)
    for j in range(dim):
        ax = axes[0, j]
        ax.plot(grid[j], dr[j], color="red", label="original")
        ax.plot(grid[j], ds[j], color="blue", linestyle="--", label="synthetic")
        ax.set_title(feature_names[j] if feature_names else f"feature {j}")
    axes[0, 0].legend()
    fig.tight_layout()
    fig.savefig(out_path)
    plt.close(fig)
    csv_path = f"{out_path}.csv"
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["feature", "x", "density_real", "density_synthetic"])
        for j in range(dim):
            for x, a, b in zip(grid[j], dr[j], ds[j]):
                w.writerow([j, f"{x:.8g}", f"{a:.8g}", f"{b:.8g}"])
    tv = [total_variation(grid[j], dr[j], ds[j]) for j in range(dim)]
    return {"image": str(out_path), "grid": csv_path, "tv": tv}


def tsne_embedding(real, synthetic, seed: int = 0, perplexity: float = 30.0) -> np.ndarray:
    from sklearn.manifold import TSNE

    real, synthetic = _values(real), _values(synthetic)
    x = np.concatenate([real.reshape(len(real), -1), synthetic.reshape(len(synthetic), -1)])
    if len(x) <= 3 * perplexity:
        raise EvaluationError(f"t-SNE needs more than {3 * perplexity:g} samples, got {len(x)}")
    return TSNE(n_components=2, perplexity=perplexity, random_state=seed, init="pca").fit_transform(x)


def tsne_plot(real, synthetic, out_path, seed: int = 0, perplexity: float = 30.0) -> dict:
    n_real = len(_values(real))
    emb = tsne_embedding(real, synthetic, seed, perplexity)
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(4, 4))
    ax.scatter(emb[:n_real, 0], emb[:n_real, 1], s=4, c="red", alpha=0.3, label="original")
    ax.scatter(emb[n_real:, 0], emb[n_real:, 1], s=4, c="blue", alpha=0.3, label="synthetic")
    ax.legend()
    fig.tight_layout()
    fig.savefig(out_path)
    plt.close(fig)
    csv_path = f"{out_path}.csv"
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["origin", "x", "y"])
        for i, (a, b) in enumerate(emb):
            w.writerow(["real" if i < n_real else "synthetic", f"{a:.8g}", f"{b:.8g}"])
    return {"image": str(out_path), "coords": csv_path, "embedding": emb}


def centroid_gap(embedding: np.ndarray, n_real: int) -> float:
    """Distance between the two origin centroids relative to the embedding diameter."""
    from scipy.spatial.distance import pdist

    a, b = embedding[:n_real].mean(axis=0), embedding[n_real:].mean(axis=0)
    diam = pdist(embedding).max()
    return float(np.linalg.norm(a - b) / diam) if diam > 0 else 0.0


def mean_std(values) -> MeanStd:
    v = np.asarray(values, dtype=np.float64)
    return MeanStd(float(v.mean()), float(v.std()) if len(v) > 1 else math.nan)
