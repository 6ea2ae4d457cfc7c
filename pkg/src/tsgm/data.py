"""Loading, windowing, normalization and missingness injection for time series."""
from __future__ import annotations

import logging
import os
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np
import pandas as pd

log = logging.getLogger(__name__)

CONTAINER_FORMAT = "tsgm-container/1"


class DataError(ValueError):
    """Base class for dataset errors."""


class MissingFileError(DataError, FileNotFoundError):
    pass


class MissingColumnError(DataError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else ""


class UnparsableCellError(DataError):
    pass


class EmptyTableError(DataError):
    pass


@dataclass(frozen=True)
class SeriesBatch:
    """Fixed-length multivariate windows.

    values: [batch, N, dim] float array
    times:  [batch, N] stamps in [0, 1]
    mask:   [batch, N] bool, True where observed
    """

    values: np.ndarray
    times: np.ndarray
    mask: np.ndarray
    regular: bool = True

    def __post_init__(self):
        v, t, m = self.values, self.times, self.mask
        if v.ndim != 3:
            raise ValueError(f"values must be [batch, N, dim], got shape {v.shape}")
        if t.shape != v.shape[:2] or m.shape != v.shape[:2]:
            raise ValueError("times and mask must be [batch, N]")

    @property
    def n_samples(self) -> int:
        return self.values.shape[0]

    @property
    def length(self) -> int:
        return self.values.shape[1]

    @property
    def dim(self) -> int:
        return self.values.shape[2]

    def __len__(self):
        return self.n_samples

    def subset(self, idx) -> "SeriesBatch":
        idx = np.asarray(idx)
        return SeriesBatch(self.values[idx], self.times[idx], self.mask[idx], self.regular)

    @classmethod
    def from_values(cls, values: np.ndarray) -> "SeriesBatch":
        """Wrap complete regular windows [batch, N, dim]."""
        values = np.asarray(values, dtype=np.float64)
        b, n, _ = values.shape
        times = np.broadcast_to(uniform_grid(n), (b, n)).copy()
        return cls(values, times, np.ones((b, n), dtype=bool), True)


@dataclass(frozen=True)
class NormStats:
    min: np.ndarray
    max: np.ndarray

    def __post_init__(self):
        if np.any(self.max < self.min):
            raise ValueError("NormStats requires max >= min per feature")


def uniform_grid(n: int) -> np.ndarray:
    return np.linspace(0.0, 1.0, n)


def load_csv(path, feature_columns: Optional[Sequence[str]] = None, delimiter: str = ",") -> np.ndarray:
    """Read a delimited table with a header row into a [rows, features] array."""
    if not os.path.exists(path):
        raise MissingFileError(f"no such file: {path}")
    try:
        df = pd.read_csv(path, sep=delimiter, dtype=str, keep_default_na=False)
    except pd.errors.EmptyDataError:
        raise EmptyTableError(f"{path}: no rows") from None
    if feature_columns is None:
        feature_columns = list(df.columns)
    for col in feature_columns:
        if col not in df.columns:
            raise MissingColumnError(f"{path}: missing column {col!r}")
    if len(df) == 0:
        raise EmptyTableError(f"{path}: no rows")
    out = np.empty((len(df), len(feature_columns)), dtype=np.float64)
    for j, col in enumerate(feature_columns):
        parsed = pd.to_numeric(df[col].str.strip(), errors="coerce")
        bad = np.flatnonzero(parsed.isna().to_numpy())
        if bad.size:
            row = int(bad[0])
            # +2: one header line, 1-based line numbers
            raise UnparsableCellError(
                f"{path}:{row + 2}: cannot parse {df[col].iloc[row]!r} in column {col!r}"
            )
        out[:, j] = parsed.to_numpy(dtype=np.float64)
    return out


def window(table: np.ndarray, length: int, stride: int = 1) -> SeriesBatch:
    table = np.asarray(table, dtype=np.float64)
    if length < 2:
        raise ValueError("window length must be >= 2")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    rows = table.shape[0]
    if rows < length:
        raise DataError(f"too few rows: {rows} < window length {length}")
    starts = np.arange(0, rows - length + 1, stride)
    values = np.stack([table[k : k + length] for k in starts])
    return SeriesBatch.from_values(values)


def minmax_fit(batch: SeriesBatch) -> NormStats:
    """Per-feature min/max over observed entries of a training split."""
    obs = batch.values[batch.mask]
    return NormStats(obs.min(axis=0), obs.max(axis=0))


def normalize(batch: SeriesBatch, stats: NormStats) -> SeriesBatch:
    rng = stats.max - stats.min
    flat = rng <= 0
    if np.any(flat):
        log.warning("zero-range feature(s) %s normalized to 0.5", np.flatnonzero(flat).tolist())
    safe = np.where(flat, 1.0, rng)
    scaled = np.clip((batch.values - stats.min) / safe, 0.0, 1.0)
    scaled = np.where(flat, 0.5, scaled)
    return replace(batch, values=scaled)


def denormalize(batch: SeriesBatch, stats: NormStats) -> SeriesBatch:
    return replace(batch, values=batch.values * (stats.max - stats.min) + stats.min)


def inject_missing(batch: SeriesBatch, rate: float, rng: np.random.Generator) -> SeriesBatch:
    """Drop exactly round(rate * N) whole observations per sample, never the first."""
    if not 0.0 <= rate <= 0.9:
        raise ValueError("missing rate must lie in [0, 0.9]")
    n = batch.length
    n_drop = int(round(rate * n))
    if n_drop >= n:
        raise DataError("missing rate would drop every observation")
    if n_drop > n - 1:
        raise DataError("cannot drop that many observations without dropping the first")
    if n_drop == 0:
        return batch
    mask = batch.mask.copy()
    for i in range(batch.n_samples):
        dropped = rng.choice(np.arange(1, n), size=n_drop, replace=False)
        mask[i, dropped] = False
    return replace(batch, mask=mask, regular=False)


def split(batch: SeriesBatch, ratios=(0.8, 0.1, 0.1), rng: Optional[np.random.Generator] = None):
    ratios = np.asarray(ratios, dtype=float)
    if ratios.ndim != 1 or np.any(ratios < 0) or not np.isclose(ratios.sum(), 1.0):
        raise ValueError("ratios must be nonnegative and sum to 1")
    rng = rng if rng is not None else np.random.default_rng(0)
    n = batch.n_samples
    perm = rng.permutation(n)
    counts = np.floor(ratios * n + 1e-9).astype(int)
    counts[0] += n - counts.sum()
    if np.any(counts == 0):
        raise DataError(f"split produced an empty part: sizes {counts.tolist()}")
    bounds = np.cumsum(counts)[:-1]
    return tuple(batch.subset(part) for part in np.split(perm, bounds))


def synth_sines(n_samples: int, dim: int, length: int, rng: np.random.Generator) -> SeriesBatch:
    """Random sinusoids sin(2 pi f t + phi) per channel on the window's time grid, rescaled to [0, 1]."""
    freq = rng.uniform(1.0, 5.0, size=(n_samples, 1, dim))
    phase = rng.uniform(0.0, 2 * np.pi, size=(n_samples, 1, dim))
    t = uniform_grid(length)[None, :, None]
    values = 0.5 * (np.sin(2 * np.pi * freq * t + phase) + 1.0)
    return SeriesBatch.from_values(values)


def save_container(path, batch: SeriesBatch, stats: Optional[NormStats] = None, **meta) -> None:
    arrays = dict(
        format=np.array(CONTAINER_FORMAT),
        values=batch.values,
        times=batch.times,
        mask=batch.mask,
        regular=np.array(batch.regular),
    )
    if stats is not None:
        arrays["norm_min"] = stats.min
        arrays["norm_max"] = stats.max
    for key, val in meta.items():
        arrays[f"meta_{key}"] = np.array(val)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_container(path):
    """Returns (batch, stats or None, meta dict)."""
    if not os.path.exists(path):
        raise MissingFileError(f"no such container: {path}")
    with np.load(path, allow_pickle=False) as z:
        fmt = str(z["format"]) if "format" in z else None
        if fmt != CONTAINER_FORMAT:
            raise DataError(f"{path}: unsupported container format {fmt!r}")
        batch = SeriesBatch(z["values"], z["times"], z["mask"].astype(bool), bool(z["regular"]))
        stats = NormStats(z["norm_min"], z["norm_max"]) if "norm_min" in z else None
        meta = {k[5:]: z[k].item() for k in z.files if k.startswith("meta_")}
    return batch, stats, meta
