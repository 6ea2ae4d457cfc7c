"""Declarative experiment configuration: YAML files, named presets, seed substreams."""
from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np
import yaml

from .sampler import SamplerConfig
from .score_net import ScoreNetConfig
from .sde import SdeSpec
from .trainer import IRREGULAR_PRESETS, REGULAR_PRESETS, TrainConfig

BENCHMARK_MISSING_RATES = (0.3, 0.5, 0.7)
SUBSTREAMS = {"data": 0, "train": 1, "sample": 2, "eval": 3}


class ConfigError(ValueError):
    pass


@dataclass
class DatasetSpec:
    kind: str = "synthetic"  # "synthetic" or "csv"
    name: str = "sines"
    path: Optional[str] = None
    feature_columns: Optional[list] = None
    delimiter: str = ","
    length: int = 24
    stride: int = 1
    n_samples: int = 1000  # synthetic only
    dim: int = 2  # synthetic only
    split: tuple = (0.8, 0.1, 0.1)


@dataclass
class CodecSpec:
    latent_dim: int = 8
    decoder_hidden: Optional[int] = None


@dataclass
class EvalSpec:
    n_generate: int = 1000
    n_runs: int = 10
    steps: int = 2000
    batch_size: int = 128


@dataclass
class ExperimentConfig:
    name: str = "sines"
    seed: int = 0
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    missing_rate: float = 0.0
    sde: SdeSpec = field(default_factory=SdeSpec.subvp)
    codec: CodecSpec = field(default_factory=CodecSpec)
    score_net: dict = field(default_factory=dict)
    train: TrainConfig = field(default_factory=TrainConfig)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    eval: EvalSpec = field(default_factory=EvalSpec)
    out: str = "runs/sines"
    benchmark_preset: bool = False

    def __post_init__(self):
        if not 0.0 <= self.missing_rate <= 0.9:
            raise ConfigError(f"missing_rate {self.missing_rate} outside [0, 0.9]")
        if self.benchmark_preset and self.missing_rate and self.missing_rate not in BENCHMARK_MISSING_RATES:
            raise ConfigError(f"benchmark presets use missing rates {BENCHMARK_MISSING_RATES}, got {self.missing_rate}")
        self.train.sde = self.sde

    @property
    def regular(self) -> bool:
        return self.missing_rate == 0.0

    @property
    def regime(self) -> str:
        return "regular" if self.regular else f"missing-{round(self.missing_rate * 100)}"

    def score_net_config(self) -> ScoreNetConfig:
        return ScoreNetConfig(latent_dim=self.codec.latent_dim, **self.score_net)

    def to_dict(self) -> dict:
        d = {
            "name": self.name,
            "seed": self.seed,
            "dataset": asdict(self.dataset),
            "missing_rate": self.missing_rate,
            "sde": self.sde.to_dict(),
            "codec": asdict(self.codec),
            "score_net": dict(self.score_net),
            "train": {k: v for k, v in self.train.to_dict().items() if k != "sde"},
            "sampler": self.sampler.to_dict(),
            "eval": asdict(self.eval),
            "out": self.out,
            "benchmark_preset": self.benchmark_preset,
        }
        d["dataset"]["split"] = list(d["dataset"]["split"])
        if "channel_mult" in d["score_net"]:
            d["score_net"]["channel_mult"] = list(d["score_net"]["channel_mult"])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = copy.deepcopy(d)
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            sde = SdeSpec.from_dict(d.pop("sde")) if "sde" in d else SdeSpec.subvp()
            kw = dict(
                dataset=_build(DatasetSpec, d.pop("dataset", {})),
                codec=_build(CodecSpec, d.pop("codec", {})),
                train=_build(TrainConfig, {**d.pop("train", {}), "sde": sde}),
                sampler=_build(SamplerConfig, d.pop("sampler", {})),
                eval=_build(EvalSpec, d.pop("eval", {})),
                sde=sde,
            )
        except (TypeError, KeyError) as exc:
            raise ConfigError(str(exc)) from exc
        kw["dataset"].split = tuple(kw["dataset"].split)
        return cls(**kw, **d)

    def config_hash(self) -> str:
        """Stable digest of everything except the output directory."""
        d = self.to_dict()
        d.pop("out")
        blob = json.dumps(d, sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()[:12]

    def substream_seed(self, name: str) -> int:
        return substream_seed(self.seed, name)

    def rng(self, name: str) -> np.random.Generator:
        return np.random.default_rng(self.substream_seed(name))

    def with_overrides(self, seed=None, out=None, steps=None, missing_rate=None) -> "ExperimentConfig":
        d = self.to_dict()
        if seed is not None:
            d["seed"] = seed
        if out is not None:
            d["out"] = str(out)
        if steps is not None:
            d["sampler"]["n_steps"] = steps
        if missing_rate is not None:
            d["missing_rate"] = missing_rate
        return ExperimentConfig.from_dict(d)

    def save(self, path) -> None:
        Path(path).write_text(yaml.safe_dump(self.to_dict(), sort_keys=False))


def _build(cls, d):
    if isinstance(d, cls):
        return d
    unknown = set(d) - {f.name for f in fields(cls)}
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    return cls(**d)


def substream_seed(seed: int, name: str) -> int:
    """Named, independent integer seed derived from the global seed."""
    if name not in SUBSTREAMS:
        raise ConfigError(f"unknown seed substream {name!r}")
    return int(np.random.SeedSequence([seed, SUBSTREAMS[name]]).generate_state(1)[0])


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        d = yaml.safe_load(path.read_text()) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    if "preset" in d:
        base = preset(d.pop("preset")).to_dict()
        d = _merge(base, d)
    return ExperimentConfig.from_dict(d)


def _merge(base: dict, over: dict) -> dict:
    out = dict(base)
    for k, v in over.items():
        out[k] = _merge(out[k], v) if isinstance(v, dict) and isinstance(out.get(k), dict) else v
    return out


# Expected layout of the four benchmark tables (comma-separated, '.' decimals).
# ``None`` means every column is a feature.
DATASETS = {
    "stocks": dict(path="data/stock_data.csv", dim=6, columns=None),
    "energy": dict(path="data/energy_data.csv", dim=28, columns=None),
    "air": dict(
        path="data/air_quality.csv",
        dim=13,
        columns=[
            "CO(GT)", "PT08.S1(CO)", "NMHC(GT)", "C6H6(GT)", "PT08.S2(NMHC)", "NOx(GT)", "PT08.S3(NOx)",
            "NO2(GT)", "PT08.S4(NO2)", "PT08.S5(O3)", "T", "RH", "AH",
        ],
    ),
    "ai4i": dict(
        path="data/ai4i2020.csv",
        dim=5,
        columns=["Air temperature [K]", "Process temperature [K]", "Rotational speed [rpm]", "Torque [Nm]", "Tool wear [min]"],
    ),
}


def preset_names() -> list:
    names = ["sines", "sines-missing-30"]
    for ds in DATASETS:
        names.append(ds)
        names += [f"{ds}-missing-{round(r * 100)}" for r in BENCHMARK_MISSING_RATES]
    return names


def sines_preset(missing_rate: float = 0.0) -> ExperimentConfig:
    """Desk-scale fixture: 1000 two-channel sines of length 24."""
    latent_dim = 4
    return ExperimentConfig(
        name="sines" if not missing_rate else f"sines-missing-{round(missing_rate * 100)}",
        dataset=DatasetSpec(),
        missing_rate=missing_rate,
        codec=CodecSpec(latent_dim=latent_dim, decoder_hidden=16),
        score_net=dict(depth=2, base_channels=16, channel_mult=[1, 2]),
        train=TrainConfig(iter_pre=2000, iter_main=5000, batch_size=32, lr_codec=1e-2, lr_score=1e-3),
        sampler=SamplerConfig(n_steps=100),
        eval=EvalSpec(n_generate=500, n_runs=3, steps=2000),
        out="runs/sines" if not missing_rate else f"runs/sines-missing-{round(missing_rate * 100)}",
    )


def preset(name: str) -> ExperimentConfig:
    """Named configuration; benchmark presets follow the best settings reported per dataset."""
    name = name.lower()
    if name == "sines":
        return sines_preset()
    if name.startswith("sines-missing-"):
        return sines_preset(int(name.rsplit("-", 1)[1]) / 100)
    base, _, rate = name.partition("-missing-")
    if base not in DATASETS:
        raise ConfigError(f"unknown preset {name!r}; known: {', '.join(preset_names())}")
    missing_rate = int(rate) / 100 if rate else 0.0
    regular = missing_rate == 0.0
    p = (REGULAR_PRESETS if regular else IRREGULAR_PRESETS)[base]
    info = DATASETS[base]
    return ExperimentConfig(
        name=name,
        dataset=DatasetSpec(kind="csv", name=base, path=info["path"], feature_columns=info["columns"], dim=info["dim"], n_samples=0),
        missing_rate=missing_rate,
        codec=CodecSpec(latent_dim=p["latent_dim"], decoder_hidden=p.get("decoder_hidden")),
        train=TrainConfig(iter_pre=p["iter_pre"], iter_main=p["iter_main"], use_alt=p["use_alt"]),
        out=f"runs/{name}",
        benchmark_preset=True,
    )
