"""Command-line pipeline: prepare, train-codec, train-score, generate, evaluate, plot, oracle.

Every command reads one experiment config (YAML file or preset name) and
writes under its output directory::

    data/{train,valid,test}.npz   prepared containers
    codec.pt, codec_curve.csv     pre-trained autoencoder
    score.pt, score_curve.csv     conditional score network (+ codec_main.pt when alternating)
    generated.npz                 synthetic windows (normalized scale)
    eval_report.{tsv,txt,json}    aggregated scores
    plots/                        KDE and t-SNE figures with CSV sidecars
    oracle_report.tsv             numerical checks
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path
from typing import Optional

import numpy as np
import torch

from . import codec as codec_mod
from . import data as data_mod
from .config import ConfigError, ExperimentConfig, load_config, preset, preset_names
from .evaluator import EvaluationError, aggregate, discriminative_score, kde_plot, predictive_score, tsne_plot
from .oracles import format_report, run_oracle_suite
from .sampler import SamplerConfig, SamplingError, generate_sequence
from .score_net import load_score, new_score_state, save_score
from .trainer import TrainingError, pretrain_codec, train_score, write_curve

log = logging.getLogger("tsgm")

EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_MISSING_ARTIFACT = 4
EXIT_TRAINING = 5
EXIT_SAMPLING = 6
EXIT_EVALUATION = 7
EXIT_ORACLE_FAILED = 8


class MissingArtifactError(RuntimeError):
    pass


class OracleFailure(RuntimeError):
    pass


ERROR_CODES = [
    (ConfigError, EXIT_CONFIG, "config"),
    (MissingArtifactError, EXIT_MISSING_ARTIFACT, "missing-artifact"),
    (data_mod.DataError, EXIT_DATA, "data"),
    (TrainingError, EXIT_TRAINING, "training"),
    (codec_mod.SolverDivergenceError, EXIT_TRAINING, "training"),
    (SamplingError, EXIT_SAMPLING, "sampling"),
    (EvaluationError, EXIT_EVALUATION, "evaluation"),
    (OracleFailure, EXIT_ORACLE_FAILED, "oracle"),
]


# -- helpers -------------------------------------------------------------


def resolve_config(args) -> ExperimentConfig:
    spec = args.config
    if spec is None:
        raise ConfigError("--config is required (YAML path or preset name)")
    cfg = load_config(spec) if Path(spec).exists() else _preset_or_error(spec)
    return cfg.with_overrides(seed=args.seed, out=args.out, steps=args.steps, missing_rate=args.missing_rate)


def _preset_or_error(name: str) -> ExperimentConfig:
    if name.endswith((".yaml", ".yml")):
        raise ConfigError(f"config file not found: {name}")
    return preset(name)


def _out(cfg: ExperimentConfig) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _stamp(cfg: ExperimentConfig) -> dict:
    return {"config_hash": cfg.config_hash(), "seed": cfg.seed, "config_name": cfg.name}


def _require(path: Path, producer: str) -> Path:
    if not path.exists():
        raise MissingArtifactError(f"missing upstream artifact {path}; run `{producer}` first")
    return path


def _torch_seed(seed: int) -> None:
    torch.manual_seed(seed % (2**63))


def _load_split(cfg, name="train"):
    path = _require(_out(cfg) / "data" / f"{name}.npz", "prepare")
    return data_mod.load_container(path)


# -- commands ------------------------------------------------------------


def build_dataset(cfg: ExperimentConfig):
    """Windowed, split, normalized and regime-applied splits: (dict of SeriesBatch, NormStats, n_windows)."""
    rng = cfg.rng("data")
    ds = cfg.dataset
    if ds.kind == "synthetic":
        full = data_mod.synth_sines(ds.n_samples, ds.dim, ds.length, rng)
    elif ds.kind == "csv":
        if not ds.path:
            raise ConfigError("csv dataset needs a path")
        table = data_mod.load_csv(ds.path, ds.feature_columns, ds.delimiter)
        full = data_mod.window(table, ds.length, ds.stride)
    else:
        raise ConfigError(f"unknown dataset kind {ds.kind!r}")
    train, valid, test = data_mod.split(full, ds.split, rng)
    stats = data_mod.minmax_fit(train)
    parts = {}
    for name, part in (("train", train), ("valid", valid), ("test", test)):
        part = data_mod.normalize(part, stats)
        if cfg.missing_rate:
            part = data_mod.inject_missing(part, cfg.missing_rate, rng)
        parts[name] = part
    return parts, stats, full.n_samples


def cmd_prepare(cfg: ExperimentConfig) -> dict:
    parts, stats, n_windows = build_dataset(cfg)
    folder = _out(cfg) / "data"
    folder.mkdir(parents=True, exist_ok=True)
    for name, part in parts.items():
        data_mod.save_container(folder / f"{name}.npz", part, stats, split=name, regime=cfg.regime, **_stamp(cfg))
    observed = parts["train"].mask.sum(axis=1)
    summary = {
        "windows": n_windows,
        **{f"n_{k}": v.n_samples for k, v in parts.items()},
        "length": parts["train"].length,
        "dim": parts["train"].dim,
        "observed_per_sample": int(observed.min()) if observed.min() == observed.max() else [int(observed.min()), int(observed.max())],
    }
    print(f"prepared {cfg.dataset.name}: " + ", ".join(f"{k}={v}" for k, v in summary.items()))
    return summary


def new_codec(cfg: ExperimentConfig, input_dim: int):
    if cfg.regular:
        return codec_mod.GRUCodec(input_dim, cfg.codec.latent_dim)
    return codec_mod.NCDECodec(input_dim, cfg.codec.latent_dim, cfg.codec.decoder_hidden)


def cmd_train_codec(cfg: ExperimentConfig) -> dict:
    train, _, _ = _load_split(cfg)
    seed = cfg.substream_seed("train")
    _torch_seed(seed)
    codec = new_codec(cfg, train.dim)
    tcfg = cfg.train
    tcfg.seed = seed % (2**31)
    t0 = time.perf_counter()
    codec, curve = pretrain_codec(codec, train, tcfg)
    out = _out(cfg)
    codec_mod.save_codec(out / "codec.pt", codec, **_stamp(cfg))
    write_curve(out / "codec_curve.csv", curve, "recon_loss")
    print(f"codec pre-training: {len(curve)} steps, final loss {np.mean(curve[-50:]):.4g}, {time.perf_counter() - t0:.1f}s")
    return {"steps": len(curve), "final_loss": float(np.mean(curve[-50:]))}


def cmd_train_score(cfg: ExperimentConfig, resume: bool = False) -> dict:
    out = _out(cfg)
    train, _, _ = _load_split(cfg)
    codec = codec_mod.load_codec(_require(out / "codec.pt", "train-codec"))
    seed = cfg.substream_seed("train")
    state = new_score_state(cfg.score_net_config(), cfg.sde, seed=seed % (2**63))
    tcfg = cfg.train
    tcfg.seed = seed % (2**31)
    ckpt_path = out / "score_train.ckpt"
    resume_state = None
    if resume and ckpt_path.exists():
        from .trainer import load_training_checkpoint

        resume_state = load_training_checkpoint(ckpt_path, state, codec)
    t0 = time.perf_counter()
    state, curve = train_score(
        state, codec, train, tcfg, resume=resume_state, checkpoint_every=1000, checkpoint_path=ckpt_path
    )
    save_score(out / "score.pt", state, **_stamp(cfg))
    if tcfg.use_alt:
        codec_mod.save_codec(out / "codec_main.pt", codec, **_stamp(cfg))
    write_curve(out / "score_curve.csv", curve, "score_loss")
    tail = float(np.mean(curve[-100:]))
    print(f"score training: {len(curve)} steps, final loss {tail:.4g}, {time.perf_counter() - t0:.1f}s")
    return {"steps": len(curve), "final_loss": tail}


def _trained_codec(out: Path):
    path = out / "codec_main.pt"
    if not path.exists():
        path = _require(out / "codec.pt", "train-codec")
    return codec_mod.load_codec(path)


def cmd_generate(cfg: ExperimentConfig, output: Optional[str] = None) -> Path:
    out = _out(cfg)
    _, stats, _ = _load_split(cfg)
    state = load_score(_require(out / "score.pt", "train-score"))
    codec = _trained_codec(out)
    scfg = SamplerConfig(**{**cfg.sampler.to_dict(), "seed": cfg.substream_seed("sample") % (2**31)})
    n_orders = cfg.dataset.length
    t0 = time.perf_counter()
    batch = generate_sequence(cfg.sde, state, codec, n_orders, cfg.eval.n_generate, scfg)
    path = Path(output) if output else out / "generated.npz"
    data_mod.save_container(path, batch, stats, n_steps=scfg.n_steps, kind="generated", **_stamp(cfg))
    print(f"generated {batch.n_samples} windows with {scfg.n_steps} steps in {time.perf_counter() - t0:.1f}s -> {path}")
    return path


def evaluate_sets(real: np.ndarray, synthetic: np.ndarray, cfg: ExperimentConfig) -> list:
    """Per-run disc/pred scores; each run re-draws the real subset and re-initializes both models."""
    base = cfg.substream_seed("eval")
    runs = []
    for k in range(cfg.eval.n_runs):
        seed = int(np.random.SeedSequence([base, k]).generate_state(1)[0]) % (2**31)
        rng = np.random.default_rng(seed)
        n = min(len(real), len(synthetic))
        real_sub = real[rng.choice(len(real), n, replace=False)] if len(real) > n else real
        disc = discriminative_score(real_sub, synthetic, seed=seed, steps=cfg.eval.steps, batch_size=cfg.eval.batch_size)
        pred = predictive_score(real, synthetic, seed=seed, steps=cfg.eval.steps, batch_size=cfg.eval.batch_size)
        runs.append({"run": k, "seed": seed, "disc": float(disc), "pred": float(pred), "dataset": cfg.dataset.name, "regime": cfg.regime})
    return runs


def cmd_evaluate(cfg: ExperimentConfig, synthetic_path: Optional[str] = None, real_path: Optional[str] = None):
    out = _out(cfg)
    real, _, _ = data_mod.load_container(real_path) if real_path else _load_split(cfg)
    syn_path = Path(synthetic_path) if synthetic_path else _require(out / "generated.npz", "generate")
    synthetic, _, syn_meta = data_mod.load_container(syn_path)
    t0 = time.perf_counter()
    runs = evaluate_sets(real.values, synthetic.values, cfg)
    report = aggregate(runs, cfg.dataset.name, cfg.regime)
    report.artifacts = {**_stamp(cfg), "synthetic": str(syn_path), "n_steps": syn_meta.get("n_steps")}
    report.save(out / "eval_report")
    sys.stdout.write(report.table())
    print(f"({report.n_runs} runs, {time.perf_counter() - t0:.1f}s)")
    return report


def cmd_plot(cfg: ExperimentConfig, synthetic_path: Optional[str] = None) -> dict:
    out = _out(cfg)
    real, _, _ = _load_split(cfg)
    syn_path = Path(synthetic_path) if synthetic_path else _require(out / "generated.npz", "generate")
    synthetic, _, _ = data_mod.load_container(syn_path)
    folder = out / "plots"
    folder.mkdir(exist_ok=True)
    n = min(real.n_samples, synthetic.n_samples, 1000)
    kde = kde_plot(real.values[:n], synthetic.values[:n], folder / "kde.png")
    # small runs get a smaller perplexity rather than no embedding
    perplexity = min(30.0, (2 * n - 1) / 3.0 - 1e-6)
    tsne = tsne_plot(real.values[:n], synthetic.values[:n], folder / "tsne.png", seed=cfg.substream_seed("eval") % (2**31), perplexity=perplexity)
    tsne.pop("embedding")
    meta = {**_stamp(cfg), "kde": kde, "tsne": {**tsne, "perplexity": perplexity}}
    (folder / "plot_meta.json").write_text(json.dumps(meta, indent=2, default=str))
    print(f"plots written to {folder}")
    return {"kde": kde, "tsne": tsne}


def cmd_oracle(cfg: Optional[ExperimentConfig], quick: bool = False, out: Optional[Path] = None) -> list:
    seed = 0 if cfg is None else cfg.seed
    checks = run_oracle_suite(quick=quick, seed=seed)
    text = format_report(checks)
    sys.stdout.write(text)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "oracle_report.tsv").write_text(text)
    failed = [c.name for c in checks if not c.passed]
    if failed:
        raise OracleFailure(f"oracle checks failed: {', '.join(failed)}")
    return checks


# -- entry point ---------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML config path or preset name (" + ", ".join(preset_names()) + ")")
    common.add_argument("--seed", type=int, help="global seed override")
    common.add_argument("--out", help="output directory override")
    common.add_argument("--steps", type=int, help="reverse-SDE step count override")
    common.add_argument("--missing-rate", type=float, dest="missing_rate", help="regime override (0 = regular)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="tsgm", description="Score-based time-series synthesis pipeline.")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("prepare", parents=[common], help="window, split, normalize and apply the missing-data regime")
    sub.add_parser("train-codec", parents=[common], help="pre-train the autoencoder")
    p = sub.add_parser("train-score", parents=[common], help="train the conditional score network")
    p.add_argument("--resume", action="store_true", help="continue from the last training checkpoint")
    p = sub.add_parser("generate", parents=[common], help="sample synthetic windows")
    p.add_argument("--output", help="container path (default <out>/generated.npz)")
    p = sub.add_parser("evaluate", parents=[common], help="discriminative and predictive scores over several runs")
    p.add_argument("--input", help="synthetic container (default <out>/generated.npz)")
    p.add_argument("--real", help="reference container (default <out>/data/train.npz)")
    p = sub.add_parser("plot", parents=[common], help="KDE and t-SNE figures")
    p.add_argument("--input", help="synthetic container (default <out>/generated.npz)")
    p = sub.add_parser("oracle", parents=[common], help="run the numerical oracle suite")
    p.add_argument("--quick", action="store_true", help="smaller sample sizes")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    torch.set_num_threads(1)
    try:
        if args.command == "oracle":
            cfg = resolve_config(args) if args.config else None
            out = Path(args.out) if args.out else (Path(cfg.out) if cfg else None)
            cmd_oracle(cfg, args.quick, out)
            return EXIT_OK
        cfg = resolve_config(args)
        if args.command == "prepare":
            cmd_prepare(cfg)
        elif args.command == "train-codec":
            cmd_train_codec(cfg)
        elif args.command == "train-score":
            cmd_train_score(cfg, args.resume)
        elif args.command == "generate":
            cmd_generate(cfg, args.output)
        elif args.command == "evaluate":
            cmd_evaluate(cfg, args.input, args.real)
        elif args.command == "plot":
            cmd_plot(cfg, args.input)
        return EXIT_OK
    except Exception as exc:  # noqa: BLE001 - mapped to exit categories
        for cls, code, label in ERROR_CODES:
            if isinstance(exc, cls):
                print(f"error [{label}]: {exc}", file=sys.stderr)
                return code
        print(f"error [unexpected]: {type(exc).__name__}: {exc}", file=sys.stderr)
        if args.verbose:
            raise
        return EXIT_UNEXPECTED


if __name__ == "__main__":
    sys.exit(main())
