import json

import numpy as np
import pytest
import yaml

from tsgm import cli
from tsgm.config import ConfigError, ExperimentConfig, load_config, preset, preset_names, substream_seed
from tsgm.data import load_container

TINY = {
    "preset": "sines",
    "dataset": {"n_samples": 60},
    "codec": {"latent_dim": 4, "decoder_hidden": 8},
    "score_net": {"depth": 2, "base_channels": 8, "channel_mult": [1, 2]},
    "train": {"iter_pre": 20, "iter_main": 20, "batch_size": 16},
    "sampler": {"n_steps": 4},
    "eval": {"n_generate": 24, "n_runs": 2, "steps": 20, "batch_size": 16},
}


def _write(tmp_path, extra=None, name="cfg.yaml"):
    d = json.loads(json.dumps(TINY))
    d["out"] = str(tmp_path / "run")
    for k, v in (extra or {}).items():
        d[k] = v
    path = tmp_path / name
    path.write_text(yaml.safe_dump(d))
    return path


def run(*argv):
    return cli.main([str(a) for a in argv])


# -- config ----------------------------------------------------------------


def test_every_table_row_is_a_preset():
    names = preset_names()
    for ds in ("stocks", "energy", "air", "ai4i"):
        for suffix in ("", "-missing-30", "-missing-50", "-missing-70"):
            assert ds + suffix in names
            preset(ds + suffix)
    energy = preset("energy")
    assert (energy.codec.latent_dim, energy.train.use_alt, energy.train.iter_pre) == (56, False, 100000)
    irr = preset("stocks-missing-50")
    assert irr.missing_rate == 0.5 and irr.codec.decoder_hidden == 48 and not irr.regular
    assert irr.regime == "missing-50"
    with pytest.raises(ConfigError):
        preset("nope")


def test_benchmark_presets_restrict_missing_rates():
    with pytest.raises(ConfigError):
        preset("air").with_overrides(missing_rate=0.4)
    assert preset("sines").with_overrides(missing_rate=0.4).missing_rate == 0.4


def test_yaml_roundtrip_and_hash(tmp_path):
    cfg = load_config(_write(tmp_path))
    cfg.save(tmp_path / "again.yaml")
    again = load_config(tmp_path / "again.yaml")
    assert again.to_dict() == cfg.to_dict()
    assert again.config_hash() == cfg.config_hash()
    assert cfg.with_overrides(out="elsewhere").config_hash() == cfg.config_hash()
    assert cfg.with_overrides(seed=1).config_hash() != cfg.config_hash()


def test_unknown_keys_rejected(tmp_path):
    with pytest.raises(ConfigError, match="unknown"):
        load_config(_write(tmp_path, {"trian": {}}))
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"train": {"lr": 1.0}})


def test_seed_substreams_are_distinct_and_stable():
    seeds = {name: substream_seed(7, name) for name in ("data", "train", "sample", "eval")}
    assert len(set(seeds.values())) == 4
    assert substream_seed(7, "data") == seeds["data"]
    assert substream_seed(8, "data") != seeds["data"]
    with pytest.raises(ConfigError):
        substream_seed(7, "other")


# -- command line ------------------------------------------------------------


def test_full_pipeline_and_reproducibility(tmp_path, capsys):
    cfg_path = _write(tmp_path)
    out = tmp_path / "run"
    for cmd in ("prepare", "train-codec", "train-score", "generate", "evaluate"):
        assert run(cmd, "--config", cfg_path) == cli.EXIT_OK, cmd
    printed = capsys.readouterr().out
    assert "windows=60" in printed and "Disc.\tTSGM\t" in printed
    for name in ("data/train.npz", "codec.pt", "codec_curve.csv", "score.pt", "score_curve.csv", "generated.npz", "eval_report.tsv"):
        assert (out / name).exists(), name
    gen, _, meta = load_container(out / "generated.npz")
    cfg = load_config(cfg_path)
    assert gen.values.shape == (24, 24, 2)
    assert meta["config_hash"] == cfg.config_hash() and meta["seed"] == 0 and meta["n_steps"] == 4
    first = json.loads((out / "eval_report.json").read_text())
    assert first["n_runs"] == 2 and first["artifacts"]["config_hash"] == cfg.config_hash()

    out2 = tmp_path / "run2"
    for cmd in ("prepare", "train-codec", "train-score", "generate", "evaluate"):
        assert run(cmd, "--config", cfg_path, "--out", out2) == 0
    second = json.loads((out2 / "eval_report.json").read_text())
    assert first["disc"] == second["disc"] and first["pred"] == second["pred"]

    assert run("plot", "--config", cfg_path) == 0
    assert (out / "plots" / "kde.png").exists() and (out / "plots" / "tsne.png.csv").exists()
    assert run("generate", "--config", cfg_path, "--steps", 2, "--output", tmp_path / "g2.npz") == 0
    assert load_container(tmp_path / "g2.npz")[2]["n_steps"] == 2


def test_resume_continues_training(tmp_path):
    cfg_path = _write(tmp_path, {"train": {"iter_pre": 5, "iter_main": 1000, "batch_size": 8}})
    for cmd in ("prepare", "train-codec"):
        assert run(cmd, "--config", cfg_path) == 0
    assert run("train-score", "--config", cfg_path) == 0
    assert (tmp_path / "run" / "score_train.ckpt").exists()
    assert run("train-score", "--config", cfg_path, "--resume") == 0
    curve = (tmp_path / "run" / "score_curve.csv").read_text().splitlines()
    assert len(curve) == 1001


def test_real_vs_real_evaluation_is_indistinguishable(tmp_path):
    cfg_path = _write(tmp_path, {"eval": {"n_generate": 24, "n_runs": 2, "steps": 200, "batch_size": 16}})
    assert run("prepare", "--config", cfg_path) == 0
    train = tmp_path / "run" / "data" / "train.npz"
    assert run("evaluate", "--config", cfg_path, "--input", train, "--real", train) == 0
    rep = json.loads((tmp_path / "run" / "eval_report.json").read_text())
    assert rep["disc"]["mean"] < 0.05


def test_missing_rate_override(tmp_path, capsys):
    cfg_path = _write(tmp_path)
    assert run("prepare", "--config", cfg_path, "--missing-rate", 0.3) == 0
    assert "observed_per_sample=17" in capsys.readouterr().out
    train, _, _ = load_container(tmp_path / "run" / "data" / "train.npz")
    assert not train.regular


def test_irregular_pipeline_runs(tmp_path):
    cfg_path = _write(tmp_path, {"missing_rate": 0.5})
    for cmd in ("prepare", "train-codec", "train-score", "generate"):
        assert run(cmd, "--config", cfg_path) == 0, cmd
    gen, _, _ = load_container(tmp_path / "run" / "generated.npz")
    assert gen.regular and np.isfinite(gen.values).all()


def test_missing_artifact_is_named(tmp_path, capsys):
    cfg_path = _write(tmp_path)
    assert run("generate", "--config", cfg_path) == cli.EXIT_MISSING_ARTIFACT
    assert "train.npz" in capsys.readouterr().err
    assert run("prepare", "--config", cfg_path) == 0
    assert run("train-score", "--config", cfg_path) == cli.EXIT_MISSING_ARTIFACT
    assert "codec.pt" in capsys.readouterr().err


def test_error_categories(tmp_path, capsys):
    assert run("prepare", "--config", tmp_path / "absent.yaml") == cli.EXIT_CONFIG
    assert run("prepare", "--config", "no-such-preset") == cli.EXIT_CONFIG
    bad = tmp_path / "bad.yaml"
    bad.write_text("train: [unclosed")
    assert run("prepare", "--config", bad) == cli.EXIT_CONFIG
    # benchmark CSVs are not shipped: a data error, not a crash
    assert run("prepare", "--config", "stocks", "--out", tmp_path / "s") == cli.EXIT_DATA
    assert "stock_data.csv" in capsys.readouterr().err
    with pytest.raises(SystemExit):
        run("bogus")


def test_csv_dataset_through_cli(tmp_path, capsys):
    rng = np.random.default_rng(0)
    rows = "\n".join(",".join(f"{v:.5f}" for v in rng.random(3)) for _ in range(60))
    (tmp_path / "t.csv").write_text("a,b,c\n" + rows + "\n")
    cfg_path = _write(tmp_path, {"dataset": {"kind": "csv", "name": "toy", "path": str(tmp_path / "t.csv"), "length": 10}})
    assert run("prepare", "--config", cfg_path) == 0
    assert "windows=51" in capsys.readouterr().out


def test_oracle_quick(tmp_path, capsys):
    assert run("oracle", "--quick", "--out", tmp_path) == 0
    text = (tmp_path / "oracle_report.tsv").read_text()
    assert text.startswith("check\tstatus") and "FAIL" not in text
