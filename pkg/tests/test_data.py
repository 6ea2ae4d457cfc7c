import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tsgm import data as D


def _write(tmp_path, text, name="t.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_load_csv_columns_and_order(tmp_path):
    p = _write(tmp_path, "a,b,c\n1,2,3\n4,5,6\n7,8,9\n")
    assert D.load_csv(p).tolist() == [[1, 2, 3], [4, 5, 6], [7, 8, 9]]
    assert D.load_csv(p, ["c", "a"]).tolist() == [[3, 1], [6, 4], [9, 7]]


def test_load_csv_six_stock_columns(tmp_path):
    header = "Open,High,Low,Close,Adj_Close,Volume"
    rows = "\n".join(",".join(str(i + j) for j in range(6)) for i in range(30))
    table = D.load_csv(_write(tmp_path, header + "\n" + rows + "\n"))
    assert table.shape == (30, 6)


def test_load_csv_semicolon(tmp_path):
    p = _write(tmp_path, "a;b\n1;2\n")
    assert D.load_csv(p, delimiter=";").tolist() == [[1, 2]]


def test_load_csv_errors_are_distinct(tmp_path):
    with pytest.raises(D.MissingFileError):
        D.load_csv(tmp_path / "nope.csv")
    with pytest.raises(D.EmptyTableError, match="no rows"):
        D.load_csv(_write(tmp_path, "", "empty.csv"))
    with pytest.raises(D.EmptyTableError, match="no rows"):
        D.load_csv(_write(tmp_path, "a,b\n", "header.csv"))
    with pytest.raises(D.MissingColumnError):
        D.load_csv(_write(tmp_path, "a,b\n1,2\n", "ok.csv"), ["zz"])
    with pytest.raises(D.UnparsableCellError, match=r"bad\.csv:3"):
        D.load_csv(_write(tmp_path, "a,b\n1,2\n3,x\n", "bad.csv"))


def test_window_counts_and_order():
    table = np.arange(25 * 2, dtype=float).reshape(25, 2)
    w = D.window(table, 24)
    assert w.n_samples == 2 and w.regular
    assert np.array_equal(w.values[1, 3], table[4])
    w3 = D.window(np.arange(100.0)[:, None], 10, stride=3)
    k, j = 5, 7
    assert w3.values[k, j, 0] == 100.0 * 0 + (k * 3 + j)
    assert np.allclose(w.times[0], np.linspace(0, 1, 24))
    with pytest.raises(D.DataError):
        D.window(table[:5], 24)


def test_window_count_formula_for_ai4i_size():
    # 10000 raw rows yield 9977 windows of length 24, not 10000
    assert D.window(np.zeros((10_000, 1)), 24).n_samples == 9977


def test_normalize_rules(caplog):
    b = D.SeriesBatch.from_values(np.array([[[3.0, 7.0], [2.0, 7.0], [4.0, 7.0]]]))
    stats = D.minmax_fit(b)
    assert stats.min.tolist() == [2.0, 7.0] and stats.max.tolist() == [4.0, 7.0]
    n = D.normalize(b, stats)
    assert n.values[0, 0, 0] == 0.5
    assert np.all(n.values[..., 1] == 0.5)
    assert "zero-range" in caplog.text


def test_normalize_clips_out_of_range():
    stats = D.NormStats(np.array([0.0]), np.array([1.0]))
    b = D.SeriesBatch.from_values(np.array([[[-1.0], [2.0]]]))
    assert D.normalize(b, stats).values.ravel().tolist() == [0.0, 1.0]


def test_normalize_roundtrip():
    rng = np.random.default_rng(0)
    raw = rng.normal(size=(20, 8, 3)) * 5 + 2
    b = D.SeriesBatch.from_values(raw)
    stats = D.minmax_fit(b)
    back = D.denormalize(D.normalize(b, stats), stats)
    assert np.max(np.abs(back.values - raw)) < 1e-9


@pytest.mark.parametrize("rate,observed", [(0.3, 17), (0.5, 12), (0.7, 7)])
def test_inject_missing_counts(rate, observed):
    b = D.synth_sines(30, 2, 24, np.random.default_rng(0))
    m = D.inject_missing(b, rate, np.random.default_rng(1))
    assert not m.regular
    assert np.all(m.mask.sum(axis=1) == observed)
    assert np.all(m.mask[:, 0])
    assert np.array_equal(m.values, b.values)


def test_inject_missing_zero_rate_is_identity():
    b = D.synth_sines(4, 2, 24, np.random.default_rng(0))
    assert D.inject_missing(b, 0.0, np.random.default_rng(0)) is b


def test_inject_missing_rejects_total_drop():
    b = D.synth_sines(2, 1, 2, np.random.default_rng(0))
    with pytest.raises(D.DataError):
        D.inject_missing(b, 0.9, np.random.default_rng(0))


@settings(max_examples=40, deadline=None)
@given(n=st.integers(2, 40), rate=st.floats(0.0, 0.9), seed=st.integers(0, 1000))
def test_inject_missing_property(n, rate, seed):
    b = D.synth_sines(3, 2, n, np.random.default_rng(seed))
    drop = int(round(rate * n))
    if drop >= n:
        with pytest.raises(D.DataError):
            D.inject_missing(b, rate, np.random.default_rng(seed))
        return
    m = D.inject_missing(b, rate, np.random.default_rng(seed))
    assert np.all(m.mask.sum(axis=1) == n - drop)
    assert np.all(m.mask[:, 0])


def test_split_sizes_and_determinism():
    b = D.synth_sines(100, 1, 5, np.random.default_rng(0))
    parts = D.split(b, (0.8, 0.1, 0.1), np.random.default_rng(7))
    assert [p.n_samples for p in parts] == [80, 10, 10]
    again = D.split(b, (0.8, 0.1, 0.1), np.random.default_rng(7))
    assert all(np.array_equal(x.values, y.values) for x, y in zip(parts, again))
    other = D.split(b, (0.8, 0.1, 0.1), np.random.default_rng(8))
    assert not np.array_equal(parts[1].values, other[1].values)
    flat = np.concatenate([p.values.reshape(len(p), -1) for p in parts])
    assert len(np.unique(flat, axis=0)) == 100
    with pytest.raises(D.DataError):
        D.split(D.synth_sines(3, 1, 5, np.random.default_rng(0)), (0.8, 0.1, 0.1))
    with pytest.raises(ValueError):
        D.split(b, (0.5, 0.2))


def test_synth_sines_properties():
    b = D.synth_sines(200, 3, 24, np.random.default_rng(0))
    assert b.values.shape == (200, 24, 3)
    assert b.values.min() >= 0 and b.values.max() <= 1
    x = b.values - b.values.mean(axis=1, keepdims=True)
    ac = (x[:, 1:] * x[:, :-1]).sum(axis=1) / (x**2).sum(axis=1)
    assert ac.mean() > 0.5
    again = D.synth_sines(200, 3, 24, np.random.default_rng(0))
    assert again.values.tobytes() == b.values.tobytes()


def test_container_roundtrip(tmp_path):
    b = D.inject_missing(D.synth_sines(5, 2, 24, np.random.default_rng(0)), 0.3, np.random.default_rng(0))
    stats = D.NormStats(np.array([0.0, 1.0]), np.array([2.0, 3.0]))
    D.save_container(tmp_path / "c.npz", b, stats, seed=4, config_hash="abc")
    b2, stats2, meta = D.load_container(tmp_path / "c.npz")
    assert np.array_equal(b2.values, b.values) and np.array_equal(b2.mask, b.mask)
    assert b2.regular is False
    assert np.array_equal(stats2.max, stats.max)
    assert meta == {"seed": 4, "config_hash": "abc"}


def test_container_rejects_foreign_file(tmp_path):
    np.savez(tmp_path / "x.npz", values=np.zeros(3))
    with pytest.raises(D.DataError):
        D.load_container(tmp_path / "x.npz")
    with pytest.raises(D.MissingFileError):
        D.load_container(tmp_path / "missing.npz")
