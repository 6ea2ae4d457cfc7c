import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.interpolate import CubicSpline
from torch import nn

from tsgm import codec as C
from tsgm.config import preset
from tsgm.data import SeriesBatch, inject_missing, synth_sines
from tsgm.spline import natural_cubic_spline
from tsgm.trainer import TrainConfig, pretrain_codec

# -- spline ---------------------------------------------------------------


def _single(times, values, mask=None):
    times = np.asarray(times, float)[None]
    values = np.asarray(values, float)[None, :, None]
    mask = np.ones(times.shape, bool) if mask is None else np.asarray(mask)[None]
    return natural_cubic_spline(times, values, mask)


def test_spline_two_points_is_linear():
    path = _single([0.0, 1.0], [1.0, 3.0])
    for t in (0.0, 0.25, 0.5, 0.9, 1.0):
        assert path.evaluate(t)[0, 0] == pytest.approx(1.0 + 2.0 * t, abs=1e-12)
        assert path.derivative(t)[0, 0] == pytest.approx(2.0, abs=1e-12)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.integers(3, 20))
def test_spline_matches_scipy_natural_spline(seed, n):
    rng = np.random.default_rng(seed)
    t = np.sort(rng.choice(np.linspace(0, 1, 40), size=n, replace=False))
    y = rng.normal(size=n)
    path = _single(t, y)
    ref = CubicSpline(t, y, bc_type="natural")
    for q in np.linspace(t[0], t[-1], 17):
        assert path.evaluate(q)[0, 0] == pytest.approx(float(ref(q)), abs=1e-9)
        assert path.derivative(q)[0, 0] == pytest.approx(float(ref(q, 1)), abs=1e-8)


def test_spline_interpolates_observed_knots_only():
    rng = np.random.default_rng(0)
    t = np.linspace(0, 1, 12)
    y = rng.normal(size=12)
    mask = np.ones(12, bool)
    mask[[3, 7, 8]] = False
    path = _single(t, y, mask)
    for k in np.flatnonzero(mask):
        assert path.evaluate(t[k])[0, 0] == pytest.approx(y[k], abs=1e-9)


def test_spline_derivative_continuous_at_knots():
    rng = np.random.default_rng(1)
    t = np.linspace(0, 1, 9)
    path = _single(t, rng.normal(size=9))
    h = 1e-4
    for k in t[1:-1]:
        # second-order one-sided stencils, each confined to one segment
        left = (3 * path.evaluate(k) - 4 * path.evaluate(k - h) + path.evaluate(k - 2 * h)) / (2 * h)
        right = (-3 * path.evaluate(k) + 4 * path.evaluate(k + h) - path.evaluate(k + 2 * h)) / (2 * h)
        assert abs(left[0, 0] - right[0, 0]) < 1e-4 * max(1.0, abs(right[0, 0]))
        assert path.derivative(k - 1e-12)[0, 0] == pytest.approx(path.derivative(k + 1e-12)[0, 0], abs=1e-6)


def test_spline_natural_boundary():
    rng = np.random.default_rng(2)
    t = np.linspace(0, 1, 7)
    path = _single(t, rng.normal(size=7))
    assert np.all(np.abs(path.m[0, [0, 6]]) < 1e-6)
    assert np.any(np.abs(path.m[0, 1:6]) > 1e-3)
    # y'' from a central difference of y' just inside each end
    h = 1e-7
    for end in (t[0] + h, t[-1] - h):
        second = (path.derivative(end + h) - path.derivative(end - h)) / (2 * h)
        assert abs(second[0, 0]) < 1e-3


def test_spline_requires_two_points():
    with pytest.raises(ValueError):
        _single([0.0, 0.5, 1.0], [1.0, 2.0, 3.0], [True, False, False])


# -- GRU codec -------------------------------------------------------------


def _toy(n=8, dim=2, length=24, seed=0):
    return synth_sines(n, dim, length, np.random.default_rng(seed))


def test_gru_zero_weights_emit_zeros():
    codec = C.GRUCodec(2, 5)
    for p in codec.parameters():
        nn.init.zeros_(p)
    h = C.gru_encode(codec, _toy())
    assert h.shape == (8, 24, 5)
    assert torch.count_nonzero(h) == 0


def test_stocks_preset_latent_shape():
    cfg = preset("stocks")
    codec = C.GRUCodec(6, cfg.codec.latent_dim)
    batch = SeriesBatch.from_values(np.random.default_rng(0).random((3, 24, 6)))
    assert C.gru_encode(codec, batch).shape == (3, 24, 24)


def test_gru_encoder_and_decoder_are_causal():
    torch.manual_seed(0)
    codec = C.GRUCodec(2, 6)
    batch = _toy(4)
    inputs = codec.prepare(batch)
    h = codec.encode(inputs)
    m = 10
    bumped = dict(inputs, values=inputs["values"].clone())
    bumped["values"][:, m] += 1.0
    h2 = codec.encode(bumped)
    assert torch.equal(h[:, :m], h2[:, :m])
    assert not torch.allclose(h[:, m], h2[:, m])
    x = codec.decode(h)
    hb = h.clone()
    hb[:, m] += 1.0
    x2 = codec.decode(hb)
    assert torch.equal(x[:, :m], x2[:, :m])
    assert x.shape == (4, 24, 2)


def test_gru_codec_rejects_bad_inputs():
    codec = C.GRUCodec(2, 4)
    irregular = inject_missing(_toy(), 0.3, np.random.default_rng(0))
    with pytest.raises(ValueError):
        codec.prepare(irregular)
    with pytest.raises(ValueError):
        codec.decode(torch.zeros(1, 24, 5))


def test_gru_overfits_eight_samples():
    torch.manual_seed(0)
    codec = C.GRUCodec(2, 8)
    cfg = TrainConfig(iter_pre=2000, lr_codec=1e-2, batch_size=8)
    codec, curve = pretrain_codec(codec, _toy(8), cfg)
    assert len(curve) <= 2000
    with torch.no_grad():
        x = codec.decode(C.gru_encode(codec, _toy(8)))
    assert C.recon_loss(torch.as_tensor(_toy(8).values, dtype=torch.float32), x).item() < 1e-3


# -- irregular codec -------------------------------------------------------


def _irregular(n=8, rate=0.3, length=24, seed=0):
    return inject_missing(_toy(n, 2, length, seed), rate, np.random.default_rng(seed))


def test_vector_field_architecture():
    f = C.NCDECodec(3, 10).func_f
    linears = [m for m in f.net if isinstance(m, nn.Linear)]
    acts = [type(m) for m in f.net if not isinstance(m, nn.Linear)]
    assert [l.out_features for l in linears] == [12, 12, 12, 10 * 4]
    assert acts == [nn.ReLU, nn.ReLU, nn.ReLU, nn.Tanh]
    assert f(torch.zeros(5, 10)).shape == (5, 10, 4)


def test_gruode_field_gates():
    g = C.NCDECodec(2, 6, decoder_hidden=12).func_g
    assert g.lin_r.in_features == g.lin_r.out_features == 12
    d = torch.randn(4, 12)
    r, z = torch.relu(g.lin_r(d)), torch.relu(g.lin_z(d))
    u = torch.tanh(g.lin_u(r * d))
    assert torch.allclose(g(d), (1 - z) * (u - d))


def test_ncde_zero_field_keeps_initial_state():
    torch.manual_seed(0)
    codec = C.NCDECodec(2, 6)
    last = [m for m in codec.func_f.net if isinstance(m, nn.Linear)][-1]
    nn.init.zeros_(last.weight)
    nn.init.zeros_(last.bias)
    h = C.ncde_encode(codec, _irregular(3))
    assert h.shape == (3, 24, 6)
    assert torch.allclose(h, h[:, :1].expand_as(h))


def test_gruode_zero_field_is_pure_jump_chain():
    torch.manual_seed(0)
    codec = C.NCDECodec(2, 4, decoder_hidden=8)
    codec.func_g.forward = lambda d: torch.zeros_like(d)
    h = torch.randn(2, 5, 4)
    x = codec.decode(h)
    d = torch.zeros(2, 8)
    want = []
    for k in range(5):
        d = codec.jump(h[:, k], d)
        want.append(codec.readout(d))
    assert torch.allclose(x, torch.stack(want, 1), atol=1e-6)


def test_ncde_step_halving_consistency():
    torch.manual_seed(0)
    codec = C.NCDECodec(2, 6)
    batch = _irregular(4)
    with torch.no_grad():
        h4 = codec.encode(codec.prepare(batch, substeps=4))
        h8 = codec.encode(codec.prepare(batch, substeps=8))
    rel = (h4 - h8).norm() / h8.norm()
    assert rel < 1e-3


def test_ncde_encoder_emits_every_grid_order():
    codec = C.NCDECodec(2, 5)
    batch = _irregular(2, rate=0.5)
    h = C.ncde_encode(codec, batch)
    assert h.shape == (2, 24, 5)
    assert C.gruode_decode(codec, h).shape == (2, 24, 2)
    with pytest.raises(ValueError):
        C.ncde_encode(C.GRUCodec(2, 5), batch)


def test_ncde_divergence_is_a_distinct_error():
    codec = C.NCDECodec(2, 4)
    inputs = codec.prepare(_irregular(2))
    inputs["dX"] = inputs["dX"] * float("inf")
    with pytest.raises(C.SolverDivergenceError):
        codec.encode(inputs)


def test_irregular_codec_fits_observed_entries():
    torch.manual_seed(0)
    batch = _irregular(8, 0.3)
    codec = C.NCDECodec(2, 8, decoder_hidden=16)
    cfg = TrainConfig(iter_pre=5000, lr_codec=1e-2, batch_size=8)
    inputs = codec.prepare(batch)
    done = {}

    def stop(step, loss):
        if loss < 2e-3:
            done["step"] = step
            return False
        return True

    codec, curve = pretrain_codec(codec, inputs, cfg, callback=stop)
    with torch.no_grad():
        mse = C.recon_loss(inputs["target"], codec.decode(codec.encode(inputs)), inputs["mask"]).item()
    assert len(curve) <= 5000
    assert mse < 1e-2


# -- loss and persistence ----------------------------------------------------


def test_recon_loss_rules():
    x = torch.randn(3, 6, 2)
    assert C.recon_loss(x, x).item() == 0.0
    assert C.recon_loss(x, x + 0.3).item() == pytest.approx(0.09, rel=1e-5)
    mask = torch.zeros(3, 6, dtype=torch.bool)
    mask[:, ::2] = True
    y = x.clone()
    y[:, 1::2] += 5.0
    assert C.recon_loss(x, y, mask).item() == 0.0
    with pytest.raises(ValueError):
        C.recon_loss(x, y, torch.zeros(3, 6, dtype=torch.bool))


@pytest.mark.parametrize("make", [lambda: C.GRUCodec(3, 5), lambda: C.NCDECodec(3, 5, 7)])
def test_codec_checkpoint_roundtrip(tmp_path, make):
    codec = make()
    C.save_codec(tmp_path / "c.pt", codec, seed=1)
    again = C.load_codec(tmp_path / "c.pt")
    assert again.descriptor() == codec.descriptor()
    for a, b in zip(codec.state_dict().values(), again.state_dict().values()):
        assert torch.equal(a, b)
    torch.save({"format": "other"}, tmp_path / "bad.pt")
    with pytest.raises(ValueError):
        C.load_codec(tmp_path / "bad.pt")
