import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from tsgm import oracles as O
from tsgm.sampler import SamplerConfig
from tsgm.sde import SdeKind, SdeSpec

VP, SUBVP = SdeSpec.vp(), SdeSpec.subvp()
PROC = O.LinearGaussianProcess(N=3, ar_coeff=0.8, noise_std=0.6)


def test_process_validation_and_covariance():
    with pytest.raises(ValueError):
        O.LinearGaussianProcess(ar_coeff=1.0)
    with pytest.raises(ValueError):
        O.LinearGaussianProcess(noise_std=0.0)
    x = PROC.sample(200_000, np.random.default_rng(0))
    assert np.allclose(np.cov(x, rowvar=False), PROC.covariance(), atol=0.01)
    assert PROC.marginal_var()[0] == pytest.approx(0.36)


def test_conditional_score_zero_at_conditional_mean():
    m = VP.transition(0.4).mean_coeff
    assert O.analytic_conditional_score(PROC, VP, 0.4, m * 0.8 * 1.5, 1.5) == pytest.approx(0.0, abs=1e-15)


def test_conditional_score_small_s_limit_is_standard_normal():
    proc = O.LinearGaussianProcess(ar_coeff=0.0, noise_std=1.0)
    for x in (-2.0, 0.3, 1.7):
        assert O.analytic_conditional_score(proc, VP, 1e-9, x, 5.0) == pytest.approx(-x, rel=1e-6)


@settings(max_examples=100, deadline=None)
@given(
    kind=st.sampled_from([SdeKind.VP, SdeKind.SUBVP]),
    s=st.floats(0.02, 1.0),
    xs=st.floats(-3, 3),
    xp=st.floats(-3, 3),
)
def test_conditional_score_matches_finite_differences(kind, s, xs, xp):
    sde = SdeSpec(kind)
    h = 1e-5
    fd = (O.analytic_conditional_logpdf(PROC, sde, s, xs + h, xp) - O.analytic_conditional_logpdf(PROC, sde, s, xs - h, xp)) / (2 * h)
    an = O.analytic_conditional_score(PROC, sde, s, xs, xp)
    assert abs(fd - an) <= 1e-5 * max(abs(an), 1e-2)


def test_conditional_logpdf_integrates_to_one():
    grid = np.linspace(-12, 12, 20001)
    dens = np.exp(O.analytic_conditional_logpdf(PROC, SUBVP, 0.3, grid, 0.7))
    trapezoid = getattr(np, "trapezoid", None) or np.trapz
    assert trapezoid(dens, grid) == pytest.approx(1.0, abs=1e-8)


def test_suite_finite_difference_errors_are_tiny():
    err = O._finite_difference_errors()
    assert err["kernel"] < 1e-4 and err["conditional"] < 1e-5


def test_em_kernel_zero_time_is_exact():
    rep = O.em_kernel_check(VP, (0.0,), n_paths=100, n_steps=10)
    assert rep.mean_rel_err == [0.0] and rep.std_rel_err == [0.0]


def test_em_kernel_small_run():
    rep = O.em_kernel_check(SUBVP, (0.5, 1.0), n_paths=4000, n_steps=500)
    assert rep.passed(0.05)


def test_grad_equivalence_base_case():
    proc = O.LinearGaussianProcess(N=1)
    rep = O.mc_grad_equivalence(proc, n_mc=10_000, n_batches=100)
    assert rep.ci_contains_zero
    assert rep.rel_diff < 4 * rep.rel_se + 1e-12


def test_grad_equivalence_standard_error_shrinks_with_samples():
    small = O.mc_grad_equivalence(PROC, n_mc=10_000, n_batches=100)
    large = O.mc_grad_equivalence(PROC, n_mc=20_000, n_batches=100)
    assert 0.55 < large.rel_se / small.rel_se < 0.85
    assert small.ci_contains_zero and large.ci_contains_zero


def test_grad_equivalence_detects_a_wrong_target():
    # conditional targets from a different AR coefficient are not the true score
    wrong = O.LinearGaussianProcess(N=3, ar_coeff=0.2, noise_std=0.6)
    rep = O.mc_grad_equivalence(PROC, n_mc=10_000, n_batches=100, target_proc=wrong)
    assert not rep.ci_contains_zero
    assert not rep.passed


def test_reverse_oracle_small():
    rep = O.reverse_with_analytic_score(SUBVP, SamplerConfig(n_steps=100, seed=0), n_samples=4000)
    assert rep.std_rel_err < 0.05 and rep.mean_err < 0.05
    shifted = O.reverse_with_analytic_score(VP, SamplerConfig(n_steps=200, seed=0), n_samples=4000, data_mean=2.0, data_std=0.5)
    assert abs(shifted.mean - 2.0) < 0.05 and abs(shifted.std - 0.5) / 0.5 < 0.05


def test_ar_sampling_rejects_mismatched_initial_law():
    with pytest.raises(ValueError):
        O.generate_ar_process(O.LinearGaussianProcess(init_std=2.0), VP, SamplerConfig(n_steps=5))


def test_ar_joint_moments_coarse():
    errs = O.ar_moment_errors(PROC, VP, SamplerConfig(n_steps=200, corrector_steps=0, seed=0), 4000)
    assert errs["mean"] < 0.06 and errs["cov"] < 0.10


def test_report_formatting():
    checks = [O.OracleCheck("a", True, "x=1", "<2", 0.5), O.OracleCheck("b", False, "y=3", "<2", 1.25)]
    text = O.format_report(checks)
    assert text.splitlines() == ["check\tstatus\tmeasured\tthreshold\tseconds", "a\tPASS\tx=1\t<2\t0.50", "b\tFAIL\ty=3\t<2\t1.25"]
    assert O.report_dicts(checks)[1]["passed"] is False
