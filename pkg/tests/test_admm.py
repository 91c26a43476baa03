import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra import numpy as hnp

from sebsfv.admm import (
    default_three_term_params,
    nuclear_norm,
    rpca_three_term,
    rpca_two_term,
    soft_threshold,
    svt,
)


def planted(seed, d=100, n=80, frac=0.05):
    """Rank-2 L* plus a sparse O* whose magnitudes are >= 10x the largest L* entry."""
    rng = np.random.default_rng(seed)
    L = rng.standard_normal((d, 2)) @ rng.standard_normal((2, n)) / np.sqrt(2)
    supp = rng.random((d, n)) < frac
    mag = 10 * np.abs(L).max() * (1 + rng.random((d, n)))
    O = np.where(supp, mag * rng.choice([-1, 1], (d, n)), 0.0)
    return L, O, supp


def support_f1(est, truth):
    tp = np.sum(est & truth)
    if tp == 0:
        return 0.0
    p, r = tp / est.sum(), tp / truth.sum()
    return 2 * p * r / (p + r)


# -- proximal operators ------------------------------------------------------


def test_soft_threshold_examples():
    assert soft_threshold(1.0, 2.0) == 0.0
    assert soft_threshold(5.0, 2.0) == 3.0
    assert soft_threshold(-5.0, 2.0) == -3.0


def test_svt_examples():
    np.testing.assert_allclose(svt(np.diag([5.0, 1.0]), 2.0), np.diag([3.0, 0.0]), atol=1e-14)
    np.testing.assert_array_equal(svt(np.diag([1.0, 0.5]), 2.0), np.zeros((2, 2)))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31), st.floats(0.0, 3.0))
def test_svt_nuclear_norm_oracle(seed, tau):
    M = np.random.default_rng(seed).standard_normal((6, 4))
    s = np.linalg.svd(M, compute_uv=False)
    assert nuclear_norm(svt(M, tau)) == pytest.approx(np.sum(np.maximum(s - tau, 0)), abs=1e-10)


finite = st.floats(-100, 100, allow_nan=False)


@settings(max_examples=40, deadline=None)
@given(hnp.arrays(np.float64, (5, 4), elements=finite), hnp.arrays(np.float64, (5, 4), elements=finite), st.floats(0, 10))
def test_prox_nonexpansive(a, b, tau):
    assert np.linalg.norm(soft_threshold(a, tau) - soft_threshold(b, tau)) <= np.linalg.norm(a - b) + 1e-9
    assert np.linalg.norm(svt(a, tau) - svt(b, tau)) <= np.linalg.norm(a - b) * (1 + 1e-9) + 1e-9


@settings(max_examples=40, deadline=None)
@given(hnp.arrays(np.float64, (5, 4), elements=finite))
def test_prox_identity_at_zero(a):
    np.testing.assert_array_equal(soft_threshold(a, 0.0), a)
    np.testing.assert_allclose(svt(a, 0.0), a, atol=1e-9 * (1 + np.abs(a).max()))


# -- two-term solver ---------------------------------------------------------


def test_two_term_zero():
    S, O, rep = rpca_two_term(np.zeros((4, 3)))
    assert not S.any() and not O.any() and rep.converged


def test_two_term_rank_one_large_eta():
    rng = np.random.default_rng(0)
    F = np.outer(rng.standard_normal(10), rng.standard_normal(10))
    S, O, rep = rpca_two_term(F, eta=10.0)
    assert np.abs(O).max() <= 1e-6 * np.abs(F).max()
    np.testing.assert_allclose(S, F, atol=1e-6 * np.abs(F).max())
    # no interior split of the constraint does better
    best = nuclear_norm(F)
    for t in np.linspace(0.1, 0.9, 9):
        assert rep.objective <= nuclear_norm(t * F) + 10.0 * np.abs((1 - t) * F).sum() + 1e-6
    assert rep.objective == pytest.approx(best, rel=1e-5)


@pytest.mark.parametrize("seed", range(3))
def test_two_term_planted(seed):
    L, O, supp = planted(seed)
    S, Oh, rep = rpca_two_term(L + O, eta=1 / np.sqrt(100))
    assert rep.converged and rep.primal_residual <= 1e-7 and rep.iterations <= 500
    assert support_f1(np.abs(Oh) > 1e-6 * np.abs(O).max(), supp) >= 0.99
    assert np.linalg.norm(S - L) / np.linalg.norm(L) <= 1e-3


def _beats_trivial(F, eta, **opts):
    S, O, rep = rpca_two_term(F, eta=eta, **opts)
    obj = nuclear_norm(S) + eta * np.abs(O).sum()
    slack = 1e-6 * (1 + obj)
    return obj <= nuclear_norm(F) + slack and obj <= eta * np.abs(F).sum() + slack


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31), st.floats(0.05, 2.0))
def test_two_term_beats_trivial_points_slow_schedule(seed, eta):
    F = np.random.default_rng(seed).standard_normal((12, 9))
    assert _beats_trivial(F, eta, rho=1.05)


@pytest.mark.xfail(
    strict=True,
    reason="rho = 1.6 reaches feasibility before optimality; on unstructured F with small eta "
    "the objective ends ~3% above the all-L1 point (see decisions ledger)",
)
def test_two_term_beats_trivial_points_default_schedule():
    F = np.random.default_rng(0).standard_normal((12, 9))
    assert _beats_trivial(F, 0.1875)


def _late_increase_rate(seeds):
    inc = tot = 0
    for seed in seeds:
        L, O, _ = planted(seed, 60, 50)
        _, _, rep = rpca_two_term(L + O, eta=1 / np.sqrt(60))
        h = np.array(rep.residual_history)[10:]
        inc += int(np.sum(h[1:] > h[:-1]))
        tot += max(h.size - 1, 0)
    return inc / max(tot, 1)


@pytest.mark.xfail(
    strict=True,
    reason="with mu0 = 1.25/sigma_max and rho = 1.6 the inexact ALM residual oscillates; "
    "about 7% of late iterations increase it, some by 5x (see decisions ledger)",
)
def test_two_term_residual_monotone_after_ten():
    assert _late_increase_rate(range(30)) <= 0.01


def test_two_term_residual_envelope_decays():
    # what does hold: every 5-iteration window ends below the previous window's minimum
    for seed in range(10):
        L, O, _ = planted(seed, 60, 50)
        _, _, rep = rpca_two_term(L + O, eta=1 / np.sqrt(60))
        h = np.array(rep.residual_history)
        for k in range(10, h.size - 5, 5):
            assert h[k : k + 5].min() < h[k - 5 : k].min()


def test_two_term_nonconvergence_warns():
    L, O, _ = planted(6, 40, 30)
    with pytest.warns(RuntimeWarning, match="stopped"):
        _, _, rep = rpca_two_term(L + O, eta=0.2, max_iter=2)
    assert not rep.converged and rep.primal_residual >= 0


def test_two_term_rejects_bad_eta():
    with pytest.raises(ValueError):
        rpca_two_term(np.ones((2, 2)), eta=0.0)


# -- three-term solver -------------------------------------------------------


def test_three_term_defaults():
    xi, gamma = default_three_term_params((400, 100))
    assert xi == pytest.approx(0.05) and gamma == pytest.approx(5.0)


def test_three_term_zero():
    B, S, N, rep = rpca_three_term(np.zeros((3, 3)))
    assert not (B.any() or S.any() or N.any()) and rep.converged


def test_three_term_planted():
    L, O, supp = planted(7)
    # a very large gamma leaves no room for the dense noise term
    B, S, N, rep = rpca_three_term(L + O, xi=1 / np.sqrt(100), gamma=1e8)
    assert rep.converged
    assert support_f1(np.abs(S) > 1e-6 * np.abs(O).max(), supp) >= 0.99
    assert np.linalg.norm(B - L) / np.linalg.norm(L) <= 1e-3


def test_three_term_pure_noise_goes_to_noise():
    X = 0.1 * np.random.default_rng(8).standard_normal((10, 10))
    B, S, N, rep = rpca_three_term(X, xi=100.0, gamma=0.5)
    assert np.abs(S).max() == 0.0
    assert nuclear_norm(B) < 0.1 * nuclear_norm(X)
    assert np.linalg.norm(N) > 0.9 * np.linalg.norm(X)
    # and the returned point beats putting everything in N or in B
    assert rep.objective <= 0.5 * np.sum(X * X) + 1e-9
    assert rep.objective <= nuclear_norm(X) + 1e-9
