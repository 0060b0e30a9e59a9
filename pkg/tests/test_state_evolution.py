import numpy as np
import pytest

from ebpca.exceptions import SubCriticalError, ValidationError
from ebpca.model import PriorSpec
from ebpca.npmle import DiscretePrior
from ebpca.state_evolution import (
    bayes_matrix_risk,
    gaussian_q_map_1d,
    q_init,
    q_map,
    se_fixed_point,
    se_init,
    se_recursion,
    snr_matrix,
)

TWO_POINT = DiscretePrior([[-1.0], [1.0]], [0.5, 0.5])


def test_se_init_matches_pca_asymptotics():
    M0, Sigma0 = se_init([2.0], 2.0)
    assert Sigma0[0, 0] == pytest.approx(9.0 / 40.0, abs=1e-12)
    assert M0[0, 0] == pytest.approx(np.sqrt(0.775), abs=1e-12)
    # k = 2 diagonal
    M0, Sigma0 = se_init([3.0, 2.0], 1.0)
    assert M0[0, 1] == 0.0 and Sigma0[1, 0] == 0.0
    assert M0[0, 0] > M0[1, 1]  # stronger signal aligns better


def test_q_init_values_and_subcritical():
    Q0 = q_init([2.0], 1.0)
    assert Q0[0, 0] == pytest.approx(1.5, abs=1e-12)
    with pytest.raises(SubCriticalError):
        q_init([0.9], 1.0)
    with pytest.raises(SubCriticalError):
        q_init([2.0, 0.8], 2.0)


def test_snr_matrix_consistent_with_recursion_lists():
    st = se_recursion(TWO_POINT, TWO_POINT, [2.0], 1.0, T=2)
    for t in range(len(st.Sigma)):
        assert np.allclose(
            snr_matrix(st.M[t], st.Sigma[t], st.S), st.Q[t], atol=1e-10
        )


def test_q_map_zero_snr_gives_zero():
    F = q_map(TWO_POINT, [[1e-9]])
    assert abs(F[0, 0]) < 1e-3


def test_q_map_point_mass_is_zero():
    # mean-zero information-free prior pair at +-0: posterior mean always 0
    dp = DiscretePrior([[0.0]], [1.0])
    F = q_map(dp, [[2.0]])
    assert abs(F[0, 0]) < 1e-12


def test_q_map_gaussian_closed_form():
    for s, q in [(2.0, 1.5), (1.3, 0.4), (3.0, 2.7)]:
        dp = PriorSpec("gaussian", 1).discretize(300).scaled([[np.sqrt(s)]])
        F = q_map(dp, [[q]])
        assert F[0, 0] == pytest.approx(gaussian_q_map_1d(s, q), abs=1e-6)


def test_q_map_monotone_and_bounded():
    qs = [0.2, 0.5, 1.0, 2.0, 5.0]
    vals = [q_map(TWO_POINT, [[q]])[0, 0] for q in qs]
    assert np.all(np.diff(vals) > 0)  # more SNR, more recovered signal
    second = TWO_POINT.second_moment()[0, 0]
    assert all(v <= second + 1e-10 for v in vals)


def test_q_map_psd_k2():
    rng = np.random.default_rng(0)
    dp = PriorSpec("three_point", 2).discretize(10)
    A = rng.standard_normal((2, 2))
    Q = A @ A.T + 0.1 * np.eye(2)
    F = q_map(dp, Q)
    evals = np.linalg.eigvalsh(F)
    assert evals.min() > -1e-10
    assert np.allclose(F, F.T, atol=1e-12)
    # bounded by the prior second moment in PSD order
    gap = np.linalg.eigvalsh(dp.second_moment() - F)
    assert gap.min() > -1e-8


def test_q_map_k3_quadrature_unsupported():
    dp = DiscretePrior(np.eye(3), np.ones(3) / 3)
    with pytest.raises(ValidationError):
        q_map(dp, np.eye(3))
    # but the Monte Carlo path works
    F = q_map(dp, np.eye(3), mc={"samples": 20000, "seed": 0})
    assert F.shape == (3, 3)


def test_q_map_monte_carlo_agrees_with_quadrature():
    Q = [[1.2]]
    quad = q_map(TWO_POINT, Q)[0, 0]
    mc = q_map(TWO_POINT, Q, mc={"samples": 400_000, "seed": 1})[0, 0]
    assert abs(mc - quad) < 5e-3


def test_gaussian_fixed_point_value():
    # s = 2, gamma = 1, Gaussian priors: q = 4q/(2q+1) has fixed point 1.5,
    # which equals the PCA initialization, so the recursion is stationary
    fp = se_fixed_point(
        PriorSpec("gaussian", 1), PriorSpec("gaussian", 1), [2.0], 1.0
    )
    assert fp.converged
    assert fp.Q[0, 0] == pytest.approx(1.5, abs=1e-6)
    assert fp.Qbar[0, 0] == pytest.approx(1.5, abs=1e-6)


def test_recursion_mmse_nonincreasing():
    st = se_recursion(TWO_POINT, TWO_POINT, [1.5], 1.0, T=6)
    assert np.all(np.diff(st.mmse_v) <= 1e-9)
    assert np.all(np.diff(st.mmse_u) <= 1e-9)
    assert all(m >= -1e-9 for m in st.mmse_v + st.mmse_u)


def test_two_point_beats_gaussian_mmse():
    # informative prior structure lowers the fixed-point estimation error
    fp_tp = se_fixed_point(TWO_POINT, TWO_POINT, [1.5], 1.0)
    fp_g = se_fixed_point(
        PriorSpec("gaussian", 1), PriorSpec("gaussian", 1), [1.5], 1.0
    )
    assert fp_tp.mmse_v[-1] < fp_g.mmse_v[-1] - 0.01


def test_recursion_history_lengths():
    T = 3
    st = se_recursion(TWO_POINT, TWO_POINT, [2.0], 1.0, T=T)
    assert len(st.Qbar) == T + 1
    assert len(st.Q) == T + 2  # includes Q_0
    assert len(st.M) == len(st.Sigma) == T + 2
    assert len(st.Mbar) == len(st.Sigmabar) == T + 1


def test_bayes_matrix_risk_gaussian_value():
    # s = 2, gamma = 1, Gaussian: Tr(S E S E) - Qbar Q = 4 - 1.5^2 = 1.75
    g = PriorSpec("gaussian", 1)
    fp = se_fixed_point(g, g, [2.0], 1.0)
    risk = bayes_matrix_risk(fp.Qbar, fp.Q, g, g, [2.0])
    assert risk == pytest.approx(1.75, abs=1e-5)


def test_bayes_matrix_risk_decreases_with_information():
    fp = se_fixed_point(TWO_POINT, TWO_POINT, [2.0], 1.0)
    risk_tp = bayes_matrix_risk(fp.Qbar, fp.Q, TWO_POINT, TWO_POINT, [2.0])
    g = PriorSpec("gaussian", 1)
    fp_g = se_fixed_point(g, g, [2.0], 1.0)
    risk_g = bayes_matrix_risk(fp_g.Qbar, fp_g.Q, g, g, [2.0])
    assert 0.0 <= risk_tp < risk_g
