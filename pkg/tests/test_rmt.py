import numpy as np
import pytest
from scipy import integrate, stats

from ebpca.exceptions import (
    AmbiguousRankError,
    DegenerateNoiseError,
    SubCriticalError,
)
from ebpca.model import PriorSpec, SpikedConfig, generate_instance, subspace_distance
from ebpca import rmt


def test_normalize_pure_noise_scale():
    rng = np.random.default_rng(0)
    Y = rng.normal(scale=2.0, size=(500, 500))
    _, tau = rmt.normalize(Y, 1)
    assert abs(tau - 2.0) < 0.1


def test_normalize_idempotent():
    # dividing by tau_hat makes the residual variance exactly 1
    rng = np.random.default_rng(1)
    Y = rng.normal(scale=3.0, size=(300, 400))
    _, tau1 = rmt.normalize(Y, 1)
    _, tau2 = rmt.normalize(Y / tau1, 1)
    assert abs(tau2 - 1.0) < 1e-6
    # and the normalized output is a fixed point of the map
    Y1, _ = rmt.normalize(Y, 1)
    Y2, _ = rmt.normalize(Y1, 1)
    assert np.allclose(Y1, Y2, atol=1e-10)


def test_normalize_exact_low_rank_rejected():
    u = np.ones((50, 1))
    v = np.ones((80, 1))
    with pytest.raises(DegenerateNoiseError):
        rmt.normalize(u @ v.T, 1)


def test_top_k_svd_noiseless_rank_one():
    rng = np.random.default_rng(2)
    n, d = 200, 300
    u = rng.choice([-1.0, 1.0], n)
    v = rng.choice([-1.0, 1.0], d)
    Y = np.outer(u, v) / n + 1e-9 * rng.standard_normal((n, d))
    spec = rmt.top_k_svd(Y, 1)
    assert subspace_distance(spec.F, u[:, None]) < 1e-6
    assert subspace_distance(spec.G, v[:, None]) < 1e-6


def test_top_k_svd_scaling_and_signs():
    rng = np.random.default_rng(3)
    Y = rng.standard_normal((300, 200))
    spec = rmt.top_k_svd(Y, 3)
    n, d = Y.shape
    assert np.allclose(spec.F.T @ spec.F / n, np.eye(3), atol=1e-8)
    assert np.allclose(spec.G.T @ spec.G / d, np.eye(3), atol=1e-8)
    for i in range(3):
        j = np.argmax(np.abs(spec.G[:, i]))
        assert spec.G[j, i] > 0
        assert spec.F[:, i] @ Y @ spec.G[:, i] > 0
    assert np.all(np.diff(spec.lam) < 0)


def test_top_k_svd_ambiguous_rank():
    D = np.zeros((40, 50))
    D[0, 0] = D[1, 1] = 3.0
    D[2, 2] = 1.0
    with pytest.raises(AmbiguousRankError):
        rmt.top_k_svd(D, 1)


def test_estimate_signal_examples():
    assert rmt.estimate_signal(2.5, 1.0) == pytest.approx(2.0, abs=1e-12)
    assert rmt.estimate_signal(2.0, 1.0) == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(SubCriticalError):
        rmt.estimate_signal(1.9, 1.0)


def test_estimate_signal_inverts_forward_map():
    # property grid: forward singular-value map then inversion, to 1e-10
    for gamma in [0.25, 0.5, 1.0, 2.0, 4.0]:
        thr = gamma ** (-0.25)
        for s in np.linspace(thr * 1.05, thr * 1.05 + 4.0, 20):
            lam = rmt.singular_value_limit(s, gamma) / np.sqrt(gamma)
            assert abs(rmt.estimate_signal(lam, gamma) - s) < 1e-10


def test_predict_observables_values():
    p = rmt.predict_observables(2.0, 2.0)
    assert p.sigma_star_sq == pytest.approx(9.0 / 40.0, abs=1e-12)
    assert p.mu_star == pytest.approx(np.sqrt(0.775), abs=1e-12)
    assert p.sigma_bar_star_sq == pytest.approx(5.0 / 36.0, abs=1e-12)
    assert p.mu_bar_star == pytest.approx(np.sqrt(1 - 5.0 / 36.0), abs=1e-12)
    assert p.mu_star**2 + p.sigma_star_sq == pytest.approx(1.0, abs=1e-12)
    assert rmt.predict_observables(2.0, 1.0).sqrt_gamma_lambda_limit == pytest.approx(2.5)
    with pytest.raises(SubCriticalError):
        rmt.predict_observables(1.0, 1.0)


def test_bulk_edges():
    assert rmt.bulk_edges(1.0) == (0.0, 2.0)
    assert rmt.bulk_edges(4.0) == (1.0, 3.0)
    assert rmt.bulk_edges(0.25) == (0.5, 1.5)


@pytest.mark.parametrize("gamma", [0.5, 1.0, 2.0])
def test_mp_density_normalized(gamma):
    lo, hi = rmt.bulk_edges(gamma)
    val, err = integrate.quad(lambda x: rmt.mp_singular_density(x, gamma), lo, hi, limit=200)
    assert abs(val - 1.0) < 1e-6
    assert rmt.mp_singular_density(hi + 0.1, gamma) == 0.0
    if lo > 0:
        assert rmt.mp_singular_density(lo - 0.1, gamma) == 0.0


def test_mp_density_matches_noise_spectrum():
    rng = np.random.default_rng(4)
    n = 1000
    W = rng.standard_normal((n, n)) / np.sqrt(n)
    sv = np.linalg.svd(W, compute_uv=False)

    def cdf(x):
        x = np.atleast_1d(x)
        return np.array(
            [integrate.quad(lambda t: rmt.mp_singular_density(t, 1.0), 0, xi)[0] for xi in x]
        )

    ks = stats.kstest(sv, cdf).statistic
    assert ks < 0.03


def test_sample_alignment_matches_prediction():
    # spot version of the Monte-Carlo alignment property (full sweep in acceptance)
    cfg = SpikedConfig(n=1500, d=3000, k=1, signals=(1.5,), seed=9)
    p = PriorSpec("gaussian", 1)
    inst = generate_instance(cfg, p, p)
    Y, _ = rmt.normalize(inst.Y, 1)
    spec = rmt.top_k_svd(Y, 1)
    pred = rmt.predict_observables(1.5, 2.0)
    g_align = abs(spec.G[:, 0] @ inst.V[:, 0] / cfg.d)
    f_align = abs(spec.F[:, 0] @ inst.U[:, 0] / cfg.n)
    assert abs(g_align - pred.mu_star) < 0.04
    assert abs(f_align - pred.mu_bar_star) < 0.04


def test_cross_spike_orthogonality():
    # averaged over seeds: single draws fluctuate at the O(n^{-1/2}) scale
    p = PriorSpec("gaussian", 2)
    vals = []
    for seed in range(5):
        cfg = SpikedConfig(n=2000, d=1000, k=2, signals=(3.0, 1.8), seed=seed)
        inst = generate_instance(cfg, p, p)
        Y, _ = rmt.normalize(inst.Y, 2)
        spec = rmt.top_k_svd(Y, 2)
        vals.append(abs(spec.F[:, 0] @ inst.U[:, 1] / cfg.n))
        vals.append(abs(spec.F[:, 1] @ inst.U[:, 0] / cfg.n))
    assert np.mean(vals) < 0.05
