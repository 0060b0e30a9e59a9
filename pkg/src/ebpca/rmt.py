"""Spectral front end: normalization, scaled truncated SVD, signal estimation,
and closed-form random-matrix predictions for the spiked model.

Conventions: gamma = d/n; the raw singular values of the normalized Y are
written sqrt(gamma) * lambda_i; sample PCs are rescaled so that
||f_i||^2 = n and ||g_i||^2 = d.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.sparse.linalg import svds

from .exceptions import (
    AmbiguousRankError,
    DegenerateNoiseError,
    DimensionError,
    SubCriticalError,
)


@dataclass
class SampleSpectrum:
    """Top-k scaled sample PCs and singular parameters."""

    F: np.ndarray  # n x k, columns with squared norm n
    G: np.ndarray  # d x k, columns with squared norm d
    lam: np.ndarray  # length k, raw singular values / sqrt(gamma)
    gamma: float


@dataclass
class RMTPrediction:
    """Closed-form asymptotics for one super-critical spike."""

    sqrt_gamma_lambda_limit: float
    mu_star: float
    sigma_star_sq: float
    mu_bar_star: float
    sigma_bar_star_sq: float


def normalize(Y_obs: np.ndarray, k: int):
    """Rescale so residual entries (after removing top-k PCs) have variance 1/n.

    Returns (Y, tau_hat) with tau_hat^2 = ||R||_F^2 / (n d), R the residual of
    the best rank-k approximation, and Y = Y_obs / (tau_hat * sqrt(n)).
    """
    Y_obs = np.asarray(Y_obs, dtype=float)
    n, d = Y_obs.shape
    if not 0 < k < min(n, d):
        raise DimensionError("need 0 < k < min(n, d)")
    sv = _topk_triplet(Y_obs, k)[1]
    total = float(np.sum(Y_obs**2))
    resid = max(total - float(np.sum(sv**2)), 0.0)
    tau_sq = resid / (n * d)
    # degenerate when the residual carries a negligible fraction of the energy
    if total == 0.0 or tau_sq <= 1e-12 * total / (n * d):
        raise DegenerateNoiseError("zero residual variance: input is exactly rank-k")
    tau_hat = np.sqrt(tau_sq)
    return Y_obs / (tau_hat * np.sqrt(n)), tau_hat


def _topk_triplet(Y: np.ndarray, k: int):
    """Top-k singular triplet, descending order."""
    n, d = Y.shape
    if k < min(n, d) // 4 and min(n, d) > 200:
        # deterministic start vector so repeated runs are bit-identical
        v0 = np.ones(min(n, d)) / np.sqrt(min(n, d))
        u, s, vt = svds(Y, k=k, v0=v0, maxiter=5000, tol=0)
        order = np.argsort(s)[::-1]
        return u[:, order], s[order], vt[order, :]
    u, s, vt = np.linalg.svd(Y, full_matrices=False)
    return u[:, :k], s[:k], vt[:k, :]


def top_k_svd(Y: np.ndarray, k: int) -> SampleSpectrum:
    """Scaled top-k SVD with deterministic sign convention.

    Each g_i has its largest-magnitude coordinate positive; f_i's sign is then
    fixed by f_i^T Y g_i > 0.
    """
    Y = np.asarray(Y, dtype=float)
    n, d = Y.shape
    if not 0 < k < min(n, d):
        raise DimensionError("need 0 < k < min(n, d)")
    gamma = d / n
    kk = min(k + 1, min(n, d) - 1)
    u, s, vt = _topk_triplet(Y, kk)
    if k < len(s) and s[k - 1] - s[k] < 1e-10 * max(s[0], 1.0):
        raise AmbiguousRankError("tied singular values at the k / k+1 boundary")
    u, s, vt = u[:, :k], s[:k], vt[:k, :]
    F = u * np.sqrt(n)
    G = vt.T * np.sqrt(d)
    for i in range(k):
        j = np.argmax(np.abs(G[:, i]))
        if G[j, i] < 0:
            G[:, i] = -G[:, i]
            F[:, i] = -F[:, i]
    lam = s / np.sqrt(gamma)
    return SampleSpectrum(F=F, G=G, lam=lam, gamma=gamma)


def estimate_signal(lambda_i: float, gamma: float) -> float:
    """Invert the singular-value forward map: consistent estimate of s."""
    a = gamma * lambda_i**2 - (1.0 + gamma)
    disc = a**2 - 4.0 * gamma
    if disc < 0 or a < 0:
        raise SubCriticalError(
            f"singular value lambda={lambda_i:.4g} is inside the noise bulk"
        )
    s_sq = (a + np.sqrt(disc)) / (2.0 * gamma)
    return float(np.sqrt(s_sq))


def singular_value_limit(s: float, gamma: float) -> float:
    """Limit of sqrt(gamma) * lambda_1 for a super-critical spike."""
    _check_supercritical(s, gamma)
    return float(np.sqrt((gamma * s**2 + 1.0) * (s**2 + 1.0) / s**2))


def predict_observables(s: float, gamma: float) -> RMTPrediction:
    """Closed-form limits of PC alignments and effective noise levels."""
    _check_supercritical(s, gamma)
    s2 = s * s
    sigma_star_sq = (1.0 + gamma * s2) / (gamma * s2 * (s2 + 1.0))
    sigma_bar_star_sq = (1.0 + s2) / (s2 * (gamma * s2 + 1.0))
    return RMTPrediction(
        sqrt_gamma_lambda_limit=singular_value_limit(s, gamma),
        mu_star=float(np.sqrt(1.0 - sigma_star_sq)),
        sigma_star_sq=float(sigma_star_sq),
        mu_bar_star=float(np.sqrt(1.0 - sigma_bar_star_sq)),
        sigma_bar_star_sq=float(sigma_bar_star_sq),
    )


def _check_supercritical(s: float, gamma: float):
    if s <= gamma ** (-0.25):
        raise SubCriticalError(
            f"s={s:.4g} at or below detection threshold {gamma ** (-0.25):.4g}"
        )


def bulk_edges(gamma: float):
    """Support edges of the limiting singular-value bulk."""
    if gamma <= 0:
        raise DimensionError("gamma must be > 0")
    rg = np.sqrt(gamma)
    return (abs(1.0 - rg), 1.0 + rg)


def mp_singular_density(x, gamma: float):
    """Density of the square-root Marcenko-Pastur law on [lambda-, lambda+].

    For gamma > 1 the point mass at 0 is excluded and the continuous part is
    renormalized to integrate to 1 over the bulk.
    """
    if gamma <= 0:
        raise DimensionError("gamma must be > 0")
    x = np.asarray(x, dtype=float)
    lo, hi = bulk_edges(gamma)
    a, b = lo**2, hi**2
    out = np.zeros_like(x, dtype=float)
    inside = (x > lo) & (x < hi)
    xs = x[inside]
    dens = np.sqrt(np.maximum((b - xs**2) * (xs**2 - a), 0.0)) / (np.pi * gamma * xs)
    if gamma > 1.0:
        dens *= gamma  # exclude the atom at 0, renormalize the continuous part
    out[inside] = dens
    return out if out.ndim else float(out)
