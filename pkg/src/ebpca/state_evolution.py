"""Deterministic state evolution for the AMP iteration.

State parameters (M_t, Sigma_t) for the right PCs and (Mbar_t, Sigmabar_t)
for the left PCs evolve through Bayes-risk expectations over the compound
channel.  In SNR coordinates Q = S^{-1/2} M^T Sigma^{-1} M S^{-1/2} the
recursion is

    Qbar_t = F_{S^{1/2} pi_v}(Q_t),    Q_{t+1} = F_{S^{1/2} pi_u}(gamma * Qbar_t),

where F_pi(Q) = E[ E[Theta|X] E[Theta|X]^T ] for X | Theta ~ N(Theta, Q^{-1}).
Expectations use Gauss-Hermite tensor quadrature over discretized priors
(k <= 2) or Monte Carlo.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import List, Optional, Union

import numpy as np

from .exceptions import SubCriticalError, ValidationError
from .model import PriorSpec
from .npmle import CompoundParams, DiscretePrior
from .denoise import responsibilities

Q_FLOOR = 1e-10


@dataclass
class SEState:
    """Recorded state-evolution trajectory."""

    S: np.ndarray
    gamma: float
    M: List[np.ndarray] = field(default_factory=list)  # right side, t = 0..T+1
    Sigma: List[np.ndarray] = field(default_factory=list)
    Mbar: List[np.ndarray] = field(default_factory=list)  # left side, t = 0..T
    Sigmabar: List[np.ndarray] = field(default_factory=list)
    Q: List[np.ndarray] = field(default_factory=list)
    Qbar: List[np.ndarray] = field(default_factory=list)
    mmse_v: List[float] = field(default_factory=list)
    mmse_u: List[float] = field(default_factory=list)


def _as_discrete(prior: Union[DiscretePrior, PriorSpec], max_atoms: int) -> DiscretePrior:
    if isinstance(prior, DiscretePrior):
        return prior
    return prior.discretize(max_atoms)


def se_init(s_list, gamma: float):
    """Initial diagonal state parameters (M0, Sigma0) from the PCA asymptotics."""
    from .rmt import predict_observables

    s_arr = np.atleast_1d(np.asarray(s_list, dtype=float))
    preds = [predict_observables(s, gamma) for s in s_arr]
    Sigma0 = np.diag([p.sigma_star_sq for p in preds])
    M0 = np.diag([p.mu_star for p in preds])
    return M0, Sigma0


def q_init(s_list, gamma: float) -> np.ndarray:
    """Initial SNR matrix Q_0 = diag((1/s)(gamma s^4 - 1)/(gamma s^2 + 1))."""
    s = np.atleast_1d(np.asarray(s_list, dtype=float))
    if np.any(s <= gamma ** (-0.25)):
        raise SubCriticalError("all signals must be super-critical")
    return np.diag((gamma * s**4 - 1.0) / (gamma * s**2 + 1.0) / s)


def snr_matrix(M: np.ndarray, Sigma: np.ndarray, S: np.ndarray) -> np.ndarray:
    """Q = S^{-1/2} M^T Sigma^{-1} M S^{-1/2}."""
    S_isqrt = np.diag(1.0 / np.sqrt(np.diag(S)))
    return S_isqrt @ M.T @ np.linalg.solve(Sigma, M) @ S_isqrt


def _floor_psd(Q: np.ndarray, floor: float = Q_FLOOR, warn: bool = True) -> np.ndarray:
    Q = 0.5 * (Q + Q.T)
    evals, evecs = np.linalg.eigh(Q)
    if np.min(evals) < floor:
        if warn and np.min(evals) < 0:
            warnings.warn("SNR matrix floored to PSD", RuntimeWarning)
        evals = np.maximum(evals, floor)
        Q = (evecs * evals) @ evecs.T
    return Q


def q_map(
    prior: Union[DiscretePrior, PriorSpec],
    Q: np.ndarray,
    mc: Optional[dict] = None,
    n_quad: int = 64,
    max_atoms: int = 400,
) -> np.ndarray:
    """F_pi(Q) = E[E[Theta|X] E[Theta|X]^T] for X | Theta ~ N(Theta, Q^{-1})."""
    dp = _as_discrete(prior, max_atoms)
    k = dp.dim
    Q = _floor_psd(np.atleast_2d(np.asarray(Q, dtype=float)))
    evals, evecs = np.linalg.eigh(Q)
    A = (evecs / np.sqrt(evals)) @ evecs.T  # Q^{-1/2}
    Sigma = (evecs / evals) @ evecs.T  # Q^{-1}
    params = CompoundParams(np.eye(k), Sigma)

    if mc is not None:
        rng = np.random.default_rng(mc.get("seed", 0))
        ns = int(mc.get("samples", 10**6))
        if isinstance(prior, PriorSpec):
            theta = prior.sample(ns, rng)
        else:
            theta = dp.atoms[rng.choice(dp.size, size=ns, p=dp.weights)]
        X = theta + rng.standard_normal((ns, k)) @ A.T
        F = np.zeros((k, k))
        block = 200_000
        for start in range(0, ns, block):
            sl = slice(start, min(start + block, ns))
            that = responsibilities(X[sl], params, dp) @ dp.atoms
            F += that.T @ that
        return F / ns

    if k > 2:
        raise ValidationError("quadrature q_map supports k <= 2; pass mc options")
    if k == 2:
        n_quad = min(n_quad, 32)
    nodes, wq = np.polynomial.hermite_e.hermegauss(n_quad)
    wq = wq / np.sqrt(2.0 * np.pi)
    if k == 1:
        xi = nodes[:, None]
        om = wq
    else:
        g1, g2 = np.meshgrid(nodes, nodes, indexing="ij")
        xi = np.column_stack([g1.ravel(), g2.ravel()])
        om = np.outer(wq, wq).ravel()
    shift = xi @ A.T  # quadrature displacements in x-space
    nq = shift.shape[0]
    X_all = (dp.atoms[:, None, :] + shift[None, :, :]).reshape(-1, k)
    wts = (dp.weights[:, None] * om[None, :]).ravel()
    F = np.zeros((k, k))
    block = 200_000 // max(dp.size // 64, 1)
    for start in range(0, X_all.shape[0], block):
        sl = slice(start, min(start + block, X_all.shape[0]))
        that = responsibilities(X_all[sl], params, dp) @ dp.atoms
        F += (that * wts[sl, None]).T @ that
    return F


def gaussian_q_map_1d(s: float, q: float) -> float:
    """Closed-form F map for a unit Gaussian prior scaled by sqrt(s) (k=1)."""
    return s**2 * q / (s * q + 1.0)


def _scaled(prior: Union[DiscretePrior, PriorSpec], S: np.ndarray, max_atoms: int) -> DiscretePrior:
    S_sqrt = np.diag(np.sqrt(np.diag(S)))
    return _as_discrete(prior, max_atoms).scaled(S_sqrt)


def se_recursion(
    prior_u: Union[DiscretePrior, PriorSpec],
    prior_v: Union[DiscretePrior, PriorSpec],
    s_list,
    gamma: float,
    T: int,
    mc: Optional[dict] = None,
    max_atoms: int = 400,
) -> SEState:
    """Run T+1 rounds of the two-sided state evolution from the PCA start."""
    s_arr = np.atleast_1d(np.asarray(s_list, dtype=float))
    S = np.diag(s_arr)
    S_sqrt = np.diag(np.sqrt(s_arr))
    S_isqrt = np.diag(1.0 / np.sqrt(s_arr))
    pu = _scaled(prior_u, S, max_atoms)
    pv = _scaled(prior_v, S, max_atoms)
    eu = pu.second_moment()
    ev = pv.second_moment()

    st = SEState(S=S, gamma=gamma)
    M0, Sigma0 = se_init(s_arr, gamma)
    st.M.append(M0)
    st.Sigma.append(Sigma0)
    Q = q_init(s_arr, gamma)
    st.Q.append(Q)
    for _ in range(T + 1):
        Qbar = q_map(pv, Q, mc=mc)
        st.Qbar.append(Qbar)
        st.mmse_v.append(float(np.trace(S_isqrt @ (ev - Qbar) @ S_isqrt)))
        Sigmabar = gamma * S_isqrt @ Qbar @ S_isqrt
        st.Sigmabar.append(Sigmabar)
        st.Mbar.append(Sigmabar @ S)
        Qn = q_map(pu, gamma * Qbar, mc=mc)
        st.mmse_u.append(float(np.trace(S_isqrt @ (eu - Qn) @ S_isqrt)))
        Sigman = S_isqrt @ Qn @ S_isqrt
        st.Q.append(Qn)
        st.Sigma.append(Sigman)
        st.M.append(Sigman @ S)
        Q = Qn
    return st


@dataclass
class SEFixedPoint:
    Qbar: np.ndarray
    Q: np.ndarray
    mmse_v: List[float]
    mmse_u: List[float]
    iterations: int
    converged: bool
    state: SEState


def se_fixed_point(
    prior_u: Union[DiscretePrior, PriorSpec],
    prior_v: Union[DiscretePrior, PriorSpec],
    s_list,
    gamma: float,
    tol: float = 1e-8,
    max_iter: int = 200,
    mc: Optional[dict] = None,
    max_atoms: int = 400,
) -> SEFixedPoint:
    """Iterate the Q-recursion from the PCA start until ||Q_{t+1} - Q_t|| < tol."""
    s_arr = np.atleast_1d(np.asarray(s_list, dtype=float))
    S = np.diag(s_arr)
    S_isqrt = np.diag(1.0 / np.sqrt(s_arr))
    pu = _scaled(prior_u, S, max_atoms)
    pv = _scaled(prior_v, S, max_atoms)
    eu = pu.second_moment()
    ev = pv.second_moment()

    st = SEState(S=S, gamma=gamma)
    Q = q_init(s_arr, gamma)
    st.Q.append(Q)
    mmse_v_traj, mmse_u_traj = [], []
    converged = False
    it = 0
    Qbar = None
    for it in range(1, max_iter + 1):
        Qbar = q_map(pv, Q, mc=mc)
        st.Qbar.append(Qbar)
        mmse_v_traj.append(float(np.trace(S_isqrt @ (ev - Qbar) @ S_isqrt)))
        Qn = q_map(pu, gamma * Qbar, mc=mc)
        mmse_u_traj.append(float(np.trace(S_isqrt @ (eu - Qn) @ S_isqrt)))
        st.Q.append(Qn)
        if np.linalg.norm(Qn - Q) < tol:
            Q = Qn
            converged = True
            break
        Q = Qn
    return SEFixedPoint(
        Qbar=Qbar,
        Q=Q,
        mmse_v=mmse_v_traj,
        mmse_u=mmse_u_traj,
        iterations=it,
        converged=converged,
        state=st,
    )


def bayes_matrix_risk(
    Qbar: np.ndarray,
    Q: np.ndarray,
    prior_u: Union[DiscretePrior, PriorSpec],
    prior_v: Union[DiscretePrior, PriorSpec],
    s_list,
    max_atoms: int = 400,
) -> float:
    """Predicted limit of (1/nd) || U_hat S_hat V_hat^T - U S V^T ||_F^2.

    Tr E[U U^T S V V^T S] - Tr(Qbar Q) with the expectation over the product
    of the two priors.
    """
    s_arr = np.atleast_1d(np.asarray(s_list, dtype=float))
    S = np.diag(s_arr)
    eu = _as_discrete(prior_u, max_atoms).second_moment()
    ev = _as_discrete(prior_v, max_atoms).second_moment()
    return float(np.trace(eu @ S @ ev @ S) - np.trace(np.atleast_2d(Qbar) @ np.atleast_2d(Q)))
