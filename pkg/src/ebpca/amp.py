"""AMP engine: iterative empirical Bayes refinement of sample PCs, plus the
oracle Bayes AMP and the naive mean-field VB (CAVI) baselines.

One refinement round t denoises the right side G^t into V^t, forms
F^t = Y V^t - U^{t-1} gamma B_t^T with the Onsager correction B_t (average
denoiser Jacobian), denoises F^t into U^t, and forms
G^{t+1} = Y^T U^t - V^t Bbar_t^T.  State parameters are estimated
empirically: Sigmabar_t = V^t'V^t/n, Mbar_t = Sigmabar_t S_hat, etc.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Union

import numpy as np

from .denoise import denoise_matrix, posterior_second_moment
from .exceptions import NothingToDenoiseError, SubCriticalError, ValidationError
from .model import PriorSpec, alignment, subspace_distance
from .npmle import CompoundParams, DiscretePrior, build_support, fit_weights
from . import rmt
from . import state_evolution as se

DEGENERATE_TRACE = 1e-10


@dataclass
class AMPState:
    """All per-iteration matrices of the refinement loop."""

    t: int
    G_t: np.ndarray
    U_prev: np.ndarray
    M_t: np.ndarray
    Sigma_t: np.ndarray
    S_hat: np.ndarray
    gamma: float
    F_t: Optional[np.ndarray] = None
    V_t: Optional[np.ndarray] = None
    U_t: Optional[np.ndarray] = None
    Mbar_t: Optional[np.ndarray] = None
    Sigmabar_t: Optional[np.ndarray] = None
    B_t: Optional[np.ndarray] = None
    Bbar_t: Optional[np.ndarray] = None
    priors_t: tuple = (None, None)
    history: list = field(default_factory=list)
    warnings: list = field(default_factory=list)
    kept: Optional[np.ndarray] = None  # indices of retained components
    # warm-start caches for the NPMLE weights
    _w_v: Optional[np.ndarray] = None
    _w_u: Optional[np.ndarray] = None


@dataclass
class EBPCAResult:
    """Final estimates and per-iteration diagnostics."""

    U_final: np.ndarray
    V_final: np.ndarray
    S_hat: np.ndarray
    tau_hat: float
    history: list
    warnings: list
    k: int
    gamma: float
    iterates: Optional[list] = None  # optional list of dicts with F_t, G_t, U_t, V_t
    state: Optional[AMPState] = None


def _floor_psd(A: np.ndarray) -> np.ndarray:
    A = 0.5 * (A + A.T)
    evals, evecs = np.linalg.eigh(A)
    floor = 1e-8 * max(float(np.trace(A)), 0.0) / A.shape[0]
    floor = max(floor, 1e-12)
    if np.min(evals) < floor:
        evals = np.maximum(evals, floor)
        A = (evecs * evals) @ evecs.T
    return A


def initialize(Y: np.ndarray, k: int) -> AMPState:
    """Spectral initialization: scaled PCs, signal estimates, PCA-limit state.

    Components whose singular value sits inside the noise bulk are dropped
    with a warning; zero super-critical components raises.
    """
    spec = rmt.top_k_svd(Y, k)
    gamma = spec.gamma
    warn = []
    kept, s_hat = [], []
    thr = gamma ** (-0.25)
    for i in range(k):
        try:
            s_i = rmt.estimate_signal(spec.lam[i], gamma)
        except SubCriticalError:
            warn.append(f"component {i + 1} sub-critical (lambda={spec.lam[i]:.4f}); dropped")
            continue
        if s_i <= thr * (1.0 + 1e-9):
            warn.append(f"component {i + 1} at detection threshold; dropped")
            continue
        kept.append(i)
        s_hat.append(s_i)
    if not kept:
        raise NothingToDenoiseError("no super-critical components detected")
    kept = np.asarray(kept)
    preds = [rmt.predict_observables(s, gamma) for s in s_hat]
    Sigma0 = np.diag([p.sigma_star_sq for p in preds])
    M0 = np.diag([p.mu_star for p in preds])
    G0 = spec.G[:, kept].copy()
    U_prev = spec.F[:, kept] @ np.sqrt(Sigma0)
    state = AMPState(
        t=0,
        G_t=G0,
        U_prev=U_prev,
        M_t=M0,
        Sigma_t=Sigma0,
        S_hat=np.diag(np.asarray(s_hat)),
        gamma=gamma,
        kept=kept,
    )
    state.warnings.extend(warn)
    return state


def _side_update(
    X: np.ndarray,
    M: np.ndarray,
    Sigma: np.ndarray,
    fixed_prior: Optional[DiscretePrior],
    marginal: bool,
    support_cap: int,
    npmle_tol: float,
    npmle_max_iter: int,
    rng: np.random.Generator,
    w_cache: Optional[np.ndarray],
):
    """Estimate (or take) the prior and denoise one side.

    Returns (Theta_hat, avg_jacobian, prior, new_weight_cache, reports).
    """
    k = X.shape[1]
    reports = []
    if fixed_prior is not None:
        params = CompoundParams(M, Sigma)
        Theta, B = denoise_matrix(X, params, fixed_prior)
        return Theta, B, fixed_prior, None, reports

    if not marginal or k == 1:
        params = CompoundParams(M, Sigma)
        atoms = build_support(X, params, cap=support_cap, rng=rng)
        w0 = w_cache if w_cache is not None and w_cache.shape == (atoms.shape[0],) else None
        prior, rep = fit_weights(
            X, params, atoms, tol=npmle_tol, max_iter=npmle_max_iter, w0=w0
        )
        reports.append(rep)
        Theta, B = denoise_matrix(X, params, prior)
        return Theta, B, prior, _full_weights(prior, atoms), reports

    # marginal mode: independent univariate fits per coordinate
    Theta = np.empty_like(X)
    B = np.zeros((k, k))
    priors = []
    for c in range(k):
        params_c = CompoundParams(M[c : c + 1, c : c + 1], Sigma[c : c + 1, c : c + 1])
        xc = X[:, c : c + 1]
        atoms = build_support(xc, params_c, cap=support_cap, rng=rng)
        prior_c, rep = fit_weights(
            xc, params_c, atoms, tol=npmle_tol, max_iter=npmle_max_iter
        )
        reports.append(rep)
        th, jc = denoise_matrix(xc, params_c, prior_c)
        Theta[:, c] = th[:, 0]
        B[c, c] = jc[0, 0]
        priors.append(prior_c)
    return Theta, B, priors, None, reports


def _full_weights(prior: DiscretePrior, atoms: np.ndarray) -> Optional[np.ndarray]:
    """Re-embed pruned weights into the full atom list for warm starting."""
    if prior.size == atoms.shape[0]:
        return prior.weights.copy()
    return None


def ebpca_step(
    state: AMPState,
    Y: np.ndarray,
    oracle_priors: Optional[tuple] = None,
    oracle_params: Optional[tuple] = None,
    marginal: bool = False,
    support_cap: int = 2000,
    npmle_tol: float = 1e-7,
    npmle_max_iter: int = 500,
    rng: Optional[np.random.Generator] = None,
) -> AMPState:
    """Execute one full refinement round t (denoise V, then U) in place."""
    if rng is None:
        rng = np.random.default_rng(0)
    n = Y.shape[0]
    gamma = state.gamma
    S_hat = state.S_hat
    fixed_v = oracle_priors[1] if oracle_priors is not None else None
    fixed_u = oracle_priors[0] if oracle_priors is not None else None

    M_t, Sigma_t = state.M_t, state.Sigma_t
    if oracle_params is not None:
        M_t, Sigma_t = oracle_params[0]

    V_t, B_t, prior_v, state._w_v, reps_v = _side_update(
        state.G_t, M_t, Sigma_t, fixed_v, marginal,
        support_cap, npmle_tol, npmle_max_iter, rng, state._w_v,
    )
    state.V_t = V_t
    state.B_t = B_t
    F_t = Y @ V_t - gamma * state.U_prev @ B_t.T
    state.F_t = F_t

    Sigmabar = _floor_psd(V_t.T @ V_t / n)
    if np.trace(V_t.T @ V_t / n) < DEGENERATE_TRACE:
        state.warnings.append(f"iteration {state.t}: denoiser collapsed to zero; stopping")
        state.priors_t = (fixed_u, prior_v)
        return state
    Mbar = Sigmabar @ S_hat
    if oracle_params is not None:
        Mbar, Sigmabar = oracle_params[1]
    state.Sigmabar_t, state.Mbar_t = Sigmabar, Mbar

    U_t, Bbar_t, prior_u, state._w_u, reps_u = _side_update(
        F_t, Mbar, Sigmabar, fixed_u, marginal,
        support_cap, npmle_tol, npmle_max_iter, rng, state._w_u,
    )
    state.U_t = U_t
    state.Bbar_t = Bbar_t
    G_next = Y.T @ U_t - V_t @ Bbar_t.T

    Sigma_next = _floor_psd(U_t.T @ U_t / n)
    M_next = Sigma_next @ S_hat
    state.priors_t = (prior_u, prior_v)
    state.history.append(
        {
            "t": state.t,
            "M_t": M_t.copy(),
            "Sigma_t": Sigma_t.copy(),
            "Mbar_t": Mbar.copy(),
            "Sigmabar_t": Sigmabar.copy(),
            "B_t": B_t.copy(),
            "Bbar_t": Bbar_t.copy(),
            "npmle_converged": all(r.converged for r in reps_v + reps_u),
        }
    )
    for r in reps_v + reps_u:
        if not r.converged:
            state.warnings.append(
                f"iteration {state.t}: NPMLE stopped at max_iter (certificate {r.certificate:.2e})"
            )
    # advance
    state.G_t = G_next
    state.U_prev = U_t
    state.M_t = M_next
    state.Sigma_t = Sigma_next
    state.t += 1
    return state


def _record_accuracy(entry: dict, U_t, V_t, truth):
    if truth is None:
        return
    U_true, V_true = truth[0], truth[1]
    k = U_t.shape[1]
    entry["align_u"] = [abs(alignment(U_t[:, i], U_true[:, i])) for i in range(k)]
    entry["align_v"] = [abs(alignment(V_t[:, i], V_true[:, i])) for i in range(k)]
    entry["dist_u"] = subspace_distance(U_t, U_true)
    entry["dist_v"] = subspace_distance(V_t, V_true)


def run_ebpca(
    Y_obs: np.ndarray,
    k: int,
    T: int = 10,
    truth: Optional[tuple] = None,
    marginal: bool = False,
    support_cap: int = 2000,
    npmle_tol: float = 1e-7,
    npmle_max_iter: int = 500,
    normalize_input: bool = True,
    support_seed: int = 0,
    record_iterates: bool = False,
) -> EBPCAResult:
    """Full pipeline: normalize, initialize from the spectrum, T+1 rounds.

    ``truth=(U, V)`` adds per-iteration alignments and subspace distances to
    the history.  ``marginal=True`` fits independent univariate priors per
    coordinate instead of the joint k-dimensional prior.
    """
    if T < 0:
        raise ValidationError("T must be >= 0")
    if normalize_input:
        Y, tau_hat = rmt.normalize(Y_obs, k)
    else:
        Y, tau_hat = np.asarray(Y_obs, dtype=float), 1.0
    state = initialize(Y, k)
    rng = np.random.default_rng(support_seed)
    iterates = [] if record_iterates else None
    for _ in range(T + 1):
        prev_t = state.t
        ebpca_step(
            state, Y, marginal=marginal, support_cap=support_cap,
            npmle_tol=npmle_tol, npmle_max_iter=npmle_max_iter, rng=rng,
        )
        if state.t == prev_t:  # degenerate collapse
            break
        entry = state.history[-1]
        _record_accuracy(entry, state.U_t, state.V_t, truth)
        if record_iterates:
            iterates.append(
                {"t": entry["t"], "F_t": state.F_t.copy(), "G_t": None,
                 "U_t": state.U_t.copy(), "V_t": state.V_t.copy()}
            )
    if state.U_t is None or state.V_t is None:
        raise NothingToDenoiseError("refinement collapsed before producing estimates")
    return EBPCAResult(
        U_final=state.U_t,
        V_final=state.V_t,
        S_hat=np.diag(state.S_hat).copy(),
        tau_hat=tau_hat,
        history=state.history,
        warnings=state.warnings,
        k=state.S_hat.shape[0],
        gamma=state.gamma,
        iterates=iterates,
        state=state,
    )


def run_oracle_bayes_amp(
    Y_obs: np.ndarray,
    k: int,
    T: int,
    prior_u: Union[PriorSpec, DiscretePrior],
    prior_v: Union[PriorSpec, DiscretePrior],
    s_true,
    truth: Optional[tuple] = None,
    normalize_input: bool = True,
    max_atoms: int = 400,
    record_iterates: bool = False,
    se_params: bool = False,
) -> EBPCAResult:
    """Bayes AMP with the true priors and the true signal strengths.

    Denoisers use the true priors; initialization reads the true-signal PCA
    limits.  By default the per-iteration (M, Sigma) pairs are estimated
    empirically from the iterates, which is numerically robust at finite n.
    With ``se_params=True`` they are instead read from the deterministic
    state-evolution recursion; for strongly nonlinear denoisers (e.g. sparse
    priors) small finite-n deviations of the iterates from the deterministic
    parameters can then compound across iterations.
    """
    if normalize_input:
        Y, tau_hat = rmt.normalize(Y_obs, k)
    else:
        Y, tau_hat = np.asarray(Y_obs, dtype=float), 1.0
    s_arr = np.atleast_1d(np.asarray(s_true, dtype=float))
    gamma = Y.shape[1] / Y.shape[0]
    dp_u = prior_u if isinstance(prior_u, DiscretePrior) else prior_u.discretize(max_atoms)
    dp_v = prior_v if isinstance(prior_v, DiscretePrior) else prior_v.discretize(max_atoms)
    traj = se.se_recursion(dp_u, dp_v, s_arr, gamma, T, max_atoms=max_atoms)

    state = initialize(Y, k)
    if state.S_hat.shape[0] != len(s_arr):
        raise ValidationError("oracle run requires all k components super-critical")
    # oracle state parameters start from the true-signal PCA limits; rescale
    # U^{-1} = F * Sigma_{*,0}^{1/2} accordingly
    rescale = np.sqrt(np.diag(traj.Sigma[0]) / np.diag(state.Sigma_t))
    state.U_prev = state.U_prev * rescale[None, :]
    state.M_t = traj.M[0]
    state.Sigma_t = traj.Sigma[0]
    state.S_hat = np.diag(s_arr)
    iterates = [] if record_iterates else None
    for t in range(T + 1):
        oracle_params = (
            ((traj.M[t], traj.Sigma[t]), (traj.Mbar[t], traj.Sigmabar[t]))
            if se_params
            else None
        )
        prev_t = state.t
        ebpca_step(state, Y, oracle_priors=(dp_u, dp_v), oracle_params=oracle_params)
        if state.t == prev_t:
            break
        entry = state.history[-1]
        _record_accuracy(entry, state.U_t, state.V_t, truth)
        if record_iterates:
            iterates.append(
                {"t": entry["t"], "F_t": state.F_t.copy(),
                 "U_t": state.U_t.copy(), "V_t": state.V_t.copy()}
            )
    return EBPCAResult(
        U_final=state.U_t,
        V_final=state.V_t,
        S_hat=s_arr.copy(),
        tau_hat=tau_hat,
        history=state.history,
        warnings=state.warnings,
        k=len(s_arr),
        gamma=gamma,
        iterates=iterates,
        state=state,
    )


def run_mean_field_vb(
    Y_obs: np.ndarray,
    T: int = 10,
    truth: Optional[tuple] = None,
    support_cap: int = 2000,
    npmle_tol: float = 1e-7,
    npmle_max_iter: int = 500,
    normalize_input: bool = True,
    support_seed: int = 0,
) -> EBPCAResult:
    """Naive mean-field VB (CAVI) baseline, rank 1, no Onsager correction.

    Iteration: g^t = Y^T u^{t-1}; NPMLE and posterior mean with (mu_t,
    sigma_t^2); sigmabar_t^2 = gamma * <omega>, mubar_t = s_hat * sigmabar_t^2;
    mirrored on the f side.
    """
    if normalize_input:
        Y, tau_hat = rmt.normalize(Y_obs, 1)
    else:
        Y, tau_hat = np.asarray(Y_obs, dtype=float), 1.0
    n, d = Y.shape
    gamma = d / n
    spec = rmt.top_k_svd(Y, 1)
    s_hat = rmt.estimate_signal(spec.lam[0], gamma)
    pred = rmt.predict_observables(s_hat, gamma)
    mu_t, sig2_t = pred.mu_star, pred.sigma_star_sq
    g = spec.G[:, :1].copy()
    rng = np.random.default_rng(support_seed)
    history, warns = [], []
    u_t = v_t = None
    for t in range(T + 1):
        params = CompoundParams([[mu_t]], [[sig2_t]])
        atoms = build_support(g, params, cap=support_cap, rng=rng)
        prior_v, rep_v = fit_weights(g, params, atoms, tol=npmle_tol, max_iter=npmle_max_iter)
        v_t, _ = denoise_matrix(g, params, prior_v)
        omega = posterior_second_moment(g, params, prior_v)[:, 0, 0]
        sig2_bar = gamma * float(np.mean(omega))
        if sig2_bar < DEGENERATE_TRACE:
            warns.append(f"iteration {t}: prior collapsed to zero; stopping")
            break
        mu_bar = s_hat * sig2_bar

        f = Y @ v_t
        params_bar = CompoundParams([[mu_bar]], [[sig2_bar]])
        atoms_bar = build_support(f, params_bar, cap=support_cap, rng=rng)
        prior_u, rep_u = fit_weights(f, params_bar, atoms_bar, tol=npmle_tol, max_iter=npmle_max_iter)
        u_t, _ = denoise_matrix(f, params_bar, prior_u)
        omega_u = posterior_second_moment(f, params_bar, prior_u)[:, 0, 0]
        sig2_next = float(np.mean(omega_u))
        if sig2_next < DEGENERATE_TRACE:
            warns.append(f"iteration {t}: prior collapsed to zero; stopping")
            break
        entry = {
            "t": t,
            "M_t": np.array([[mu_t]]),
            "Sigma_t": np.array([[sig2_t]]),
            "Mbar_t": np.array([[mu_bar]]),
            "Sigmabar_t": np.array([[sig2_bar]]),
            "npmle_converged": rep_v.converged and rep_u.converged,
        }
        _record_accuracy(entry, u_t, v_t, truth)
        history.append(entry)
        sig2_t = sig2_next
        mu_t = s_hat * sig2_next
        g = Y.T @ u_t
    if u_t is None or v_t is None:
        raise NothingToDenoiseError("mean-field iteration collapsed immediately")
    return EBPCAResult(
        U_final=u_t,
        V_final=v_t,
        S_hat=np.array([s_hat]),
        tau_hat=tau_hat,
        history=history,
        warnings=warns,
        k=1,
        gamma=gamma,
    )
