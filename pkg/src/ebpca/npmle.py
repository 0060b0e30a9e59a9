"""Kiefer-Wolfowitz nonparametric MLE over a discrete exemplar support.

Observations x_i in R^k follow the compound decision channel
X | Theta ~ N(M Theta, Sigma) with a common prior on Theta.  The prior is
estimated by maximizing the marginal Gaussian-mixture log-likelihood over
simplex weights on a fixed atom set (channel-inverted observations).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.linalg import solve_triangular

from .exceptions import ChannelError, DimensionError, ValidationError

SIGMA_FLOOR_REL = 1e-8  # eigenvalue floor, relative to trace(Sigma)/k
COND_LIMIT = 1e12


@dataclass
class DiscretePrior:
    """Atoms (m x k) and simplex weights (length m) of a discrete prior."""

    atoms: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        self.atoms = np.atleast_2d(np.asarray(self.atoms, dtype=float))
        self.weights = np.asarray(self.weights, dtype=float).ravel()
        if self.atoms.shape[0] != self.weights.shape[0]:
            raise DimensionError("one weight per atom required")
        if self.atoms.shape[0] < 1:
            raise ValidationError("need at least one atom")
        if not np.all(np.isfinite(self.atoms)):
            raise ValidationError("atoms must be finite")
        if np.any(self.weights < 0) or abs(self.weights.sum() - 1.0) > 1e-10:
            raise ValidationError("weights must be a simplex vector (sum 1, >= 0)")

    @property
    def dim(self) -> int:
        return self.atoms.shape[1]

    @property
    def size(self) -> int:
        return self.atoms.shape[0]

    def second_moment(self) -> np.ndarray:
        """E[Theta Theta^T] under the prior."""
        return (self.atoms * self.weights[:, None]).T @ self.atoms

    def scaled(self, A: np.ndarray) -> "DiscretePrior":
        """Push-forward through theta -> A theta."""
        A = np.atleast_2d(np.asarray(A, dtype=float))
        return DiscretePrior(self.atoms @ A.T, self.weights.copy())


@dataclass
class CompoundParams:
    """Channel parameters (M, Sigma) with Sigma floored for stable inversion."""

    M: np.ndarray
    Sigma: np.ndarray
    cond_M: float = field(init=False)

    def __post_init__(self):
        self.M = np.atleast_2d(np.asarray(self.M, dtype=float))
        Sigma = np.atleast_2d(np.asarray(self.Sigma, dtype=float))
        if self.M.shape[0] != self.M.shape[1] or Sigma.shape != self.M.shape:
            raise DimensionError("M and Sigma must be square k x k of equal size")
        Sigma = 0.5 * (Sigma + Sigma.T)
        k = Sigma.shape[0]
        evals, evecs = np.linalg.eigh(Sigma)
        floor = SIGMA_FLOOR_REL * max(np.trace(Sigma), 0.0) / k
        floor = max(floor, 1e-300)
        if np.any(evals < floor):
            evals = np.maximum(evals, floor)
            Sigma = (evecs * evals) @ evecs.T
        self.Sigma = Sigma
        self.cond_M = float(np.linalg.cond(self.M))
        if not np.isfinite(self.cond_M) or self.cond_M > COND_LIMIT:
            raise ChannelError(f"channel matrix M is numerically singular (cond={self.cond_M:.3g})")

    @property
    def dim(self) -> int:
        return self.M.shape[0]


@dataclass
class NPMLEReport:
    """Solver diagnostics for one NPMLE fit."""

    loglik: np.ndarray  # per-iteration mean log-likelihood (nondecreasing)
    iterations: int
    converged: bool
    certificate: float  # max_j (mean gradient)_j - 1 at exit
    support_before: int
    support_after: int


def build_support(
    X: np.ndarray,
    params: CompoundParams,
    cap: int = 2000,
    rng: Optional[np.random.Generator] = None,
) -> np.ndarray:
    """Exemplar atoms: channel-inverted rows M^{-1} x_i, subsampled to cap."""
    if cap < 1:
        raise ValidationError("cap must be >= 1")
    X = np.atleast_2d(np.asarray(X, dtype=float))
    atoms = np.linalg.solve(params.M, X.T).T
    n = atoms.shape[0]
    if n > cap:
        if rng is None:
            rng = np.random.default_rng(0)
        idx = np.sort(rng.choice(n, size=cap, replace=False))
        atoms = atoms[idx]
    return atoms


def _log_kernel(X: np.ndarray, params: CompoundParams, atoms: np.ndarray) -> np.ndarray:
    """n x m matrix of log N(x_i; M z_j, Sigma) densities."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    atoms = np.atleast_2d(np.asarray(atoms, dtype=float))
    k = params.dim
    L = np.linalg.cholesky(params.Sigma)
    # whitened coordinates: distances in Sigma^{-1} metric
    Xw = solve_triangular(L, X.T, lower=True).T
    Zw = solve_triangular(L, (atoms @ params.M.T).T, lower=True).T
    sq = (
        np.sum(Xw**2, axis=1)[:, None]
        - 2.0 * Xw @ Zw.T
        + np.sum(Zw**2, axis=1)[None, :]
    )
    logdet = 2.0 * np.sum(np.log(np.diag(L)))
    const = -0.5 * (k * np.log(2.0 * np.pi) + logdet)
    return const - 0.5 * np.maximum(sq, 0.0)


def log_marginal_likelihood(
    X: np.ndarray, params: CompoundParams, prior: DiscretePrior
) -> float:
    """Mean per-row log marginal mixture density, log-sum-exp stabilized."""
    logW = _log_kernel(X, params, prior.atoms)
    shift = logW.max(axis=1)
    with np.errstate(divide="ignore"):
        lw = np.log(prior.weights)
    mix = np.exp(logW + lw[None, :] - shift[:, None]).sum(axis=1)
    return float(np.mean(np.log(mix) + shift))


def fit_weights(
    X: np.ndarray,
    params: CompoundParams,
    atoms: np.ndarray,
    tol: float = 1e-7,
    max_iter: int = 500,
    w0: Optional[np.ndarray] = None,
    prune: float = 1e-12,
    solver: str = "em",
):
    """Maximize the mixture log-likelihood over simplex weights.

    ``solver="em"`` (default): multiplicative fixed-point updates
        w_j <- w_j * mean_i [ phi_ij / sum_l w_l phi_il ],
    initialized uniform (or warm-started from ``w0``).  The update multiplier
    is exactly the first-order optimality gradient, so the convergence
    certificate max_j (mean gradient)_j - 1 <= tol is monitored for free.

    ``solver="exchange"``: vertex-exchange method — EM restricted to a growing
    active support, inserting the atoms with the largest gradient via an
    Armijo-safeguarded convex mix.  Reaches the (sparse) optimum far faster
    when the NPMLE support is much smaller than the atom grid.

    Returns (DiscretePrior, NPMLEReport); non-convergence sets the report flag
    rather than raising.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    atoms = np.atleast_2d(np.asarray(atoms, dtype=float))
    n, m = X.shape[0], atoms.shape[0]
    logW = _log_kernel(X, params, atoms)
    shift = logW.max(axis=1)
    Wt = np.exp(logW - shift[:, None])  # row-rescaled kernel, entries in (0, 1]
    mean_shift = float(np.mean(shift))

    if solver == "em":
        w, loglik, it, cert, converged = _solve_em(Wt, n, m, tol, max_iter, w0, mean_shift)
    elif solver == "exchange":
        w, loglik, it, cert, converged = _solve_exchange(Wt, n, m, tol, max_iter, mean_shift)
    else:
        raise ValidationError(f"unknown NPMLE solver {solver!r}")

    keep = w > prune
    if not np.any(keep):
        keep = w == w.max()
    w_kept = w[keep]
    prior = DiscretePrior(atoms[keep], w_kept / w_kept.sum())
    report = NPMLEReport(
        loglik=np.asarray(loglik),
        iterations=it,
        converged=converged,
        certificate=cert,
        support_before=m,
        support_after=prior.size,
    )
    return prior, report


def _solve_em(Wt, n, m, tol, max_iter, w0, mean_shift):
    if w0 is not None and np.asarray(w0).shape == (m,):
        w = np.asarray(w0, dtype=float).copy()
        w = np.maximum(w, 1e-300)
        w /= w.sum()
    else:
        w = np.full(m, 1.0 / m)
    loglik = []
    cert = np.inf
    it = 0
    converged = False
    for it in range(1, max_iter + 1):
        denom = Wt @ w  # strictly positive by construction
        loglik.append(float(np.mean(np.log(denom))) + mean_shift)
        g = (Wt.T @ (1.0 / denom)) / n  # mean responsibility gradient
        cert = float(g.max() - 1.0)
        if cert <= tol:
            converged = True
            break
        w *= g
        s = w.sum()
        if not np.isfinite(s) or s <= 0:
            raise ValidationError("NPMLE weight update diverged")
        w /= s
    return w, loglik, it, cert, converged


def _solve_exchange(Wt, n, m, tol, max_iter, mean_shift, outer_max=200, stall_max=20):
    from scipy.optimize import minimize

    active = [int(np.argmax(Wt.mean(axis=0)))]
    w_act = np.ones(1)
    loglik = []  # incumbent (best-so-far) values: nondecreasing by construction
    cert = np.inf
    converged = False
    total_inner = 0
    best_cert = np.inf
    best_ll = -np.inf
    best = (list(active), w_act.copy(), cert)
    stall = 0
    for _ in range(outer_max):
        Wa = Wt[:, active]

        # active-set subproblem in softmax coordinates: smooth, unconstrained,
        # with gradient w * (mean responsibility gradient - 1)
        def negf(a):
            a = a - a.max()
            w = np.exp(a)
            w /= w.sum()
            denom = Wa @ w
            g = (Wa.T @ (1.0 / denom)) / n
            return -np.mean(np.log(denom)), -(w * (g - 1.0))

        # floor the start point so collapsed coordinates stay reachable
        a0 = np.log(np.maximum(w_act, 1e-16))
        res = minimize(
            negf,
            a0,
            jac=True,
            method="L-BFGS-B",
            options=dict(maxiter=max_iter, ftol=1e-16, gtol=1e-13),
        )
        total_inner += int(res.nit)
        a = res.x - res.x.max()
        w_act = np.exp(a)
        w_act /= w_act.sum()
        denom = Wa @ w_act
        ll = float(np.mean(np.log(denom))) + mean_shift
        grad = (Wt.T @ (1.0 / denom)) / n
        cert = float(grad.max() - 1.0)
        if ll >= best_ll:
            best_ll = ll
            best = (list(active), w_act.copy(), cert)
        loglik.append(best_ll)
        if cert <= tol:
            best = (list(active), w_act.copy(), cert)
            converged = True
            break
        if cert < best_cert - 1e-15:
            best_cert = cert
            stall = 0
        else:
            stall += 1
            if stall > stall_max:
                break
        # mix in the strongest-gradient atom; the ascent direction guarantees
        # the next restricted solve recovers at least the incumbent value
        j = int(np.argmax(grad))
        eps = 1e-2
        if j in active:
            idx = active.index(j)
            w_act *= 1.0 - eps
            w_act[idx] += eps
        else:
            active.append(j)
            w_act = np.append((1.0 - eps) * w_act, eps)
    active, w_act, cert = best
    w = np.zeros(m)
    w[active] = w_act
    return w, loglik, total_inner, cert, converged
