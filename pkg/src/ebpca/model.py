"""Rank-k signal-plus-noise model: prior specifications, sampling, accuracy metrics.

The observation model is

    Y = (1/n) * U S V^T + W,   W_ij ~ N(0, 1/n),

with U (n x k) and V (d x k) having i.i.d. rows from priors normalized to
per-coordinate mean 0, variance 1, and zero cross-coordinate covariance.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .exceptions import DimensionError, RankError, ValidationError

_SQRT3 = np.sqrt(3.0)

#: kinds of built-in priors
PRIOR_KINDS = (
    "gaussian",
    "uniform",
    "two_point",
    "point_normal",
    "circle_uniform",
    "three_point",
    "custom_discrete",
)


def _three_point_default_atoms() -> np.ndarray:
    # three atoms on the radius-sqrt(2) circle at angles 90, 210, 330 degrees;
    # equal weights give mean 0 and identity covariance
    angles = np.deg2rad([90.0, 210.0, 330.0])
    return np.sqrt(2.0) * np.column_stack([np.cos(angles), np.sin(angles)])


@dataclass(frozen=True)
class PriorSpec:
    """Specification of a prior on R^k for PC entries.

    Parameters
    ----------
    kind : str
        One of ``PRIOR_KINDS``.
    dim : int
        Dimension k >= 1.
    epsilon : float
        Spike probability for ``point_normal`` (P(nonzero)).
    spike_var : float
        Variance of the nonzero normal component for ``point_normal``.
    atoms, weights : arrays
        Support and simplex weights for ``custom_discrete`` (and optional
        override for ``three_point``).
    """

    kind: str
    dim: int = 1
    epsilon: float = 0.1
    spike_var: float = 10.0
    atoms: Optional[np.ndarray] = None
    weights: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.kind not in PRIOR_KINDS:
            raise ValidationError(f"unknown prior kind: {self.kind!r}")
        if self.dim < 1:
            raise ValidationError("prior dim must be >= 1")
        if self.kind in ("circle_uniform", "three_point") and self.dim != 2:
            raise ValidationError(f"{self.kind} prior requires dim=2")
        if self.kind == "point_normal":
            if not (0.0 <= self.epsilon <= 1.0):
                raise ValidationError("point_normal epsilon must be in [0, 1]")
            if abs(self.epsilon * self.spike_var - 1.0) > 1e-6:
                raise ValidationError(
                    "point_normal requires epsilon * spike_var = 1 "
                    "(unit per-coordinate variance)"
                )
        if self.kind == "three_point" and self.atoms is None:
            object.__setattr__(self, "atoms", _three_point_default_atoms())
            object.__setattr__(self, "weights", np.full(3, 1.0 / 3.0))
        if self.kind in ("custom_discrete", "three_point"):
            atoms = np.atleast_2d(np.asarray(self.atoms, dtype=float))
            if atoms.shape[1] != self.dim:
                raise ValidationError("atom dimension does not match dim")
            if self.weights is None:
                w = np.full(atoms.shape[0], 1.0 / atoms.shape[0])
            else:
                w = np.asarray(self.weights, dtype=float)
            if w.shape != (atoms.shape[0],) or np.any(w < 0):
                raise ValidationError("weights must be a nonnegative vector, one per atom")
            if abs(w.sum() - 1.0) > 1e-12:
                raise ValidationError("weights must sum to 1 within 1e-12")
            if not np.all(np.isfinite(atoms)):
                raise ValidationError("atoms must be finite")
            object.__setattr__(self, "atoms", atoms)
            object.__setattr__(self, "weights", w)

    # ------------------------------------------------------------------
    def sample(self, count: int, rng: np.random.Generator) -> np.ndarray:
        """Draw ``count`` i.i.d. rows from the prior."""
        return sample_prior(self, count, rng)

    def discretize(self, max_atoms: int = 400):
        """Return a DiscretePrior approximation (exact for atomic kinds).

        Continuous univariate marginals use Gauss quadrature nodes/weights;
        product-form priors take the tensor product of marginal grids.
        """
        from .npmle import DiscretePrior

        k = self.dim
        if self.kind in ("custom_discrete", "three_point"):
            return DiscretePrior(self.atoms.copy(), self.weights.copy())
        if self.kind == "two_point":
            atoms1 = np.array([-1.0, 1.0])
            w1 = np.array([0.5, 0.5])
            return _product_prior(atoms1, w1, k)
        if self.kind == "gaussian":
            # Gauss-Hermite nodes: moments exact up to degree 2m - 1
            m = max_atoms if k == 1 else max(2, int(round(max_atoms ** (1.0 / k))))
            m = min(m, 300)
            atoms1, w1 = np.polynomial.hermite_e.hermegauss(m)
            w1 = w1 / w1.sum()
            return _product_prior(atoms1, w1, k)
        if self.kind == "uniform":
            # Gauss-Legendre nodes scaled to [-sqrt(3), sqrt(3)]
            m = max_atoms if k == 1 else max(2, int(round(max_atoms ** (1.0 / k))))
            m = min(m, 300)
            atoms1, w1 = np.polynomial.legendre.leggauss(m)
            atoms1 = atoms1 * _SQRT3
            w1 = w1 / w1.sum()
            return _product_prior(atoms1, w1, k)
        if self.kind == "point_normal":
            if k != 1:
                raise ValidationError("point_normal discretization supports dim=1 only")
            m = min(max_atoms - 1, 300)
            spread, wh = np.polynomial.hermite_e.hermegauss(m)
            spread = spread * np.sqrt(self.spike_var)
            atoms = np.concatenate([[0.0], spread])[:, None]
            weights = np.concatenate([[1.0 - self.epsilon], self.epsilon * wh / wh.sum()])
            return DiscretePrior(atoms, weights)
        if self.kind == "circle_uniform":
            m = max_atoms
            ang = 2.0 * np.pi * (np.arange(m) + 0.5) / m
            atoms = np.sqrt(2.0) * np.column_stack([np.cos(ang), np.sin(ang)])
            return DiscretePrior(atoms, np.full(m, 1.0 / m))
        raise ValidationError(f"cannot discretize prior kind {self.kind!r}")


def _product_prior(atoms1: np.ndarray, w1: np.ndarray, k: int):
    """Tensor product of a univariate discrete prior across k coordinates."""
    from .npmle import DiscretePrior

    if k == 1:
        return DiscretePrior(atoms1[:, None], w1.copy())
    grids = np.meshgrid(*([atoms1] * k), indexing="ij")
    atoms = np.column_stack([g.ravel() for g in grids])
    w = np.ones(atoms.shape[0])
    wg = np.meshgrid(*([w1] * k), indexing="ij")
    for g in wg:
        w *= g.ravel()
    return DiscretePrior(atoms, w / w.sum())


def sample_prior(spec: PriorSpec, count: int, rng: np.random.Generator) -> np.ndarray:
    """Sample count x k matrix of i.i.d. rows from the prior."""
    if count < 1:
        raise ValidationError("count must be >= 1")
    k = spec.dim
    if spec.kind == "gaussian":
        return rng.standard_normal((count, k))
    if spec.kind == "uniform":
        return rng.uniform(-_SQRT3, _SQRT3, size=(count, k))
    if spec.kind == "two_point":
        return rng.integers(0, 2, size=(count, k)) * 2.0 - 1.0
    if spec.kind == "point_normal":
        mask = rng.random((count, k)) < spec.epsilon
        vals = rng.normal(scale=np.sqrt(spec.spike_var), size=(count, k))
        return np.where(mask, vals, 0.0)
    if spec.kind == "circle_uniform":
        ang = rng.uniform(0.0, 2.0 * np.pi, size=count)
        return np.sqrt(2.0) * np.column_stack([np.cos(ang), np.sin(ang)])
    if spec.kind in ("three_point", "custom_discrete"):
        idx = rng.choice(spec.atoms.shape[0], size=count, p=spec.weights)
        return spec.atoms[idx]
    raise ValidationError(f"unknown prior kind: {spec.kind!r}")


# ----------------------------------------------------------------------
@dataclass(frozen=True)
class SpikedConfig:
    """Configuration of a rank-k spiked model instance."""

    n: int
    d: int
    k: int
    signals: tuple
    seed: int = 0

    def __post_init__(self):
        s = tuple(float(x) for x in np.atleast_1d(np.asarray(self.signals, dtype=float)))
        object.__setattr__(self, "signals", s)
        if self.k < 1 or self.k >= min(self.n, self.d):
            raise DimensionError("need 1 <= k < min(n, d)")
        if len(s) != self.k:
            raise ValidationError("signals length must equal k")
        if any(x <= 0 for x in s):
            raise ValidationError("signals must be > 0")
        if any(s[i] <= s[i + 1] for i in range(len(s) - 1)):
            raise ValidationError("signals must be strictly decreasing (ties rejected)")

    @property
    def gamma(self) -> float:
        return self.d / self.n

    def sub_critical(self) -> list:
        """Indices of signals at or below the detection threshold gamma^{-1/4}."""
        thr = self.gamma ** (-0.25)
        return [i for i, s in enumerate(self.signals) if s <= thr]


@dataclass
class SpikedInstance:
    """A sampled instance with ground truth."""

    Y: np.ndarray
    U: np.ndarray
    V: np.ndarray
    S: np.ndarray
    W: Optional[np.ndarray] = None
    config: Optional[SpikedConfig] = None


def generate_instance(
    config: SpikedConfig,
    prior_u: PriorSpec,
    prior_v: PriorSpec,
    rng: Optional[np.random.Generator] = None,
    retain_noise: bool = False,
) -> SpikedInstance:
    """Sample Y = (1/n) U S V^T + W with i.i.d. prior rows and Gaussian noise."""
    if prior_u.dim != config.k or prior_v.dim != config.k:
        raise DimensionError("prior dims must equal k")
    if rng is None:
        ss = np.random.SeedSequence(config.seed)
        streams = [np.random.default_rng(s) for s in ss.spawn(3)]
    else:
        streams = [rng, rng, rng]
    n, d, k = config.n, config.d, config.k
    U = sample_prior(prior_u, n, streams[0])
    V = sample_prior(prior_v, d, streams[1])
    W = streams[2].standard_normal((n, d)) / np.sqrt(n)
    S = np.diag(np.asarray(config.signals, dtype=float))
    Y = (U * np.asarray(config.signals)) @ V.T / n + W
    return SpikedInstance(Y=Y, U=U, V=V, S=S, W=W if retain_noise else None, config=config)


# ----------------------------------------------------------------------
def alignment(a: np.ndarray, b: np.ndarray) -> float:
    """Normalized inner product <a, b> / (||a|| ||b||)."""
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise ValidationError("alignment undefined for zero vector")
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


def subspace_distance(est: np.ndarray, true: np.ndarray) -> float:
    """Projector distance ||P_true_perp P_est||_F / sqrt(k), in [0, 1].

    Invariant to right-multiplication of either argument by invertible k x k
    matrices; symmetric in its arguments for equal column counts.
    """
    est = np.atleast_2d(np.asarray(est, dtype=float))
    true = np.atleast_2d(np.asarray(true, dtype=float))
    if est.ndim != 2 or true.ndim != 2 or est.shape[1] != true.shape[1]:
        raise DimensionError("inputs must be m x k with matching k")
    k = est.shape[1]
    qe, re_ = np.linalg.qr(est)
    qt, rt = np.linalg.qr(true)
    tol = 1e-10
    if np.min(np.abs(np.diag(re_))) < tol * max(est.shape) or np.min(
        np.abs(np.diag(rt))
    ) < tol * max(true.shape):
        raise RankError("rank-deficient input to subspace_distance")
    c = np.linalg.svd(qt.T @ qe, compute_uv=False)
    val = np.sqrt(max(k - float(np.sum(c**2)), 0.0) / k)
    return float(min(val, 1.0))
