"""Probabilistic PCA: centralized EM and the consensus node model.

The generative model is ``x = W z + mu + noise`` with ``z ~ N(0, I)``
and isotropic noise of precision ``a``. ``centralized_em`` fits it by
expectation maximization on pooled data and serves as the single-node
oracle for the distributed variant.

In the distributed variant every node keeps its own parameter copy and
augments the expected complete-data objective with multiplier and
penalty terms that pull it toward the midpoints of its neighbors' last
broadcasts. The M-step cycles the three closed-form block updates
(mean, then projection, then precision, each against the freshest other
blocks) until the block values stop moving, i.e. to a stationary point
of the node's augmented Lagrangian; with no neighbors and zero
multipliers this is exactly the centralized M-step.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .engine import ConsensusModel

__all__ = [
    "PpcaParams",
    "LatentMoments",
    "DppcaMultipliers",
    "initial_params",
    "e_step",
    "negative_log_likelihood",
    "consensus_m_step",
    "consensus_multiplier_step",
    "centralized_em",
    "DppcaModel",
    "make_dppca_factory",
]


@dataclass
class PpcaParams:
    """Model parameters: projection ``W`` (D x M), mean ``mu``, precision ``a``."""

    W: np.ndarray
    mu: np.ndarray
    a: float

    def __post_init__(self) -> None:
        self.W = np.asarray(self.W, dtype=float)
        self.mu = np.asarray(self.mu, dtype=float)
        self.a = float(self.a)
        if self.W.ndim != 2 or self.mu.ndim != 1 or self.W.shape[0] != self.mu.shape[0]:
            raise ValueError("W must be D x M and mu length D")
        if self.W.shape[0] < self.W.shape[1] or self.W.shape[1] < 1:
            raise ValueError("need ambient dim >= latent dim >= 1")
        if not self.a > 0:
            raise ValueError("noise precision a must be > 0")
        if not (np.all(np.isfinite(self.W)) and np.all(np.isfinite(self.mu))):
            raise ValueError("parameters must be finite")

    @property
    def ambient_dim(self) -> int:
        return self.W.shape[0]

    @property
    def latent_dim(self) -> int:
        return self.W.shape[1]

    def to_vector(self) -> np.ndarray:
        """Flatten as ``vec(W)``, then ``mu``, then ``a``."""
        return np.concatenate([self.W.ravel(), self.mu, [self.a]])

    @staticmethod
    def from_vector(vec: np.ndarray, ambient_dim: int, latent_dim: int) -> "PpcaParams":
        vec = np.asarray(vec, dtype=float)
        dm = ambient_dim * latent_dim
        if vec.shape != (dm + ambient_dim + 1,):
            raise ValueError("flat parameter vector has wrong length")
        return PpcaParams(
            vec[:dm].reshape(ambient_dim, latent_dim),
            vec[dm : dm + ambient_dim],
            vec[-1],
        )

    def copy(self) -> "PpcaParams":
        return PpcaParams(self.W.copy(), self.mu.copy(), self.a)


@dataclass
class LatentMoments:
    """Posterior latent moments: means ``ez`` (M x N) and the shared
    posterior covariance ``cov`` (M x M), so that
    ``E[z_n z_n^T] = cov + ez_n ez_n^T``."""

    ez: np.ndarray
    cov: np.ndarray

    def ezz(self, n: int) -> np.ndarray:
        return self.cov + np.outer(self.ez[:, n], self.ez[:, n])

    def sum_ezz(self) -> np.ndarray:
        return self.ez.shape[1] * self.cov + self.ez @ self.ez.T


@dataclass
class DppcaMultipliers:
    """Lagrange multipliers of one node, one per parameter block."""

    lam: np.ndarray
    gamma: np.ndarray
    beta: float

    @staticmethod
    def zeros(ambient_dim: int, latent_dim: int) -> "DppcaMultipliers":
        return DppcaMultipliers(
            np.zeros((ambient_dim, latent_dim)), np.zeros(ambient_dim), 0.0
        )


def initial_params(data: np.ndarray, latent_dim: int, rng: np.random.Generator) -> PpcaParams:
    """Random projection (scaled Gaussian), data-mean offset, unit precision."""
    d = data.shape[0]
    w = rng.standard_normal((d, latent_dim)) / np.sqrt(latent_dim)
    return PpcaParams(w, data.mean(axis=1), 1.0)


def e_step(params: PpcaParams, data: np.ndarray) -> LatentMoments:
    """Posterior latent moments given current parameters.

    The posterior of ``z`` given ``x`` is Gaussian with mean
    ``Minv W^T (x - mu)`` and covariance ``Minv / a`` where
    ``M = W^T W + I / a``.
    """
    w, a = params.W, params.a
    m_mat = w.T @ w + np.eye(params.latent_dim) / a
    if not np.all(np.isfinite(m_mat)):
        raise np.linalg.LinAlgError("latent normal equations are not finite")
    try:
        ez = np.linalg.solve(m_mat, w.T @ (data - params.mu[:, None]))
        cov = np.linalg.solve(m_mat, np.eye(params.latent_dim)) / a
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError(
            "latent normal equations are numerically singular"
        ) from exc
    return LatentMoments(ez, 0.5 * (cov + cov.T))


def negative_log_likelihood(params: PpcaParams, data: np.ndarray) -> float:
    """Negative marginal log-likelihood of ``data`` under the model.

    The marginal of each sample is ``N(mu, W W^T + I/a)``; this is the
    local objective both the ranking penalties and the convergence check
    consume.
    """
    d, n = data.shape
    cov = params.W @ params.W.T + np.eye(d) / params.a
    try:
        chol = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError("marginal covariance is not positive definite") from exc
    logdet = 2.0 * float(np.sum(np.log(np.diag(chol))))
    white = np.linalg.solve(chol, data - params.mu[:, None])
    quad = float(np.sum(white**2))
    return 0.5 * (n * d * np.log(2.0 * np.pi) + n * logdet + quad)


def _mu_update(
    moments: LatentMoments,
    data: np.ndarray,
    w: np.ndarray,
    a: float,
    gamma: np.ndarray,
    eta_sum: float,
    mu_anchor: np.ndarray,
) -> np.ndarray:
    # mu = [a sum_n (x_n - W E[z_n]) - 2 gamma + sum_j eta_ij (mu_i + mu_j)]
    #      / (N a + 2 sum_j eta_ij)
    n = data.shape[1]
    data_term = a * (data.sum(axis=1) - w @ moments.ez.sum(axis=1))
    return (data_term - 2.0 * gamma + mu_anchor) / (n * a + 2.0 * eta_sum)


def _w_update(
    moments: LatentMoments,
    data: np.ndarray,
    mu: np.ndarray,
    a: float,
    lam: np.ndarray,
    eta_sum: float,
    w_anchor: np.ndarray,
) -> np.ndarray:
    # W [a sum_n E[z z^T] + 2 sum_j eta_ij I] =
    #     a sum_n (x_n - mu) E[z_n]^T - 2 lambda + sum_j eta_ij (W_i + W_j)
    m = moments.ez.shape[0]
    lhs = a * moments.sum_ezz() + 2.0 * eta_sum * np.eye(m)
    rhs = a * ((data - mu[:, None]) @ moments.ez.T) - 2.0 * lam + w_anchor
    try:
        return np.linalg.solve(lhs, rhs.T).T
    except np.linalg.LinAlgError:
        ridge = 1e-10 * max(1.0, float(np.trace(lhs)) / m)
        warnings.warn(
            "projection normal equations singular; retrying with ridge "
            f"{ridge:.3e}",
            RuntimeWarning,
        )
        return np.linalg.solve(lhs + ridge * np.eye(m), rhs.T).T


def _expected_residual(
    moments: LatentMoments, data: np.ndarray, w: np.ndarray, mu: np.ndarray
) -> float:
    # sum_n E |x_n - W z_n - mu|^2 under the posterior moments. Floored at
    # relative epsilon: near-perfect reconstructions cancel to rounding
    # noise of unstable sign, and the precision update needs a positive
    # value (the precision then saturates instead of overflowing).
    centered = data - mu[:, None]
    energy = float(np.sum(centered**2))
    total = energy
    total -= 2.0 * float(np.sum(centered * (w @ moments.ez)))
    total += float(np.sum((w.T @ w) * moments.sum_ezz()))
    return max(total, np.finfo(float).eps * (1.0 + energy))


def _a_update(
    residual: float,
    num_samples: int,
    ambient_dim: int,
    beta_mult: float,
    eta_sum: float,
    a_anchor: float,
) -> float:
    # Stationarity in a is the scalar quadratic
    #   (2 eta_sum) a^2 + (residual/2 + 2 beta - a_anchor) a - N D / 2 = 0,
    # which has exactly one positive root whenever eta_sum > 0.
    nd_half = 0.5 * num_samples * ambient_dim
    b = 0.5 * residual + 2.0 * beta_mult - a_anchor
    if eta_sum > 0:
        a2 = 2.0 * eta_sum
        disc = b * b + 4.0 * a2 * nd_half
        return (-b + np.sqrt(disc)) / (2.0 * a2)
    if b > 0:
        return nd_half / b
    # No positive stationary point; fall back to the maximum-likelihood
    # noise update.
    if residual <= 0:
        raise ValueError("degenerate data: zero expected reconstruction residual")
    return 2.0 * nd_half / residual


def consensus_m_step(
    moments: LatentMoments,
    data: np.ndarray,
    params: PpcaParams,
    multipliers: DppcaMultipliers,
    neighbor_params: Mapping[int, PpcaParams],
    eta: Mapping[int, float],
    max_cycles: int = 500,
    tol: float = 1e-12,
) -> PpcaParams:
    """Minimize the node's augmented Lagrangian over (mu, W, a).

    The three block updates are closed forms (the precision block via
    the positive root of its stationarity quadratic) and are cycled,
    each consuming the freshest other blocks, until no block moves by
    more than ``tol`` relatively. Consensus anchors are the midpoints of
    the entry parameters and the neighbors' broadcasts and stay fixed
    throughout. With no neighbors and zero multipliers this reduces to
    the centralized EM M-step.
    """
    eta_sum = float(sum(eta.values()))
    mu_anchor = np.zeros_like(params.mu)
    w_anchor = np.zeros_like(params.W)
    a_anchor = 0.0
    for j, nb in neighbor_params.items():
        mu_anchor += eta[j] * (params.mu + nb.mu)
        w_anchor += eta[j] * (params.W + nb.W)
        a_anchor += eta[j] * (params.a + nb.a)

    n = data.shape[1]
    d = params.ambient_dim
    w, mu, a = params.W, params.mu, params.a
    for _ in range(max_cycles):
        mu_new = _mu_update(moments, data, w, a, multipliers.gamma, eta_sum, mu_anchor)
        w_new = _w_update(moments, data, mu_new, a, multipliers.lam, eta_sum, w_anchor)
        residual = _expected_residual(moments, data, w_new, mu_new)
        a_new = _a_update(residual, n, d, multipliers.beta, eta_sum, a_anchor)
        delta = max(
            _rel_change(mu_new, mu), _rel_change(w_new, w), _rel_change(a_new, a)
        )
        w, mu, a = w_new, mu_new, a_new
        if delta < tol:
            break
    return PpcaParams(w, mu, a)


def _rel_change(new, old) -> float:
    num = float(np.linalg.norm(np.ravel(np.asarray(new) - np.asarray(old))))
    den = 1.0 + float(np.linalg.norm(np.ravel(np.asarray(old))))
    return num / den


def consensus_multiplier_step(
    params: PpcaParams,
    neighbor_params: Mapping[int, PpcaParams],
    eta: Mapping[int, float],
    multipliers: DppcaMultipliers,
) -> DppcaMultipliers:
    """Dual ascent: penalty-weighted sum of consensus errors, halved.

    Each multiplier gains ``(1/2) sum_j eta_ij (own_block - neighbor_block)``
    evaluated at the current round's broadcasts; all three blocks use the
    same form.
    """
    lam = multipliers.lam.copy()
    gamma = multipliers.gamma.copy()
    beta = multipliers.beta
    for j, nb in neighbor_params.items():
        lam += 0.5 * eta[j] * (params.W - nb.W)
        gamma += 0.5 * eta[j] * (params.mu - nb.mu)
        beta += 0.5 * eta[j] * (params.a - nb.a)
    return DppcaMultipliers(lam, gamma, beta)


def centralized_em(
    data: np.ndarray,
    latent_dim: int,
    init: PpcaParams | None = None,
    iterations: int = 100,
    rng: np.random.Generator | None = None,
) -> PpcaParams:
    """Fit PPCA on pooled data by EM.

    Runs a fixed number of iterations; each M-step exactly minimizes the
    expected complete-data objective, so the data log-likelihood never
    decreases. Requires more samples than latent dimensions and data
    with nonzero variance.
    """
    d, n = data.shape
    if n <= latent_dim:
        raise ValueError(f"need more samples than latent dimensions, got {n} <= {latent_dim}")
    if float(np.var(data)) == 0.0:
        raise ValueError("degenerate data: zero variance")
    if init is None:
        init = initial_params(data, latent_dim, rng if rng is not None else np.random.default_rng(0))
    params = init.copy()
    no_multipliers = DppcaMultipliers.zeros(d, latent_dim)
    for _ in range(iterations):
        moments = e_step(params, data)
        params = consensus_m_step(moments, data, params, no_multipliers, {}, {})
    return params


class DppcaModel(ConsensusModel):
    """One node's PPCA model for the consensus engine.

    Owns a data shard, a parameter copy, and the multipliers; flattening
    follows ``PpcaParams.to_vector`` (projection, mean, precision).
    """

    def __init__(self, shard: np.ndarray, latent_dim: int, rng: np.random.Generator):
        self.data = np.asarray(shard, dtype=float)
        self.latent_dim = latent_dim
        self.params = initial_params(self.data, latent_dim, rng)
        self.multipliers = DppcaMultipliers.zeros(self.data.shape[0], latent_dim)

    def params_vector(self) -> np.ndarray:
        return self.params.to_vector()

    def objective(self, params: np.ndarray | None = None) -> float:
        if params is None:
            return negative_log_likelihood(self.params, self.data)
        unpacked = PpcaParams.from_vector(params, self.data.shape[0], self.latent_dim)
        return negative_log_likelihood(unpacked, self.data)

    def _unflatten(self, neighbors: Mapping[int, np.ndarray]) -> dict[int, PpcaParams]:
        d = self.data.shape[0]
        return {
            j: PpcaParams.from_vector(vec, d, self.latent_dim)
            for j, vec in neighbors.items()
        }

    def local_step(self, neighbors: Mapping[int, np.ndarray], eta: Mapping[int, float]) -> None:
        moments = e_step(self.params, self.data)
        self.params = consensus_m_step(
            moments, self.data, self.params, self.multipliers, self._unflatten(neighbors), eta
        )

    def multiplier_step(self, neighbors: Mapping[int, np.ndarray], eta: Mapping[int, float]) -> None:
        self.multipliers = consensus_multiplier_step(
            self.params, self._unflatten(neighbors), eta, self.multipliers
        )


def make_dppca_factory(latent_dim: int):
    """Model factory for :func:`netadmm.engine.run`."""

    def factory(node_id: int, shard: np.ndarray, rng: np.random.Generator) -> DppcaModel:
        return DppcaModel(shard, latent_dim, rng)

    return factory
