"""Penalty schedulers for consensus ADMM.

Six schemes map per-iteration signals to per-directed-edge penalties
``eta[i, j]``:

* ``fixed``: constant ``eta0``.
* ``vp`` (varying penalty): per-node residual balancing. The node's
  penalty is multiplied by ``1 + tau_fixed`` when the primal residual
  dominates the dual one by a factor ``mu`` (and divided in the mirror
  case), then reset to ``eta0`` at iteration ``t_reset`` so the network
  finishes with a homogeneous penalty.
* ``ap`` (adaptive penalty): each node ranks its own objective evaluated
  at its own vs. each neighbor's parameters; neighbors with better
  estimates receive a larger penalty via ``eta0 * (1 + tau_ij)`` with
  ``tau_ij`` in ``[-0.5, 1]``. Stops at ``t_max``.
* ``nap`` (network-adaptive penalty): like ``ap``, but each directed
  edge holds a spending budget. Every update costs ``|tau_ij|``; an
  exhausted edge falls back to ``eta0`` unless the node's objective is
  still changing, in which case the budget ceiling grows geometrically
  (never past ``budget / (1 - alpha)``).
* ``vp_ap``: residual-balancing branches with the ranking weight folded
  in multiplicatively (``* 2`` or ``* 1/2``), reset after ``t_max``.
* ``vp_nap``: same branches gated by the spending budget instead of an
  iteration cap.

The module exposes both the pure update rules (unit-testable in
isolation) and stateful per-graph schedulers driven by the engine.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Mapping

import numpy as np

from .topology import Graph

__all__ = [
    "SCHEMES",
    "PenaltyConfig",
    "EdgePenaltyState",
    "ResidualPair",
    "local_residuals",
    "he2000_global",
    "vp_update",
    "ap_taus",
    "ap_update",
    "nap_update",
    "vp_ap_update",
    "vp_nap_update",
    "RoundSignals",
    "PenaltyScheduler",
    "make_scheduler",
]

SCHEMES = ("fixed", "vp", "ap", "nap", "vp_ap", "vp_nap")

_EVAL_POINTS = ("neighbor", "midpoint")


@dataclass(frozen=True)
class PenaltyConfig:
    """Knobs shared by all penalty schemes.

    Attributes:
        eta0: Initial (and reset) penalty value.
        mu: Residual-ratio threshold for the balancing branches (> 1).
        tau_fixed: Multiplicative step of the residual-balancing rule.
        t_max: Last iteration at which iteration-capped schemes adapt.
        t_reset: Iteration at which ``vp`` resets all node penalties to
            ``eta0``; defaults to ``t_max``.
        budget: Initial per-edge spending budget of the ``nap`` family.
        alpha: Geometric growth factor of the budget ceiling, in (0, 1).
        beta: Objective-change threshold that allows ceiling growth,
            in (0, 1).
        f_tie_epsilon: Tie tolerance; when all objective evaluations in a
            neighborhood agree to within this (relative) margin, every
            ranking weight is zero and the penalty falls back to ``eta0``.
        eval_point: Where a neighbor's objective is evaluated for the
            ranking weights, either at the neighbor's broadcast
            parameters ("neighbor") or at the edge midpoint ("midpoint").
        relative_beta: Compare the objective change against ``beta``
            relative to the previous value (default) instead of
            absolutely, so the default works across objective scales.
    """

    eta0: float = 10.0
    mu: float = 10.0
    tau_fixed: float = 1.0
    t_max: int = 50
    t_reset: int | None = None
    budget: float = 1.0
    alpha: float = 0.5
    beta: float = 0.1
    f_tie_epsilon: float = 1e-12
    eval_point: str = "midpoint"
    relative_beta: bool = True

    def __post_init__(self) -> None:
        if not self.eta0 > 0:
            raise ValueError("eta0 must be > 0")
        if not self.mu > 1:
            raise ValueError("mu must be > 1")
        if not self.tau_fixed > 0:
            raise ValueError("tau_fixed must be > 0")
        if self.t_max < 1:
            raise ValueError("t_max must be >= 1")
        if self.t_reset is not None and self.t_reset < 1:
            raise ValueError("t_reset must be >= 1")
        if not self.budget > 0:
            raise ValueError("budget must be > 0")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must be in (0, 1)")
        if not 0 < self.beta < 1:
            raise ValueError("beta must be in (0, 1)")
        if not self.f_tie_epsilon > 0:
            raise ValueError("f_tie_epsilon must be > 0")
        if self.eval_point not in _EVAL_POINTS:
            raise ValueError(f"eval_point must be one of {_EVAL_POINTS}")

    @property
    def reset_iteration(self) -> int:
        """Effective ``vp`` reset iteration (defaults to ``t_max``)."""
        return self.t_max if self.t_reset is None else self.t_reset

    @property
    def ceiling_bound(self) -> float:
        """Upper bound ``budget / (1 - alpha)`` on any budget ceiling."""
        return self.budget / (1.0 - self.alpha)


@dataclass(frozen=True)
class EdgePenaltyState:
    """Penalty and budget ledger of one directed edge.

    ``spent`` accumulates the absolute ranking weights charged so far,
    ``ceiling`` is the current budget allowance, and ``growth_count``
    counts ceiling increases (the n-th increase adds ``alpha**n *
    budget``, so the ceiling stays below ``budget / (1 - alpha)``).
    """

    eta: float
    spent: float = 0.0
    ceiling: float = 1.0
    growth_count: int = 1

    @property
    def exhausted(self) -> bool:
        return self.spent >= self.ceiling


@dataclass(frozen=True)
class ResidualPair:
    """Squared primal and dual residual norms of one node."""

    primal_sq: float
    dual_sq: float

    @property
    def primal_norm(self) -> float:
        return math.sqrt(self.primal_sq)

    @property
    def dual_norm(self) -> float:
        return math.sqrt(self.dual_sq)


def local_residuals(theta, neighbor_avg, neighbor_avg_prev, eta_i: float) -> ResidualPair:
    """Per-node consensus residuals from flattened parameter vectors.

    The primal residual measures the gap between the node's parameters
    and the average of its neighbors' current broadcasts; the dual
    residual is the penalty-scaled movement of that neighbor average
    between consecutive rounds.

    Parameters
    ----------
    theta : ndarray
        Node's own flattened parameters.
    neighbor_avg : ndarray
        Unweighted mean of the neighbors' current flattened parameters.
    neighbor_avg_prev : ndarray
        Same average from the previous round.
    eta_i : float
        Node's current penalty (scales the dual residual).

    Returns
    -------
    ResidualPair
        Squared norms ``|theta - avg|^2`` and ``eta_i^2 |avg - avg_prev|^2``.
    """
    theta = np.asarray(theta, dtype=float)
    avg = np.asarray(neighbor_avg, dtype=float)
    avg_prev = np.asarray(neighbor_avg_prev, dtype=float)
    if theta.shape != avg.shape or avg.shape != avg_prev.shape:
        raise ValueError(
            f"parameter blocks disagree in shape: {theta.shape}, {avg.shape}, {avg_prev.shape}"
        )
    primal_sq = float(np.sum((theta - avg) ** 2))
    dual_sq = float(eta_i**2 * np.sum((avg - avg_prev) ** 2))
    return ResidualPair(primal_sq, dual_sq)


def _balance(eta: float, primal_norm: float, dual_norm: float, mu: float, tau: float) -> float:
    # Residual-balancing core: grow eta when the primal residual dominates,
    # shrink when the dual one does, leave alone otherwise.
    if primal_norm > mu * dual_norm:
        return eta * (1.0 + tau)
    if dual_norm > mu * primal_norm:
        return eta / (1.0 + tau)
    return eta


def he2000_global(eta: float, primal_norm: float, dual_norm: float, cfg: PenaltyConfig) -> float:
    """Classic global residual-balancing rule (test reference only).

    Operates on network-wide residual norms and a single shared penalty;
    the simulator's first-class schemes use per-node or per-edge state
    instead.
    """
    return _balance(eta, primal_norm, dual_norm, cfg.mu, cfg.tau_fixed)


def vp_update(state: EdgePenaltyState, res: ResidualPair, cfg: PenaltyConfig, t: int) -> EdgePenaltyState:
    """Varying-penalty step for one node at iteration ``t``.

    Balances the node's local residuals until ``t_reset``, after which
    the penalty snaps back to ``eta0`` and stays there (heterogeneous
    frozen penalties would otherwise oscillate near the saddle point).
    """
    if t >= cfg.reset_iteration:
        return replace(state, eta=cfg.eta0)
    eta = _balance(state.eta, res.primal_norm, res.dual_norm, cfg.mu, cfg.tau_fixed)
    return replace(state, eta=eta)


def ap_taus(
    f_self: float, f_neighbors: Mapping[int, float], tie_epsilon: float
) -> dict[int, float]:
    """Ranking weights ``tau_ij`` from local objective evaluations.

    ``f_self`` is the node's objective at its own parameters and
    ``f_neighbors[j]`` the same objective at neighbor j's parameters.
    Each value is min-max normalized over the neighborhood into a score
    ``kappa`` in [1, 2]; ``tau_ij = kappa_self / kappa_j - 1`` then lies
    in [-0.5, 1], positive exactly when neighbor j has the better
    estimate. When all evaluations tie to within ``tie_epsilon``
    (relative), all weights are zero and plain consensus takes over.
    """
    values = [f_self, *f_neighbors.values()]
    if not all(math.isfinite(v) for v in values):
        raise ValueError("objective evaluations must be finite for penalty ranking")
    f_max = max(values)
    f_min = min(values)
    span = f_max - f_min
    if span <= tie_epsilon * max(1.0, abs(f_max)):
        return {j: 0.0 for j in f_neighbors}

    def kappa(f: float) -> float:
        return (f - f_min) / span + 1.0

    k_self = kappa(f_self)
    return {j: k_self / kappa(f_j) - 1.0 for j, f_j in f_neighbors.items()}


def ap_update(tau_ij: float, cfg: PenaltyConfig, t: int) -> float:
    """Adaptive-penalty value: ``eta0 * (1 + tau_ij)`` until ``t_max``."""
    if t < cfg.t_max:
        return cfg.eta0 * (1.0 + tau_ij)
    return cfg.eta0


def _objective_change_exceeds_beta(f_curr: float, f_prev: float, cfg: PenaltyConfig) -> bool:
    delta = abs(f_curr - f_prev)
    if cfg.relative_beta:
        delta /= abs(f_prev) + 1e-12
    return delta > cfg.beta


def _grow_ceiling(state: EdgePenaltyState, f_curr: float, f_prev: float, cfg: PenaltyConfig) -> EdgePenaltyState:
    # Ceiling growth: an exhausted edge whose objective still moves earns
    # another (geometrically shrinking) slice of budget.
    if state.exhausted and _objective_change_exceeds_beta(f_curr, f_prev, cfg):
        return replace(
            state,
            ceiling=state.ceiling + cfg.alpha**state.growth_count * cfg.budget,
            growth_count=state.growth_count + 1,
        )
    return state


def nap_update(
    state: EdgePenaltyState,
    tau_ij: float,
    f_curr: float,
    f_prev: float,
    cfg: PenaltyConfig,
) -> EdgePenaltyState:
    """Budgeted adaptive-penalty step for one directed edge.

    While budget remains, behaves like ``ap_update`` and pays ``|tau_ij|``
    from the budget; once exhausted, the penalty falls back to ``eta0``.
    Afterwards the ceiling may grow when the node's objective is still
    changing by more than ``beta``, which re-enables updates.
    """
    if not state.exhausted:
        state = replace(state, eta=cfg.eta0 * (1.0 + tau_ij), spent=state.spent + abs(tau_ij))
    else:
        state = replace(state, eta=cfg.eta0)
    return _grow_ceiling(state, f_curr, f_prev, cfg)


def vp_ap_update(
    state: EdgePenaltyState,
    tau_ij: float,
    res: ResidualPair,
    cfg: PenaltyConfig,
    t: int,
) -> EdgePenaltyState:
    """Combined residual-balancing and ranking step, capped at ``t_max``.

    The residual branches double or halve the running penalty with the
    ranking weight folded in multiplicatively; past ``t_max`` the penalty
    is reset to ``eta0``.
    """
    if t > cfg.t_max:
        return replace(state, eta=cfg.eta0)
    eta = state.eta
    if res.primal_norm > cfg.mu * res.dual_norm:
        eta = eta * (1.0 + tau_ij) * 2.0
    elif res.dual_norm > cfg.mu * res.primal_norm:
        eta = eta * (1.0 + tau_ij) * 0.5
    return replace(state, eta=eta)


def vp_nap_update(
    state: EdgePenaltyState,
    tau_ij: float,
    f_curr: float,
    f_prev: float,
    res: ResidualPair,
    cfg: PenaltyConfig,
) -> EdgePenaltyState:
    """Combined residual-balancing step gated by the spending budget.

    Same branches as ``vp_ap_update`` while budget remains; a branch that
    fires pays ``|tau_ij|``. An exhausted edge falls back to ``eta0``
    until (and unless) the ceiling grows again.
    """
    if not state.exhausted:
        if res.primal_norm > cfg.mu * res.dual_norm:
            state = replace(
                state,
                eta=state.eta * (1.0 + tau_ij) * 2.0,
                spent=state.spent + abs(tau_ij),
            )
        elif res.dual_norm > cfg.mu * res.primal_norm:
            state = replace(
                state,
                eta=state.eta * (1.0 + tau_ij) * 0.5,
                spent=state.spent + abs(tau_ij),
            )
    else:
        state = replace(state, eta=cfg.eta0)
    return _grow_ceiling(state, f_curr, f_prev, cfg)


@dataclass
class RoundSignals:
    """Per-iteration inputs the engine hands to a scheduler.

    All lists are indexed by node id. ``f_neighbors[i]`` maps neighbor id
    to node i's objective evaluated at that neighbor's broadcast (or the
    edge midpoint, per config); it is only populated for schemes that
    rank objectives.
    """

    residuals: list[ResidualPair]
    f_self: list[float] = field(default_factory=list)
    f_prev_self: list[float] = field(default_factory=list)
    f_neighbors: list[dict[int, float]] = field(default_factory=list)


class PenaltyScheduler:
    """Base class: owns per-edge penalty state for one graph and scheme."""

    #: whether the engine must evaluate objectives at neighbor parameters
    needs_objectives = False

    def __init__(self, graph: Graph, cfg: PenaltyConfig):
        self.graph = graph
        self.cfg = cfg

    def eta(self, i: int, j: int) -> float:
        raise NotImplementedError

    def edge_etas(self, i: int) -> dict[int, float]:
        """Current penalties on node i's outgoing edges."""
        return {j: self.eta(i, j) for j in self.graph.neighbors[i]}

    def node_eta(self, i: int) -> float:
        """Mean penalty over node i's outgoing edges (``eta0`` if isolated)."""
        nbs = self.graph.neighbors[i]
        if not nbs:
            return self.cfg.eta0
        return sum(self.eta(i, j) for j in nbs) / len(nbs)

    def all_etas(self) -> np.ndarray:
        """Penalties of every directed edge, in edge-iteration order."""
        values = [self.eta(i, j) for i, j in self.graph.directed_edges()]
        if not values:
            values = [self.cfg.eta0]  # single-node graph: report the constant
        return np.asarray(values)

    def exhausted_edges(self) -> int:
        """Directed edges whose budget is spent (budget schemes only)."""
        return 0

    def budget_ceilings(self) -> dict[tuple[int, int], float]:
        """Current budget ceilings per directed edge (budget schemes only)."""
        return {}

    def update(self, t: int, signals: RoundSignals) -> None:
        raise NotImplementedError

    def _taus(self, i: int, signals: RoundSignals) -> dict[int, float]:
        return ap_taus(signals.f_self[i], signals.f_neighbors[i], self.cfg.f_tie_epsilon)


class FixedScheduler(PenaltyScheduler):
    def eta(self, i: int, j: int) -> float:
        return self.cfg.eta0

    def update(self, t: int, signals: RoundSignals) -> None:
        pass


class VpScheduler(PenaltyScheduler):
    """Per-node penalty shared by all of the node's outgoing edges."""

    def __init__(self, graph: Graph, cfg: PenaltyConfig):
        super().__init__(graph, cfg)
        self._eta = [cfg.eta0] * graph.num_nodes

    def eta(self, i: int, j: int) -> float:
        return self._eta[i]

    def node_eta(self, i: int) -> float:
        return self._eta[i]

    def update(self, t: int, signals: RoundSignals) -> None:
        for i in range(self.graph.num_nodes):
            state = EdgePenaltyState(eta=self._eta[i])
            self._eta[i] = vp_update(state, signals.residuals[i], self.cfg, t).eta


class ApScheduler(PenaltyScheduler):
    needs_objectives = True

    def __init__(self, graph: Graph, cfg: PenaltyConfig):
        super().__init__(graph, cfg)
        self._eta = {edge: cfg.eta0 for edge in graph.directed_edges()}

    def eta(self, i: int, j: int) -> float:
        return self._eta[(i, j)]

    def update(self, t: int, signals: RoundSignals) -> None:
        for i in range(self.graph.num_nodes):
            taus = self._taus(i, signals)
            for j, tau in taus.items():
                self._eta[(i, j)] = ap_update(tau, self.cfg, t)


class _BudgetScheduler(PenaltyScheduler):
    """Shared state handling for the budgeted (nap-family) schemes."""

    needs_objectives = True

    def __init__(self, graph: Graph, cfg: PenaltyConfig):
        super().__init__(graph, cfg)
        self._state = {
            edge: EdgePenaltyState(eta=cfg.eta0, ceiling=cfg.budget)
            for edge in graph.directed_edges()
        }

    def eta(self, i: int, j: int) -> float:
        return self._state[(i, j)].eta

    def state(self, i: int, j: int) -> EdgePenaltyState:
        return self._state[(i, j)]

    def exhausted_edges(self) -> int:
        return sum(1 for s in self._state.values() if s.exhausted)

    def budget_ceilings(self) -> dict[tuple[int, int], float]:
        return {edge: s.ceiling for edge, s in self._state.items()}


class NapScheduler(_BudgetScheduler):
    def update(self, t: int, signals: RoundSignals) -> None:
        for i in range(self.graph.num_nodes):
            taus = self._taus(i, signals)
            for j, tau in taus.items():
                self._state[(i, j)] = nap_update(
                    self._state[(i, j)],
                    tau,
                    signals.f_self[i],
                    signals.f_prev_self[i],
                    self.cfg,
                )


class VpApScheduler(PenaltyScheduler):
    needs_objectives = True

    def __init__(self, graph: Graph, cfg: PenaltyConfig):
        super().__init__(graph, cfg)
        self._eta = {edge: cfg.eta0 for edge in graph.directed_edges()}

    def eta(self, i: int, j: int) -> float:
        return self._eta[(i, j)]

    def update(self, t: int, signals: RoundSignals) -> None:
        for i in range(self.graph.num_nodes):
            taus = self._taus(i, signals)
            res = signals.residuals[i]
            for j, tau in taus.items():
                state = EdgePenaltyState(eta=self._eta[(i, j)])
                self._eta[(i, j)] = vp_ap_update(state, tau, res, self.cfg, t).eta


class VpNapScheduler(_BudgetScheduler):
    def update(self, t: int, signals: RoundSignals) -> None:
        for i in range(self.graph.num_nodes):
            taus = self._taus(i, signals)
            res = signals.residuals[i]
            for j, tau in taus.items():
                self._state[(i, j)] = vp_nap_update(
                    self._state[(i, j)],
                    tau,
                    signals.f_self[i],
                    signals.f_prev_self[i],
                    res,
                    self.cfg,
                )


_SCHEDULERS = {
    "fixed": FixedScheduler,
    "vp": VpScheduler,
    "ap": ApScheduler,
    "nap": NapScheduler,
    "vp_ap": VpApScheduler,
    "vp_nap": VpNapScheduler,
}


def make_scheduler(scheme: str, graph: Graph, cfg: PenaltyConfig) -> PenaltyScheduler:
    """Instantiate the scheduler for a scheme name from :data:`SCHEMES`."""
    if scheme not in _SCHEDULERS:
        raise ValueError(f"unknown scheme {scheme!r}, expected one of {', '.join(SCHEMES)}")
    return _SCHEDULERS[scheme](graph, cfg)
