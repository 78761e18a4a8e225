"""Architecture-parameter math.

The DST chain turns per-edge logits into sparse connection coefficients::

    p     = softmax(alpha / tau)          per edge
    p_hat = p / max(p over node j)        connection normalisation
    t     = sigmoid(beta_j)               per-node threshold
    q     = relu(p_hat - t)               pruning
    q_hat = q / sum_k q  (0 if all q = 0) operation normalisation

Every step is built from taped primitives, so gradients reach alpha and beta.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .search_space import SearchSpaceConfig

KINDS = ("normal", "reduction")
# Largest double below 1: keeps t < 1 where sigmoid would round to exactly 1.
T_MAX = float(np.nextafter(1.0, 0.0))


@dataclass(frozen=True)
class TemperatureSchedule:
    initial: float = 5.0
    decay: float = 0.923

    def __post_init__(self):
        if self.initial <= 0:
            raise ValueError(f"initial temperature must be positive, got {self.initial}")
        if not 0 < self.decay <= 1:
            raise ValueError(f"temperature decay must lie in (0, 1], got {self.decay}")


def anneal(tau: float, schedule: TemperatureSchedule) -> float:
    return tau * schedule.decay


def softmax_temperature(alpha_row, tau: float) -> Tensor:
    """Softmax of ``alpha / tau`` along the last axis."""
    if tau <= 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    return ad.softmax(ad.div(alpha_row, tau), axis=-1)


def connection_normalize(p_node: Tensor) -> Tensor:
    """Divide every connection into a node by the node's strongest one."""
    return ad.div(p_node, ad.tmax(p_node))


def node_threshold(beta_j) -> Tensor:
    return ad.clip(ad.sigmoid(beta_j), 0.0, T_MAX)


def prune(p_hat, t_j) -> Tensor:
    return ad.relu(ad.sub(p_hat, t_j))


def operation_normalize(q_edge) -> Tensor:
    """Renormalise surviving connections on each edge (last axis).

    Edges with no surviving connection stay all-zero.
    """
    q_edge = ad.as_tensor(q_edge)
    total = ad.tsum(q_edge, axis=-1, keepdims=True)
    inactive = (total.data == 0).astype(np.float64)
    return ad.div(q_edge, ad.add(total, inactive))


def sparsity_penalty(t: Tensor, lam: float) -> Tensor:
    """``lam`` times the mean of ``-log t`` over intermediate nodes."""
    if lam < 0:
        raise ValueError(f"lambda must be non-negative, got {lam}")
    if lam == 0:
        return Tensor(0.0)
    return ad.mul(lam, ad.neg(ad.mean(ad.log(t))))


@dataclass
class ConnectionActivations:
    p: Tensor
    p_hat: Tensor | None = None
    t: Tensor | None = None
    q: Tensor | None = None
    q_hat: Tensor | None = None

    @property
    def coefficients(self) -> Tensor:
        """The per-connection weights an Engine-cell multiplies features by."""
        return self.q_hat if self.q_hat is not None else self.p


def relaxed_softmax(alpha: Tensor, tau: float) -> ConnectionActivations:
    return ConnectionActivations(p=softmax_temperature(alpha, tau))


def full_dst_chain(alpha: Tensor, beta: Tensor, tau: float, space: SearchSpaceConfig) -> ConnectionActivations:
    if any(op.tag == "zero" for op in space.catalog):
        raise ValueError("the DST chain requires a catalog without the zero operation")
    n_mid = space.n_nodes - 2
    if alpha.shape != (len(space.edges), space.K) or beta.shape != (n_mid,):
        raise ad.ShapeError(
            f"full_dst_chain: alpha {alpha.shape} / beta {beta.shape} do not match "
            f"{len(space.edges)} edges x {space.K} ops, {n_mid} nodes"
        )
    p = softmax_temperature(alpha, tau)
    t = node_threshold(beta)
    # Edge rows are sorted by destination, so each node owns a contiguous block.
    p_hat_parts, q_parts = [], []
    for slot, node in enumerate(space.intermediate_nodes):
        rows = space.edges_into(node)
        p_node = ad.index(p, slice(rows[0], rows[-1] + 1))
        p_hat_node = connection_normalize(p_node)
        p_hat_parts.append(p_hat_node)
        q_parts.append(prune(p_hat_node, ad.index(t, slot)))
    p_hat = ad.concat(p_hat_parts, axis=0)
    q = ad.concat(q_parts, axis=0)
    return ConnectionActivations(p=p, p_hat=p_hat, t=t, q=q, q_hat=operation_normalize(q))


@dataclass
class ArchParams:
    """Architecture parameters shared by all cells of each kind."""

    alpha: dict[str, Tensor]
    beta: dict[str, Tensor] | None
    tau: float

    @classmethod
    def initialize(cls, space: SearchSpaceConfig, tau: float, dst: bool, rng: np.random.Generator) -> ArchParams:
        if tau <= 0:
            raise ValueError(f"temperature must be positive, got {tau}")
        shape = (len(space.edges), space.K)
        alpha = {k: Tensor(1e-3 * rng.standard_normal(shape), requires_grad=True, name=f"alpha.{k}") for k in KINDS}
        beta = None
        if dst:
            beta = {k: Tensor(np.zeros(space.n_nodes - 2), requires_grad=True, name=f"beta.{k}") for k in KINDS}
        return cls(alpha, beta, tau)

    def tensors(self) -> list[Tensor]:
        out = [self.alpha[k] for k in KINDS]
        if self.beta is not None:
            out += [self.beta[k] for k in KINDS]
        return out

    def activations(self, kind: str, space: SearchSpaceConfig, tau: float | None = None) -> ConnectionActivations:
        tau = self.tau if tau is None else tau
        if self.beta is not None:
            return full_dst_chain(self.alpha[kind], self.beta[kind], tau, space)
        return relaxed_softmax(self.alpha[kind], tau)

    def thresholds(self) -> np.ndarray:
        if self.beta is None:
            return np.array([])
        with ad.no_grad():
            return np.concatenate([node_threshold(self.beta[k]).data for k in KINDS])
