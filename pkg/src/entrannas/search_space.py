"""Cell DAG skeleton and candidate-operation catalogs.

Nodes are 1-based: nodes 1 and 2 are the cell inputs, nodes 3..n are
intermediate. Edges run from any earlier node into an intermediate node, so
the input-input pair (1, 2) is never an edge.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import comb
from typing import NamedTuple

# Declaration order is the alpha column order; never reorder.
STANDARD_OPS = (
    "zero",
    "sep_conv_3x3",
    "sep_conv_5x5",
    "dil_conv_3x3",
    "dil_conv_5x5",
    "max_pool_3x3",
    "avg_pool_3x3",
    "identity",
)
EXTENDED_OPS = STANDARD_OPS + (
    "conv_1x1",
    "conv_3x3",
    "conv_1x3_3x1",
    "conv_1x5_5x1",
    "conv_1x7_7x1",
)
PARAMETER_FREE = frozenset({"zero", "max_pool_3x3", "avg_pool_3x3", "identity"})


class OperationKind(NamedTuple):
    tag: str
    parameterized: bool


class EdgeId(NamedTuple):
    src: int
    dst: int


def operation(tag: str) -> OperationKind:
    if tag not in EXTENDED_OPS:
        raise ValueError(f"unknown operation {tag!r}")
    return OperationKind(tag, tag not in PARAMETER_FREE)


@dataclass(frozen=True)
class SearchSpaceConfig:
    """Cell size plus operation catalog.

    ``ops`` optionally restricts the catalog to a subset (kept in catalog
    order); desk-scale experiments use this for 3- and 5-op spaces.
    """

    n_nodes: int = 6
    op_set: str = "standard"
    include_zero: bool = True
    ops: tuple[str, ...] | None = field(default=None)

    def __post_init__(self):
        if self.n_nodes < 3:
            raise ValueError(f"n_nodes must be >= 3, got {self.n_nodes}")
        if self.op_set not in ("standard", "extended"):
            raise ValueError(f"op_set must be 'standard' or 'extended', got {self.op_set!r}")
        if self.ops is not None:
            object.__setattr__(self, "ops", tuple(self.ops))
            base = STANDARD_OPS if self.op_set == "standard" else EXTENDED_OPS
            unknown = [t for t in self.ops if t not in base]
            if unknown:
                raise ValueError(f"ops {unknown} are not in the {self.op_set} catalog")
            if len(set(self.ops)) != len(self.ops) or not self.ops:
                raise ValueError("ops must be a non-empty list without duplicates")
            if "zero" in self.ops and not self.include_zero:
                raise ValueError("ops lists 'zero' but include_zero is false")

    @property
    def catalog(self) -> list[OperationKind]:
        return op_catalog(self)

    @property
    def op_tags(self) -> list[str]:
        return [op.tag for op in op_catalog(self)]

    @property
    def K(self) -> int:
        return len(op_catalog(self))

    @property
    def K_bar(self) -> int:
        return sum(op.parameterized for op in op_catalog(self))

    @property
    def edges(self) -> list[EdgeId]:
        return list_edges(self)

    @property
    def intermediate_nodes(self) -> list[int]:
        return list(range(3, self.n_nodes + 1))

    def edges_into(self, node: int) -> list[int]:
        """Row indices (into the edge list) of the edges ending at ``node``."""
        return [e for e, edge in enumerate(list_edges(self)) if edge.dst == node]

    def to_json(self) -> dict:
        return {
            "n_nodes": self.n_nodes,
            "op_set": self.op_set,
            "include_zero": self.include_zero,
            "ops": self.op_tags,
            "edges": [[e.src, e.dst] for e in list_edges(self)],
        }

    @classmethod
    def from_json(cls, obj: dict) -> SearchSpaceConfig:
        ops = obj.get("ops")
        return cls(obj["n_nodes"], obj["op_set"], obj["include_zero"], tuple(ops) if ops else None)


def list_edges(config: SearchSpaceConfig) -> list[EdgeId]:
    return [EdgeId(i, j) for j in range(3, config.n_nodes + 1) for i in range(1, j)]


def op_catalog(config: SearchSpaceConfig) -> list[OperationKind]:
    tags = STANDARD_OPS if config.op_set == "standard" else EXTENDED_OPS
    if config.ops is not None:
        tags = [t for t in tags if t in config.ops]
    return [operation(t) for t in tags if config.include_zero or t != "zero"]


@dataclass(frozen=True)
class WeightCounts:
    unshared: int
    shared: int
    unshared_dag: int


def shared_weight_count(config: SearchSpaceConfig) -> WeightCounts:
    """Weight-bundle counts per cell with and without feature sharing.

    ``unshared`` uses the all-pairs edge count C(n, 2); ``unshared_dag``
    uses the edges this package actually builds (input-input pair excluded).
    """
    k_bar = config.K_bar
    n = config.n_nodes
    return WeightCounts(comb(n, 2) * k_bar, (n - 1) * k_bar, len(list_edges(config)) * k_bar)
