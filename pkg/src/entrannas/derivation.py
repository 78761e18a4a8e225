"""Discrete architecture extraction and genotype I/O."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor
from .relaxation import KINDS, ConnectionActivations
from .search_space import SearchSpaceConfig

# node j -> sorted tuple of (source i, op tag); nodes are 1-based
CellGenotype = dict[int, tuple[tuple[int, str], ...]]


class GenotypeError(ValueError):
    pass


def _values(acts, attr: str) -> np.ndarray:
    if isinstance(acts, ConnectionActivations):
        tensor = getattr(acts, attr)
        if tensor is None:
            raise GenotypeError(f"activations carry no {attr!r} field")
        return tensor.data
    if isinstance(acts, Tensor):
        return acts.data
    return np.asarray(acts, dtype=np.float64)


def validate_cell(cell: CellGenotype, space: SearchSpaceConfig) -> None:
    tags = set(space.op_tags)
    if sorted(cell) != space.intermediate_nodes:
        raise GenotypeError(f"genotype nodes {sorted(cell)} do not match intermediate nodes {space.intermediate_nodes}")
    for j, conns in cell.items():
        if not conns:
            raise GenotypeError(f"node {j} has no incoming connection")
        if len(set(conns)) != len(conns):
            raise GenotypeError(f"node {j} lists a connection twice")
        for i, tag in conns:
            if not 1 <= i < j:
                raise GenotypeError(f"connection ({i}, {tag}) into node {j} is not an edge")
            if tag not in tags:
                raise GenotypeError(f"operation {tag!r} into node {j} is not in the catalog")


@dataclass
class Genotype:
    normal: CellGenotype
    reduction: CellGenotype

    def cell(self, kind: str) -> CellGenotype:
        return self.normal if kind == "normal" else self.reduction

    def validate(self, space: SearchSpaceConfig) -> None:
        for kind in KINDS:
            validate_cell(self.cell(kind), space)

    def active_counts(self, kind: str) -> list[int]:
        cell = self.cell(kind)
        return [len(cell[j]) for j in sorted(cell)]

    def n_connections(self, kind: str) -> int:
        return sum(self.active_counts(kind))

    def to_json(self) -> dict:
        return {
            kind: [[j, [[i, tag] for i, tag in self.cell(kind)[j]]] for j in sorted(self.cell(kind))]
            for kind in KINDS
        }

    @classmethod
    def from_json(cls, obj: dict) -> Genotype:
        if "genotype" in obj:
            obj = obj["genotype"]
        try:
            cells = {
                kind: {int(j): tuple((int(i), str(tag)) for i, tag in conns) for j, conns in obj[kind]}
                for kind in KINDS
            }
        except (KeyError, TypeError, ValueError) as exc:
            raise GenotypeError(f"malformed genotype JSON: {exc}") from None
        return cls(cells["normal"], cells["reduction"])

    def dumps(self) -> str:
        return json.dumps(self.to_json())


def _canonical(conns) -> tuple[tuple[int, str], ...]:
    return tuple(sorted(conns, key=lambda c: c[0]))


def derive_top2(p, space: SearchSpaceConfig) -> CellGenotype:
    """Keep the two strongest non-zero-op connections into every node.

    Ties break toward the lower source, then the lower op index.
    """
    p = _values(p, "p")
    tags = space.op_tags
    edges = space.edges
    cell: CellGenotype = {}
    for j in space.intermediate_nodes:
        ranked = sorted(
            (-p[e, k], edges[e].src, k)
            for e in space.edges_into(j)
            for k, tag in enumerate(tags)
            if tag != "zero"
        )
        chosen = sorted((src, k) for _, src, k in ranked[:2])
        cell[j] = tuple((src, tags[k]) for src, k in chosen)
    return cell


def derive_dst(q_hat, space: SearchSpaceConfig) -> CellGenotype:
    """Keep every connection whose coefficient is non-zero."""
    q_hat = _values(q_hat, "q_hat")
    tags = space.op_tags
    edges = space.edges
    cell: CellGenotype = {}
    for j in space.intermediate_nodes:
        cell[j] = tuple(
            (edges[e].src, tags[k])
            for e in space.edges_into(j)
            for k in range(len(tags))
            if q_hat[e, k] > 0
        )
        if not cell[j]:
            raise GenotypeError(f"node {j} lost every connection")
    return cell


def _dot_name(node: int) -> str:
    if node == 1:
        return "c_{k-2}"
    if node == 2:
        return "c_{k-1}"
    return f"n{node - 2}"


def export_dot(genotype: Genotype, kind: str) -> str:
    cell = genotype.cell(kind)
    for j, conns in cell.items():
        if not conns:
            raise GenotypeError(f"node {j} has no incoming connection")
    lines = [f"digraph {kind} {{", "  rankdir=LR;", "  node [shape=box];"]
    lines += [f'  "{_dot_name(n)}";' for n in (1, 2, *sorted(cell))]
    lines.append('  "out";')
    for j in sorted(cell):
        for i, tag in sorted(cell[j]):
            lines.append(f'  "{_dot_name(i)}" -> "{_dot_name(j)}" [label="{tag}"];')
    for j in sorted(cell):
        lines.append(f'  "{_dot_name(j)}" -> "out";')
    lines.append("}")
    return "\n".join(lines) + "\n"


@dataclass
class HistoryEntry:
    epoch: int
    genotype: Genotype
    counts: dict[str, list[int]]


@dataclass
class DerivationHistory:
    entries: list[HistoryEntry] = field(default_factory=list)

    def __len__(self):
        return len(self.entries)

    def to_json(self) -> list:
        return [
            {"epoch": e.epoch, "genotype": e.genotype.to_json(), "counts": e.counts}
            for e in self.entries
        ]

    @classmethod
    def from_json(cls, obj: list) -> DerivationHistory:
        return cls([HistoryEntry(e["epoch"], Genotype.from_json(e["genotype"]), e["counts"]) for e in obj])


def record_history(history: DerivationHistory, epoch: int, genotype: Genotype) -> DerivationHistory:
    if history.entries and epoch <= history.entries[-1].epoch:
        raise ValueError(f"epoch {epoch} does not follow last recorded epoch {history.entries[-1].epoch}")
    counts = {kind: genotype.active_counts(kind) for kind in KINDS}
    history.entries.append(HistoryEntry(epoch, genotype, counts))
    return history
