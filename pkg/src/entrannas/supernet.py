"""Engine/Transit-cell super-net with feature sharing and bottlenecks.

An Engine-cell mixes every (source, op) feature with the relaxed
coefficients; a Transit-cell only runs the connections of the genotype
currently derived from the architecture parameters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import autodiff as ad
from . import ops
from .autodiff import Tensor
from .derivation import CellGenotype, Genotype, derive_dst, derive_top2
from .relaxation import KINDS, ArchParams, ConnectionActivations
from .search_space import SearchSpaceConfig

ENGINE_PLACEMENTS = ("first", "last", "half", "all")
MODES = ("entran", "dst", "darts_baseline")
TRANSIT_COEFFICIENTS = ("unit", "qhat")


@dataclass(frozen=True)
class SupernetConfig:
    """Macro-network settings.

    ``bottleneck_ratio == 1`` builds no bottleneck at all. ``darts_baseline``
    treats every cell as an Engine-cell with per-edge weights and a fixed
    temperature of 1, whatever ``engine_placement`` and ``feature_sharing`` say.
    """

    n_cells: int = 5
    init_channels: int = 8
    bottleneck_ratio: int = 1
    engine_placement: str = "first"
    mode: str = "entran"
    feature_sharing: bool = True
    transit_coefficient: str = "unit"

    def __post_init__(self):
        if self.n_cells < 1:
            raise ValueError(f"n_cells must be >= 1, got {self.n_cells}")
        if self.init_channels < 1:
            raise ValueError(f"init_channels must be >= 1, got {self.init_channels}")
        if self.bottleneck_ratio < 1:
            raise ValueError(f"bottleneck_ratio must be >= 1, got {self.bottleneck_ratio}")
        if self.engine_placement not in ENGINE_PLACEMENTS:
            raise ValueError(f"engine_placement must be one of {ENGINE_PLACEMENTS}, got {self.engine_placement!r}")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.transit_coefficient not in TRANSIT_COEFFICIENTS:
            raise ValueError(f"transit_coefficient must be one of {TRANSIT_COEFFICIENTS}")

    @property
    def dst(self) -> bool:
        return self.mode == "dst"

    @property
    def sharing(self) -> bool:
        return self.feature_sharing and self.mode != "darts_baseline"

    @property
    def placement(self) -> str:
        return "all" if self.mode == "darts_baseline" else self.engine_placement


@dataclass(frozen=True)
class CellSpec:
    role: str
    kind: str
    index: int


def reduction_indices(n_cells: int) -> set[int]:
    return {n_cells // 3, 2 * n_cells // 3}


def cell_layout(n_cells: int, placement: str) -> list[CellSpec]:
    """Reductions sit at 1/3 and 2/3 depth; engines follow ``placement`` per kind."""
    reductions = reduction_indices(n_cells)
    kinds = ["reduction" if i in reductions else "normal" for i in range(n_cells)]
    engines: set[int] = set()
    for kind in KINDS:
        idx = [i for i, k in enumerate(kinds) if k == kind]
        if not idx:
            continue
        if placement == "first":
            engines.add(idx[0])
        elif placement == "last":
            engines.add(idx[-1])
        elif placement == "half":
            engines.update(idx[: math.ceil(len(idx) / 2)])
        else:
            engines.update(idx)
    return [CellSpec("engine" if i in engines else "transit", kinds[i], i) for i in range(n_cells)]


def bottleneck_kernels(channels: int, ratio: int, rng: np.random.Generator) -> dict[str, Tensor]:
    if channels % ratio:
        raise ValueError(f"bottleneck: {channels} channels are not divisible by ratio {ratio}")
    inner = channels // ratio
    return {
        "reduce": Tensor(ops.he_normal((inner, channels, 1, 1), channels, rng), requires_grad=True),
        "recover": Tensor(ops.he_normal((channels, inner, 1, 1), inner, rng), requires_grad=True),
    }


def bottleneck_wrap(node_value: Tensor, ratio: int, kernels: dict[str, Tensor], op: Callable[[Tensor], Tensor]) -> Tensor:
    """1x1 reduce, then ``op`` at C/ratio channels, then 1x1 recover."""
    if node_value.shape[1] % ratio:
        raise ValueError(f"bottleneck: {node_value.shape[1]} channels are not divisible by ratio {ratio}")
    return ad.conv2d(op(ad.conv2d(node_value, kernels["reduce"])), kernels["recover"])


class Cell:
    def __init__(self, spec: CellSpec, space: SearchSpaceConfig, config: SupernetConfig,
                 c_pp: int, c_p: int, channels: int, reduction_prev: bool,
                 rng: np.random.Generator, register: Callable[[str, np.ndarray], Tensor]):
        self.spec = spec
        self.space = space
        self.sharing = config.sharing
        self.reduction = spec.kind == "reduction"
        self.reduction_prev = reduction_prev
        self.ratio = config.bottleneck_ratio
        self.channels = channels
        self.tags = space.op_tags
        self.edges = space.edges
        self.nodes = space.intermediate_nodes
        self.edge_index = {(e.src, e.dst): n for n, e in enumerate(self.edges)}
        self.node_edges = {j: space.edges_into(j) for j in self.nodes}
        if channels % self.ratio:
            raise ValueError(f"bottleneck: {channels} channels are not divisible by ratio {self.ratio}")
        inner = channels // self.ratio
        p = f"cells.{spec.index}"

        self.pre0 = register(f"{p}.pre0", ops.he_normal((channels, c_pp, 1, 1), c_pp, rng))
        self.pre1 = register(f"{p}.pre1", ops.he_normal((channels, c_p, 1, 1), c_p, rng))
        owners = range(1, space.n_nodes) if self.sharing else range(len(self.edges))
        self.op_weights: dict[tuple[int, str], dict[str, Tensor]] = {}
        for owner in owners:
            name = f"src{owner}" if self.sharing else f"edge{owner}"
            for tag in self.tags:
                self.op_weights[(owner, tag)] = {
                    w: register(f"{p}.op.{name}.{tag}.{w}", arr)
                    for w, arr in ops.init_weights(tag, inner, rng).items()
                }
        self.reduce: dict[int, Tensor] = {}
        self.recover: dict[int, Tensor] = {}
        if self.ratio > 1:
            for src in range(1, space.n_nodes):
                self.reduce[src] = register(f"{p}.reduce{src}", ops.he_normal((inner, channels, 1, 1), channels, rng))
            for j in self.nodes:
                self.recover[j] = register(f"{p}.recover{j}", ops.he_normal((channels, inner, 1, 1), inner, rng))
        self.invocations = 0

    @property
    def out_channels(self) -> int:
        return len(self.nodes) * self.channels

    @property
    def weight_bundles(self) -> int:
        return sum(1 for w in self.op_weights.values() if w)

    def _inputs(self, s0: Tensor, s1: Tensor) -> dict[int, Tensor]:
        if s0.shape[0] != s1.shape[0]:
            raise ad.ShapeError(f"cell {self.spec.index}: input batches {s0.shape} and {s1.shape} differ")
        s0 = ad.normalize(ad.conv2d(ad.relu(s0), self.pre0, stride=2 if self.reduction_prev else 1))
        s1 = ad.normalize(ad.conv2d(ad.relu(s1), self.pre1))
        if s0.shape != s1.shape:
            raise ad.ShapeError(f"cell {self.spec.index}: preprocessed inputs {s0.shape} and {s1.shape} differ")
        return {1: s0, 2: s1}

    def shared_features(self, states, cache, reduced, src: int, edge: int, k: int) -> Tensor | None:
        """Feature of op ``k`` on node ``src``, computed once per forward pass."""
        key = (src, k) if self.sharing else (edge, k)
        if key in cache:
            return cache[key]
        self.invocations += 1
        tag = self.tags[k]
        stride = 2 if self.reduction and src <= 2 else 1
        feat = None
        if tag != "zero":
            x = states[src]
            if self.ratio > 1:
                if src not in reduced:
                    reduced[src] = ad.conv2d(x, self.reduce[src])
                x = reduced[src]
            feat = ops.apply(tag, x, self.op_weights[(key[0], tag)], stride)
        cache[key] = feat
        return feat

    def _node(self, j: int, states, terms: list[Tensor], coeff: Tensor) -> Tensor:
        if not terms:
            ref = states[2]
            stride = 2 if self.reduction else 1
            return ops.zeros_like_output(ref, stride)
        node = ad.weighted_sum(coeff, terms)
        if self.ratio > 1:
            node = ad.conv2d(node, self.recover[j])
        return node

    def engine_forward(self, s0: Tensor, s1: Tensor, coeffs: Tensor, skip_zero: bool = False) -> Tensor:
        """Relaxed DAG: every connection weighted by its coefficient.

        With ``skip_zero`` connections whose coefficient is exactly 0 are
        never evaluated, so they contribute nothing forward or backward.
        """
        self.invocations = 0
        states = self._inputs(s0, s1)
        cache, reduced = {}, {}
        cdata = coeffs.data
        for j in self.nodes:
            terms, rows, cols = [], [], []
            for e in self.node_edges[j]:
                src = self.edges[e].src
                for k in range(len(self.tags)):
                    if skip_zero and cdata[e, k] == 0:
                        continue
                    feat = self.shared_features(states, cache, reduced, src, e, k)
                    if feat is None:
                        continue
                    terms.append(feat)
                    rows.append(e)
                    cols.append(k)
            coeff = ad.index(coeffs, (np.array(rows, dtype=int), np.array(cols, dtype=int)))
            states[j] = self._node(j, states, terms, coeff)
        return ad.concat([states[j] for j in self.nodes], axis=1)

    def transit_forward(self, s0: Tensor, s1: Tensor, genotype: CellGenotype,
                        coefficients: np.ndarray | None = None) -> Tensor:
        """Derived sub-graph only; coefficient 1 unless explicit values are given."""
        self.invocations = 0
        states = self._inputs(s0, s1)
        cache, reduced = {}, {}
        tag_index = {t: k for k, t in enumerate(self.tags)}
        for j in self.nodes:
            conns = genotype.get(j)
            if not conns:
                raise ValueError(f"cell {self.spec.index}: genotype gives node {j} no connection")
            terms, coefs = [], []
            for src, tag in conns:
                if (src, j) not in self.edge_index or tag not in tag_index:
                    raise ValueError(f"cell {self.spec.index}: unknown connection ({src}, {tag}) into node {j}")
                e, k = self.edge_index[(src, j)], tag_index[tag]
                feat = self.shared_features(states, cache, reduced, src, e, k)
                if feat is None:
                    continue
                terms.append(feat)
                coefs.append(1.0 if coefficients is None else coefficients[e, k])
            states[j] = self._node(j, states, terms, Tensor(np.array(coefs)))
        return ad.concat([states[j] for j in self.nodes], axis=1)


class Supernet:
    def __init__(self, space: SearchSpaceConfig, config: SupernetConfig, in_channels: int,
                 num_classes: int, seed: int = 0, tau: float = 5.0):
        if config.dst and space.include_zero:
            raise ValueError("dst mode requires include_zero = false")
        self.space = space
        self.config = config
        self.num_classes = num_classes
        rng = np.random.default_rng(seed)
        self.params: dict[str, Tensor] = {}
        c = config.init_channels
        self.stem = self._register("stem", ops.he_normal((c, in_channels, 3, 3), 9 * in_channels, rng))
        self.cells: list[Cell] = []
        c_pp, c_p, c_cur, reduction_prev = c, c, c, False
        for spec in cell_layout(config.n_cells, config.placement):
            if spec.kind == "reduction":
                c_cur *= 2
            cell = Cell(spec, space, config, c_pp, c_p, c_cur, reduction_prev, rng, self._register)
            self.cells.append(cell)
            reduction_prev = spec.kind == "reduction"
            c_pp, c_p = c_p, cell.out_channels
        self.fc_w = self._register("classifier.w", rng.standard_normal((num_classes, c_p)) / np.sqrt(c_p))
        self.fc_b = self._register("classifier.b", np.zeros(num_classes))
        self.arch = ArchParams.initialize(space, tau, config.dst, rng)
        self.genotype: Genotype | None = None

    def _register(self, name: str, value: np.ndarray) -> Tensor:
        if name in self.params:
            raise KeyError(f"duplicate parameter {name}")
        t = Tensor(np.asarray(value, dtype=np.float64), requires_grad=True, name=name)
        self.params[name] = t
        return t

    def weights(self) -> list[Tensor]:
        return list(self.params.values())

    def n_weights(self) -> int:
        return sum(t.size for t in self.params.values())

    @property
    def invocations(self) -> int:
        return sum(cell.invocations for cell in self.cells)

    @property
    def temperature(self) -> float:
        return 1.0 if self.config.mode == "darts_baseline" else self.arch.tau

    def activations(self, kind: str) -> ConnectionActivations:
        return self.arch.activations(kind, self.space, self.temperature)

    def derive(self, acts: dict[str, ConnectionActivations] | None = None) -> Genotype:
        acts = dict(acts or {})
        cells = {}
        for kind in KINDS:
            if kind not in acts:
                with ad.no_grad():
                    acts[kind] = self.activations(kind)
            a = acts[kind]
            cells[kind] = derive_dst(a, self.space) if self.config.dst else derive_top2(a, self.space)
        return Genotype(cells["normal"], cells["reduction"])

    def forward(self, x, genotype: Genotype | None = None, coefficient: str | None = None) -> Tensor:
        """Class logits.

        With ``genotype`` every cell runs as a Transit-cell on that genotype
        (child-net inference). ``coefficient`` overrides the transit mode.
        """
        x = ad.as_tensor(x)
        if x.ndim != 4 or x.shape[1] != self.stem.shape[1]:
            raise ad.ShapeError(f"forward: expected (N, {self.stem.shape[1]}, H, W) input, got {x.shape}")
        coefficient = coefficient or self.config.transit_coefficient
        qhat_transit = coefficient == "qhat" and self.config.dst
        child = genotype is not None
        acts: dict[str, ConnectionActivations] = {}
        for kind in KINDS:
            if not child and any(c.spec.role == "engine" and c.spec.kind == kind for c in self.cells):
                acts[kind] = self.activations(kind)
        if not child or qhat_transit:
            with ad.no_grad():
                for kind in KINDS:
                    if kind not in acts:
                        acts[kind] = self.activations(kind)
        if not child:
            genotype = self.derive(acts)
        self.genotype = genotype

        s0 = s1 = ad.normalize(ad.conv2d(x, self.stem, padding=1))
        for cell in self.cells:
            kind = cell.spec.kind
            if cell.spec.role == "engine" and not child:
                out = cell.engine_forward(s0, s1, acts[kind].coefficients, skip_zero=self.config.dst)
            else:
                values = acts[kind].q_hat.data if qhat_transit else None
                out = cell.transit_forward(s0, s1, genotype.cell(kind), values)
            s0, s1 = s1, out
        pooled = ad.mean(s1, axis=(2, 3))
        return ad.linear(pooled, self.fc_w, self.fc_b)

    __call__ = forward
