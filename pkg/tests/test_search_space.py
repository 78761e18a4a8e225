import json
from math import comb

import pytest
from hypothesis import given, strategies as st

from entrannas.search_space import (EXTENDED_OPS, STANDARD_OPS, EdgeId, SearchSpaceConfig, list_edges, op_catalog,
                                    shared_weight_count)


def test_smallest_cell_edges():
    assert list_edges(SearchSpaceConfig(n_nodes=3)) == [EdgeId(1, 3), EdgeId(2, 3)]


def test_six_node_edge_count():
    assert len(list_edges(SearchSpaceConfig(n_nodes=6))) == 14


@given(st.integers(3, 12))
def test_edge_count_and_order(n):
    edges = list_edges(SearchSpaceConfig(n_nodes=n))
    assert len(edges) == n * (n - 1) // 2 - 1 == comb(n, 2) - 1
    assert edges == sorted(edges, key=lambda e: (e.dst, e.src))
    assert EdgeId(1, 2) not in edges
    assert all(e.src < e.dst and e.dst >= 3 for e in edges)
    for j in range(3, n + 1):
        assert sum(e.dst == j for e in edges) >= 2


@pytest.mark.parametrize("op_set,include_zero,count", [
    ("standard", True, 8), ("extended", True, 13), ("standard", False, 7), ("extended", False, 12),
])
def test_catalog_sizes(op_set, include_zero, count):
    assert len(op_catalog(SearchSpaceConfig(op_set=op_set, include_zero=include_zero))) == count


def test_catalog_order_is_declaration_order():
    assert SearchSpaceConfig().op_tags == list(STANDARD_OPS)
    assert SearchSpaceConfig(op_set="extended").op_tags == list(EXTENDED_OPS)
    assert "zero" not in SearchSpaceConfig(include_zero=False).op_tags


def test_parameterized_classification():
    cat = {op.tag: op.parameterized for op in op_catalog(SearchSpaceConfig(op_set="extended"))}
    assert not any(cat[t] for t in ("zero", "identity", "max_pool_3x3", "avg_pool_3x3"))
    assert all(v for t, v in cat.items() if "conv" in t)
    assert SearchSpaceConfig().K_bar == 4


def test_shared_weight_counts():
    six = shared_weight_count(SearchSpaceConfig(n_nodes=6))
    assert (six.unshared, six.shared) == (60, 20)
    assert six.unshared_dag == 56
    three = shared_weight_count(SearchSpaceConfig(n_nodes=3, ops=("zero", "sep_conv_3x3", "identity")))
    assert (three.unshared, three.shared) == (3, 2)
    free = shared_weight_count(SearchSpaceConfig(ops=("zero", "identity")))
    assert (free.unshared, free.shared) == (0, 0)


def test_op_subset_keeps_catalog_order():
    space = SearchSpaceConfig(ops=("identity", "sep_conv_3x3", "zero"))
    assert space.op_tags == ["zero", "sep_conv_3x3", "identity"]


@pytest.mark.parametrize("kwargs", [
    dict(n_nodes=2), dict(op_set="tiny"), dict(ops=("conv_3x3",)), dict(ops=()),
    dict(ops=("zero",), include_zero=False), dict(ops=("identity", "identity")),
])
def test_invalid_configs(kwargs):
    with pytest.raises(ValueError):
        SearchSpaceConfig(**kwargs)


def test_json_round_trip():
    space = SearchSpaceConfig(n_nodes=4, include_zero=False, ops=("sep_conv_3x3", "identity"))
    obj = json.loads(json.dumps(space.to_json()))
    assert obj["edges"] == [[1, 3], [2, 3], [1, 4], [2, 4], [3, 4]]
    assert SearchSpaceConfig.from_json(obj) == space
