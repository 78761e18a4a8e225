import numpy as np
import pytest

from entrannas import autodiff as ad
from entrannas.autodiff import Tensor
from entrannas.derivation import derive_dst
from entrannas.search_space import SearchSpaceConfig
from entrannas.supernet import (Cell, CellSpec, Supernet, SupernetConfig, bottleneck_kernels, bottleneck_wrap,
                                cell_layout)

DST_SPACE = SearchSpaceConfig(n_nodes=4, include_zero=False, ops=("sep_conv_3x3", "max_pool_3x3", "identity"))


def roles(n, placement):
    return [(c.role[0], c.kind[0]) for c in cell_layout(n, placement)]


def test_layout_first_placement():
    layout = cell_layout(8, "first")
    assert [c.index for c in layout if c.kind == "reduction"] == [2, 5]
    assert [c.index for c in layout if c.role == "engine"] == [0, 2]


def test_layout_other_placements():
    assert [c.index for c in cell_layout(8, "last") if c.role == "engine"] == [5, 7]
    # six normal cells -> three engines, two reduction cells -> one
    assert [c.index for c in cell_layout(8, "half") if c.role == "engine"] == [0, 1, 2, 3]
    assert all(c.role == "engine" for c in cell_layout(8, "all"))
    assert roles(1, "first") == [("e", "r")]


def _cell(space, sharing=True, channels=4, ratio=1, reduction=False, seed=0):
    cfg = SupernetConfig(feature_sharing=sharing, bottleneck_ratio=ratio)
    rng = np.random.default_rng(seed)
    store = {}

    def register(name, value):
        store[name] = Tensor(value, requires_grad=True, name=name)
        return store[name]

    spec = CellSpec("engine", "reduction" if reduction else "normal", 0)
    return Cell(spec, space, cfg, channels, channels, channels, False, rng, register), store


def _inputs(seed=1, shape=(2, 4, 6, 6)):
    rng = np.random.default_rng(seed)
    return Tensor(rng.standard_normal(shape)), Tensor(rng.standard_normal(shape))


@pytest.mark.parametrize("sharing,expected", [(True, 40), (False, 112)])
def test_invocation_counts(sharing, expected):
    space = SearchSpaceConfig(n_nodes=6)
    cell, _ = _cell(space, sharing)
    s0, s1 = _inputs()
    coeffs = Tensor(np.full((len(space.edges), space.K), 1 / space.K))
    with ad.no_grad():
        cell.engine_forward(s0, s1, coeffs)
    assert cell.invocations == expected


def test_weight_bundles_follow_sharing():
    space = SearchSpaceConfig(n_nodes=6)
    assert _cell(space, True)[0].weight_bundles == 5 * 4
    assert _cell(space, False)[0].weight_bundles == 14 * 4


def test_shared_feature_is_cached_and_identity_passes_through():
    space = SearchSpaceConfig(n_nodes=4, ops=("sep_conv_3x3", "identity"))
    cell, _ = _cell(space)
    states = cell._inputs(*_inputs())
    cache = {}
    a = cell.shared_features(states, cache, {}, 1, 0, 0)
    b = cell.shared_features(states, cache, {}, 1, 2, 0)
    assert a is b and cell.invocations == 1
    assert cell.shared_features(states, cache, {}, 1, 0, 1) is states[1]


def test_engine_uniform_identity_hand_sum():
    space = SearchSpaceConfig(n_nodes=5, ops=("identity",))
    cell, _ = _cell(space)
    s0, s1 = _inputs()
    coeffs = Tensor(np.ones((len(space.edges), 1)))
    with ad.no_grad():
        out = cell.engine_forward(s0, s1, coeffs).data
        st = cell._inputs(s0, s1)
    x1, x2 = st[1].data, st[2].data
    x3 = x1 + x2
    x4 = x1 + x2 + x3
    x5 = x1 + x2 + x3 + x4
    np.testing.assert_allclose(out, np.concatenate([x3, x4, x5], axis=1), atol=1e-12)


def _random_dst(rng, space):
    from entrannas.relaxation import full_dst_chain
    alpha = Tensor(rng.normal(0, 2, (len(space.edges), space.K)))
    beta = Tensor(rng.normal(1, 2, space.n_nodes - 2))
    return full_dst_chain(alpha, beta, float(rng.uniform(0.1, 3)), space)


@pytest.mark.parametrize("seed", range(20))
def test_dst_engine_equals_qhat_transit(seed):
    rng = np.random.default_rng(seed)
    cell, _ = _cell(DST_SPACE, seed=seed, reduction=bool(seed % 2))
    acts = _random_dst(rng, DST_SPACE)
    s0, s1 = _inputs(seed)
    with ad.no_grad():
        eng = cell.engine_forward(s0, s1, acts.q_hat, skip_zero=True).data
        tra = cell.transit_forward(s0, s1, derive_dst(acts, DST_SPACE), acts.q_hat.data).data
    assert np.abs(eng - tra).max() <= 1e-9


def test_pruned_connections_get_no_gradient():
    rng = np.random.default_rng(3)
    cell, store = _cell(DST_SPACE)
    q_hat = np.zeros((len(DST_SPACE.edges), DST_SPACE.K))
    q_hat[0, 2] = 1.0  # (1,3) identity
    q_hat[4, 0] = 1.0  # (3,4) sep_conv from node 3
    s0, s1 = _inputs(4)
    ad.backward(ad.tsum(cell.engine_forward(s0, s1, Tensor(q_hat), skip_zero=True)))
    assert store["cells.0.op.src3.sep_conv_3x3.dw"].grad is not None
    for src in (1, 2):
        assert store[f"cells.0.op.src{src}.sep_conv_3x3.dw"].grad is None


def test_transit_rejects_bad_genotypes():
    cell, _ = _cell(DST_SPACE)
    s0, s1 = _inputs()
    with pytest.raises(ValueError):
        cell.transit_forward(s0, s1, {3: (), 4: ((1, "identity"),)})
    with pytest.raises(ValueError):
        cell.transit_forward(s0, s1, {3: ((1, "conv_3x3"),), 4: ((1, "identity"),)})
    with pytest.raises(ValueError):
        cell.transit_forward(s0, s1, {3: ((3, "identity"),), 4: ((1, "identity"),)})


def test_transit_identity_chain():
    cell, _ = _cell(DST_SPACE)
    s0, s1 = _inputs()
    with ad.no_grad():
        out = cell.transit_forward(s0, s1, {3: ((1, "identity"), (2, "identity")), 4: ((3, "identity"),)}).data
        st = cell._inputs(s0, s1)
    x3 = st[1].data + st[2].data
    np.testing.assert_allclose(out, np.concatenate([x3, x3], axis=1))


def test_bottleneck_shapes_and_errors():
    rng = np.random.default_rng(0)
    k = bottleneck_kernels(16, 4, rng)
    seen = []
    out = bottleneck_wrap(Tensor(np.ones((1, 16, 3, 3))), 4, k, lambda h: seen.append(h.shape) or h)
    assert seen == [(1, 4, 3, 3)] and out.shape == (1, 16, 3, 3)
    with pytest.raises(ValueError):
        bottleneck_kernels(6, 4, rng)
    with pytest.raises(ValueError):
        Supernet(SearchSpaceConfig(n_nodes=3), SupernetConfig(n_cells=3, init_channels=6, bottleneck_ratio=4), 1, 2)


def test_bottleneck_ops_run_narrow():
    space = SearchSpaceConfig(n_nodes=4, ops=("sep_conv_3x3", "identity"))
    cell, store = _cell(space, channels=8, ratio=4)
    assert store["cells.0.op.src1.sep_conv_3x3.pw"].shape == (2, 2, 1, 1)
    s0, s1 = _inputs(shape=(2, 8, 4, 4))
    coeffs = Tensor(np.full((5, 2), 0.5))
    assert cell.engine_forward(s0, s1, coeffs).shape == (2, 16, 4, 4)


def test_one_cell_network_logits_shape():
    net = Supernet(SearchSpaceConfig(n_nodes=3), SupernetConfig(n_cells=1, init_channels=4), 1, 3)
    assert net(np.zeros((5, 1, 6, 6))).shape == (5, 3)
    with pytest.raises(ad.ShapeError):
        net(np.zeros((5, 2, 6, 6)))


def test_dst_requires_no_zero_op():
    with pytest.raises(ValueError):
        Supernet(SearchSpaceConfig(n_nodes=3), SupernetConfig(mode="dst"), 1, 2)


def test_darts_baseline_overrides_placement_and_sharing():
    cfg = SupernetConfig(mode="darts_baseline", engine_placement="first")
    assert cfg.placement == "all" and not cfg.sharing
    net = Supernet(SearchSpaceConfig(n_nodes=4), cfg, 1, 2)
    assert net.temperature == 1.0
    assert all(c.spec.role == "engine" for c in net.cells)


def test_child_forward_matches_engine_on_one_hot_p():
    # with saturated alpha and top-2 of a 2-edge node, engine mixture collapses onto the genotype
    space = SearchSpaceConfig(n_nodes=3, ops=("zero", "sep_conv_3x3", "identity"))
    net = Supernet(space, SupernetConfig(n_cells=2, init_channels=4), 1, 3, tau=1e-3)
    for kind in ("normal", "reduction"):
        net.arch.alpha[kind].data = np.array([[0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
    x = np.random.default_rng(0).standard_normal((2, 1, 6, 6))
    with ad.no_grad():
        sup = net(x).data
        child = net(x, genotype=net.derive()).data
    np.testing.assert_allclose(sup, child, atol=1e-9)


def test_supernet_gradient_check_small():
    space = SearchSpaceConfig(n_nodes=4, include_zero=False, ops=("sep_conv_3x3", "avg_pool_3x3", "identity"))
    net = Supernet(space, SupernetConfig(n_cells=1, init_channels=2, mode="dst"), 1, 3, tau=1.0)
    x = np.random.default_rng(1).standard_normal((2, 1, 4, 4))
    labels = np.array([0, 2])
    for name in ("cells.0.op.src1.sep_conv_3x3.dw", "stem", "classifier.w"):
        rep = ad.grad_check_param(lambda: ad.cross_entropy(net(x), labels), net.params[name])
        assert rep.passed and rep.checked > 0, (name, rep.max_rel_error)
    for t in net.arch.tensors():
        rep = ad.grad_check_param(lambda: ad.cross_entropy(net(x), labels), t)
        assert rep.passed, (t.name, rep.max_rel_error)
