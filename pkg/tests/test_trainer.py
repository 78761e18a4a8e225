import hashlib

import numpy as np
import pytest

from entrannas.data import load_dataset
from entrannas.search_space import SearchSpaceConfig
from entrannas.supernet import SupernetConfig
from entrannas.trainer import (NonFiniteLossError, SearchState, TrainerConfig, arch_penalty, arch_step,
                               metrics_csv, run_search, split_dataset, weight_step)

DST_SPACE = SearchSpaceConfig(n_nodes=4, include_zero=False, ops=("sep_conv_3x3", "max_pool_3x3", "identity"))
SMALL_NET = SupernetConfig(n_cells=3, init_channels=4, mode="dst")
DATA = load_dataset("synthetic:4,1,8,8,4,0")


def _hash(tensors):
    h = hashlib.sha256()
    for t in tensors:
        h.update(t.data.tobytes())
    return h.hexdigest()


@pytest.mark.parametrize("n,sizes", [(100, (50, 50)), (101, (51, 50))])
def test_split_sizes_and_disjointness(n, sizes):
    ds = load_dataset(f"synthetic:1,1,2,2,{n},0")
    ds.labels = np.arange(n)
    a, b = split_dataset(ds, 3)
    assert (len(a), len(b)) == sizes
    assert not set(a.labels) & set(b.labels)
    a2, _ = split_dataset(ds, 3)
    assert np.array_equal(a.labels, a2.labels)
    assert not np.array_equal(a.labels, split_dataset(ds, 4)[0].labels)


def test_split_rejects_tiny():
    with pytest.raises(ValueError):
        split_dataset(DATA.subset([0]), 0)


def _state(**kw):
    cfg = TrainerConfig(epochs=2, batch_size=4, **kw)
    return SearchState.create(cfg, DST_SPACE, SMALL_NET, 1, 4)


def test_weight_and_arch_steps_touch_only_their_parameters():
    state = _state()
    x, y = DATA.images[:4], DATA.labels[:4]
    arch, weights = _hash(state.arch_tensors), _hash(state.net.weights())
    weight_step(state, x, y)
    assert _hash(state.arch_tensors) == arch and _hash(state.net.weights()) != weights
    weights = _hash(state.net.weights())
    arch_step(state, x, y)
    assert _hash(state.net.weights()) == weights and _hash(state.arch_tensors) != arch


def test_penalty_alone_raises_mean_threshold_every_step():
    state = _state(lam=0.5, arch_weight_decay=0.0)
    means = [state.net.arch.thresholds().mean()]
    for _ in range(6):
        arch_step(state)
        means.append(state.net.arch.thresholds().mean())
    assert all(b > a for a, b in zip(means, means[1:]))


def test_no_regularizer_without_lambda():
    state = _state(lam=0.0, arch_weight_decay=0.0)
    assert arch_penalty(state).item() == 0.0
    before = _hash(state.arch_tensors)
    arch_step(state)
    assert _hash(state.arch_tensors) == before


def test_identical_batches_give_identical_weight_updates():
    a, b = _state(w_momentum=0.0), _state(w_momentum=0.0)
    x, y = DATA.images[:4], DATA.labels[:4]
    weight_step(a, x, y)
    weight_step(b, x, y)
    assert _hash(a.net.weights()) == _hash(b.net.weights())


def test_non_finite_loss_aborts():
    state = _state()
    state.net.params["classifier.b"].data[:] = np.nan
    with pytest.raises(NonFiniteLossError, match="epoch 0 step 0"):
        weight_step(state, DATA.images[:4], DATA.labels[:4])


def test_one_epoch_smoke_on_four_samples():
    cfg = TrainerConfig(epochs=1, batch_size=2)
    res = run_search(cfg, DST_SPACE, SMALL_NET, DATA.subset([0, 1, 2, 3]))
    assert len(res.history) == 1 and len(res.metrics) == 1
    assert res.metrics[0]["epoch"] == 1


def test_metrics_csv_is_reproducible(tmp_path):
    cfg = TrainerConfig(epochs=2, batch_size=4, lam=0.2)
    for name in ("a", "b"):
        run_search(cfg, DST_SPACE, SMALL_NET, DATA, out_dir=tmp_path / name)
    first = (tmp_path / "a" / "metrics.csv").read_bytes()
    assert first == (tmp_path / "b" / "metrics.csv").read_bytes()
    assert first.decode().splitlines()[0] == ("epoch,train_loss,val_loss,val_acc,tau,mean_t,"
                                              "active_edges_normal,active_edges_reduction")
    assert len(first.decode().splitlines()) == 3


def test_resume_matches_uninterrupted_run(tmp_path):
    cfg = TrainerConfig(epochs=4, batch_size=4, lam=0.2)
    full = run_search(cfg, DST_SPACE, SMALL_NET, DATA, out_dir=tmp_path / "full")
    part = run_search(cfg, DST_SPACE, SMALL_NET, DATA, out_dir=tmp_path / "part", stop_after=2)
    assert len(part.history) == 2
    resumed = run_search(cfg, DST_SPACE, SMALL_NET, DATA, out_dir=tmp_path / "part",
                         resume=tmp_path / "part" / "checkpoint.bin")
    assert resumed.genotype == full.genotype
    assert resumed.history == full.history
    assert metrics_csv(resumed.metrics) == metrics_csv(full.metrics)
    assert (tmp_path / "part" / "checkpoint.bin").read_bytes() == (tmp_path / "full" / "checkpoint.bin").read_bytes()


def test_non_dst_mean_threshold_is_nan():
    space = SearchSpaceConfig(n_nodes=3, ops=("zero", "identity", "max_pool_3x3"))
    res = run_search(TrainerConfig(epochs=1, batch_size=8), space, SupernetConfig(n_cells=2, init_channels=4),
                     DATA)
    assert np.isnan(res.metrics[0]["mean_t"])
    assert res.metrics[0]["tau"] == pytest.approx(5.0 * 0.923)
