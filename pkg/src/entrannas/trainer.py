"""Bi-level search: weight steps on one half of the data, architecture steps on the other."""

from __future__ import annotations

import logging
import math
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import checkpoint as ckpt
from .autodiff import Tensor
from .data import Dataset
from .derivation import DerivationHistory, Genotype, record_history
from .optim import SGD, Adam, clip_grad_norm, cosine_lr
from .relaxation import KINDS, TemperatureSchedule, anneal, node_threshold, sparsity_penalty
from .search_space import SearchSpaceConfig
from .supernet import Supernet, SupernetConfig

log = logging.getLogger(__name__)

METRIC_COLUMNS = ("epoch", "train_loss", "val_loss", "val_acc", "tau", "mean_t",
                  "active_edges_normal", "active_edges_reduction")


class NonFiniteLossError(FloatingPointError):
    pass


@dataclass(frozen=True)
class TrainerConfig:
    lam: float = 0.1
    epochs: int = 30
    batch_size: int = 8
    w_lr: float = 0.02
    w_momentum: float = 0.9
    w_weight_decay: float = 3e-4
    arch_lr: float = 3e-2
    arch_betas: tuple[float, float] = (0.5, 0.999)
    arch_weight_decay: float = 1e-3
    grad_clip: float = 5.0
    seed: int = 0
    arch_warmup: int = 0  # leading epochs with architecture steps switched off
    temperature: TemperatureSchedule = field(default_factory=TemperatureSchedule)

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError(f"lambda must be >= 0, got {self.lam}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if not 0 <= self.arch_warmup <= self.epochs:
            raise ValueError(f"arch_warmup must lie in [0, epochs], got {self.arch_warmup}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        object.__setattr__(self, "arch_betas", tuple(self.arch_betas))

    def to_json(self) -> dict:
        out = asdict(self)
        out["arch_betas"] = list(self.arch_betas)
        return out


def split_dataset(dataset: Dataset, seed: int) -> tuple[Dataset, Dataset]:
    """Seeded disjoint halves; the training half gets the odd sample."""
    n = len(dataset)
    if n < 2:
        raise ValueError(f"split_dataset: need at least 2 samples, got {n}")
    order = np.random.default_rng([seed, 0x5EED]).permutation(n)
    cut = (n + 1) // 2
    return dataset.subset(np.sort(order[:cut])), dataset.subset(np.sort(order[cut:]))


@contextmanager
def frozen(tensors):
    saved = [t.requires_grad for t in tensors]
    for t in tensors:
        t.requires_grad = False
    try:
        yield
    finally:
        for t, flag in zip(tensors, saved):
            t.requires_grad = flag


@dataclass
class SearchState:
    net: Supernet
    config: TrainerConfig
    w_opt: SGD
    a_opt: Adam
    epoch: int = 0  # epochs completed
    step: int = 0
    history: DerivationHistory = field(default_factory=DerivationHistory)
    metrics: list[dict] = field(default_factory=list)

    @classmethod
    def create(cls, config: TrainerConfig, space: SearchSpaceConfig, net_config: SupernetConfig,
               in_channels: int, num_classes: int) -> SearchState:
        net = Supernet(space, net_config, in_channels, num_classes, seed=config.seed,
                       tau=config.temperature.initial)
        w_opt = SGD(net.params, config.w_lr, config.w_momentum, config.w_weight_decay)
        arch = {t.name: t for t in net.arch.tensors()}
        a_opt = Adam(arch, config.arch_lr, config.arch_betas, weight_decay=config.arch_weight_decay)
        return cls(net, config, w_opt, a_opt)

    @property
    def arch_tensors(self) -> list[Tensor]:
        return self.net.arch.tensors()


def _finite(loss: Tensor, what: str, state: SearchState) -> None:
    if not np.isfinite(loss.data).all():
        raise NonFiniteLossError(f"non-finite {what} loss {loss.item()} at epoch {state.epoch} step {state.step}")


def weight_step(state: SearchState, images, labels) -> float:
    net = state.net
    with frozen(state.arch_tensors):
        state.w_opt.zero_grad()
        loss = ad.cross_entropy(net(images), labels)
        _finite(loss, "train", state)
        ad.backward(loss)
    clip_grad_norm(net.params, state.config.grad_clip)
    state.w_opt.step()
    return loss.item()


def arch_penalty(state: SearchState) -> Tensor:
    beta = state.net.arch.beta
    if beta is None or state.config.lam == 0:
        return Tensor(0.0)
    t = ad.concat([node_threshold(beta[k]) for k in KINDS])
    return sparsity_penalty(t, state.config.lam)


def arch_step(state: SearchState, images=None, labels=None) -> tuple[float, int]:
    """Adam step on alpha/beta. Without a batch only the regularizer acts."""
    net = state.net
    correct = 0
    with frozen(net.weights()):
        state.a_opt.zero_grad()
        if images is None:
            data_loss = Tensor(0.0)
        else:
            logits = net(images)
            data_loss = ad.cross_entropy(logits, labels)
            correct = int((logits.data.argmax(axis=1) == labels).sum())
            _finite(data_loss, "val", state)
        total = ad.add(data_loss, arch_penalty(state))
        ad.backward(total)
    state.a_opt.step()
    return data_loss.item(), correct


def evaluate_batch(state: SearchState, images, labels) -> tuple[float, int]:
    with ad.no_grad():
        logits = state.net(images)
        loss = ad.cross_entropy(logits, labels)
    return loss.item(), int((logits.data.argmax(axis=1) == labels).sum())


def search_step(state: SearchState, train_batch, val_batch) -> tuple[float, float, int]:
    """One weight step then one architecture step (first-order).

    During warm-up epochs the validation batch is only scored.
    """
    train_loss = weight_step(state, *train_batch)
    if state.epoch < state.config.arch_warmup:
        val_loss, correct = evaluate_batch(state, *val_batch)
    else:
        val_loss, correct = arch_step(state, *val_batch)
    state.step += 1
    log.debug("epoch %d step %d train %.4f val %.4f", state.epoch, state.step, train_loss, val_loss)
    return train_loss, val_loss, correct


def _batches(n: int, batch_size: int, order: np.ndarray):
    return [order[i:i + batch_size] for i in range(0, n, batch_size)]


def run_epoch(state: SearchState, train: Dataset, val: Dataset) -> dict:
    cfg, net = state.config, state.net
    epoch = state.epoch
    state.w_opt.lr = cosine_lr(cfg.w_lr, epoch, cfg.epochs)
    rng = np.random.default_rng([cfg.seed, epoch])
    tb = _batches(len(train), cfg.batch_size, rng.permutation(len(train)))
    vb = _batches(len(val), cfg.batch_size, rng.permutation(len(val)))
    tl = vl = 0.0
    seen = correct = 0
    steps = min(len(tb), len(vb))
    for b in range(steps):
        ti, vi = tb[b], vb[b]
        t_loss, v_loss, c = search_step(state, (train.images[ti], train.labels[ti]),
                                        (val.images[vi], val.labels[vi]))
        tl += t_loss
        vl += v_loss * len(vi)
        seen += len(vi)
        correct += c
    net.arch.tau = anneal(net.arch.tau, cfg.temperature)
    genotype = net.derive()
    state.epoch += 1
    record_history(state.history, state.epoch, genotype)
    thresholds = net.arch.thresholds()
    row = {
        "epoch": state.epoch,
        "train_loss": tl / steps,
        "val_loss": vl / seen,
        "val_acc": correct / seen,
        "tau": net.temperature,
        "mean_t": float(thresholds.mean()) if thresholds.size else float("nan"),
        "active_edges_normal": genotype.n_connections("normal"),
        "active_edges_reduction": genotype.n_connections("reduction"),
    }
    state.metrics.append(row)
    log.info("epoch %d train %.4f val %.4f acc %.3f tau %.4f edges %d/%d", row["epoch"], row["train_loss"],
             row["val_loss"], row["val_acc"], row["tau"], row["active_edges_normal"], row["active_edges_reduction"])
    return row


def metrics_csv(rows: list[dict]) -> str:
    lines = [",".join(METRIC_COLUMNS)]
    for r in rows:
        lines.append(",".join(repr(r[c]) if isinstance(r[c], float) else str(r[c]) for c in METRIC_COLUMNS))
    return "\n".join(lines) + "\n"


def save_state(path, state: SearchState, extra_meta: dict | None = None) -> None:
    net = state.net
    arrays = {f"param.{k}": t.data for k, t in net.params.items()}
    arrays.update({f"arch.{t.name}": t.data for t in state.arch_tensors})
    arrays.update(state.w_opt.state())
    arrays.update(state.a_opt.state())
    meta = {
        "epoch": state.epoch,
        "step": state.step,
        "tau": net.arch.tau,
        "adam_steps": state.a_opt.steps,
        "rng": "numpy default_rng([seed, epoch]) per epoch",
        "trainer": state.config.to_json(),
        "history": state.history.to_json(),
        "metrics": state.metrics,
        **(extra_meta or {}),
    }
    ckpt.save(path, arrays, meta)


def restore_state(path, state: SearchState) -> dict:
    arrays, meta = ckpt.load(path)
    net = state.net
    for name, t in net.params.items():
        t.data = arrays[f"param.{name}"].reshape(t.shape)
    for t in state.arch_tensors:
        t.data = arrays[f"arch.{t.name}"].reshape(t.shape)
    state.w_opt.load_state(arrays)
    state.a_opt.load_state(arrays, meta["adam_steps"])
    net.arch.tau = meta["tau"]
    state.epoch, state.step = meta["epoch"], meta["step"]
    state.history = DerivationHistory.from_json(meta["history"])
    state.metrics = meta["metrics"]
    return meta


@dataclass
class SearchResult:
    genotype: Genotype
    history: DerivationHistory
    metrics: list[dict]
    checkpoint: str | None
    net: Supernet | None = None
    val: Dataset | None = None

    def to_json(self) -> dict:
        return {
            "genotype": self.genotype.to_json(),
            "history": self.history.to_json(),
            "metrics": self.metrics,
            "checkpoint": self.checkpoint,
        }


def run_search(config: TrainerConfig, space: SearchSpaceConfig, net_config: SupernetConfig, dataset: Dataset,
               out_dir: str | Path | None = None, resume: str | Path | None = None,
               stop_after: int | None = None, meta: dict | None = None) -> SearchResult:
    """Full search. With ``out_dir`` a checkpoint and metrics.csv are rewritten every epoch.

    ``stop_after`` ends the run early after that many completed epochs, which
    leaves a resumable checkpoint behind.
    """
    train, val = split_dataset(dataset, config.seed)
    state = SearchState.create(config, space, net_config, dataset.images.shape[1], dataset.classes)
    if resume is not None:
        restore_state(resume, state)
        log.info("resumed at epoch %d", state.epoch)
    ckpt_path = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        ckpt_path = out_dir / "checkpoint.bin"
    last = config.epochs if stop_after is None else min(stop_after, config.epochs)
    while state.epoch < last:
        run_epoch(state, train, val)
        if out_dir is not None:
            save_state(ckpt_path, state, meta)
            ckpt.atomic_write(out_dir / "metrics.csv", metrics_csv(state.metrics))
    genotype = state.history.entries[-1].genotype if state.history.entries else state.net.derive()
    return SearchResult(genotype, state.history, state.metrics,
                        str(ckpt_path) if ckpt_path else None, state.net, val)
