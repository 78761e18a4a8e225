"""Consistency, rank correlation, efficiency counters, lambda sweeps and retraining."""

from __future__ import annotations

import itertools
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from . import autodiff as ad
from .data import Dataset, load_dataset
from .derivation import Genotype
from .optim import SGD, clip_grad_norm, cosine_lr
from .search_space import SearchSpaceConfig
from .supernet import Supernet, SupernetConfig
from .trainer import TrainerConfig, run_search

log = logging.getLogger(__name__)


def score(net: Supernet, data: Dataset, genotype: Genotype | None = None, coefficient: str | None = None,
          batch_size: int = 256) -> tuple[float, float]:
    """(accuracy, mean cross-entropy) on ``data``."""
    correct, loss = 0, 0.0
    with ad.no_grad():
        for i in range(0, len(data), batch_size):
            labels = data.labels[i:i + batch_size]
            logits = net(data.images[i:i + batch_size], genotype=genotype, coefficient=coefficient)
            correct += int((logits.data.argmax(axis=1) == labels).sum())
            loss += ad.cross_entropy(logits, labels).item() * len(labels)
    return correct / len(data), loss / len(data)


def accuracy(net: Supernet, data: Dataset, genotype: Genotype | None = None, coefficient: str | None = None,
             batch_size: int = 256) -> float:
    return score(net, data, genotype, coefficient, batch_size)[0]


def childnet_inference(net: Supernet, genotype: Genotype, data: Dataset, coefficient: str | None = None) -> float:
    """Accuracy through the derived paths only, using the super-net's weights."""
    genotype.validate(net.space)
    return accuracy(net, data, genotype, coefficient)


@dataclass(frozen=True)
class ConsistencyReport:
    supernet_acc: float
    childnet_acc: float
    drop: float
    engine_placement: str

    @classmethod
    def measure(cls, net: Supernet, data: Dataset, coefficient: str | None = None) -> ConsistencyReport:
        genotype = net.derive()
        sup = accuracy(net, data)
        child = childnet_inference(net, genotype, data, coefficient)
        tag = "all (darts)" if net.config.mode == "darts_baseline" else net.config.placement
        return cls(sup, child, sup - child, tag)


@dataclass(frozen=True)
class RankPair:
    proxy_score: float
    true_score: float

    def __post_init__(self):
        if not (math.isfinite(self.proxy_score) and math.isfinite(self.true_score)):
            raise ValueError(f"rank pair scores must be finite, got {self}")


def kendall_tau(pairs: list[RankPair]) -> float:
    m = len(pairs)
    if m < 2:
        raise ValueError(f"kendall_tau needs at least 2 pairs, got {m}")
    proxy = [p.proxy_score for p in pairs]
    true = [p.true_score for p in pairs]
    for name, scores in (("proxy", proxy), ("true", true)):
        if len(set(scores)) < m:
            raise ValueError(f"kendall_tau: tied {name} scores; perturb them or evaluate on more samples")
    score = 0
    for a, b in itertools.combinations(range(m), 2):
        # compare signs, the product of two tiny differences can underflow to zero
        score += 1 if (proxy[a] > proxy[b]) == (true[a] > true[b]) else -1
    return score / (m * (m - 1) / 2)


SETTINGS = ("darts_baseline", "+engine/transit", "+feature sharing", "+bottleneck")


def efficiency_counters(space: SearchSpaceConfig | None = None, n_cells: int = 8, init_channels: int = 8,
                        input_shape=(2, 3, 8, 8), bottleneck_ratio: int = 4) -> list[dict]:
    """Cumulative component ablation measured by instrumented counters."""
    space = space or SearchSpaceConfig()
    base = SupernetConfig(n_cells=n_cells, init_channels=init_channels, mode="darts_baseline")
    configs = [
        base,
        replace(base, mode="entran", engine_placement="first", feature_sharing=False),
        replace(base, mode="entran", engine_placement="first", feature_sharing=True),
        replace(base, mode="entran", engine_placement="first", feature_sharing=True,
                bottleneck_ratio=bottleneck_ratio),
    ]
    x = np.random.default_rng(0).standard_normal(input_shape)
    rows = []
    for setting, cfg in zip(SETTINGS, configs):
        net = Supernet(space, cfg, input_shape[1], 10, seed=0)
        ad.reset_mac_count()
        with ad.no_grad():
            net(x)
        rows.append({
            "setting": setting,
            "relaxed_cells": sum(c.spec.role == "engine" for c in net.cells),
            "invocations": net.invocations,
            "engine_invocations": sum(c.invocations for c in net.cells if c.spec.role == "engine"),
            "params": net.n_weights(),
            "macs": ad.mac_count(),
        })
    return rows


@dataclass(frozen=True)
class RetrainConfig:
    n_cells: int = 5
    init_channels: int = 8
    epochs: int = 20
    batch_size: int = 16
    lr: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 3e-4
    grad_clip: float = 5.0
    seed: int = 0


@dataclass(frozen=True)
class RetrainResult:
    accuracy: float
    params: int
    loss: float = float("nan")


def build_child(genotype: Genotype, space: SearchSpaceConfig, cfg: RetrainConfig, in_channels: int,
                classes: int) -> Supernet:
    genotype.validate(space)
    net_cfg = SupernetConfig(n_cells=cfg.n_cells, init_channels=cfg.init_channels, feature_sharing=False)
    return Supernet(space, net_cfg, in_channels, classes, seed=cfg.seed)


def used_parameters(net: Supernet, genotype: Genotype, in_shape) -> dict[str, int]:
    """Weights that the child forward actually touches (found by one backward pass)."""
    params = net.params
    for t in params.values():
        t.grad = None
    x = np.zeros((1, *in_shape))
    x[..., 0, 0] = 1.0
    ad.backward(ad.tsum(net(x, genotype=genotype)))
    used = {k: t.size for k, t in params.items() if t.grad is not None}
    for t in params.values():
        t.grad = None
    return used


def retrain(genotype: Genotype, space: SearchSpaceConfig, cfg: RetrainConfig, train: Dataset,
            test: Dataset) -> RetrainResult:
    """Fresh weights, transit-only network on ``genotype``; returns held-out accuracy."""
    net = build_child(genotype, space, cfg, train.images.shape[1], train.classes)
    used = used_parameters(net, genotype, train.shape)
    params = {k: t for k, t in net.params.items() if k in used}
    opt = SGD(params, cfg.lr, cfg.momentum, cfg.weight_decay)
    for epoch in range(cfg.epochs):
        opt.lr = cosine_lr(cfg.lr, epoch, cfg.epochs)
        order = np.random.default_rng([cfg.seed, epoch]).permutation(len(train))
        for i in range(0, len(train), cfg.batch_size):
            idx = order[i:i + cfg.batch_size]
            opt.zero_grad()
            loss = ad.cross_entropy(net(train.images[idx], genotype=genotype), train.labels[idx])
            if not np.isfinite(loss.data):
                raise FloatingPointError(f"retrain: non-finite loss at epoch {epoch}")
            ad.backward(loss)
            clip_grad_norm(params, cfg.grad_clip)
            opt.step()
    acc, loss = score(net, test, genotype)
    return RetrainResult(acc, sum(used.values()), loss)


def _sweep_job(args) -> dict:
    lam, seed, trainer, space, net_cfg, descriptor, retrain_cfg = args
    data = load_dataset(descriptor)
    result = run_search(replace(trainer, lam=lam, seed=seed), space, net_cfg, data)
    g = result.genotype
    child = build_child(g, space, retrain_cfg, data.images.shape[1], data.classes)
    params = sum(used_parameters(child, g, data.shape).values())
    return {"lambda": lam, "seed": seed, "edges_normal": g.n_connections("normal"),
            "edges_reduction": g.n_connections("reduction"), "params": params}


def lambda_sweep(lambdas, seeds, trainer: TrainerConfig, space: SearchSpaceConfig, net_cfg: SupernetConfig,
                 descriptor: str, retrain_cfg: RetrainConfig | None = None, jobs: int = 1) -> tuple[list[dict], list[dict]]:
    """Search once per (lambda, seed); returns (per-run rows, per-lambda means)."""
    if not net_cfg.dst:
        raise ValueError("lambda_sweep requires mode = dst")
    retrain_cfg = retrain_cfg or RetrainConfig(n_cells=net_cfg.n_cells, init_channels=net_cfg.init_channels)
    tasks = [(lam, s, trainer, space, net_cfg, descriptor, retrain_cfg) for lam in lambdas for s in seeds]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            runs = list(pool.map(_sweep_job, tasks))
    else:
        runs = [_sweep_job(t) for t in tasks]
    summary = []
    for lam in lambdas:
        sel = [r for r in runs if r["lambda"] == lam]
        summary.append({
            "lambda": lam,
            "edges_normal": float(np.mean([r["edges_normal"] for r in sel])),
            "edges_reduction": float(np.mean([r["edges_reduction"] for r in sel])),
            "edges_total": float(np.mean([r["edges_normal"] + r["edges_reduction"] for r in sel])),
            "params": float(np.mean([r["params"] for r in sel])),
        })
    return runs, summary
