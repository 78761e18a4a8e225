"""Command-line entry point: ``entrannas <subcommand> ...``."""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import checkpoint as ckpt
from .config import RunConfig, build_config, load_config
from .data import Dataset, load_dataset
from .derivation import Genotype, export_dot
from .evaluation import (ConsistencyReport, RankPair, efficiency_counters, kendall_tau, lambda_sweep, retrain,
                         score)
from .relaxation import KINDS
from .trainer import run_search, split_dataset

log = logging.getLogger("entrannas")


def _config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else build_config({})
    if getattr(args, "out", None):
        cfg = cfg.with_values(out_dir=args.out)
    return cfg


def _eval_set(cfg: RunConfig, data: Dataset) -> Dataset:
    """Held-out set: explicit file, the synthetic test stream, or the validation half."""
    if cfg.eval_dataset:
        return load_dataset(cfg.eval_dataset)
    if cfg.dataset.startswith("synthetic:"):
        return load_dataset(cfg.dataset, split="test")
    return split_dataset(data, cfg.trainer.seed)[1]


def _csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    return buf.getvalue()


def _table(rows: list[dict]) -> str:
    cols = list(rows[0])
    cells = [[f"{r[c]:.4f}" if isinstance(r[c], float) else str(r[c]) for c in cols] for r in rows]
    widths = [max(len(c), *(len(row[i]) for row in cells)) for i, c in enumerate(cols)]
    lines = ["  ".join(c.ljust(w) for c, w in zip(cols, widths))]
    lines += ["  ".join(v.ljust(w) for v, w in zip(row, widths)) for row in cells]
    return "\n".join(lines)


def _write_dots(genotype: Genotype, out: Path) -> None:
    for kind in KINDS:
        ckpt.atomic_write(out / f"{kind}.dot", export_dot(genotype, kind))


def _search(cfg: RunConfig, out: Path | None, resume=None, stop_after=None):
    data = load_dataset(cfg.dataset)
    result = run_search(cfg.trainer, cfg.space, cfg.supernet, data, out_dir=out, resume=resume,
                        stop_after=stop_after, meta={"config": cfg.to_json()})
    return data, result


def cmd_search(args) -> int:
    cfg = _config(args)
    out = Path(cfg.out_dir)
    data, result = _search(cfg, out, args.resume, args.stop_after)
    payload = {"config": cfg.to_json(), "space": cfg.space.to_json(), **result.to_json()}
    ckpt.atomic_write(out / "result.json", json.dumps(payload, indent=1) + "\n")
    ckpt.atomic_write(out / "history.json", json.dumps(result.history.to_json(), indent=1) + "\n")
    _write_dots(result.genotype, out)
    print(result.genotype.dumps())
    return 0


def _read_genotype(path) -> Genotype:
    try:
        return Genotype.from_json(json.loads(Path(path).read_text()))
    except json.JSONDecodeError as exc:
        raise ValueError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None


def cmd_export_dot(args) -> int:
    genotype = _read_genotype(args.genotype)
    out = Path(args.out) if args.out else Path(args.genotype).parent
    _write_dots(genotype, out)
    for kind in KINDS:
        print(out / f"{kind}.dot")
    return 0


def cmd_retrain(args) -> int:
    cfg = _config(args)
    genotype = _read_genotype(args.genotype)
    data = load_dataset(cfg.dataset)
    res = retrain(genotype, cfg.space, cfg.retrain, data, _eval_set(cfg, data))
    out = Path(cfg.out_dir)
    ckpt.atomic_write(out / "retrain.json", json.dumps({"accuracy": res.accuracy, "params": res.params}) + "\n")
    print(f"accuracy {res.accuracy:.4f} params {res.params}")
    return 0


def consistency_rows(cfg: RunConfig, placements: list[str], seeds: list[int]) -> list[dict]:
    rows = []
    for placement in placements:
        for seed in seeds:
            if placement == "darts":
                run = cfg.with_values(mode="darts_baseline", engine_placement="all", seed=seed)
            else:
                run = cfg.with_values(engine_placement=placement, seed=seed)
            data, result = _search(run, None)
            rep = ConsistencyReport.measure(result.net, _eval_set(run, data))
            rows.append({"placement": rep.engine_placement, "seed": seed, "supernet_acc": rep.supernet_acc,
                         "childnet_acc": rep.childnet_acc, "drop": rep.drop})
    return rows


def cmd_eval_consistency(args) -> int:
    cfg = _config(args)
    base = cfg.trainer.seed
    rows = consistency_rows(cfg, args.placements.split(","), list(range(base, base + args.seeds)))
    out = Path(cfg.out_dir)
    ckpt.atomic_write(out / "consistency.csv", _csv(rows))
    summary = []
    for tag in dict.fromkeys(r["placement"] for r in rows):
        sel = [r for r in rows if r["placement"] == tag]
        n = len(sel)
        summary.append({"placement": tag, "supernet_acc": sum(r["supernet_acc"] for r in sel) / n,
                        "childnet_acc": sum(r["childnet_acc"] for r in sel) / n,
                        "drop": sum(r["drop"] for r in sel) / n})
    print(_table(summary))
    return 0


def kendall_pairs(cfg: RunConfig, runs: int) -> list[RankPair]:
    """One search and one retrain per seed.

    Accuracies on a small eval set tie easily, so each score subtracts 1e-6
    times the eval cross-entropy: equal accuracies are ranked by loss.
    """
    pairs = []
    base = cfg.trainer.seed
    for r in range(runs):
        run = cfg.with_values(seed=base + r)
        data, result = _search(run, None)
        test = _eval_set(run, data)
        proxy, proxy_loss = score(result.net, test)
        res = retrain(result.genotype, run.space, run.retrain, data, test)
        pairs.append(RankPair(proxy - 1e-6 * proxy_loss, res.accuracy - 1e-6 * res.loss))
        log.info("run %d proxy %.4f retrained %.4f", r, proxy, res.accuracy)
    return pairs


def cmd_eval_kendall(args) -> int:
    cfg = _config(args)
    pairs = kendall_pairs(cfg, args.runs)
    tau = kendall_tau(pairs)
    rows = [{"run": i, "proxy": p.proxy_score, "true": p.true_score} for i, p in enumerate(pairs)]
    ckpt.atomic_write(Path(cfg.out_dir) / "kendall.csv", _csv(rows))
    print(_table(rows))
    print(f"kendall_tau {tau:.4f}")
    return 0


def cmd_sweep_lambda(args) -> int:
    cfg = _config(args)
    if cfg.supernet.mode != "dst":
        cfg = cfg.with_values(mode="dst", include_zero=False)
    lambdas = [float(x) for x in args.lambdas.split(",")]
    base = cfg.trainer.seed
    runs, summary = lambda_sweep(lambdas, list(range(base, base + args.seeds)), cfg.trainer, cfg.space,
                                 cfg.supernet, cfg.dataset, cfg.retrain, jobs=args.jobs)
    out = Path(cfg.out_dir)
    ckpt.atomic_write(out / "sweep_runs.csv", _csv(runs))
    ckpt.atomic_write(out / "sweep.csv", _csv(summary))
    print(_table(summary))
    return 0


def cmd_eval_efficiency(args) -> int:
    cfg = _config(args)
    rows = efficiency_counters(replace(cfg.space), n_cells=cfg.supernet.n_cells,
                               init_channels=cfg.supernet.init_channels)
    ckpt.atomic_write(Path(cfg.out_dir) / "efficiency.csv", _csv(rows))
    print(_table(rows))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="entrannas", description="Engine/Transit cell architecture search")
    parser.add_argument("--debug", action="store_true", help="per-step logging")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, help_text, config=True):
        p = sub.add_parser(name, help=help_text)
        if config:
            p.add_argument("--config", help="JSON run config (defaults when omitted)")
            p.add_argument("--out", help="output directory (overrides out_dir)")
        p.set_defaults(fn=fn)
        return p

    p = add("search", cmd_search, "run the bi-level search")
    p.add_argument("--resume", help="checkpoint.bin to continue from")
    p.add_argument("--stop-after", type=int, help="stop after this many completed epochs")
    p = add("retrain", cmd_retrain, "train a derived genotype from scratch")
    p.add_argument("--genotype", required=True, help="result.json or genotype JSON")
    p = add("eval-consistency", cmd_eval_consistency, "super-net vs child-net accuracy drop")
    p.add_argument("--placements", default="first,half,last,darts")
    p.add_argument("--seeds", type=int, default=3)
    p = add("eval-kendall", cmd_eval_kendall, "rank correlation of proxy and retrained accuracy")
    p.add_argument("--runs", type=int, default=6)
    p = add("sweep-lambda", cmd_sweep_lambda, "kept edges across sparsity strengths")
    p.add_argument("--lambdas", default="0.05,0.1,0.2")
    p.add_argument("--seeds", type=int, default=3)
    p.add_argument("--jobs", type=int, default=1)
    add("eval-efficiency", cmd_eval_efficiency, "op invocations, params and MACs per component")
    p = add("export-dot", cmd_export_dot, "write normal.dot and reduction.dot", config=False)
    p.add_argument("--genotype", required=True)
    p.add_argument("--out")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.debug else logging.INFO, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except Exception as exc:  # noqa: BLE001 - the CLI contract is one line and exit 1
        if args.debug:
            log.exception("failed")
        msg = " ".join(str(exc).split())
        print(f"error: {type(exc).__name__}: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
