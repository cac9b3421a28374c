"""Command-line interface: train, changes, select, extract, retrain, run,
sweep, baseline, and eval subcommands over JSONL corpora."""

from __future__ import annotations

import argparse
import json
import re
import sys
from pathlib import Path

from . import __version__
from .baselines import beam_search_hard_mask, load_embeddings, wv_topk
from .corpus import (
    DEFAULT_STEP,
    DEFAULT_WINDOW,
    Corpus,
    load_corpus,
    read_evidence,
    write_evidence,
)
from .erasure import changes_matrix, read_changes, write_changes
from .metrics import evaluate_predictions, render_json
from .pipeline import (
    PipelineResult,
    RunConfig,
    block_accuracy,
    build_retrain_corpus,
    extract_evidence,
    run_u3e,
    sweep_max,
)
from .render import format_table
from .scorer import (
    BuiltinScorer,
    ExternalScorer,
    TrainConfig,
    iter_train_epochs,
    load_checkpoint,
    save_checkpoint,
    train_epochs,
)
from .selection import bmc_select, mtest_select, save_report

_EPOCH_FILE = re.compile(r"epoch-(\d+)\.(json|jsonl)$")


def _parse_orders(text: str) -> tuple[int, ...]:
    return tuple(int(p) for p in text.split(",") if p.strip())


def _train_config(args: argparse.Namespace) -> TrainConfig:
    return TrainConfig(
        epochs=args.epochs,
        learning_rate=args.lr,
        seed=args.seed,
        hash_bits=args.hash_bits,
        ngram_orders=_parse_orders(args.ngram_orders),
        epsilon=args.epsilon,
    )


def _add_train_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--epochs", type=int, default=10)
    parser.add_argument("--seed", type=int, default=42)
    parser.add_argument("--lr", type=float, default=0.1)
    parser.add_argument("--hash-bits", type=int, default=18, dest="hash_bits")
    parser.add_argument("--ngram-orders", default="1,2", dest="ngram_orders")
    parser.add_argument("--epsilon", type=float, default=1e-12)


def _add_block_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--window", type=int, default=DEFAULT_WINDOW)
    parser.add_argument("--step", type=int, default=DEFAULT_STEP)


def _epoch_files(directory: Path, suffix: str) -> list[tuple[int, Path]]:
    out = []
    for p in sorted(directory.glob(f"epoch-*.{suffix}")):
        match = _EPOCH_FILE.search(p.name)
        if match:
            out.append((int(match.group(1)), p))
    if not out:
        raise FileNotFoundError(f"no epoch-*.{suffix} files under {directory}")
    return sorted(out)


def cmd_train(args: argparse.Namespace) -> int:
    corpus = load_corpus(args.corpus)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    count = 0
    for ckpt in iter_train_epochs(corpus, _train_config(args)):
        save_checkpoint(ckpt, out / f"epoch-{ckpt.epoch}.json")
        count += 1
    print(json.dumps({"checkpoints": count, "out": str(out)}))
    return 0


def cmd_changes(args: argparse.Namespace) -> int:
    corpus = load_corpus(args.corpus).restrict("train")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    epoch_files = _epoch_files(Path(args.ckpts), "json")
    written = []
    if args.scorer_cmd:
        with ExternalScorer(args.scorer_cmd) as handle:
            available = set(handle.list_checkpoints())
            for epoch, _path in epoch_files:
                if epoch not in available:
                    raise ValueError(f"external scorer does not provide epoch {epoch}")
                handle.select_checkpoint(epoch)
                vectors = changes_matrix(handle, corpus)
                write_changes(vectors, out / f"epoch-{epoch}.jsonl")
                written.append(epoch)
    else:
        for epoch, path in epoch_files:
            vectors = changes_matrix(BuiltinScorer(load_checkpoint(path)), corpus)
            write_changes(vectors, out / f"epoch-{epoch}.jsonl")
            written.append(epoch)
    print(json.dumps({"epochs": written, "out": str(out)}))
    return 0


def cmd_select(args: argparse.Namespace) -> int:
    test = load_corpus(args.test, split="test")
    checkpoints = [load_checkpoint(path) for _epoch, path in _epoch_files(Path(args.ckpts), "json")]
    accs = {
        c.epoch: block_accuracy(BuiltinScorer(c), test.samples, args.window, args.step) for c in checkpoints
    }
    if args.method == "bmc":
        change_store = {epoch: read_changes(path) for epoch, path in _epoch_files(Path(args.changes), "jsonl")}
        chosen, report = bmc_select(checkpoints, accs, change_store, args.k, getattr(args, "lambda"))
    else:
        chosen, report = mtest_select(checkpoints, accs)
    print(report.render())
    if args.out:
        save_report(report, args.out)
    return 0


def cmd_extract(args: argparse.Namespace) -> int:
    vectors = read_changes(args.changes)
    evidences = [extract_evidence(cv, args.k) for cv in vectors]
    write_evidence(evidences, args.out)
    print(json.dumps({"samples": len(evidences), "out": str(args.out)}))
    return 0


def cmd_retrain(args: argparse.Namespace) -> int:
    corpus = load_corpus(args.corpus).restrict("train")
    test = load_corpus(args.test, split="test")
    evidences = read_evidence(args.evidence)
    retrain_corpus = build_retrain_corpus(corpus, evidences)
    ckpts = train_epochs(retrain_corpus, _train_config(args))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        for ckpt in ckpts:
            save_checkpoint(ckpt, out / f"epoch-{ckpt.epoch}.json")
    acc = block_accuracy(BuiltinScorer(ckpts[-1]), test.samples, args.window, args.step)
    print(json.dumps({"retrain_accuracy": acc}))
    return 0


def _load_run_setup(config_path: str) -> tuple[Corpus, RunConfig, Path]:
    path = Path(config_path)
    with path.open("r", encoding="utf-8") as fh:
        cfg = json.load(fh)
    base = path.parent

    def respath(value: str) -> Path:
        p = Path(value)
        return p if p.is_absolute() else base / p

    if "corpus" in cfg:
        corpus = load_corpus(respath(cfg["corpus"]))
    elif "train" in cfg and "test" in cfg:
        train = load_corpus(respath(cfg["train"]), split="train")
        test = load_corpus(respath(cfg["test"]), split="test")
        corpus = Corpus(train.samples + test.samples, name=train.name)
    else:
        raise ValueError("config needs either 'corpus' or both 'train' and 'test'")
    if "out" not in cfg:
        raise ValueError("config needs an 'out' directory")

    train_cfg = TrainConfig(
        epochs=cfg.get("epochs", 10),
        learning_rate=cfg.get("learning_rate", 0.1),
        seed=cfg.get("seed", 42),
        hash_bits=cfg.get("hash_bits", 18),
        ngram_orders=tuple(cfg.get("ngram_orders", (1, 2))),
        epsilon=cfg.get("epsilon", 1e-12),
    )
    scorer = cfg.get("scorer", {"kind": "builtin"})
    run_cfg = RunConfig(
        train=train_cfg,
        k=cfg.get("k", 2),
        lam=cfg.get("lambda", 0.1),
        method=cfg.get("method", "bmc"),
        window=cfg.get("window", DEFAULT_WINDOW),
        step=cfg.get("step", DEFAULT_STEP),
        scorer_kind=scorer.get("kind", "builtin"),
        scorer_command=tuple(scorer["command"]) if scorer.get("command") else None,
        no_cache=bool(cfg.get("no_cache", False)),
    )
    return corpus, run_cfg, respath(cfg["out"])


def _write_run_outputs(result: PipelineResult, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    write_evidence(result.evidences, out / "evidence.jsonl")
    save_report(result.selection, out / "selection.json")
    with (out / "result.json").open("w", encoding="utf-8") as fh:
        json.dump(result.to_json(), fh, ensure_ascii=False, indent=2)
        fh.write("\n")


def cmd_run(args: argparse.Namespace) -> int:
    corpus, run_cfg, out = _load_run_setup(args.config)
    result = run_u3e(corpus, run_cfg, workdir=out)
    _write_run_outputs(result, out)
    print(result.selection.render())
    print(
        format_table(
            ["full_context_accuracy", "retrain_accuracy"],
            [[f"{result.full_context_accuracy:.4f}", f"{result.retrain_accuracy:.4f}"]],
        )
    )
    timings = {stage: round(seconds, 3) for stage, seconds in result.per_stage_timings.items()}
    print(json.dumps({"timings_s": timings, "out": str(out)}), file=sys.stderr)
    return 0


def cmd_sweep(args: argparse.Namespace) -> int:
    corpus, run_cfg, out = _load_run_setup(args.config)
    best, results = sweep_max(corpus, run_cfg, workdir=out)
    out.mkdir(parents=True, exist_ok=True)
    rows = [{"epoch": r.selection.chosen_epoch, "retrain_accuracy": r.retrain_accuracy} for r in results]
    sweep_obj = {
        "best_epoch": best,
        "full_context_accuracy": results[0].full_context_accuracy,
        "rows": rows,
    }
    with (out / "sweep.json").open("w", encoding="utf-8") as fh:
        json.dump(sweep_obj, fh, ensure_ascii=False, indent=2)
        fh.write("\n")
    best_result = next(r for r in results if r.selection.chosen_epoch == best)
    write_evidence(best_result.evidences, out / "evidence.jsonl")
    print(
        format_table(
            ["epoch", "retrain_accuracy", "best"],
            [[str(r["epoch"]), f"{r['retrain_accuracy']:.4f}", "*" if r["epoch"] == best else ""] for r in rows],
        )
    )
    return 0


def cmd_baseline(args: argparse.Namespace) -> int:
    corpus = load_corpus(args.corpus).restrict("train")
    table = load_embeddings(args.embeddings)
    evidences = []
    for sample in corpus.samples:
        if args.method == "wv":
            evidences.append(wv_topk(sample, table, args.k))
        else:
            evidences.append(beam_search_hard_mask(sample, table, args.k, args.beam_width))
    if args.out:
        write_evidence(evidences, args.out)
        print(json.dumps({"samples": len(evidences), "out": str(args.out)}))
    else:
        for ev in evidences:
            print(json.dumps({"id": ev.sample_id, "evidence": list(ev.indices), "k": ev.k}, ensure_ascii=False))
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    gold = load_corpus(args.gold)
    predictions = []
    with open(args.pred, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                predictions.append(json.loads(line))
    metrics = tuple(m.strip() for m in args.metrics.split(",") if m.strip())
    report = evaluate_predictions(predictions, gold, metrics=metrics, evi_mode=args.evi_mode)
    if args.json:
        print(render_json(report))
    else:
        print(report.render())
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="u3e", description="Erasure-based evidence-sentence extraction")
    parser.add_argument("--version", action="version", version=f"u3e {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train per-epoch checkpoints")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    _add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("changes", help="leave-one-out change vectors per checkpoint")
    p.add_argument("--ckpts", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--scorer-cmd", default=None, help="external scorer command line")
    p.set_defaults(func=cmd_changes)

    p = sub.add_parser("select", help="choose the working checkpoint")
    p.add_argument("--method", choices=["bmc", "mtest"], default="bmc")
    p.add_argument("--lambda", type=float, default=0.1)
    p.add_argument("--k", type=int, default=2)
    p.add_argument("--changes", default=None)
    p.add_argument("--test", required=True)
    p.add_argument("--ckpts", required=True)
    p.add_argument("--out", default=None)
    _add_block_flags(p)
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("extract", help="top-k evidence from a changes file")
    p.add_argument("--changes", required=True)
    p.add_argument("--k", type=int, default=2)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("retrain", help="retrain on evidence-only documents and evaluate")
    p.add_argument("--corpus", required=True)
    p.add_argument("--evidence", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--out", default=None)
    _add_train_flags(p)
    _add_block_flags(p)
    p.set_defaults(func=cmd_retrain)

    p = sub.add_parser("run", help="full pipeline from a config file")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="retrain from every checkpoint, report the best")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("baseline", help="similarity-baseline evidence extraction")
    p.add_argument("--method", choices=["wv", "beam"], required=True)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--k", type=int, default=2)
    p.add_argument("--corpus", required=True)
    p.add_argument("--beam-width", type=int, default=3, dest="beam_width")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("eval", help="score a prediction file against gold")
    p.add_argument("--pred", required=True)
    p.add_argument("--gold", required=True)
    p.add_argument("--metrics", default="ans,evi,all")
    p.add_argument("--evi-mode", choices=["sentence", "token"], default="sentence", dest="evi_mode")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_eval)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # CLI boundary: every failure becomes one JSON line
        message = f"{type(exc).__name__}: {exc}".replace("\n", " ")
        print(json.dumps({"error": message}, ensure_ascii=False), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
