r"""
Command-line tools: synth, train, translate, eval, vocab.

Examples:
  python secoco_suite.py synth --seed 7 --out runs/data
  python secoco_suite.py train --mode secoco --out runs/secoco
  python secoco_suite.py train --mode base --out runs/base --train.max_steps 2000
  python secoco_suite.py translate --checkpoint runs/secoco/best.ckpt --input noisy.txt --out hyp.txt --mode edit --show-edits
  python secoco_suite.py eval --checkpoint runs/secoco/best.ckpt --baseline base=runs/base/best.ckpt --worst-k 20

Every tool accepts --config PATH, --seed N, --verbose, --no-color and
--<section>.<field> VALUE overrides (e.g. --noise.p_typo 0.1). Exit code 0 means
every requested output was written; errors print "ERROR: ..." and exit with 2.
"""

from __future__ import annotations

import argparse
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import console
from .checkpoint import Checkpoint, check_vocab_match, load_checkpoint
from .editsup import count_edits
from .errors import InputError, SecocoError
from .evaluation import MODES as DECODE_MODES, EvalReport, evaluate_model, format_worst_k, worst_k
from .inference import max_source_len, render_edits, translate_e2e, translate_edit
from .noise import PUNCT, noise_stats, read_jsonl, synth_corpus, synth_task, write_jsonl
from .reports import write_csv, write_excel_report, write_json
from .settings import RunConfig, add_override_flags, derive_seed, settings_from_args
from .textops import Vocab, build_vocab, detokenize, tokenize
from .training import CKPT_BEST, CKPT_LAST, TRAIN_MODES, train

SPLITS = ("train", "valid", "test")
SRC_VOCAB = "vocab.src.txt"
TGT_VOCAB = "vocab.tgt.txt"
SYNTH_META = "synth_meta.json"
NOISE_STATS = "noise_stats.csv"


def _common(ap: argparse.ArgumentParser) -> None:
    ap.add_argument("--config", default=None, help="Settings JSON (default: data/secoco_settings.json).")
    ap.add_argument("--seed", type=int, default=None, help="Run seed; every random stream derives from it.")
    ap.add_argument("--verbose", action="store_true", help="Debug output (same as SECOCO_LOG=debug).")
    ap.add_argument("--no-color", action="store_true", help="Plain console output.")
    add_override_flags(ap)


def _data_dir(run: RunConfig) -> Path:
    return Path(run.paths.data_dir).expanduser()


def _load_vocabs(data_dir: Path) -> Tuple[Vocab, Vocab]:
    return Vocab.load(data_dir / SRC_VOCAB), Vocab.load(data_dir / TGT_VOCAB)


def _pick_checkpoint(arg: Optional[str], run: RunConfig) -> Path:
    if arg:
        return Path(arg).expanduser()
    ckpt_dir = Path(run.paths.checkpoint_dir).expanduser()
    best = ckpt_dir / CKPT_BEST
    return best if best.exists() else ckpt_dir / CKPT_LAST


def _tok_mode(ckpt: Checkpoint, run: RunConfig) -> str:
    return (ckpt.run_config.get("task") or {}).get("mode", run.task.mode)


# ---------------------------
# synth
# ---------------------------

def cmd_synth(run: RunConfig, args: argparse.Namespace) -> int:
    out_dir = Path(args.out).expanduser() if args.out else _data_dir(run)
    task, spec = run.task, run.noise
    task_seed = run.derive_seed("task")
    noise_seed = run.derive_seed("noise")
    dictionary = task.dictionary(task_seed)
    inserted = task.source_words() + (list(PUNCT) if task.punctuation and task.mode == "whitespace" else [])

    sizes = {"train": task.n_train, "valid": task.n_valid, "test": task.n_test}
    splits: Dict[str, list] = {}
    for k, split in enumerate(SPLITS):
        pairs = synth_task(np.random.default_rng([task_seed, k]), sizes[split], task, dictionary)
        splits[split] = synth_corpus(pairs, spec, derive_seed(noise_seed, split), inserted, progress=not console.is_quiet())
        write_jsonl(out_dir / f"{split}.jsonl", splits[split], task.mode)
        console.log_info(f"Wrote {len(splits[split])} sentences to {out_dir / f'{split}.jsonl'}")

    if not splits["train"]:
        raise InputError("task.n_train is 0; nothing to build vocabularies from")
    src_vocab = build_vocab([r.clean for r in splits["train"]] + [r.noisy for r in splits["train"]])
    tgt_vocab = build_vocab([r.target for r in splits["train"]])
    src_vocab.save(out_dir / SRC_VOCAB)
    tgt_vocab.save(out_dir / TGT_VOCAB)

    stats = noise_stats(splits["train"])
    write_json(out_dir / SYNTH_META, {
        "config": run.to_dict(),
        "splits": {s: len(v) for s, v in splits.items()},
        "vocab": {"src": len(src_vocab), "tgt": len(tgt_vocab)},
        "noise_stats": stats.to_dict(orient="records"),
        "noisy_sentences": stats.attrs["noisy_sentences"],
        "tokens": stats.attrs["tokens"],
    })
    write_csv(out_dir / NOISE_STATS, stats.to_dict(orient="records"), list(stats.columns))

    console.say("")
    console.say(f"Noise statistics (train, {stats.attrs['sentences']} sentences, {stats.attrs['tokens']} tokens):")
    console.say(stats.to_string(index=False))
    console.say(f"Noisy sentences: {stats.attrs['noisy_sentences']}")
    console.log_ok(f"Vocabularies: {len(src_vocab)} source / {len(tgt_vocab)} target tokens in {out_dir}")
    return 0


def cmd_vocab(run: RunConfig, args: argparse.Namespace) -> int:
    data_dir = Path(args.out).expanduser() if args.out else _data_dir(run)
    records = read_jsonl(data_dir / "train.jsonl", run.task.mode)
    if not records:
        raise InputError(f"{data_dir / 'train.jsonl'} holds no sentences")
    src_vocab = build_vocab([r.clean for r in records] + [r.noisy for r in records], args.max_size)
    tgt_vocab = build_vocab([r.target for r in records], args.max_size)
    src_vocab.save(data_dir / SRC_VOCAB)
    tgt_vocab.save(data_dir / TGT_VOCAB)
    console.log_ok(f"Vocabularies: {len(src_vocab)} source / {len(tgt_vocab)} target tokens in {data_dir}")
    return 0


# ---------------------------
# train
# ---------------------------

def cmd_train(run: RunConfig, args: argparse.Namespace) -> int:
    if args.mode:
        run.train.mode = args.mode
        run.train.validate()
    data_dir = _data_dir(run)
    out_dir = Path(args.out).expanduser() if args.out else Path(run.paths.checkpoint_dir).expanduser()
    src_vocab, tgt_vocab = _load_vocabs(data_dir)
    train_records = read_jsonl(data_dir / "train.jsonl", run.task.mode)
    valid_path = data_dir / "valid.jsonl"
    valid_records = read_jsonl(valid_path, run.task.mode) if valid_path.exists() else []
    console.log_info(f"Training on {len(train_records)} sentences ({len(valid_records)} validation), mode {run.train.mode}")

    result = train(run, train_records, valid_records, src_vocab, tgt_vocab, out_dir, resume=args.resume)
    if result.best_valid_bleu is not None:
        console.say(f"Best noisy-validation BLEU: {result.best_valid_bleu:.2f} ({result.best_checkpoint})")
    if result.skipped:
        console.log_warn(f"{result.skipped} over-long samples were skipped across epochs")
    return 0


# ---------------------------
# translate
# ---------------------------

def cmd_translate(run: RunConfig, args: argparse.Namespace) -> int:
    if args.beam is not None:
        run.decode.beam = args.beam
    if args.max_iters is not None:
        run.decode.max_iters = args.max_iters
    run.decode.validate()
    dc = run.decode

    ckpt = load_checkpoint(_pick_checkpoint(args.checkpoint, run), with_optimizer=False)
    data_dir = _data_dir(run)
    if (data_dir / SRC_VOCAB).exists() and (data_dir / TGT_VOCAB).exists():
        check_vocab_match(ckpt, *_load_vocabs(data_dir))
    mode = _tok_mode(ckpt, run)

    in_path = Path(args.input).expanduser()
    if not in_path.exists():
        raise InputError(f"Input file not found: {in_path}")
    lines = in_path.read_text(encoding="utf-8").splitlines()

    if args.show_edits and args.mode != "edit":
        console.log_warn("--show-edits only applies to --mode edit; no edit file written")

    hyps: List[str] = []
    edit_blocks: List[str] = []
    limit = max_source_len(ckpt.params)
    for n, line in enumerate(lines, start=1):
        src = tokenize(line, mode)
        if len(src) > limit:
            console.log_warn(f"line {n}: {len(src)} tokens, translating the first {limit}")
            src = src[:limit]
        if args.mode == "edit":
            hyp, result = translate_edit(src, ckpt.params, ckpt.src_vocab, ckpt.tgt_vocab, dc.beam, dc.max_iters, dc.del_threshold, dc.len_alpha)
            edit_blocks.append(render_edits(src, result))
        else:
            hyp = translate_e2e(src, ckpt.params, ckpt.src_vocab, ckpt.tgt_vocab, dc.beam, dc.len_alpha)
        hyps.append(detokenize(hyp, mode))

    out_path = Path(args.out).expanduser() if args.out else in_path.with_name(in_path.name + ".hyp")
    out_path.parent.mkdir(parents=True, exist_ok=True)
    out_path.write_text("".join(h + "\n" for h in hyps), encoding="utf-8")
    console.log_ok(f"Wrote {len(hyps)} translations to {out_path}")
    if args.show_edits and args.mode == "edit":
        edits_path = out_path.with_name(out_path.name + ".edits.txt")
        edits_path.write_text("\n\n".join(edit_blocks) + "\n", encoding="utf-8")
        console.log_ok(f"Wrote edit traces to {edits_path}")
    return 0


# ---------------------------
# eval
# ---------------------------

def _parse_baselines(items: Sequence[str]) -> List[Tuple[str, Path]]:
    out = []
    for item in items or []:
        name, sep, path = item.partition("=")
        if not sep or not name.strip() or not path.strip():
            raise InputError(f"--baseline expects NAME=PATH, got {item!r}")
        out.append((name.strip(), Path(path.strip()).expanduser()))
    return out


def cmd_eval(run: RunConfig, args: argparse.Namespace) -> int:
    if args.beam is not None:
        run.decode.beam = args.beam
    if args.max_iters is not None:
        run.decode.max_iters = args.max_iters
    run.decode.validate()

    data_dir = _data_dir(run)
    split_path = Path(args.split_file).expanduser() if args.split_file else data_dir / f"{args.split}.jsonl"
    records = read_jsonl(split_path, run.task.mode)
    if args.single_edit:
        records = [r for r in records if count_edits(r.trace) == 1]
    if args.limit:
        records = records[: args.limit]
    if not records:
        raise InputError(f"no reference sentences to evaluate in {split_path}")
    if any(not r.target for r in records):
        raise InputError(f"{split_path} has sentences without a reference translation")

    modes = [m.strip() for m in args.modes.split(",") if m.strip()]
    for m in modes:
        if m not in DECODE_MODES:
            raise InputError(f"unknown mode {m!r} in --modes (expected {', '.join(DECODE_MODES)})")

    systems: List[Tuple[str, Path, List[str]]] = [("secoco", _pick_checkpoint(args.checkpoint, run), modes)]
    systems += [(name, path, ["e2e"]) for name, path in _parse_baselines(args.baseline)]

    blocks: Dict[str, Dict[str, Any]] = {}
    worst_source = None
    for name, path, sys_modes in systems:
        ckpt = load_checkpoint(path, with_optimizer=False)
        for m in sys_modes:
            console.log_info(f"Evaluating {name} ({path.name}) in {m} mode on {len(records)} sentences")
            report, rows = evaluate_model(
                ckpt.params, ckpt.src_vocab, ckpt.tgt_vocab, records, m, run.decode,
                with_clean=not args.no_clean, with_latency=not args.no_latency,
            )
            blocks[f"{name}-{m}"] = {**report.to_dict(), "checkpoint": str(path), "step": ckpt.step}
            _print_block(f"{name}-{m}", report)
            if name == "secoco" and (worst_source is None or m == "edit"):
                worst_source = rows

    report_path = Path(args.out).expanduser() if args.out else Path(run.paths.report).expanduser()
    write_json(report_path, {
        "config": run.to_dict(),
        "split": str(split_path),
        "single_edit": bool(args.single_edit),
        "n_sentences": len(records),
        "blocks": blocks,
    })
    console.log_ok(f"Wrote report to {report_path}")

    worst = None
    if args.worst_k and worst_source is not None:
        worst = worst_k(worst_source, args.worst_k)
        worst_path = report_path.with_name(report_path.stem + ".worst.txt")
        worst_path.write_text(format_worst_k(worst), encoding="utf-8")
        console.log_ok(f"Wrote {len(worst)} worst sentences to {worst_path}")

    if args.xlsx:
        overview = [(f"{b} {k}", v) for b, block in blocks.items() for k, v in block.items() if isinstance(v, (int, float))]
        sheets = {"Blocks": [{"system": b, **block} for b, block in blocks.items()]}
        if worst is not None:
            sheets["Worst"] = worst
        if write_excel_report(Path(args.xlsx).expanduser(), overview, sheets):
            console.log_ok(f"Wrote workbook to {args.xlsx}")
        else:
            console.log_error("openpyxl is not installed; cannot write the Excel workbook")
            return 2
    return 0


def _print_block(name: str, r: EvalReport) -> None:
    parts = [f"BLEU {r.bleu:6.2f}"]
    if r.clean_bleu is not None:
        parts.append(f"clean {r.clean_bleu:6.2f}")
    if r.deletion_f1 is not None:
        parts.append(f"del P/R/F1 {r.deletion_precision:.3f}/{r.deletion_recall:.3f}/{r.deletion_f1:.3f}")
        parts.append(f"ins acc {r.insertion_accuracy:.3f}")
        parts.append(f"exact {r.exact_correction:.3f}")
        parts.append(f"iters {r.avg_iterations:.2f}")
    if r.latency_ms is not None:
        parts.append(f"{r.latency_ms:.1f} ms/sent")
    console.say(f"{name:<22} " + "  ".join(parts))


# ---------------------------
# Dispatcher
# ---------------------------

COMMANDS: Dict[str, Callable[[RunConfig, argparse.Namespace], int]] = {
    "synth": cmd_synth,
    "train": cmd_train,
    "translate": cmd_translate,
    "eval": cmd_eval,
    "vocab": cmd_vocab,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="secoco", description="Self-correcting encoder translation toolkit.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="Generate train/valid/test corpora with noise traces and vocabularies.")
    p.add_argument("--out", default=None, help="Output directory (default: paths.data_dir).")
    _common(p)

    p = sub.add_parser("vocab", help="Rebuild vocabulary files from train.jsonl.")
    p.add_argument("--out", default=None, help="Data directory (default: paths.data_dir).")
    p.add_argument("--max-size", type=int, default=None, help="Cap each vocabulary at this many entries.")
    _common(p)

    p = sub.add_parser("train", help="Train a model.")
    p.add_argument("--mode", choices=TRAIN_MODES, default=None, help="secoco | base | base+synthetic")
    p.add_argument("--out", default=None, help="Checkpoint directory (default: paths.checkpoint_dir).")
    p.add_argument("--resume", action="store_true", help="Continue from <out>/last.ckpt.")
    _common(p)

    p = sub.add_parser("translate", help="Translate a file of source sentences, one per line.")
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--input", required=True)
    p.add_argument("--out", default=None, help="Output file (default: <input>.hyp).")
    p.add_argument("--mode", choices=DECODE_MODES, default="e2e")
    p.add_argument("--beam", type=int, default=None)
    p.add_argument("--max-iters", type=int, default=None)
    p.add_argument("--show-edits", action="store_true", help="Also write <out>.edits.txt with per-iteration edits.")
    _common(p)

    p = sub.add_parser("eval", help="BLEU, edit metrics and latency on a corpus split.")
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--baseline", action="append", default=[], metavar="NAME=PATH", help="Extra checkpoint evaluated in e2e mode.")
    p.add_argument("--split", choices=SPLITS, default="test")
    p.add_argument("--split-file", default=None, help="Evaluate this JSONL file instead of a data split.")
    p.add_argument("--modes", default="e2e,edit")
    p.add_argument("--beam", type=int, default=None)
    p.add_argument("--max-iters", type=int, default=None)
    p.add_argument("--single-edit", action="store_true", help="Only sentences whose gold trace holds exactly one edit.")
    p.add_argument("--limit", type=int, default=0)
    p.add_argument("--worst-k", type=int, default=0)
    p.add_argument("--xlsx", default=None, help="Also write an Excel workbook here.")
    p.add_argument("--no-latency", action="store_true")
    p.add_argument("--no-clean", action="store_true", help="Skip decoding the clean sources.")
    p.add_argument("--out", default=None, help="Report JSON path (default: paths.report).")
    _common(p)
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    console.configure(verbose=args.verbose, no_color=args.no_color)
    try:
        run = settings_from_args(args)
        return COMMANDS[args.command](run, args)
    except SecocoError as e:
        console.log_error(str(e))
        return 2
    except OSError as e:
        console.log_error(f"{e.__class__.__name__}: {e}")
        return 2
    except KeyboardInterrupt:
        console.log_warn("Interrupted")
        return 130


if __name__ == "__main__":
    raise SystemExit(main())
