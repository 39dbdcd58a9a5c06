"""
Sample construction, token batching and the joint training loop.

Every epoch rebuilds the sample list from the corpus: each record contributes
either its clean source (with identity supervision) or its noisy source (with a
round sampled from its trace). Random streams are keyed on (seed, epoch) and
(seed, step), so a resumed run replays exactly what an uninterrupted run does.
"""

from __future__ import annotations

import json
import math
import queue
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import TYPE_CHECKING, Any, Callable, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np
from tqdm import tqdm

from . import console
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .editsup import EditTrace, sample_supervision
from .errors import ConfigError, InputError, NaNLossError
from .evaluation import validation_metrics
from .model import Batch, ModelParams, collate, joint_loss
from .noise import CorpusRecord
from .numerics import AdamState, InverseSqrtSchedule, adam_step, backward
from .textops import TokenSeq, Vocab

if TYPE_CHECKING:
    from .settings import RunConfig

TRAIN_MODES = ("secoco", "base", "base+synthetic")

CKPT_LAST = "last.ckpt"
CKPT_BEST = "best.ckpt"
METRICS_FILE = "metrics.jsonl"
RUN_LOG = "secoco.log"


@dataclass
class TrainConfig:
    batch_tokens: int = 2000
    max_steps: int = 5000
    lr: float = 1e-3
    warmup: int = 400
    warmup_init_lr: float = 1e-7
    clean_fraction: float = 0.5
    mode: str = "secoco"
    log_interval: int = 50
    eval_interval: int = 500
    checkpoint_interval: int = 1000
    prefetch_depth: int = 4
    max_valid: int = 200

    def validate(self) -> None:
        if self.mode not in TRAIN_MODES:
            raise ConfigError(f"train.mode must be one of {', '.join(TRAIN_MODES)}, got {self.mode!r}")
        if self.batch_tokens < 1:
            raise ConfigError("train.batch_tokens must be > 0")
        if self.warmup < 1:
            raise ConfigError("train.warmup must be >= 1")
        if self.max_steps < 0:
            raise ConfigError("train.max_steps must be >= 0")
        if not 0.0 <= self.clean_fraction <= 1.0:
            raise ConfigError("train.clean_fraction must be in [0, 1]")
        for name in ("log_interval", "eval_interval", "checkpoint_interval", "prefetch_depth"):
            if getattr(self, name) < 1:
                raise ConfigError(f"train.{name} must be >= 1")

    @property
    def use_predictors(self) -> bool:
        return self.mode == "secoco"

    @property
    def uses_noisy(self) -> bool:
        return self.mode != "base"


@dataclass(frozen=True)
class Sample:
    source: TokenSeq
    clean: TokenSeq
    target: TokenSeq
    del_sup: Tuple[TokenSeq, Tuple[int, ...]]
    ins_sup: Tuple[TokenSeq, Tuple[str, ...]]
    noisy: bool = False

    def n_positions(self) -> int:
        """Longest padded row this sample adds to a batch."""
        return max(len(self.source), len(self.del_sup[0]), len(self.ins_sup[0]), len(self.target)) + 2


# ---------------------------
# Samples and batches
# ---------------------------

def build_samples(
    records: Sequence[CorpusRecord],
    mode: str,
    rng: np.random.Generator,
    clean_fraction: float = 0.5,
) -> List[Sample]:
    """
    One sample per record. In base mode the source is always clean. Otherwise the
    source is clean with probability `clean_fraction` and noisy with a sampled
    supervision round the rest of the time.
    """
    if mode not in TRAIN_MODES:
        raise ConfigError(f"unknown training mode {mode!r}")
    samples: List[Sample] = []
    for r in records:
        use_clean = mode == "base" or not r.trace or rng.random() < clean_fraction
        if use_clean:
            del_sup, ins_sup = sample_supervision(EditTrace(), r.clean, rng)
            samples.append(Sample(r.clean, r.clean, r.target, del_sup, ins_sup, noisy=False))
        else:
            del_sup, ins_sup = sample_supervision(r.trace, r.noisy, rng)
            samples.append(Sample(r.noisy, r.clean, r.target, del_sup, ins_sup, noisy=True))
    return samples


def make_batches(
    samples: Sequence[Sample],
    batch_tokens: int,
    rng: np.random.Generator,
    max_len: int,
) -> Tuple[List[List[Sample]], int]:
    """
    Length-bucketed batches of at most `batch_tokens` padded positions (a single
    sample may exceed it alone). A batch is closed early rather than let padding
    reach half of its positions. Returns (batches in shuffled order, skipped count).
    """
    if batch_tokens < 1:
        raise ConfigError("batch_tokens must be > 0")
    kept = [s for s in samples if s.n_positions() <= max_len]
    skipped = len(samples) - len(kept)

    order = rng.permutation(len(kept))
    order = sorted(order, key=lambda i: kept[i].n_positions())
    batches: List[List[Sample]] = []
    cur: List[Sample] = []
    width = real = 0
    for i in order:
        s = kept[i]
        n = s.n_positions()
        w = max(width, n)
        padded = w * (len(cur) + 1)
        if cur and (padded > batch_tokens or 2 * (real + n) <= padded):
            batches.append(cur)
            cur, w, real = [], n, 0
        cur.append(s)
        width = w
        real += n
    if cur:
        batches.append(cur)
    return [batches[i] for i in rng.permutation(len(batches))], skipped


class BatchPrefetcher:
    """
    Collates batches on a worker thread and hands them over through a bounded queue.
    Iterating yields Batch objects in order; a worker failure is re-raised in the consumer.
    """

    _DONE = object()

    def __init__(self, groups: Sequence[Sequence[Sample]], collate_fn: Callable[[Sequence[Sample]], Batch], depth: int = 4):
        self._groups = list(groups)
        self._collate = collate_fn
        self._q: "queue.Queue[Any]" = queue.Queue(maxsize=max(1, depth))
        self._stop = threading.Event()
        self._thread: Optional[threading.Thread] = None

    def start(self) -> "BatchPrefetcher":
        def worker():
            try:
                for g in self._groups:
                    if self._stop.is_set():
                        return
                    self._put(self._collate(g))
            except BaseException as e:
                self._put(e)
                return
            self._put(self._DONE)

        self._thread = threading.Thread(target=worker, daemon=True)
        self._thread.start()
        return self

    def _put(self, item: Any) -> None:
        while not self._stop.is_set():
            try:
                self._q.put(item, timeout=0.1)
                return
            except queue.Full:
                continue

    def __iter__(self) -> Iterator[Batch]:
        if self._thread is None:
            self.start()
        while True:
            item = self._q.get()
            if item is self._DONE:
                return
            if isinstance(item, BaseException):
                raise item
            yield item

    def close(self) -> None:
        self._stop.set()
        if self._thread is not None:
            self._thread.join(timeout=2.0)

    def __enter__(self) -> "BatchPrefetcher":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.close()


# ---------------------------
# Training loop
# ---------------------------

@dataclass
class TrainResult:
    step: int
    last_checkpoint: Path
    best_checkpoint: Optional[Path]
    best_valid_bleu: Optional[float]
    skipped: int


def _dump_batch(out_dir: Path, step: int, batch: Batch, components: Dict[str, float]) -> Path:
    path = out_dir / f"nan_batch_step{step}.json"
    path.write_text(json.dumps({"step": step, "loss": components, "batch": batch.to_json()}), encoding="utf-8")
    return path


def _finite(components: Dict[str, float]) -> bool:
    return all(math.isfinite(v) for v in components.values())


def _metrics_writer(path: Path, resume_step: Optional[int], header: Dict[str, Any]):
    """
    Opens metrics.jsonl for writing. A fresh run (resume_step None) starts a new file.
    A resumed run appends, after dropping lines past the checkpoint step; the config
    line is written whenever the file does not already start with one.
    """
    kept: List[str] = []
    if resume_step is not None and path.exists():
        for line in path.read_text(encoding="utf-8").splitlines():
            obj = json.loads(line)
            if "config" in obj or obj.get("step", 0) <= resume_step:
                kept.append(line)
    if not kept or "config" not in json.loads(kept[0]):
        kept.insert(0, json.dumps({"config": header}, sort_keys=True))
    path.write_text("".join(l + "\n" for l in kept), encoding="utf-8")
    return path.open("a", encoding="utf-8", newline="\n")


def train(
    run: "RunConfig",
    train_records: Sequence[CorpusRecord],
    valid_records: Sequence[CorpusRecord],
    src_vocab: Vocab,
    tgt_vocab: Vocab,
    out_dir: Path,
    resume: bool = False,
) -> TrainResult:
    """
    Joint training. Writes metrics.jsonl (first line echoes the config), last.ckpt
    every checkpoint_interval steps and at the end, and best.ckpt whenever noisy
    validation BLEU improves. A non-finite loss dumps the batch and raises NaNLossError.
    """
    tc = run.train
    tc.validate()
    if not train_records:
        raise InputError("training corpus is empty")
    out_dir.mkdir(parents=True, exist_ok=True)
    console.open_run_log(out_dir / RUN_LOG, append=resume)

    seed = run.derive_seed("train")
    last_path, best_path = out_dir / CKPT_LAST, out_dir / CKPT_BEST
    best_bleu: Optional[float] = None

    if resume:
        ckpt = load_checkpoint(last_path)
        if ckpt.src_vocab != src_vocab or ckpt.tgt_vocab != tgt_vocab:
            raise InputError("vocabularies differ from the ones the checkpoint was trained with")
        params, adam = ckpt.params, ckpt.adam or AdamState(lr=tc.lr)
        run.model = ckpt.config
        step = ckpt.step
        best_bleu = ckpt.train_state.get("best_valid_bleu")
        console.log_info(f"Resuming from {last_path} at step {step}")
    else:
        run.model.src_vocab_size = len(src_vocab)
        run.model.tgt_vocab_size = len(tgt_vocab)
        params = ModelParams.init(run.model, run.derive_seed("init"))
        adam = AdamState(lr=tc.lr)
        step = 0
        console.log_info(f"Model: {params.n_weights():,} weights, mode {tc.mode}")

    schedule = InverseSqrtSchedule(tc.lr, tc.warmup, tc.warmup_init_lr)
    valid = list(valid_records[: tc.max_valid])
    skipped_total = 0

    def make_checkpoint() -> Checkpoint:
        return Checkpoint(
            params=params,
            src_vocab=src_vocab,
            tgt_vocab=tgt_vocab,
            adam=adam,
            train_state={"step": step, "mode": tc.mode, "best_valid_bleu": best_bleu},
            run_config=run.to_dict(),
        )

    metrics = _metrics_writer(out_dir / METRICS_FILE, step if resume else None, run.to_dict())

    def log_metrics(obj: Dict[str, Any]) -> None:
        metrics.write(json.dumps(obj, sort_keys=True) + "\n")
        metrics.flush()

    bar = tqdm(total=tc.max_steps, initial=step, desc=f"train[{tc.mode}]", unit="step", disable=console.is_quiet())
    try:
        epoch = 0
        consumed = 0
        while step < tc.max_steps:
            samples = build_samples(train_records, tc.mode, np.random.default_rng([seed, epoch, 1]), tc.clean_fraction)
            groups, skipped = make_batches(samples, tc.batch_tokens, np.random.default_rng([seed, epoch, 2]), run.model.max_len)
            if not groups:
                raise InputError(f"every training sentence is longer than model.max_len={run.model.max_len}")
            if skipped and epoch == 0:
                console.log_warn(f"Skipped {skipped} sentences longer than model.max_len={run.model.max_len}")
            skipped_total += skipped

            # On resume, fast-forward through batches the interrupted run already consumed.
            start = 0
            if consumed + len(groups) <= step:
                consumed += len(groups)
                epoch += 1
                continue
            if consumed < step:
                start = step - consumed

            prefetch = BatchPrefetcher(
                groups[start:],
                lambda g: collate(g, src_vocab, tgt_vocab, with_supervision=tc.use_predictors),
                tc.prefetch_depth,
            )
            with prefetch:
                for batch in prefetch:
                    if step >= tc.max_steps:
                        break
                    step += 1
                    out = joint_loss(params, batch, tc.use_predictors, np.random.default_rng([seed, step]))
                    if not _finite(out.components):
                        dump = _dump_batch(out_dir, step, batch, out.components)
                        raise NaNLossError(step, dump)
                    backward(out.total, params.parameters())
                    lr = schedule(step)
                    adam_step(params, params.grads(), adam, lr)
                    bar.update(1)

                    row = {"step": step, "lr": lr, "epoch": epoch, "sentences": batch.size}
                    row.update({f"loss_{k}": v for k, v in out.components.items()})
                    log_metrics(row)
                    if step % tc.log_interval == 0 or step == 1:
                        bar.set_postfix(loss=f"{out.components['total']:.3f}")
                        console.log_debug(f"step {step} " + " ".join(f"{k}={v:.4f}" for k, v in out.components.items()))

                    if valid and step % tc.eval_interval == 0:
                        vm = validation_metrics(params, src_vocab, tgt_vocab, valid)
                        log_metrics({"step": step, **vm})
                        console.log_info(
                            f"step {step}: valid BLEU {vm['valid_bleu']:.2f}, del F1 {vm['valid_del_f1']:.3f}, "
                            f"ins acc {vm['valid_ins_acc']:.3f}"
                        )
                        if best_bleu is None or vm["valid_bleu"] > best_bleu:
                            best_bleu = vm["valid_bleu"]
                            save_checkpoint(best_path, make_checkpoint())

                    if step % tc.checkpoint_interval == 0:
                        save_checkpoint(last_path, make_checkpoint())
            consumed += len(groups)
            epoch += 1

        save_checkpoint(last_path, make_checkpoint())
        console.log_ok(f"Training finished at step {step}; checkpoint {last_path}")
    finally:
        bar.close()
        metrics.close()
        console.close_run_log()
    return TrainResult(
        step=step,
        last_checkpoint=last_path,
        best_checkpoint=best_path if best_path.exists() else None,
        best_valid_bleu=best_bleu,
        skipped=skipped_total,
    )
