"""
Translation quality, edit-prediction accuracy and decoding latency.

BLEU is corpus-level BLEU-4 on whitespace tokens. Unigram precision is
unsmoothed; 2- to 4-gram precisions use add-one smoothing so small corpora do
not collapse to zero.
"""

from __future__ import annotations

import math
import time
from collections import Counter
from dataclasses import asdict, dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from .editsup import SURFACE_EMPTY, EditRound, EditTrace, apply_deletions, identity_round
from .errors import InputError
from .inference import (
    DecodeConfig,
    EditPredictor,
    as_predictor,
    correct_iteratively,
    render_edits,
    translate_e2e,
)
from .model import ModelParams
from .noise import CorpusRecord
from .textops import TokenSeq, Vocab

MODES = ("e2e", "edit")


# ---------------------------
# BLEU
# ---------------------------

def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def bleu_stats(hypotheses: Sequence[Sequence[str]], references: Sequence[Sequence[str]]) -> Dict[str, Any]:
    if len(hypotheses) != len(references):
        raise InputError(f"{len(hypotheses)} hypotheses for {len(references)} references")
    if not hypotheses:
        raise InputError("BLEU needs at least one sentence")
    matches = [0] * 4
    totals = [0] * 4
    hyp_len = ref_len = 0
    for hyp, ref in zip(hypotheses, references):
        hyp_len += len(hyp)
        ref_len += len(ref)
        for n in range(1, 5):
            h = _ngrams(hyp, n)
            r = _ngrams(ref, n)
            matches[n - 1] += sum(min(c, r[g]) for g, c in h.items())
            totals[n - 1] += max(len(hyp) - n + 1, 0)
    return {"matches": matches, "totals": totals, "hyp_len": hyp_len, "ref_len": ref_len}


def bleu4(hypotheses: Sequence[Sequence[str]], references: Sequence[Sequence[str]]) -> float:
    st = bleu_stats(hypotheses, references)
    m, t = st["matches"], st["totals"]
    if t[0] == 0 or m[0] == 0:
        return 0.0
    log_p = math.log(m[0] / t[0])
    for n in range(1, 4):
        log_p += math.log((m[n] + 1) / (t[n] + 1))
    c, r = st["hyp_len"], st["ref_len"]
    bp = 1.0 if c > r else math.exp(1.0 - r / c)
    return 100.0 * bp * math.exp(log_p / 4.0)


def sentence_bleu(hypothesis: Sequence[str], reference: Sequence[str]) -> float:
    return bleu4([hypothesis], [reference])


# ---------------------------
# Edit metrics
# ---------------------------

@dataclass
class EditScores:
    """Running counts over many sentences. Undefined ratios read as 0 with a flag."""
    del_tp: int = 0
    del_fp: int = 0
    del_fn: int = 0
    ins_correct: int = 0
    ins_total: int = 0
    ins_edit_correct: int = 0
    ins_edit_total: int = 0
    sentences: int = 0

    def add(self, other: "EditScores") -> "EditScores":
        for f in self.__dataclass_fields__:
            setattr(self, f, getattr(self, f) + getattr(other, f))
        return self

    @property
    def precision_defined(self) -> bool:
        return self.del_tp + self.del_fp > 0

    @property
    def recall_defined(self) -> bool:
        return self.del_tp + self.del_fn > 0

    @property
    def deletion_precision(self) -> float:
        return self.del_tp / (self.del_tp + self.del_fp) if self.precision_defined else 0.0

    @property
    def deletion_recall(self) -> float:
        return self.del_tp / (self.del_tp + self.del_fn) if self.recall_defined else 0.0

    @property
    def deletion_f1(self) -> float:
        p, r = self.deletion_precision, self.deletion_recall
        return 2 * p * r / (p + r) if p + r > 0 else 0.0

    @property
    def insertion_accuracy(self) -> float:
        return self.ins_correct / self.ins_total if self.ins_total else 0.0

    @property
    def insertion_accuracy_edits(self) -> float:
        return self.ins_edit_correct / self.ins_edit_total if self.ins_edit_total else 0.0


def _gold_round(noisy: Sequence[Any], gold: EditTrace, empty) -> EditRound:
    return gold.rounds[0] if gold else identity_round(noisy, empty)


def edit_metrics(
    predicted: Union[EditRound, EditTrace],
    gold: EditTrace,
    noisy: Sequence[Any],
    empty=SURFACE_EMPTY,
) -> EditScores:
    """
    Deletion is scored per noisy position against the gold first-round mask. Insertion
    is scored per boundary of the gold post-deletion sequence, so `predicted` must carry
    insertion labels for that sequence (see teacher_forced_round).
    """
    if isinstance(predicted, EditTrace):
        predicted = predicted.rounds[0] if predicted else identity_round(noisy, empty)
    g = _gold_round(noisy, gold, empty)
    if len(g.del_mask) != len(noisy):
        raise InputError(f"gold trace covers {len(g.del_mask)} positions, input has {len(noisy)}")
    if len(predicted.del_mask) != len(noisy):
        raise InputError(f"predicted mask covers {len(predicted.del_mask)} positions, input has {len(noisy)}")
    if len(predicted.ins_labels) != len(g.ins_labels):
        raise InputError(
            f"predicted insertions cover {len(predicted.ins_labels)} boundaries, gold post-deletion sequence has {len(g.ins_labels)}"
        )

    s = EditScores(sentences=1)
    for p, t in zip(predicted.del_mask, g.del_mask):
        if p and t:
            s.del_tp += 1
        elif p:
            s.del_fp += 1
        elif t:
            s.del_fn += 1
    for p, t in zip(predicted.ins_labels, g.ins_labels):
        s.ins_total += 1
        s.ins_correct += int(p == t)
        if t != empty:
            s.ins_edit_total += 1
            s.ins_edit_correct += int(p == t)
    return s


def teacher_forced_round(
    predictor: Union[ModelParams, EditPredictor],
    noisy: Sequence[str],
    gold_trace: EditTrace,
    del_threshold: float = 0.5,
    src_vocab: Optional[Vocab] = None,
) -> EditRound:
    """Predicted deletions on `noisy`, predicted insertions on the gold post-deletion sequence."""
    pred = as_predictor(predictor, src_vocab)
    noisy = tuple(noisy)
    mask = tuple(int(p > del_threshold) for p in pred.deletion_probs(noisy))
    after = apply_deletions(noisy, _gold_round(noisy, gold_trace, SURFACE_EMPTY).del_mask)
    return EditRound(mask, tuple(pred.insertion_labels(after)))


# ---------------------------
# Latency
# ---------------------------

def measure_latency(
    decode_fn: Callable[[Any], Any],
    test_set: Sequence[Any],
    warmup: int = 2,
    outputs: Optional[List[Any]] = None,
) -> float:
    """Mean wall-clock milliseconds per sentence, one sentence per call. Warmup calls are not timed."""
    if not test_set:
        raise InputError("latency needs at least one sentence")
    for item in test_set[: max(warmup, 0)]:
        decode_fn(item)
    total = 0.0
    for item in test_set:
        t0 = time.perf_counter()
        out = decode_fn(item)
        total += time.perf_counter() - t0
        if outputs is not None:
            outputs.append(out)
    return 1000.0 * total / len(test_set)


# ---------------------------
# Reports
# ---------------------------

@dataclass
class EvalReport:
    mode: str
    n_sentences: int
    bleu: float
    clean_bleu: Optional[float] = None
    deletion_precision: Optional[float] = None
    deletion_recall: Optional[float] = None
    deletion_f1: Optional[float] = None
    precision_defined: Optional[bool] = None
    insertion_accuracy: Optional[float] = None
    insertion_accuracy_edits: Optional[float] = None
    exact_correction: Optional[float] = None
    avg_iterations: Optional[float] = None
    converged_rate: Optional[float] = None
    latency_ms: Optional[float] = None

    def to_dict(self) -> Dict[str, Any]:
        return {k: v for k, v in asdict(self).items() if v is not None}


@dataclass
class SentenceRow:
    idx: int
    noisy: TokenSeq
    corrected: TokenSeq
    hypothesis: TokenSeq
    reference: TokenSeq
    edits_text: str = ""
    bleu: float = field(default=0.0)


def evaluate_model(
    params: ModelParams,
    src_vocab: Vocab,
    tgt_vocab: Vocab,
    records: Sequence[CorpusRecord],
    mode: str = "e2e",
    decode: Optional[DecodeConfig] = None,
    with_clean: bool = True,
    with_latency: bool = True,
) -> Tuple[EvalReport, List[SentenceRow]]:
    """
    Decode the noisy side of `records` in one mode and score it. Edit mode adds
    teacher-forced edit metrics, the exact-correction rate and iteration counts.
    """
    if mode not in MODES:
        raise InputError(f"unknown decoding mode {mode!r} (expected one of {', '.join(MODES)})")
    if not records:
        raise InputError("evaluation set is empty")
    decode = decode or DecodeConfig()
    decode.validate()

    def run(src: TokenSeq):
        if mode == "e2e":
            return src, None, translate_e2e(src, params, src_vocab, tgt_vocab, decode.beam, decode.len_alpha)
        result = correct_iteratively(src, params, decode.max_iters, decode.del_threshold, src_vocab)
        return result.corrected, result, translate_e2e(result.corrected, params, src_vocab, tgt_vocab, decode.beam, decode.len_alpha)

    outputs: List[Any] = []
    sources = [r.noisy for r in records]
    if with_latency:
        latency = measure_latency(run, sources, decode.latency_warmup, outputs)
    else:
        latency = None
        outputs = [run(s) for s in sources]

    hyps = [o[2] for o in outputs]
    refs = [r.target for r in records]
    report = EvalReport(mode=mode, n_sentences=len(records), bleu=bleu4(hyps, refs), latency_ms=latency)
    if with_clean:
        report.clean_bleu = bleu4([run(r.clean)[2] for r in records], refs)

    rows = []
    for r, (corrected, result, hyp) in zip(records, outputs):
        rows.append(SentenceRow(
            idx=r.idx,
            noisy=r.noisy,
            corrected=corrected,
            hypothesis=hyp,
            reference=r.target,
            edits_text=render_edits(r.noisy, result) if result is not None else "",
            bleu=sentence_bleu(hyp, r.target),
        ))

    if mode == "edit":
        scores = EditScores()
        for r in records:
            rnd = teacher_forced_round(params, r.noisy, r.trace, decode.del_threshold, src_vocab)
            scores.add(edit_metrics(rnd, r.trace, r.noisy))
        results = [o[1] for o in outputs]
        report.deletion_precision = scores.deletion_precision
        report.deletion_recall = scores.deletion_recall
        report.deletion_f1 = scores.deletion_f1
        report.precision_defined = scores.precision_defined
        report.insertion_accuracy = scores.insertion_accuracy
        report.insertion_accuracy_edits = scores.insertion_accuracy_edits
        report.exact_correction = float(np.mean([res.corrected == r.clean for res, r in zip(results, records)]))
        report.avg_iterations = float(np.mean([res.n_iters for res in results]))
        report.converged_rate = float(np.mean([res.converged for res in results]))
    return report, rows


def validation_metrics(
    params: ModelParams,
    src_vocab: Vocab,
    tgt_vocab: Vocab,
    records: Sequence[CorpusRecord],
    del_threshold: float = 0.5,
    beam: int = 1,
) -> Dict[str, float]:
    """Noisy-source BLEU plus teacher-forced deletion F1 and insertion accuracy."""
    hyps = [translate_e2e(r.noisy, params, src_vocab, tgt_vocab, beam) for r in records]
    scores = EditScores()
    for r in records:
        rnd = teacher_forced_round(params, r.noisy, r.trace, del_threshold, src_vocab)
        scores.add(edit_metrics(rnd, r.trace, r.noisy))
    return {
        "valid_bleu": bleu4(hyps, [r.target for r in records]),
        "valid_del_f1": scores.deletion_f1,
        "valid_ins_acc": scores.insertion_accuracy,
    }


def worst_k(rows: Sequence[SentenceRow], k: int) -> pd.DataFrame:
    """The k sentences with the lowest sentence BLEU, lowest first; ties by sentence id."""
    df = pd.DataFrame([
        {
            "id": r.idx,
            "sentence_bleu": r.bleu,
            "noisy": " ".join(r.noisy),
            "corrected": " ".join(r.corrected),
            "hypothesis": " ".join(r.hypothesis),
            "reference": " ".join(r.reference),
            "edits": r.edits_text,
        }
        for r in rows
    ], columns=["id", "sentence_bleu", "noisy", "corrected", "hypothesis", "reference", "edits"])
    return df.sort_values(["sentence_bleu", "id"], kind="mergesort").head(max(k, 0)).reset_index(drop=True)


def format_worst_k(df: pd.DataFrame) -> str:
    blocks = []
    for row in df.itertuples(index=False):
        lines = [
            f"# sentence {row.id}  BLEU {row.sentence_bleu:.2f}",
            f"SRC  {row.noisy}",
        ]
        if row.edits:
            lines.extend("     " + ln for ln in row.edits.split("\n"))
            lines.append(f"COR  {row.corrected}")
        lines.append(f"HYP  {row.hypothesis}")
        lines.append(f"REF  {row.reference}")
        blocks.append("\n".join(lines))
    return "\n\n".join(blocks) + ("\n" if blocks else "")
