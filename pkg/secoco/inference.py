"""
Decoding: plain beam search (E2E mode) and iterative correction followed by
translation (Edit mode).

E2E mode never touches the deletion/insertion heads. Edit mode runs rounds of
deletion then insertion on the source until a round changes nothing, then
translates the corrected source with the same beam search.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Protocol, Sequence, Tuple, Union, runtime_checkable

import numpy as np

from .editsup import SURFACE_EMPTY, EditRound, EditTrace, apply_deletions, apply_insertions
from .errors import ConfigError, ContractViolation
from .model import ModelParams, decode_logits, deletion_probs, encode, insertion_probs, wrap_source
from .numerics import NEG_INF, Tensor
from .textops import BOS_ID, EMPTY_ID, EOS_ID, PAD_ID, UNK_ID, TokenSeq, Vocab

STOP_FIXPOINT = "fixpoint"
STOP_MAX_ITERS = "max_iters"
STOP_OVERFLOW = "overflow"
STOP_CYCLE = "cycle"


@dataclass
class DecodeConfig:
    beam: int = 5
    max_iters: int = 5
    del_threshold: float = 0.5
    len_alpha: float = 1.0
    latency_warmup: int = 2

    def validate(self) -> None:
        if self.beam < 1:
            raise ConfigError(f"decode.beam must be >= 1, got {self.beam}")
        if self.max_iters < 1:
            raise ConfigError(f"decode.max_iters must be >= 1, got {self.max_iters}")
        if not 0.0 < self.del_threshold < 1.0:
            raise ConfigError(f"decode.del_threshold must be in (0, 1), got {self.del_threshold}")
        if self.len_alpha < 0.0:
            raise ConfigError("decode.len_alpha must be >= 0")
        if self.latency_warmup < 0:
            raise ConfigError("decode.latency_warmup must be >= 0")


# Target ids the decoder may never emit.
_BLOCKED_OUTPUT = (PAD_ID, BOS_ID, EMPTY_ID)


def next_token_log_probs(params: ModelParams, memory: Tensor, src: np.ndarray, tgt_in: np.ndarray) -> np.ndarray:
    """Log-probabilities of the next target token for every row of `tgt_in`, (K, |V_tgt|)."""
    logits = decode_logits(params, memory, src, tgt_in).data[:, -1, :].astype(np.float64)
    logits[:, list(_BLOCKED_OUTPUT)] = NEG_INF
    logits -= logits.max(axis=1, keepdims=True)
    return logits - np.log(np.exp(logits).sum(axis=1, keepdims=True))


def max_output_len(params: ModelParams, n_src: int) -> int:
    return max(1, min(params.config.max_len - 1, 2 * n_src + 10))


def max_source_len(params: ModelParams) -> int:
    """Longest token sequence the encoder accepts once BOS/EOS are added."""
    return params.config.max_len - 2


def beam_search(
    params: ModelParams,
    src_ids: Sequence[int],
    beam: int = 5,
    len_alpha: float = 1.0,
    max_out: Optional[int] = None,
) -> Tuple[List[int], float]:
    """
    Returns (target ids without BOS/EOS, length-normalised log-probability).
    Hypotheses are scored sum(log p) / len**len_alpha, len counting EOS. Ties go
    to the lexicographically smaller id sequence. Width 1 is greedy decoding.
    """
    if beam < 1:
        raise ConfigError(f"beam width must be >= 1, got {beam}")
    src = np.asarray([wrap_source(src_ids)], dtype=np.int64)
    memory = encode(params, src)
    limit = max_out if max_out is not None else max_output_len(params, len(src_ids))

    def norm(logp: float, length: int) -> float:
        return logp / (length ** len_alpha) if length else logp

    alive: List[Tuple[List[int], float]] = [([BOS_ID], 0.0)]
    finished: List[Tuple[List[int], float]] = []
    for _ in range(limit):
        k = len(alive)
        tgt_in = np.asarray([ids for ids, _ in alive], dtype=np.int64)
        mem_k = Tensor(np.repeat(memory.data, k, axis=0), dtype=memory.data.dtype)
        logp = next_token_log_probs(params, mem_k, np.repeat(src, k, axis=0), tgt_in)

        candidates: List[Tuple[float, List[int]]] = []
        for row, (ids, score) in enumerate(alive):
            top = np.argsort(-logp[row], kind="stable")[:beam]
            for tok in top:
                candidates.append((score + float(logp[row, tok]), ids + [int(tok)]))
        candidates.sort(key=lambda c: (-c[0], c[1]))

        alive = []
        for score, ids in candidates[:beam]:
            if ids[-1] == EOS_ID:
                finished.append((ids[1:-1], norm(score, len(ids) - 1)))
            else:
                alive.append((ids, score))
        if len(finished) >= beam or not alive:
            break
    else:
        # Length limit reached: unfinished hypotheses compete only then.
        for ids, score in alive:
            finished.append((ids[1:], norm(score, len(ids) - 1)))
    best = min(finished, key=lambda f: (-f[1], f[0]))
    return best[0], best[1]


def translate_e2e(
    src: Sequence[str],
    params: ModelParams,
    src_vocab: Vocab,
    tgt_vocab: Vocab,
    beam: int = 5,
    len_alpha: float = 1.0,
) -> TokenSeq:
    if not src:
        return ()
    ids, _ = beam_search(params, src_vocab.encode(src), beam, len_alpha)
    return tgt_vocab.decode(ids)


# ---------------------------
# Iterative editing
# ---------------------------

@runtime_checkable
class EditPredictor(Protocol):
    def deletion_probs(self, tokens: TokenSeq) -> Sequence[float]: ...

    def insertion_labels(self, tokens: TokenSeq) -> Sequence[str]: ...


class ModelEditor:
    """Adapts a trained model's heads to the EditPredictor protocol (surface tokens in and out)."""

    # Labels the insertion head may never place.
    blocked_labels = (PAD_ID, BOS_ID, EOS_ID, UNK_ID, EMPTY_ID)

    def __init__(self, params: ModelParams, src_vocab: Vocab):
        if len(src_vocab) != params.config.src_vocab_size:
            raise ContractViolation("source vocabulary does not match the model")
        self.params = params
        self.vocab = src_vocab
        self.max_len = max_source_len(params)

    def _states(self, tokens: TokenSeq) -> Tensor:
        return encode(self.params, np.asarray([wrap_source(self.vocab.encode(tokens))], dtype=np.int64))

    def deletion_probs(self, tokens: TokenSeq) -> np.ndarray:
        probs = deletion_probs(self.params, self._states(tokens)).data[0]
        return probs[1 : len(tokens) + 1]

    def insertion_scores(self, tokens: TokenSeq) -> np.ndarray:
        """(n+1, |V|+1) class probabilities with the blocked labels zeroed."""
        probs = insertion_probs(self.params, self._states(tokens)).data[0].copy()
        probs[:, list(self.blocked_labels)] = 0.0
        return probs

    def insertion_labels(self, tokens: TokenSeq) -> List[str]:
        classes = self.insertion_scores(tokens).argmax(axis=1)
        out = []
        for c in classes:
            idx = self.vocab.ins_label(int(c))
            out.append(SURFACE_EMPTY if idx == self.vocab.empty_id else self.vocab.surface(idx))
        return out


def as_predictor(predictor: Union[ModelParams, EditPredictor], src_vocab: Optional[Vocab] = None) -> EditPredictor:
    if isinstance(predictor, ModelParams):
        if src_vocab is None:
            raise ConfigError("a source vocabulary is required to edit with model parameters")
        return ModelEditor(predictor, src_vocab)
    return predictor


@dataclass
class EditResult:
    corrected: TokenSeq
    trace: EditTrace
    n_iters: int
    converged: bool
    history: List[TokenSeq] = field(default_factory=list)
    stop_reason: str = STOP_FIXPOINT

    @property
    def n_edits(self) -> int:
        return sum(r.n_deletions() + r.n_insertions() for r in self.trace)


def correct_iteratively(
    src: Sequence[str],
    predictor: Union[ModelParams, EditPredictor],
    max_iters: int = 5,
    del_threshold: float = 0.5,
    src_vocab: Optional[Vocab] = None,
) -> EditResult:
    """
    Delete every position whose probability exceeds `del_threshold`, ask for insertion
    labels on the shortened sequence, apply both, repeat. Stops at the first round with
    no edits (converged), after `max_iters` rounds, when a round would push the sequence
    past the predictor's length limit, or when a sequence comes back a second time.
    Only rounds that changed something are recorded in the trace.
    """
    if max_iters < 1:
        raise ConfigError(f"max_iters must be >= 1, got {max_iters}")
    pred = as_predictor(predictor, src_vocab)
    limit = getattr(pred, "max_len", None)

    cur: TokenSeq = tuple(src)
    history = [cur]
    seen = {hash(cur)}
    rounds: List[EditRound] = []
    converged = False
    reason = STOP_MAX_ITERS
    n_iters = 0

    for it in range(1, max_iters + 1):
        n_iters = it
        probs = np.asarray(pred.deletion_probs(cur), dtype=np.float64)
        if probs.shape != (len(cur),):
            raise ContractViolation(f"predictor gave {probs.shape} deletion probabilities for {len(cur)} tokens")
        mask = tuple(int(p > del_threshold) for p in probs)
        kept = apply_deletions(cur, mask)
        labels = tuple(pred.insertion_labels(kept))
        rnd = EditRound(mask, labels)
        if rnd.is_identity():
            converged, reason = True, STOP_FIXPOINT
            break
        nxt = apply_insertions(kept, labels)
        if limit is not None and len(nxt) > limit:
            reason = STOP_OVERFLOW
            break
        rounds.append(rnd)
        cur = nxt
        history.append(cur)
        if hash(cur) in seen:
            reason = STOP_CYCLE
            break
        seen.add(hash(cur))

    return EditResult(cur, EditTrace(tuple(rounds)), n_iters, converged, history, reason)


def translate_edit(
    src: Sequence[str],
    params: ModelParams,
    src_vocab: Vocab,
    tgt_vocab: Vocab,
    beam: int = 5,
    max_iters: int = 5,
    del_threshold: float = 0.5,
    len_alpha: float = 1.0,
) -> Tuple[TokenSeq, EditResult]:
    result = correct_iteratively(src, ModelEditor(params, src_vocab), max_iters, del_threshold)
    return translate_e2e(result.corrected, params, src_vocab, tgt_vocab, beam, len_alpha), result


# ---------------------------
# Rendering
# ---------------------------

def render_round(seq: Sequence[str], rnd: EditRound) -> str:
    parts: List[str] = []
    k = 0
    for tok, bit in zip(seq, rnd.del_mask):
        if bit:
            parts.append(f"[-{tok}-]")
            continue
        if rnd.ins_labels[k] != SURFACE_EMPTY:
            parts.append(f"[+{rnd.ins_labels[k]}+]")
        parts.append(tok)
        k += 1
    if rnd.ins_labels[k] != SURFACE_EMPTY:
        parts.append(f"[+{rnd.ins_labels[k]}+]")
    return " ".join(parts)


def render_edits(source: Sequence[str], result: EditResult) -> str:
    """
    One line per iteration:

        0  We has things to to do today
        1  We [-has-] [+have+] things to [-to-] do today
        2  We have things to do today [+.+]
        3  (no edits)
    """
    lines = [f"0  {' '.join(source)}"]
    seq = tuple(source)
    for i, rnd in enumerate(result.trace, 1):
        lines.append(f"{i}  {render_round(seq, rnd)}")
        seq = apply_insertions(apply_deletions(seq, rnd.del_mask), rnd.ins_labels)
    if result.converged:
        lines.append(f"{result.n_iters}  (no edits)")
    else:
        lines.append(f"stopped: {result.stop_reason} after {result.n_iters} iterations")
    return "\n".join(lines)
