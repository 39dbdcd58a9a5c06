"""
Edit operation algebra: deletion masks, insertion labels, rounds and traces.

Every operation is generic over the element type. Corpus files and noise work on
surface tokens, where "" marks an empty insertion slot; the model works on ids,
where the vocabulary's EMPTY id plays that role. Pass `empty=` accordingly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Dict, Hashable, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from .errors import ContractViolation, IntegrityError

SURFACE_EMPTY = ""

# Trace cost of each noise kind, in atomic edits (deletions + insertions).
EDIT_COST = {
    "delete": 1,
    "drop_punct": 1,
    "insert": 1,
    "repeat": 1,
    "typo": 2,
    "swap_punct": 2,
}


@dataclass(frozen=True)
class EditRound:
    del_mask: Tuple[int, ...]
    ins_labels: Tuple[Any, ...]

    def n_deletions(self) -> int:
        return int(sum(self.del_mask))

    def n_insertions(self, empty: Hashable = SURFACE_EMPTY) -> int:
        return sum(1 for lab in self.ins_labels if lab != empty)

    def is_identity(self, empty: Hashable = SURFACE_EMPTY) -> bool:
        return self.n_deletions() == 0 and self.n_insertions(empty) == 0


@dataclass(frozen=True)
class EditTrace:
    rounds: Tuple[EditRound, ...] = ()

    def __len__(self) -> int:
        return len(self.rounds)

    def __iter__(self) -> Iterator[EditRound]:
        return iter(self.rounds)

    def __bool__(self) -> bool:
        return bool(self.rounds)


@dataclass(frozen=True)
class NoiseEdit:
    kind: str
    clean_index: int
    token: str = ""
    replacement: str = ""


@dataclass(frozen=True)
class NoiseRecord:
    """What inject_noise did: for each noisy position, the clean index it copies (None if spurious)."""
    alignment: Tuple[Optional[int], ...]
    edits: Tuple[NoiseEdit, ...] = field(default_factory=tuple)

    def cost(self) -> int:
        return sum(EDIT_COST.get(e.kind, 0) for e in self.edits)


# ---------------------------
# Primitive operations
# ---------------------------

def apply_deletions(seq: Sequence[Any], mask: Sequence[int]) -> Tuple[Any, ...]:
    if len(mask) != len(seq):
        raise ContractViolation(f"deletion mask has {len(mask)} bits for a sequence of {len(seq)} tokens")
    return tuple(tok for tok, bit in zip(seq, mask) if not bit)


def apply_insertions(seq: Sequence[Any], labels: Sequence[Any], empty: Hashable = SURFACE_EMPTY) -> Tuple[Any, ...]:
    if len(labels) != len(seq) + 1:
        raise ContractViolation(f"{len(labels)} insertion labels for {len(seq) + 1} boundaries")
    out: List[Any] = []
    for j, lab in enumerate(labels):
        if lab != empty:
            out.append(lab)
        if j < len(seq):
            out.append(seq[j])
    return tuple(out)


def apply_round(seq: Sequence[Any], rnd: EditRound, empty: Hashable = SURFACE_EMPTY) -> Tuple[Any, ...]:
    return apply_insertions(apply_deletions(seq, rnd.del_mask), rnd.ins_labels, empty)


def replay(seq: Sequence[Any], trace: EditTrace, empty: Hashable = SURFACE_EMPTY) -> Tuple[Any, ...]:
    cur = tuple(seq)
    for rnd in trace:
        cur = apply_round(cur, rnd, empty)
    return cur


def intermediate_sequences(seq: Sequence[Any], trace: EditTrace, empty: Hashable = SURFACE_EMPTY) -> List[Tuple[Any, ...]]:
    """Sequence before each round, then the final result."""
    states = [tuple(seq)]
    for rnd in trace:
        states.append(apply_round(states[-1], rnd, empty))
    return states


def identity_round(seq: Sequence[Any], empty: Hashable = SURFACE_EMPTY) -> EditRound:
    return EditRound(del_mask=(0,) * len(seq), ins_labels=(empty,) * (len(seq) + 1))


def count_edits(trace: EditTrace, empty: Hashable = SURFACE_EMPTY) -> int:
    return sum(r.n_deletions() + r.n_insertions(empty) for r in trace)


def map_trace(trace: EditTrace, fn, empty_in: Hashable = SURFACE_EMPTY, empty_out: Hashable = SURFACE_EMPTY) -> EditTrace:
    """Translate insertion labels (e.g. surfaces -> ids). `fn` is applied to non-empty labels."""
    rounds = []
    for r in trace:
        labels = tuple(empty_out if lab == empty_in else fn(lab) for lab in r.ins_labels)
        rounds.append(EditRound(r.del_mask, labels))
    return EditTrace(tuple(rounds))


# ---------------------------
# Traces from recorded noise
# ---------------------------

def trace_from_noise(noisy: Sequence[str], clean: Sequence[str], record: NoiseRecord) -> EditTrace:
    """
    Shortest alternating decomposition that turns `noisy` back into `clean`.

    Round 1 deletes every spurious noisy token. Missing clean tokens are restored one per
    boundary per round, left to right inside each gap, so the round count equals the longest
    run of consecutive missing clean tokens (at least one round if anything was deleted).
    """
    align = record.alignment
    if len(align) != len(noisy):
        raise IntegrityError(f"noise record aligns {len(align)} positions, noisy sequence has {len(noisy)}")

    kept: List[int] = []
    for j, ci in enumerate(align):
        if ci is None:
            continue
        if ci < 0 or ci >= len(clean):
            raise IntegrityError(f"noisy position {j} points at clean index {ci} outside 0..{len(clean) - 1}")
        if kept and ci <= kept[-1]:
            raise IntegrityError(f"noise record alignment is not monotone at noisy position {j}")
        if noisy[j] != clean[ci]:
            raise IntegrityError(f"noisy token {noisy[j]!r} at {j} does not match clean token {clean[ci]!r}")
        kept.append(ci)

    spurious = sum(1 for ci in align if ci is None)
    missing = len(clean) - len(kept)
    if record.edits and record.cost() != spurious + missing:
        raise IntegrityError(
            f"noise record lists edits worth {record.cost()} atomic operations, alignment implies {spurious + missing}"
        )

    if spurious == 0 and missing == 0:
        return EditTrace()

    rounds: List[EditRound] = []
    present = list(kept)
    del_mask: Tuple[int, ...] = tuple(1 if ci is None else 0 for ci in align)
    while True:
        labels: List[str] = []
        added: List[int] = []
        bounds = [-1] + present + [len(clean)]
        for b in range(len(present) + 1):
            left, right = bounds[b], bounds[b + 1]
            if right - left > 1:
                labels.append(clean[left + 1])
                added.append(left + 1)
            else:
                labels.append(SURFACE_EMPTY)
        rounds.append(EditRound(del_mask, tuple(labels)))
        present = sorted(present + added)
        if len(present) == len(clean):
            break
        del_mask = (0,) * len(present)
    return EditTrace(tuple(rounds))


# ---------------------------
# Supervision sampling
# ---------------------------

def sample_supervision(
    trace: EditTrace,
    start: Sequence[Any],
    rng: np.random.Generator,
    empty: Hashable = SURFACE_EMPTY,
) -> Tuple[Tuple[Tuple[Any, ...], Tuple[int, ...]], Tuple[Tuple[Any, ...], Tuple[Any, ...]]]:
    """
    Pick one round uniformly. Returns ((round input, deletion mask),
    (post-deletion sequence, insertion labels)). An empty trace gives identity
    supervision on `start`, which is then the clean sequence.
    """
    if not trace:
        seq = tuple(start)
        ident = identity_round(seq, empty)
        return (seq, ident.del_mask), (seq, ident.ins_labels)

    states = intermediate_sequences(start, trace, empty)
    t = int(rng.integers(len(trace))) if len(trace) > 1 else 0
    rnd = trace.rounds[t]
    seq = states[t]
    after_del = apply_deletions(seq, rnd.del_mask)
    if len(rnd.ins_labels) != len(after_del) + 1:
        raise ContractViolation(f"round {t} has {len(rnd.ins_labels)} labels for {len(after_del) + 1} boundaries")
    return (seq, rnd.del_mask), (after_del, rnd.ins_labels)


# ---------------------------
# JSON form
# ---------------------------

def round_to_json(rnd: EditRound) -> Dict[str, Any]:
    return {"del": "".join("1" if b else "0" for b in rnd.del_mask), "ins": list(rnd.ins_labels)}


def round_from_json(obj: Dict[str, Any]) -> EditRound:
    mask = obj.get("del", "")
    if any(c not in "01" for c in mask):
        raise IntegrityError(f"deletion mask must be a 0/1 string, got {mask!r}")
    return EditRound(tuple(int(c) for c in mask), tuple(str(x) for x in obj.get("ins", [])))


def trace_to_json(trace: EditTrace) -> List[Dict[str, Any]]:
    return [round_to_json(r) for r in trace]


def trace_from_json(rounds: Sequence[Dict[str, Any]]) -> EditTrace:
    return EditTrace(tuple(round_from_json(r) for r in rounds))
