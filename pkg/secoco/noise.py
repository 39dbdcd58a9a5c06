"""
Synthetic task and noise generation.

synth_task builds a toy parallel corpus (dictionary substitution, optionally
reversed). inject_noise corrupts a clean source left to right and records the
alignment it produced, from which the exact inverse edit trace is derived.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterable, Iterator, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from tqdm import tqdm

from .editsup import (
    EDIT_COST,
    EditTrace,
    NoiseEdit,
    NoiseRecord,
    count_edits,
    trace_from_json,
    trace_from_noise,
    trace_to_json,
)
from .errors import ConfigError, InputError, IntegrityError
from .textops import TokenSeq, detokenize, tokenize

PUNCT: Tuple[str, ...] = (".", ",", "?", "!")

# Correction that undoes each noise kind.
CORRECTION_CLASS = {
    "delete": "insert",
    "drop_punct": "insert",
    "insert": "delete",
    "repeat": "delete",
    "typo": "delete+insert",
    "swap_punct": "delete+insert",
}


@dataclass
class NoiseSpec:
    p_delete: float = 0.1
    p_insert: float = 0.1
    p_repeat: float = 0.1
    p_typo: float = 0.05
    p_drop_punct: float = 0.0
    p_swap_punct: float = 0.0
    max_edits: int = 3
    seed: Optional[int] = None

    def validate(self) -> None:
        for name in ("p_delete", "p_insert", "p_repeat", "p_typo", "p_drop_punct", "p_swap_punct"):
            v = getattr(self, name)
            if not 0.0 <= float(v) <= 1.0:
                raise ConfigError(f"noise.{name} must be in [0, 1], got {v}")
        if int(self.max_edits) < 0:
            raise ConfigError(f"noise.max_edits must be >= 0, got {self.max_edits}")

    def is_noop(self) -> bool:
        return self.max_edits == 0 or not any(
            (self.p_delete, self.p_insert, self.p_repeat, self.p_typo, self.p_drop_punct, self.p_swap_punct)
        )


@dataclass
class TaskSpec:
    n_words: int = 40
    min_len: int = 4
    max_len: int = 12
    reverse: bool = False
    punctuation: bool = True
    mode: str = "whitespace"
    seed: Optional[int] = None
    n_train: int = 5000
    n_valid: int = 500
    n_test: int = 500

    def validate(self) -> None:
        if self.mode not in ("whitespace", "char"):
            raise ConfigError(f"task.mode must be whitespace or char, got {self.mode!r}")
        if self.n_words < 1:
            raise ConfigError("task.n_words must be >= 1")
        if self.mode == "char" and self.n_words > 26:
            raise ConfigError("task.n_words cannot exceed 26 in char mode")
        if not 1 <= self.min_len <= self.max_len:
            raise ConfigError(f"task lengths must satisfy 1 <= min_len <= max_len, got {self.min_len}..{self.max_len}")
        if min(self.n_train, self.n_valid, self.n_test) < 0:
            raise ConfigError("split sizes must be >= 0")

    def source_words(self) -> List[str]:
        if self.mode == "char":
            return [chr(ord("a") + i) for i in range(self.n_words)]
        return [f"w{i:02d}" for i in range(self.n_words)]

    def target_words(self) -> List[str]:
        if self.mode == "char":
            return [chr(ord("A") + i) for i in range(self.n_words)]
        return [f"T{i:02d}" for i in range(self.n_words)]

    def dictionary(self, seed: int) -> Dict[str, str]:
        src, tgt = self.source_words(), self.target_words()
        perm = np.random.default_rng(seed).permutation(len(tgt))
        mapping = {s: tgt[int(p)] for s, p in zip(src, perm)}
        if self.punctuation and self.mode == "whitespace":
            mapping.update({p: p for p in PUNCT})
        return mapping


@dataclass
class NoisyPair:
    clean: TokenSeq
    noisy: TokenSeq
    record: NoiseRecord
    trace: EditTrace


@dataclass
class CorpusRecord:
    clean: TokenSeq
    noisy: TokenSeq
    target: TokenSeq
    trace: EditTrace
    edits: Tuple[NoiseEdit, ...] = field(default_factory=tuple)
    idx: int = 0

    def n_edits(self) -> int:
        return count_edits(self.trace)

    def to_json(self, mode: str = "whitespace") -> Dict[str, Any]:
        return {
            "id": self.idx,
            "clean": detokenize(self.clean, mode),
            "noisy": detokenize(self.noisy, mode),
            "target": detokenize(self.target, mode),
            "trace": trace_to_json(self.trace),
            "edits": [
                {"kind": e.kind, "index": e.clean_index, "token": e.token, "replacement": e.replacement}
                for e in self.edits
            ],
        }

    @classmethod
    def from_json(cls, obj: Dict[str, Any], mode: str = "whitespace") -> "CorpusRecord":
        try:
            return cls(
                clean=tokenize(obj["clean"], mode),
                noisy=tokenize(obj.get("noisy", obj["clean"]), mode),
                target=tokenize(obj["target"], mode),
                trace=trace_from_json(obj.get("trace", [])),
                edits=tuple(
                    NoiseEdit(e["kind"], int(e["index"]), e.get("token", ""), e.get("replacement", ""))
                    for e in obj.get("edits", [])
                ),
                idx=int(obj.get("id", 0)),
            )
        except KeyError as e:
            raise InputError(f"corpus record is missing field {e}") from None


# ---------------------------
# Task synthesis
# ---------------------------

def translate_source(source: Sequence[str], dictionary: Dict[str, str], reverse: bool = False) -> TokenSeq:
    try:
        out = [dictionary[t] for t in source]
    except KeyError as e:
        raise InputError(f"token {e} has no dictionary entry") from None
    if reverse:
        out.reverse()
    return tuple(out)


def synth_task(
    rng: np.random.Generator,
    n: int,
    task: TaskSpec,
    dictionary: Optional[Dict[str, str]] = None,
    dict_seed: int = 0,
) -> List[Tuple[TokenSeq, TokenSeq]]:
    words = task.source_words()
    if dictionary is None:
        dictionary = task.dictionary(task.seed if task.seed is not None else dict_seed)
    with_punct = task.punctuation and task.mode == "whitespace"

    pairs: List[Tuple[TokenSeq, TokenSeq]] = []
    for _ in range(n):
        length = int(rng.integers(task.min_len, task.max_len + 1))
        src = [words[int(k)] for k in rng.integers(len(words), size=length)]
        if with_punct:
            if length > 2 and rng.random() < 0.3:
                src.insert(int(rng.integers(1, length)), ",")
            src.append(".")
        source = tuple(src)
        pairs.append((source, translate_source(source, dictionary, task.reverse)))
    return pairs


# ---------------------------
# Noise injection
# ---------------------------

def _adjacent_swap(token: str, k: int) -> str:
    chars = list(token)
    chars[k], chars[k + 1] = chars[k + 1], chars[k]
    return "".join(chars)


def _swappable(clean: Sequence[str], i: int) -> bool:
    if i + 1 >= len(clean):
        return False
    a, b = clean[i], clean[i + 1]
    return len(a) == 1 and len(b) == 1 and a != b and a not in PUNCT and b not in PUNCT


def inject_noise(
    clean: Sequence[str],
    spec: NoiseSpec,
    rng: np.random.Generator,
    vocabulary: Sequence[str] = (),
) -> NoisyPair:
    """
    Corrupt `clean` left to right: an insertion site before the first token, then
    for every position deletion first, else typo/punctuation swap, else keep (and
    maybe repeat), followed by the insertion site after it. Atomic edits never
    exceed spec.max_edits; a typo costs two (delete + insert). Multi-character
    tokens get an adjacent-character swap inside the token; single-character tokens
    (char mode) swap places with the next token.
    """
    clean = tuple(clean)
    out: List[str] = []
    align: List[Optional[int]] = []
    edits: List[NoiseEdit] = []
    used = 0

    def can(cost: int) -> bool:
        return used + cost <= spec.max_edits

    def insertion_site(after: int) -> None:
        nonlocal used
        if spec.p_insert > 0 and vocabulary and can(1) and rng.random() < spec.p_insert:
            tok = vocabulary[int(rng.integers(len(vocabulary)))]
            out.append(tok)
            align.append(None)
            edits.append(NoiseEdit("insert", after, tok))
            used += 1

    if not clean or spec.is_noop():
        return NoisyPair(clean, clean, NoiseRecord(tuple(range(len(clean)))), EditTrace())

    insertion_site(-1)
    i = 0
    while i < len(clean):
        tok = clean[i]
        is_punct = tok in PUNCT
        if is_punct and spec.p_drop_punct > 0 and can(1) and rng.random() < spec.p_drop_punct:
            edits.append(NoiseEdit("drop_punct", i, tok))
            used += 1
        elif spec.p_delete > 0 and can(1) and rng.random() < spec.p_delete:
            edits.append(NoiseEdit("delete", i, tok))
            used += 1
        elif is_punct and spec.p_swap_punct > 0 and can(2) and rng.random() < spec.p_swap_punct:
            others = [p for p in PUNCT if p != tok]
            rep = others[int(rng.integers(len(others)))]
            out.append(rep)
            align.append(None)
            edits.append(NoiseEdit("swap_punct", i, tok, rep))
            used += 2
        elif (
            spec.p_typo > 0 and len(tok) >= 2 and can(2) and rng.random() < spec.p_typo
            and (rep := _adjacent_swap(tok, int(rng.integers(len(tok) - 1)))) != tok
        ):
            out.append(rep)
            align.append(None)
            edits.append(NoiseEdit("typo", i, tok, rep))
            used += 2
        elif (
            spec.p_typo > 0 and _swappable(clean, i) and can(2) and rng.random() < spec.p_typo
        ):
            # Single-character tokens swap with their right neighbour, which stays aligned.
            nxt = clean[i + 1]
            out.extend((nxt, tok))
            align.extend((i + 1, None))
            edits.append(NoiseEdit("typo", i, tok, nxt + tok))
            used += 2
            i += 1
        else:
            out.append(tok)
            align.append(i)
            if spec.p_repeat > 0 and can(1) and rng.random() < spec.p_repeat:
                out.append(tok)
                align.append(None)
                edits.append(NoiseEdit("repeat", i, tok))
                used += 1
        insertion_site(i)
        i += 1

    noisy = tuple(out)
    record = NoiseRecord(tuple(align), tuple(edits))
    return NoisyPair(clean, noisy, record, trace_from_noise(noisy, clean, record))


def synth_corpus(
    pairs: Sequence[Tuple[TokenSeq, TokenSeq]],
    spec: NoiseSpec,
    seed: int,
    vocabulary: Sequence[str],
    progress: bool = False,
) -> List[CorpusRecord]:
    """Attach noise to clean pairs. Sentence i draws from its own generator seeded (seed, i)."""
    spec.validate()
    it: Iterable[Tuple[int, Tuple[TokenSeq, TokenSeq]]] = enumerate(pairs)
    if progress:
        it = tqdm(it, total=len(pairs), desc="noise", unit="sent")

    records: List[CorpusRecord] = []
    for i, (src, tgt) in it:
        rng = np.random.default_rng([seed, i])
        pair = inject_noise(src, spec, rng, vocabulary)
        records.append(CorpusRecord(pair.clean, pair.noisy, tgt, pair.trace, pair.record.edits, i))
    return records


def noise_stats(records: Sequence[CorpusRecord]) -> pd.DataFrame:
    """Counts per noise kind, with the rate per clean token."""
    n_tokens = sum(len(r.clean) for r in records) or 1
    rows = []
    for kind in EDIT_COST:
        count = sum(1 for r in records for e in r.edits if e.kind == kind)
        rows.append({
            "noise_type": kind,
            "correction": CORRECTION_CLASS[kind],
            "count": count,
            "per_token": count / n_tokens,
        })
    df = pd.DataFrame(rows)
    df.attrs["sentences"] = len(records)
    df.attrs["noisy_sentences"] = sum(1 for r in records if r.trace)
    df.attrs["tokens"] = n_tokens
    return df


# ---------------------------
# JSON-lines files
# ---------------------------

def write_jsonl(path: Path, records: Sequence[CorpusRecord], mode: str = "whitespace") -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="\n") as f:
        for r in records:
            f.write(json.dumps(r.to_json(mode), ensure_ascii=False, sort_keys=True) + "\n")


def iter_jsonl(path: Path, mode: str = "whitespace") -> Iterator[CorpusRecord]:
    if not path.exists():
        raise InputError(f"Corpus file not found: {path}")
    with path.open("r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise IntegrityError(f"{path}:{lineno}: invalid JSON ({e})") from None
            yield CorpusRecord.from_json(obj, mode)


def read_jsonl(path: Path, mode: str = "whitespace") -> List[CorpusRecord]:
    return list(iter_jsonl(path, mode))
