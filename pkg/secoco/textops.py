"""
Tokenization and vocabularies.

A sentence travels through the suite as a TokenSeq: a tuple of surface tokens.
Vocab.encode turns it into dense ids for the model and Vocab.decode recovers the
surfaces. Out-of-vocabulary tokens map to UNK.
"""

from __future__ import annotations

from collections import Counter
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

from .errors import ConfigError, InputError

TokenSeq = Tuple[str, ...]

PAD = "<pad>"
BOS = "<s>"
EOS = "</s>"
UNK = "<unk>"
EMPTY = "<empty>"

SPECIALS: Tuple[str, ...] = (PAD, BOS, EOS, UNK, EMPTY)
PAD_ID, BOS_ID, EOS_ID, UNK_ID, EMPTY_ID = range(len(SPECIALS))

MODES = ("whitespace", "char")


def normalize(text: str, mode: str = "whitespace") -> str:
    if mode == "char":
        return "".join((text or "").split())
    return " ".join((text or "").split())


def tokenize(text: str, mode: str = "whitespace") -> TokenSeq:
    if mode not in MODES:
        raise ConfigError(f"Unknown tokenization mode: {mode!r} (expected one of {', '.join(MODES)})")
    if mode == "char":
        return tuple(normalize(text, "char"))
    return tuple((text or "").split())


def detokenize(tokens: Sequence[str], mode: str = "whitespace") -> str:
    if mode == "char":
        return "".join(tokens)
    return " ".join(tokens)


class Vocab:
    """Immutable token <-> id table. Specials occupy ids 0..4 in a fixed order."""

    def __init__(self, tokens: Sequence[str]):
        tokens = tuple(tokens)
        if tokens[: len(SPECIALS)] != SPECIALS:
            raise ConfigError(f"Vocabulary must start with the specials {', '.join(SPECIALS)}")
        if len(set(tokens)) != len(tokens):
            raise ConfigError("Vocabulary contains duplicate tokens")
        self._tokens: Tuple[str, ...] = tokens
        self._index: Dict[str, int] = {t: i for i, t in enumerate(tokens)}

    pad_id = PAD_ID
    bos_id = BOS_ID
    eos_id = EOS_ID
    unk_id = UNK_ID
    empty_id = EMPTY_ID

    @property
    def tokens(self) -> Tuple[str, ...]:
        return self._tokens

    @property
    def special_ids(self) -> Tuple[int, ...]:
        return tuple(range(len(SPECIALS)))

    def __len__(self) -> int:
        return len(self._tokens)

    def __contains__(self, token: str) -> bool:
        return token in self._index

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Vocab) and other._tokens == self._tokens

    def __hash__(self) -> int:
        return hash(self._tokens)

    def lookup(self, token: str) -> int:
        return self._index.get(token, self.unk_id)

    def surface(self, idx: int) -> str:
        return self._tokens[idx]

    def encode(self, tokens: Iterable[str]) -> List[int]:
        return [self._index.get(t, self.unk_id) for t in tokens]

    def decode(self, ids: Iterable[int], strip_specials: bool = True) -> TokenSeq:
        out = []
        for i in ids:
            i = int(i)
            if strip_specials and i in (self.pad_id, self.bos_id, self.eos_id, self.empty_id):
                continue
            out.append(self._tokens[i])
        return tuple(out)

    def content_tokens(self) -> TokenSeq:
        """Non-special surfaces, in id order."""
        return self._tokens[len(SPECIALS):]

    # The insertion head scores |V|+1 classes: every vocab id plus one extra EMPTY
    # class at index |V|. The vocab's own EMPTY id folds into that extra class.
    @property
    def n_ins_classes(self) -> int:
        return len(self._tokens) + 1

    @property
    def ins_empty_class(self) -> int:
        return len(self._tokens)

    def ins_class(self, idx: int) -> int:
        return self.ins_empty_class if idx == self.empty_id else idx

    def ins_label(self, cls: int) -> int:
        return self.empty_id if cls == self.ins_empty_class else cls

    def encode_labels(self, labels: Iterable[str]) -> List[int]:
        """Surface insertion labels ("" = no insertion) -> vocab ids (EMPTY id for "")."""
        return [self.empty_id if lab == "" else self.lookup(lab) for lab in labels]

    def decode_labels(self, ids: Iterable[int]) -> List[str]:
        return ["" if int(i) == self.empty_id else self._tokens[int(i)] for i in ids]

    # ---------------------- files ----------------------
    def save(self, path: Path) -> None:
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", encoding="utf-8", newline="\n") as f:
            for t in self._tokens:
                f.write(t + "\n")

    @classmethod
    def load(cls, path: Path) -> "Vocab":
        if not path.exists():
            raise InputError(f"Vocabulary file not found: {path}")
        lines = path.read_text(encoding="utf-8").split("\n")
        if lines and lines[-1] == "":
            lines = lines[:-1]
        return cls(lines)


def build_vocab(corpus: Sequence[Sequence[str]], max_size: Optional[int] = None) -> Vocab:
    """Most frequent tokens first, ties broken lexicographically. Specials always present."""
    if not corpus:
        raise InputError("Cannot build a vocabulary from an empty corpus")
    if max_size is not None and max_size < len(SPECIALS):
        raise ConfigError(f"max_size={max_size} is smaller than the {len(SPECIALS)} special tokens")

    counts: Counter = Counter()
    for sent in corpus:
        counts.update(t for t in sent if t not in SPECIALS)

    ordered = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    if max_size is not None:
        ordered = ordered[: max_size - len(SPECIALS)]
    return Vocab(SPECIALS + tuple(t for t, _ in ordered))
