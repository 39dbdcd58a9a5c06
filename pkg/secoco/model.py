"""
Transformer encoder-decoder with the two self-correcting heads.

The deletion head scores every real source position with sigmoid(h W), W in R^{d x 1}.
The insertion head scores every boundary of the source, including sentence start
and end, with softmax([h_j; h_{j+1}] Z) over |V|+1 classes (the last is EMPTY).
Both heads read the top encoder layer. Sentinels BOS/EOS wrap every source so an
n-token sentence exposes n+1 boundaries.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Dict, Iterator, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .errors import ConfigError, ContractViolation, InputError
from .numerics import (
    NEG_INF,
    Tensor,
    add,
    attention_scores,
    binary_cross_entropy_with_logits,
    concat,
    cross_entropy,
    dropout,
    embedding_lookup,
    layer_norm,
    matmul,
    parameter,
    relu,
    scale,
    sigmoid,
    softmax,
)
from .textops import BOS_ID, EOS_ID, PAD_ID

IGNORE = -100


@dataclass
class ModelConfig:
    d_model: int = 64
    n_heads: int = 2
    n_enc_layers: int = 2
    n_dec_layers: int = 2
    d_ffn: int = 128
    max_len: int = 64
    src_vocab_size: int = 0
    tgt_vocab_size: int = 0
    dropout: float = 0.1

    def validate(self) -> None:
        if self.d_model < 1 or self.n_heads < 1 or self.d_model % self.n_heads:
            raise ConfigError(f"model.d_model={self.d_model} must be divisible by model.n_heads={self.n_heads}")
        if self.n_enc_layers < 1 or self.n_dec_layers < 1 or self.d_ffn < 1:
            raise ConfigError("model layer counts and d_ffn must be >= 1")
        if self.max_len < 3:
            raise ConfigError("model.max_len must leave room for BOS/EOS sentinels")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"model.dropout must be in [0, 1), got {self.dropout}")

    def validate_vocab(self) -> None:
        if self.src_vocab_size < 5 or self.tgt_vocab_size < 5:
            raise ConfigError("model vocab sizes are unset; build or load vocabularies first")

    @property
    def n_ins_classes(self) -> int:
        return self.src_vocab_size + 1


def param_shapes(cfg: ModelConfig) -> Dict[str, Tuple[int, ...]]:
    d, f = cfg.d_model, cfg.d_ffn
    shapes: Dict[str, Tuple[int, ...]] = {
        "src_emb": (cfg.src_vocab_size, d),
        "tgt_emb": (cfg.tgt_vocab_size, d),
    }

    def attn(prefix: str) -> None:
        for w in ("q", "k", "v", "o"):
            shapes[f"{prefix}.w{w}"] = (d, d)
            shapes[f"{prefix}.b{w}"] = (d,)

    def ln(prefix: str) -> None:
        shapes[f"{prefix}.g"] = (d,)
        shapes[f"{prefix}.b"] = (d,)

    def ffn(prefix: str) -> None:
        shapes[f"{prefix}.w1"] = (d, f)
        shapes[f"{prefix}.b1"] = (f,)
        shapes[f"{prefix}.w2"] = (f, d)
        shapes[f"{prefix}.b2"] = (d,)

    for i in range(cfg.n_enc_layers):
        ln(f"enc.{i}.ln1"); attn(f"enc.{i}.self"); ln(f"enc.{i}.ln2"); ffn(f"enc.{i}.ffn")
    ln("enc.ln")
    for i in range(cfg.n_dec_layers):
        ln(f"dec.{i}.ln1"); attn(f"dec.{i}.self"); ln(f"dec.{i}.ln2"); attn(f"dec.{i}.cross")
        ln(f"dec.{i}.ln3"); ffn(f"dec.{i}.ffn")
    ln("dec.ln")
    shapes["out.w"] = (d, cfg.tgt_vocab_size)
    shapes["out.b"] = (cfg.tgt_vocab_size,)
    shapes["del_head.w"] = (d, 1)
    shapes["ins_head.z"] = (2 * d, cfg.n_ins_classes)
    return shapes


class ModelParams(Mapping[str, Tensor]):
    """Named learnable tensors of one model. Shapes always match the config."""

    def __init__(self, config: ModelConfig, tensors: Mapping[str, Tensor]):
        expected = param_shapes(config)
        missing = set(expected) - set(tensors)
        extra = set(tensors) - set(expected)
        if missing or extra:
            raise ContractViolation(
                f"parameter names do not match the config (missing: {sorted(missing)[:5]}, unexpected: {sorted(extra)[:5]})"
            )
        for name, shape in expected.items():
            if tuple(tensors[name].shape) != shape:
                raise ContractViolation(f"parameter {name} has shape {tensors[name].shape}, config expects {shape}")
        self.config = config
        self._tensors: Dict[str, Tensor] = {name: tensors[name] for name in expected}

    @classmethod
    def init(cls, config: ModelConfig, seed: int) -> "ModelParams":
        config.validate()
        config.validate_vocab()
        rng = np.random.default_rng(seed)
        tensors: Dict[str, Tensor] = {}
        for name, shape in param_shapes(config).items():
            leaf = name.rsplit(".", 1)[-1]
            if name.endswith("_emb"):
                data = rng.normal(0.0, config.d_model ** -0.5, size=shape)
            elif leaf == "g":
                data = np.ones(shape)
            elif len(shape) == 1:
                data = np.zeros(shape)
            else:
                data = rng.normal(0.0, math.sqrt(2.0 / (shape[0] + shape[1])), size=shape)
            tensors[name] = parameter(data, name)
        return cls(config, tensors)

    def __getitem__(self, name: str) -> Tensor:
        return self._tensors[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self._tensors)

    def __len__(self) -> int:
        return len(self._tensors)

    def parameters(self) -> List[Tensor]:
        return list(self._tensors.values())

    def grads(self) -> Dict[str, np.ndarray]:
        return {n: (t.grad if t.grad is not None else np.zeros_like(t.data)) for n, t in self._tensors.items()}

    def copy(self, dtype=None) -> "ModelParams":
        return ModelParams(
            self.config,
            {n: Tensor(t.data.copy() if dtype is None else t.data.astype(dtype), True, n, dtype=dtype or t.data.dtype)
             for n, t in self._tensors.items()},
        )

    def n_weights(self) -> int:
        return sum(t.size for t in self._tensors.values())


# ---------------------------
# Building blocks
# ---------------------------

@lru_cache(maxsize=8)
def sinusoidal_positions(max_len: int, d: int) -> np.ndarray:
    pos = np.arange(max_len)[:, None]
    i = np.arange(d)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / d)
    table = np.where(i % 2 == 0, np.sin(angle), np.cos(angle))
    table.setflags(write=False)
    return table


def _linear(p: ModelParams, x: Tensor, w: str, b: str) -> Tensor:
    return add(matmul(x, p[w]), p[b])


def _ln(p: ModelParams, x: Tensor, prefix: str) -> Tensor:
    return layer_norm(x, p[f"{prefix}.g"], p[f"{prefix}.b"])


def _split_heads(x: Tensor, n_heads: int) -> Tensor:
    b, length, d = x.shape
    return x.reshape(b, length, n_heads, d // n_heads).transpose(0, 2, 1, 3)


def _merge_heads(x: Tensor) -> Tensor:
    b, h, length, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(b, length, h * dh)


def multi_head_attention(
    p: ModelParams,
    prefix: str,
    xq: Tensor,
    xkv: Tensor,
    mask_add: Optional[np.ndarray],
    rng: Optional[np.random.Generator] = None,
) -> Tensor:
    h = p.config.n_heads
    q = _split_heads(_linear(p, xq, f"{prefix}.wq", f"{prefix}.bq"), h)
    k = _split_heads(_linear(p, xkv, f"{prefix}.wk", f"{prefix}.bk"), h)
    v = _split_heads(_linear(p, xkv, f"{prefix}.wv", f"{prefix}.bv"), h)
    weights = dropout(softmax(attention_scores(q, k, mask_add)), p.config.dropout, rng)
    return _linear(p, _merge_heads(matmul(weights, v)), f"{prefix}.wo", f"{prefix}.bo")


def feed_forward(p: ModelParams, prefix: str, x: Tensor, rng: Optional[np.random.Generator] = None) -> Tensor:
    hidden = dropout(relu(_linear(p, x, f"{prefix}.w1", f"{prefix}.b1")), p.config.dropout, rng)
    return _linear(p, hidden, f"{prefix}.w2", f"{prefix}.b2")


def padding_mask(ids: np.ndarray) -> np.ndarray:
    """(B, L) ids -> (B, 1, 1, L) additive mask hiding PAD keys."""
    return np.where(ids == PAD_ID, NEG_INF, 0.0)[:, None, None, :]


def causal_mask(length: int) -> np.ndarray:
    return np.triu(np.full((length, length), NEG_INF), k=1)[None, None, :, :]


def _embed(p: ModelParams, table: str, ids: np.ndarray, rng: Optional[np.random.Generator]) -> Tensor:
    cfg = p.config
    length = ids.shape[1]
    if length > cfg.max_len:
        raise InputError(f"sequence of {length} positions exceeds model.max_len={cfg.max_len}")
    x = scale(embedding_lookup(p[table], ids), math.sqrt(cfg.d_model))
    x = add(x, Tensor(sinusoidal_positions(cfg.max_len, cfg.d_model)[:length], dtype=x.data.dtype))
    return dropout(x, cfg.dropout, rng)


# ---------------------------
# Forward passes
# ---------------------------

def wrap_source(ids: Sequence[int]) -> List[int]:
    return [BOS_ID] + list(ids) + [EOS_ID]


def pad_batch(rows: Sequence[Sequence[int]], fill: int = PAD_ID, min_len: int = 0) -> np.ndarray:
    width = max([len(r) for r in rows] + [min_len])
    out = np.full((len(rows), width), fill, dtype=np.int64)
    for i, r in enumerate(rows):
        out[i, : len(r)] = r
    return out


def encode(p: ModelParams, src: np.ndarray, rng: Optional[np.random.Generator] = None) -> Tensor:
    """(B, L) sentinel-wrapped, PAD-filled ids -> (B, L, d) top-layer states."""
    src = np.asarray(src, dtype=np.int64)
    if src.ndim != 2:
        raise ContractViolation(f"encode expects a (batch, length) id array, got shape {src.shape}")
    if src.size and src.max() >= p.config.src_vocab_size:
        raise InputError(f"source ids must be < {p.config.src_vocab_size}")
    mask = padding_mask(src)
    x = _embed(p, "src_emb", src, rng)
    for i in range(p.config.n_enc_layers):
        h = _ln(p, x, f"enc.{i}.ln1")
        x = add(x, dropout(multi_head_attention(p, f"enc.{i}.self", h, h, mask, rng), p.config.dropout, rng))
        h = _ln(p, x, f"enc.{i}.ln2")
        x = add(x, dropout(feed_forward(p, f"enc.{i}.ffn", h, rng), p.config.dropout, rng))
    return _ln(p, x, "enc.ln")


def decode_logits(
    p: ModelParams,
    memory: Tensor,
    src: np.ndarray,
    tgt_in: np.ndarray,
    rng: Optional[np.random.Generator] = None,
) -> Tensor:
    """Teacher-forced next-token logits, (B, T, |V_tgt|). Position t sees tgt_in[:, :t+1] only."""
    tgt_in = np.asarray(tgt_in, dtype=np.int64)
    self_mask = causal_mask(tgt_in.shape[1])
    cross_mask = padding_mask(np.asarray(src))
    x = _embed(p, "tgt_emb", tgt_in, rng)
    for i in range(p.config.n_dec_layers):
        h = _ln(p, x, f"dec.{i}.ln1")
        x = add(x, dropout(multi_head_attention(p, f"dec.{i}.self", h, h, self_mask, rng), p.config.dropout, rng))
        h = _ln(p, x, f"dec.{i}.ln2")
        x = add(x, dropout(multi_head_attention(p, f"dec.{i}.cross", h, memory, cross_mask, rng), p.config.dropout, rng))
        h = _ln(p, x, f"dec.{i}.ln3")
        x = add(x, dropout(feed_forward(p, f"dec.{i}.ffn", h, rng), p.config.dropout, rng))
    x = _ln(p, x, "dec.ln")
    return _linear(p, x, "out.w", "out.b")


def deletion_logits(p: ModelParams, states: Tensor) -> Tensor:
    b, length, _ = states.shape
    return matmul(states, p["del_head.w"]).reshape(b, length)


def deletion_probs(p: ModelParams, states: Tensor) -> Tensor:
    """Per-position delete probability, (B, L). Sentinel and PAD columns are meaningless."""
    return sigmoid(deletion_logits(p, states))


def boundary_states(states: Tensor) -> Tensor:
    """[h_j; h_{j+1}] for every adjacent pair: (B, L, d) -> (B, L-1, 2d)."""
    return concat([states[:, :-1, :], states[:, 1:, :]], axis=-1)


def insertion_logits(p: ModelParams, states: Tensor) -> Tensor:
    return matmul(boundary_states(states), p["ins_head.z"])


def insertion_probs(p: ModelParams, states: Tensor) -> Tensor:
    return softmax(insertion_logits(p, states))


# ---------------------------
# Batches and the joint objective
# ---------------------------

@dataclass
class Batch:
    src: np.ndarray
    tgt_in: np.ndarray
    tgt_out: np.ndarray
    del_src: Optional[np.ndarray] = None
    del_tgt: Optional[np.ndarray] = None
    del_mask: Optional[np.ndarray] = None
    ins_src: Optional[np.ndarray] = None
    ins_tgt: Optional[np.ndarray] = None

    @property
    def size(self) -> int:
        return int(self.src.shape[0])

    @property
    def has_supervision(self) -> bool:
        return all(x is not None for x in (self.del_src, self.del_tgt, self.del_mask, self.ins_src, self.ins_tgt))

    def n_tokens(self) -> int:
        return int((self.src != PAD_ID).sum() + (self.tgt_out != IGNORE).sum())

    def to_json(self) -> Dict[str, list]:
        return {k: v.tolist() for k, v in self.__dict__.items() if v is not None}


def collate(samples: Sequence, src_vocab, tgt_vocab, with_supervision: bool = True) -> Batch:
    """
    Encode a list of samples (objects with source, target, del_sup, ins_sup) into padded arrays.
    Deletion targets sit at positions 1..n of the sentinel-wrapped sequence; insertion
    targets are head classes at boundaries 0..n, IGNORE beyond.
    """
    src = pad_batch([wrap_source(src_vocab.encode(s.source)) for s in samples])
    tgt_ids = [tgt_vocab.encode(s.target) for s in samples]
    tgt_in = pad_batch([[BOS_ID] + t for t in tgt_ids])
    tgt_out = pad_batch([t + [EOS_ID] for t in tgt_ids], fill=IGNORE)
    batch = Batch(src=src, tgt_in=tgt_in, tgt_out=tgt_out)
    if not with_supervision:
        return batch

    del_rows, del_tgts, ins_rows, ins_tgts = [], [], [], []
    for s in samples:
        if s.del_sup is None or s.ins_sup is None:
            raise InputError("sample is missing deletion/insertion supervision")
        seq, mask = s.del_sup
        if len(seq) != len(mask):
            raise ContractViolation("deletion supervision mask does not match its sequence")
        del_rows.append(wrap_source(src_vocab.encode(seq)))
        del_tgts.append([0] + list(mask) + [0])
        iseq, labels = s.ins_sup
        if len(labels) != len(iseq) + 1:
            raise ContractViolation("insertion supervision labels do not match the sequence boundaries")
        ins_rows.append(wrap_source(src_vocab.encode(iseq)))
        ins_tgts.append([src_vocab.ins_class(i) for i in src_vocab.encode_labels(labels)])

    batch.del_src = pad_batch(del_rows)
    batch.del_tgt = pad_batch(del_tgts, fill=0).astype(np.float32)
    batch.del_mask = np.zeros_like(batch.del_tgt)
    for i, row in enumerate(del_rows):
        batch.del_mask[i, 1 : len(row) - 1] = 1.0
    batch.ins_src = pad_batch(ins_rows)
    batch.ins_tgt = pad_batch(ins_tgts, fill=IGNORE, min_len=batch.ins_src.shape[1] - 1)
    return batch


@dataclass
class LossOutput:
    total: Tensor
    components: Dict[str, float] = field(default_factory=dict)


def joint_loss(
    p: ModelParams,
    batch: Batch,
    use_predictors: bool = True,
    rng: Optional[np.random.Generator] = None,
) -> LossOutput:
    """
    NLL(translation) + BCE(deletion) + CE(insertion), unit weights. Each predictor
    term runs its own encoder pass over its supervision sequence.
    """
    if use_predictors and not batch.has_supervision:
        raise InputError("joint loss with predictor terms needs deletion and insertion supervision")

    memory = encode(p, batch.src, rng)
    nll = cross_entropy(decode_logits(p, memory, batch.src, batch.tgt_in, rng), batch.tgt_out, IGNORE)
    total = nll
    comps = {"nll": nll.item()}
    if use_predictors:
        del_states = encode(p, batch.del_src, rng)
        bce = binary_cross_entropy_with_logits(deletion_logits(p, del_states), batch.del_tgt, batch.del_mask)
        ins_states = encode(p, batch.ins_src, rng)
        ce = cross_entropy(insertion_logits(p, ins_states), batch.ins_tgt, IGNORE)
        total = add(add(nll, bce), ce)
        comps["del"] = bce.item()
        comps["ins"] = ce.item()
    comps["total"] = total.item()
    return LossOutput(total, comps)


def init_params(config: ModelConfig, seed: int) -> ModelParams:
    return ModelParams.init(config, seed)
