"""
Checkpoint files.

Layout (all integers little-endian):

    b"SECO" | u32 version | u32 header length | JSON header | f32 payloads

The header carries the model config, both vocabularies, the training state, the
run config echo and a tensor index (name, shape, byte offset into the payload
block). Adam moments are stored as extra tensors named adam.m.<param> and
adam.v.<param>. Tensors are written as '<f4', so a save/load round trip is exact.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np

from .errors import ContractViolation, IntegrityError, InputError
from .model import ModelConfig, ModelParams
from .numerics import AdamState, Tensor
from .textops import Vocab

MAGIC = b"SECO"
VERSION = 1
_PAYLOAD_DTYPE = np.dtype("<f4")


@dataclass
class Checkpoint:
    params: ModelParams
    src_vocab: Vocab
    tgt_vocab: Vocab
    adam: Optional[AdamState] = None
    train_state: Dict[str, Any] = field(default_factory=dict)
    run_config: Dict[str, Any] = field(default_factory=dict)

    @property
    def config(self) -> ModelConfig:
        return self.params.config

    @property
    def step(self) -> int:
        return int(self.train_state.get("step", 0))


def model_config_from_dict(obj: Dict[str, Any]) -> ModelConfig:
    known = {f.name for f in fields(ModelConfig)}
    unknown = set(obj) - known
    if unknown:
        raise IntegrityError(f"checkpoint model config has unknown fields: {', '.join(sorted(unknown))}")
    return ModelConfig(**obj)


def check_vocab_match(ckpt: Checkpoint, src_vocab: Optional[Vocab], tgt_vocab: Optional[Vocab]) -> None:
    """Vocab files given next to a checkpoint must be the ones it was trained with."""
    if src_vocab is not None and src_vocab != ckpt.src_vocab:
        raise InputError(f"source vocabulary ({len(src_vocab)} tokens) does not match the checkpoint ({len(ckpt.src_vocab)} tokens)")
    if tgt_vocab is not None and tgt_vocab != ckpt.tgt_vocab:
        raise InputError(f"target vocabulary ({len(tgt_vocab)} tokens) does not match the checkpoint ({len(ckpt.tgt_vocab)} tokens)")


# ---------------------------
# Save
# ---------------------------

def _tensor_table(ckpt: Checkpoint) -> Dict[str, np.ndarray]:
    table: Dict[str, np.ndarray] = {name: t.data for name, t in ckpt.params.items()}
    if ckpt.adam is not None:
        for name in ckpt.params:
            if name in ckpt.adam.m:
                table[f"adam.m.{name}"] = ckpt.adam.m[name]
                table[f"adam.v.{name}"] = ckpt.adam.v[name]
    return table


def save_checkpoint(path: Path, ckpt: Checkpoint) -> Path:
    cfg = ckpt.config
    if len(ckpt.src_vocab) != cfg.src_vocab_size or len(ckpt.tgt_vocab) != cfg.tgt_vocab_size:
        raise ContractViolation("checkpoint vocabularies do not match the model config sizes")

    index: List[Dict[str, Any]] = []
    blobs: List[bytes] = []
    offset = 0
    for name, arr in _tensor_table(ckpt).items():
        raw = np.ascontiguousarray(arr, dtype=_PAYLOAD_DTYPE).tobytes()
        index.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)

    adam_meta = None
    if ckpt.adam is not None:
        a = ckpt.adam
        adam_meta = {"lr": a.lr, "beta1": a.beta1, "beta2": a.beta2, "eps": a.eps, "step": a.step}

    header = {
        "model": asdict(cfg),
        "src_vocab": list(ckpt.src_vocab.tokens),
        "tgt_vocab": list(ckpt.tgt_vocab.tokens),
        "train_state": ckpt.train_state,
        "run_config": ckpt.run_config,
        "adam": adam_meta,
        "tensors": index,
    }
    hbytes = json.dumps(header, ensure_ascii=False, sort_keys=True).encode("utf-8")

    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with tmp.open("wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", VERSION, len(hbytes)))
        f.write(hbytes)
        for raw in blobs:
            f.write(raw)
    tmp.replace(path)
    return path


# ---------------------------
# Load
# ---------------------------

def read_header(path: Path) -> Dict[str, Any]:
    header, _ = _read(path)
    return header


def _read(path: Path):
    if not path.exists():
        raise InputError(f"Checkpoint not found: {path}")
    blob = path.read_bytes()
    if len(blob) < 12 or blob[:4] != MAGIC:
        raise IntegrityError(f"{path} is not a checkpoint file (bad magic)")
    version, hlen = struct.unpack("<II", blob[4:12])
    if version != VERSION:
        raise IntegrityError(f"{path}: unsupported checkpoint version {version} (expected {VERSION})")
    if 12 + hlen > len(blob):
        raise IntegrityError(f"{path}: truncated header")
    try:
        header = json.loads(blob[12 : 12 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise IntegrityError(f"{path}: unreadable header ({e})") from None
    return header, memoryview(blob)[12 + hlen :]


def load_checkpoint(path: Path, with_optimizer: bool = True) -> Checkpoint:
    header, payload = _read(path)
    try:
        cfg = model_config_from_dict(header["model"])
        src_vocab = Vocab(header["src_vocab"])
        tgt_vocab = Vocab(header["tgt_vocab"])
        index = header["tensors"]
    except KeyError as e:
        raise IntegrityError(f"{path}: header is missing {e}") from None
    if len(src_vocab) != cfg.src_vocab_size or len(tgt_vocab) != cfg.tgt_vocab_size:
        raise IntegrityError(f"{path}: embedded vocabularies do not match the model config")

    arrays: Dict[str, np.ndarray] = {}
    for entry in index:
        start, nbytes = int(entry["offset"]), int(entry["nbytes"])
        shape = tuple(int(s) for s in entry["shape"])
        if start + nbytes > len(payload):
            raise IntegrityError(f"{path}: tensor {entry['name']} runs past the end of the file")
        arr = np.frombuffer(payload[start : start + nbytes], dtype=_PAYLOAD_DTYPE)
        if arr.size != int(np.prod(shape, dtype=np.int64)):
            raise IntegrityError(f"{path}: tensor {entry['name']} has {arr.size} values for shape {shape}")
        arrays[entry["name"]] = arr.reshape(shape).astype(np.float32)

    tensors = {n: Tensor(a, requires_grad=True, name=n) for n, a in arrays.items() if not n.startswith("adam.")}
    try:
        params = ModelParams(cfg, tensors)
    except ContractViolation as e:
        raise IntegrityError(f"{path}: {e}") from None

    adam = None
    meta = header.get("adam")
    if with_optimizer and meta:
        adam = AdamState(lr=meta["lr"], beta1=meta["beta1"], beta2=meta["beta2"], eps=meta["eps"], step=int(meta["step"]))
        for name in params:
            if f"adam.m.{name}" in arrays:
                adam.m[name] = arrays[f"adam.m.{name}"]
                adam.v[name] = arrays[f"adam.v.{name}"]

    return Checkpoint(
        params=params,
        src_vocab=src_vocab,
        tgt_vocab=tgt_vocab,
        adam=adam,
        train_state=dict(header.get("train_state") or {}),
        run_config=dict(header.get("run_config") or {}),
    )
