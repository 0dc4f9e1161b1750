"""Versioned checkpoint serialization.

Layout: an 8-byte little-endian header length, a canonical UTF-8 JSON header
(config, vocabulary, tensor manifest with byte offsets), then raw tensor
bytes as little-endian float32 in manifest order. Canonical ordering makes
save -> load -> save byte-identical.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .model import EncoderConfig, Model, count_parameters
from .optim import Adam
from .tensor import Rng, default_dtype
from .vocab import Vocabulary

FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


class VersionMismatchError(CheckpointError):
    pass


class CorruptManifestError(CheckpointError):
    pass


class SizeMismatchError(CheckpointError):
    pass


@dataclass
class Checkpoint:
    config: EncoderConfig
    vocab: Vocabulary
    params: dict[str, np.ndarray]
    step: int = 0
    seed: int = 0
    task: dict | None = None
    adam_m: dict[str, np.ndarray] | None = None
    adam_v: dict[str, np.ndarray] | None = None
    adam_step: int = 0
    version: int = FORMAT_VERSION

    def param_count(self) -> int:
        return sum(int(a.size) for a in self.params.values())

    def build_model(self) -> Model:
        """Instantiate a Model with a private copy of the parameters."""
        model = Model(self.config, self.vocab, Rng(self.seed))
        model.params.load_state_dict(self.params)
        return model

    def attach_adam(self, model: Model, lr: float) -> Adam:
        opt = Adam(model.params, lr=lr)
        if self.adam_m is not None:
            opt.load_state(self.adam_m, self.adam_v or {}, self.adam_step)
        return opt

    def copy(self) -> "Checkpoint":
        return Checkpoint(
            config=self.config,
            vocab=self.vocab,
            params={k: v.copy() for k, v in self.params.items()},
            step=self.step,
            seed=self.seed,
            task=dict(self.task) if self.task else None,
            adam_m={k: v.copy() for k, v in self.adam_m.items()} if self.adam_m else None,
            adam_v={k: v.copy() for k, v in self.adam_v.items()} if self.adam_v else None,
            adam_step=self.adam_step,
            version=self.version,
        )


def new_checkpoint(config: EncoderConfig, vocab: Vocabulary, seed: int = 0) -> Checkpoint:
    """Randomly initialized checkpoint (no training)."""
    model = Model(config, vocab, Rng(seed))
    return Checkpoint(config, vocab, model.params.state_dict(), step=0, seed=seed)


def from_training(
    model: Model,
    opt: Adam | None,
    step: int,
    seed: int,
    task: dict | None = None,
) -> Checkpoint:
    ckpt = Checkpoint(
        model.config, model.vocab, model.params.state_dict(), step=step, seed=seed, task=task
    )
    if opt is not None:
        m, v, n = opt.state_arrays()
        ckpt.adam_m = {k: a.copy() for k, a in m.items()}
        ckpt.adam_v = {k: a.copy() for k, a in v.items()}
        ckpt.adam_step = n
    return ckpt


def _manifest_entries(ckpt: Checkpoint) -> list[tuple[str, np.ndarray]]:
    entries = [(name, ckpt.params[name]) for name in sorted(ckpt.params)]
    if ckpt.adam_m is not None:
        entries += [(f"adam.m.{n}", ckpt.adam_m[n]) for n in sorted(ckpt.adam_m)]
        entries += [(f"adam.v.{n}", ckpt.adam_v[n]) for n in sorted(ckpt.adam_v)]
    return entries


def checkpoint_to_bytes(ckpt: Checkpoint) -> bytes:
    entries = _manifest_entries(ckpt)
    manifest = []
    offset = 0
    blobs = []
    for name, arr in entries:
        raw = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        manifest.append(
            {"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": len(raw)}
        )
        blobs.append(raw)
        offset += len(raw)
    header = {
        "version": ckpt.version,
        "config": ckpt.config.to_dict(),
        "vocab": list(ckpt.vocab.tokens),
        "step": ckpt.step,
        "seed": ckpt.seed,
        "task": ckpt.task,
        "adam_step": ckpt.adam_step if ckpt.adam_m is not None else None,
        "tensors": manifest,
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return b"".join([struct.pack("<Q", len(head)), head] + blobs)


def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> None:
    with open(path, "wb") as fh:
        fh.write(checkpoint_to_bytes(ckpt))


def load_checkpoint(path: str | Path) -> Checkpoint:
    with open(path, "rb") as fh:
        data = fh.read()
    return checkpoint_from_bytes(data)


def checkpoint_from_bytes(data: bytes) -> Checkpoint:
    if len(data) < 8:
        raise CorruptManifestError("file too short for a header length")
    (head_len,) = struct.unpack("<Q", data[:8])
    if len(data) < 8 + head_len:
        raise CorruptManifestError("truncated header")
    try:
        header = json.loads(data[8 : 8 + head_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptManifestError(f"unreadable header: {exc}") from exc
    if header.get("version") != FORMAT_VERSION:
        raise VersionMismatchError(f"unsupported checkpoint version {header.get('version')!r}")
    blob = data[8 + head_len :]
    expected = sum(entry["nbytes"] for entry in header["tensors"])
    if len(blob) < expected:
        raise CorruptManifestError(f"blob holds {len(blob)} bytes, manifest expects {expected}")
    dt = default_dtype()
    tensors: dict[str, np.ndarray] = {}
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        if entry["nbytes"] != 4 * count:
            raise SizeMismatchError(
                f"tensor {entry['name']!r}: {entry['nbytes']} bytes for shape {shape}"
            )
        lo = entry["offset"]
        arr = np.frombuffer(blob, dtype="<f4", count=count, offset=lo).reshape(shape)
        tensors[entry["name"]] = arr.astype(dt)
    params = {k: v for k, v in tensors.items() if not k.startswith("adam.")}
    ckpt = Checkpoint(
        config=EncoderConfig.from_dict(header["config"]),
        vocab=Vocabulary(header["vocab"]),
        params=params,
        step=int(header["step"]),
        seed=int(header["seed"]),
        task=header.get("task"),
        version=int(header["version"]),
    )
    if header.get("adam_step") is not None:
        ckpt.adam_m = {
            k[len("adam.m.") :]: v for k, v in tensors.items() if k.startswith("adam.m.")
        }
        ckpt.adam_v = {
            k[len("adam.v.") :]: v for k, v in tensors.items() if k.startswith("adam.v.")
        }
        ckpt.adam_step = int(header["adam_step"])
    return ckpt


def describe(ckpt: Checkpoint) -> dict:
    """Inspection summary: config, sizes, and the analytic parameter count."""
    return {
        "version": ckpt.version,
        "preset": ckpt.config.preset,
        "config": ckpt.config.to_dict(),
        "vocab_size": len(ckpt.vocab),
        "param_count": ckpt.param_count(),
        "param_count_analytic": count_parameters(ckpt.config, len(ckpt.vocab)),
        "step": ckpt.step,
        "seed": ckpt.seed,
        "task": ckpt.task,
        "has_optimizer_state": ckpt.adam_m is not None,
    }
