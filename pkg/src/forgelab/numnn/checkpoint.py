"""Checkpoint file format.

Layout: magic "FGLB", version u32 LE, then repeated records of
(name length u32, UTF-8 name, rank u32, dims u32 * rank, f32 LE payload).
Round-trips are bit-exact.
"""

from __future__ import annotations

import struct

import numpy as np

MAGIC = b"FGLB"
VERSION = 1


class CheckpointError(Exception):
    """Corrupt or incompatible checkpoint file."""


def save_checkpoint(tensors: dict[str, np.ndarray], path) -> None:
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", VERSION))
        for name, arr in tensors.items():
            arr = np.ascontiguousarray(arr, dtype="<f4")
            nb = name.encode("utf-8")
            f.write(struct.pack("<I", len(nb)))
            f.write(nb)
            f.write(struct.pack("<I", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(arr.tobytes())


def _read_exact(f, n: int, what: str) -> bytes:
    buf = f.read(n)
    if len(buf) != n:
        raise CheckpointError(f"truncated checkpoint while reading {what} at offset {f.tell()}")
    return buf


def load_checkpoint(path) -> dict[str, np.ndarray]:
    tensors: dict[str, np.ndarray] = {}
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != MAGIC:
            raise CheckpointError(f"bad magic {magic!r} at offset 0 (expected {MAGIC!r})")
        (version,) = struct.unpack("<I", _read_exact(f, 4, "version"))
        if version != VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        while True:
            head = f.read(4)
            if not head:
                break
            if len(head) != 4:
                raise CheckpointError(f"truncated record header at offset {f.tell()}")
            (name_len,) = struct.unpack("<I", head)
            name = _read_exact(f, name_len, "name").decode("utf-8")
            (rank,) = struct.unpack("<I", _read_exact(f, 4, "rank"))
            dims = struct.unpack(f"<{rank}I", _read_exact(f, 4 * rank, "dims"))
            count = int(np.prod(dims)) if rank else 1
            payload = _read_exact(f, 4 * count, f"payload of {name}")
            tensors[name] = np.frombuffer(payload, dtype="<f4").reshape(dims).copy()
    return tensors


def apply_checkpoint(store, tensors: dict[str, np.ndarray],
                     optional_prefixes: tuple[str, ...] = ("lora/",)) -> None:
    """Load tensors into a ParamStore.

    Parameters present in the store but absent from the file are an error
    unless their name starts with an optional prefix (LoRA adapters may be
    absent from inference-only checkpoints).
    """
    missing = [
        n for n in store.params
        if n not in tensors and not any(n.startswith(p) for p in optional_prefixes)
    ]
    if missing:
        raise CheckpointError("checkpoint missing tensors: " + ", ".join(sorted(missing)))
    for name, arr in tensors.items():
        if name not in store.params:
            continue
        if store.params[name].shape != arr.shape:
            raise CheckpointError(
                f"shape mismatch for {name}: file {arr.shape} vs model {store.params[name].shape}"
            )
        store.params[name][...] = arr
