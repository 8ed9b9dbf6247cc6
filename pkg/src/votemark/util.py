"""Shared plumbing: hashing, canonical JSON, atomic writes, seed derivation,
and the block-container format used by every binary artifact in this repo.

All numeric artifacts are float64; containers are byte-deterministic so that
content hashes double as identity checks.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import struct
import tempfile
from pathlib import Path
from typing import Any

import numpy as np

CONTAINER_MAGIC = b"VMARK01\n"


def canonical_json(obj: Any) -> bytes:
    """Stable byte encoding: sorted keys, no whitespace, ASCII only."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=True).encode("utf-8")


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        while chunk := f.read(1 << 20):
            h.update(chunk)
    return h.hexdigest()


def atomic_write_bytes(path: str | Path, data: bytes) -> None:
    """Write-temp-then-rename so readers never observe a partial file."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path: str | Path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def write_json(path: str | Path, obj: Any) -> None:
    """Pretty but deterministic JSON (sorted keys, fixed indent, trailing newline)."""
    atomic_write_bytes(path, json.dumps(obj, sort_keys=True, indent=2).encode("utf-8") + b"\n")


def read_json(path: str | Path) -> Any:
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)


def derive_seed(master: int, *path: int) -> int:
    """Stable child seed for a (stage, index, ...) path under one master seed.

    Uses numpy's SeedSequence entropy-mixing, which is documented to be
    reproducible across platforms and versions.
    """
    ss = np.random.SeedSequence(entropy=[int(master) & 0xFFFFFFFF, *[int(p) & 0xFFFFFFFF for p in path]])
    return int(ss.generate_state(1, np.uint32)[0])


def key_to_seed(key: str | bytes | int) -> int:
    """Map a secret key to a 64-bit PRNG seed via SHA-256."""
    if isinstance(key, int):
        key = str(key)
    if isinstance(key, str):
        key = key.encode("utf-8")
    digest = hashlib.sha256(key).digest()
    return int.from_bytes(digest[:8], "big")


def key_fingerprint(key: str | bytes | int) -> str:
    """Public identifier for a secret key (the key itself never leaves the config)."""
    if isinstance(key, int):
        key = str(key)
    if isinstance(key, str):
        key = key.encode("utf-8")
    return hashlib.sha256(key).hexdigest()


def write_container(path: str | Path, kind: str, header: dict, blocks: list[tuple[str, np.ndarray]]) -> None:
    """Serialize named arrays plus a JSON header into one self-describing file.

    Layout: 8-byte magic, big-endian u32 header length, canonical JSON header,
    then the raw little-endian C-order block bytes in header order.
    """
    blocks_meta = []
    payload = bytearray()
    for name, arr in blocks:
        arr = np.ascontiguousarray(arr)
        dt = arr.dtype.newbyteorder("<")
        payload += arr.astype(dt, copy=False).tobytes(order="C")
        blocks_meta.append({"name": name, "dtype": dt.str, "shape": list(arr.shape)})
    full = dict(header)
    full["container"] = 1
    full["kind"] = kind
    full["blocks"] = blocks_meta
    head = canonical_json(full)
    atomic_write_bytes(path, CONTAINER_MAGIC + struct.pack(">I", len(head)) + head + bytes(payload))


def container_bytes(kind: str, header: dict, blocks: list[tuple[str, np.ndarray]]) -> bytes:
    """In-memory form of write_container, for hashing without touching disk."""
    blocks_meta = []
    payload = bytearray()
    for name, arr in blocks:
        arr = np.ascontiguousarray(arr)
        dt = arr.dtype.newbyteorder("<")
        payload += arr.astype(dt, copy=False).tobytes(order="C")
        blocks_meta.append({"name": name, "dtype": dt.str, "shape": list(arr.shape)})
    full = dict(header)
    full["container"] = 1
    full["kind"] = kind
    full["blocks"] = blocks_meta
    head = canonical_json(full)
    return CONTAINER_MAGIC + struct.pack(">I", len(head)) + head + bytes(payload)


def read_container(path: str | Path, kind: str | None = None) -> tuple[dict, dict[str, np.ndarray]]:
    raw = Path(path).read_bytes()
    return parse_container(raw, kind=kind, source=str(path))


def parse_container(raw: bytes, kind: str | None = None, source: str = "<bytes>") -> tuple[dict, dict[str, np.ndarray]]:
    if len(raw) < 12 or raw[:8] != CONTAINER_MAGIC:
        raise ValueError(f"{source}: not a votemark container (bad magic)")
    (hlen,) = struct.unpack(">I", raw[8:12])
    if 12 + hlen > len(raw):
        raise ValueError(f"{source}: truncated header")
    header = json.loads(raw[12 : 12 + hlen].decode("utf-8"))
    if kind is not None and header.get("kind") != kind:
        raise ValueError(f"{source}: expected kind {kind!r}, found {header.get('kind')!r}")
    blocks: dict[str, np.ndarray] = {}
    off = 12 + hlen
    for meta in header["blocks"]:
        dt = np.dtype(meta["dtype"])
        shape = tuple(int(s) for s in meta["shape"])
        nbytes = dt.itemsize * math.prod(shape)
        if off + nbytes > len(raw):
            raise ValueError(f"{source}: truncated payload in block {meta['name']!r}")
        blocks[meta["name"]] = np.frombuffer(raw[off : off + nbytes], dtype=dt).reshape(shape).copy()
        off += nbytes
    if off != len(raw):
        raise ValueError(f"{source}: {len(raw) - off} trailing bytes after last block")
    return header, blocks
