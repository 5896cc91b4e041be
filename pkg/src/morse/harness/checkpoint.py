"""Self-describing checkpoint container.

Layout (all integers little-endian)::

    b"MORSECKP"           magic, 8 bytes
    u32 version
    u64 header length H
    H bytes               UTF-8 JSON header, sorted keys
    u64 payload length P  number of float64 values
    8*P bytes             parameters as little-endian float64
    32 bytes              SHA-256 of everything above

The header carries the model kind (``dash-mlp`` or ``shared-dot``), the
architecture, training seed and iteration count, and the fingerprint of the
noise schedule the model was trained under.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import IntegrityError

MAGIC = b"MORSECKP"
VERSION = 1
KINDS = ("dash-mlp", "shared-dot")


class KindMismatchError(IntegrityError):
    pass


class FingerprintMismatchError(IntegrityError):
    pass


@dataclass
class Checkpoint:
    kind: str
    arch: dict
    params: np.ndarray
    seed: int
    iterations: int
    schedule_fingerprint: str
    extra: dict | None = None

    def header(self) -> dict:
        return {"kind": self.kind, "arch": self.arch, "seed": self.seed, "iterations": self.iterations,
                "schedule_fingerprint": self.schedule_fingerprint, "extra": self.extra or {}}


def encode(ckpt: Checkpoint) -> bytes:
    if ckpt.kind not in KINDS:
        raise IntegrityError(f"unknown checkpoint kind {ckpt.kind!r}")
    header = json.dumps(ckpt.header(), sort_keys=True, separators=(",", ":")).encode("utf-8")
    payload = np.ascontiguousarray(ckpt.params, dtype="<f8").ravel()
    body = b"".join([MAGIC, struct.pack("<I", VERSION), struct.pack("<Q", len(header)), header,
                     struct.pack("<Q", payload.size), payload.tobytes()])
    return body + hashlib.sha256(body).digest()


def decode(blob: bytes, expect_kind: str | None = None) -> Checkpoint:
    n = len(blob)
    if n < len(MAGIC) + 4 + 8 + 8 + 32 or blob[:len(MAGIC)] != MAGIC:
        raise IntegrityError("not a checkpoint file (bad magic or too short)")
    pos = len(MAGIC)
    (version,) = struct.unpack_from("<I", blob, pos)
    if version != VERSION:
        raise IntegrityError(f"unsupported checkpoint version {version} (this build reads {VERSION})")
    pos += 4
    (hlen,) = struct.unpack_from("<Q", blob, pos)
    pos += 8
    if pos + hlen + 8 > n - 32:
        raise IntegrityError("truncated checkpoint: header runs past the end of the file")
    header_bytes = blob[pos:pos + hlen]
    pos += hlen
    (plen,) = struct.unpack_from("<Q", blob, pos)
    pos += 8
    if pos + 8 * plen + 32 != n:
        raise IntegrityError(f"length mismatch: expected {pos + 8 * plen + 32} bytes, found {n}")
    if hashlib.sha256(blob[:-32]).digest() != blob[-32:]:
        raise IntegrityError("checksum mismatch: checkpoint is corrupted")
    header = json.loads(header_bytes.decode("utf-8"))
    if header["kind"] not in KINDS:
        raise IntegrityError(f"unknown checkpoint kind {header['kind']!r}")
    if expect_kind is not None and header["kind"] != expect_kind:
        raise KindMismatchError(f"expected a {expect_kind} checkpoint, found {header['kind']}")
    params = np.frombuffer(blob, dtype="<f8", count=plen, offset=pos).astype(np.float64)
    return Checkpoint(header["kind"], header["arch"], params, header["seed"], header["iterations"],
                      header["schedule_fingerprint"], header["extra"] or None)


def save(path, ckpt: Checkpoint) -> bytes:
    blob = encode(ckpt)
    Path(path).write_bytes(blob)
    return blob


def load(path, expect_kind: str | None = None, fingerprint: str | None = None) -> Checkpoint:
    try:
        blob = Path(path).read_bytes()
    except OSError as e:
        raise IntegrityError(f"{path}: cannot read checkpoint: {e.strerror}") from None
    ckpt = decode(blob, expect_kind)
    if fingerprint is not None and ckpt.schedule_fingerprint != fingerprint:
        raise FingerprintMismatchError(
            f"{path}: schedule fingerprint mismatch: checkpoint {ckpt.schedule_fingerprint}, "
            f"config {fingerprint}")
    return ckpt
