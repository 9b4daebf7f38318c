"""Binary checkpoint format.

Layout (little-endian)::

    b"TAGC"  u32 version
    u64 d, h, K, n_users, n_items, n_attrs
    u8 gate_mode, u8 ablation
    f32 X_U | X_I | X_A | W1 | b1 | W2 | b2
    u32 crc32(all preceding bytes)
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .argc import ABLATIONS, GATE_MODES, EmbeddingTable, GateParameters, ModelConfig
from .exceptions import CorruptCheckpointError, IncompatibleCheckpointError
from .graph import RELATIONS

MAGIC = b"TAGC"
VERSION = 1
_HEADER = struct.Struct("<4sI6QBB")
_CRC = struct.Struct("<I")


@dataclass
class Checkpoint:
    config: ModelConfig
    embeddings: EmbeddingTable
    gates: GateParameters

    @property
    def counts(self):
        e = self.embeddings
        return e.n_users, e.n_items, e.n_attrs

    def check_compatible(self, config: ModelConfig | None = None, graph=None):
        """Raise :class:`IncompatibleCheckpointError` on any dimension mismatch."""
        if config is not None:
            for name in ("embed_dim", "hidden_dim", "n_layers"):
                mine, theirs = getattr(self.config, name), getattr(config, name)
                if mine != theirs:
                    raise IncompatibleCheckpointError(
                        f"checkpoint has {name}={mine}, configuration expects {theirs}")
        if graph is not None:
            want = (graph.n_users, graph.n_items, graph.n_attrs)
            if self.counts != want:
                raise IncompatibleCheckpointError(
                    f"checkpoint covers (users, items, attrs)={self.counts}, graph has {want}")


def to_bytes(ckpt: Checkpoint) -> bytes:
    c, e, g = ckpt.config, ckpt.embeddings, ckpt.gates
    if e.dim != c.embed_dim or g.dim != c.embed_dim or g.hidden != c.hidden_dim:
        raise ValueError("checkpoint arrays disagree with the model configuration")
    header = _HEADER.pack(MAGIC, VERSION, c.embed_dim, c.hidden_dim, c.n_layers,
                          e.n_users, e.n_items, e.n_attrs,
                          GATE_MODES.index(c.gate_mode), ABLATIONS.index(c.ablation))
    body = b"".join(np.ascontiguousarray(a, dtype="<f4").tobytes() for a in (
        e.users, e.items, e.attrs, g.W1, g.b1, g.W2, g.b2))
    payload = header + body
    return payload + _CRC.pack(zlib.crc32(payload) & 0xFFFFFFFF)


def from_bytes(blob: bytes, leaky_slope: float = 0.01) -> Checkpoint:
    if len(blob) < _HEADER.size + _CRC.size:
        raise CorruptCheckpointError("checkpoint truncated before end of header")
    magic, version, d, h, k, nu, ni, na, gm, ab = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise CorruptCheckpointError(f"bad magic {magic!r}")
    if version != VERSION:
        raise IncompatibleCheckpointError(f"checkpoint format version {version}, "
                                          f"this build reads version {VERSION}")
    r = len(RELATIONS)
    n_floats = (nu + ni + na) * d + r * h * 2 * d + r * h + r * h + r
    expected = _HEADER.size + 4 * n_floats + _CRC.size
    if len(blob) != expected:
        raise CorruptCheckpointError(f"checkpoint is {len(blob)} bytes, header implies {expected}")
    payload = blob[:-_CRC.size]
    (crc,) = _CRC.unpack_from(blob, len(payload))
    if zlib.crc32(payload) & 0xFFFFFFFF != crc:
        raise CorruptCheckpointError("CRC mismatch")
    if gm >= len(GATE_MODES) or ab >= len(ABLATIONS):
        raise CorruptCheckpointError("unknown gate mode or ablation code")
    flat = np.frombuffer(payload, dtype="<f4", offset=_HEADER.size).astype(np.float32)
    shapes = [((nu + ni + na), d), (r, h, 2 * d), (r, h), (r, h), (r,)]
    arrays = []
    pos = 0
    for shape in shapes:
        size = int(np.prod(shape))
        arrays.append(flat[pos:pos + size].reshape(shape).copy())
        pos += size
    config = ModelConfig(n_layers=k, embed_dim=d, hidden_dim=h, gate_mode=GATE_MODES[gm],
                         ablation=ABLATIONS[ab], leaky_slope=leaky_slope)
    emb = EmbeddingTable(arrays[0], nu, ni, na)
    return Checkpoint(config, emb, GateParameters(*arrays[1:]))


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    Path(path).write_bytes(to_bytes(ckpt))


def load_checkpoint(path, expect: ModelConfig | None = None, graph=None) -> Checkpoint:
    ckpt = from_bytes(Path(path).read_bytes(),
                      leaky_slope=expect.leaky_slope if expect is not None else 0.01)
    if expect is not None or graph is not None:
        ckpt.check_compatible(expect, graph)
    return ckpt
