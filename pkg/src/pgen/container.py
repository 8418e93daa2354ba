"""Layered ``.pgen`` bitstream: header, key-frame record and per-frame records.

All integers are little-endian.  Layout::

    header   "PGEN" u8 version
             u32 width, height, frame_count, fps, keypoint_count
             u8 key_qp, f64 qstep, f64 tau, f64 background_weight
             u8 level_mask, f64 q_f[3], u16 block, u16 search
             u32 key_keypoints[keypoint_count][2]      (lattice indices)
             u32 crc32(header)
    key      u32 length, bytes, u32 crc32(record)
    frame    u32 base_length, base bytes, u8 enhancement_count,
             { u8 level, u32 length, bytes } * enhancement_count,
             u32 crc32(record)                          (frame_count - 1 times)

Each enhancement payload starts with the 16-bit checksum of the base feature
it was coded against.
"""

from __future__ import annotations

import math
import struct
import zlib
from dataclasses import dataclass, field, replace

import numpy as np

VERSION = 1
MAGIC = b"PGEN"
LEVELS = (0, 1, 2)
ENHANCEMENT_OVERHEAD = 5  # u8 level + u32 length

_HEADER = struct.Struct("<4sBIIIIIBdddB3dHH")
_U32 = struct.Struct("<I")


class ContainerError(ValueError):
    pass


@dataclass(frozen=True)
class SequenceHeader:
    width: int
    height: int
    frame_count: int
    fps: int
    keypoint_count: int
    key_qp: int
    qstep: float
    tau: float
    background_weight: float
    level_mask: int
    q_f: tuple[float, float, float]
    block: int
    search: int
    key_indices: tuple[tuple[int, int], ...] = ()
    version: int = VERSION

    @property
    def levels(self) -> tuple[int, ...]:
        return tuple(l for l in LEVELS if self.level_mask >> l & 1)

    def key_index_array(self) -> np.ndarray:
        return np.array(self.key_indices, dtype=np.int64).reshape(-1, 2)


@dataclass
class FrameRecord:
    base: bytes
    enhancements: dict[int, bytes] = field(default_factory=dict)


@dataclass
class Stream:
    header: SequenceHeader
    key_payload: bytes
    records: list[FrameRecord]


def level_mask(levels) -> int:
    mask = 0
    for l in levels:
        if l not in LEVELS:
            raise ContainerError(f"unknown enhancement level {l}")
        mask |= 1 << l
    return mask


def _pack_header(h: SequenceHeader) -> bytes:
    body = _HEADER.pack(MAGIC, h.version, h.width, h.height, h.frame_count, h.fps,
                        h.keypoint_count, h.key_qp, h.qstep, h.tau, h.background_weight,
                        h.level_mask, *h.q_f, h.block, h.search)
    body += np.asarray(h.key_indices, dtype="<u4").reshape(-1).tobytes()
    return body + _U32.pack(zlib.crc32(body))


def _pack_record(rec: FrameRecord, levels: tuple[int, ...]) -> bytes:
    if tuple(sorted(rec.enhancements)) != levels:
        raise ContainerError(f"record carries levels {sorted(rec.enhancements)}, header declares {list(levels)}")
    out = bytearray(_U32.pack(len(rec.base)) + rec.base)
    out.append(len(levels))
    for l in levels:
        payload = rec.enhancements[l]
        if len(payload) < 2:
            raise ContainerError("enhancement payload lacks its checksum field")
        out += struct.pack("<BI", l, len(payload)) + payload
    return bytes(out) + _U32.pack(zlib.crc32(out))


def write_stream(stream: Stream) -> bytes:
    h = stream.header
    if len(stream.records) != h.frame_count - 1:
        raise ContainerError(f"{len(stream.records)} frame records for {h.frame_count} frames")
    if len(h.key_indices) != h.keypoint_count:
        raise ContainerError("key-frame keypoints do not match keypoint_count")
    key = _U32.pack(len(stream.key_payload)) + stream.key_payload
    parts = [_pack_header(h), key + _U32.pack(zlib.crc32(key))]
    parts.extend(_pack_record(r, h.levels) for r in stream.records)
    return b"".join(parts)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if n < 0 or self.pos + n > len(self.data):
            raise ContainerError(f"{what}: length {n} overruns the stream at offset {self.pos}")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self, what: str) -> int:
        return _U32.unpack(self.take(4, what))[0]

    def check_crc(self, start: int, what: str):
        expected = zlib.crc32(self.data[start:self.pos])
        if self.u32(what) != expected:
            raise ContainerError(f"{what}: checksum mismatch")


def read_stream(data: bytes) -> Stream:
    r = _Reader(data)
    raw = r.take(_HEADER.size, "header")
    (magic, version, width, height, frames, fps, n, qp, qstep, tau, bg, mask,
     qf0, qf1, qf2, block, search) = _HEADER.unpack(raw)
    if magic != MAGIC:
        raise ContainerError(f"bad magic {magic!r}")
    if version != VERSION:
        raise ContainerError(f"unsupported version {version}")
    if mask & ~0b111:
        raise ContainerError(f"invalid level mask {mask:#x}")
    if frames < 2 or width == 0 or height == 0 or n > 1 << 16:
        raise ContainerError("implausible sequence dimensions")
    key_idx = np.frombuffer(r.take(8 * n, "header keypoints"), dtype="<u4").reshape(n, 2)
    r.check_crc(0, "header")
    header = SequenceHeader(width, height, frames, fps, n, qp, qstep, tau, bg, mask,
                            (qf0, qf1, qf2), block, search,
                            tuple((int(a), int(b)) for a, b in key_idx), version)

    start = r.pos
    key = r.take(r.u32("key record"), "key record")
    r.check_crc(start, "key record")

    records = []
    for i in range(1, frames):
        what = f"frame record {i}"
        start = r.pos
        base = r.take(r.u32(what), what)
        count = r.take(1, what)[0]
        enh = {}
        for _ in range(count):
            level, length = struct.unpack("<BI", r.take(5, what))
            if level not in header.levels:
                raise ContainerError(f"{what}: level {level} not declared in header")
            if enh and level <= max(enh):
                raise ContainerError(f"{what}: levels out of order")
            if length < 2:
                raise ContainerError(f"{what}: malformed checksum field")
            enh[level] = r.take(length, what)
        if tuple(enh) != header.levels:
            raise ContainerError(f"{what}: carries levels {list(enh)}, header declares {list(header.levels)}")
        r.check_crc(start, what)
        records.append(FrameRecord(base, enh))
    if r.pos != len(data):
        raise ContainerError(f"{len(data) - r.pos} unexpected trailing bytes")
    return Stream(header, key, records)


def extract_substream(data: bytes, keep) -> bytes:
    """Drop every enhancement level not in ``keep`` (the base layer always stays)."""
    stream = read_stream(data)
    keep = set(keep) - {"base"}
    missing = keep - set(stream.header.levels)
    if missing:
        raise ContainerError(f"requested levels {sorted(missing)} are not in the stream")
    header = replace(stream.header, level_mask=level_mask(keep))
    records = [FrameRecord(r.base, {l: p for l, p in r.enhancements.items() if l in keep})
               for r in stream.records]
    return write_stream(Stream(header, stream.key_payload, records))


def layer_bits(data: bytes) -> dict:
    """Bits attributable to the base layer and to each enhancement level."""
    stream = read_stream(data)
    bits = {l: 0 for l in stream.header.levels}
    for rec in stream.records:
        for l, p in rec.enhancements.items():
            bits[l] += 8 * (len(p) + ENHANCEMENT_OVERHEAD)
    bits["base"] = 8 * len(data) - sum(bits.values())
    bits["params"] = 8 * sum(len(r.base) for r in stream.records)
    bits["key"] = 8 * len(stream.key_payload)
    return bits


def select_layers(rates: dict, budget_kbps: float) -> tuple[frozenset, bool]:
    """Largest ascending prefix of levels whose cumulative rate fits ``budget_kbps``.

    ``rates`` maps ``"base"`` to the base rate and each level id to the
    cumulative rate with that level and all lower present levels included.
    Returns the kept levels and whether the base layer itself fits.
    """
    if rates["base"] > budget_kbps:
        return frozenset(), False
    kept = []
    for level in sorted(k for k in rates if k != "base"):
        if rates[level] > budget_kbps or (math.isnan(rates[level])):
            break
        kept.append(level)
    return frozenset(kept), True
