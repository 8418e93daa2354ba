"""Base layer: intra-coded key frame, keypoint parameters, keypoint-driven synthesis."""

from __future__ import annotations

import math
import struct

import numpy as np

from .entropy import AdaptiveModel, EntropyError, RangeDecoder, RangeEncoder
from .media import Frame, KeypointTrack, MediaError, MotionField, warp_bilinear

QP_SET = (2, 12, 22, 32, 42, 52)
DEFAULT_QP = 22
DEFAULT_TAU = 24.0
DEFAULT_QSTEP = 1.0 / 256
BACKGROUND_WEIGHT = math.exp(-2.0)
BLOCK = 8
MAX_DC_STEP = 8.0


class BaseLayerError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Intra codec

def _dct_matrix(n: int = BLOCK) -> np.ndarray:
    k = np.arange(n)[:, None]
    i = np.arange(n)[None, :]
    m = np.cos(math.pi * (2 * i + 1) * k / (2 * n)) * math.sqrt(2.0 / n)
    m[0] /= math.sqrt(2.0)
    return m


DCT = _dct_matrix()


def _zigzag(n: int = BLOCK) -> np.ndarray:
    order = sorted(((r, c) for r in range(n) for c in range(n)),
                   key=lambda rc: (rc[0] + rc[1], rc[0] if (rc[0] + rc[1]) % 2 else rc[1]))
    return np.array([r * n + c for r, c in order])


ZIGZAG = _zigzag()
# Zigzag position -> context bucket for run and level models.
_POS_BUCKET = [0] + [1] * 2 + [2] * 7 + [3] * 11 + [4] * 15 + [5] * 28
_N_BUCKETS = 6
_EOB = 64
_MAX_CLASS = 16


def quant_step(qp: int) -> float:
    """Quantiser step 2**((qp - 4) / 6), floored at 1."""
    return max(1.0, 2.0 ** ((qp - 4) / 6.0))


def _round_half_away(x: np.ndarray) -> np.ndarray:
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def _to_blocks(plane: np.ndarray) -> np.ndarray:
    h, w = plane.shape
    return plane.reshape(h // BLOCK, BLOCK, w // BLOCK, BLOCK).swapaxes(1, 2).reshape(-1, BLOCK, BLOCK)


def _from_blocks(blocks: np.ndarray, h: int, w: int) -> np.ndarray:
    return blocks.reshape(h // BLOCK, w // BLOCK, BLOCK, BLOCK).swapaxes(1, 2).reshape(h, w)


def _steps(qp: int) -> np.ndarray:
    step = quant_step(qp)
    steps = np.full((BLOCK, BLOCK), step)
    # The DC step is capped so a flat block always reconstructs exactly.
    steps[0, 0] = min(step, MAX_DC_STEP)
    return steps


def _reconstruct(levels: np.ndarray, qp: int, h: int, w: int) -> Frame:
    """levels: (3, nblocks, 8, 8) quantised coefficients in natural order."""
    coefs = levels * _steps(qp)
    pixels = np.einsum("ki,pbkl,lj->pbij", DCT, coefs, DCT) + 128.0
    planes = np.stack([_from_blocks(pixels[c], h, w) for c in range(3)])
    return Frame.from_float(planes)


class _IntraModels:
    def __init__(self):
        self.run = AdaptiveModel(_EOB + 1, _N_BUCKETS)
        self.level = AdaptiveModel(_MAX_CLASS, _N_BUCKETS)


def encode_key_frame(frame: Frame, qp: int) -> tuple[bytes, Frame]:
    """Code a frame with 8x8 DCT, uniform quantisation and (run, level) symbols.

    Returns the payload and the reconstruction the decoder will produce.
    """
    if not 0 <= qp <= 63:
        raise BaseLayerError(f"qp {qp} out of range")
    h, w = frame.shape
    if h % BLOCK or w % BLOCK:
        raise BaseLayerError(f"frame size {w}x{h} is not a multiple of {BLOCK}")
    blocks = np.stack([_to_blocks(frame.planes[c].astype(np.float64) - 128.0) for c in range(3)])
    coefs = np.einsum("ik,pbkl,jl->pbij", DCT, blocks, DCT)
    levels = _round_half_away(coefs / _steps(qp)).astype(np.int64)

    scan = levels.reshape(3, -1, 64)[:, :, ZIGZAG].copy()
    # DC is predicted from the previous block of the same plane.
    dc = scan[:, :, 0].copy()
    scan[:, 1:, 0] -= dc[:, :-1]

    enc = RangeEncoder()
    models = _IntraModels()
    for plane in scan:
        nz_rows, nz_cols = np.nonzero(plane)
        bounds = np.searchsorted(nz_rows, np.arange(plane.shape[0] + 1))
        for b in range(plane.shape[0]):
            _encode_block(enc, models, plane[b], nz_cols[bounds[b]:bounds[b + 1]])
    body = enc.finish()
    payload = struct.pack("<I", len(body)) + body
    return payload, _reconstruct(levels.astype(np.float64), qp, h, w)


def _encode_block(enc: RangeEncoder, models: _IntraModels, coefs: np.ndarray, positions: np.ndarray):
    pos = 0
    for p in positions.tolist():
        models.run.encode(enc, p - pos, _POS_BUCKET[pos])
        v = int(coefs[p])
        mag = abs(v)
        cls = mag.bit_length()
        if cls > _MAX_CLASS:
            raise BaseLayerError(f"coefficient {v} too large")
        models.level.encode(enc, cls - 1, _POS_BUCKET[p])
        enc.encode_bits(((v < 0) << (cls - 1)) | (mag & ((1 << (cls - 1)) - 1)), cls)
        pos = p + 1
    if pos < 64:
        models.run.encode(enc, _EOB, _POS_BUCKET[pos])


def decode_key_frame(payload: bytes, width: int, height: int, qp: int) -> Frame:
    if not 0 <= qp <= 63:
        raise BaseLayerError(f"qp {qp} out of range")
    if width % BLOCK or height % BLOCK:
        raise BaseLayerError(f"frame size {width}x{height} is not a multiple of {BLOCK}")
    if len(payload) < 4:
        raise BaseLayerError("truncated key-frame payload")
    (length,) = struct.unpack_from("<I", payload)
    if length != len(payload) - 4:
        raise BaseLayerError(f"key-frame payload length mismatch: header says {length}, "
                             f"have {len(payload) - 4}")
    dec = RangeDecoder(payload[4:])
    models = _IntraModels()
    nblocks = (width // BLOCK) * (height // BLOCK)
    scan = np.zeros((3, nblocks, 64), dtype=np.int64)
    try:
        for c in range(3):
            for b in range(nblocks):
                _decode_block(dec, models, scan[c, b])
    except EntropyError as exc:
        raise BaseLayerError(f"corrupt key-frame payload: {exc}") from exc
    scan[:, :, 0] = np.cumsum(scan[:, :, 0], axis=1)
    levels = np.empty_like(scan)
    levels[:, :, ZIGZAG] = scan
    return _reconstruct(levels.reshape(3, nblocks, BLOCK, BLOCK).astype(np.float64), qp, height, width)


def _decode_block(dec: RangeDecoder, models: _IntraModels, out: np.ndarray):
    pos = 0
    while pos < 64:
        run = models.run.decode(dec, _POS_BUCKET[pos])
        if run == _EOB:
            return
        p = pos + run
        if p >= 64:
            raise BaseLayerError("run past end of block")
        cls = models.level.decode(dec, _POS_BUCKET[p]) + 1
        bits = dec.decode_bits(cls)
        mag = (1 << (cls - 1)) | (bits & ((1 << (cls - 1)) - 1))
        out[p] = -mag if bits >> (cls - 1) else mag
        pos = p + 1


# ---------------------------------------------------------------------------
# Keypoints

def analyze(frame_index: int, oracle: KeypointTrack) -> np.ndarray:
    """Compact representation of a frame.

    The analysis model is an oracle: it reads the ground-truth track that
    generated the synthetic sequence.
    """
    if not 0 <= frame_index < oracle.frame_count:
        raise BaseLayerError(f"frame {frame_index} outside track of {oracle.frame_count} frames")
    return oracle[frame_index].copy()


def quantize_points(points: np.ndarray, qstep: float) -> np.ndarray:
    """Integer lattice indices of normalised coordinates."""
    top = int(round(1.0 / qstep))
    return np.clip(np.floor(np.clip(points, 0.0, 1.0) / qstep + 0.5), 0, top).astype(np.int64)


def dequantize_points(indices: np.ndarray, qstep: float) -> np.ndarray:
    return np.clip(indices * qstep, 0.0, 1.0)


_N_PREV_CLASSES = 4
_PARAM_CLASSES = 17


class _ParamCoder:
    """Closed-loop residual coding of keypoint lattice indices.

    One adaptive context per (axis, magnitude class of the same coordinate's
    previous residual).
    """

    def __init__(self, key_indices: np.ndarray):
        self.prev = np.array(key_indices, dtype=np.int64).reshape(-1, 2)
        self.prev_class = np.zeros_like(self.prev)
        self.model = AdaptiveModel(_PARAM_CLASSES, 2 * _N_PREV_CLASSES)

    def _context(self, n: int, axis: int) -> int:
        return axis * _N_PREV_CLASSES + min(int(self.prev_class[n, axis]), _N_PREV_CLASSES - 1)


class ParamEncoder(_ParamCoder):
    def encode_frame(self, indices: np.ndarray) -> bytes:
        enc = RangeEncoder()
        residual = np.asarray(indices, dtype=np.int64).reshape(-1, 2) - self.prev
        for n, axis in np.ndindex(residual.shape):
            r = int(residual[n, axis])
            cls = abs(r).bit_length()
            self.model.encode(enc, cls, self._context(n, axis))
            if cls:
                enc.encode_bits(((r < 0) << (cls - 1)) | (abs(r) & ((1 << (cls - 1)) - 1)), cls)
            self.prev_class[n, axis] = cls
        self.prev = self.prev + residual
        return enc.finish()


class ParamDecoder(_ParamCoder):
    def decode_frame(self, payload: bytes) -> np.ndarray:
        dec = RangeDecoder(payload)
        residual = np.zeros_like(self.prev)
        for n, axis in np.ndindex(residual.shape):
            cls = self.model.decode(dec, self._context(n, axis))
            if cls:
                bits = dec.decode_bits(cls)
                mag = (1 << (cls - 1)) | (bits & ((1 << (cls - 1)) - 1))
                residual[n, axis] = -mag if bits >> (cls - 1) else mag
            self.prev_class[n, axis] = cls
        if dec.pos - len(payload) not in range(1, 5):
            raise BaseLayerError("keypoint payload length does not match its content")
        self.prev = self.prev + residual
        return self.prev.copy()


_PARAM_HEADER = struct.Struct("<4sIId")


def encode_params(track: KeypointTrack, qstep: float = DEFAULT_QSTEP) -> tuple[bytes, KeypointTrack]:
    """Code a whole track as one self-contained stream.

    Returns the stream and the closed-loop reconstruction (what any decoder
    reproduces).  Key-frame indices are stored raw; each inter frame is an
    independently flushed, u16-length-prefixed range-coded chunk.
    """
    if track.frame_count < 1:
        raise BaseLayerError("empty keypoint track")
    if not qstep > 0:
        raise BaseLayerError("qstep must be positive")
    indices = quantize_points(track.points, qstep)
    out = bytearray(_PARAM_HEADER.pack(b"PGKP", track.frame_count, track.keypoint_count, qstep))
    out += indices[0].astype("<u4").tobytes()
    enc = ParamEncoder(indices[0])
    for l in range(1, track.frame_count):
        chunk = enc.encode_frame(indices[l])
        out += struct.pack("<H", len(chunk)) + chunk
    return bytes(out), KeypointTrack(dequantize_points(indices, qstep))


def decode_params(data: bytes) -> KeypointTrack:
    if len(data) < _PARAM_HEADER.size:
        raise BaseLayerError("truncated keypoint stream header")
    magic, frames, n, qstep = _PARAM_HEADER.unpack_from(data)
    if magic != b"PGKP":
        raise BaseLayerError(f"bad keypoint stream magic {magic!r}")
    pos = _PARAM_HEADER.size
    if len(data) < pos + 8 * n:
        raise BaseLayerError("truncated key-frame keypoints")
    key = np.frombuffer(data, dtype="<u4", count=2 * n, offset=pos).astype(np.int64).reshape(n, 2)
    pos += 8 * n
    dec = ParamDecoder(key)
    indices = [key]
    for l in range(1, frames):
        if pos + 2 > len(data):
            raise BaseLayerError(f"keypoint stream truncated at frame {l}")
        (length,) = struct.unpack_from("<H", data, pos)
        pos += 2
        if pos + length > len(data):
            raise BaseLayerError(f"keypoint stream truncated at frame {l}")
        try:
            indices.append(dec.decode_frame(data[pos:pos + length]))
        except EntropyError as exc:
            raise BaseLayerError(f"corrupt keypoint payload at frame {l}: {exc}") from exc
        pos += length
    if pos != len(data):
        raise BaseLayerError(f"{len(data) - pos} trailing bytes in keypoint stream")
    return KeypointTrack(dequantize_points(np.stack(indices), qstep))


# ---------------------------------------------------------------------------
# Synthesis

def to_pixels(points: np.ndarray, width: int, height: int) -> np.ndarray:
    return np.asarray(points, dtype=np.float64) * np.array([width - 1, height - 1], dtype=np.float64)


def keypoint_weights(kp_cur_px: np.ndarray, tau: float, width: int, height: int,
                     background: float = BACKGROUND_WEIGHT) -> tuple[np.ndarray, np.ndarray]:
    """Normalised Gaussian weights ``(N, H, W)`` and the background share ``(H, W)``."""
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    n = kp_cur_px.shape[0]
    g = np.empty((n, height, width))
    for i in range(n):
        d2 = (xx - kp_cur_px[i, 0]) ** 2 + (yy - kp_cur_px[i, 1]) ** 2
        g[i] = np.exp(-d2 / (2.0 * tau * tau))
    denom = background + g.sum(axis=0)
    return g / denom, background / denom


def dense_motion_from_keypoints(kp_ref: np.ndarray, kp_cur: np.ndarray, tau: float,
                                width: int, height: int,
                                background: float = BACKGROUND_WEIGHT) -> MotionField:
    """Backward field pulling each pixel towards where nearby keypoints came from."""
    kp_ref = np.asarray(kp_ref, dtype=np.float64).reshape(-1, 2)
    kp_cur = np.asarray(kp_cur, dtype=np.float64).reshape(-1, 2)
    if kp_ref.shape != kp_cur.shape:
        raise BaseLayerError(f"keypoint count mismatch: {kp_ref.shape[0]} vs {kp_cur.shape[0]}")
    if not tau > 0:
        raise BaseLayerError("tau must be positive")
    if kp_ref.shape[0] == 0:
        return MotionField.zeros(width, height)
    ref_px = to_pixels(kp_ref, width, height)
    cur_px = to_pixels(kp_cur, width, height)
    weights, _ = keypoint_weights(cur_px, tau, width, height, background)
    disp = ref_px - cur_px
    dx = np.tensordot(disp[:, 0], weights, axes=1)
    dy = np.tensordot(disp[:, 1], weights, axes=1)
    return MotionField(dx, dy)


def synthesize_base(key_recon: Frame, kp_key: np.ndarray, kp_cur: np.ndarray,
                    tau: float = DEFAULT_TAU) -> Frame:
    try:
        motion = dense_motion_from_keypoints(kp_key, kp_cur, tau, key_recon.width, key_recon.height)
    except MediaError as exc:
        raise BaseLayerError(str(exc)) from exc
    return warp_bilinear(key_recon, motion)
