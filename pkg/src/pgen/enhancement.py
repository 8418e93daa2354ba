"""Enhancement layer: auxiliary luminance features, their entropy coding, and
coarse-to-fine frame generation on top of the base-layer reconstruction."""

from __future__ import annotations

import struct
import zlib

import numpy as np

from .entropy import EntropyError, GaussianBinModel, RangeDecoder, RangeEncoder
from .media import (GRANULARITIES, FeatureMap, Frame, MediaError, MotionField, OcclusionMap,
                    downsample_band_limited, upsample_bilinear, warp_bilinear)

LEVEL_SIDES = {0: 8, 1: 16, 2: 32}
SIDE_LEVELS = {s: l for l, s in LEVEL_SIDES.items()}
# Rate-distortion weights each granularity was tuned with; carried as metadata.
LEVEL_RD_LAMBDA = {0: 64, 1: 268, 2: 1500}

SIGMA_FLOOR = 0.5
SIGMA_GAIN = 0.25
GAIN_EPS = 1.0
GAIN_RANGE = (0.5, 2.0)
DEFAULT_BLOCK = 16
DEFAULT_SEARCH = 12
SAD_SCALE = 64.0


class EnhancementError(ValueError):
    pass


class ChecksumMismatch(EnhancementError):
    pass


def extract_feature(original: Frame, s: int) -> FeatureMap:
    if s not in GRANULARITIES:
        raise EnhancementError(f"granularity {s} not in {GRANULARITIES}")
    try:
        return downsample_band_limited(original, s)
    except MediaError as exc:
        raise EnhancementError(str(exc)) from exc


def predict_sigma(base_feature: FeatureMap) -> np.ndarray:
    """Scale of each feature residual from the local gradient of the base feature."""
    v = base_feature.values
    p = np.pad(v, 1, mode="edge")
    g = (np.abs(v - p[:-2, 1:-1]) + np.abs(v - p[2:, 1:-1])
         + np.abs(v - p[1:-1, :-2]) + np.abs(v - p[1:-1, 2:])) / 4.0
    return SIGMA_FLOOR + SIGMA_GAIN * g


def feature_checksum(feature: FeatureMap) -> int:
    return zlib.crc32(np.ascontiguousarray(feature.values, dtype="<f8").tobytes()) & 0xFFFF


def _causal_mean(q: np.ndarray, i: int, j: int) -> float:
    if i and j:
        return (q[i, j - 1] + q[i - 1, j]) / 2.0
    if j:
        return float(q[i, j - 1])
    if i:
        return float(q[i - 1, j])
    return 0.0


def quantize_residual(feature: FeatureMap, base_feature: FeatureMap, q_f: float) -> np.ndarray:
    return np.floor((feature.values - base_feature.values) * q_f + 0.5).astype(np.int64)


def encode_feature(feature: FeatureMap, base_feature: FeatureMap, q_f: float = 1.0) -> bytes:
    """Payload: 16-bit checksum of ``base_feature`` then the range-coded residual symbols."""
    if feature.side != base_feature.side:
        raise EnhancementError(f"side mismatch: {feature.side} vs {base_feature.side}")
    if not q_f > 0:
        raise EnhancementError("q_f must be positive")
    q = quantize_residual(feature, base_feature, q_f)
    sigma = predict_sigma(base_feature)
    enc = RangeEncoder()
    s = feature.side
    for i in range(s):
        for j in range(s):
            GaussianBinModel(_causal_mean(q, i, j), sigma[i, j]).encode(enc, int(q[i, j]))
    return struct.pack("<H", feature_checksum(base_feature)) + enc.finish()


def decode_symbols_feature(payload: bytes, base_feature: FeatureMap) -> np.ndarray:
    if len(payload) < 2:
        raise EnhancementError("feature payload shorter than its checksum")
    (checksum,) = struct.unpack_from("<H", payload)
    if checksum != feature_checksum(base_feature):
        raise ChecksumMismatch("base feature differs from the one used by the encoder")
    sigma = predict_sigma(base_feature)
    s = base_feature.side
    q = np.zeros((s, s), dtype=np.int64)
    dec = RangeDecoder(payload[2:])
    try:
        for i in range(s):
            for j in range(s):
                q[i, j] = GaussianBinModel(_causal_mean(q, i, j), sigma[i, j]).decode(dec)
    except EntropyError as exc:
        raise EnhancementError(f"corrupt feature payload: {exc}") from exc
    return q


def decode_feature(payload: bytes, base_feature: FeatureMap, q_f: float = 1.0) -> FeatureMap:
    q = decode_symbols_feature(payload, base_feature)
    return FeatureMap(np.clip(base_feature.values + q / q_f, 0.0, 255.0))


def recalibrate(base_frame: Frame, feature: FeatureMap) -> Frame:
    """Per-pixel luminance gain that pulls ``base_frame`` towards ``feature``."""
    current = extract_feature(base_frame, feature.side)
    gain = np.clip((feature.values + GAIN_EPS) / (current.values + GAIN_EPS), *GAIN_RANGE)
    if np.all(gain == 1.0):
        return base_frame.copy()
    up = upsample_bilinear(gain, base_frame.height, base_frame.width)
    return Frame.from_float(base_frame.planes * up[None])


def _luma_sad_volume(key: np.ndarray, cur: np.ndarray, block: int, search: int):
    """SAD of every block of ``cur`` against ``key`` for all displacements in the window.

    Returns (sad[(2R+1)**2, by, bx], offsets) with candidates that leave the
    frame set to +inf.  Offsets are ordered by (|dx|+|dy|, dy, dx) so argmin
    realises the tie-break rule.
    """
    h, w = cur.shape
    by, bx = h // block, w // block
    offsets = sorted(((dx, dy) for dy in range(-search, search + 1) for dx in range(-search, search + 1)),
                     key=lambda o: (abs(o[0]) + abs(o[1]), o[1], o[0]))
    padded = np.pad(key, search, mode="edge")
    ys = np.arange(by) * block
    xs = np.arange(bx) * block
    sad = np.empty((len(offsets), by, bx))
    diff = np.empty((h, w))
    for k, (dx, dy) in enumerate(offsets):
        shifted = padded[search + dy:search + dy + h, search + dx:search + dx + w]
        np.subtract(cur, shifted, out=diff)
        np.abs(diff, out=diff)
        rows = np.add.reduce(diff.reshape(h, bx, block), axis=2)
        sad[k] = np.add.reduce(rows.reshape(by, block, bx), axis=1)
        valid_y = (ys + dy >= 0) & (ys + dy + block <= h)
        valid_x = (xs + dx >= 0) & (xs + dx + block <= w)
        sad[k][~(valid_y[:, None] & valid_x[None, :])] = np.inf
    return sad, offsets


def block_match(key_recon: Frame, coarse: Frame, block: int = DEFAULT_BLOCK,
                search: int = DEFAULT_SEARCH) -> tuple[np.ndarray, np.ndarray]:
    """Full-search block vectors ``(by, bx, 2)`` as (dx, dy) and their SAD per pixel."""
    if key_recon.shape != coarse.shape:
        raise EnhancementError(f"frame sizes differ: {key_recon.shape} vs {coarse.shape}")
    h, w = coarse.shape
    if h % block or w % block:
        raise EnhancementError(f"frame size {w}x{h} is not a multiple of block {block}")
    sad, offsets = _luma_sad_volume(key_recon.luminance(), coarse.luminance(), block, search)
    best = np.argmin(sad, axis=0)
    vectors = np.array(offsets, dtype=np.float64)[best]
    sad_norm = np.take_along_axis(sad, best[None], axis=0)[0] / (block * block)
    return vectors, sad_norm


def refine_motion(key_recon: Frame, coarse: Frame, block: int = DEFAULT_BLOCK,
                  search: int = DEFAULT_SEARCH) -> tuple[MotionField, OcclusionMap]:
    vectors, sad_norm = block_match(key_recon, coarse, block, search)
    h, w = coarse.shape
    dx = upsample_bilinear(vectors[..., 0], h, w)
    dy = upsample_bilinear(vectors[..., 1], h, w)
    occ = np.clip(1.0 - sad_norm / SAD_SCALE, 0.0, 1.0)
    occ = np.repeat(np.repeat(occ, block, axis=0), block, axis=1)
    return MotionField(dx, dy), OcclusionMap(occ)


def compose_fine(key_recon: Frame, coarse: Frame, motion: MotionField, occlusion: OcclusionMap) -> Frame:
    """Blend the re-warped key frame with the coarse frame by occlusion confidence."""
    if not (key_recon.shape == coarse.shape == motion.dx.shape == occlusion.values.shape):
        raise EnhancementError("frame, field and occlusion sizes differ")
    warped = warp_bilinear(key_recon, motion).planes.astype(np.float64)
    o = occlusion.values[None]
    return Frame.from_float(o * warped + (1.0 - o) * coarse.planes)


def enhance_frame(key_recon: Frame, base_frame: Frame, features: list[FeatureMap],
                  block: int = DEFAULT_BLOCK, search: int = DEFAULT_SEARCH) -> tuple[Frame, Frame]:
    """Apply decoded features coarse to fine, then the motion-refined composition.

    Returns (coarse, final).  With no features the base frame passes through.
    """
    if not features:
        return base_frame, base_frame
    coarse = base_frame
    for feature in sorted(features, key=lambda f: f.side):
        coarse = recalibrate(coarse, feature)
    motion, occlusion = refine_motion(key_recon, coarse, block, search)
    return coarse, compose_fine(key_recon, coarse, motion, occlusion)
