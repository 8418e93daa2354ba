"""Frames, raw video I/O, synthetic test sequences and the shared
resampling / warping primitives."""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass

import numpy as np

# BT.601 luma weights.
LUMA_WEIGHTS = (0.299, 0.587, 0.114)
GRANULARITIES = (8, 16, 32)
BINOMIAL_TAPS = np.array([1.0, 4.0, 6.0, 4.0, 1.0]) / 16.0

PGRV_MAGIC = b"PGRV"
_PGRV_HEADER = struct.Struct("<4sIIII")
_MAX_DIM = 1 << 15
TRACK_FORMAT = "pgen-keypoint-track"


class MediaError(ValueError):
    pass


class Frame:
    """An RGB frame stored as planar uint8 samples, shape ``(3, H, W)``."""

    __slots__ = ("planes",)

    def __init__(self, planes: np.ndarray):
        planes = np.asarray(planes)
        if planes.ndim != 3 or planes.shape[0] != 3:
            raise MediaError(f"expected planar (3, H, W) data, got shape {planes.shape}")
        if planes.shape[1] == 0 or planes.shape[2] == 0:
            raise MediaError("zero-area frame")
        if planes.dtype != np.uint8:
            if np.any(planes < 0) or np.any(planes > 255):
                raise MediaError("samples outside [0, 255]")
            planes = planes.astype(np.uint8)
        self.planes = planes

    @classmethod
    def from_float(cls, planes: np.ndarray) -> "Frame":
        """Round half up and clamp a float image into a frame."""
        return cls(np.clip(np.floor(np.asarray(planes, dtype=np.float64) + 0.5), 0, 255).astype(np.uint8))

    @classmethod
    def constant(cls, width: int, height: int, value) -> "Frame":
        planes = np.empty((3, height, width), dtype=np.uint8)
        planes[:] = np.asarray(value, dtype=np.uint8).reshape(-1, 1, 1)
        return cls(planes)

    @property
    def width(self) -> int:
        return self.planes.shape[2]

    @property
    def height(self) -> int:
        return self.planes.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.height, self.width

    def luminance(self) -> np.ndarray:
        p = self.planes.astype(np.float64)
        return LUMA_WEIGHTS[0] * p[0] + LUMA_WEIGHTS[1] * p[1] + LUMA_WEIGHTS[2] * p[2]

    def to_bytes(self) -> bytes:
        return self.planes.tobytes()

    def copy(self) -> "Frame":
        return Frame(self.planes.copy())

    def __eq__(self, other):
        if not isinstance(other, Frame):
            return NotImplemented
        return self.planes.shape == other.planes.shape and bool(np.array_equal(self.planes, other.planes))

    def __hash__(self):
        return hash((self.planes.shape, self.planes.tobytes()))

    def __repr__(self):
        return f"Frame({self.width}x{self.height})"


@dataclass
class VideoSequence:
    frames: list[Frame]
    fps: int = 25

    def __post_init__(self):
        if len(self.frames) < 2:
            raise MediaError("a sequence needs a key frame and at least one inter frame")
        shape = self.frames[0].shape
        if any(f.shape != shape for f in self.frames):
            raise MediaError("frames differ in size")

    @property
    def width(self) -> int:
        return self.frames[0].width

    @property
    def height(self) -> int:
        return self.frames[0].height

    def __len__(self):
        return len(self.frames)

    def __getitem__(self, i):
        return self.frames[i]

    def __eq__(self, other):
        if not isinstance(other, VideoSequence):
            return NotImplemented
        return self.fps == other.fps and self.frames == other.frames


@dataclass
class MotionField:
    """Backward displacement field: output pixel p samples the source at p + (dx, dy)."""

    dx: np.ndarray
    dy: np.ndarray

    def __post_init__(self):
        self.dx = np.asarray(self.dx, dtype=np.float64)
        self.dy = np.asarray(self.dy, dtype=np.float64)
        if self.dx.shape != self.dy.shape or self.dx.ndim != 2:
            raise MediaError("dx and dy must be 2-D arrays of equal shape")
        if not (np.all(np.isfinite(self.dx)) and np.all(np.isfinite(self.dy))):
            raise MediaError("motion field has non-finite entries")

    @classmethod
    def zeros(cls, width: int, height: int) -> "MotionField":
        return cls(np.zeros((height, width)), np.zeros((height, width)))

    @property
    def width(self) -> int:
        return self.dx.shape[1]

    @property
    def height(self) -> int:
        return self.dx.shape[0]


@dataclass
class OcclusionMap:
    values: np.ndarray

    def __post_init__(self):
        self.values = np.clip(np.asarray(self.values, dtype=np.float64), 0.0, 1.0)

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def height(self) -> int:
        return self.values.shape[0]


@dataclass
class FeatureMap:
    """An ``s x s`` luminance-like auxiliary signal."""

    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2 or self.values.shape[0] != self.values.shape[1]:
            raise MediaError("feature maps are square")

    @property
    def side(self) -> int:
        return self.values.shape[0]

    def __eq__(self, other):
        if not isinstance(other, FeatureMap):
            return NotImplemented
        return bool(np.array_equal(self.values, other.values))


@dataclass
class KeypointTrack:
    """Per-frame keypoints in normalized ``[0, 1]`` coordinates, shape ``(F, N, 2)``."""

    points: np.ndarray

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        if self.points.ndim != 3 or self.points.shape[2] != 2:
            raise MediaError(f"keypoint track must have shape (F, N, 2), got {self.points.shape}")
        if not np.all(np.isfinite(self.points)):
            raise MediaError("keypoints must be finite")

    @property
    def frame_count(self) -> int:
        return self.points.shape[0]

    @property
    def keypoint_count(self) -> int:
        return self.points.shape[1]

    def __len__(self):
        return self.frame_count

    def __getitem__(self, i) -> np.ndarray:
        return self.points[i]

    def __eq__(self, other):
        if not isinstance(other, KeypointTrack):
            return NotImplemented
        return self.points.shape == other.points.shape and bool(np.array_equal(self.points, other.points))


# ---------------------------------------------------------------------------
# Deterministic PRNG

_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)


def splitmix64(seed: int, count: int, offset: int = 0) -> np.ndarray:
    """Outputs ``offset .. offset+count-1`` of the SplitMix64 stream seeded with ``seed``.

    SplitMix64 is counter based (state_i = seed + (i+1)*gamma mod 2**64) so the
    whole block is computed with wrapping uint64 arithmetic.
    """
    idx = np.arange(offset + 1, offset + count + 1, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = np.uint64(seed & 0xFFFFFFFFFFFFFFFF) + idx * _GAMMA
        z = (z ^ (z >> np.uint64(30))) * _MIX1
        z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


class SplitMix64:
    """Sequential view over :func:`splitmix64`."""

    def __init__(self, seed: int):
        self.seed = seed & 0xFFFFFFFFFFFFFFFF
        self.position = 0

    def next_u64(self, count: int) -> np.ndarray:
        out = splitmix64(self.seed, count, self.position)
        self.position += count
        return out

    def uniform(self, count: int, low: float = 0.0, high: float = 1.0) -> np.ndarray:
        u = (self.next_u64(count) >> np.uint64(11)).astype(np.float64) * (1.0 / (1 << 53))
        return low + (high - low) * u


# ---------------------------------------------------------------------------
# Resampling primitives


def _binomial_reduce(plane: np.ndarray) -> np.ndarray:
    """One octave: [1,4,6,4,1]/16 per axis with edge replication, then halve.

    Halving averages each 2x2 cell rather than keeping even samples, so output
    sample i stays centred on the middle of the input cells it covers.
    """
    h, w = plane.shape
    padded = np.pad(plane, 2, mode="edge")
    rows = sum(t * padded[:, i:i + w] for i, t in enumerate(BINOMIAL_TAPS))
    cols = sum(t * rows[i:i + h, :] for i, t in enumerate(BINOMIAL_TAPS))
    return box_resample(cols, max(h // 2, 1), max(w // 2, 1))


def _area_matrix(src: int, dst: int) -> np.ndarray:
    """Row i averages the source interval [i*src/dst, (i+1)*src/dst)."""
    m = np.zeros((dst, src))
    scale = src / dst
    for i in range(dst):
        lo, hi = i * scale, (i + 1) * scale
        for j in range(int(math.floor(lo)), min(src, int(math.ceil(hi)))):
            m[i, j] = min(hi, j + 1) - max(lo, j)
    return m / scale


def box_resample(plane: np.ndarray, rows: int, cols: int) -> np.ndarray:
    """Area-average a 2-D array to ``rows x cols`` (exact for integer ratios)."""
    h, w = plane.shape
    if (h, w) == (rows, cols):
        return plane.astype(np.float64, copy=True)
    return _area_matrix(h, rows) @ plane @ _area_matrix(w, cols).T


def downsample_band_limited(frame: Frame, s: int) -> FeatureMap:
    if s not in GRANULARITIES:
        raise MediaError(f"unsupported feature side {s}; expected one of {GRANULARITIES}")
    if s > min(frame.width, frame.height):
        raise MediaError(f"feature side {s} exceeds frame size {frame.width}x{frame.height}")
    plane = frame.luminance()
    octaves = int(math.floor(math.log2(min(frame.width, frame.height) / s)))
    for _ in range(octaves):
        plane = _binomial_reduce(plane)
    out = box_resample(plane, s, s)
    return FeatureMap(np.clip(out, 0.0, 255.0))


def upsample_bilinear(grid: np.ndarray, height: int, width: int) -> np.ndarray:
    """Bilinear upsampling with pixel-centre alignment and edge clamping."""
    gh, gw = grid.shape
    ys = np.clip((np.arange(height) + 0.5) * gh / height - 0.5, 0, gh - 1)
    xs = np.clip((np.arange(width) + 0.5) * gw / width - 0.5, 0, gw - 1)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, gh - 1)
    x1 = np.minimum(x0 + 1, gw - 1)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    top = grid[y0][:, x0] * (1 - fx) + grid[y0][:, x1] * fx
    bot = grid[y1][:, x0] * (1 - fx) + grid[y1][:, x1] * fx
    return top * (1 - fy) + bot * fy


def sample_bilinear(planes: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Sample float planes ``(C, H, W)`` at real coordinates, clamped to the frame rectangle."""
    _, h, w = planes.shape
    xs = np.clip(xs, 0.0, w - 1.0)
    ys = np.clip(ys, 0.0, h - 1.0)
    x0 = np.floor(xs).astype(np.intp)
    y0 = np.floor(ys).astype(np.intp)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = xs - x0
    fy = ys - y0
    top = planes[:, y0, x0] * (1 - fx) + planes[:, y0, x1] * fx
    bot = planes[:, y1, x0] * (1 - fx) + planes[:, y1, x1] * fx
    return top * (1 - fy) + bot * fy


def warp_bilinear(frame: Frame, motion: MotionField) -> Frame:
    if motion.dx.shape != frame.shape:
        raise MediaError(f"motion field {motion.dx.shape} does not match frame {frame.shape}")
    h, w = frame.shape
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    out = sample_bilinear(frame.planes.astype(np.float64), xx + motion.dx, yy + motion.dy)
    return Frame.from_float(out)


# ---------------------------------------------------------------------------
# PGRV raw video


def write_raw_video(seq: VideoSequence) -> bytes:
    header = _PGRV_HEADER.pack(PGRV_MAGIC, seq.width, seq.height, len(seq), seq.fps)
    return header + b"".join(f.to_bytes() for f in seq.frames)


def read_raw_video(data: bytes) -> VideoSequence:
    if len(data) < _PGRV_HEADER.size:
        raise MediaError("truncated PGRV header")
    magic, width, height, count, fps = _PGRV_HEADER.unpack_from(data)
    if magic != PGRV_MAGIC:
        raise MediaError(f"bad magic {magic!r}")
    if width == 0 or height == 0:
        raise MediaError("zero-area frame")
    if width > _MAX_DIM or height > _MAX_DIM:
        raise MediaError(f"dimension overflow: {width}x{height}")
    frame_size = 3 * width * height
    expected = _PGRV_HEADER.size + count * frame_size
    if len(data) < expected:
        raise MediaError(f"truncated payload: header declares {count} frames, "
                         f"have {(len(data) - _PGRV_HEADER.size) / frame_size:.2f}")
    if len(data) > expected:
        raise MediaError(f"{len(data) - expected} trailing bytes after last frame")
    buf = np.frombuffer(data, dtype=np.uint8, offset=_PGRV_HEADER.size, count=count * frame_size)
    frames = [Frame(buf[i * frame_size:(i + 1) * frame_size].reshape(3, height, width).copy())
              for i in range(count)]
    return VideoSequence(frames, fps)


def write_track(track: KeypointTrack) -> bytes:
    """JSON sidecar; Python's float repr round-trips every coordinate exactly."""
    doc = {"format": TRACK_FORMAT, "frames": track.frame_count,
           "keypoints": track.keypoint_count, "points": track.points.tolist()}
    return (json.dumps(doc, separators=(",", ":")) + "\n").encode("utf-8")


def read_track(data: bytes) -> KeypointTrack:
    try:
        doc = json.loads(data.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise MediaError(f"unreadable track file: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("format") != TRACK_FORMAT:
        raise MediaError("not a keypoint track file")
    frames, n = doc.get("frames"), doc.get("keypoints")
    points = np.asarray(doc.get("points"), dtype=np.float64)
    if n == 0:
        points = points.reshape(frames, 0, 2)
    track = KeypointTrack(points)
    if (track.frame_count, track.keypoint_count) != (frames, n):
        raise MediaError("track dimensions disagree with its header")
    return track


# ---------------------------------------------------------------------------
# Synthetic corpus


@dataclass(frozen=True)
class SyntheticSpec:
    width: int = 256
    height: int = 256
    frame_count: int = 250
    fps: int = 25
    keypoint_count: int = 10
    seed: int = 0
    motion_amplitude: float = 6.0
    kernel_bandwidth: float = 24.0

    def validate(self):
        if self.width <= 0 or self.height <= 0:
            raise MediaError("zero-area frame")
        if self.frame_count < 2:
            raise MediaError("frame_count must be at least 2")
        if self.keypoint_count < 0:
            raise MediaError("keypoint_count must be non-negative")
        if not self.kernel_bandwidth > 0:
            raise MediaError("kernel bandwidth must be positive")


def _key_texture(spec: SyntheticSpec, rng: SplitMix64) -> np.ndarray:
    """Smooth gradient background plus a textured ellipse, as float planes."""
    h, w = spec.height, spec.width
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    u, v = xx / max(w - 1, 1), yy / max(h - 1, 1)

    base = rng.uniform(3, 40.0, 200.0)
    slope = rng.uniform(6, -60.0, 60.0)
    planes = np.stack([base[c] + slope[2 * c] * u + slope[2 * c + 1] * v for c in range(3)])

    cx, cy = rng.uniform(2, 0.4, 0.6)
    rx, ry = rng.uniform(2, 0.22, 0.34)
    angle = rng.uniform(1, 0.0, math.pi)[0]
    ca, sa = math.cos(angle), math.sin(angle)
    ex = ((u - cx) * ca + (v - cy) * sa) / rx
    ey = (-(u - cx) * sa + (v - cy) * ca) / ry
    r = np.sqrt(ex * ex + ey * ey)
    mask = np.clip((1.0 - r) * 12.0, 0.0, 1.0)

    # Sum of oriented gratings with wavelengths between 24 and 64 pixels, plus
    # a little per-pixel grain.
    params = rng.uniform(4 * 5)
    texture = np.zeros((h, w))
    for i in range(5):
        theta = params[4 * i] * math.pi
        wavelength = 24.0 + 40.0 * params[4 * i + 1]
        phase = params[4 * i + 2] * 2 * math.pi
        amp = 10.0 + 20.0 * params[4 * i + 3]
        k = 2 * math.pi / wavelength
        texture += amp * np.sin(k * (xx * math.cos(theta) + yy * math.sin(theta)) + phase)
    noise = rng.uniform(h * w, -1.0, 1.0).reshape(h, w)
    tint = rng.uniform(3, 60.0, 200.0)
    gain = rng.uniform(3, 0.6, 1.0)
    face = np.stack([tint[c] + gain[c] * (texture + noise) for c in range(3)])
    return planes * (1 - mask) + face * mask


def _keypoint_track(spec: SyntheticSpec, rng: SplitMix64) -> np.ndarray:
    n, frames = spec.keypoint_count, spec.frame_count
    anchors = rng.uniform(2 * n, 0.2, 0.8).reshape(n, 2)
    freq = rng.uniform(2 * n, 0.02, 0.12).reshape(n, 2)
    phase = rng.uniform(2 * n, 0.0, 2 * math.pi).reshape(n, 2)
    amp = rng.uniform(2 * n, 0.3, 1.0).reshape(n, 2) * spec.motion_amplitude
    t = np.arange(frames, dtype=np.float64)[:, None, None]
    # Displacement is zero at frame 0 so the key frame carries the anchor pose.
    offset_px = amp * (np.sin(2 * math.pi * freq * t + phase) - np.sin(phase))
    scale = np.array([max(spec.width - 1, 1), max(spec.height - 1, 1)], dtype=np.float64)
    return np.clip(anchors + offset_px / scale, 0.0, 1.0)


def _key_and_track(spec: SyntheticSpec) -> tuple[Frame, KeypointTrack]:
    spec.validate()
    rng = SplitMix64(spec.seed)
    key = Frame.from_float(_key_texture(spec, rng))
    return key, KeypointTrack(_keypoint_track(spec, rng))


def generate_keypoint_track(spec: SyntheticSpec) -> KeypointTrack:
    """The track :func:`generate_synthetic_sequence` would return, without rendering frames."""
    return _key_and_track(spec)[1]


def generate_synthetic_sequence(spec: SyntheticSpec) -> tuple[VideoSequence, KeypointTrack]:
    """Build a textured key frame and warp it along a random smooth keypoint track.

    Inter frames are produced with :func:`pgen.base_layer.dense_motion_from_keypoints`
    so the returned track is exactly the motion that generated them.
    """
    from .base_layer import dense_motion_from_keypoints

    key, track = _key_and_track(spec)
    frames = [key]
    for l in range(1, spec.frame_count):
        if spec.keypoint_count == 0:
            frames.append(key.copy())
            continue
        motion = dense_motion_from_keypoints(track[0], track[l], spec.kernel_bandwidth,
                                             spec.width, spec.height)
        frames.append(warp_bilinear(key, motion))
    return VideoSequence(frames, spec.fps), track
