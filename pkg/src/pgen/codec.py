"""Sequence-level encoder and decoder tying the two layers to the container."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import base_layer as bl
from . import enhancement as el
from .container import (LEVELS, FrameRecord, SequenceHeader, Stream, extract_substream,
                        layer_bits, level_mask, read_stream, write_stream)
from .media import Frame, KeypointTrack, VideoSequence, warp_bilinear

LEVEL_NAMES = {0: "8", 1: "16", 2: "32"}


class CodecError(ValueError):
    pass


@dataclass(frozen=True)
class CodecConfig:
    qp: int = bl.DEFAULT_QP
    qstep: float = bl.DEFAULT_QSTEP
    tau: float = bl.DEFAULT_TAU
    background_weight: float = bl.BACKGROUND_WEIGHT
    levels: tuple[int, ...] = LEVELS
    q_f: tuple[float, float, float] = (1.0, 1.0, 1.0)
    block: int = el.DEFAULT_BLOCK
    search: int = el.DEFAULT_SEARCH

    def validate(self):
        if self.qp not in bl.QP_SET:
            raise CodecError(f"key-frame QP {self.qp} not in {bl.QP_SET}")
        if not set(self.levels) <= set(LEVELS):
            raise CodecError(f"levels {self.levels} not a subset of {LEVELS}")
        if not self.qstep > 0 or not self.tau > 0:
            raise CodecError("qstep and tau must be positive")
        if any(not q > 0 for q in self.q_f):
            raise CodecError("q_f must be positive")
        if self.block <= 0 or self.search < 0:
            raise CodecError("bad block-matching parameters")


@dataclass
class Decoded:
    frames: list[Frame]
    base: list[Frame] = field(default_factory=list)
    coarse: list[Frame] = field(default_factory=list)
    track: KeypointTrack | None = None


def encode_sequence(seq: VideoSequence, track: KeypointTrack,
                    config: CodecConfig = CodecConfig()) -> bytes:
    config.validate()
    if track.frame_count != len(seq):
        raise CodecError(f"track has {track.frame_count} frames, sequence has {len(seq)}")
    w, h = seq.width, seq.height
    key_payload, key_recon = bl.encode_key_frame(seq[0], config.qp)

    analysed = np.stack([bl.analyze(i, track) for i in range(len(seq))])
    indices = bl.quantize_points(analysed, config.qstep)
    decoded_points = bl.dequantize_points(indices, config.qstep)
    params = bl.ParamEncoder(indices[0])
    levels = tuple(sorted(config.levels))

    records = []
    for l in range(1, len(seq)):
        base_payload = params.encode_frame(indices[l])
        base_frame = _synthesize(key_recon, decoded_points[0], decoded_points[l], config)
        enh = {}
        for level in levels:
            s = el.LEVEL_SIDES[level]
            enh[level] = el.encode_feature(el.extract_feature(seq[l], s),
                                           el.extract_feature(base_frame, s), config.q_f[level])
        records.append(FrameRecord(base_payload, enh))

    header = SequenceHeader(w, h, len(seq), seq.fps, track.keypoint_count, config.qp,
                            config.qstep, config.tau, config.background_weight,
                            level_mask(levels), tuple(config.q_f), config.block, config.search,
                            tuple((int(a), int(b)) for a, b in indices[0]))
    return write_stream(Stream(header, key_payload, records))


def _synthesize(key_recon, kp_key, kp_cur, config) -> Frame:
    motion = bl.dense_motion_from_keypoints(kp_key, kp_cur, config.tau, key_recon.width,
                                            key_recon.height, config.background_weight)
    return warp_bilinear(key_recon, motion)


def config_from_header(header: SequenceHeader) -> CodecConfig:
    return CodecConfig(header.key_qp, header.qstep, header.tau, header.background_weight,
                       header.levels, header.q_f, header.block, header.search)


def decode_stream(data: bytes, layers=None) -> Decoded:
    """Decode ``data`` using only the enhancement levels in ``layers`` (default: all present)."""
    stream = read_stream(data)
    header = stream.header
    present = set(header.levels)
    wanted = present if layers is None else set(layers) - {"base"}
    if not wanted <= present:
        raise CodecError(f"requested levels {sorted(wanted - present)} are not in the stream")
    config = config_from_header(header)

    try:
        key_recon = bl.decode_key_frame(stream.key_payload, header.width, header.height, header.key_qp)
    except bl.BaseLayerError as exc:
        raise CodecError(f"key record: {exc}") from exc
    key_idx = header.key_index_array()
    key_points = bl.dequantize_points(key_idx, header.qstep)
    params = bl.ParamDecoder(key_idx)
    out = Decoded([key_recon], [key_recon], [key_recon])
    points = [key_points]
    for i, rec in enumerate(stream.records, start=1):
        try:
            cur = bl.dequantize_points(params.decode_frame(rec.base), header.qstep)
        except (bl.BaseLayerError, ValueError) as exc:
            raise CodecError(f"frame record {i}: {exc}") from exc
        points.append(cur)
        base_frame = _synthesize(key_recon, key_points, cur, config)
        features = []
        for level in sorted(wanted):
            s = el.LEVEL_SIDES[level]
            try:
                features.append(el.decode_feature(rec.enhancements[level],
                                                  el.extract_feature(base_frame, s),
                                                  header.q_f[level]))
            except el.EnhancementError as exc:
                raise CodecError(f"frame record {i}, level {level}: {exc}") from exc
        coarse, final = el.enhance_frame(key_recon, base_frame, features, header.block, header.search)
        out.frames.append(final)
        out.base.append(base_frame)
        out.coarse.append(coarse)
    out.track = KeypointTrack(np.stack(points))
    return out


def decode_sequence(data: bytes, layers=None) -> VideoSequence:
    stream_fps = read_stream(data).header.fps
    return VideoSequence(decode_stream(data, layers).frames, stream_fps)


def cumulative_rates(data: bytes) -> dict:
    """kbps of the base layer and of each cumulative ascending prefix of levels."""
    from .evaluation import bitrate_kbps

    header = read_stream(data).header
    bits = layer_bits(data)
    rates = {"base": bitrate_kbps(bits["base"], header.frame_count, header.fps)}
    total = bits["base"]
    for level in header.levels:
        total += bits[level]
        rates[level] = bitrate_kbps(total, header.frame_count, header.fps)
    return rates


def layer_prefixes(levels) -> list[tuple[int, ...]]:
    levels = tuple(sorted(levels))
    return [levels[:k] for k in range(len(levels) + 1)]


__all__ = ["CodecConfig", "CodecError", "Decoded", "encode_sequence", "decode_stream",
           "decode_sequence", "cumulative_rates", "extract_substream", "layer_prefixes"]
