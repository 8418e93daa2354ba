"""The fixed synthetic evaluation corpus.

Ten 256x256 sequences of 12 frames at 25 fps, seeds 0..9.  Frames are
generated with a sharper motion kernel (bandwidth 8 px) than the codec's
default synthesis bandwidth, so the base layer carries a systematic motion
model error that the enhancement layer has to correct, as it would on real
content.
"""

from __future__ import annotations

from .media import KeypointTrack, SyntheticSpec, VideoSequence, generate_synthetic_sequence

CORPUS_SEEDS = tuple(range(10))
CORPUS_SIZE = 256
CORPUS_FRAMES = 12
CORPUS_FPS = 25
CORPUS_KEYPOINTS = 10
CORPUS_AMPLITUDE = 6.0
CORPUS_BANDWIDTH = 8.0


def corpus_spec(seed: int, frame_count: int = CORPUS_FRAMES) -> SyntheticSpec:
    return SyntheticSpec(width=CORPUS_SIZE, height=CORPUS_SIZE, frame_count=frame_count,
                         fps=CORPUS_FPS, keypoint_count=CORPUS_KEYPOINTS, seed=seed,
                         motion_amplitude=CORPUS_AMPLITUDE, kernel_bandwidth=CORPUS_BANDWIDTH)


def corpus_sequence(seed: int, frame_count: int = CORPUS_FRAMES) -> tuple[VideoSequence, KeypointTrack]:
    return generate_synthetic_sequence(corpus_spec(seed, frame_count))
