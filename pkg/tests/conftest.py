import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from pgen.corpus import corpus_sequence  # noqa: E402
from pgen.media import Frame, SyntheticSpec, generate_synthetic_sequence  # noqa: E402

# criterion number -> (passed, detail); filled in by test_acceptance.py
ACCEPTANCE_RESULTS: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_RESULTS):
        ok, detail = ACCEPTANCE_RESULTS[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture(scope="session")
def small_sequence():
    """64x64, 5 frames; cheap enough for per-module tests."""
    spec = SyntheticSpec(width=64, height=64, frame_count=5, keypoint_count=6, seed=11,
                         motion_amplitude=3.0, kernel_bandwidth=8.0)
    return generate_synthetic_sequence(spec)


@pytest.fixture(scope="session")
def corpus_key_frame() -> Frame:
    seq, _ = corpus_sequence(3, frame_count=2)
    return seq[0]
