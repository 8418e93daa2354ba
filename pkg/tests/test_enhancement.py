import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pgen import enhancement as el
from pgen.corpus import corpus_sequence
from pgen.entropy import normal_cdf
from pgen.media import FeatureMap, Frame, MotionField, OcclusionMap, box_resample


@pytest.fixture(scope="module")
def corpus_frames():
    seq, _ = corpus_sequence(2, frame_count=3)
    return seq


def smooth_textured(w=128, h=128, seed=0) -> Frame:
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    rng = np.random.default_rng(seed)
    a, b = rng.random(2) * 2 * math.pi
    base = 120 + 50 * np.sin(xx / 7.0 + a) * np.cos(yy / 5.0 + b) + 30 * np.sin((xx + 2 * yy) / 11.0)
    return Frame.from_float(np.stack([base, 0.8 * base + 20, 255 - base]))


# --- Features ----------------------------------------------------------------


def test_constant_frame_constant_feature():
    fm = el.extract_feature(Frame.constant(64, 64, 90), 16)
    assert np.allclose(fm.values, 90.0, atol=0.5)


def test_feature_sizes(corpus_frames):
    assert el.extract_feature(corpus_frames[0], 32).side == 32
    assert el.extract_feature(corpus_frames[0], 8).side == 8
    with pytest.raises(el.EnhancementError):
        el.extract_feature(corpus_frames[0], 64)


def pyramid_gap(frame: Frame, s: int) -> np.ndarray:
    fine = el.extract_feature(frame, s).values
    coarse = el.extract_feature(frame, s // 2).values
    return np.abs(box_resample(fine, s // 2, s // 2) - coarse)


def test_pyramid_consistency_on_affine_content():
    # One more binomial pass leaves a ramp unchanged, so the two routes agree
    # wherever edge replication has not bent the ramp.
    yy, xx = np.mgrid[0:256, 0:256].astype(np.float64)
    ramp = Frame.from_float(np.stack([20 + 0.4 * xx + 0.45 * yy] * 3))
    for s in (16, 32):
        assert pyramid_gap(ramp, s)[1:-1, 1:-1].max() <= 1.0


@pytest.mark.xfail(strict=True, reason="the extra octave at s/2 is a low-pass the box average "
                                       "does not apply; textured frames differ by several levels")
def test_pyramid_consistency_on_textured_frame(corpus_frames):
    for s in (16, 32):
        assert pyramid_gap(corpus_frames[1], s).max() <= 1.0


# --- Sigma prediction --------------------------------------------------------


def test_sigma_constant_feature():
    assert np.all(el.predict_sigma(FeatureMap(np.full((8, 8), 33.0))) == 0.5)


def test_sigma_vertical_step():
    v = np.zeros((8, 8))
    v[:, 4:] = 8.0
    sigma = el.predict_sigma(FeatureMap(v))
    # One of four neighbours differs by 8 on both edge columns.
    assert np.allclose(sigma[:, 3], 0.5 + 0.25 * 8 * 0.25)
    assert np.allclose(sigma[:, 4], 0.5 + 0.25 * 8 * 0.25)
    assert np.all(sigma[:, [0, 1, 2, 5, 6, 7]] == 0.5)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(-100, 100))
def test_sigma_shift_invariant(seed, c):
    v = np.random.default_rng(seed).random((16, 16)) * 100
    a = el.predict_sigma(FeatureMap(v))
    b = el.predict_sigma(FeatureMap(v + c))
    assert np.allclose(a, b, atol=1e-9)


# --- Feature coding ----------------------------------------------------------


@pytest.mark.parametrize("s", [8, 16, 32])
def test_zero_residual_payload_bound(s):
    base = FeatureMap(np.full((s, s), 100.0))
    payload = el.encode_feature(base, base)
    p0 = float(normal_cdf(1.0) - normal_cdf(-1.0))  # bin [-0.5, 0.5] at sigma 0.5
    assert p0 == pytest.approx(0.683, abs=1e-3)
    assert len(payload) <= s * s * (-math.log2(p0)) / 8 + 8
    assert np.all(el.decode_symbols_feature(payload, base) == 0)
    assert el.decode_feature(payload, base) == base


@settings(max_examples=30, deadline=None)
@given(st.sampled_from([8, 16, 32]), st.integers(0, 2**32 - 1), st.sampled_from([0.5, 1.0, 2.0, 4.0]))
def test_feature_round_trip_and_error_bound(s, seed, q_f):
    rng = np.random.default_rng(seed)
    base = FeatureMap(rng.random((s, s)) * 255)
    target = FeatureMap(np.clip(base.values + rng.normal(0, 6, (s, s)), 0, 255))
    payload = el.encode_feature(target, base, q_f)
    q = el.decode_symbols_feature(payload, base)
    assert np.array_equal(q, el.quantize_residual(target, base, q_f))
    rec = el.decode_feature(payload, base, q_f)
    assert np.max(np.abs(rec.values - target.values)) <= 1 / (2 * q_f) + 1e-9


def test_finer_quantiser_costs_more_and_errs_less(corpus_frames):
    target = el.extract_feature(corpus_frames[2], 32)
    base = el.extract_feature(corpus_frames[1], 32)
    sizes, errors = [], []
    for q_f in (1.0, 2.0):
        payload = el.encode_feature(target, base, q_f)
        sizes.append(len(payload))
        errors.append(np.max(np.abs(el.decode_feature(payload, base, q_f).values - target.values)))
    assert sizes[1] > sizes[0]
    assert errors[0] <= 0.5 and errors[1] <= 0.25


def test_checksum_detects_base_mismatch():
    base = FeatureMap(np.full((8, 8), 50.0))
    payload = el.encode_feature(FeatureMap(np.full((8, 8), 52.0)), base)
    other = FeatureMap(base.values + 1e-9)
    with pytest.raises(el.ChecksumMismatch):
        el.decode_feature(payload, other)
    with pytest.raises(el.EnhancementError):
        el.decode_feature(payload[:1], base)


def test_feature_side_mismatch():
    with pytest.raises(el.EnhancementError):
        el.encode_feature(FeatureMap(np.zeros((8, 8))), FeatureMap(np.zeros((16, 16))))


# --- Recalibration -----------------------------------------------------------


def test_recalibrate_identity(corpus_frames):
    f = corpus_frames[1]
    assert el.recalibrate(f, el.extract_feature(f, 16)) == f


def test_recalibrate_corrects_global_darkening():
    truth = smooth_textured()
    dark = Frame.from_float(truth.planes * 0.8)
    out = el.recalibrate(dark, el.extract_feature(truth, 16))
    assert out.luminance().mean() == pytest.approx(truth.luminance().mean(), rel=0.02)
    assert abs(dark.luminance().mean() / truth.luminance().mean() - 1) > 0.15


def test_recalibrate_gain_clamp():
    base = Frame.constant(32, 32, 1)
    out = el.recalibrate(base, FeatureMap(np.full((8, 8), 255.0)))
    assert np.all(out.planes == 2)
    bright = Frame.constant(32, 32, 200)
    assert np.all(el.recalibrate(bright, FeatureMap(np.zeros((8, 8)))).planes == 100)


# --- Block matching ----------------------------------------------------------


def brute_force_match(key: Frame, cur: Frame, block: int, search: int):
    """Direct loop over blocks and candidates with the documented tie-break."""
    k, c = key.luminance(), cur.luminance()
    h, w = c.shape
    vectors = np.zeros((h // block, w // block, 2))
    best_sad = np.zeros((h // block, w // block))
    for by in range(h // block):
        for bx in range(w // block):
            y0, x0 = by * block, bx * block
            tgt = c[y0:y0 + block, x0:x0 + block]
            best = None
            for dy in range(-search, search + 1):
                for dx in range(-search, search + 1):
                    ys, xs = y0 + dy, x0 + dx
                    if ys < 0 or xs < 0 or ys + block > h or xs + block > w:
                        continue
                    sad = np.abs(tgt - k[ys:ys + block, xs:xs + block]).sum()
                    key_ = (sad, abs(dx) + abs(dy), dy, dx)
                    if best is None or key_ < best:
                        best = key_
            vectors[by, bx] = (best[3], best[2])
            best_sad[by, bx] = best[0]
    return vectors, best_sad / (block * block)


@pytest.mark.parametrize("seed", [0, 1])
def test_block_match_equals_exhaustive_oracle(seed):
    key = smooth_textured(48, 48, seed)
    cur = Frame(np.roll(key.planes, (2, -3), axis=(1, 2)))
    vectors, sad = el.block_match(key, cur, 8, 4)
    ref_vectors, ref_sad = brute_force_match(key, cur, 8, 4)
    assert np.array_equal(vectors, ref_vectors)
    assert np.allclose(sad, ref_sad)


def test_block_match_tie_break_prefers_small_vectors():
    flat = Frame.constant(32, 32, 50)
    vectors, _ = el.block_match(flat, flat, 8, 3)
    assert not vectors.any()


def test_identical_frames_give_zero_field_full_confidence(corpus_frames):
    motion, occ = el.refine_motion(corpus_frames[0], corpus_frames[0])
    assert not motion.dx.any() and not motion.dy.any()
    assert np.all(occ.values == 1.0)


def test_translation_recovered_on_interior(corpus_frames):
    key = corpus_frames[0]
    # coarse(p) = key(p + (8, 0))
    coarse = Frame(np.roll(key.planes, -8, axis=2))
    vectors, _ = el.block_match(key, coarse, 16, 12)
    interior = vectors[1:-1, 1:-2]
    assert np.all(interior[..., 0] == 8) and np.all(interior[..., 1] == 0)


def grey_noise(w, h, seed) -> Frame:
    plane = np.random.default_rng(seed).integers(0, 256, size=(h, w), dtype=np.uint8)
    return Frame(np.stack([plane] * 3))


def test_unrelated_noise_gives_no_confidence():
    # Two independent uniform luma fields have mean |a-b| near 85, so even the
    # best of the candidate blocks stays above the 64-level SAD that maps to 0.
    _, occ = el.refine_motion(grey_noise(64, 64, 1), grey_noise(64, 64, 2))
    assert occ.values.max() <= 0.05


def test_refine_motion_is_deterministic(corpus_frames):
    a = el.refine_motion(corpus_frames[0], corpus_frames[2])
    b = el.refine_motion(corpus_frames[0], corpus_frames[2])
    assert np.array_equal(a[0].dx, b[0].dx) and np.array_equal(a[1].values, b[1].values)


def test_refine_motion_dimension_errors():
    with pytest.raises(el.EnhancementError):
        el.refine_motion(Frame.constant(32, 32, 0), Frame.constant(48, 32, 0))
    with pytest.raises(el.EnhancementError):
        el.refine_motion(Frame.constant(40, 40, 0), Frame.constant(40, 40, 0))


# --- Composition -------------------------------------------------------------


def test_compose_fine_extremes(corpus_frames):
    key, coarse = corpus_frames[0], corpus_frames[1]
    zero = MotionField.zeros(256, 256)
    assert el.compose_fine(key, coarse, zero, OcclusionMap(np.zeros((256, 256)))) == coarse
    assert el.compose_fine(key, coarse, zero, OcclusionMap(np.ones((256, 256)))) == key
    with pytest.raises(el.EnhancementError):
        el.compose_fine(key, coarse, MotionField.zeros(8, 8), OcclusionMap(np.ones((8, 8))))


def test_enhance_frame_without_features_passes_base_through(corpus_frames):
    coarse, final = el.enhance_frame(corpus_frames[0], corpus_frames[1], [])
    assert coarse == corpus_frames[1] and final == corpus_frames[1]
