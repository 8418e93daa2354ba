"""Quality metrics, rate accounting and Bjontegaard BD-rate."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.ndimage import correlate1d

from .media import Frame, VideoSequence

PSNR_CAP = 99.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = (0.01 * 255) ** 2
SSIM_C2 = (0.03 * 255) ** 2

REPORT_COLUMNS = ("sequence", "config", "layer_set", "rate_kbps", "psnr_db", "ssim", "rd_cost")


class EvaluationError(ValueError):
    pass


def _frames(x) -> list[Frame]:
    if isinstance(x, Frame):
        return [x]
    if isinstance(x, VideoSequence):
        return x.frames
    return list(x)


def mse(a: Frame, b: Frame) -> float:
    if a.shape != b.shape:
        raise EvaluationError(f"frame sizes differ: {a.shape} vs {b.shape}")
    d = a.planes.astype(np.float64) - b.planes.astype(np.float64)
    return float(np.mean(d * d))


def _psnr_frame(a: Frame, b: Frame) -> float:
    m = mse(a, b)
    if m == 0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(255.0 ** 2 / m))


def psnr(a, b) -> float:
    """PSNR over all RGB samples; sequences give the mean of per-frame values."""
    fa, fb = _frames(a), _frames(b)
    if len(fa) != len(fb):
        raise EvaluationError(f"sequence lengths differ: {len(fa)} vs {len(fb)}")
    return float(np.mean([_psnr_frame(x, y) for x, y in zip(fa, fb)]))


def _gaussian_taps() -> np.ndarray:
    r = SSIM_WINDOW // 2
    t = np.exp(-(np.arange(-r, r + 1) ** 2) / (2 * SSIM_SIGMA ** 2))
    return t / t.sum()


def _filter_valid(x: np.ndarray, taps: np.ndarray) -> np.ndarray:
    r = len(taps) // 2
    y = correlate1d(correlate1d(x, taps, axis=0, mode="nearest"), taps, axis=1, mode="nearest")
    return y[r:-r, r:-r]


def _ssim_frame(a: Frame, b: Frame) -> float:
    if a.shape != b.shape:
        raise EvaluationError(f"frame sizes differ: {a.shape} vs {b.shape}")
    if min(a.shape) < SSIM_WINDOW:
        raise EvaluationError(f"frame {a.shape} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")
    x, y = a.luminance(), b.luminance()
    g = _gaussian_taps()
    mx, my = _filter_valid(x, g), _filter_valid(y, g)
    sxx = _filter_valid(x * x, g) - mx * mx
    syy = _filter_valid(y * y, g) - my * my
    sxy = _filter_valid(x * y, g) - mx * my
    num = (2 * mx * my + SSIM_C1) * (2 * sxy + SSIM_C2)
    den = (mx * mx + my * my + SSIM_C1) * (sxx + syy + SSIM_C2)
    return float(np.mean(num / den))


def ssim(a, b) -> float:
    """Luminance SSIM, 11x11 Gaussian window (sigma 1.5), mean over valid positions."""
    fa, fb = _frames(a), _frames(b)
    if len(fa) != len(fb):
        raise EvaluationError(f"sequence lengths differ: {len(fa)} vs {len(fb)}")
    return float(np.mean([_ssim_frame(x, y) for x, y in zip(fa, fb)]))


def bitrate_kbps(total_bits: float, frame_count: int, fps: float) -> float:
    if frame_count <= 0:
        raise EvaluationError("frame_count must be positive")
    return total_bits * fps / frame_count / 1000.0


def rd_cost(distortion: float, rate: float, lam: float) -> float:
    if lam < 0:
        raise EvaluationError("lambda must be non-negative")
    return distortion + lam * rate


@dataclass(frozen=True)
class RDPoint:
    rate: float
    quality: float
    metric: str = "psnr"
    tag: str = ""

    def __post_init__(self):
        if not self.rate > 0 or not math.isfinite(self.quality):
            raise EvaluationError(f"invalid RD point ({self.rate}, {self.quality})")


class RDCurve:
    def __init__(self, points: Sequence[RDPoint]):
        points = sorted(points, key=lambda p: p.rate)
        if len(points) < 2:
            raise EvaluationError("an RD curve needs at least two points")
        if len({p.metric for p in points}) != 1:
            raise EvaluationError("RD curve mixes metrics")
        rates = [p.rate for p in points]
        if any(b <= a for a, b in zip(rates, rates[1:])):
            raise EvaluationError("RD curve rates must be strictly increasing")
        self.points = points

    @classmethod
    def from_arrays(cls, rates, qualities, metric: str = "psnr") -> "RDCurve":
        return cls([RDPoint(float(r), float(q), metric) for r, q in zip(rates, qualities)])

    @property
    def rates(self) -> np.ndarray:
        return np.array([p.rate for p in self.points])

    @property
    def qualities(self) -> np.ndarray:
        return np.array([p.quality for p in self.points])

    @property
    def metric(self) -> str:
        return self.points[0].metric

    def __len__(self):
        return len(self.points)


def _overlap(test: RDCurve, anchor: RDCurve) -> tuple[float, float]:
    lo = max(test.qualities.min(), anchor.qualities.min())
    hi = min(test.qualities.max(), anchor.qualities.max())
    if not hi > lo:
        raise EvaluationError("RD curves do not overlap in quality")
    return lo, hi


def bd_rate(test: RDCurve, anchor: RDCurve) -> float:
    """Average rate difference of ``test`` against ``anchor`` at equal quality, in percent.

    log10(rate) is fitted as a cubic in quality for each curve and the fits are
    integrated over the common quality interval.  Negative means ``test`` needs
    fewer bits.
    """
    if len(test) < 4 or len(anchor) < 4:
        raise EvaluationError("BD-rate needs at least 4 points per curve")
    if test.metric != anchor.metric:
        raise EvaluationError("curves use different metrics")
    lo, hi = _overlap(test, anchor)
    p_test = np.polyint(np.polyfit(test.qualities, np.log10(test.rates), 3))
    p_anchor = np.polyint(np.polyfit(anchor.qualities, np.log10(anchor.rates), 3))
    area_test = np.polyval(p_test, hi) - np.polyval(p_test, lo)
    area_anchor = np.polyval(p_anchor, hi) - np.polyval(p_anchor, lo)
    delta = (area_test - area_anchor) / (hi - lo)
    return float((10.0 ** delta - 1.0) * 100.0)


def bd_rate_numeric(test_fn, anchor_fn, lo: float, hi: float, samples: int = 20001) -> float:
    """Reference BD-rate from two log10-rate(quality) callables by trapezoidal integration."""
    q = np.linspace(lo, hi, samples)
    diff = np.asarray(test_fn(q)) - np.asarray(anchor_fn(q))
    delta = float(np.sum((diff[1:] + diff[:-1]) * np.diff(q)) / 2.0) / (hi - lo)
    return (10.0 ** delta - 1.0) * 100.0


def mean_bd_rate(values: Sequence[float]) -> float:
    """Per-sequence BD-rates averaged arithmetically."""
    return float(np.mean(values))


def emit_report(results: Sequence[dict]) -> bytes:
    """CSV with a fixed column order; floats are printed with fixed precision."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(REPORT_COLUMNS)
    for r in results:
        writer.writerow([
            r["sequence"], r["config"], r["layer_set"],
            f"{r['rate_kbps']:.4f}", f"{r['psnr_db']:.4f}", f"{r['ssim']:.6f}", f"{r['rd_cost']:.4f}",
        ])
    return buf.getvalue().encode("utf-8")


def rd_file(points: Sequence[tuple[float, float]]) -> bytes:
    """Two-column whitespace-separated RD data, gnuplot-ready."""
    return "".join(f"{r:.4f} {q:.6f}\n" for r, q in points).encode("utf-8")
