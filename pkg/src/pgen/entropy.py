"""Range coding with adaptive-frequency and Gaussian-conditional models.

The coder keeps a 32-bit ``range`` in ``[2**24, 2**32)`` and a 33-bit ``low``;
carries out of ``low`` are resolved through a cached byte plus a run of pending
0xFF bytes, so nothing already written ever has to be revisited.  All model
probabilities are integers, which makes encoder and decoder replay each other
exactly.
"""

from __future__ import annotations

import math
from functools import lru_cache
from typing import Sequence

import numpy as np

TOP = 1 << 24
MASK32 = 0xFFFFFFFF

PROB_BITS = 16
PROB_TOTAL = 1 << PROB_BITS
SIGMA_MIN = 0.1
BIN_RANGE = 255
ESCAPE_BITS = 16


class EntropyError(ValueError):
    pass


class StreamExhausted(EntropyError):
    pass


class RangeEncoder:
    def __init__(self):
        self.low = 0
        self.range = MASK32
        self._cache = 0
        self._pending = 1
        self._out = bytearray()

    def _shift_low(self):
        low = self.low
        if low < 0xFF000000 or low > MASK32:
            carry = low >> 32
            self._out.append((self._cache + carry) & 0xFF)
            self._out.extend(((0xFF + carry) & 0xFF,) * (self._pending - 1))
            self._pending = 0
            self._cache = (low >> 24) & 0xFF
        self._pending += 1
        self.low = (low & 0x00FFFFFF) << 8

    def encode(self, start: int, size: int, total: int):
        r = self.range // total
        self.low += r * start
        if start + size == total:
            self.range -= r * start
        else:
            self.range = r * size
        while self.range < TOP:
            self.range <<= 8
            self._shift_low()

    def encode_bits(self, value: int, nbits: int):
        """Equiprobable literal of up to 16 bits."""
        while nbits > 0:
            n = min(nbits, 16)
            nbits -= n
            self.encode((value >> nbits) & ((1 << n) - 1), 1, 1 << n)

    def finish(self) -> bytes:
        # Emit the shortest prefix that pins a value inside [low, low + range)
        # whatever bytes follow it.
        for nbytes in (1, 2, 3, 4):
            block = 1 << (32 - 8 * nbytes)
            v = (self.low + block - 1) & ~(block - 1)
            if v + block <= self.low + self.range:
                break
        self.low = v
        for _ in range(nbytes + 1):
            self._shift_low()
        # The first byte is always the initial zero cache.
        return bytes(self._out[1:])


class RangeDecoder:
    # Bytes past the end read as zero; the encoder's flush guarantees any
    # continuation decodes correctly, and at most 3 are ever needed.
    SLACK = 4

    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0
        self.range = MASK32
        self.code = 0
        for _ in range(4):
            self.code = (self.code << 8) | self._next_byte()

    def _next_byte(self) -> int:
        pos = self.pos
        self.pos += 1
        if pos < len(self.data):
            return self.data[pos]
        if pos >= len(self.data) + self.SLACK:
            raise StreamExhausted("range-coded stream exhausted")
        return 0

    def decode_freq(self, total: int) -> int:
        self._r = self.range // total
        v = self.code // self._r
        return v if v < total else total - 1

    def consume(self, start: int, size: int, total: int):
        r = self._r
        self.code = (self.code - r * start) & MASK32
        if start + size == total:
            self.range -= r * start
        else:
            self.range = r * size
        while self.range < TOP:
            self.code = ((self.code << 8) | self._next_byte()) & MASK32
            self.range <<= 8

    def decode_bits(self, nbits: int) -> int:
        value = 0
        while nbits > 0:
            n = min(nbits, 16)
            nbits -= n
            total = 1 << n
            v = self.decode_freq(total)
            self.consume(v, 1, total)
            value = (value << n) | v
        return value


# ---------------------------------------------------------------------------
# Adaptive frequency model


class AdaptiveModel:
    """Per-context symbol counts, initialised to 1 and halved past a threshold."""

    def __init__(self, alphabet_size: int, context_count: int = 1,
                 increment: int = 1, threshold: int = 1 << 13):
        if alphabet_size < 1 or alphabet_size > threshold // 2:
            raise ValueError(f"alphabet size {alphabet_size} out of range")
        self.alphabet_size = alphabet_size
        self.context_count = context_count
        self.increment = increment
        self.threshold = threshold
        self.freqs = [[1] * alphabet_size for _ in range(context_count)]
        self.totals = [alphabet_size] * context_count

    def copy(self) -> "AdaptiveModel":
        m = AdaptiveModel.__new__(AdaptiveModel)
        m.__dict__.update(self.__dict__)
        m.freqs = [list(f) for f in self.freqs]
        m.totals = list(self.totals)
        return m

    def state(self):
        return [tuple(f) for f in self.freqs]

    def probability(self, symbol: int, context: int = 0) -> float:
        return self.freqs[context][symbol] / self.totals[context]

    def update(self, symbol: int, context: int = 0):
        f = self.freqs[context]
        f[symbol] += self.increment
        self.totals[context] += self.increment
        if self.totals[context] > self.threshold:
            for i, c in enumerate(f):
                f[i] = max(1, c >> 1)
            self.totals[context] = sum(f)

    def encode(self, enc: RangeEncoder, symbol: int, context: int = 0):
        if not 0 <= symbol < self.alphabet_size:
            raise EntropyError(f"symbol {symbol} outside alphabet of size {self.alphabet_size}")
        f = self.freqs[context]
        enc.encode(sum(f[:symbol]), f[symbol], self.totals[context])
        self.update(symbol, context)

    def decode(self, dec: RangeDecoder, context: int = 0) -> int:
        f = self.freqs[context]
        total = self.totals[context]
        target = dec.decode_freq(total)
        cum = 0
        for symbol, c in enumerate(f):
            if cum + c > target:
                break
            cum += c
        dec.consume(cum, c, total)
        self.update(symbol, context)
        return symbol


# ---------------------------------------------------------------------------
# Gaussian bin model

_ERF_P = 0.3275911
_ERF_A = (0.254829592, -0.284496736, 1.421413741, -1.453152027, 1.061405429)
_SQRT2 = math.sqrt(2.0)


def erfc_nonneg(x: np.ndarray) -> np.ndarray:
    """Rational approximation of erfc for x >= 0, absolute error <= 1.5e-7."""
    t = 1.0 / (1.0 + _ERF_P * x)
    a1, a2, a3, a4, a5 = _ERF_A
    poly = t * (a1 + t * (a2 + t * (a3 + t * (a4 + t * a5))))
    return poly * np.exp(-x * x)


def upper_tail(z: np.ndarray) -> np.ndarray:
    """P(Z > z) for z >= 0."""
    return 0.5 * erfc_nonneg(np.asarray(z, dtype=np.float64) / _SQRT2)


def normal_cdf(z):
    z = np.asarray(z, dtype=np.float64)
    q = upper_tail(np.abs(z))
    return np.where(z >= 0, 1.0 - q, q)


def _edge_masses(mu: float, sigma: float, edges: np.ndarray) -> np.ndarray:
    """Masses of the intervals between consecutive ``edges`` plus both outer tails.

    Each mass is a difference of tail probabilities taken on its own side of the
    mean, which keeps the result exactly mirror-symmetric about ``mu``.
    """
    z = (np.asarray(edges, dtype=np.float64) - mu) / sigma
    t = upper_tail(np.abs(z))
    a, b = z[:-1], z[1:]
    ta, tb = t[:-1], t[1:]
    inner = np.where(a >= 0, ta - tb, np.where(b <= 0, tb - ta, 1.0 - ta - tb))
    low = t[0] if z[0] <= 0 else 1.0 - t[0]
    high = t[-1] if z[-1] >= 0 else 1.0 - t[-1]
    return np.concatenate(([low], inner, [high]))


def bin_masses(mu: float, sigma: float, bins: np.ndarray) -> np.ndarray:
    """Real-valued mass of integer bins ``[k - 0.5, k + 0.5)`` under N(mu, sigma)."""
    sigma = max(float(sigma), SIGMA_MIN)
    bins = np.asarray(bins, dtype=np.float64).reshape(-1)
    edges = np.stack([bins - 0.5, bins + 0.5])
    return np.array([_edge_masses(mu, sigma, e)[1] for e in edges.T])


@lru_cache(maxsize=1 << 16)
def _gaussian_table(mu: float, sigma: float, bin_range: int) -> tuple[np.ndarray, np.ndarray]:
    sigma = max(sigma, SIGMA_MIN)
    edges = np.arange(-bin_range, bin_range + 2) - 0.5
    masses = np.maximum(_edge_masses(mu, sigma, edges), 0.0)
    n = masses.size
    spare = PROB_TOTAL - n
    freqs = 1 + np.floor(masses * (spare / masses.sum())).astype(np.int64)
    freqs[int(np.argmax(masses))] += PROB_TOTAL - int(freqs.sum())
    cum = np.concatenate(([0], np.cumsum(freqs)))
    freqs.setflags(write=False)
    cum.setflags(write=False)
    return freqs, cum


class GaussianBinModel:
    """Quantised Gaussian over bins ``[-B, B]`` plus a low and a high escape bin.

    Table index 0 is the low escape, 1 .. 2B+1 are bins -B .. B, and 2B+2 is the
    high escape.  Escaped values follow as a raw 16-bit two's-complement literal.
    """

    def __init__(self, mu: float, sigma: float, bin_range: int = BIN_RANGE):
        self.mu = float(mu)
        self.sigma = max(float(sigma), SIGMA_MIN)
        self.bin_range = bin_range
        self.freqs, self.cum = _gaussian_table(self.mu, self.sigma, bin_range)

    def index_of(self, value: int) -> int:
        if value < -self.bin_range:
            return 0
        if value > self.bin_range:
            return 2 * self.bin_range + 2
        return value + self.bin_range + 1

    def self_information(self, value: int) -> float:
        bits = -math.log2(int(self.freqs[self.index_of(value)]) / PROB_TOTAL)
        if abs(value) > self.bin_range:
            bits += ESCAPE_BITS
        return bits

    def encode(self, enc: RangeEncoder, value: int):
        value = int(value)
        i = self.index_of(value)
        enc.encode(int(self.cum[i]), int(self.freqs[i]), PROB_TOTAL)
        if i == 0 or i == 2 * self.bin_range + 2:
            if not -(1 << 15) <= value < (1 << 15):
                raise EntropyError(f"escaped value {value} does not fit 16 bits")
            enc.encode_bits(value & 0xFFFF, ESCAPE_BITS)

    def decode(self, dec: RangeDecoder) -> int:
        target = dec.decode_freq(PROB_TOTAL)
        i = int(np.searchsorted(self.cum, target, side="right")) - 1
        dec.consume(int(self.cum[i]), int(self.freqs[i]), PROB_TOTAL)
        if i == 0 or i == 2 * self.bin_range + 2:
            raw = dec.decode_bits(ESCAPE_BITS)
            return raw - (1 << 16) if raw & 0x8000 else raw
        return i - self.bin_range - 1


def gaussian_bin_probability(mu: float, sigma: float, k: int, bin_range: int = BIN_RANGE) -> int:
    """Fixed-point probability (in units of 2**-16) of integer ``k``; tails map to escapes."""
    model = GaussianBinModel(mu, sigma, bin_range)
    return int(model.freqs[model.index_of(k)])


# ---------------------------------------------------------------------------
# List-level helpers


def encode_symbols(symbols: Sequence[int], model) -> bytes:
    """Encode ``symbols`` with one shared :class:`AdaptiveModel` (context 0) or a
    list of per-symbol :class:`GaussianBinModel`."""
    enc = RangeEncoder()
    if isinstance(model, AdaptiveModel):
        for s in symbols:
            model.encode(enc, int(s))
    else:
        if len(model) != len(symbols):
            raise EntropyError("need one Gaussian model per symbol")
        for s, m in zip(symbols, model):
            m.encode(enc, int(s))
    return enc.finish()


def decode_symbols(data: bytes, model, count: int) -> list[int]:
    dec = RangeDecoder(data)
    if isinstance(model, AdaptiveModel):
        return [model.decode(dec) for _ in range(count)]
    if len(model) < count:
        raise EntropyError("need one Gaussian model per symbol")
    return [model[i].decode(dec) for i in range(count)]
