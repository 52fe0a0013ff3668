"""Byte-oriented range coder and the ``.iw3`` container header.

The coder follows the carry-propagating design used by LZMA: a 33-bit
``low``, a 32-bit ``range`` renormalized a byte at a time, and a cached
output byte plus a run of pending ``0xFF`` bytes that a carry may still
ripple through.  Frequencies use 16-bit precision.
"""

from __future__ import annotations

import struct
from bisect import bisect_right
from dataclasses import dataclass

from .entropy import PRECISION, TOTAL, CdfTable
from .errors import CorruptStreamError, NotIW3DError, UnsupportedVersionError, WrongModelError

_TOP = 1 << 24
_MASK32 = 0xFFFFFFFF

MAGIC = b"IW3D"
VERSION = 1
FLAG_LOSSLESS = 0x01
N_CLASSES = 15
_HEADER = struct.Struct("<4sBB3I3IBd8s" + "ii" * N_CLASSES + "Q")
HEADER_SIZE = _HEADER.size


class RangeEncoder:
    def __init__(self):
        self.low = 0
        self.range = _MASK32
        self._cache = 0
        self._cache_size = 1
        self._out = bytearray()
        self._done = False

    def _shift_low(self):
        low = self.low
        if low < 0xFF000000 or low > _MASK32:
            carry = low >> 32
            temp = self._cache
            out = self._out
            while True:
                out.append((temp + carry) & 0xFF)
                temp = 0xFF
                self._cache_size -= 1
                if not self._cache_size:
                    break
            self._cache = (low >> 24) & 0xFF
        self._cache_size += 1
        self.low = (low << 8) & _MASK32

    def encode(self, cum: int, freq: int):
        """Code the interval ``[cum, cum + freq)`` out of ``2**16``."""
        r = self.range >> PRECISION
        self.low += r * cum
        self.range = r * freq
        while self.range < _TOP:
            self.range <<= 8
            self._shift_low()

    def encode_raw32(self, value: int):
        if not -(1 << 31) <= value < (1 << 31):
            raise OverflowError(f"symbol {value} does not fit in 32 bits")
        u = value & _MASK32
        self.encode(u >> 16, 1)
        self.encode(u & 0xFFFF, 1)

    def finish(self) -> bytes:
        if not self._done:
            for _ in range(5):
                self._shift_low()
            self._done = True
        return bytes(self._out)


class RangeDecoder:
    def __init__(self, data: bytes):
        self._data = data
        self._pos = 0
        self.range = _MASK32
        self.code = 0
        for _ in range(5):
            self.code = (self.code << 8) | self._next()

    def _next(self) -> int:
        if self._pos >= len(self._data):
            raise CorruptStreamError("range decoder ran past the end of the payload")
        b = self._data[self._pos]
        self._pos += 1
        return b

    @property
    def consumed(self) -> int:
        return self._pos

    def decode_target(self) -> tuple[int, int]:
        r = self.range >> PRECISION
        v = self.code // r
        if v >= TOTAL:
            raise CorruptStreamError("decoder state outside the coded interval")
        return v, r

    def consume(self, r: int, cum: int, freq: int):
        self.code -= r * cum
        self.range = r * freq
        while self.range < _TOP:
            self.code = ((self.code << 8) | self._next()) & _MASK32
            self.range <<= 8

    def decode_raw32(self) -> int:
        v, r = self.decode_target()
        self.consume(r, v, 1)
        hi = v
        v, r = self.decode_target()
        self.consume(r, v, 1)
        u = (hi << 16) | v
        return u - (1 << 32) if u >= (1 << 31) else u


def encode_symbols(enc: RangeEncoder, table: CdfTable, symbols) -> None:
    cum = table.cumulative
    freqs = table.freqs
    s_min = table.s_min
    n = len(freqs) - 1
    esc_cum, esc_freq = cum[n], freqs[n]
    encode = enc.encode
    for s in symbols:
        i = int(s) - s_min
        if 0 <= i < n:
            encode(cum[i], freqs[i])
        else:
            encode(esc_cum, esc_freq)
            enc.encode_raw32(int(s))


def decode_symbols(dec: RangeDecoder, table: CdfTable, count: int) -> list[int]:
    cum = table.cumulative
    freqs = table.freqs
    s_min = table.s_min
    n = len(freqs) - 1
    out = []
    append = out.append
    for _ in range(count):
        v, r = dec.decode_target()
        i = bisect_right(cum, v) - 1
        dec.consume(r, cum[i], freqs[i])
        append(dec.decode_raw32() if i == n else s_min + i)
    return out


@dataclass
class BitstreamHeader:
    lossless: bool
    original_shape: tuple[int, int, int]
    padded_shape: tuple[int, int, int]
    levels: int
    qs: float
    model_hash: bytes
    ranges: list[tuple[int, int]]
    payload_length: int
    version: int = VERSION

    def validate(self):
        if len(self.model_hash) != 8:
            raise ValueError("model hash prefix must be 8 bytes")
        if len(self.ranges) != N_CLASSES:
            raise ValueError(f"need {N_CLASSES} symbol ranges, got {len(self.ranges)}")
        if self.levels != 2:
            raise CorruptStreamError(f"unsupported decomposition depth {self.levels}")
        m = 1 << self.levels
        if any(p % m for p in self.padded_shape):
            raise CorruptStreamError(
                f"padded dims {self.padded_shape} not divisible by {m}"
            )
        if any(o < 1 or o > p for o, p in zip(self.original_shape, self.padded_shape)):
            raise CorruptStreamError(
                f"original dims {self.original_shape} exceed padded dims {self.padded_shape}"
            )
        if not self.lossless and not self.qs > 0:
            raise CorruptStreamError("lossy stream with non-positive quantization step")
        for lo, hi in self.ranges:
            if lo > hi:
                raise CorruptStreamError(f"bad symbol range [{lo}, {hi}]")


def write_header(h: BitstreamHeader) -> bytes:
    h.validate()
    flat = [v for pair in h.ranges for v in pair]
    return _HEADER.pack(
        MAGIC,
        h.version,
        FLAG_LOSSLESS if h.lossless else 0,
        *h.original_shape,
        *h.padded_shape,
        h.levels,
        0.0 if h.lossless else float(h.qs),
        h.model_hash,
        *flat,
        h.payload_length,
    )


def read_header(data: bytes, model_hash: bytes | None = None) -> BitstreamHeader:
    """Parse and validate a header; ``model_hash`` (if given) must match."""
    if len(data) < 4 or data[:4] != MAGIC:
        raise NotIW3DError("not an IW3D file")
    if len(data) < 5 or data[4] != VERSION:
        raise UnsupportedVersionError(
            f"unsupported version {data[4] if len(data) > 4 else '?'}"
        )
    if len(data) < HEADER_SIZE:
        raise CorruptStreamError(f"truncated header ({len(data)} bytes)")
    f = _HEADER.unpack_from(data)
    ranges = [(f[12 + 2 * i], f[13 + 2 * i]) for i in range(N_CLASSES)]
    h = BitstreamHeader(
        lossless=bool(f[2] & FLAG_LOSSLESS),
        original_shape=tuple(f[3:6]),
        padded_shape=tuple(f[6:9]),
        levels=f[9],
        qs=f[10],
        model_hash=f[11],
        ranges=ranges,
        payload_length=f[-1],
        version=f[1],
    )
    h.validate()
    if model_hash is not None and model_hash[:8] != h.model_hash:
        raise WrongModelError(h.model_hash, model_hash[:8])
    return h
