"""Encode/decode pipelines for 8-bit volumes.

Lossy: normalize to [0, 1], pad, float lifting transform, uniform scalar
quantization, range coding.  The decoder inverts, crops, applies the
residual post-filter and rescales to 8 bits.

Lossless: pad, integer lifting on the raw voxel values, range coding.  No
quantization or post-filter.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .coder import (
    HEADER_SIZE,
    BitstreamHeader,
    RangeDecoder,
    RangeEncoder,
    decode_symbols,
    encode_symbols,
    read_header,
    write_header,
)
from .errors import CorruptStreamError, DomainError
from .lifting import round_half_away
from .model import LEVELS, Model
from .volume import SubbandPyramid, band_layout, crop, pad_to_multiple

MAX_TABLE_WIDTH = 1 << 12


@dataclass(frozen=True)
class CodecConfig:
    """``qs`` overrides the model's trained quantization step (lossy only)."""

    mode: str = "lossy"
    levels: int = LEVELS
    qs: float | None = None

    def __post_init__(self):
        if self.mode not in ("lossy", "lossless"):
            raise ValueError(f"mode must be 'lossy' or 'lossless', got {self.mode!r}")
        if self.levels != LEVELS:
            raise ValueError(f"the bitstream supports {LEVELS} levels only")
        if self.qs is not None and not self.qs > 0:
            raise ValueError("quantization step must be positive")

    @property
    def lossless(self) -> bool:
        return self.mode == "lossless"


def quantize(band, qs: float) -> np.ndarray:
    if not qs > 0:
        raise ValueError("quantization step must be positive")
    return round_half_away(np.asarray(band, dtype=np.float64) / qs).astype(np.int64)


def dequantize(q, qs: float) -> np.ndarray:
    if not qs > 0:
        raise ValueError("quantization step must be positive")
    return np.asarray(q, dtype=np.float64) * qs


def _table_range(symbols: np.ndarray) -> tuple[int, int]:
    lo, hi = int(symbols.min()), int(symbols.max())
    if hi - lo + 1 <= MAX_TABLE_WIDTH:
        return lo, hi
    # too wide for one table: keep a window around the median, escape the rest
    center = int(np.median(symbols))
    lo = max(lo, center - MAX_TABLE_WIDTH // 2)
    return lo, min(hi, lo + MAX_TABLE_WIDTH - 1)


def analyze(v, model: Model, cfg: CodecConfig = CodecConfig()):
    """Forward half of the encoder: integer symbol bands and the step used."""
    v = np.asarray(v)
    if v.dtype != np.uint8 or v.ndim != 3:
        raise DomainError("encoder input must be a 3-D uint8 volume")
    x = pad_to_multiple(v, 1 << cfg.levels).astype(np.float64)
    if cfg.lossless:
        pyr = model.transform(lossless=True).forward(x, original_shape=v.shape)
        qs = 0.0
        bands = [b.astype(np.int64) for b in pyr.arrays]
    else:
        qs = cfg.qs if cfg.qs is not None else model.qs
        pyr = model.transform(lossless=False).forward(x / 255.0, original_shape=v.shape)
        bands = [quantize(b, qs) for b in pyr.arrays]
    return pyr.with_arrays(bands), qs


def encode(v, model: Model, cfg: CodecConfig = CodecConfig()) -> bytes:
    qpyr, qs = analyze(v, model, cfg)
    ranges = []
    enc = RangeEncoder()
    for c, band in enumerate(qpyr.arrays):
        flat = band.ravel()
        if np.abs(flat).max(initial=0) >= 1 << 31:
            raise OverflowError(f"band {c} has symbols beyond 32 bits")
        lo, hi = _table_range(flat)
        ranges.append((lo, hi))
        table = model.entropy.build_cdf_table(c, lo, hi)
        encode_symbols(enc, table, flat.tolist())
    payload = enc.finish()
    header = BitstreamHeader(
        lossless=cfg.lossless,
        original_shape=tuple(int(s) for s in qpyr.original_shape),
        padded_shape=tuple(int(s) for s in qpyr.padded_shape),
        levels=cfg.levels,
        qs=qs,
        model_hash=model.hash[:8],
        ranges=ranges,
        payload_length=len(payload),
    )
    return write_header(header) + payload


def decode_symbols_pyramid(data: bytes, model: Model) -> tuple[BitstreamHeader, SubbandPyramid]:
    header = read_header(data, model.hash)
    payload = data[HEADER_SIZE:]
    if len(payload) != header.payload_length:
        raise CorruptStreamError(
            f"payload is {len(payload)} bytes, header says {header.payload_length}"
        )
    dec = RangeDecoder(payload)
    bands = []
    for c, (label, level) in enumerate(band_layout(header.levels)):
        shape = tuple(s >> level for s in header.padded_shape)
        table = model.entropy.build_cdf_table(c, *header.ranges[c])
        syms = decode_symbols(dec, table, int(np.prod(shape)))
        bands.append((label, level, np.asarray(syms, dtype=np.int64).reshape(shape)))
    if dec.consumed != len(payload):
        raise CorruptStreamError("payload has trailing bytes")
    pyr = SubbandPyramid(bands, header.original_shape, header.padded_shape, header.levels)
    return header, pyr


def decode(data: bytes, model: Model) -> np.ndarray:
    header, qpyr = decode_symbols_pyramid(data, model)
    if header.lossless:
        pyr = qpyr.with_arrays([b.astype(np.float64) for b in qpyr.arrays])
        x = model.transform(lossless=True).inverse(pyr)
        x = crop(x, header.original_shape)
        if x.min() < 0 or x.max() > 255:
            raise CorruptStreamError("lossless reconstruction outside the 8-bit range")
        return x.astype(np.uint8)
    pyr = qpyr.with_arrays([dequantize(b, header.qs) for b in qpyr.arrays])
    x = model.transform(lossless=False).inverse(pyr)
    x = crop(x, header.original_shape)
    x = model.post(x)
    return to_u8(x)


def to_u8(x) -> np.ndarray:
    """Clamp a normalized volume to [0, 1] and round to 8 bits."""
    return np.round(np.clip(x, 0.0, 1.0) * 255.0).astype(np.uint8)


def bits_per_voxel(data: bytes, shape) -> float:
    return 8.0 * len(data) / float(np.prod(shape))
