"""Volume containers, padding and raw file I/O.

Volumes are plain numpy arrays indexed ``(D, H, W)`` (axial, vertical,
horizontal) with ``W`` fastest in memory.  The dtype carries the value
domain: ``uint8`` arrays are raw 8-bit voxels, ``float64`` arrays are the
working domain (normalized intensities or wavelet coefficients).
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError

V3D_MAGIC = b"V3D1"

BAND_LABELS = ("LLL", "HLL", "LHL", "HHL", "LLH", "HLH", "LHH", "HHH")
DETAIL_LABELS = BAND_LABELS[1:]


def _check_shape(shape) -> tuple[int, int, int]:
    shape = tuple(int(s) for s in shape)
    if len(shape) != 3 or min(shape) < 1:
        raise ValueError(f"volume shape must be three positive ints, got {shape}")
    return shape


def load_raw(path, shape) -> np.ndarray:
    """Read a headerless uint8 volume of the given ``(D, H, W)`` shape."""
    shape = _check_shape(shape)
    expected = shape[0] * shape[1] * shape[2]
    actual = os.path.getsize(path)
    if actual != expected:
        raise OSError(
            f"{path}: expected {expected} bytes for shape {shape}, found {actual}"
        )
    return np.fromfile(path, dtype=np.uint8).reshape(shape)


def _require_u8(v) -> np.ndarray:
    v = np.asarray(v)
    if v.dtype != np.uint8:
        raise DomainError(f"expected a uint8 (raw) volume, got dtype {v.dtype}")
    if v.ndim != 3:
        raise DomainError(f"expected a 3-D volume, got {v.ndim} dims")
    return v


def save_raw(v, path) -> None:
    v = _require_u8(v)
    with open(path, "wb") as f:
        f.write(np.ascontiguousarray(v).tobytes())


def load_v3d(path) -> np.ndarray:
    """Read a ``.v3d`` file: magic, three little-endian u32 dims, raw payload."""
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < 16 or blob[:4] != V3D_MAGIC:
        raise OSError(f"{path}: not a V3D1 file")
    shape = struct.unpack("<3I", blob[4:16])
    n = shape[0] * shape[1] * shape[2]
    if len(blob) - 16 != n:
        raise OSError(
            f"{path}: expected {n} payload bytes for shape {shape}, found {len(blob) - 16}"
        )
    return np.frombuffer(blob, dtype=np.uint8, offset=16).reshape(shape).copy()


def save_v3d(v, path) -> None:
    v = _require_u8(v)
    with open(path, "wb") as f:
        f.write(V3D_MAGIC + struct.pack("<3I", *v.shape))
        f.write(np.ascontiguousarray(v).tobytes())


def load_volume(path, shape=None) -> np.ndarray:
    """Load ``.v3d`` files directly; anything else is raw and needs ``shape``."""
    if str(path).endswith(".v3d"):
        return load_v3d(path)
    if shape is None:
        raise ValueError(f"{path}: raw volume needs an explicit shape")
    return load_raw(path, shape)


def save_volume(v, path) -> None:
    if str(path).endswith(".v3d"):
        save_v3d(v, path)
    else:
        save_raw(v, path)


def padded_shape(shape, m: int) -> tuple[int, ...]:
    return tuple(-(-int(s) // m) * m for s in shape)


def pad_to_multiple(v, m: int) -> np.ndarray:
    """Edge-replicate ``v`` so every dimension is a multiple of ``m``."""
    if m < 1:
        raise ValueError("m must be >= 1")
    v = np.asarray(v)
    target = padded_shape(v.shape, m)
    if target == v.shape:
        return v
    return np.pad(v, [(0, t - s) for s, t in zip(v.shape, target)], mode="edge")


def crop(v, shape) -> np.ndarray:
    """Leading sub-block of ``v`` with the given shape."""
    v = np.asarray(v)
    shape = tuple(int(s) for s in shape)
    if len(shape) != v.ndim or any(t > s or t < 1 for s, t in zip(v.shape, shape)):
        raise ValueError(f"cannot crop shape {v.shape} to {shape}")
    return v[tuple(slice(0, t) for t in shape)]


@dataclass
class SubbandPyramid:
    """Output of the multi-level 3-D lifting transform.

    ``bands`` is ordered deepest level first: the coarsest ``LLL`` followed by
    its seven detail bands, then the detail bands of each shallower level in
    the same label order.  Arrays may carry a leading batch axis.
    """

    bands: list[tuple[str, int, np.ndarray]]
    original_shape: tuple[int, int, int]
    padded_shape: tuple[int, int, int]
    levels: int = field(default=2)

    def __post_init__(self):
        if len(self.bands) != 7 * self.levels + 1:
            raise ValueError(
                f"{self.levels}-level pyramid needs {7 * self.levels + 1} bands, "
                f"got {len(self.bands)}"
            )
        for label, level, arr in self.bands:
            expect = tuple(s >> level for s in self.padded_shape)
            if tuple(arr.shape[-3:]) != expect:
                raise ValueError(
                    f"band {label}@{level} has shape {arr.shape[-3:]}, expected {expect}"
                )

    def __len__(self):
        return len(self.bands)

    def __iter__(self):
        return iter(self.bands)

    @property
    def arrays(self) -> list[np.ndarray]:
        return [b[2] for b in self.bands]

    def with_arrays(self, arrays) -> SubbandPyramid:
        bands = [(lab, lev, a) for (lab, lev, _), a in zip(self.bands, arrays)]
        return SubbandPyramid(bands, self.original_shape, self.padded_shape, self.levels)

    def voxel_count(self) -> int:
        return sum(int(np.prod(a.shape[-3:])) for a in self.arrays)


def band_layout(levels: int) -> list[tuple[str, int]]:
    """(label, level) pairs in canonical pyramid order."""
    out = [(lab, levels) for lab in BAND_LABELS]
    for lev in range(levels - 1, 0, -1):
        out += [(lab, lev) for lab in DETAIL_LABELS]
    return out
