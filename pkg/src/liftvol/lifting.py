"""Trainable lifting wavelet: 1-D lifting along one axis and the 3-D pyramid.

One lifting pass along an axis splits the signal into even/odd samples and
runs ``n_steps`` rounds of::

    h <- h - P(l)
    l <- l + U(h)

starting from ``(l, h) = (even, odd)``.  The inverse replays the rounds in
reverse order with the signs flipped, so reconstruction is exact for any
``P`` and ``U``.  In integer mode every network output is rounded half away
from zero, which keeps integer inputs on the integer lattice and makes the
round trip bit-exact.

Arrays are ``(D, H, W)`` or batched ``(B, D, H, W)``.  The axial direction is
``D``, vertical ``H`` and horizontal ``W``.  A 3-D level lifts axially, then
horizontally, then vertically; each new letter is prepended to the band
label, giving the band order ``LLL, HLL, LHL, HHL, LLH, HLH, LHH, HHH``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import StateError
from .volume import BAND_LABELS, SubbandPyramid

AXIAL, VERTICAL, HORIZONTAL = 0, 1, 2


def round_half_away(x):
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


@dataclass(frozen=True)
class LiftConfig:
    """``scale`` maps the volume's units onto the networks' input range.

    Networks see ``v / scale`` and their output is multiplied back by
    ``scale``; lossless coding of 8-bit data uses ``scale=255`` so one set of
    parameters serves both the normalized and the raw-integer domain.
    """

    n_steps: int = 2
    levels: int = 2
    mode: str = "float"
    scale: float = 1.0

    def __post_init__(self):
        if self.mode not in ("float", "integer"):
            raise ValueError(f"mode must be 'float' or 'integer', got {self.mode!r}")
        if not 1 <= self.levels <= 4:
            raise ValueError("levels must be in 1..4")
        if self.n_steps < 1:
            raise ValueError("n_steps must be >= 1")


def _ax(v: np.ndarray, axis: int) -> int:
    # spatial axis index -> array axis, allowing a leading batch axis
    return v.ndim - 3 + axis


def split_axis(v, axis: int):
    v = np.asarray(v)
    a = _ax(v, axis)
    if v.shape[a] % 2:
        raise ValueError(f"cannot split odd length {v.shape[a]} along axis {axis}")
    even = [slice(None)] * v.ndim
    odd = [slice(None)] * v.ndim
    even[a] = slice(0, None, 2)
    odd[a] = slice(1, None, 2)
    return v[tuple(even)], v[tuple(odd)]


def merge_axis(even, odd, axis: int):
    even = np.asarray(even)
    odd = np.asarray(odd)
    if even.shape != odd.shape:
        raise ValueError(f"merge shape mismatch: {even.shape} vs {odd.shape}")
    a = _ax(even, axis)
    shape = list(even.shape)
    shape[a] *= 2
    out = np.empty(shape, dtype=np.result_type(even, odd))
    idx = [slice(None)] * even.ndim
    idx[a] = slice(0, None, 2)
    out[tuple(idx)] = even
    idx[a] = slice(1, None, 2)
    out[tuple(idx)] = odd
    return out


class _Op:
    """Applies one network (or plain callable) with the config's scaling/rounding."""

    def __init__(self, fn, cfg: LiftConfig):
        self.fn = fn
        self.cfg = cfg

    def __call__(self, v, tape=None):
        s = self.cfg.scale
        x = v / s if s != 1.0 else v
        if tape is not None:
            out, cache = self.fn.apply(x)
            tape.append(cache)
        else:
            out = self.fn(x)
        if s != 1.0:
            out = out * s
        if self.cfg.mode == "integer":
            out = round_half_away(out)
        return out

    def backprop(self, cache, g):
        s = self.cfg.scale
        if s == 1.0:
            return self.fn.backprop(cache, g)
        return self.fn.backprop(cache, g * s) / s


def _lift_rounds(l, h, P, U, n_steps, tape=None):
    for _ in range(n_steps):
        h = h - P(l, tape)
        l = l + U(h, tape)
    return l, h


def _unlift_rounds(l, h, P, U, n_steps, tape=None):
    for _ in range(n_steps):
        l = l - U(h, tape)
        h = h + P(l, tape)
    return l, h


def lift_axis_forward(v, axis, P, U, mode="float", n_steps=2, scale=1.0):
    """Returns the low and high bands, each half-length along ``axis``."""
    cfg = LiftConfig(n_steps=n_steps, mode=mode, scale=scale)
    even, odd = split_axis(np.asarray(v, dtype=np.float64), axis)
    return _lift_rounds(even, odd, _Op(P, cfg), _Op(U, cfg), n_steps)


def lift_axis_inverse(l, h, axis, P, U, mode="float", n_steps=2, scale=1.0):
    l = np.asarray(l, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64)
    if l.shape != h.shape:
        raise ValueError(f"band shape mismatch: {l.shape} vs {h.shape}")
    cfg = LiftConfig(n_steps=n_steps, mode=mode, scale=scale)
    even, odd = _unlift_rounds(l, h, _Op(P, cfg), _Op(U, cfg), n_steps)
    return merge_axis(even, odd, axis)


class LiftingTransform:
    """Multi-level 3-D lifting transform sharing one ``(P, U)`` pair everywhere.

    ``forward``/``inverse`` can record a tape; ``backward_forward`` and
    ``backward_inverse`` then propagate gradients to the input and accumulate
    parameter gradients into the networks' stores (float mode only).
    """

    def __init__(self, P, U, cfg: LiftConfig | None = None):
        self.cfg = cfg or LiftConfig()
        self.P = _Op(P, self.cfg)
        self.U = _Op(U, self.cfg)
        self._fwd_tape = None
        self._inv_tape = None

    # -- one stacked axis pass ----------------------------------------------

    def _lift(self, arrays, axis, tape):
        x = np.concatenate(arrays, axis=0)
        even, odd = split_axis(x, axis)
        rec = [] if tape is not None else None
        l, h = _lift_rounds(even, odd, self.P, self.U, self.cfg.n_steps, rec)
        if tape is not None:
            tape.append(rec)
        k = len(arrays)
        return np.split(l, k, axis=0), np.split(h, k, axis=0)

    def _lift_back(self, gls, ghs, axis, rec):
        gl = np.concatenate(gls, axis=0)
        gh = np.concatenate(ghs, axis=0)
        n = self.cfg.n_steps
        for s in range(n - 1, -1, -1):
            gh = gh + self.U.backprop(rec[2 * s + 1], gl)
            gl = gl + self.P.backprop(rec[2 * s], -gh)
        gx = merge_axis(gl, gh, axis)
        return np.split(gx, len(gls), axis=0)

    def _unlift(self, ls, hs, axis, tape):
        l = np.concatenate(ls, axis=0)
        h = np.concatenate(hs, axis=0)
        rec = [] if tape is not None else None
        even, odd = _unlift_rounds(l, h, self.P, self.U, self.cfg.n_steps, rec)
        if tape is not None:
            tape.append(rec)
        return np.split(merge_axis(even, odd, axis), len(ls), axis=0)

    def _unlift_back(self, gxs, axis, rec):
        gx = np.concatenate(gxs, axis=0)
        gl, gh = split_axis(gx, axis)
        for s in range(self.cfg.n_steps - 1, -1, -1):
            gl = gl + self.P.backprop(rec[2 * s + 1], gh)
            gh = gh + self.U.backprop(rec[2 * s], -gl)
        k = len(gxs)
        return np.split(gl, k, axis=0), np.split(gh, k, axis=0)

    # -- one 3-D level --------------------------------------------------------

    def _level_forward(self, x, tape):
        (L,), (H,) = self._lift([x], AXIAL, tape)
        lo, hi = self._lift([L, H], HORIZONTAL, tape)
        # LL, HL, LH, HH
        quads = [lo[0], hi[0], lo[1], hi[1]]
        lo, hi = self._lift(quads, VERTICAL, tape)
        bands = []
        for q in range(4):
            bands += [lo[q], hi[q]]
        return bands

    def _level_backward(self, gbands, tape):
        glo = gbands[0::2]
        ghi = gbands[1::2]
        gq = self._lift_back(glo, ghi, VERTICAL, tape[2])
        gL, gH = self._lift_back([gq[0], gq[2]], [gq[1], gq[3]], HORIZONTAL, tape[1])
        (gx,) = self._lift_back([gL], [gH], AXIAL, tape[0])
        return gx

    def _level_inverse(self, bands, tape):
        quads = self._unlift(bands[0::2], bands[1::2], VERTICAL, tape)
        L, H = self._unlift([quads[0], quads[2]], [quads[1], quads[3]], HORIZONTAL, tape)
        (x,) = self._unlift([L], [H], AXIAL, tape)
        return x

    def _level_inverse_backward(self, gx, tape):
        (gL,), (gH,) = self._unlift_back([gx], AXIAL, tape[2])
        glo, ghi = self._unlift_back([gL, gH], HORIZONTAL, tape[1])
        gquads = [glo[0], ghi[0], glo[1], ghi[1]]
        glo, ghi = self._unlift_back(gquads, VERTICAL, tape[0])
        gb = []
        for q in range(4):
            gb += [glo[q], ghi[q]]
        return gb

    # -- pyramid ---------------------------------------------------------------

    def forward(self, v, record=False, original_shape=None) -> SubbandPyramid:
        v = np.asarray(v, dtype=np.float64)
        single = v.ndim == 3
        x = v[None] if single else v
        spatial = x.shape[1:]
        m = 2 ** self.cfg.levels
        if any(s % m for s in spatial):
            raise ValueError(f"shape {spatial} not divisible by {m} on every axis")
        if self.cfg.mode == "integer" and not np.array_equal(x, np.round(x)):
            raise ValueError("integer mode requires an integer-valued volume")
        tapes = [] if record else None
        details = []
        for lev in range(1, self.cfg.levels + 1):
            tape = [] if record else None
            bands = self._level_forward(x, tape)
            if record:
                tapes.append(tape)
            details.append([(lab, lev, b) for lab, b in zip(BAND_LABELS[1:], bands[1:])])
            x = bands[0]
        ordered = [("LLL", self.cfg.levels, x)]
        for lev_bands in reversed(details):
            ordered += lev_bands
        if single:
            ordered = [(lab, lev, b[0]) for lab, lev, b in ordered]
        self._fwd_tape = (tapes, single) if record else None
        orig = tuple(original_shape) if original_shape is not None else tuple(spatial)
        return SubbandPyramid(ordered, orig, tuple(spatial), self.cfg.levels)

    def _grouped(self, arrays, single):
        """Split pyramid-ordered arrays into per-level 8-band lists (deepest first)."""
        arrays = [a[None] if single else a for a in arrays]
        levels = self.cfg.levels
        groups = {levels: arrays[:8]}
        pos = 8
        for lev in range(levels - 1, 0, -1):
            groups[lev] = [None] + arrays[pos : pos + 7]
            pos += 7
        return groups

    def inverse(self, p: SubbandPyramid, record=False):
        if p.levels != self.cfg.levels:
            raise ValueError(f"pyramid has {p.levels} levels, transform {self.cfg.levels}")
        arrays = [np.asarray(a, dtype=np.float64) for a in p.arrays]
        single = arrays[0].ndim == 3
        for (lab, lev, _), a in zip(p.bands, arrays):
            expect = tuple(s >> lev for s in p.padded_shape)
            if a.shape[-3:] != expect:
                raise ValueError(f"band {lab}@{lev} shape {a.shape} inconsistent")
        groups = self._grouped(arrays, single)
        tapes = [] if record else None
        x = None
        for lev in range(self.cfg.levels, 0, -1):
            bands = list(groups[lev])
            if x is not None:
                bands[0] = x
            tape = [] if record else None
            x = self._level_inverse(bands, tape)
            if record:
                tapes.append(tape)
        self._inv_tape = (tapes, single) if record else None
        return x[0] if single else x

    def backward_forward(self, grad_arrays):
        """Gradient of a scalar w.r.t. the forward input, given band gradients."""
        if self._fwd_tape is None:
            raise StateError("no recorded forward transform")
        tapes, single = self._fwd_tape
        groups = self._grouped([np.asarray(g, dtype=np.float64) for g in grad_arrays], single)
        gx = None
        for lev in range(self.cfg.levels, 0, -1):
            gb = list(groups[lev])
            if gx is not None:
                gb[0] = gx
            gx = self._level_backward(gb, tapes[lev - 1])
        return gx[0] if single else gx

    def backward_inverse(self, grad_volume):
        """Band gradients (pyramid order) given the gradient of the inverse output."""
        if self._inv_tape is None:
            raise StateError("no recorded inverse transform")
        tapes, single = self._inv_tape
        gx = np.asarray(grad_volume, dtype=np.float64)
        gx = gx[None] if single else gx
        per_level = {}
        for n, lev in enumerate(range(1, self.cfg.levels + 1)):
            tape = tapes[self.cfg.levels - 1 - n]
            gb = self._level_inverse_backward(gx, tape)
            per_level[lev] = gb[1:]
            gx = gb[0]
        out = [gx] + per_level[self.cfg.levels]
        for lev in range(self.cfg.levels - 1, 0, -1):
            out += per_level[lev]
        return [g[0] for g in out] if single else out


def dwt3d_forward(v, cfg: LiftConfig, P, U) -> SubbandPyramid:
    return LiftingTransform(P, U, cfg).forward(v)


def dwt3d_inverse(p: SubbandPyramid, cfg: LiftConfig, P, U):
    return LiftingTransform(P, U, cfg).inverse(p)
