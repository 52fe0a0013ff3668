"""Factorized entropy model and quantized CDF tables.

Each subband class has its own learned cumulative distribution

    c(x) = sigmoid(f_K(... f_1(x)))

where every ``f_k`` is an affine map with softplus-positive weights, followed
(except for the last) by ``z + tanh(gate) * tanh(z)``.  Positive weights and
gates bounded by one keep every ``f_k`` strictly increasing, so ``c`` is a
valid CDF for any parameter values.  The probability of an integer symbol is
the mass of the unit interval around it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .errors import StateError

LIKELIHOOD_FLOOR = 2.0**-16
PRECISION = 16
TOTAL = 1 << PRECISION
ESCAPE_CAP = 1.0 / 64

FILTERS = (1, 3, 3, 3, 1)


def softplus(x):
    return np.logaddexp(0.0, x)


def inv_softplus(y):
    return np.log(np.expm1(y))


class FactorizedCDF:
    """Per-class monotone CDFs whose parameters live in a ParamStore."""

    def __init__(self, store, prefix="entropy", n_classes=15, filters=FILTERS):
        self.store = store
        self.prefix = prefix
        self.n_classes = n_classes
        self.filters = tuple(filters)
        self.n_maps = len(filters) - 1
        self._cache = None

    @classmethod
    def param_specs(cls, prefix="entropy", n_classes=15, filters=FILTERS):
        specs = []
        for c in range(n_classes):
            for i in range(len(filters) - 1):
                specs.append((f"{prefix}.c{c}.matrix{i}", (filters[i + 1], filters[i])))
                specs.append((f"{prefix}.c{c}.bias{i}", (filters[i + 1],)))
                if i < len(filters) - 2:
                    specs.append((f"{prefix}.c{c}.factor{i}", (filters[i + 1],)))
        return specs

    def init(self, init_scale=10.0):
        """Symmetric start: c(x) = sigmoid(x / init_scale)."""
        scale = init_scale ** (1.0 / self.n_maps)
        for c in range(self.n_classes):
            for i in range(self.n_maps):
                m = self._p(c, "matrix", i)
                m[...] = inv_softplus(1.0 / scale / self.filters[i + 1])
                self._p(c, "bias", i)[...] = 0.0
                if i < self.n_maps - 1:
                    self._p(c, "factor", i)[...] = 0.0

    def _p(self, c, kind, i):
        return self.store.view(f"{self.prefix}.c{c}.{kind}{i}")

    def _g(self, c, kind, i):
        return self.store.grad(f"{self.prefix}.c{c}.{kind}{i}")

    def _check_class(self, c):
        if not 0 <= c < self.n_classes:
            raise ValueError(f"class {c} outside 0..{self.n_classes - 1}")

    # -- cumulative logits ---------------------------------------------------

    def logits(self, c, x, tape=None):
        self._check_class(c)
        z = np.asarray(x, dtype=np.float64).reshape(1, -1)
        for i in range(self.n_maps):
            z_in = z
            a = softplus(self._p(c, "matrix", i)) @ z + self._p(c, "bias", i)[:, None]
            if i < self.n_maps - 1:
                t = np.tanh(a)
                z = a + np.tanh(self._p(c, "factor", i))[:, None] * t
            else:
                t = None
                z = a
            if tape is not None:
                tape.append((z_in, t))
        return z[0]

    def _logits_backward(self, c, tape, g):
        g = g.reshape(1, -1)
        for i in range(self.n_maps - 1, -1, -1):
            z_in, t = tape[i]
            if t is not None:
                f = np.tanh(self._p(c, "factor", i))
                self._g(c, "factor", i)[...] += (g * t).sum(axis=1) * (1.0 - f * f)
                g = g * (1.0 + f[:, None] * (1.0 - t * t))
            raw = self._p(c, "matrix", i)
            self._g(c, "bias", i)[...] += g.sum(axis=1)
            self._g(c, "matrix", i)[...] += (g @ z_in.T) * expit(raw)
            g = softplus(raw).T @ g
        return g[0]

    def cdf(self, c, x):
        return expit(self.logits(c, x))

    def _mass(self, c, v, tape=None):
        v = np.asarray(v, dtype=np.float64).ravel()
        n = v.size
        lg = self.logits(c, np.concatenate([v + 0.5, v - 0.5]), tape)
        upper, lower = lg[:n], lg[n:]
        # evaluate on the side of the sigmoid where the difference is well conditioned
        sgn = np.where(upper + lower > 0, -1.0, 1.0)
        mass = sgn * (expit(sgn * upper) - expit(sgn * lower))
        return mass, upper, lower

    def pmf(self, c, q):
        """Unfloored mass ``c(q + 1/2) - c(q - 1/2)``."""
        q = np.asarray(q, dtype=np.float64)
        return self._mass(c, q)[0].reshape(q.shape)

    def likelihood(self, c, v):
        """Mass floored at 2**-16 (what the rate estimate uses)."""
        v = np.asarray(v, dtype=np.float64)
        return np.maximum(self._mass(c, v)[0], LIKELIHOOD_FLOOR).reshape(v.shape)

    # -- rate ------------------------------------------------------------------

    def rate_forward(self, bands, record=False) -> float:
        """Total bits for ``bands[c]`` coded with class ``c``."""
        if len(bands) != self.n_classes:
            raise ValueError(f"expected {self.n_classes} bands, got {len(bands)}")
        total = 0.0
        caches = []
        for c, b in enumerate(bands):
            tape = [] if record else None
            mass, upper, lower = self._mass(c, b, tape)
            lik = np.maximum(mass, LIKELIHOOD_FLOOR)
            total += float(-np.log2(lik).sum())
            if record:
                caches.append((tape, mass, upper, lower, np.shape(b)))
        self._cache = caches if record else None
        return total

    def rate_backward(self, grad_scale=1.0):
        """Gradients of ``grad_scale * bits`` w.r.t. each band's values.

        Entropy-model parameter gradients are accumulated into the store.
        """
        if self._cache is None:
            raise StateError("rate_backward called without a recorded rate_forward")
        grads = []
        for c, (tape, mass, upper, lower, shape) in enumerate(self._cache):
            if grad_scale == 0.0:
                grads.append(np.zeros(shape))
                continue
            live = mass > LIKELIHOOD_FLOOR
            dmass = np.where(live, -grad_scale / (np.log(2.0) * np.where(live, mass, 1.0)), 0.0)
            du = dmass * expit(upper) * expit(-upper)
            dl = -dmass * expit(lower) * expit(-lower)
            gz = self._logits_backward(c, tape, np.concatenate([du, dl]))
            n = du.size
            grads.append((gz[:n] + gz[n:]).reshape(shape))
        return grads

    # -- coder tables ------------------------------------------------------------

    def build_cdf_table(self, c, s_min: int, s_max: int) -> CdfTable:
        s_min, s_max = int(s_min), int(s_max)
        if s_min > s_max:
            raise ValueError(f"empty symbol range [{s_min}, {s_max}]")
        n = s_max - s_min + 1
        if n + 1 > TOTAL:
            raise OverflowError(
                f"symbol range [{s_min}, {s_max}] wider than the coder's {TOTAL}-entry table"
            )
        probs = self.pmf(c, np.arange(s_min, s_max + 1, dtype=np.float64))
        outside = float(self.cdf(c, s_min - 0.5)[0] + (1.0 - self.cdf(c, s_max + 0.5)[0]))
        return CdfTable.from_probabilities(s_min, probs, outside)


@dataclass(frozen=True)
class CdfTable:
    """Integer frequencies for ``[s_min, s_max]`` plus a trailing escape symbol.

    Frequencies sum to exactly ``2**16`` and every entry is at least one.
    """

    s_min: int
    s_max: int
    freqs: tuple[int, ...]

    def __post_init__(self):
        if len(self.freqs) != self.s_max - self.s_min + 2:
            raise ValueError("frequency table length does not match the symbol range")
        if sum(self.freqs) != TOTAL or min(self.freqs) < 1:
            raise ValueError("frequencies must be >= 1 and sum to 2**16")

    @property
    def escape_index(self) -> int:
        return len(self.freqs) - 1

    @property
    def cumulative(self) -> list[int]:
        return [0] + np.cumsum(self.freqs).tolist()

    def probabilities(self) -> np.ndarray:
        return np.asarray(self.freqs, dtype=np.float64) / TOTAL

    def to_bytes(self) -> bytes:
        head = np.array([self.s_min, self.s_max], dtype="<i4").tobytes()
        return head + np.asarray(self.freqs, dtype="<u4").tobytes()

    @classmethod
    def from_probabilities(cls, s_min, probs, outside_mass) -> CdfTable:
        """Quantize in-range probabilities plus an escape mass to 16 bits.

        In-range mass is renormalized over the range; the escape keeps the
        model's out-of-range mass, capped at 1/64 since tables are built over
        the observed range and escapes are rare.
        """
        probs = np.maximum(np.asarray(probs, dtype=np.float64), 0.0)
        n = probs.size
        inside = probs.sum()
        if not inside > 0.0:
            probs = np.ones(n)
            inside = float(n)
        esc = min(max(float(outside_mass), 0.0), ESCAPE_CAP)
        p = np.append(probs / inside * (1.0 - esc), esc)
        spare = TOTAL - (n + 1)
        share = p * spare
        extra = np.floor(share).astype(np.int64)
        left = spare - int(extra.sum())
        if left > 0:
            # largest remainders first; ties broken by index
            order = np.lexsort((np.arange(n + 1), -(share - extra)))
            extra[order[:left]] += 1
        freqs = extra + 1
        return cls(int(s_min), int(s_min) + n - 1, tuple(freqs.tolist()))


def cdf_eval(model: FactorizedCDF, c: int, x):
    return model.cdf(c, x)


def pmf(model: FactorizedCDF, c: int, q):
    return model.pmf(c, q)


def rate_bits(model: FactorizedCDF, pyramid_q) -> float:
    """Bits to code an integer-valued pyramid (or band list) under ``model``."""
    arrays = pyramid_q.arrays if hasattr(pyramid_q, "arrays") else list(pyramid_q)
    for a in arrays:
        a = np.asarray(a)
        if a.dtype.kind == "f" and not np.array_equal(a, np.round(a)):
            raise ValueError("rate_bits expects integer-valued bands")
    return model.rate_forward(arrays)


def rate_backward(model: FactorizedCDF, grad_scale=1.0):
    return model.rate_backward(grad_scale)


def build_cdf_table(model: FactorizedCDF, c: int, observed_range) -> CdfTable:
    s_min, s_max = observed_range
    return model.build_cdf_table(c, s_min, s_max)
