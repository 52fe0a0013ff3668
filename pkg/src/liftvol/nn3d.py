"""Small 3-D convolutional networks with hand-written backward passes.

Activations are laid out ``(C, B, D, H, W)``: channels first, then a batch
axis, then space.  Every convolution is 3x3x3 with a one-voxel symmetric
(reflect, edge sample not repeated) border so outputs keep the input shape.

All trainable scalars live in one flat :class:`ParamStore`; layers hold views
into it, so the optimizer and the model file both see a single vector.
"""

from __future__ import annotations

import hashlib
import struct

import numpy as np

from .errors import CorruptModelError, StateError

MODEL_MAGIC = b"IW3M"
MODEL_VERSION = 1
ADAM_MAGIC = b"IW3A"

HIDDEN = 16
KSIZE = 3
_OFFSETS = [(i, j, k) for i in range(3) for j in range(3) for k in range(3)]


def tanh_grad(act):
    """Derivative of tanh expressed through its output."""
    return 1.0 - act * act


class ParamStore:
    """Named views over one flat float64 parameter vector, plus Adam state."""

    def __init__(self, specs):
        self.names: list[str] = []
        self._slices: dict[str, tuple[slice, tuple[int, ...]]] = {}
        offset = 0
        for name, shape in specs:
            shape = tuple(shape)
            n = int(np.prod(shape)) if shape else 1
            if name in self._slices:
                raise ValueError(f"duplicate parameter name {name!r}")
            self._slices[name] = (slice(offset, offset + n), shape)
            self.names.append(name)
            offset += n
        self.values = np.zeros(offset)
        self.grads = np.zeros(offset)
        self.adam_m = np.zeros(offset)
        self.adam_v = np.zeros(offset)
        self.step = 0
        self.grads_populated = False

    @property
    def size(self) -> int:
        return self.values.size

    def __contains__(self, name):
        return name in self._slices

    def view(self, name) -> np.ndarray:
        sl, shape = self._slices[name]
        return self.values[sl].reshape(shape)

    def grad(self, name) -> np.ndarray:
        sl, shape = self._slices[name]
        return self.grads[sl].reshape(shape)

    def slice_of(self, name) -> slice:
        return self._slices[name][0]

    def prefixed(self, prefix: str) -> np.ndarray:
        """Boolean mask over the flat vector selecting names under ``prefix``."""
        mask = np.zeros(self.size, dtype=bool)
        for name in self.names:
            if name.startswith(prefix):
                mask[self._slices[name][0]] = True
        return mask

    def zero_grad(self):
        self.grads[...] = 0.0
        self.grads_populated = False

    def mark_grads(self):
        self.grads_populated = True

    def specs(self):
        return [(n, self._slices[n][1]) for n in self.names]

    # -- serialization -------------------------------------------------------

    def to_bytes(self) -> bytes:
        body = (
            MODEL_MAGIC
            + struct.pack("<BQ", MODEL_VERSION, self.size)
            + self.values.astype("<f8").tobytes()
        )
        return body + hashlib.sha256(body).digest()

    @property
    def hash(self) -> bytes:
        """SHA-256 of the serialized parameters (the model file's trailer)."""
        return self.to_bytes()[-32:]

    def save(self, path):
        with open(path, "wb") as f:
            f.write(self.to_bytes())

    def load_values(self, blob: bytes, source="model") -> None:
        values = parse_model_bytes(blob, source)
        if values.size != self.size:
            raise CorruptModelError(
                f"{source}: holds {values.size} parameters, architecture needs {self.size}"
            )
        self.values[...] = values

    def save_adam(self, path):
        body = (
            ADAM_MAGIC
            + struct.pack("<QQ", self.size, self.step)
            + self.adam_m.astype("<f8").tobytes()
            + self.adam_v.astype("<f8").tobytes()
        )
        with open(path, "wb") as f:
            f.write(body + hashlib.sha256(body).digest())

    def load_adam(self, path):
        with open(path, "rb") as f:
            blob = f.read()
        body, digest = blob[:-32], blob[-32:]
        if len(blob) < 52 or blob[:4] != ADAM_MAGIC:
            raise CorruptModelError(f"{path}: not an optimizer state file")
        if hashlib.sha256(body).digest() != digest:
            raise CorruptModelError(f"{path}: hash mismatch")
        n, step = struct.unpack("<QQ", body[4:20])
        if n != self.size or len(body) != 20 + 16 * n:
            raise CorruptModelError(f"{path}: size mismatch")
        self.adam_m[...] = np.frombuffer(body, "<f8", n, 20)
        self.adam_v[...] = np.frombuffer(body, "<f8", n, 20 + 8 * n)
        self.step = step


def parse_model_bytes(blob: bytes, source="model") -> np.ndarray:
    header = 4 + 1 + 8
    if len(blob) < header + 32:
        raise CorruptModelError(f"{source}: truncated ({len(blob)} bytes)")
    if blob[:4] != MODEL_MAGIC:
        raise CorruptModelError(f"{source}: bad magic {blob[:4]!r}")
    version, count = struct.unpack("<BQ", blob[4:header])
    if version != MODEL_VERSION:
        raise CorruptModelError(f"{source}: unsupported model version {version}")
    if len(blob) != header + 8 * count + 32:
        raise CorruptModelError(
            f"{source}: truncated, expected {header + 8 * count + 32} bytes, got {len(blob)}"
        )
    body, digest = blob[:-32], blob[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise CorruptModelError(f"{source}: content hash mismatch")
    return np.frombuffer(body, "<f8", count, header).astype(np.float64)


def params_save(store: ParamStore, path) -> bytes:
    """Write ``store`` as a model file; returns its content hash."""
    store.save(path)
    return store.hash


def params_load(path, template: ParamStore | None = None) -> ParamStore:
    """Read a model file.

    Without a template the result has a single flat parameter named
    ``"params"``; with one, values are copied into a store of the same layout.
    """
    with open(path, "rb") as f:
        blob = f.read()
    values = parse_model_bytes(blob, str(path))
    if template is None:
        store = ParamStore([("params", (values.size,))])
    else:
        store = ParamStore(template.specs())
        if store.size != values.size:
            raise CorruptModelError(
                f"{path}: holds {values.size} parameters, architecture needs {store.size}"
            )
    store.values[...] = values
    return store


# -- symmetric padding --------------------------------------------------------


def _border_sources(n: int) -> tuple[int, int]:
    if n == 1:
        return 0, 0
    return 1, n - 2


def reflect_pad(x: np.ndarray) -> np.ndarray:
    """Pad the last three axes by one voxel, mirroring without edge repeat."""
    idx = []
    for n in x.shape[-3:]:
        lo, hi = _border_sources(n)
        idx.append(np.concatenate(([lo], np.arange(n), [hi])))
    return x[..., idx[0][:, None, None], idx[1][None, :, None], idx[2][None, None, :]]


def reflect_pad_adjoint(gp: np.ndarray) -> np.ndarray:
    """Adjoint of :func:`reflect_pad`: fold the border gradients back inward."""
    g = gp
    for ax in (-3, -2, -1):
        g = np.moveaxis(g, ax, 0)
        n = g.shape[0] - 2
        core = g[1:-1].copy()
        lo, hi = _border_sources(n)
        core[lo] += g[0]
        core[hi] += g[-1]
        g = np.moveaxis(core, 0, ax)
    return g


# -- layers -------------------------------------------------------------------


class Conv3DLayer:
    """3x3x3 same-size convolution over ``(C, B, D, H, W)`` activations."""

    def __init__(self, store: ParamStore, prefix: str, c_in: int, c_out: int):
        self.c_in = c_in
        self.c_out = c_out
        self.kernel = store.view(prefix + ".kernel")
        self.bias = store.view(prefix + ".bias")
        self.grad_kernel = store.grad(prefix + ".kernel")
        self.grad_bias = store.grad(prefix + ".bias")

    @staticmethod
    def param_specs(prefix, c_in, c_out):
        return [(prefix + ".kernel", (c_out, c_in, KSIZE, KSIZE, KSIZE)), (prefix + ".bias", (c_out,))]

    def _columns(self, xp, spatial):
        d, h, w = spatial
        cols = np.empty((xp.shape[0], 27) + xp.shape[1:2] + (d, h, w))
        for n, (i, j, k) in enumerate(_OFFSETS):
            cols[:, n] = xp[:, :, i : i + d, j : j + h, k : k + w]
        return cols.reshape(xp.shape[0] * 27, -1)

    def forward(self, x: np.ndarray):
        """Returns ``(out, cache)``; the cache is the padded input."""
        if x.ndim != 5 or x.shape[0] != self.c_in:
            raise ValueError(
                f"conv expects ({self.c_in}, B, D, H, W) input, got shape {x.shape}"
            )
        spatial = x.shape[2:]
        xp = reflect_pad(x)
        if self.c_out < self.c_in:
            out = self._narrow_forward(xp, spatial)
        else:
            out = self.kernel.reshape(self.c_out, -1) @ self._columns(xp, spatial)
        out += self.bias[:, None]
        return out.reshape((self.c_out,) + x.shape[1:]), xp

    def _narrow_forward(self, xp, spatial):
        # contract channels first, then sum the 27 shifted taps; cheaper than
        # building columns when the layer narrows
        d, h, w = spatial
        taps = self.kernel.transpose(0, 2, 3, 4, 1).reshape(self.c_out * 27, self.c_in)
        t = (taps @ xp.reshape(self.c_in, -1)).reshape((self.c_out, 27) + xp.shape[1:])
        out = t[:, 0, :, :d, :h, :w].copy()
        for n, (i, j, k) in enumerate(_OFFSETS[1:], 1):
            out += t[:, n, :, i : i + d, j : j + h, k : k + w]
        return out.reshape(self.c_out, -1)

    def backward(self, xp: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
        """Input gradient; kernel and bias gradients are accumulated."""
        spatial = tuple(s - 2 for s in xp.shape[2:])
        expect = (self.c_out, xp.shape[1]) + spatial
        if grad_out.shape != expect:
            raise ValueError(f"grad_out shape {grad_out.shape} != forward output {expect}")
        g = grad_out.reshape(self.c_out, -1)
        cols = self._columns(xp, spatial)
        self.grad_kernel += (g @ cols.T).reshape(self.kernel.shape)
        self.grad_bias += g.sum(axis=1)
        gcols = (self.kernel.reshape(self.c_out, -1).T @ g).reshape(
            (self.c_in, 27, xp.shape[1]) + spatial
        )
        gp = np.zeros_like(xp)
        d, h, w = spatial
        for n, (i, j, k) in enumerate(_OFFSETS):
            gp[:, :, i : i + d, j : j + h, k : k + w] += gcols[:, n]
        return reflect_pad_adjoint(gp)


def conv3d_forward(layer: Conv3DLayer, x: np.ndarray) -> np.ndarray:
    return layer.forward(x)[0]


def conv3d_backward(layer: Conv3DLayer, x: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    if x.ndim != 5 or x.shape[0] != layer.c_in:
        raise ValueError(f"conv expects ({layer.c_in}, B, D, H, W) input, got {x.shape}")
    return layer.backward(reflect_pad(x), grad_out)


class LiftNet:
    """conv(1->16) tanh conv(16->16) tanh conv(16->1).

    Accepts ``(D, H, W)`` or batched ``(B, D, H, W)`` single-channel input.
    """

    residual = False

    def __init__(self, store: ParamStore, prefix: str):
        self.prefix = prefix
        self.layers = [
            Conv3DLayer(store, f"{prefix}.conv{n}", ci, co)
            for n, (ci, co) in enumerate(self.channel_plan())
        ]
        self._cache = None

    @staticmethod
    def channel_plan():
        return [(1, HIDDEN), (HIDDEN, HIDDEN), (HIDDEN, 1)]

    @classmethod
    def param_specs(cls, prefix):
        specs = []
        for n, (ci, co) in enumerate(cls.channel_plan()):
            specs += Conv3DLayer.param_specs(f"{prefix}.conv{n}", ci, co)
        return specs

    def init(self, rng: np.random.Generator):
        """Fan-in uniform init for hidden layers; zero final layer."""
        for layer in self.layers[:-1]:
            bound = 1.0 / np.sqrt(layer.c_in * 27)
            layer.kernel[...] = rng.uniform(-bound, bound, layer.kernel.shape)
            layer.bias[...] = rng.uniform(-bound, bound, layer.bias.shape)
        self.layers[-1].kernel[...] = 0.0
        self.layers[-1].bias[...] = 0.0

    def apply(self, x: np.ndarray):
        """Functional forward: returns ``(out, cache)`` without touching ``self``."""
        single = x.ndim == 3
        a = x[None, None] if single else x[None]
        caches = []
        for n, layer in enumerate(self.layers):
            z, xp = layer.forward(a)
            caches.append(xp)
            a = np.tanh(z) if n < len(self.layers) - 1 else z
            if n < len(self.layers) - 1:
                caches.append(a)
        out = a[0, 0] if single else a[0]
        if self.residual:
            out = out + x
        return out, (single, caches)

    def backprop(self, cache, grad_out: np.ndarray) -> np.ndarray:
        single, caches = cache
        g = grad_out[None, None] if single else grad_out[None]
        n_layers = len(self.layers)
        for n in range(n_layers - 1, -1, -1):
            if n < n_layers - 1:
                g = g * tanh_grad(caches[2 * n + 1])
            g = self.layers[n].backward(caches[2 * n], g)
        gin = g[0, 0] if single else g[0]
        if self.residual:
            gin = gin + grad_out
        return gin

    def forward(self, x: np.ndarray) -> np.ndarray:
        out, self._cache = self.apply(x)
        return out

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        if self._cache is None:
            raise StateError("backward called without a cached forward pass")
        return self.backprop(self._cache, grad_out)

    __call__ = forward


class PostNet(LiftNet):
    """Residual post-filter: ``out = x + net(x)``."""

    residual = True


def net_forward(net: LiftNet, x: np.ndarray) -> np.ndarray:
    return net.forward(x)


def net_backward(net: LiftNet, grad_out: np.ndarray) -> np.ndarray:
    return net.backward(grad_out)
