"""Finite-difference verification of every hand-written backward pass."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .lifting import LiftConfig
from .model import Model
from .nn3d import Conv3DLayer, LiftNet, ParamStore, PostNet
from .trainer import draw_noise, rd_loss

H = 1e-5


def rel_error(analytic, numeric) -> float:
    """Largest elementwise relative error.

    Components far below the gradient's overall magnitude are compared
    against ``1e-4`` of that magnitude instead of their own size, so
    near-zero entries cannot dominate through finite-difference round-off.
    """
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    scale = max(np.abs(a).max(initial=0.0), np.abs(n).max(initial=0.0))
    if scale == 0.0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-4 * scale)
    return float(np.max(np.abs(a - n) / denom))


def central_difference(f, x: np.ndarray, indices, h=H) -> np.ndarray:
    """``df/dx[i]`` for the given flat indices, perturbing ``x`` in place."""
    flat = x.reshape(-1)
    out = np.empty(len(indices))
    for k, i in enumerate(indices):
        x0 = flat[i]
        flat[i] = x0 + h
        fp = f()
        flat[i] = x0 - h
        fm = f()
        flat[i] = x0
        out[k] = (fp - fm) / (2.0 * h)
    return out


@dataclass
class GradCheckEntry:
    component: str
    max_rel_error: float
    tol: float

    @property
    def passed(self) -> bool:
        return bool(self.max_rel_error < self.tol)


@dataclass
class GradReport:
    entries: list[GradCheckEntry] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(e.passed for e in self.entries)

    @property
    def failed(self) -> list[str]:
        return [e.component for e in self.entries if not e.passed]

    def __getitem__(self, component) -> GradCheckEntry:
        for e in self.entries:
            if e.component == component:
                return e
        raise KeyError(component)

    def lines(self) -> list[str]:
        return [
            f"component={e.component} max_rel_err={e.max_rel_error:.3e} "
            f"tol={e.tol:.0e} pass={'true' if e.passed else 'false'}"
            for e in self.entries
        ]


def _pick(rng, n, k):
    return rng.choice(n, size=min(k, n), replace=False)


def check_conv(rng, n_samples=40) -> float:
    errs = []
    for c_in, c_out in [(1, 2), (16, 16)]:
        store = ParamStore(Conv3DLayer.param_specs("c", c_in, c_out))
        store.values[...] = rng.normal(size=store.size) * 0.3
        layer = Conv3DLayer(store, "c", c_in, c_out)
        x = rng.normal(size=(c_in, 1, 4, 4, 4))
        r = rng.normal(size=(c_out, 1, 4, 4, 4))

        def f():
            return float(np.sum(layer.forward(x)[0] * r))

        store.zero_grad()
        out, xp = layer.forward(x)
        gx = layer.backward(xp, r)
        ip = _pick(rng, store.size, n_samples)
        ix = _pick(rng, x.size, n_samples)
        errs.append(rel_error(store.grads[ip], central_difference(f, store.values, ip)))
        errs.append(rel_error(gx.ravel()[ix], central_difference(f, x, ix)))
    return max(errs)


def check_net(rng, cls=LiftNet, n_samples=50) -> float:
    store = ParamStore(cls.param_specs("n"))
    net = cls(store, "n")
    net.init(rng)
    store.values[...] += rng.normal(size=store.size) * 0.1
    x = rng.normal(size=(3, 3, 3))
    r = rng.normal(size=(3, 3, 3))

    def f():
        return float(np.sum(net.apply(x)[0] * r))

    store.zero_grad()
    net.forward(x)
    gx = net.backward(r)
    ip = _pick(rng, store.size, n_samples)
    ix = _pick(rng, x.size, 10)
    return max(
        rel_error(store.grads[ip], central_difference(f, store.values, ip)),
        rel_error(gx.ravel()[ix], central_difference(f, x, ix)),
    )


def _jittered_model(rng, model=None) -> Model:
    m = Model.create(seed=int(rng.integers(1 << 31))) if model is None else model.copy()
    nets = m.store.prefixed("predict") | m.store.prefixed("update") | m.store.prefixed("post")
    m.store.values[nets] += rng.normal(size=int(nets.sum())) * 0.05
    return m


def check_lifting(rng, model=None, n_samples=40) -> float:
    m = _jittered_model(rng, model)
    st = m.store
    x = rng.normal(size=(8, 8, 8))
    lifts = np.flatnonzero(st.prefixed("predict") | st.prefixed("update"))

    def energy():
        p = m.transform(cfg=LiftConfig()).forward(x)
        return 0.5 * sum(float(np.sum(a * a)) for a in p.arrays)

    st.zero_grad()
    t = m.transform(cfg=LiftConfig())
    p = t.forward(x, record=True)
    gx = t.backward_forward(p.arrays)
    ip = rng.choice(lifts, size=n_samples, replace=False)
    ix = _pick(rng, x.size, 20)
    errs = [
        rel_error(st.grads[ip], central_difference(energy, st.values, ip)),
        rel_error(gx.ravel()[ix], central_difference(energy, x, ix)),
    ]

    bands = [a.copy() for a in p.arrays]
    r = rng.normal(size=x.shape)

    def synth():
        return float(np.sum(m.transform(cfg=LiftConfig()).inverse(p.with_arrays(bands)) * r))

    st.zero_grad()
    t = m.transform(cfg=LiftConfig())
    t.inverse(p.with_arrays(bands), record=True)
    gb = t.backward_inverse(r)
    ip = rng.choice(lifts, size=n_samples, replace=False)
    errs.append(rel_error(st.grads[ip], central_difference(synth, st.values, ip)))
    for c in (0, 7, 14):
        ib = _pick(rng, bands[c].size, 5)
        errs.append(rel_error(gb[c].ravel()[ib], central_difference(synth, bands[c], ib)))
    return max(errs)


def check_entropy(rng, n_samples=40) -> float:
    m = Model.create(seed=int(rng.integers(1 << 31)))
    st = m.store
    ent = st.prefixed("entropy")
    st.values[ent] += rng.normal(size=int(ent.sum())) * 0.3
    bands = [rng.normal(scale=8.0, size=(2, 2, 2)) for _ in range(15)]

    def bits():
        return m.entropy.rate_forward(bands)

    st.zero_grad()
    m.entropy.rate_forward(bands, record=True)
    gb = m.entropy.rate_backward(1.0)
    ip = rng.choice(np.flatnonzero(ent), size=n_samples, replace=False)
    errs = [rel_error(st.grads[ip], central_difference(bits, st.values, ip))]
    for c in (0, 5, 14):
        errs.append(rel_error(gb[c].ravel(), central_difference(bits, bands[c], range(bands[c].size))))
    return max(errs)


def check_rd_loss(rng, model=None, mode="lossy", lam=50.0, n_samples=50) -> float:
    m = _jittered_model(rng, model)
    st = m.store
    x = rng.uniform(0.0, 1.0, size=(1, 8, 8, 8))
    if mode == "lossless":
        x = np.round(x * 255.0)
    noise = draw_noise(m, x.shape, rng)

    def loss():
        return rd_loss(x, m, lam, mode, noise=noise, distortion="noise", backward=False).loss

    st.zero_grad()
    rd_loss(x, m, lam, mode, noise=noise, distortion="noise")
    groups = ["predict", "update", "entropy"] + (["post", "log_qs"] if mode == "lossy" else [])
    idx = []
    for g in groups:
        cand = np.flatnonzero(st.prefixed(g))
        idx += list(rng.choice(cand, size=min(len(cand), n_samples // len(groups) + 1), replace=False))
    return rel_error(st.grads[idx], central_difference(loss, st.values, idx))


def grad_check(model: Model | None = None, seed=0) -> GradReport:
    """Run the full finite-difference suite.

    Network weights are jittered before checking so that zero-initialized
    layers still exercise every backward path.  Failures are report entries,
    never exceptions.
    """
    rng = np.random.default_rng(seed)
    report = GradReport()
    checks = [
        ("nn3d.conv", 1e-5, lambda: check_conv(rng)),
        ("nn3d.liftnet", 1e-5, lambda: check_net(rng, LiftNet)),
        ("nn3d.postnet", 1e-5, lambda: check_net(rng, PostNet)),
        ("lifting", 1e-5, lambda: check_lifting(rng, model)),
        ("entropy", 1e-5, lambda: check_entropy(rng)),
        ("rd_loss.lossy", 1e-4, lambda: check_rd_loss(rng, model, "lossy")),
        ("rd_loss.lossless", 1e-4, lambda: check_rd_loss(rng, model, "lossless")),
    ]
    for name, tol, fn in checks:
        try:
            err = fn()
        except (ArithmeticError, ValueError) as e:  # recorded, not raised
            err = float("inf")
            name = f"{name} ({type(e).__name__}: {e})"
        report.entries.append(GradCheckEntry(name, err, tol))
    return report
