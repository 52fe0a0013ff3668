"""Rate-distortion training of the whole model.

The objective per batch is::

    loss = rate_bpp + lam * mse

where the rate is the entropy model's bit estimate on noise-relaxed
coefficients ``y / QS + u`` (``u`` uniform on (-1/2, 1/2)) divided by the
voxel count, and ``mse`` compares the normalized input with the post-filtered
reconstruction from the dequantized coefficients.  By default the
reconstruction path rounds with a straight-through gradient; ``"noise"``
reuses the additive noise instead, which makes the loss smooth (used for
finite-difference checks).

Lossless models are trained on raw 0..255 voxels with a rate-only objective
and a fixed unit step.
"""

from __future__ import annotations

import csv
import glob
import io
import os
from dataclasses import dataclass

import numpy as np

from .errors import EmptyDatasetError, StateError, TrainingDivergedError
from .lifting import LiftConfig, round_half_away
from .model import LOSSLESS_SCALE, Model
from .volume import load_volume

BETA1 = 0.9
BETA2 = 0.999
EPS = 1e-8

CSV_HEADER = ["step", "loss", "rate_bpp", "mse", "qs"]


@dataclass(frozen=True)
class TrainConfig:
    lam: float = 1.0
    lr: float = 1e-4
    batch_size: int = 4
    cube: int = 16
    steps: int = 1000
    seed: int = 0
    mode: str = "lossy"
    distortion: str = "ste"
    checkpoint_every: int = 0

    def __post_init__(self):
        if self.mode not in ("lossy", "lossless"):
            raise ValueError(f"mode must be 'lossy' or 'lossless', got {self.mode!r}")
        if self.mode == "lossy" and not self.lam > 0:
            raise ValueError("lam must be positive in lossy mode")
        if self.distortion not in ("ste", "noise"):
            raise ValueError("distortion must be 'ste' or 'noise'")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.cube < 4 or self.cube % 4:
            raise ValueError("cube size must be a positive multiple of 4")
        if not self.lr > 0:
            raise ValueError("learning rate must be positive")


@dataclass
class LossTerms:
    loss: float
    rate: float
    mse: float


def quant_relax(y, qs, rng=None, training=True, noise=None):
    """Continuous proxy for ``round(y / qs)``.

    Training mode adds uniform noise on (-1/2, 1/2); evaluation mode rounds
    half away from zero like the codec.
    """
    if not qs > 0:
        raise ValueError("quantization step must be positive")
    y = np.asarray(y, dtype=np.float64)
    if not training:
        return round_half_away(y / qs)
    if noise is None:
        if rng is None:
            raise ValueError("training-mode relaxation needs an rng or explicit noise")
        noise = rng.uniform(-0.5, 0.5, size=y.shape)
    return y / qs + noise


def draw_noise(model: Model, batch_shape, rng) -> list[np.ndarray]:
    """One uniform noise array per band for a batch of the given shape."""
    b, d, h, w = batch_shape
    out = []
    for lev in [2] * 8 + [1] * 7:
        out.append(rng.uniform(-0.5, 0.5, size=(b, d >> lev, h >> lev, w >> lev)))
    return out


def rd_loss(x, model: Model, lam=1.0, mode="lossy", rng=None, noise=None,
            distortion="ste", backward=True) -> LossTerms:
    """Evaluate the rate-distortion loss on a batch and fill ``model.store.grads``.

    ``x`` is ``(B, D, H, W)``: normalized to [0, 1] in lossy mode, raw 0..255
    values in lossless mode.  Gradients accumulate, so call
    ``model.store.zero_grad()`` between steps.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 3:
        x = x[None]
    if any(s % 4 for s in x.shape[1:]):
        raise ValueError(f"cube dims {x.shape[1:]} must be divisible by 4")
    if noise is None:
        if rng is None:
            raise ValueError("rd_loss needs an rng or explicit noise")
        noise = draw_noise(model, x.shape, rng)
    n_vox = x.size
    lossless = mode == "lossless"
    cfg = LiftConfig(levels=2, mode="float", scale=LOSSLESS_SCALE if lossless else 1.0)
    fwd = model.transform(cfg=cfg)
    pyr = fwd.forward(x, record=backward)
    bands = pyr.arrays
    qs = 1.0 if lossless else model.qs

    relaxed = [b / qs + u for b, u in zip(bands, noise)]
    bits = model.entropy.rate_forward(relaxed, record=backward)
    rate = bits / n_vox
    if not np.isfinite(rate):
        raise TrainingDivergedError("rate")

    mse = 0.0
    if not lossless:
        if distortion == "ste":
            deq = [qs * round_half_away(b / qs) for b in bands]
        else:
            deq = [b + qs * u for b, u in zip(bands, noise)]
        inv = model.transform(cfg=cfg)
        xr = inv.inverse(pyr.with_arrays(deq), record=backward)
        if backward:
            xh, post_cache = model.post.apply(xr)
        else:
            xh = model.post(xr)
        err = xh - x
        mse = float(np.mean(err * err))
        if not np.isfinite(mse):
            raise TrainingDivergedError("distortion")
    loss = rate + lam * mse if not lossless else rate
    if not np.isfinite(loss):
        raise TrainingDivergedError("loss")
    if not backward:
        return LossTerms(loss, rate, mse)

    g_rel = model.entropy.rate_backward(1.0 / n_vox)
    g_bands = [g / qs for g in g_rel]
    g_logqs = 0.0
    if not lossless:
        g_logqs -= sum(float(np.sum(g * b)) for g, b in zip(g_rel, relaxed)) - sum(
            float(np.sum(g * u)) for g, u in zip(g_rel, noise)
        )
        g_xh = (2.0 * lam / n_vox) * err
        g_xr = model.post.backprop(post_cache, g_xh)
        g_deq = inv.backward_inverse(g_xr)
        g_bands = [a + b for a, b in zip(g_bands, g_deq)]
        # straight-through rounding: d(qs * round(b / qs)) / d log qs = deq - b
        offsets = noise if distortion == "noise" else [(d - b) / qs for d, b in zip(deq, bands)]
        g_logqs += qs * sum(float(np.sum(g * o)) for g, o in zip(g_deq, offsets))
        model.store.grad("log_qs")[...] += g_logqs
    fwd.backward_forward(g_bands)
    model.store.mark_grads()
    return LossTerms(loss, rate, mse)


def adam_step(store, lr: float):
    """Bias-corrected Adam update, then zero the gradients."""
    if not store.grads_populated:
        raise StateError("adam_step called before any gradients were computed")
    store.step += 1
    t = store.step
    g = store.grads
    store.adam_m *= BETA1
    store.adam_m += (1.0 - BETA1) * g
    store.adam_v *= BETA2
    store.adam_v += (1.0 - BETA2) * g * g
    mhat = store.adam_m / (1.0 - BETA1**t)
    vhat = store.adam_v / (1.0 - BETA2**t)
    store.values -= lr * mhat / (np.sqrt(vhat) + EPS)
    store.zero_grad()


def load_cubes(directory, cube=None) -> list[np.ndarray]:
    """All ``.v3d`` volumes (and raw ``.raw`` cubes of size ``cube**3``)."""
    paths = sorted(glob.glob(os.path.join(directory, "*.v3d")))
    vols = [load_volume(p) for p in paths]
    if cube is not None:
        for p in sorted(glob.glob(os.path.join(directory, "*.raw"))):
            vols.append(load_volume(p, (cube, cube, cube)))
    vols = [v for v in vols if cube is None or min(v.shape) >= cube]
    if not vols:
        raise EmptyDatasetError(f"no usable cubes in {directory}")
    return vols


class BatchSampler:
    """Deterministic epoch shuffling plus random crops to the cube size."""

    def __init__(self, volumes, cfg: TrainConfig, rng):
        self.volumes = volumes
        self.cfg = cfg
        self.rng = rng
        self._order = []

    def _next_index(self):
        if not self._order:
            self._order = list(self.rng.permutation(len(self.volumes)))
        return self._order.pop(0)

    def next(self) -> np.ndarray:
        c = self.cfg.cube
        batch = []
        for _ in range(self.cfg.batch_size):
            v = self.volumes[self._next_index()]
            off = [int(self.rng.integers(0, s - c + 1)) for s in v.shape]
            batch.append(v[off[0] : off[0] + c, off[1] : off[1] + c, off[2] : off[2] + c])
        x = np.stack(batch).astype(np.float64)
        return x if self.cfg.mode == "lossless" else x / 255.0


def _fmt(x: float) -> str:
    return repr(float(x))


def train_loop(dataset, cfg: TrainConfig, out_dir=None, model: Model | None = None,
               log=None) -> tuple[Model, list[LossTerms]]:
    """Train on ``dataset`` (a directory or a list of uint8 volumes).

    Writes ``metrics.csv``, periodic checkpoints and ``model.iwm`` (plus the
    optimizer sidecar ``model.adam``) into ``out_dir`` when given.
    """
    volumes = load_cubes(dataset, cfg.cube) if isinstance(dataset, (str, os.PathLike)) else list(dataset)
    if not volumes:
        raise EmptyDatasetError("empty dataset")
    rng = np.random.default_rng(cfg.seed)
    if model is None:
        model = Model.create(seed=cfg.seed)
    sampler = BatchSampler(volumes, cfg, rng)
    history = []
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
    for step in range(1, cfg.steps + 1):
        x = sampler.next()
        model.store.zero_grad()
        try:
            terms = rd_loss(x, model, cfg.lam, cfg.mode, rng=rng, distortion=cfg.distortion)
        except TrainingDivergedError as e:
            raise TrainingDivergedError(e.term, step) from None
        adam_step(model.store, cfg.lr)
        if not np.all(np.isfinite(model.store.values)):
            raise TrainingDivergedError("parameter", step)
        history.append(terms)
        writer.writerow([step, _fmt(terms.loss), _fmt(terms.rate), _fmt(terms.mse), _fmt(model.qs)])
        if log is not None:
            log(step, terms)
        if out_dir is not None and cfg.checkpoint_every and step % cfg.checkpoint_every == 0:
            model.save(os.path.join(out_dir, f"ckpt_{step:06d}.iwm"))
            model.store.save_adam(os.path.join(out_dir, f"ckpt_{step:06d}.adam"))
    if out_dir is not None:
        with open(os.path.join(out_dir, "metrics.csv"), "w", newline="") as f:
            f.write(buf.getvalue())
        model.save(os.path.join(out_dir, "model.iwm"))
        model.store.save_adam(os.path.join(out_dir, "model.adam"))
    return model, history
