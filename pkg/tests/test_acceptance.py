"""Acceptance suite: one test per criterion, each announcing a PASS/FAIL line.

Run under pytest (``pytest tests/test_acceptance.py -v``) or directly
(``python3 tests/test_acceptance.py``) for just the summary lines.
"""

from __future__ import annotations

import os
import sys
import tempfile
import time

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from conftest import random_model  # noqa: E402

from liftvol.codec import CodecConfig, bits_per_voxel, decode, encode  # noqa: E402
from liftvol.coder import RangeDecoder, RangeEncoder, decode_symbols, encode_symbols  # noqa: E402
from liftvol.entropy import CdfTable  # noqa: E402
from liftvol.gradcheck import grad_check  # noqa: E402
from liftvol.lifting import LiftConfig  # noqa: E402
from liftvol.metrics import bd_psnr, psnr  # noqa: E402
from liftvol.model import Model  # noqa: E402
from liftvol.synth import synth_cube, synth_dataset  # noqa: E402
from liftvol.trainer import TrainConfig, load_cubes, train_loop  # noqa: E402


def lazy_reference(v, levels=2):
    """Bands of the zero-network transform by direct strided indexing."""
    def pick(x, label):
        vert, horiz, axial = (int(ch == "H") for ch in label)
        return x[axial::2, vert::2, horiz::2]

    labels = ["LLL", "HLL", "LHL", "HHL", "LLH", "HLH", "LHH", "HHH"]
    details, x = [], v
    for _ in range(levels):
        details.append([pick(x, lab) for lab in labels[1:]])
        x = pick(x, "LLL")
    out = [x]
    for d in reversed(details):
        out += d
    return out


# -- criteria ------------------------------------------------------------------
# Each returns (passed, detail).


def lossless_exactness():
    rng = np.random.default_rng(101)
    cfg = CodecConfig(mode="lossless")
    scales = (0.02, 0.05, 0.1, 0.3, 1.0)
    failures = 0
    for k, scale in enumerate(scales):
        model = random_model(500 + k, scale=scale)
        for _ in range(20):
            v = rng.integers(0, 256, (16, 16, 16), dtype=np.uint8)
            if not np.array_equal(decode(encode(v, model, cfg), model), v):
                failures += 1
    n = 20 * len(scales)
    return failures == 0, f"{n - failures}/{n} volumes byte-exact over {len(scales)} parameter sets"


def float_invertibility():
    rng = np.random.default_rng(202)
    worst = 0.0
    for k in range(50):
        model = random_model(600 + k % 10, scale=0.05)
        t = model.transform(cfg=LiftConfig())
        v = rng.uniform(0, 1, (16, 16, 16))
        worst = max(worst, float(np.abs(t.inverse(t.forward(v)) - v).max()))
    return worst < 1e-8, f"max abs error {worst:.2e} over 50 volumes (limit 1e-8)"


def gradient_correctness():
    report = grad_check(seed=0)
    worst = ", ".join(f"{e.component}={e.max_rel_error:.1e}" for e in report.entries)
    return report.passed, worst


def coder_exactness_and_efficiency():
    rng = np.random.default_rng(303)
    total = 0
    exact = True
    while total < 1_000_000:
        width = int(rng.integers(2, 400))
        table = CdfTable.from_probabilities(int(rng.integers(-200, 50)), rng.dirichlet(np.full(width, rng.uniform(0.1, 3))), 1e-3)
        p = table.probabilities()[:-1]
        syms = rng.choice(width, 50_000, p=p / p.sum()) + table.s_min
        syms[rng.choice(syms.size, 25, replace=False)] = rng.integers(-(2**31), 2**31 - 1, 25)
        syms = syms.tolist()
        enc = RangeEncoder()
        encode_symbols(enc, table, syms)
        data = enc.finish()
        exact &= decode_symbols(RangeDecoder(data), table, len(syms)) == syms
        total += len(syms)

    worst_excess = -np.inf
    for _ in range(10):
        width = int(rng.integers(2, 300))
        table = CdfTable.from_probabilities(0, rng.dirichlet(np.full(width, 0.5)), 1e-3)
        p = table.probabilities()
        syms = rng.choice(width, 10_000, p=p[:-1] / p[:-1].sum())
        ideal = float(-np.log2(p[syms]).sum())
        enc = RangeEncoder()
        encode_symbols(enc, table, syms.tolist())
        bits = 8 * len(enc.finish())
        worst_excess = max(worst_excess, bits - (ideal * 1.001 + 128))
    ok = exact and worst_excess <= 0
    return ok, (
        f"{total} symbols {'exact' if exact else 'MISMATCH'}; "
        f"worst size margin {worst_excess:+.1f} bits vs cross-entropy + 0.1% + 128"
    )


def training_sanity():
    with tempfile.TemporaryDirectory() as tmp:
        synth_dataset(tmp, count=8, shape=(16, 16, 16), seed=0)
        cubes = load_cubes(tmp, 8)
        lossy = TrainConfig(lam=1.0, lr=1e-4, batch_size=4, cube=8, steps=200, seed=0)
        _, hist = train_loop(cubes, lossy)
        loss_ok = hist[-1].loss < hist[0].loss

        lossless = TrainConfig(lr=1e-4, batch_size=4, cube=8, steps=200, seed=0, mode="lossless")
        trained, _ = train_loop(cubes, lossless)
    baseline = Model.create(seed=0)  # zero final layers: the lazy wavelet
    held_out = [synth_cube((16, 16, 16), seed=9000 + s) for s in range(4)]
    cfg = CodecConfig(mode="lossless")

    def mean_bpp(model):
        return float(np.mean([bits_per_voxel(encode(v, model, cfg), v.shape) for v in held_out]))

    b0, b1 = mean_bpp(baseline), mean_bpp(trained)
    gain = 1.0 - b1 / b0
    ok = loss_ok and gain >= 0.05
    return ok, (
        f"lossy loss step1={hist[0].loss:.3f} step200={hist[-1].loss:.3f}; "
        f"held-out lossless bpp {b0:.3f} -> {b1:.3f} ({100 * gain:.1f}% better, need 5%)"
    )


def lazy_wavelet_reduction():
    rng = np.random.default_rng(404)
    bad = 0
    for k in range(100):
        model = Model.create(seed=k)  # random hidden layers, zero final layers
        shape = tuple(int(s) for s in rng.choice([4, 8, 12, 16], 3))
        v = rng.integers(0, 256, shape).astype(np.float64)
        for cfg in (LiftConfig(), LiftConfig(mode="integer", scale=255.0)):
            bands = model.transform(cfg=cfg).forward(v).arrays
            same = all(np.array_equal(a, b) for a, b in zip(bands, lazy_reference(v)))
            perm = np.array_equal(np.sort(np.concatenate([b.ravel() for b in bands])), np.sort(v.ravel()))
            bad += not (same and perm)
    return bad == 0, f"{200 - bad}/200 transforms (float and integer) equal pure reindexing"


def rate_distortion_direction():
    model = Model.create(seed=0)
    steps = np.geomspace(1 / 255, 0.25, 10)
    worst_psnr, worst_bpp = 0.0, 0.0
    for seed in (100, 101):
        v = synth_cube((16, 16, 16), seed=seed)
        pts = []
        for qs in steps:
            data = encode(v, model, CodecConfig(qs=float(qs)))
            pts.append((bits_per_voxel(data, v.shape), psnr(v, decode(data, model))))
        for (b0, p0), (b1, p1) in zip(pts, pts[1:]):
            if np.isfinite(p1):
                worst_psnr = max(worst_psnr, p1 - p0)
            worst_bpp = max(worst_bpp, b1 - b0)
    ok = worst_psnr <= 0.1 and worst_bpp <= 0.01
    return ok, f"largest PSNR rise {worst_psnr:+.3f} dB, largest bpp rise {worst_bpp:+.4f} over 10 steps x 2 volumes"


def bd_metric_correctness():
    curve = [(0.4, 29.1), (0.9, 32.7), (1.8, 36.0), (3.5, 39.4), (6.0, 41.8)]
    same = bd_psnr(curve, curve)
    plus = bd_psnr(curve, [(r, d + 1.0) for r, d in curve])
    ok = round(same, 3) == 0.0 and abs(plus - 1.0) <= 1e-3
    return ok, f"self={same:.3f} dB, +1 dB offset={plus:.3f} dB"


CRITERIA = [
    (1, "lossless exactness", lossless_exactness),
    (2, "float invertibility", float_invertibility),
    (3, "gradient correctness", gradient_correctness),
    (4, "coder exactness and efficiency", coder_exactness_and_efficiency),
    (5, "training sanity", training_sanity),
    (6, "lazy-wavelet reduction", lazy_wavelet_reduction),
    (7, "rate-distortion direction", rate_distortion_direction),
    (8, "BD-metric correctness", bd_metric_correctness),
]


def run(number, title, fn):
    t0 = time.perf_counter()
    ok, detail = fn()
    line = f"criterion {number} [{title}]: {'PASS' if ok else 'FAIL'} ({detail}; {time.perf_counter() - t0:.1f}s)"
    return ok, line


@pytest.fixture
def announce(request):
    reporter = request.config.pluginmanager.getplugin("terminalreporter")

    def write(line):
        if reporter is not None:
            reporter.write_line("")
            reporter.write_line(line)
        else:
            print(line)

    return write


@pytest.mark.parametrize("number,title,fn", CRITERIA, ids=[f"criterion{n}" for n, _, _ in CRITERIA])
def test_criterion(number, title, fn, announce):
    ok, line = run(number, title, fn)
    announce(line)
    assert ok, line


if __name__ == "__main__":
    results = [run(*c) for c in CRITERIA]
    for _, line in results:
        print(line)
    sys.exit(0 if all(ok for ok, _ in results) else 1)
