import csv

import numpy as np
import pytest

from liftvol.cli import main
from liftvol.model import Model
from liftvol.synth import synth_cube
from liftvol.volume import load_volume, save_v3d


def kv(text):
    return dict(line.split("=", 1) for line in text.splitlines() if "=" in line and " " not in line)


@pytest.fixture
def work(tmp_path):
    Model.create(seed=0).save(tmp_path / "m.iwm")
    Model.create(seed=1).save(tmp_path / "other.iwm")
    save_v3d(synth_cube((16, 16, 16), seed=2), tmp_path / "cube.v3d")
    return tmp_path


def test_encode_decode_lossless(work, capsys):
    rc = main(["encode", "--in", str(work / "cube.v3d"), "--model", str(work / "m.iwm"),
               "--lossless", "--out", str(work / "c.iw3")])
    out = kv(capsys.readouterr().out)
    assert rc == 0 and "bpp" in out and "time" in out
    assert float(out["bpp"]) == pytest.approx((work / "c.iw3").stat().st_size * 8 / 16**3, abs=1e-6)
    rc = main(["decode", "--in", str(work / "c.iw3"), "--model", str(work / "m.iwm"),
               "--out", str(work / "d.v3d"), "--reference", str(work / "cube.v3d")])
    assert rc == 0 and kv(capsys.readouterr().out)["exact"] == "true"
    np.testing.assert_array_equal(load_volume(work / "d.v3d"), load_volume(work / "cube.v3d"))


def test_missing_model_is_usage_error(work, capsys):
    rc = main(["encode", "--in", str(work / "cube.v3d"), "--out", str(work / "c.iw3")])
    assert rc == 2
    assert "usage" in capsys.readouterr().err


def test_raw_without_shape(work):
    (work / "r.raw").write_bytes(bytes(64))
    assert main(["encode", "--in", str(work / "r.raw"), "--model", str(work / "m.iwm"),
                 "--out", str(work / "c.iw3")]) == 2


def test_wrong_model_and_corrupt_stream(work, capsys):
    main(["encode", "--in", str(work / "cube.v3d"), "--model", str(work / "m.iwm"),
          "--lossless", "--out", str(work / "c.iw3")])
    capsys.readouterr()
    rc = main(["decode", "--in", str(work / "c.iw3"), "--model", str(work / "other.iwm"),
               "--out", str(work / "d.v3d")])
    err = capsys.readouterr().err
    assert rc == 3
    assert Model.load(work / "m.iwm").hash[:8].hex() in err
    assert Model.load(work / "other.iwm").hash[:8].hex() in err
    blob = (work / "c.iw3").read_bytes()
    (work / "bad.iw3").write_bytes(blob[:-7])
    assert main(["decode", "--in", str(work / "bad.iw3"), "--model", str(work / "m.iwm"),
                 "--out", str(work / "d.v3d")]) == 3


def test_missing_input_is_io_error(work):
    assert main(["decode", "--in", str(work / "nope.iw3"), "--model", str(work / "m.iwm"),
                 "--out", str(work / "d.v3d")]) == 4


def test_corrupt_model_file(work):
    (work / "bad.iwm").write_bytes(b"IW3M" + bytes(50))
    assert main(["encode", "--in", str(work / "cube.v3d"), "--model", str(work / "bad.iwm"),
                 "--out", str(work / "c.iw3")]) == 3


def test_eval_identical(work, capsys):
    rc = main(["eval", "--original", str(work / "cube.v3d"), "--recon", str(work / "cube.v3d")])
    out = kv(capsys.readouterr().out)
    assert rc == 0 and out["psnr"] == "inf" and float(out["ssim"]) == 1.0


def test_eval_shape_mismatch(work):
    save_v3d(np.zeros((16, 16, 12), np.uint8), work / "small.v3d")
    assert main(["eval", "--original", str(work / "cube.v3d"), "--recon", str(work / "small.v3d")]) == 2


def test_eval_sweep_and_bd(work, capsys):
    rc = main(["eval", "--in", str(work / "cube.v3d"), "--model", str(work / "m.iwm"),
               "--sweep", "0.01", "0.02", "0.04", "0.08", "--csv", str(work / "s.csv")])
    assert rc == 0
    with open(work / "s.csv") as f:
        rows = list(csv.DictReader(f))
    assert len(rows) == 4
    ps = [float(r["psnr"]) for r in rows]
    assert all(b <= a + 0.1 for a, b in zip(ps, ps[1:]))
    capsys.readouterr()
    assert main(["eval", "--bd", str(work / "s.csv"), str(work / "s.csv")]) == 0
    assert float(kv(capsys.readouterr().out)["bd_psnr"]) == 0.0


def test_roundtrip_lossless_random(work, capsys):
    rng = np.random.default_rng(0)
    (work / "r.raw").write_bytes(rng.integers(0, 256, 16**3, dtype=np.uint8).tobytes())
    rc = main(["roundtrip", "--in", str(work / "r.raw"), "--shape", "16,16,16", "--lossless"])
    assert rc == 0 and kv(capsys.readouterr().out)["exact"] == "true"


def test_roundtrip_lossy_threshold(work):
    args = ["roundtrip", "--in", str(work / "cube.v3d"), "--qs", "0.05"]
    assert main(args + ["--min-psnr", "10"]) == 0
    assert main(args + ["--min-psnr", "99"]) == 1


def test_train_rejects_zero_steps(work):
    assert main(["train", "--data", str(work), "--out", str(work / "run"), "--steps", "0"]) == 2


def test_synth_and_train(work, capsys):
    assert main(["synth", "--out", str(work / "ds"), "--count", "2", "--size", "8,8,8"]) == 0
    rc = main(["train", "--data", str(work / "ds"), "--out", str(work / "run"),
               "--steps", "2", "--cube", "8", "--batch", "1"])
    out = kv(capsys.readouterr().out)
    assert rc == 0 and out["steps"] == "2"
    assert (work / "run" / "model.iwm").exists() and (work / "run" / "metrics.csv").exists()


def test_gradcheck_command(capsys):
    assert main(["gradcheck"]) == 0
    out = capsys.readouterr().out
    assert "component=lifting" in out and kv(out)["passed"] == "true"


def test_no_subcommand():
    assert main([]) == 2
