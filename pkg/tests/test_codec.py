import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from liftvol import codec
from liftvol.codec import CodecConfig, bits_per_voxel, decode, dequantize, encode, quantize
from liftvol.coder import HEADER_SIZE, read_header
from liftvol.errors import CorruptStreamError, DomainError, WrongModelError
from liftvol.metrics import psnr
from liftvol.model import Model

from conftest import random_model

LOSSLESS = CodecConfig(mode="lossless")


def test_quantize_ties_and_arithmetic():
    assert quantize(np.array([2.5, -2.5]), 1.0).tolist() == [3, -3]
    assert quantize(np.array([-0.4, 0.6]), 0.5).tolist() == [-1, 1]


def test_dequantize():
    assert dequantize(3, 0.5) == 1.5
    assert dequantize(0, 7.3) == 0.0
    q = np.arange(-5, 6)
    np.testing.assert_array_equal(quantize(dequantize(q, 1.0), 1.0), q)


@settings(max_examples=100, deadline=None)
@given(st.floats(-1e6, 1e6), st.floats(1e-4, 100))
def test_quantization_error_bound(y, qs):
    assert abs(dequantize(quantize(np.array([y]), qs), qs)[0] - y) <= qs / 2 * (1 + 1e-12)


def test_nonpositive_step():
    with pytest.raises(ValueError):
        quantize(1.0, 0.0)
    with pytest.raises(ValueError):
        dequantize(1, -1.0)
    with pytest.raises(ValueError):
        CodecConfig(qs=0.0)


@pytest.mark.parametrize("shape", [(16, 16, 16), (5, 17, 13), (1, 1, 1)])
def test_lossless_round_trip(rng, rand_model, shape):
    v = rng.integers(0, 256, shape, dtype=np.uint8)
    data = encode(v, rand_model, LOSSLESS)
    np.testing.assert_array_equal(decode(data, rand_model), v)


def test_lossless_extreme_values(rand_model):
    v = np.zeros((8, 8, 8), np.uint8)
    v[::2] = 255
    np.testing.assert_array_equal(decode(encode(v, rand_model, LOSSLESS), rand_model), v)


def test_constant_volume_is_small(fresh_model):
    v = np.full((16, 16, 16), 128, np.uint8)
    data = encode(v, fresh_model, LOSSLESS)
    assert len(data) < 200 + 175
    np.testing.assert_array_equal(decode(data, fresh_model), v)


def test_lossy_tiny_step_is_near_lossless(rng):
    m = random_model(12)
    m.post.init(rng)  # identity post-filter; the lifting nets stay random
    v = rng.integers(0, 256, (16, 16, 16), dtype=np.uint8)
    rec = decode(encode(v, m, CodecConfig(qs=1e-6)), m)
    assert psnr(v, rec) > 80


def test_lossy_header_fields(rng, fresh_model):
    v = rng.integers(0, 256, (9, 10, 12), dtype=np.uint8)
    data = encode(v, fresh_model, CodecConfig(qs=0.02))
    h = read_header(data)
    assert not h.lossless and h.qs == 0.02
    assert h.original_shape == (9, 10, 12) and h.padded_shape == (12, 12, 12)
    assert h.payload_length == len(data) - HEADER_SIZE
    assert decode(data, fresh_model).shape == v.shape


def test_bpp_matches_file_size(rng, fresh_model):
    v = rng.integers(0, 256, (8, 8, 8), dtype=np.uint8)
    data = encode(v, fresh_model, CodecConfig())
    assert bits_per_voxel(data, v.shape) == len(data) * 8 / 512


def test_wrong_model_rejected(rng, fresh_model, rand_model):
    data = encode(rng.integers(0, 256, (8, 8, 8), dtype=np.uint8), fresh_model, LOSSLESS)
    with pytest.raises(WrongModelError):
        decode(data, rand_model)


def test_corrupt_payload_rejected(rng, fresh_model):
    data = bytearray(encode(rng.integers(0, 256, (8, 8, 8), dtype=np.uint8), fresh_model, LOSSLESS))
    with pytest.raises(CorruptStreamError):
        decode(bytes(data[:-10]), fresh_model)
    with pytest.raises(CorruptStreamError):
        decode(bytes(data) + b"\x00", fresh_model)


def test_decode_is_deterministic(rng, rand_model):
    data = encode(rng.integers(0, 256, (8, 8, 8), dtype=np.uint8), rand_model, CodecConfig(qs=0.01))
    assert decode(data, rand_model).tobytes() == decode(data, rand_model).tobytes()


def test_zero_postnet_leaves_reconstruction_unchanged(rng):
    m = random_model(11)
    m.store.values[m.store.prefixed("post")] = 0.0
    v = rng.integers(0, 256, (8, 8, 8), dtype=np.uint8)
    data = encode(v, m, CodecConfig(qs=0.03))
    _, qpyr = codec.decode_symbols_pyramid(data, m)
    pyr = qpyr.with_arrays([dequantize(b, 0.03) for b in qpyr.arrays])
    plain = codec.to_u8(m.transform().inverse(pyr))
    np.testing.assert_array_equal(decode(data, m), plain)


def test_rejects_non_u8(fresh_model):
    with pytest.raises(DomainError):
        encode(np.zeros((8, 8, 8)), fresh_model)


def test_wide_coefficients_escape(rng, fresh_model):
    # a tiny step on noise spreads symbols far beyond one table's width
    v = rng.integers(0, 256, (8, 8, 8), dtype=np.uint8)
    data = encode(v, fresh_model, CodecConfig(qs=1e-5))
    h = read_header(data)
    assert max(hi - lo + 1 for lo, hi in h.ranges) <= codec.MAX_TABLE_WIDTH
    assert psnr(v, decode(data, fresh_model)) == float("inf")


def test_psnr_falls_as_step_grows(rng):
    m = Model.create(seed=2)
    v = rng.integers(0, 256, (16, 16, 16), dtype=np.uint8)
    scores = [psnr(v, decode(encode(v, m, CodecConfig(qs=q)), m)) for q in (0.002, 0.01, 0.05)]
    assert scores[0] > scores[1] > scores[2]
