import numpy as np
import pytest

from bellbox.errors import ConfigError, EncodingError, ShapeError
from bellbox.kernelsim.matmul import MacCounts, dense_reference, lowprec_matmul
from bellbox.kernelsim.nibble_codec import Encoding
from bellbox.kernelsim.quantized_tensor import encode_codes
from bellbox.quantizers.config import Method


def test_single_element_example():
    a = encode_codes(np.array([[3.0]]), b=3, z=0.0, scales=0.25)
    w = encode_codes(np.array([[-2.0]]), b=3, z=0.0, scales=0.25)
    assert lowprec_matmul(a, w).to_numpy().item() == -0.375


@pytest.mark.parametrize("case", range(10))
def test_int4_matches_dense_reference(case):
    rng = np.random.default_rng(case)
    qa = rng.integers(-8, 8, size=(64, 128)).astype(np.float64)
    qw = rng.integers(-8, 8, size=(64, 128)).astype(np.float64)
    a = encode_codes(qa, 4, 0.0, Encoding.INT4, scales=rng.uniform(0.01, 1.0))
    w = encode_codes(qw, 4, 0.0, Encoding.INT4, scales=rng.uniform(0.01, 1.0, 64))
    got = lowprec_matmul(a, w).to_numpy(np.float64)
    np.testing.assert_allclose(got, dense_reference(a, w), rtol=2.0**-23, atol=1e-12)


def test_integer_accumulation_is_exact():
    qa = np.full((1, 4096), -8.0)
    a = encode_codes(qa, 4, 0.0, Encoding.INT4)
    w = encode_codes(qa, 4, 0.0, Encoding.INT4)
    assert lowprec_matmul(a, w).to_numpy().item() == 64 * 4096


def test_mxfp4_path():
    rng = np.random.default_rng(0)
    codes = np.array([-1.5, -0.5, 0.5, 1.5])
    qa = rng.choice(codes, size=(8, 32))
    qw = rng.choice(codes, size=(4, 32))
    a = encode_codes(qa, 2, -0.5, scales=0.5)
    w = encode_codes(qw, 2, -0.5, scales=np.arange(1.0, 5.0))
    assert a.encoding == Encoding.MXFP4
    np.testing.assert_allclose(
        lowprec_matmul(a, w).to_numpy(np.float64), dense_reference(a, w), rtol=1e-6
    )


def test_shape_checks():
    a = encode_codes(np.zeros((2, 4)), 4, 0.0)
    with pytest.raises(ShapeError):
        lowprec_matmul(a, encode_codes(np.zeros((2, 8)), 4, 0.0))
    with pytest.raises(ShapeError):
        lowprec_matmul(encode_codes(np.zeros(4), 4, 0.0), a)


def test_encoding_checks():
    a = encode_codes(np.zeros((2, 4)), 3, 0.0, Encoding.INT4)
    w = encode_codes(np.zeros((2, 4)), 3, 0.0, Encoding.MXFP4)
    with pytest.raises(EncodingError):
        lowprec_matmul(a, w)
    raw = encode_codes(np.zeros((2, 4)), 3, 0.0, Encoding.RAW_CODES)
    with pytest.raises(EncodingError):
        lowprec_matmul(raw, raw)


def test_non_linear_methods_are_rejected():
    q = encode_codes(np.zeros((2, 4)), 4, 0.0, method=Method.QUEST)
    with pytest.raises(ConfigError):
        lowprec_matmul(q, q)


def test_mac_counts():
    macs = MacCounts(m=64, k=128, n=32)
    assert macs.macs == 64 * 128 * 32
    assert macs.epilogue == 2 * 64 * 32
    assert macs.operand_bytes(4) == (64 + 32) * 64
    assert macs.operand_bytes(32) == 8 * macs.operand_bytes(4)


def test_odd_depth_pads_packed_rows():
    assert MacCounts(m=1, k=3, n=1).operand_bytes(4) == 2 * 2
