import numpy as np
import pytest

from bellbox.errors import EncodingError, ShapeError
from bellbox.kernelsim.nibble_codec import (
    Encoding,
    codec_for,
    default_encoding,
    pack_nibbles,
    supports,
    unpack_nibbles,
)
from bellbox.quantizers.config import code_values, zero_point_for


# to update the snapshot, run:
#   poetry run pytest tests/kernelsim/test_nibble_codec.py --snapshot-update
def test_int4_value_table(snapshot):
    assert codec_for(Encoding.INT4).values == snapshot


def test_mxfp4_value_table(snapshot):
    assert codec_for(Encoding.MXFP4).values == snapshot


@pytest.mark.parametrize("encoding", [Encoding.INT4, Encoding.MXFP4])
def test_all_patterns_round_trip(encoding):
    codec = codec_for(encoding)
    patterns = np.arange(16, dtype=np.uint8)
    values = codec.decode(unpack_nibbles(pack_nibbles(patterns), 16))
    np.testing.assert_array_equal(codec.decode(codec.encode(values)), values)


def test_mxfp4_patterns():
    codec = codec_for(Encoding.MXFP4)
    assert codec.pattern_of(3.0) == 0b0101
    assert codec.pattern_of(-1.5) == 0b1011
    # the negative zero pattern is never emitted
    assert codec.pattern_of(0.0) == 0b0000


def test_int4_is_twos_complement():
    codec = codec_for(Encoding.INT4)
    for value in range(-8, 8):
        assert codec.pattern_of(float(value)) == value & 0x0F


def test_unrepresentable_value():
    with pytest.raises(EncodingError):
        codec_for(Encoding.MXFP4).encode(np.array([2.5]))


@pytest.mark.parametrize(
    "b, int4, mxfp4",
    [(4, True, False), (3, True, True), (2, False, True), (1, False, True)],
)
def test_code_set_representability(b, int4, mxfp4):
    z = zero_point_for(b)
    assert supports(Encoding.INT4, b, z) == int4
    assert supports(Encoding.MXFP4, b, z) == mxfp4
    assert supports(Encoding.RAW_CODES, b, z)


def test_default_encoding():
    assert default_encoding(4, 0.0) == Encoding.INT4
    assert default_encoding(3, 0.0) == Encoding.INT4
    assert default_encoding(2, -0.5) == Encoding.MXFP4
    assert default_encoding(4, -0.5) == Encoding.RAW_CODES


def test_code_values():
    assert code_values(2, -0.5) == (-1.5, -0.5, 0.5, 1.5)
    assert code_values(3, 0.0) == (-4.0, -3.0, -2.0, -1.0, 0.0, 1.0, 2.0, 3.0)


def test_pack_order():
    assert pack_nibbles(np.array([0x5, 0xC])) == b"\xc5"
    assert pack_nibbles(np.array([0x1, 0x2, 0x3])) == b"\x21\x03"
    np.testing.assert_array_equal(unpack_nibbles(b"\x21\x03", 3), [1, 2, 3])


def test_pack_rejects_wide_patterns():
    with pytest.raises(EncodingError):
        pack_nibbles(np.array([16]))


def test_unpack_checks_count():
    with pytest.raises(ShapeError):
        unpack_nibbles(b"\x00", 3)
