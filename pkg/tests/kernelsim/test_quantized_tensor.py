import json

import numpy as np
import pytest

from bellbox.errors import EncodingError, ShapeError, TensorFormatError
from bellbox.kernelsim.nibble_codec import Encoding
from bellbox.kernelsim.quantized_tensor import (
    QuantizedTensor,
    decode_codes,
    encode_codes,
    load_quantized,
    save_quantized,
)
from bellbox.quantizers.config import Granularity, Method


def test_encode_example():
    qt = encode_codes(np.array([[3.0, -2.0]]), b=3, z=0.0, encoding=Encoding.MXFP4)
    assert qt.packed == b"\xc5"
    np.testing.assert_array_equal(decode_codes(qt), [[3.0, -2.0]])


def test_two_bit_codes_use_mxfp4():
    qt = encode_codes(np.array([-1.5, 1.5]), b=2, z=-0.5)
    assert qt.encoding == Encoding.MXFP4
    assert qt.patterns()[0] == 0b1011


def test_raw_codes_store_bin_indices():
    codes = np.array([-7.5, 7.5, 0.5])
    qt = encode_codes(codes, b=4, z=-0.5)
    assert qt.encoding == Encoding.RAW_CODES
    np.testing.assert_array_equal(qt.patterns(), [0, 15, 8])
    np.testing.assert_array_equal(decode_codes(qt), codes)


def test_codes_outside_the_set_are_rejected():
    with pytest.raises(EncodingError):
        encode_codes(np.array([4.0]), b=3, z=0.0)
    with pytest.raises(EncodingError):
        encode_codes(np.array([0.5]), b=4, z=0.0, encoding=Encoding.MXFP4)


def test_odd_element_count_pads_the_last_byte():
    qt = encode_codes(np.array([1.0, 2.0, 3.0]), b=3, z=0.0)
    assert len(qt.packed) == 2
    np.testing.assert_array_equal(decode_codes(qt), [1.0, 2.0, 3.0])


def test_indices():
    qt = encode_codes(np.array([[-4.0, 3.0]]), b=3, z=0.0)
    np.testing.assert_array_equal(qt.indices(), [[0, 7]])


def test_validation():
    with pytest.raises(ShapeError):
        QuantizedTensor(shape=(4,), encoding="int4", packed=b"\x00", scales=1.0, b=4, z=0.0)
    with pytest.raises(ShapeError):
        QuantizedTensor(
            shape=(3, 2), encoding="int4", packed=b"\x00" * 3, scales=[1.0, 2.0], b=4, z=0.0
        )


def test_granularity():
    per_row = encode_codes(np.zeros((3, 2)), b=4, z=0.0, scales=[1.0, 2.0, 3.0])
    per_tensor = encode_codes(np.zeros((3, 2)), b=4, z=0.0, scales=0.5)
    assert per_row.granularity == Granularity.PER_CHANNEL
    assert per_tensor.granularity == Granularity.PER_TENSOR
    assert per_row.scale_column().shape == (3, 1)


def test_sidecar_round_trip(tmp_path):
    qt = encode_codes(
        np.array([[-1.0, 0.0], [1.0, -2.0]]),
        b=3,
        z=0.0,
        scales=[0.25, 0.5],
        method=Method.QUEST,
        block_size=2,
    )
    path = tmp_path / "w.q.bbqt"
    save_quantized(qt, path)
    sidecar = json.loads((tmp_path / "w.q.bbqt.json").read_text())
    assert sidecar["method"] == "quest"
    assert sidecar["encoding"] == "int4"

    back = load_quantized(path)
    assert back.shape == (2, 2)
    assert back.packed == qt.packed
    assert back.method == Method.QUEST
    assert back.block_size == 2
    np.testing.assert_array_equal(back.scales, [0.25, 0.5])


def test_missing_sidecar(tmp_path):
    qt = encode_codes(np.array([1.0, 2.0]), b=3, z=0.0)
    save_quantized(qt, tmp_path / "q.bbqt")
    (tmp_path / "q.bbqt.json").unlink()
    with pytest.raises(TensorFormatError):
        load_quantized(tmp_path / "q.bbqt")


def test_malformed_sidecar(tmp_path):
    qt = encode_codes(np.array([1.0, 2.0]), b=3, z=0.0)
    save_quantized(qt, tmp_path / "q.bbqt")
    (tmp_path / "q.bbqt.json").write_text(json.dumps({"method": "bbq"}))
    with pytest.raises(TensorFormatError):
        load_quantized(tmp_path / "q.bbqt")
