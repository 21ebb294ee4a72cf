import numpy as np
import pytest

from bellbox.errors import ConfigError, DomainError
from bellbox.kernelsim.nibble_codec import Encoding
from bellbox.quantizers.bbq import bbq_forward
from bellbox.quantizers.codebook import (
    Codebook,
    build_nf_codebook,
    codebook_dequantize,
    codebook_quantize,
    identity_codebook,
)
from bellbox.quantizers.config import QuantConfig
from bellbox.tensorio import Tensor


@pytest.mark.parametrize("b", [1, 2, 3, 4])
def test_nf_codebook_is_symmetric_and_normalised(b):
    cb = build_nf_codebook(b)
    assert cb.b == b
    assert len(cb.values) == 1 << b
    assert max(abs(v) for v in cb.values) == 1.0
    assert cb.values == tuple(-v for v in reversed(cb.values))


def test_codebook_validation():
    with pytest.raises(ConfigError):
        Codebook((0.0, 1.0, 2.0))
    with pytest.raises(ConfigError):
        Codebook((1.0, 0.0))
    with pytest.raises(ConfigError):
        Codebook(tuple(range(32)))


def test_lookup():
    cb = Codebook((-1.0, -0.25, 0.25, 1.0))
    np.testing.assert_array_equal(cb.lookup(np.array([3, 0, 1])), [1.0, -1.0, -0.25])


def test_quantize_uses_raw_indices():
    x = Tensor.from_numpy(np.array([[-3.0, -0.1, 0.1, 3.0]]))
    qt = codebook_quantize(x, build_nf_codebook(2), 1.0)
    assert qt.encoding == Encoding.RAW_CODES
    np.testing.assert_array_equal(qt.indices(), [[0, 1, 2, 3]])
    cb = build_nf_codebook(2)
    np.testing.assert_allclose(codebook_dequantize(qt).to_numpy(np.float64), [cb.values], rtol=1e-6)


def test_dequantize_scales_by_sigma():
    x = Tensor.from_numpy(np.array([[3.0, -3.0], [0.5, -0.5]]))
    cb = Codebook((-1.0, 1.0))
    out = codebook_dequantize(codebook_quantize(x, cb, np.array([2.0, 4.0])))
    np.testing.assert_array_equal(out.to_numpy(), [[2.0, -2.0], [4.0, -4.0]])


def test_sigma_must_be_positive():
    with pytest.raises(DomainError):
        codebook_quantize(Tensor.from_numpy(np.ones((1, 4))), build_nf_codebook(2), 0.0)


def test_equal_frequencies_on_gaussian_input():
    x = np.random.default_rng(0).standard_normal((4096, 128))
    qt = codebook_quantize(Tensor.from_numpy(x), build_nf_codebook(3), 1.0)
    _, counts = np.unique(qt.indices(), return_counts=True)
    assert counts.size == 8
    assert np.all(np.abs(counts / x.size - 1 / 8) <= 0.005)


def test_identity_codebook_reproduces_bbq_codes():
    x = np.random.default_rng(1).standard_normal((2, 128))
    cfg = QuantConfig(b=3, use_hadamard=False, use_rms=False)
    _, trace = bbq_forward(x, cfg, zeta=1.0)
    qt = codebook_quantize(Tensor.from_numpy(x), identity_codebook(3, 0.0), 1.0)
    np.testing.assert_allclose(codebook_dequantize(qt).to_numpy(np.float64), trace.codes)
