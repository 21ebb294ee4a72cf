import numpy as np
import pytest

from bellbox.errors import ConfigError, UninitializedEmaError
from bellbox.gaussian import build_inv_cdf_table
from bellbox.hadamard import HadamardPlan
from bellbox.kernelsim.kernel import quantize_kernel_sim
from bellbox.kernelsim.quantized_tensor import decode_codes
from bellbox.quantizers.bbq_fast import bbq_fast_quantize, bbq_fast_update, measure_sigma
from bellbox.quantizers.config import EmaState, Method, QuantConfig, ScaleParam
from bellbox.tensorio import Tensor


@pytest.fixture(scope="function")
def activations():
    yield np.random.default_rng(41).standard_normal((256, 512))


def run_kernel(x: np.ndarray, cfg: QuantConfig, ema: EmaState, scale=None):
    return quantize_kernel_sim(
        Tensor.from_numpy(x),
        HadamardPlan(cfg.block_size),
        build_inv_cdf_table(cfg.b),
        ema,
        cfg,
        scale,
    )


@pytest.mark.parametrize("b", [1, 2, 3, 4])
def test_kernel_matches_bbq_fast(activations, b):
    cfg = QuantConfig(b=b, method=Method.BBQ_FAST)
    sigma = measure_sigma(activations, cfg)
    ema = bbq_fast_update(EmaState(), sigma)
    scale = ScaleParam.from_sigma0(sigma, d=activations.size)

    kernel = run_kernel(activations, cfg, ema, scale)
    fast = bbq_fast_quantize(Tensor.from_numpy(activations), cfg, ema, scale=scale)
    assert kernel.packed == fast.packed
    assert kernel.encoding == fast.encoding
    assert kernel.method == Method.BBQ_FAST
    np.testing.assert_array_equal(kernel.scales, fast.scales)


def test_single_element_blocks():
    cfg = QuantConfig(b=3, block_size=1, method=Method.BBQ_FAST)
    x = np.array([[0.7, 0.4, -0.4, -2.0]])
    qt = run_kernel(x, cfg, EmaState(e_inv_sigma=1.0))
    np.testing.assert_array_equal(decode_codes(qt), [[2, 1, -2, -4]])


def test_same_weights_give_same_bytes(activations):
    cfg = QuantConfig(b=4, method=Method.BBQ_FAST)
    ema = bbq_fast_update(EmaState(), measure_sigma(activations, cfg))
    assert run_kernel(activations, cfg, ema).packed == run_kernel(activations, cfg, ema).packed


def test_hadamard_switch_is_honoured(activations):
    cfg = QuantConfig(b=3, method=Method.BBQ_FAST, use_hadamard=False)
    ema = bbq_fast_update(EmaState(), measure_sigma(activations, cfg))
    kernel = run_kernel(activations, cfg, ema)
    fast = bbq_fast_quantize(Tensor.from_numpy(activations), cfg, ema)
    assert kernel.packed == fast.packed
    rotated = run_kernel(activations, QuantConfig(b=3, method=Method.BBQ_FAST), ema)
    assert kernel.packed != rotated.packed


def test_kernel_needs_initialised_average(activations):
    with pytest.raises(UninitializedEmaError):
        run_kernel(activations, QuantConfig(b=3), EmaState())


def test_kernel_table_must_match(activations):
    with pytest.raises(ConfigError):
        quantize_kernel_sim(
            Tensor.from_numpy(activations),
            HadamardPlan(128),
            build_inv_cdf_table(2),
            EmaState(e_inv_sigma=1.0),
            QuantConfig(b=3),
        )


def test_kernel_plan_must_match(activations):
    with pytest.raises(ConfigError):
        quantize_kernel_sim(
            Tensor.from_numpy(activations),
            HadamardPlan(64),
            build_inv_cdf_table(3),
            EmaState(e_inv_sigma=1.0),
            QuantConfig(b=3),
        )


def test_kernel_rejects_non_bbq_config(activations):
    with pytest.raises(ConfigError):
        run_kernel(activations, QuantConfig(b=3, method=Method.LSQ), EmaState(e_inv_sigma=1.0))
