import math

import numpy as np
import pytest

from bellbox.errors import ConfigError, StaleTraceError
from bellbox.quantizers.config import Granularity, LsqConfig, Method, ScaleParam
from bellbox.quantizers.lsq import (
    lsq_backward_array,
    lsq_dequantize,
    lsq_forward,
    lsq_init_step,
    lsq_quantize,
)
from bellbox.tensorio import Tensor


def test_clips_at_upper_bound():
    x_hat, trace = lsq_forward(np.array([[100.0]]), LsqConfig(b=4, s=1.0))
    assert trace.codes.item() == 7
    assert x_hat.item() == 7


def test_clips_at_lower_bound():
    x_hat, trace = lsq_forward(np.array([[-10.0]]), LsqConfig(b=4, s=0.5))
    assert trace.codes.item() == -8
    assert x_hat.item() == -4


def test_rounds_half_to_even():
    _, trace = lsq_forward(np.array([[0.5, 1.5, -0.5, 2.5]]), LsqConfig(b=4, s=1.0))
    np.testing.assert_array_equal(trace.codes, [[0, 2, 0, 2]])


def test_one_bit_is_rejected():
    with pytest.raises(ConfigError):
        LsqConfig(b=1)
    with pytest.raises(ConfigError):
        lsq_init_step(np.ones(4), 1)


def test_step_must_be_positive():
    with pytest.raises(ConfigError):
        LsqConfig(b=4, s=0.0)


def test_init_step():
    x = np.array([[1.0, -1.0, 3.0, -3.0]])
    assert lsq_init_step(x, 4)[0] == pytest.approx(2 * 2.0 / math.sqrt(7))
    per_channel = lsq_init_step(np.array([[1.0, 1.0], [2.0, 2.0]]), 3, Granularity.PER_CHANNEL)
    np.testing.assert_allclose(per_channel, [2 / math.sqrt(3), 4 / math.sqrt(3)])
    assert lsq_init_step(np.zeros((2, 2)), 4)[0] == 1e-8


def test_gradients_pass_only_inside_range():
    cfg = LsqConfig(b=2, s=1.0)
    x = np.array([[-3.0, -0.4, 0.6, 3.0]])
    _, trace = lsq_forward(x, cfg)
    grad_x, grad_s = lsq_backward_array(np.ones_like(x), trace, cfg, step_grad_scaling=False)
    np.testing.assert_array_equal(grad_x, [[0.0, 1.0, 1.0, 0.0]])
    # clipped elements contribute their bound, in-range ones q - v
    assert grad_s[0] == pytest.approx(-2.0 + 0.4 + 0.4 + 1.0)


def test_step_gradient_scaling():
    cfg = LsqConfig(b=4, s=1.0)
    x = np.random.default_rng(0).standard_normal((4, 8)) * 3
    _, trace = lsq_forward(x, cfg)
    _, raw = lsq_backward_array(np.ones_like(x), trace, cfg, step_grad_scaling=False)
    _, trace = lsq_forward(x, cfg)
    _, scaled = lsq_backward_array(np.ones_like(x), trace, cfg)
    assert scaled[0] == pytest.approx(raw[0] / math.sqrt(32 * 7))


def test_trainable_step_versioning():
    cfg = LsqConfig(b=4, s=1.0)
    scale = ScaleParam(gamma=0.5, sigma0=0.5, d=4)
    x = np.ones((1, 4))
    x_hat, trace = lsq_forward(x, cfg, scale)
    np.testing.assert_array_equal(x_hat, [[1.0, 1.0, 1.0, 1.0]])
    scale.update(np.array([0.25]))
    with pytest.raises(StaleTraceError):
        lsq_backward_array(np.ones_like(x), trace, cfg, scale)


def test_quantize_round_trip():
    x = np.random.default_rng(2).standard_normal((4, 16))
    cfg = LsqConfig(b=4, s=0.25)
    qt = lsq_quantize(Tensor.from_numpy(x), cfg)
    assert qt.method == Method.LSQ
    assert qt.z == 0.0
    x_hat, _ = lsq_forward(x, cfg)
    np.testing.assert_allclose(lsq_dequantize(qt).to_numpy(np.float64), x_hat)
