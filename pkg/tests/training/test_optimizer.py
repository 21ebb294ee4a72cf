import numpy as np
import pytest

from bellbox.errors import ConfigError
from bellbox.quantizers.config import ScaleParam
from bellbox.training.optimizer import (
    SCALE_FLOOR,
    Optimizer,
    OptimizerConfig,
    OptimizerKind,
    Parameter,
    cosine_lr,
)


def test_warmup_then_cosine():
    cfg = OptimizerConfig(lr=1.0, warmup_fraction=0.1)
    assert cosine_lr(cfg, 0, 100) == pytest.approx(0.1)
    assert cosine_lr(cfg, 9, 100) == pytest.approx(1.0)
    assert cosine_lr(cfg, 10, 100) == pytest.approx(1.0)
    assert cosine_lr(cfg, 55, 100) == pytest.approx(0.5)
    assert cosine_lr(cfg, 100, 100) == pytest.approx(0.0)


def test_schedule_is_monotone_after_warmup():
    cfg = OptimizerConfig(lr=0.01, warmup_fraction=0.0)
    rates = [cosine_lr(cfg, i, 50) for i in range(50)]
    assert rates[0] == pytest.approx(0.01)
    assert all(a >= b for a, b in zip(rates, rates[1:]))


def test_sgd_applies_weight_decay():
    p = Parameter("w", data=np.array([1.0]))
    p.grad = np.array([0.0])
    opt = Optimizer(OptimizerConfig(kind="sgd", weight_decay=0.1))
    opt.step([p], lr=1.0)
    assert p.data[0] == pytest.approx(0.9)


def test_adam_first_step_moves_by_lr():
    p = Parameter("w", data=np.array([1.0, 1.0]))
    p.grad = np.array([3.0, -0.5])
    opt = Optimizer(OptimizerConfig(kind=OptimizerKind.ADAM))
    opt.step([p], lr=0.01)
    np.testing.assert_allclose(p.data, [0.99, 1.01], rtol=1e-6)


def test_scales_skip_weight_decay():
    scale = ScaleParam(gamma=[2.0], sigma0=[1.0], d=4)
    p = Parameter("s", scale=scale, decay=False)
    p.grad = np.array([0.0])
    Optimizer(OptimizerConfig(kind="sgd", weight_decay=0.5)).step([p], lr=1.0)
    assert scale.gamma[0] == 2.0


def test_scales_stay_positive():
    scale = ScaleParam(gamma=[0.1], sigma0=[1.0], d=4)
    version = scale.version
    p = Parameter("s", scale=scale, decay=False)
    p.grad = np.array([100.0])
    Optimizer(OptimizerConfig(kind="sgd", momentum=0.0)).step([p], lr=1.0)
    assert scale.gamma[0] == SCALE_FLOOR
    assert scale.version != version


def test_frozen_scale_and_missing_grad_are_skipped():
    scale = ScaleParam(gamma=[0.5], sigma0=[1.0], d=4, learnable=False)
    frozen = Parameter("s", scale=scale, decay=False)
    frozen.grad = np.array([1.0])
    untouched = Parameter("w", data=np.array([1.0]))
    Optimizer(OptimizerConfig(kind="sgd")).step([frozen, untouched], lr=1.0)
    assert scale.gamma[0] == 0.5
    assert untouched.data[0] == 1.0


@pytest.mark.parametrize(
    "kwargs", [{"lr": -1.0}, {"weight_decay": -0.1}, {"warmup_fraction": 1.0}]
)
def test_invalid_config(kwargs):
    with pytest.raises(ConfigError):
        OptimizerConfig(**kwargs)
