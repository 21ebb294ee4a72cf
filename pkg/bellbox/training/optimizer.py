import math
from enum import Enum
from typing import Optional

import numpy as np
from attr import define, field, frozen

from bellbox.errors import ConfigError
from bellbox.quantizers.config import ScaleParam

# scales stay strictly positive under any update
SCALE_FLOOR = 1e-8


class OptimizerKind(Enum):
    ADAM = "adam"
    SGD = "sgd"


@define(eq=False)
class Parameter:
    """
    A trainable array, or a view onto a `ScaleParam`'s values.

    :param name: unique name, used for checkpoints and optimizer state.
    :param data: the array, for ordinary parameters.
    :param scale: the scale parameter, for γ / LSQ step sizes.
    :param decay: whether weight decay applies; never for scales.
    """

    name: str
    data: Optional[np.ndarray] = None
    scale: Optional[ScaleParam] = None
    decay: bool = True
    grad: Optional[np.ndarray] = None

    @property
    def value(self) -> np.ndarray:
        return self.scale.gamma if self.scale is not None else self.data

    @property
    def trainable(self) -> bool:
        return self.scale is None or self.scale.learnable

    def assign(self, value: np.ndarray) -> None:
        if self.scale is not None:
            self.scale.update(np.maximum(value, SCALE_FLOOR))
        else:
            self.data[...] = value


@frozen
class OptimizerConfig:
    """
    :param kind: Adam with decoupled weight decay, or momentum SGD.
    :param lr: peak learning rate. Defaults to 1e-3.
    :param weight_decay: decay coefficient; skipped for scale parameters.
    :param momentum: SGD momentum.
    :param betas: Adam moment decays.
    :param eps: Adam denominator floor.
    :param warmup_fraction: share of iterations spent warming up linearly. Defaults to 10%.
    """

    kind: OptimizerKind = field(default=OptimizerKind.ADAM, converter=OptimizerKind)
    lr: float = 1e-3
    weight_decay: float = 0.0
    momentum: float = 0.9
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    warmup_fraction: float = 0.1

    def __attrs_post_init__(self) -> None:
        if self.lr < 0 or self.weight_decay < 0:
            raise ConfigError("learning rate and weight decay must be non-negative")
        if not 0.0 <= self.warmup_fraction < 1.0:
            raise ConfigError("warmup fraction must be in [0, 1)")


def cosine_lr(cfg: OptimizerConfig, iteration: int, total: int) -> float:
    """Linear warmup over the first ``warmup_fraction`` of iterations, then cosine decay to 0."""
    warmup = int(cfg.warmup_fraction * total)
    if iteration < warmup:
        return cfg.lr * (iteration + 1) / warmup
    span = max(1, total - warmup)
    progress = min(1.0, (iteration - warmup) / span)
    return cfg.lr * 0.5 * (1.0 + math.cos(math.pi * progress))


@define(eq=False)
class Optimizer:
    cfg: OptimizerConfig
    first: dict[str, np.ndarray] = field(factory=dict)
    second: dict[str, np.ndarray] = field(factory=dict)
    steps: int = 0

    def step(self, params: list[Parameter], lr: float) -> None:
        """Applies one update to every trainable parameter that has a gradient."""
        self.steps += 1
        for p in params:
            if p.grad is None or not p.trainable:
                continue
            if self.cfg.kind == OptimizerKind.ADAM:
                self._adam(p, lr)
            else:
                self._sgd(p, lr)

    def _adam(self, p: Parameter, lr: float) -> None:
        b1, b2 = self.cfg.betas
        value = p.value
        m = self.first.setdefault(p.name, np.zeros_like(value))
        v = self.second.setdefault(p.name, np.zeros_like(value))
        m[...] = b1 * m + (1.0 - b1) * p.grad
        v[...] = b2 * v + (1.0 - b2) * p.grad * p.grad
        m_hat = m / (1.0 - b1**self.steps)
        v_hat = v / (1.0 - b2**self.steps)
        update = m_hat / (np.sqrt(v_hat) + self.cfg.eps)
        if p.decay and p.scale is None:
            update = update + self.cfg.weight_decay * value
        p.assign(value - lr * update)

    def _sgd(self, p: Parameter, lr: float) -> None:
        value = p.value
        g = p.grad
        if p.decay and p.scale is None:
            g = g + self.cfg.weight_decay * value
        velocity = self.first.setdefault(p.name, np.zeros_like(value))
        velocity[...] = self.cfg.momentum * velocity + g
        p.assign(value - lr * velocity)
