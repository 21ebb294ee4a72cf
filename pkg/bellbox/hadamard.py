import math
from functools import lru_cache

import numpy as np
from attr import field, frozen

from bellbox.errors import ConfigError, ShapeError
from bellbox.tensorio import Tensor


def is_power_of_two(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


def _check_block_size(_instance, _attribute, value: int) -> None:
    if not is_power_of_two(value):
        raise ConfigError(f"Hadamard block size must be a power of two, got {value}")


@frozen
class HadamardPlan:
    """
    Block-wise orthonormal Hadamard transform along the last (input-channel) dimension.

    :param block_size: H, the number of contiguous elements transformed together. Defaults to 128.
    """

    block_size: int = field(default=128, converter=int, validator=_check_block_size)

    @property
    def normalization(self) -> float:
        return 1.0 / math.sqrt(self.block_size)

    def check_divides(self, last_dim: int) -> None:
        if last_dim % self.block_size:
            raise ShapeError(
                f"last dimension {last_dim} is not divisible by block size {self.block_size}"
            )


@lru_cache(maxsize=16)
def _sylvester(block_size: int) -> np.ndarray:
    signs = np.ones((1, 1))
    while signs.shape[0] < block_size:
        signs = np.block([[signs, signs], [signs, -signs]])
    matrix = signs / math.sqrt(block_size)
    matrix.setflags(write=False)
    return matrix


def hadamard_matrix_array(block_size: int) -> np.ndarray:
    if not is_power_of_two(block_size):
        raise ConfigError(f"Hadamard size must be a power of two, got {block_size}")
    return _sylvester(block_size)


def hadamard_matrix(H: int) -> Tensor:  # noqa: N803
    """
    Sylvester Hadamard matrix scaled to be orthonormal.

    Entry (i, j) is ``(-1)**popcount(i & j) / sqrt(H)``.
    """
    return Tensor.from_numpy(hadamard_matrix_array(H))


def blocked_transform(x: np.ndarray, block_size: int) -> np.ndarray:
    """
    Fast Walsh-Hadamard butterfly over every H-element slice of the last axis, float64 in and out.
    """
    if not is_power_of_two(block_size):
        raise ConfigError(f"Hadamard block size must be a power of two, got {block_size}")
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] % block_size:
        raise ShapeError(
            f"last dimension {x.shape[-1]} is not divisible by block size {block_size}"
        )
    out = x.reshape(-1, block_size).copy()
    h = 1
    while h < block_size:
        pairs = out.reshape(out.shape[0], block_size // (2 * h), 2, h)
        a = pairs[:, :, 0, :].copy()
        b = pairs[:, :, 1, :]
        pairs[:, :, 0, :] += b
        pairs[:, :, 1, :] = a - b
        h *= 2
    out *= 1.0 / math.sqrt(block_size)
    return out.reshape(x.shape)


def fwht_blocked(x: Tensor, plan: HadamardPlan) -> Tensor:
    """
    Replaces every contiguous H-element slice of the last dimension by its orthonormal
    Walsh-Hadamard transform. The transform is its own inverse.

    :param x: input tensor; its last dimension must be divisible by ``plan.block_size``.
    :param plan: the block size.
    """
    plan.check_divides(x.shape[-1])
    return Tensor.from_numpy(blocked_transform(x.to_numpy(np.float64), plan.block_size))
