import itertools
import math
from enum import Enum
from typing import Optional

import numpy as np
from attr import Factory, define, field, frozen

from bellbox.errors import ConfigError, DomainError
from bellbox.gaussian import ZETA_STAR

# smallest σ treated as a real spread; below it the slice maps to v = 0
SIGMA_EPS = 1e-12

# γ given to a slice whose σ is zero
GAMMA_FLOOR = 1e-6


class Method(Enum):
    BBQ = "bbq"
    BBQ_FAST = "bbq-fast"
    LSQ = "lsq"
    QUEST = "quest"
    CODEBOOK = "codebook"

    @property
    def is_bbq(self) -> bool:
        return self in (Method.BBQ, Method.BBQ_FAST)


class Granularity(Enum):
    PER_CHANNEL = "per-channel"
    PER_TENSOR = "per-tensor"


def zero_point_for(b: int) -> float:
    """Zero point z per precision: 0 keeps zero representable at 3/4 bits, -0.5 keeps 1/2-bit
    codes symmetric."""
    return 0.0 if b >= 3 else -0.5


def code_values(b: int, z: float) -> tuple[float, ...]:
    """The 2^b codes ``i - 2^(b-1) - z`` in increasing order."""
    half = 1 << (b - 1)
    return tuple(float(i - half - z) for i in range(1 << b))


def _check_bits(_instance, _attribute, value: int) -> None:
    if not 1 <= value <= 4:
        raise ConfigError(f"precision must be between 1 and 4 bits, got {value}")


@frozen
class QuantConfig:
    """
    Shared quantizer configuration.

    :param b: precision in bits, 1..4.
    :param method: quantizer family.
    :param granularity: per-channel (one σ/γ per row) or per-tensor (one for everything).
    :param block_size: Hadamard block size H. Defaults to 128.
    :param z: zero point; defaults to 0 for b in {3, 4} and -0.5 for b in {1, 2}.
    :param use_hadamard: apply the block Hadamard transform. Defaults to True.
    :param use_rms: divide by the RMS σ. Defaults to True.
    """

    b: int = field(validator=_check_bits)
    method: Method = field(default=Method.BBQ, converter=Method)
    granularity: Granularity = field(default=Granularity.PER_TENSOR, converter=Granularity)
    block_size: int = 128
    z: float = field(default=Factory(lambda self: zero_point_for(self.b), takes_self=True))
    use_hadamard: bool = True
    use_rms: bool = True

    def __attrs_post_init__(self) -> None:
        if self.method.is_bbq and self.z != zero_point_for(self.b):
            raise ConfigError(
                f"BBQ at {self.b} bits uses zero point {zero_point_for(self.b)}, got {self.z}"
            )

    @property
    def num_bins(self) -> int:
        return 1 << self.b

    @property
    def half(self) -> int:
        return 1 << (self.b - 1)

    @property
    def codes(self) -> tuple[float, ...]:
        return code_values(self.b, self.z)


_scale_versions = itertools.count()


def _positive_gamma(g) -> np.ndarray:
    gamma = np.atleast_1d(np.asarray(g, np.float64))
    if not np.all(np.isfinite(gamma) & (gamma > 0)):
        raise DomainError(f"gamma must be positive and finite, got {gamma.tolist()}")
    return gamma


@define(eq=False)
class ScaleParam:
    """
    Learnable dequantization scale γ with its first-iteration RMS σ₀.

    :param gamma: one value per row (per-channel) or a single value (per-tensor).
    :param sigma0: σ measured when γ was initialised.
    :param d: number of elements each γ governs; the γ gradient is divided by √d.
    :param learnable: whether the optimizer updates γ.
    """

    gamma: np.ndarray = field(converter=_positive_gamma)
    sigma0: np.ndarray = field(converter=lambda s: np.atleast_1d(np.asarray(s, np.float64)))
    d: int
    learnable: bool = True
    version: int = field(factory=lambda: next(_scale_versions))

    @classmethod
    def from_sigma0(cls, sigma0, d: int, zeta: float = ZETA_STAR, learnable: bool = True):
        sigma0 = np.atleast_1d(np.asarray(sigma0, np.float64))
        return cls(gamma=zeta * sigma0, sigma0=sigma0, d=d, learnable=learnable)

    def update(self, gamma: np.ndarray) -> None:
        """Replaces γ in place and invalidates traces recorded against the previous value."""
        self.gamma = _positive_gamma(gamma)
        self.version = next(_scale_versions)


@define
class EmaState:
    """
    Exponential moving average of 1/σ kept by BBQ-Fast.

    :param e_inv_sigma: current E_{1/σ}; None until the first update.
    :param beta: decay. Defaults to 0.99.
    """

    e_inv_sigma: Optional[float] = None
    beta: float = 0.99

    @property
    def initialized(self) -> bool:
        return self.e_inv_sigma is not None

    def __attrs_post_init__(self) -> None:
        if self.e_inv_sigma is not None and not self.e_inv_sigma > 0:
            raise DomainError("E_{1/sigma} must be positive once initialised")


_trace_ids = itertools.count()


@define(eq=False)
class QuantizeTrace:
    """
    Values recorded by a quantizer forward pass for its backward pass.

    :param x_shape: shape of the quantized input.
    :param v: normalised values (HT(x)/σ for BBQ and QuEST, x/s for LSQ), as a (rows, cols) array.
    :param sigma: σ per group, broadcastable against ``v``.
    :param codes: code values q, shaped like ``v``.
    :param gamma: γ used by the forward pass, broadcastable against ``v``.
    :param scale_version: `ScaleParam.version` at forward time, None when γ was not a parameter.
    :param degenerate: per-group mask of slices whose σ fell below the floor.
    :param smooth: the floor was dropped, so ``codes`` are continuous.
    :param fixed_sigma: σ came from outside (BBQ-Fast's EMA), so no gradient flows through it.
    :param zeta: set when γ = ζσ was recomputed by the forward pass instead of read from a
        `ScaleParam`.
    """

    x_shape: tuple[int, ...]
    v: np.ndarray
    sigma: np.ndarray
    codes: np.ndarray
    gamma: np.ndarray
    scale_version: Optional[int]
    degenerate: np.ndarray
    smooth: bool = False
    fixed_sigma: bool = False
    zeta: Optional[float] = None
    trace_id: int = field(factory=lambda: next(_trace_ids))
    consumed: bool = False


def _check_positive_step(_instance, _attribute, value) -> None:
    if not np.all(np.asarray(value) > 0):
        raise ConfigError("LSQ step size s must be positive")


@frozen(eq=False)
class LsqConfig:
    """
    :param b: precision in bits; LSQ has no 1-bit mode.
    :param s: step size, scalar or one per row.
    :param granularity: how ``s`` broadcasts.
    """

    b: int = field(validator=_check_bits)
    s: np.ndarray = field(
        default=1.0,
        converter=lambda s: np.atleast_1d(np.asarray(s, np.float64)),
        validator=_check_positive_step,
    )
    granularity: Granularity = field(default=Granularity.PER_TENSOR, converter=Granularity)

    def __attrs_post_init__(self) -> None:
        if self.b < 2:
            raise ConfigError("LSQ does not support 1-bit quantization")

    @property
    def q_neg(self) -> int:
        return -(1 << (self.b - 1))

    @property
    def q_pos(self) -> int:
        return (1 << (self.b - 1)) - 1


@frozen
class QuestConfig:
    """
    :param b: precision in bits.
    :param alpha_star: Gaussian clip half-range in σ units; `None` takes the grid-search oracle.
    :param granularity: σ per row or per tensor.
    :param block_size: Hadamard block size H.
    :param use_hadamard: apply the block Hadamard transform.
    """

    b: int = field(validator=_check_bits)
    alpha_star: Optional[float] = None
    granularity: Granularity = field(default=Granularity.PER_TENSOR, converter=Granularity)
    block_size: int = 128
    use_hadamard: bool = True

    def __attrs_post_init__(self) -> None:
        if self.alpha_star is not None and not self.alpha_star > 0:
            raise ConfigError("alpha_star must be positive")

    @property
    def q_neg(self) -> int:
        return -(1 << (self.b - 1))

    @property
    def q_pos(self) -> int:
        return (1 << (self.b - 1)) - 1

    def resolved_alpha(self) -> float:
        if self.alpha_star is not None:
            return self.alpha_star
        from bellbox.quantizers.quest import alpha_star

        return alpha_star(self.b)

    @property
    def step(self) -> float:
        """Quantization step Δ = 2α*/(2^b - 1), in σ units."""
        return 2.0 * self.resolved_alpha() / ((1 << self.b) - 1)

    @property
    def trust_factor(self) -> float:
        """T = α*/(2^b - 1): half a step, in σ units."""
        return self.resolved_alpha() / ((1 << self.b) - 1)


def rows_view(shape: tuple[int, ...]) -> tuple[int, int]:
    """(rows, cols) view used for per-row statistics; rows cover every leading dimension."""
    return int(math.prod(shape[:-1])), shape[-1]
