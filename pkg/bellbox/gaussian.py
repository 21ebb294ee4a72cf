"""
Standard-Gaussian special functions and the ζ* magnitude-matching constant.

Φ is ``scipy.special.ndtr`` (Cephes ``ndtr``, ½(1 + erf(v/√2)) with an erfc branch in the tails,
absolute error well below 1e-7). Φ⁻¹ is Acklam's rational approximation (relative error
≈1.15e-9) followed by one Newton step against that Φ, so tables built here agree with the Φ used
for code assignment.
"""

import logging
import math
from typing import Union

import numpy as np
from attr import field, frozen
from scipy.special import ndtr

from bellbox.errors import ConfigError, DomainError, InsufficientSamplesError

logger = logging.getLogger(__name__)

ArrayOrFloat = Union[float, np.ndarray]

# Monte-Carlo estimate of argmin_ζ E[(v - ζ(2Φ(v) - 1))²]; the exact minimiser is 3/√π ≈ 1.6926
ZETA_STAR = 1.694
# BBQ-Vision's fixed ζ for γ = ζσ
ZETA_VISION = 2.45

MIN_ZETA_SAMPLES = 10**6

_SQRT_2PI = math.sqrt(2.0 * math.pi)

_A = (
    -3.969683028665376e01,
    2.209460984245205e02,
    -2.759285104469687e02,
    1.383577518672690e02,
    -3.066479806614716e01,
    2.506628277459239e00,
)
_B = (
    -5.447609879822406e01,
    1.615858368580409e02,
    -1.556989798598866e02,
    6.680131188771972e01,
    -1.328068155288572e01,
)
_C = (
    -7.784894002430293e-03,
    -3.223964580411365e-01,
    -2.400758277161838e00,
    -2.549732539343734e00,
    4.374664141464968e00,
    2.938163982698783e00,
)
_D = (
    7.784695709041462e-03,
    3.224671290700398e-01,
    2.445134137142996e00,
    3.754408661907416e00,
)
_P_LOW = 0.02425


def _scalar_or_array(result: np.ndarray, like) -> ArrayOrFloat:
    return float(result) if np.ndim(like) == 0 else result


def phi(v: ArrayOrFloat) -> ArrayOrFloat:
    """Standard Gaussian CDF, element-wise."""
    return _scalar_or_array(ndtr(np.asarray(v, dtype=np.float64)), v)


def normal_pdf(v: ArrayOrFloat) -> ArrayOrFloat:
    arr = np.asarray(v, dtype=np.float64)
    return _scalar_or_array(np.exp(-0.5 * arr * arr) / _SQRT_2PI, v)


def _acklam(p: np.ndarray) -> np.ndarray:
    out = np.empty_like(p)

    low = p < _P_LOW
    high = p > 1.0 - _P_LOW
    mid = ~(low | high)

    if np.any(low):
        q = np.sqrt(-2.0 * np.log(p[low]))
        out[low] = (((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]) / (
            (((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0
        )
    if np.any(high):
        q = np.sqrt(-2.0 * np.log1p(-p[high]))
        out[high] = -(
            ((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]
        ) / ((((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0)
    if np.any(mid):
        q = p[mid] - 0.5
        r = q * q
        out[mid] = (
            (((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5]) * q
        ) / (((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1.0)
    return out


def phi_inv(p: ArrayOrFloat) -> ArrayOrFloat:
    """
    Inverse standard Gaussian CDF.

    :param p: probabilities strictly inside (0, 1).
    :raises DomainError: any p outside (0, 1).
    """
    arr = np.asarray(p, dtype=np.float64)
    if not np.all((arr > 0.0) & (arr < 1.0)):
        raise DomainError("phi_inv is defined on the open interval (0, 1)")

    x = _acklam(np.atleast_1d(arr).copy())
    # one Newton step pins the result to this module's Φ
    x = x - (ndtr(x) - np.atleast_1d(arr)) / (np.exp(-0.5 * x * x) / _SQRT_2PI)
    return _scalar_or_array(x.reshape(arr.shape), p)


def _check_bits(_instance, _attribute, value: int) -> None:
    if not 1 <= value <= 4:
        raise ConfigError(f"precision must be between 1 and 4 bits, got {value}")


@frozen
class InvCdfTable:
    """
    The 2^b bin boundaries Φ⁻¹(i/2^b), i = 0..2^b-1, with -inf standing in for Φ⁻¹(0).

    :param b: precision in bits.
    :param boundaries: strictly increasing, antisymmetric about the middle entry, which is 0.
    """

    b: int = field(validator=_check_bits)
    boundaries: tuple[float, ...]

    @property
    def num_bins(self) -> int:
        return 1 << self.b


def build_inv_cdf_table(b: int) -> InvCdfTable:
    """
    Pre-computes the boundaries used by the binary-search quantization kernel.

    Upper-half boundaries come from `phi_inv`; the lower half mirrors them so the table is exactly
    antisymmetric.

    :param b: precision in bits, 1..4.
    """
    if not 1 <= b <= 4:
        raise ConfigError(f"precision must be between 1 and 4 bits, got {b}")
    n = 1 << b
    half = n // 2
    upper = [float(phi_inv(i / n)) for i in range(half + 1, n)]
    lower = [-u for u in reversed(upper)]
    return InvCdfTable(b=b, boundaries=(-math.inf, *lower, 0.0, *upper))


def _check_positive(_instance, _attribute, value: float) -> None:
    if not value > 0:
        raise DomainError(f"zeta_star must be positive, got {value}")


@frozen
class ZetaEstimate:
    """
    :param zeta_star: minimiser of the Monte-Carlo MSE.
    :param mse_at_optimum: the Monte-Carlo MSE at ``zeta_star``.
    :param num_samples: number of standard-Gaussian draws.
    :param seed: generator seed.
    :param method: ``closed-form`` or ``gradient-descent``.
    """

    zeta_star: float = field(validator=_check_positive)
    mse_at_optimum: float
    num_samples: int
    seed: int
    method: str = "closed-form"

    def as_row(self) -> dict:
        return {
            "zeta_star": self.zeta_star,
            "mse_at_optimum": self.mse_at_optimum,
            "num_samples": self.num_samples,
            "seed": self.seed,
            "method": self.method,
        }


@frozen
class ZetaMoments:
    """Sufficient statistics of a Monte-Carlo draw: Σv², Σv·g, Σg² with g = 2Φ(v) - 1."""

    vv: float
    vg: float
    gg: float
    n: int

    def mse(self, zeta: float) -> float:
        return (self.vv - 2.0 * zeta * self.vg + zeta * zeta * self.gg) / self.n

    def mse_gradient(self, zeta: float) -> float:
        return 2.0 * (zeta * self.gg - self.vg) / self.n


def zeta_moments(num_samples: int, seed: int, chunk_size: int = 1 << 20) -> ZetaMoments:
    rng = np.random.default_rng(seed)
    vv = vg = gg = 0.0
    remaining = num_samples
    while remaining > 0:
        v = rng.standard_normal(min(chunk_size, remaining))
        g = 2.0 * ndtr(v) - 1.0
        vv += float(np.dot(v, v))
        vg += float(np.dot(v, g))
        gg += float(np.dot(g, g))
        remaining -= v.size
    return ZetaMoments(vv=vv, vg=vg, gg=gg, n=num_samples)


def gradient_descent_zeta(
    moments: ZetaMoments, zeta0: float = 1.0, lr: float = 1.0, steps: int = 200, tol: float = 1e-12
) -> float:
    zeta = zeta0
    for _ in range(steps):
        step = lr * moments.mse_gradient(zeta)
        zeta -= step
        if abs(step) < tol:
            break
    return zeta


def estimate_zeta_star(
    num_samples: int = 10**7, seed: int = 0, method: str = "closed-form"
) -> ZetaEstimate:
    """
    Minimises the Monte-Carlo estimate of E[(v - ζ(2Φ(v) - 1))²] for v ~ N(0, 1).

    For a fixed draw the objective is a parabola in ζ, so the closed form Σvg / Σg² is its exact
    minimiser; ``method="gradient-descent"`` walks the same parabola instead.

    :param num_samples: Monte-Carlo draws, at least 10^6.
    :param seed: generator seed; the estimate is deterministic given it.
    :param method: ``closed-form`` (default) or ``gradient-descent``.
    """
    if num_samples < MIN_ZETA_SAMPLES:
        raise InsufficientSamplesError(
            f"need at least {MIN_ZETA_SAMPLES} samples, got {num_samples}"
        )
    moments = zeta_moments(num_samples, seed)
    if method == "closed-form":
        zeta = moments.vg / moments.gg
    elif method == "gradient-descent":
        zeta = gradient_descent_zeta(moments)
    else:
        raise ConfigError(f"unknown zeta estimation method {method!r}")

    estimate = ZetaEstimate(
        zeta_star=zeta,
        mse_at_optimum=moments.mse(zeta),
        num_samples=num_samples,
        seed=seed,
        method=method,
    )
    logger.debug("zeta estimate %s", estimate)
    return estimate
