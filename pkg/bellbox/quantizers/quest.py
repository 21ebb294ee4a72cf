"""
QuEST: Hadamard transform, RMS normalization, then a uniform quantizer whose clip range is
MSE-optimal for a standard Gaussian. Gradients are masked to elements whose quantization error
stays within the trust factor.
"""

import logging
from functools import lru_cache
from typing import Optional

import numpy as np
from scipy.special import ndtr

from bellbox.errors import ConfigError, StaleTraceError
from bellbox.gaussian import normal_pdf
from bellbox.hadamard import HadamardPlan, blocked_transform
from bellbox.kernelsim.quantized_tensor import QuantizedTensor, decode_codes, encode_codes
from bellbox.quantizers.bbq import group_rms
from bellbox.quantizers.config import (
    SIGMA_EPS,
    Method,
    QuantizeTrace,
    QuestConfig,
    rows_view,
)
from bellbox.tensorio import Tensor

logger = logging.getLogger(__name__)

# stands in for ±inf in the closed-form bin integrals; φ underflows to exactly 0 there
_FAR = 50.0


def gaussian_clip_mse(alphas: np.ndarray, b: int) -> np.ndarray:
    """
    E[(v - Q(v))²] for v ~ N(0, 1) and the 2^b-level uniform quantizer with clip half-range α.

    Level k sits at Δ(k + ½), Δ = 2α/(2^b - 1), and owns the interval [Δk, Δ(k+1)) with the
    outermost intervals extended to ±inf. Each bin integral is evaluated in closed form:
    ∫_lo^hi (v - c)² φ(v) dv = (1 + c²)(Φ(hi) - Φ(lo)) - (hi·φ(hi) - lo·φ(lo)) + 2c(φ(hi) - φ(lo)).
    """
    alphas = np.atleast_1d(np.asarray(alphas, dtype=np.float64))[:, None]
    half = 1 << (b - 1)
    ks = np.arange(-half, half, dtype=np.float64)[None, :]
    step = 2.0 * alphas / ((1 << b) - 1)

    centers = step * (ks + 0.5)
    lo = np.where(ks == -half, -_FAR, step * ks)
    hi = np.where(ks == half - 1, _FAR, step * (ks + 1.0))

    mass = ndtr(hi) - ndtr(lo)
    pdf_hi, pdf_lo = normal_pdf(hi), normal_pdf(lo)
    per_bin = (
        (1.0 + centers * centers) * mass
        - (hi * pdf_hi - lo * pdf_lo)
        + 2.0 * centers * (pdf_hi - pdf_lo)
    )
    return per_bin.sum(axis=1)


@lru_cache(maxsize=4)
def alpha_star(b: int) -> float:
    """
    MSE-optimal Gaussian clip half-range for b bits, by grid search.

    A 0.01 grid over [0.5, 5] locates the optimum, then a 0.001 grid around it refines it. The
    result is cached per precision.

    Example:
    ```python

    alpha_star(2)  # ≈ 1.4935
    ```
    """
    if not 1 <= b <= 4:
        raise ConfigError(f"precision must be between 1 and 4 bits, got {b}")
    coarse = np.round(np.arange(0.5, 5.0 + 1e-9, 0.01), 2)
    best = float(coarse[np.argmin(gaussian_clip_mse(coarse, b))])
    fine = np.round(np.arange(max(0.5, best - 0.01), min(5.0, best + 0.01) + 1e-9, 0.001), 3)
    result = float(fine[np.argmin(gaussian_clip_mse(fine, b))])
    logger.debug("alpha_star(%d) = %.3f", b, result)
    return result


def _transform(x2d: np.ndarray, cfg: QuestConfig) -> np.ndarray:
    if not cfg.use_hadamard:
        return np.array(x2d, dtype=np.float64)
    return blocked_transform(x2d, cfg.block_size)


def quest_forward(x: np.ndarray, cfg: QuestConfig) -> tuple[np.ndarray, QuantizeTrace]:
    """
    x̂ = HT(Δσ(q + ½)) with q = ⌊clip(HT(x)/(Δσ) - ½, -2^(b-1), 2^(b-1) - 1)⌉.

    The trace's ``v`` holds HT(x)/σ and ``gamma`` the per-group multiplier Δσ.
    """
    x = np.asarray(x, dtype=np.float64)
    if cfg.use_hadamard:
        HadamardPlan(cfg.block_size).check_divides(x.shape[-1])
    rows, cols = rows_view(x.shape)

    hx = _transform(x.reshape(rows, cols), cfg)
    sigma = group_rms(hx, cfg.granularity)
    degenerate = sigma < SIGMA_EPS
    u = hx * np.where(degenerate, 0.0, 1.0 / np.where(degenerate, 1.0, sigma))

    step = cfg.step
    codes = np.rint(np.clip(u / step - 0.5, cfg.q_neg, cfg.q_pos))
    multiplier = step * sigma
    x_hat = _transform(multiplier * (codes + 0.5), cfg)
    trace = QuantizeTrace(
        x_shape=x.shape,
        v=u,
        sigma=sigma,
        codes=codes,
        gamma=multiplier,
        scale_version=None,
        degenerate=degenerate,
        fixed_sigma=True,
    )
    return x_hat.reshape(x.shape), trace


def trust_mask(trace: QuantizeTrace, cfg: QuestConfig) -> np.ndarray:
    """Elements whose normalised error |HT(x)/σ - Δ(q + ½)| is within T = α*/(2^b - 1)."""
    error = np.abs(trace.v - cfg.step * (trace.codes + 0.5))
    return error <= cfg.trust_factor + 1e-12


def quest_backward_array(
    grad_out: np.ndarray, trace: QuantizeTrace, cfg: QuestConfig
) -> np.ndarray:
    """
    STE through the rounding with σ held constant: grad_x = HT(mask · HT(grad_out)).
    """
    if trace.consumed:
        raise StaleTraceError(f"trace {trace.trace_id} was already used by a backward pass")
    trace.consumed = True
    rows, cols = trace.v.shape
    g = np.asarray(grad_out, dtype=np.float64).reshape(rows, cols)
    masked = np.where(trust_mask(trace, cfg), _transform(g, cfg), 0.0)
    return _transform(masked, cfg).reshape(trace.x_shape)


def quest_quantize(
    x: Tensor, cfg: QuestConfig, plan: Optional[HadamardPlan] = None
) -> QuantizedTensor:
    """
    :param x: input; channel dimension divisible by the Hadamard block size.
    :param cfg: precision, clip scale and granularity.
    :param plan: optional Hadamard plan, checked against ``cfg.block_size``.
    """
    if plan is not None and plan.block_size != cfg.block_size:
        raise ConfigError(
            f"plan block size {plan.block_size} disagrees with config {cfg.block_size}"
        )
    _, trace = quest_forward(x.to_numpy(np.float64), cfg)
    return encode_codes(
        trace.codes.reshape(x.shape),
        b=cfg.b,
        z=0.0,
        scales=trace.gamma,
        method=Method.QUEST,
        block_size=cfg.block_size if cfg.use_hadamard else None,
    )


def quest_dequantize(qt: QuantizedTensor) -> Tensor:
    """HT(Δσ(q + ½)); the Hadamard transform is skipped when ``qt.block_size`` is unset."""
    rows, cols = rows_view(qt.shape)
    values = qt.scale_column() * (decode_codes(qt).reshape(rows, cols) + 0.5)
    if qt.block_size is not None:
        values = blocked_transform(values, qt.block_size)
    return Tensor.from_numpy(values.reshape(qt.shape))
