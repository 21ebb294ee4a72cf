"""BBQ-Fast: BBQ with the RMS reduction replaced by a running average of 1/σ."""

from typing import Optional

import numpy as np

from bellbox.errors import ConfigError, DomainError, UninitializedEmaError
from bellbox.hadamard import HadamardPlan
from bellbox.kernelsim.nibble_codec import Encoding
from bellbox.kernelsim.quantized_tensor import QuantizedTensor, encode_codes
from bellbox.quantizers.bbq import check_block, codes_from_v, group_rms, transform
from bellbox.quantizers.config import (
    EmaState,
    Granularity,
    Method,
    QuantConfig,
    QuantizeTrace,
    ScaleParam,
    rows_view,
)
from bellbox.tensorio import Tensor


def measure_sigma(x: np.ndarray, cfg: QuantConfig) -> float:
    """Per-tensor σ of HT(x), the quantity BBQ-Fast averages."""
    x = np.asarray(x, dtype=np.float64)
    check_block(x.shape, cfg)
    rows, cols = rows_view(x.shape)
    return float(group_rms(transform(x.reshape(rows, cols), cfg), Granularity.PER_TENSOR)[0, 0])


def bbq_fast_update(ema: EmaState, sigma: float) -> EmaState:
    """
    E ← β·E + (1 - β)·(1/σ), seeding E with 1/σ on first use.

    :raises DomainError: σ is not positive.
    """
    if not sigma > 0:
        raise DomainError(f"sigma must be positive, got {sigma}")
    inv = 1.0 / sigma
    if not ema.initialized:
        return EmaState(e_inv_sigma=inv, beta=ema.beta)
    return EmaState(e_inv_sigma=ema.beta * ema.e_inv_sigma + (1.0 - ema.beta) * inv, beta=ema.beta)


def _require_initialized(ema: EmaState) -> float:
    if not ema.initialized:
        raise UninitializedEmaError("BBQ-Fast needs at least one EMA update before quantizing")
    return float(ema.e_inv_sigma)


def bbq_fast_forward(
    x: np.ndarray,
    cfg: QuantConfig,
    ema: EmaState,
    gamma: np.ndarray,
) -> tuple[np.ndarray, QuantizeTrace]:
    """Array-level BBQ-Fast pass returning x̂ and a trace whose σ carries no gradient."""
    e_inv_sigma = _require_initialized(ema)
    x = np.asarray(x, dtype=np.float64)
    check_block(x.shape, cfg)
    rows, cols = rows_view(x.shape)

    v = transform(x.reshape(rows, cols), cfg) * e_inv_sigma
    codes = codes_from_v(v, cfg)
    gamma = np.asarray(gamma, dtype=np.float64).reshape(-1, 1)
    trace = QuantizeTrace(
        x_shape=x.shape,
        v=v,
        sigma=np.full((1, 1), 1.0 / e_inv_sigma),
        codes=codes,
        gamma=gamma,
        scale_version=None,
        degenerate=np.zeros((1, 1), dtype=bool),
        fixed_sigma=True,
    )
    return ((gamma / cfg.half) * codes).reshape(x.shape), trace


def bbq_fast_quantize(
    x: Tensor,
    cfg: QuantConfig,
    ema: EmaState,
    plan: Optional[HadamardPlan] = None,
    scale: Optional[ScaleParam] = None,
    encoding: Optional[Encoding] = None,
) -> QuantizedTensor:
    """
    Same codes as `bbq_quantize` with σ replaced by 1/E_{1/σ}; no RMS reduction is performed.

    :param ema: the running average; must have been updated at least once.
    :param scale: γ recorded as the dequantization scale. Defaults to γ = 1.
    :raises UninitializedEmaError: ``ema`` was never updated.
    :raises ConfigError: ``cfg`` is not a BBQ config, or ``plan`` disagrees with it.
    """
    if not cfg.method.is_bbq:
        raise ConfigError(f"bbq_fast_quantize needs a BBQ config, got {cfg.method.value}")
    if plan is not None:
        if plan.block_size != cfg.block_size:
            raise ConfigError(
                f"plan block size {plan.block_size} disagrees with config {cfg.block_size}"
            )
        plan.check_divides(x.shape[-1])
    gamma = scale.gamma if scale is not None else np.ones(1)
    _, trace = bbq_fast_forward(x.to_numpy(np.float64), cfg, ema, gamma)
    return encode_codes(
        trace.codes.reshape(x.shape),
        b=cfg.b,
        z=cfg.z,
        encoding=encoding,
        scales=gamma / cfg.half,
        method=Method.BBQ_FAST,
    )


def ema_code_agreement(x: np.ndarray, cfg: QuantConfig, ema: EmaState) -> float:
    """Fraction of elements whose EMA-based code equals the exact-σ code."""
    x = np.asarray(x, dtype=np.float64)
    rows, cols = rows_view(x.shape)
    hx = transform(x.reshape(rows, cols), cfg)
    sigma = float(group_rms(hx, Granularity.PER_TENSOR)[0, 0])
    exact = codes_from_v(hx * (1.0 / sigma), cfg)
    fast = codes_from_v(hx * _require_initialized(ema), cfg)
    return float(np.mean(exact == fast))
