"""
BBQ: block Hadamard transform, RMS normalization, then the Gaussian CDF as a probability
integral transform, so every one of the 2^b codes is used equally often on Gaussian data.

The array-level functions (`bbq_forward`, `bbq_backward_array`) work on float64 NumPy arrays and
are what the training loop calls; `bbq_quantize` / `bbq_dequantize` / `bbq_backward` are the
`Tensor` surface.
"""

import math
from typing import Optional

import numpy as np
from scipy.special import ndtr

from bellbox.errors import ConfigError, ShapeError, StaleTraceError
from bellbox.gaussian import normal_pdf
from bellbox.hadamard import HadamardPlan, blocked_transform
from bellbox.kernelsim.nibble_codec import Encoding
from bellbox.kernelsim.quantized_tensor import QuantizedTensor, decode_codes, encode_codes
from bellbox.quantizers.config import (
    SIGMA_EPS,
    Granularity,
    QuantConfig,
    QuantizeTrace,
    ScaleParam,
    rows_view,
)
from bellbox.tensorio import Tensor


def transform(x2d: np.ndarray, cfg: QuantConfig) -> np.ndarray:
    """HT along the last axis, or a float64 copy when the Hadamard stage is switched off."""
    if not cfg.use_hadamard:
        return np.array(x2d, dtype=np.float64)
    return blocked_transform(x2d, cfg.block_size)


def group_rms(hx: np.ndarray, granularity: Granularity) -> np.ndarray:
    """σ = sqrt(mean(HT(x)²)) per row, or over everything, as a column broadcastable to ``hx``."""
    if granularity == Granularity.PER_CHANNEL:
        return np.sqrt(np.mean(hx * hx, axis=1, keepdims=True))
    return np.full((1, 1), math.sqrt(float(np.mean(hx * hx))))


def normalize(hx: np.ndarray, sigma: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """
    v = HT(x) · (1/σ), with slices whose σ is below the floor mapped to v = 0.

    Multiplying by the reciprocal keeps the result bit-identical to BBQ-Fast seeded with 1/σ.
    """
    degenerate = sigma < SIGMA_EPS
    inv_sigma = np.where(degenerate, 0.0, 1.0 / np.where(degenerate, 1.0, sigma))
    return hx * inv_sigma, degenerate


def bin_index(v: np.ndarray, b: int) -> np.ndarray:
    """clamp(⌊2^b Φ(v)⌋, 0, 2^b - 1); the clamp catches Φ(v) rounding to 1.0."""
    n = 1 << b
    return np.clip(np.floor(n * ndtr(v)), 0, n - 1)


def codes_from_v(v: np.ndarray, cfg: QuantConfig, smooth: bool = False) -> np.ndarray:
    """Codes q = ⌊2^b Φ(v)⌋ - 2^(b-1) - z; ``smooth`` drops the floor."""
    if smooth:
        return cfg.num_bins * ndtr(v) - cfg.half - cfg.z
    return bin_index(v, cfg.b) - cfg.half - cfg.z


def check_block(shape: tuple[int, ...], cfg: QuantConfig) -> None:
    if cfg.use_hadamard:
        HadamardPlan(cfg.block_size).check_divides(shape[-1])


def _check_scale(scale: ScaleParam, rows: int, cfg: QuantConfig) -> np.ndarray:
    expected = rows if cfg.granularity == Granularity.PER_CHANNEL else 1
    if scale.gamma.size != expected:
        raise ShapeError(f"{scale.gamma.size} gamma values for {expected} groups")
    return scale.gamma.reshape(-1, 1)


def bbq_forward(
    x: np.ndarray,
    cfg: QuantConfig,
    scale: Optional[ScaleParam] = None,
    zeta: Optional[float] = None,
    smooth: bool = False,
) -> tuple[np.ndarray, QuantizeTrace]:
    """
    Quantizes and dequantizes ``x`` in one pass, returning x̂ = (γ/2^(b-1))·q and the trace.

    :param x: input values; the last axis is the channel axis quantized in H-blocks.
    :param cfg: precision, granularity and ablation switches.
    :param scale: learnable γ. Mutually exclusive with ``zeta``.
    :param zeta: recompute γ = ζσ on this pass instead of reading a parameter (vision mode).
    :param smooth: drop the floor so the output is differentiable everywhere.
    """
    if (scale is None) == (zeta is None):
        raise ConfigError("pass exactly one of scale or zeta")
    x = np.asarray(x, dtype=np.float64)
    check_block(x.shape, cfg)
    rows, cols = rows_view(x.shape)

    hx = transform(x.reshape(rows, cols), cfg)
    if cfg.use_rms:
        sigma = group_rms(hx, cfg.granularity)
    else:
        sigma = np.ones((rows if cfg.granularity == Granularity.PER_CHANNEL else 1, 1))
    v, degenerate = normalize(hx, sigma)
    codes = codes_from_v(v, cfg, smooth)

    if scale is not None:
        gamma = _check_scale(scale, rows, cfg)
        version: Optional[int] = scale.version
    else:
        gamma = zeta * sigma
        version = None

    x_hat = (gamma / cfg.half) * codes
    trace = QuantizeTrace(
        x_shape=x.shape,
        v=v,
        sigma=sigma,
        codes=codes,
        gamma=gamma,
        scale_version=version,
        degenerate=degenerate,
        smooth=smooth,
        zeta=zeta,
    )
    return x_hat.reshape(x.shape), trace


def _group_sum(a: np.ndarray, granularity: Granularity) -> np.ndarray:
    if granularity == Granularity.PER_CHANNEL:
        return a.sum(axis=1, keepdims=True)
    return np.full((1, 1), float(a.sum()))


def _group_mean(a: np.ndarray, granularity: Granularity) -> np.ndarray:
    if granularity == Granularity.PER_CHANNEL:
        return a.mean(axis=1, keepdims=True)
    return np.full((1, 1), float(a.mean()))


def bbq_backward_array(
    grad_out: np.ndarray,
    trace: QuantizeTrace,
    cfg: QuantConfig,
    scale: Optional[ScaleParam] = None,
    gamma_grad_scaling: bool = True,
) -> tuple[np.ndarray, Optional[np.ndarray]]:
    """
    Straight-through backward pass: the floor is the identity, everything else is differentiated
    exactly, including σ's dependence on HT(x) and (in vision mode) γ's dependence on σ.

    :returns: gradient w.r.t. ``x`` and, when γ is a parameter, w.r.t. each γ (divided by √d
        unless ``gamma_grad_scaling`` is off).
    :raises StaleTraceError: the trace was already consumed or γ changed since the forward pass.
    """
    if trace.consumed:
        raise StaleTraceError(f"trace {trace.trace_id} was already used by a backward pass")
    if scale is not None and trace.scale_version != scale.version:
        raise StaleTraceError(f"trace {trace.trace_id} predates the current gamma")
    trace.consumed = True

    rows, cols = trace.v.shape
    g = np.asarray(grad_out, dtype=np.float64).reshape(rows, cols)
    v = trace.v

    gv = g * (2.0 * trace.gamma) * normal_pdf(v)
    if cfg.use_rms and not trace.fixed_sigma:
        gu = (gv - v * _group_mean(gv * v, cfg.granularity)) / np.where(
            trace.degenerate, 1.0, trace.sigma
        )
    else:
        gu = gv / np.where(trace.degenerate, 1.0, trace.sigma)

    per_group = _group_sum(g * trace.codes, cfg.granularity) / cfg.half
    if trace.zeta is not None and cfg.use_rms and not trace.fixed_sigma:
        d = cols if cfg.granularity == Granularity.PER_CHANNEL else rows * cols
        gu = gu + trace.zeta * per_group * v / d
    gu = np.where(trace.degenerate, 0.0, gu)

    grad_x = transform(gu, cfg).reshape(trace.x_shape)

    if trace.zeta is not None:
        return grad_x, None
    grad_gamma = per_group.reshape(-1)
    if gamma_grad_scaling and scale is not None:
        grad_gamma = grad_gamma / math.sqrt(scale.d)
    return grad_x, grad_gamma


def bbq_quantize(
    x: Tensor,
    cfg: QuantConfig,
    scale: ScaleParam,
    plan: Optional[HadamardPlan] = None,
    encoding: Optional[Encoding] = None,
) -> tuple[QuantizedTensor, QuantizeTrace]:
    """
    Quantizes a tensor to packed BBQ codes.

    :param x: input; channel dimension divisible by the Hadamard block size.
    :param cfg: precision and granularity.
    :param scale: γ, one per row for per-channel or one value for per-tensor.
    :param plan: Hadamard block size; defaults to ``cfg.block_size``.
    :param encoding: nibble encoding; defaults to INT4 where the code set fits, else MXFP4.

    Example:
    ```python

    cfg = QuantConfig(b=3)
    scale = ScaleParam.from_sigma0(1.0, d=128)
    qt, trace = bbq_quantize(Tensor.from_numpy(x), cfg, scale)
    ```
    """
    if not cfg.method.is_bbq:
        raise ConfigError(f"bbq_quantize needs a BBQ config, got {cfg.method.value}")
    if plan is not None and plan.block_size != cfg.block_size:
        raise ConfigError(
            f"plan block size {plan.block_size} disagrees with config {cfg.block_size}"
        )
    _, trace = bbq_forward(x.to_numpy(np.float64), cfg, scale=scale)
    qt = encode_codes(
        trace.codes.reshape(x.shape),
        b=cfg.b,
        z=cfg.z,
        encoding=encoding,
        scales=scale.gamma / cfg.half,
        method=cfg.method,
    )
    return qt, trace


def bbq_dequantize(
    qt: QuantizedTensor, cfg: QuantConfig, scale: Optional[ScaleParam] = None
) -> Tensor:
    """
    x̂ = (γ / 2^(b-1)) · q. The Hadamard transform is not undone.

    :param scale: overrides the γ recorded in ``qt``.
    """
    rows, cols = rows_view(qt.shape)
    codes = decode_codes(qt).reshape(rows, cols)
    multiplier = qt.scale_column() if scale is None else scale.gamma.reshape(-1, 1) / cfg.half
    return Tensor.from_numpy((multiplier * codes).reshape(qt.shape))


def bbq_backward(
    grad_out: Tensor,
    trace: QuantizeTrace,
    cfg: QuantConfig,
    scale: ScaleParam,
    gamma_grad_scaling: bool = True,
) -> tuple[Tensor, np.ndarray]:
    if grad_out.shape != trace.x_shape:
        raise ShapeError(f"gradient shape {grad_out.shape} != input shape {trace.x_shape}")
    grad_x, grad_gamma = bbq_backward_array(
        grad_out.to_numpy(np.float64), trace, cfg, scale, gamma_grad_scaling
    )
    return Tensor.from_numpy(grad_x), grad_gamma
