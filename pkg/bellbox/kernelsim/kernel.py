"""
CPU rendition of the fused inference quantization kernel: Hadamard multiply, scale by the
running 1/σ, binary search against pre-computed Φ⁻¹ boundaries, then nibble packing.
"""

import logging
from typing import Optional

import numpy as np

from bellbox.errors import ConfigError, UninitializedEmaError
from bellbox.gaussian import InvCdfTable
from bellbox.hadamard import HadamardPlan, hadamard_matrix_array
from bellbox.kernelsim.binsearch import binsearch_indices
from bellbox.kernelsim.nibble_codec import Encoding
from bellbox.kernelsim.quantized_tensor import QuantizedTensor, encode_codes
from bellbox.quantizers.config import EmaState, Method, QuantConfig, ScaleParam, rows_view
from bellbox.tensorio import Tensor

logger = logging.getLogger(__name__)


def quantize_kernel_sim(
    x: Tensor,
    plan: HadamardPlan,
    table: InvCdfTable,
    ema: EmaState,
    cfg: QuantConfig,
    scale: Optional[ScaleParam] = None,
    encoding: Optional[Encoding] = None,
) -> QuantizedTensor:
    """
    Quantizes ``x`` the way the fused kernel would, block by block.

    :param x: activations or weights; last dimension divisible by ``plan.block_size``.
    :param plan: Hadamard block size H; the H x H matrix is applied as an explicit product unless
        ``cfg.use_hadamard`` is off.
    :param table: Φ⁻¹ boundaries for ``cfg.b``.
    :param ema: running E_{1/σ}; for offline weight quantization seed it with the exact 1/σ.
    :param cfg: precision and zero point; must be a BBQ method.
    :param scale: γ recorded on the result. Defaults to γ = 1.
    :param encoding: nibble encoding; defaults per the code set.
    """
    if not cfg.method.is_bbq:
        raise ConfigError(f"the kernel quantizes BBQ codes, got {cfg.method.value}")
    if not ema.initialized:
        raise UninitializedEmaError("the kernel needs an initialised E_{1/sigma}")
    if table.b != cfg.b:
        raise ConfigError(f"table built for {table.b} bits, config asks for {cfg.b}")
    if plan.block_size != cfg.block_size:
        raise ConfigError(
            f"plan block size {plan.block_size} disagrees with config {cfg.block_size}"
        )
    plan.check_divides(x.shape[-1])

    rows, cols = rows_view(x.shape)
    h = plan.block_size
    blocks = x.to_numpy(np.float64).reshape(rows, cols // h, h)
    if cfg.use_hadamard:
        blocks = blocks @ hadamard_matrix_array(h)
    xh = blocks.reshape(rows, cols)

    indices = binsearch_indices(xh * float(ema.e_inv_sigma), table)
    codes = indices - cfg.half - cfg.z
    gamma = scale.gamma if scale is not None else np.ones(1)
    logger.debug("kernel quantized %d elements in %d blocks", rows * cols, rows * cols // h)
    return encode_codes(
        codes.reshape(x.shape),
        b=cfg.b,
        z=cfg.z,
        encoding=encoding,
        scales=gamma / cfg.half,
        method=Method.BBQ_FAST,
    )
