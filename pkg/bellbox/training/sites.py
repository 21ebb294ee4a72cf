"""
Quantization sites: one per quantized weight matrix and one per quantized layer input.

A site owns the quantizer state for its tensor (γ or the LSQ step, the BBQ-Fast EMA) and routes
forward and backward calls to the matching quantizer.
"""

import json
import logging
from enum import Enum
from typing import Optional

import numpy as np
from attr import define, field

from bellbox.errors import ConfigError
from bellbox.gaussian import build_inv_cdf_table
from bellbox.kernelsim.binsearch import binsearch_indices
from bellbox.kernelsim.quantized_tensor import QuantizedTensor
from bellbox.quantizers.bbq import (
    bbq_backward_array,
    bbq_forward,
    bbq_quantize,
    group_rms,
    normalize,
    transform,
)
from bellbox.quantizers.bbq_fast import bbq_fast_forward, bbq_fast_update
from bellbox.quantizers.config import (
    GAMMA_FLOOR,
    SIGMA_EPS,
    EmaState,
    Granularity,
    LsqConfig,
    Method,
    QuantConfig,
    QuantizeTrace,
    QuestConfig,
    ScaleParam,
    rows_view,
)
from bellbox.quantizers.lsq import lsq_backward_array, lsq_forward, lsq_init_step, lsq_quantize
from bellbox.quantizers.quest import quest_backward_array, quest_forward, quest_quantize
from bellbox.tensorio import Tensor

logger = logging.getLogger(__name__)

TRAINABLE_METHODS = (Method.BBQ, Method.BBQ_FAST, Method.LSQ, Method.QUEST)


class SiteKind(Enum):
    WEIGHT = "weight"
    ACTIVATION = "activation"


@define(eq=False)
class QuantSite:
    """
    :param name: site name, e.g. ``ql1.weight``.
    :param kind: weights get per-output-channel scales, activations one per tensor.
    :param method: quantizer; None leaves the tensor in full precision.
    :param b: precision in bits.
    :param block_size: Hadamard block size.
    :param vision_zeta: when set, γ = ζσ is recomputed on every pass instead of learned.
    :param use_hadamard: Hadamard ablation switch.
    :param use_rms: RMS ablation switch.
    """

    name: str
    kind: SiteKind
    method: Optional[Method]
    b: int
    block_size: int = 128
    vision_zeta: Optional[float] = None
    use_hadamard: bool = True
    use_rms: bool = True
    scale: Optional[ScaleParam] = None
    ema: EmaState = field(factory=EmaState)

    def __attrs_post_init__(self) -> None:
        if self.method is not None and self.method not in TRAINABLE_METHODS:
            raise ConfigError(f"{self.method.value} is not a training method")
        if self.vision_zeta is not None and not (self.method and self.method.is_bbq):
            raise ConfigError("vision mode applies to BBQ methods only")

    @property
    def granularity(self) -> Granularity:
        if self.kind == SiteKind.WEIGHT:
            return Granularity.PER_CHANNEL
        return Granularity.PER_TENSOR

    @property
    def quantized(self) -> bool:
        return self.method is not None

    @property
    def has_scale_param(self) -> bool:
        return self.method in (Method.BBQ, Method.BBQ_FAST, Method.LSQ) and self.vision_zeta is None

    def quant_config(self) -> QuantConfig:
        return QuantConfig(
            b=self.b,
            method=self.method,
            granularity=self.granularity,
            block_size=self.block_size,
            use_hadamard=self.use_hadamard,
            use_rms=self.use_rms,
        )

    def lsq_config(self) -> LsqConfig:
        return LsqConfig(b=self.b, s=self.scale.gamma, granularity=self.granularity)

    def quest_config(self) -> QuestConfig:
        return QuestConfig(
            b=self.b,
            granularity=self.granularity,
            block_size=self.block_size,
            use_hadamard=self.use_hadamard,
        )

    def init_scale(
        self, x: np.ndarray, zeta_star: float, init_gamma: bool = True, learnable: bool = True
    ) -> None:
        """
        γ := ζ*·σ₀ from the first tensor this site sees (σ₀ per its granularity), or the LSQ step
        initialisation. Channels with σ₀ = 0 get γ = 1e-6 and a warning.
        """
        if not self.has_scale_param:
            return
        x = np.asarray(x, dtype=np.float64)
        rows, cols = rows_view(x.shape)
        d = cols if self.granularity == Granularity.PER_CHANNEL else rows * cols

        if self.method == Method.LSQ:
            s = lsq_init_step(x, self.b, self.granularity)
            self.scale = ScaleParam(gamma=s, sigma0=s, d=d, learnable=learnable)
            return

        cfg = self.quant_config()
        sigma0 = group_rms(transform(x.reshape(rows, cols), cfg), self.granularity).reshape(-1)
        if not self.use_rms:
            sigma0 = np.ones_like(sigma0)
        gamma = zeta_star * sigma0 if init_gamma else np.ones_like(sigma0)
        degenerate = sigma0 < SIGMA_EPS
        if np.any(degenerate):
            gamma = np.where(degenerate, GAMMA_FLOOR, gamma)
            logger.warning(
                json.dumps(
                    {
                        "event": "gamma_floor",
                        "site": self.name,
                        "channels": int(degenerate.sum()),
                        "gamma": GAMMA_FLOOR,
                    }
                )
            )
        self.scale = ScaleParam(gamma=gamma, sigma0=sigma0, d=d, learnable=learnable)

    def forward(
        self, x: np.ndarray, smooth: bool = False, inference: bool = False
    ) -> tuple[np.ndarray, Optional[QuantizeTrace]]:
        """
        Quantize-dequantize ``x``.

        :param smooth: drop the floor (BBQ only), for finite-difference checks.
        :param inference: BBQ-Fast activations use the EMA and BBQ weights the binary-search
            kernel path.
        """
        if self.method is None:
            return np.asarray(x, dtype=np.float64), None
        if self.method == Method.LSQ:
            return lsq_forward(x, self.lsq_config(), self.scale)
        if self.method == Method.QUEST:
            return quest_forward(x, self.quest_config())

        cfg = self.quant_config()
        if inference and self.kind == SiteKind.ACTIVATION and self.method == Method.BBQ_FAST:
            gamma = self._fast_gamma()
            return bbq_fast_forward(x, cfg, self.ema, gamma)
        if inference and self.kind == SiteKind.WEIGHT:
            return self._kernel_weights(x, cfg), None
        return bbq_forward(x, cfg, scale=self.scale, zeta=self.vision_zeta, smooth=smooth)

    def _fast_gamma(self) -> np.ndarray:
        if self.vision_zeta is None:
            return self.scale.gamma
        return np.array([self.vision_zeta / float(self.ema.e_inv_sigma)])

    def _kernel_weights(self, w: np.ndarray, cfg: QuantConfig) -> np.ndarray:
        rows, cols = rows_view(w.shape)
        hx = transform(np.asarray(w, dtype=np.float64).reshape(rows, cols), cfg)
        sigma = group_rms(hx, cfg.granularity) if cfg.use_rms else np.ones((rows, 1))
        v, _ = normalize(hx, sigma)
        codes = binsearch_indices(v, build_inv_cdf_table(cfg.b)) - cfg.half - cfg.z
        if self.vision_zeta is not None:
            gamma = self.vision_zeta * sigma
        else:
            gamma = self.scale.gamma.reshape(-1, 1)
        return ((gamma / cfg.half) * codes).reshape(np.shape(w))

    def backward(
        self, grad_out: np.ndarray, trace: Optional[QuantizeTrace], gamma_grad_scaling: bool = True
    ) -> tuple[np.ndarray, Optional[np.ndarray]]:
        """Gradient w.r.t. the site input and, if it has one, w.r.t. its scale parameter."""
        if self.method is None:
            return grad_out, None
        if self.method == Method.LSQ:
            return lsq_backward_array(
                grad_out, trace, self.lsq_config(), self.scale, gamma_grad_scaling
            )
        if self.method == Method.QUEST:
            return quest_backward_array(grad_out, trace, self.quest_config()), None
        return bbq_backward_array(
            grad_out, trace, self.quant_config(), self.scale, gamma_grad_scaling
        )

    def update_ema(self, trace: Optional[QuantizeTrace]) -> None:
        """Folds the exact σ measured by a training pass into the BBQ-Fast running average."""
        if self.method != Method.BBQ_FAST or trace is None or trace.fixed_sigma:
            return
        sigma = float(trace.sigma.reshape(-1)[0])
        if sigma >= SIGMA_EPS:
            self.ema = bbq_fast_update(self.ema, sigma)

    def quantize(self, x: np.ndarray) -> QuantizedTensor:
        """Packed codes of ``x`` as this site would store them."""
        t = Tensor.from_numpy(x)
        if self.method == Method.LSQ:
            return lsq_quantize(t, self.lsq_config())
        if self.method == Method.QUEST:
            return quest_quantize(t, self.quest_config())
        if self.method is None:
            raise ConfigError(f"site {self.name} is not quantized")
        cfg = self.quant_config()
        scale = self.scale
        if scale is None:
            _, trace = bbq_forward(x, cfg, zeta=self.vision_zeta)
            gamma = np.maximum(trace.gamma.reshape(-1), GAMMA_FLOOR)
            scale = ScaleParam(gamma=gamma, sigma0=trace.sigma.reshape(-1), d=1)
        qt, _ = bbq_quantize(t, cfg, scale)
        return qt
