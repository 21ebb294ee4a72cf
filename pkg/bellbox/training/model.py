"""
A fixed two-layer quantized MLP with hand-written backward passes.

    x ─ QuantLinear(in → hidden) ─ GELU ─ QuantLinear(hidden → in) ─ Linear(in → classes)

Both quantized layers quantize their input (per tensor) and their weight (per output channel).
"""

import math
from typing import Optional

import numpy as np
from attr import define, field, frozen
from scipy.special import ndtr

from bellbox.errors import ConfigError, ShapeError
from bellbox.gaussian import normal_pdf
from bellbox.kernelsim.matmul import lowprec_matmul
from bellbox.quantizers.config import Method, QuantizeTrace
from bellbox.training.optimizer import Parameter
from bellbox.training.sites import QuantSite, SiteKind


@frozen
class ModelConfig:
    """
    :param input_dim: input width; must be divisible by ``block_size``.
    :param hidden_dim: hidden width; must be divisible by ``block_size``.
    :param num_classes: readout width.
    :param block_size: Hadamard block size of every quantized site.
    :param readout_std: init std of the readout weights.
    """

    input_dim: int = 128
    hidden_dim: int = 256
    num_classes: int = 10
    block_size: int = 128
    readout_std: float = 0.01

    def __attrs_post_init__(self) -> None:
        for name in ("input_dim", "hidden_dim"):
            if getattr(self, name) % self.block_size:
                raise ConfigError(
                    f"{name}={getattr(self, name)} is not divisible by block size {self.block_size}"
                )


def gelu(x: np.ndarray) -> np.ndarray:
    return x * ndtr(x)


def gelu_grad(x: np.ndarray) -> np.ndarray:
    return ndtr(x) + x * normal_pdf(x)


@define(eq=False)
class LayerCache:
    x: np.ndarray
    a_hat: np.ndarray
    w_hat: np.ndarray
    act_trace: Optional[QuantizeTrace]
    weight_trace: Optional[QuantizeTrace]


@define(eq=False)
class QuantLinear:
    """y = Q_act(x) · Q_w(W)ᵀ + b."""

    name: str
    weight: Parameter
    bias: Parameter
    act_site: QuantSite
    weight_site: QuantSite

    @classmethod
    def create(
        cls,
        name: str,
        in_features: int,
        out_features: int,
        rng: np.random.Generator,
        make_site,
    ) -> "QuantLinear":
        weight = rng.standard_normal((out_features, in_features)) / math.sqrt(in_features)
        return cls(
            name=name,
            weight=Parameter(f"{name}.weight", data=weight),
            bias=Parameter(f"{name}.bias", data=np.zeros(out_features), decay=False),
            act_site=make_site(f"{name}.act", SiteKind.ACTIVATION),
            weight_site=make_site(f"{name}.weight", SiteKind.WEIGHT),
        )

    def forward(
        self, x: np.ndarray, smooth: bool = False, inference: bool = False
    ) -> tuple[np.ndarray, LayerCache]:
        if x.shape[-1] != self.weight.data.shape[1]:
            raise ShapeError(f"{self.name}: input width {x.shape[-1]}, expected {self.weight.data.shape[1]}")
        a_hat, act_trace = self.act_site.forward(x, smooth=smooth, inference=inference)
        w_hat, weight_trace = self.weight_site.forward(
            self.weight.data, smooth=smooth, inference=inference
        )
        y = a_hat @ w_hat.T + self.bias.data
        return y, LayerCache(x, a_hat, w_hat, act_trace, weight_trace)

    def lowprec_forward(self, x: np.ndarray) -> np.ndarray:
        """
        y through packed codes and `lowprec_matmul`. Both BBQ operands stay in the Hadamard
        domain, which leaves the product unchanged because every block transform is orthonormal.

        :raises ConfigError: a site is not BBQ-quantized.
        """
        for site in self.sites:
            if not (site.method and site.method.is_bbq):
                raise ConfigError(f"site {site.name} has no packed BBQ codes")
        a = self.act_site.quantize(x)
        w = self.weight_site.quantize(self.weight.data)
        return lowprec_matmul(a, w).to_numpy(np.float64) + self.bias.data

    def backward(
        self, grad_y: np.ndarray, cache: LayerCache, gamma_grad_scaling: bool = True
    ) -> tuple[np.ndarray, dict[str, np.ndarray]]:
        grads: dict[str, np.ndarray] = {self.bias.name: grad_y.sum(axis=0)}
        grad_w_hat = grad_y.T @ cache.a_hat
        grad_a_hat = grad_y @ cache.w_hat

        grad_w, grad_w_scale = self.weight_site.backward(
            grad_w_hat, cache.weight_trace, gamma_grad_scaling
        )
        grad_x, grad_a_scale = self.act_site.backward(
            grad_a_hat, cache.act_trace, gamma_grad_scaling
        )
        grads[self.weight.name] = grad_w
        if grad_w_scale is not None:
            grads[f"{self.weight_site.name}.scale"] = grad_w_scale
        if grad_a_scale is not None:
            grads[f"{self.act_site.name}.scale"] = grad_a_scale
        return grad_x, grads

    @property
    def sites(self) -> tuple[QuantSite, QuantSite]:
        return self.act_site, self.weight_site


@define(eq=False)
class ForwardCache:
    inputs: np.ndarray
    labels: np.ndarray
    layer1: LayerCache
    pre_gelu: np.ndarray
    layer2: LayerCache
    hidden: np.ndarray
    probs: np.ndarray


@define(eq=False)
class ToyModel:
    """
    :param cfg: layer widths and Hadamard block size.
    :param ql1: first quantized layer, input_dim → hidden_dim.
    :param ql2: second quantized layer, hidden_dim → input_dim.
    :param readout_weight: full-precision (num_classes, input_dim) readout.
    :param readout_bias: readout bias.
    """

    cfg: ModelConfig
    ql1: QuantLinear
    ql2: QuantLinear
    readout_weight: Parameter
    readout_bias: Parameter
    method: Optional[Method] = None
    b: int = 4
    vision_zeta: Optional[float] = field(default=None)

    @classmethod
    def create(
        cls,
        cfg: ModelConfig,
        method: Optional[Method],
        b: int,
        seed: int,
        vision_zeta: Optional[float] = None,
        use_hadamard: bool = True,
        use_rms: bool = True,
    ) -> "ToyModel":
        rng = np.random.default_rng(seed)

        def make_site(name: str, kind: SiteKind) -> QuantSite:
            return QuantSite(
                name=name,
                kind=kind,
                method=method,
                b=b,
                block_size=cfg.block_size,
                vision_zeta=vision_zeta,
                use_hadamard=use_hadamard,
                use_rms=use_rms,
            )

        ql1 = QuantLinear.create("ql1", cfg.input_dim, cfg.hidden_dim, rng, make_site)
        ql2 = QuantLinear.create("ql2", cfg.hidden_dim, cfg.input_dim, rng, make_site)
        readout = cfg.readout_std * rng.standard_normal((cfg.num_classes, cfg.input_dim))
        return cls(
            cfg=cfg,
            ql1=ql1,
            ql2=ql2,
            readout_weight=Parameter("readout.weight", data=readout),
            readout_bias=Parameter("readout.bias", data=np.zeros(cfg.num_classes), decay=False),
            method=method,
            b=b,
            vision_zeta=vision_zeta,
        )

    @property
    def layers(self) -> tuple[QuantLinear, QuantLinear]:
        return self.ql1, self.ql2

    @property
    def sites(self) -> list[QuantSite]:
        return [site for layer in self.layers for site in layer.sites]

    def parameters(self) -> list[Parameter]:
        params = []
        for layer in self.layers:
            params.extend([layer.weight, layer.bias])
            for site in layer.sites:
                if site.scale is not None:
                    params.append(Parameter(f"{site.name}.scale", scale=site.scale, decay=False))
        params.extend([self.readout_weight, self.readout_bias])
        return params

    def forward(
        self,
        inputs: np.ndarray,
        labels: np.ndarray,
        smooth: bool = False,
        inference: bool = False,
    ) -> tuple[np.ndarray, float, ForwardCache]:
        """Logits, mean softmax cross-entropy, and everything the backward pass needs."""
        inputs = np.asarray(inputs, dtype=np.float64)
        pre_gelu, layer1 = self.ql1.forward(inputs, smooth, inference)
        hidden1 = gelu(pre_gelu)
        hidden, layer2 = self.ql2.forward(hidden1, smooth, inference)
        logits = hidden @ self.readout_weight.data.T + self.readout_bias.data

        shifted = logits - logits.max(axis=1, keepdims=True)
        log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
        labels = np.asarray(labels, dtype=np.int64)
        loss = float(-log_probs[np.arange(labels.size), labels].mean())
        cache = ForwardCache(inputs, labels, layer1, pre_gelu, layer2, hidden, np.exp(log_probs))
        return logits, loss, cache

    def backward(
        self, cache: ForwardCache, gamma_grad_scaling: bool = True
    ) -> dict[str, np.ndarray]:
        """Gradients of the mean cross-entropy w.r.t. every parameter, keyed by name."""
        n = cache.labels.size
        grad_logits = cache.probs.copy()
        grad_logits[np.arange(n), cache.labels] -= 1.0
        grad_logits /= n

        grads = {
            self.readout_weight.name: grad_logits.T @ cache.hidden,
            self.readout_bias.name: grad_logits.sum(axis=0),
        }
        grad_hidden = grad_logits @ self.readout_weight.data

        grad_h1, layer2_grads = self.ql2.backward(grad_hidden, cache.layer2, gamma_grad_scaling)
        grad_pre = grad_h1 * gelu_grad(cache.pre_gelu)
        _, layer1_grads = self.ql1.backward(grad_pre, cache.layer1, gamma_grad_scaling)
        grads.update(layer2_grads)
        grads.update(layer1_grads)
        return grads

    def weight_traces(self, cache: ForwardCache) -> dict[str, Optional[QuantizeTrace]]:
        return {
            layer.weight_site.name: c.weight_trace
            for layer, c in ((self.ql1, cache.layer1), (self.ql2, cache.layer2))
        }

    def weight_codes(self) -> dict[str, np.ndarray]:
        """Current codes of every quantized weight matrix."""
        codes = {}
        for layer in self.layers:
            site = layer.weight_site
            if site.quantized:
                _, trace = site.forward(layer.weight.data)
                codes[site.name] = trace.codes
        return codes
