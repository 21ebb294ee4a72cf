import json
import logging
import math
from typing import Optional

import numpy as np
from attr import asdict, define, field, frozen
from tqdm import tqdm

from bellbox.entropy import EntropyReport, entropy_report
from bellbox.errors import ConfigError, DivergenceError, StaleTraceError
from bellbox.gaussian import ZETA_STAR, ZETA_VISION
from bellbox.quantizers.config import Method
from bellbox.training.dataset import SyntheticTask, synth_dataset
from bellbox.training.model import ForwardCache, ModelConfig, ToyModel, gelu
from bellbox.training.optimizer import Optimizer, OptimizerConfig, cosine_lr
from bellbox.training.sites import TRAINABLE_METHODS

logger = logging.getLogger(__name__)


def _method_or_none(value) -> Optional[Method]:
    if value is None or value == "fp":
        return None
    return Method(value)


def _check_method(_instance, _attribute, value: Optional[Method]) -> None:
    if value is not None and value not in TRAINABLE_METHODS:
        raise ConfigError(f"{value.value} is not a training method")


@frozen
class TrainConfig:
    """
    Everything a training run depends on; the run is deterministic given it.

    :param method: quantizer for every quantized site; None (``fp``) trains in full precision.
    :param b: precision in bits.
    :param iterations: optimizer steps.
    :param batch_size: samples per step.
    :param seed: seeds the model, the task and the batch sampler.
    :param optimizer: optimizer kind, learning rate, weight decay and warmup.
    :param model: layer widths.
    :param num_samples: size of the synthetic task.
    :param vision_mode: recompute γ = ζσ on every pass instead of learning it.
    :param zeta: ζ used by vision mode. Defaults to 2.45.
    :param zeta_star: ζ* used for γ initialisation. Defaults to 1.694.
    :param learn_gamma: let the optimizer update γ.
    :param init_gamma: initialise γ to ζ*σ₀; otherwise to 1.
    :param gamma_grad_scaling: divide γ gradients by √d.
    :param use_hadamard: Hadamard ablation switch.
    :param use_rms: RMS ablation switch.
    :param divergence_factor: loss above this multiple of the first loss counts as diverging.
    :param divergence_patience: consecutive diverging iterations before the run aborts.
    :param log_every: iterations between JSON progress records.
    :param progress: show a progress bar.
    """

    method: Optional[Method] = field(
        default=Method.BBQ, converter=_method_or_none, validator=_check_method
    )
    b: int = 2
    iterations: int = 2000
    batch_size: int = 64
    seed: int = 0
    optimizer: OptimizerConfig = field(factory=OptimizerConfig)
    model: ModelConfig = field(factory=ModelConfig)
    num_samples: int = 4096
    vision_mode: bool = False
    zeta: float = ZETA_VISION
    zeta_star: float = ZETA_STAR
    learn_gamma: bool = True
    init_gamma: bool = True
    gamma_grad_scaling: bool = True
    use_hadamard: bool = True
    use_rms: bool = True
    divergence_factor: float = 10.0
    divergence_patience: int = 100
    log_every: int = 100
    progress: bool = False

    def __attrs_post_init__(self) -> None:
        if self.iterations < 1 or self.batch_size < 1:
            raise ConfigError("iterations and batch size must be positive")
        if self.method == Method.LSQ and self.b < 2:
            raise ConfigError("LSQ does not support 1-bit quantization")
        if self.vision_mode and not (self.method and self.method.is_bbq):
            raise ConfigError("vision mode applies to BBQ methods only")

    def as_dict(self) -> dict:
        resolved = asdict(self, recurse=True)
        resolved["method"] = self.method.value if self.method is not None else "fp"
        resolved["optimizer"]["kind"] = self.optimizer.kind.value
        return resolved


@define(eq=False)
class TrainState:
    """
    :param cfg: the run configuration.
    :param model: current parameters and quantizer state.
    :param optimizer: optimizer moments.
    :param iteration: completed optimizer steps.
    :param history: one record per completed step.
    """

    cfg: TrainConfig
    model: ToyModel
    optimizer: Optimizer
    iteration: int = 0
    history: list[dict] = field(factory=list)
    initial_loss: Optional[float] = None
    diverging_for: int = 0

    def weight_codes(self) -> dict[str, np.ndarray]:
        return self.model.weight_codes()


def build_model(cfg: TrainConfig) -> ToyModel:
    return ToyModel.create(
        cfg.model,
        method=cfg.method,
        b=cfg.b,
        seed=cfg.seed,
        vision_zeta=cfg.zeta if cfg.vision_mode else None,
        use_hadamard=cfg.use_hadamard,
        use_rms=cfg.use_rms,
    )


def gamma_init(model: ToyModel, first_batch: np.ndarray, cfg: TrainConfig) -> ToyModel:
    """
    Sets every scale parameter from the first batch: γ = ζ*σ₀ for BBQ sites, the LSQ step rule
    for LSQ sites. Activation σ₀ is measured on the full-precision activations of that batch.
    Vision-mode sites keep no γ.
    """
    x = np.asarray(first_batch, dtype=np.float64)
    for layer in model.layers:
        layer.act_site.init_scale(x, cfg.zeta_star, cfg.init_gamma, cfg.learn_gamma)
        layer.weight_site.init_scale(
            layer.weight.data, cfg.zeta_star, cfg.init_gamma, cfg.learn_gamma
        )
        x = x @ layer.weight.data.T + layer.bias.data
        if layer is model.ql1:
            x = gelu(x)
    return model


def forward(
    model: ToyModel,
    batch: tuple[np.ndarray, np.ndarray],
    cfg: TrainConfig,
    smooth: bool = False,
    inference: bool = False,
) -> tuple[np.ndarray, float, ForwardCache]:
    """Logits, loss and the traces the backward pass consumes."""
    inputs, labels = batch
    return model.forward(inputs, labels, smooth=smooth, inference=inference)


def compute_gradients(
    model: ToyModel, cache: ForwardCache, cfg: TrainConfig
) -> dict[str, np.ndarray]:
    return model.backward(cache, gamma_grad_scaling=cfg.gamma_grad_scaling)


def backward_and_step(state: TrainState, traces: ForwardCache, cfg: TrainConfig) -> TrainState:
    """
    Backpropagates through the quantizers, applies one optimizer step with the scheduled learning
    rate, and folds the measured activation σ into BBQ-Fast running averages.

    :raises StaleTraceError: ``traces`` were already consumed or the scales changed since.
    """
    model = state.model
    grads = compute_gradients(model, traces, cfg)

    params = model.parameters()
    for p in params:
        p.grad = grads.get(p.name)
    lr = cosine_lr(cfg.optimizer, state.iteration, cfg.iterations)
    state.optimizer.step(params, lr)

    for layer, cache in ((model.ql1, traces.layer1), (model.ql2, traces.layer2)):
        layer.act_site.update_ema(cache.act_trace)
    state.iteration += 1
    return state


def _accuracy(logits: np.ndarray, labels: np.ndarray) -> float:
    return float(np.mean(np.argmax(logits, axis=1) == labels))


def evaluate(
    model: ToyModel, task: SyntheticTask, cfg: TrainConfig, inference: bool = False
) -> dict:
    """Loss and accuracy over the whole task, in training or inference quantization mode."""
    logits, loss, _ = forward(model, (task.inputs, task.labels), cfg, inference=inference)
    return {"loss": loss, "accuracy": _accuracy(logits, task.labels)}


def _entropy_of_traces(model: ToyModel, cache: ForwardCache) -> Optional[EntropyReport]:
    codes = {
        name: trace.codes for name, trace in model.weight_traces(cache).items() if trace is not None
    }
    if not codes:
        return None
    return entropy_report(codes)


def _check_divergence(state: TrainState, loss: float) -> None:
    cfg = state.cfg
    if not math.isfinite(loss):
        raise DivergenceError(
            json.dumps({"event": "diverged", "iteration": state.iteration, "loss": str(loss)})
        )
    if state.initial_loss is None:
        state.initial_loss = loss
        return
    if loss > cfg.divergence_factor * state.initial_loss:
        state.diverging_for += 1
    else:
        state.diverging_for = 0
    if state.diverging_for >= cfg.divergence_patience:
        raise DivergenceError(
            json.dumps(
                {
                    "event": "diverged",
                    "iteration": state.iteration,
                    "loss": loss,
                    "initial_loss": state.initial_loss,
                    "consecutive": state.diverging_for,
                }
            )
        )


def init_state(cfg: TrainConfig, task: SyntheticTask) -> TrainState:
    model = build_model(cfg)
    rng = np.random.default_rng(cfg.seed + 1)
    first_inputs, _ = next(task.batches(cfg.batch_size, rng))
    gamma_init(model, first_inputs, cfg)
    return TrainState(cfg=cfg, model=model, optimizer=Optimizer(cfg.optimizer))


def train(cfg: TrainConfig, task: Optional[SyntheticTask] = None) -> TrainState:
    """
    Runs the training loop and records loss, learning rate, batch accuracy and weight entropy for
    every iteration.

    :param cfg: run configuration.
    :param task: training data; defaults to ``synth_dataset(cfg.seed, cfg.num_samples, ...)``.
    :raises DivergenceError: the loss stayed above ``divergence_factor`` times its first value for
        ``divergence_patience`` consecutive iterations, or became non-finite.
    """
    if task is None:
        task = synth_dataset(
            cfg.seed, cfg.num_samples, cfg.model.num_classes, dim=cfg.model.input_dim
        )
    state = init_state(cfg, task)
    batches = task.batches(cfg.batch_size, np.random.default_rng(cfg.seed + 2))

    for _ in tqdm(range(cfg.iterations), disable=not cfg.progress, desc="train"):
        batch = next(batches)
        logits, loss, cache = forward(state.model, batch, cfg)
        _check_divergence(state, loss)
        report = _entropy_of_traces(state.model, cache)
        lr = cosine_lr(cfg.optimizer, state.iteration, cfg.iterations)

        row = {
            "iter": state.iteration,
            "loss": loss,
            "lr": lr,
            "batch_accuracy": _accuracy(logits, batch[1]),
            "pooled_entropy": report.pooled if report else "",
            "mean_layer_entropy": report.mean_layer if report else "",
        }
        state.history.append(row)
        if state.iteration % cfg.log_every == 0:
            logger.info(json.dumps({"event": "train_progress", **row}))

        try:
            backward_and_step(state, cache, cfg)
        except StaleTraceError:
            logger.error(json.dumps({"event": "stale_trace", "iteration": state.iteration}))
            raise
    return state

