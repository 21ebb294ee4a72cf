import json
import logging
from pathlib import Path
from typing import Optional

import numpy as np

from bellbox.entropy import POOLED, entropy_report
from bellbox.errors import EmptyInputError, TensorFormatError
from bellbox.kernelsim.quantized_tensor import decode_codes, load_quantized, save_quantized
from bellbox.tensorio import Tensor, emit_csv, write_tensor
from bellbox.tensorio.tensor_file import FilePath
from bellbox.training.trainer import TrainState

logger = logging.getLogger(__name__)

HISTORY_COLUMNS = ("iter", "loss", "lr", "batch_accuracy", "pooled_entropy", "mean_layer_entropy")
TENSOR_SUFFIX = ".bbqt"
QUANTIZED_SUFFIX = ".q.bbqt"


def save_checkpoint(
    state: TrainState, out_dir: FilePath, metrics: Optional[dict] = None
) -> Path:
    """
    Writes a training state to a directory:

    - ``<param>.bbqt``: every parameter and scale as a real32 tensor file
    - ``<site>.q.bbqt`` plus ``.json`` sidecar: packed codes of every quantized weight
    - ``metadata.json``: resolved config, final metrics, entropy pooling mode
    - ``history.csv``: one row per iteration
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    model = state.model

    for p in model.parameters():
        write_tensor(Tensor.from_numpy(p.value), out / f"{p.name}{TENSOR_SUFFIX}")
    for layer in model.layers:
        site = layer.weight_site
        if site.quantized:
            save_quantized(site.quantize(layer.weight.data), out / f"{site.name}{QUANTIZED_SUFFIX}")

    metadata = {
        "config": state.cfg.as_dict(),
        "iterations_completed": state.iteration,
        "metrics": metrics or {},
        "entropy_pooling": POOLED,
    }
    with open(out / "metadata.json", "w") as fh:
        json.dump(metadata, fh, indent=2)
    emit_csv(state.history, out / "history.csv", header=HISTORY_COLUMNS)
    logger.info(json.dumps({"event": "checkpoint_saved", "path": str(out)}))
    return out


def load_checkpoint_codes(path: FilePath) -> dict[str, np.ndarray]:
    """Codes of every packed weight in a checkpoint directory, keyed by site name."""
    root = Path(path)
    if not root.is_dir():
        raise TensorFormatError(f"{root} is not a checkpoint directory")
    codes = {}
    for file in sorted(root.glob(f"*{QUANTIZED_SUFFIX}")):
        name = file.name[: -len(QUANTIZED_SUFFIX)]
        codes[name] = decode_codes(load_quantized(file))
    if not codes:
        raise EmptyInputError(f"{root} holds no quantized weights")
    return codes


def checkpoint_entropy(path: FilePath):
    return entropy_report(load_checkpoint_codes(path))
