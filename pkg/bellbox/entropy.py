"""
Empirical Shannon entropy of quantized codes, in bits, computed directly in log2.
"""

import logging
from collections.abc import Mapping
from typing import Union

import numpy as np
from attr import define, field, frozen

from bellbox.errors import EmptyInputError
from bellbox.kernelsim.quantized_tensor import QuantizedTensor, decode_codes

logger = logging.getLogger(__name__)

POOLED = "pooled"
MEAN_LAYER = "mean-layer"


@define
class CodeHistogram:
    """
    Count of each code value.

    :param counts: code value to occurrences; only observed codes appear.
    :param total: number of codes counted.
    """

    counts: dict[float, int] = field(factory=dict)
    total: int = 0

    @classmethod
    def from_codes(cls, codes) -> "CodeHistogram":
        values, counts = np.unique(np.asarray(codes, dtype=np.float64), return_counts=True)
        return cls(
            counts={float(v): int(c) for v, c in zip(values, counts)},
            total=int(counts.sum()),
        )

    def merge(self, other: "CodeHistogram") -> "CodeHistogram":
        counts = dict(self.counts)
        for value, count in other.counts.items():
            counts[value] = counts.get(value, 0) + count
        return CodeHistogram(counts=counts, total=self.total + other.total)

    def probabilities(self) -> np.ndarray:
        return np.asarray(list(self.counts.values()), dtype=np.float64) / self.total

    def entropy(self) -> float:
        if self.total == 0:
            raise EmptyInputError("entropy of an empty code set is undefined")
        p = self.probabilities()
        p = p[p > 0]
        # + 0.0 turns -0.0 into 0.0
        return float(-np.sum(p * np.log2(p))) + 0.0


def entropy(codes: Union[np.ndarray, QuantizedTensor]) -> float:
    """
    H(q) = Σ -P(q, t) log2 P(q, t) over the observed code values t.

    :param codes: raw code values or a packed `QuantizedTensor`.
    :raises EmptyInputError: no codes.

    Example:
    ```python

    entropy(np.array([0, 1, 2, 3]))  # 2.0
    ```
    """
    if isinstance(codes, QuantizedTensor):
        codes = decode_codes(codes)
    codes = np.asarray(codes)
    if codes.size == 0:
        raise EmptyInputError("entropy of an empty code set is undefined")
    return CodeHistogram.from_codes(codes).entropy()


@frozen
class EntropyReport:
    """
    :param per_layer: entropy of each named layer's codes.
    :param pooled: entropy of all layers' codes counted together.
    :param mean_layer: average of the per-layer entropies.
    """

    per_layer: Mapping[str, float]
    pooled: float
    mean_layer: float

    def as_rows(self) -> list[dict]:
        rows = [
            {"layer": name, "pooling": "layer", "entropy_bits": bits}
            for name, bits in self.per_layer.items()
        ]
        rows.append({"layer": "*", "pooling": POOLED, "entropy_bits": self.pooled})
        rows.append({"layer": "*", "pooling": MEAN_LAYER, "entropy_bits": self.mean_layer})
        return rows


def entropy_report(layer_codes: Mapping[str, np.ndarray]) -> EntropyReport:
    if not layer_codes:
        raise EmptyInputError("no quantized layers to report on")
    histograms = {name: CodeHistogram.from_codes(codes) for name, codes in layer_codes.items()}
    per_layer = {name: h.entropy() for name, h in histograms.items()}

    pooled = CodeHistogram()
    for h in histograms.values():
        pooled = pooled.merge(h)
    return EntropyReport(
        per_layer=per_layer,
        pooled=pooled.entropy(),
        mean_layer=float(np.mean(list(per_layer.values()))),
    )


def model_weight_entropy(state) -> float:
    """
    Pooled entropy of every quantized weight tensor of a training state.

    :param state: anything exposing ``weight_codes()``, a mapping of layer name to codes.
    :raises EmptyInputError: the model has no quantized layers.
    """
    return entropy_report(state.weight_codes()).pooled
