import numpy as np
import pytest

from bellbox.entropy import (
    MEAN_LAYER,
    POOLED,
    CodeHistogram,
    entropy,
    entropy_report,
    model_weight_entropy,
)
from bellbox.errors import EmptyInputError
from bellbox.kernelsim.quantized_tensor import encode_codes


def test_four_value_distribution():
    codes = np.repeat([0.0, 1.0, 2.0, 3.0], [4, 3, 2, 1])
    assert entropy(codes) == pytest.approx(1.8464, abs=1e-4)


def test_uniform_codes_have_log2_entropy():
    assert entropy(np.arange(16)) == pytest.approx(4.0)
    assert entropy(np.array([-0.5, 0.5])) == pytest.approx(1.0)


def test_single_value_has_zero_entropy():
    value = entropy(np.full(10, -2.0))
    assert value == 0.0
    assert str(value) == "0.0"


def test_empty_input():
    with pytest.raises(EmptyInputError):
        entropy(np.array([]))
    with pytest.raises(EmptyInputError):
        entropy_report({})


def test_entropy_of_packed_tensor():
    codes = np.array([[-4.0, -3.0, 2.0, 3.0], [0.0, 0.0, 1.0, 1.0]])
    qt = encode_codes(codes, b=3, z=0.0, scales=1.0)
    assert entropy(qt) == pytest.approx(entropy(codes))


def test_histogram_merge():
    left = CodeHistogram.from_codes([0.0, 0.0, 1.0])
    right = CodeHistogram.from_codes([1.0, 2.0])
    merged = left.merge(right)
    assert merged.total == 5
    assert merged.counts == {0.0: 2, 1.0: 2, 2.0: 1}


def test_pooled_differs_from_mean_layer():
    report = entropy_report({"a": np.zeros(4), "b": np.ones(4)})
    assert report.per_layer == {"a": 0.0, "b": 0.0}
    assert report.mean_layer == 0.0
    assert report.pooled == pytest.approx(1.0)


def test_report_rows():
    report = entropy_report({"ql1": np.arange(4), "ql2": np.arange(2)})
    rows = report.as_rows()
    assert [r["layer"] for r in rows] == ["ql1", "ql2", "*", "*"]
    assert [r["pooling"] for r in rows] == ["layer", "layer", POOLED, MEAN_LAYER]
    assert rows[-1]["entropy_bits"] == pytest.approx(1.5)


class _State:
    def __init__(self, codes):
        self.codes = codes

    def weight_codes(self):
        return self.codes


def test_model_weight_entropy_pools_layers():
    state = _State({"ql1": np.array([0.0, 1.0]), "ql2": np.array([2.0, 3.0])})
    assert model_weight_entropy(state) == pytest.approx(2.0)


def test_model_without_quantized_layers():
    with pytest.raises(EmptyInputError):
        model_weight_entropy(_State({}))


def test_entropy_ignores_order():
    codes = np.random.default_rng(5).integers(-4, 4, size=1000).astype(np.float64)
    shuffled = np.random.default_rng(6).permutation(codes)
    assert entropy(shuffled) == pytest.approx(entropy(codes), abs=1e-12)


def test_mixing_never_lowers_entropy():
    left = np.repeat([0.0, 1.0], [30, 10])
    right = np.repeat([1.0, 2.0, 3.0], [5, 5, 50])
    mixed = np.concatenate([left, right])
    weighted = (left.size * entropy(left) + right.size * entropy(right)) / mixed.size
    assert entropy(mixed) >= weighted
