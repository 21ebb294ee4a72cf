from collections.abc import Iterator

import numpy as np
from attr import field, frozen

from bellbox.errors import ConfigError


def _readonly(a) -> np.ndarray:
    a = np.asarray(a)
    a.setflags(write=False)
    return a


@frozen(eq=False)
class SyntheticTask:
    """
    Class-conditioned Gaussian mixture: each class owns a few centres and a sample is its centre
    plus isotropic noise.

    :param inputs: (n, dim) float64 samples.
    :param labels: (n,) class ids.
    :param num_classes: number of classes.
    """

    inputs: np.ndarray = field(converter=_readonly)
    labels: np.ndarray = field(converter=_readonly)
    num_classes: int

    @property
    def size(self) -> int:
        return int(self.labels.size)

    def batches(self, batch_size: int, rng: np.random.Generator) -> Iterator[tuple]:
        """Endless stream of uniformly sampled batches."""
        while True:
            idx = rng.integers(0, self.size, size=min(batch_size, self.size))
            yield self.inputs[idx], self.labels[idx]


def synth_dataset(
    seed: int,
    n: int,
    num_classes: int = 10,
    dim: int = 128,
    centers_per_class: int = 2,
    noise: float = 1.0,
) -> SyntheticTask:
    """
    Deterministic synthetic classification task.

    Labels cycle through the classes before being shuffled, so every class appears n/C times
    (up to one).

    :param seed: generator seed; the same seed gives the same task.
    :param n: number of samples, at least 1.
    """
    if n < 1:
        raise ConfigError(f"need at least one sample, got {n}")
    if num_classes < 2:
        raise ConfigError(f"need at least two classes, got {num_classes}")
    rng = np.random.default_rng(seed)
    centers = rng.standard_normal((num_classes * centers_per_class, dim))
    labels = rng.permutation(np.arange(n) % num_classes)
    component = rng.integers(0, centers_per_class, size=n)
    inputs = centers[labels * centers_per_class + component]
    inputs = inputs + noise * rng.standard_normal((n, dim))
    return SyntheticTask(inputs=inputs, labels=labels.astype(np.int64), num_classes=num_classes)
