"""Named parameter storage and the small convolutional networks used by the planners."""
from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass
from typing import Dict, Iterator, Mapping, Optional, Sequence, Tuple

import numpy as np

from .errors import CheckpointError, ShapeError
from .tensor import Tensor, add, conv2d, relu, reshape


class ParameterStore:
    """Ordered mapping from parameter name to a float32 array.

    The store owns the current values between optimizer steps; every step
    creates fresh trainable leaves with :meth:`leaves` so that no graph
    outlives the step that built it.
    """

    def __init__(self, seed: int = 0) -> None:
        self._values: "OrderedDict[str, np.ndarray]" = OrderedDict()
        self._rng = np.random.default_rng(seed)

    def __contains__(self, name: object) -> bool:
        return name in self._values

    def __iter__(self) -> Iterator[str]:
        return iter(self._values)

    def __len__(self) -> int:
        return len(self._values)

    def __getitem__(self, name: str) -> np.ndarray:
        return self._values[name]

    def names(self) -> Tuple[str, ...]:
        return tuple(self._values)

    def add(self, name: str, value: np.ndarray) -> np.ndarray:
        if name in self._values:
            raise ValueError(f"Parameter '{name}' is already registered")
        array = np.array(value, dtype=np.float32)
        self._values[name] = array
        return array

    def add_uniform(self, name: str, shape: Sequence[int], fan_in: int) -> np.ndarray:
        """Register a parameter drawn uniformly from +-1/sqrt(fan_in)."""
        bound = 1.0 / np.sqrt(max(fan_in, 1))
        return self.add(name, self._rng.uniform(-bound, bound, size=tuple(shape)))

    def add_constant(self, name: str, shape: Sequence[int], value: float = 0.0) -> np.ndarray:
        return self.add(name, np.full(tuple(shape), value, dtype=np.float32))

    def leaves(self) -> Dict[str, Tensor]:
        return {name: Tensor.parameter(value, name=name) for name, value in self._values.items()}

    def assign(self, values: Mapping[str, np.ndarray]) -> None:
        for name, value in values.items():
            current = self._values.get(name)
            if current is None:
                raise CheckpointError("Unknown parameter", name)
            if current.shape != np.shape(value):
                raise CheckpointError(
                    f"Shape mismatch ({np.shape(value)} vs {current.shape})", name
                )
            self._values[name] = np.array(value, dtype=np.float32)

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((name, value.copy()) for name, value in self._values.items())

    def load_state(self, state: Mapping[str, np.ndarray], strict: bool = True) -> None:
        """Replace every value from ``state``; names and shapes must match exactly."""
        if strict:
            missing = [name for name in self._values if name not in state]
            if missing:
                raise CheckpointError("Checkpoint is missing parameter", missing[0])
            unexpected = [name for name in state if name not in self._values]
            if unexpected:
                raise CheckpointError("Checkpoint has unexpected parameter", unexpected[0])
        self.assign({name: state[name] for name in self._values if name in state})


@dataclass(frozen=True)
class TwoLayerCNN:
    """3x3 convolution, ReLU, then a 1x1 convolution.

    Parameters live in a :class:`ParameterStore` under ``{prefix}.conv1.weight``,
    ``{prefix}.conv1.bias``, ``{prefix}.conv2.weight`` and ``{prefix}.conv2.bias``.
    """

    prefix: str
    in_channels: int
    hidden: int
    out_channels: int
    kernel_size: int = 3
    use_bias: bool = True

    def __post_init__(self) -> None:
        if min(self.in_channels, self.hidden, self.out_channels) < 1:
            raise ValueError("TwoLayerCNN channel counts must be positive")
        if self.kernel_size % 2 == 0:
            raise ValueError("TwoLayerCNN kernel_size must be odd")

    def init_params(self, store: ParameterStore) -> None:
        k = self.kernel_size
        fan_in1 = self.in_channels * k * k
        store.add_uniform(f"{self.prefix}.conv1.weight", (self.hidden, self.in_channels, k, k), fan_in1)
        store.add_uniform(f"{self.prefix}.conv2.weight", (self.out_channels, self.hidden, 1, 1), self.hidden)
        if self.use_bias:
            store.add_uniform(f"{self.prefix}.conv1.bias", (self.hidden, 1, 1), fan_in1)
            store.add_uniform(f"{self.prefix}.conv2.bias", (self.out_channels, 1, 1), self.hidden)

    def __call__(self, x: Tensor, params: Mapping[str, Tensor]) -> Tensor:
        if x.ndim != 3 or x.shape[0] != self.in_channels:
            raise ShapeError(
                f"{self.prefix}: expected {self.in_channels}xHxW input, got {x.shape}"
            )
        hidden = conv2d(x, params[f"{self.prefix}.conv1.weight"])
        if self.use_bias:
            hidden = add(hidden, params[f"{self.prefix}.conv1.bias"])
        hidden = relu(hidden)
        out = conv2d(hidden, params[f"{self.prefix}.conv2.weight"])
        if self.use_bias:
            out = add(out, params[f"{self.prefix}.conv2.bias"])
        return out


def pointwise(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """Apply an ``O x C`` channel mixing to a ``C x ...`` tensor via a 1x1 convolution."""
    channels = x.shape[0]
    flat = reshape(x, (channels, int(np.prod(x.shape[1:-1], dtype=np.int64)), x.shape[-1]))
    out = conv2d(flat, reshape(weight, (weight.shape[0], channels, 1, 1)))
    if bias is not None:
        out = add(out, reshape(bias, (weight.shape[0], 1, 1)))
    return reshape(out, (weight.shape[0],) + x.shape[1:])
