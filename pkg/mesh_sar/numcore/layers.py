import math
from typing import Literal, Optional

import numpy as np

from mesh_sar.numcore import functional as F
from mesh_sar.numcore.tensor import Tensor, get_default_dtype

Activation = Literal["gelu", "selu"]


def parameter(data: np.ndarray) -> Tensor:
    return Tensor(np.asarray(data, dtype=get_default_dtype()), requires_grad=True)


class Module:
    """Base class collecting parameters from attributes, sub-modules and lists of sub-modules."""

    def parameters(self) -> dict[str, Tensor]:
        params: dict[str, Tensor] = {}
        for name, value in vars(self).items():
            if isinstance(value, Tensor) and value.requires_grad:
                params[name] = value
            elif isinstance(value, Module):
                for sub, p in value.parameters().items():
                    params[f"{name}.{sub}"] = p
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        for sub, p in item.parameters().items():
                            params[f"{name}.{i}.{sub}"] = p
        return params

    def num_parameters(self) -> int:
        return int(sum(p.data.size for p in self.parameters().values()))

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        """Copies named arrays into this module's parameters (names and shapes must match)."""
        params = self.parameters()
        missing = sorted(set(params) - set(arrays))
        if missing:
            raise KeyError(f"Missing parameters in checkpoint: {missing[:5]}")
        for name, p in params.items():
            if arrays[name].shape != p.shape:
                raise ValueError(f"Shape mismatch for {name}: {arrays[name].shape} vs {p.shape}")
            p.data[...] = arrays[name]

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


class Linear(Module):
    """Affine map with a (in, out) weight, uniform(+-1/sqrt(in)) initialised unless ``zero_init``."""

    def __init__(
        self,
        in_features: int,
        out_features: int,
        rng: np.random.Generator,
        bias: bool = True,
        zero_init: bool = False,
    ):
        bound = 1.0 / math.sqrt(in_features)
        if zero_init:
            self.weight = parameter(np.zeros((in_features, out_features)))
        else:
            self.weight = parameter(rng.uniform(-bound, bound, (in_features, out_features)))
        self.bias = None
        if bias:
            self.bias = parameter(
                np.zeros(out_features) if zero_init else rng.uniform(-bound, bound, out_features)
            )

    def forward(self, x: Tensor) -> Tensor:
        return F.linear(x, self.weight, self.bias)


class LayerNorm(Module):
    def __init__(self, features: int):
        self.weight = parameter(np.ones(features))
        self.bias = parameter(np.zeros(features))

    def forward(self, x: Tensor) -> Tensor:
        return F.layer_norm(x, self.weight, self.bias)


def activate(x: Tensor, activation: Activation) -> Tensor:
    if activation == "gelu":
        return F.gelu(x)
    if activation == "selu":
        return F.selu(x)
    raise ValueError(f"Unknown activation: {activation}")


class MLP(Module):
    """Single-hidden-layer MLP; ``zero_last`` zero-initialises the output layer."""

    def __init__(
        self,
        in_features: int,
        hidden: int,
        out_features: int,
        rng: np.random.Generator,
        activation: Activation = "gelu",
        zero_last: bool = False,
        pre_norm: bool = False,
    ):
        self.norm: Optional[LayerNorm] = LayerNorm(in_features) if pre_norm else None
        self.fc1 = Linear(in_features, hidden, rng)
        self.fc2 = Linear(hidden, out_features, rng, zero_init=zero_last)
        self.activation = activation

    def forward(self, x: Tensor) -> Tensor:
        if self.norm is not None:
            x = self.norm(x)
        return self.fc2(activate(self.fc1(x), self.activation))
