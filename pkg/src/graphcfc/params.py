"""Named parameter sets and their initialisation."""
from __future__ import annotations

from typing import Dict

import numpy as np

from .autodiff import Value, param

ParamMap = Dict[str, Value]


class ParamInit:
    """Creates named leaves in insertion order from one seeded generator."""

    def __init__(self, rng: np.random.Generator):
        self.rng = rng
        self.params: ParamMap = {}

    def _put(self, name, data):
        if name in self.params:
            raise KeyError(f"duplicate parameter {name}")
        self.params[name] = param(data, name=name)
        return self.params[name]

    def weight(self, name, fan_in, fan_out):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        return self._put(name, self.rng.uniform(-limit, limit, size=(fan_in, fan_out)))

    def zeros(self, name, *shape):
        return self._put(name, np.zeros(shape))

    def ones(self, name, *shape):
        return self._put(name, np.ones(shape))

    def normal(self, name, shape, std):
        return self._put(name, std * self.rng.standard_normal(shape))

    def linear(self, prefix, fan_in, fan_out):
        self.weight(f"{prefix}.W", fan_in, fan_out)
        self.zeros(f"{prefix}.b", fan_out)

    def layer_norm(self, prefix, width):
        self.ones(f"{prefix}.gamma", width)
        self.zeros(f"{prefix}.beta", width)

    def gru(self, prefix, input_size, hidden):
        self.weight(f"{prefix}.W", input_size, 3 * hidden)
        self.weight(f"{prefix}.U", hidden, 3 * hidden)
        self.zeros(f"{prefix}.b", 3 * hidden)

    def lstm(self, prefix, input_size, hidden):
        self.weight(f"{prefix}.W", input_size, 4 * hidden)
        self.weight(f"{prefix}.U", hidden, 4 * hidden)
        self.zeros(f"{prefix}.b", 4 * hidden)


def sub(params: ParamMap, prefix: str) -> ParamMap:
    """View of ``params`` under ``prefix.`` with the prefix stripped."""
    cut = len(prefix) + 1
    return {k[cut:]: v for k, v in params.items() if k.startswith(prefix + ".")}


def snapshot(params: ParamMap) -> Dict[str, np.ndarray]:
    return {k: v.data.copy() for k, v in params.items()}


def restore(params: ParamMap, arrays: Dict[str, np.ndarray]):
    for k, v in params.items():
        v.data = arrays[k].copy()
