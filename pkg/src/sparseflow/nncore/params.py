"""Named parameter storage with gradient and optimizer-moment slots."""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass
from typing import Iterator

import numpy as np


@dataclass
class Param:
    value: np.ndarray
    grad: np.ndarray
    m: np.ndarray
    v: np.ndarray


class ParamStore:
    """Ordered mapping ``name -> Param``.

    All four arrays of a parameter share one shape and dtype. ``step`` counts
    optimizer updates applied to the whole store.
    """

    def __init__(self, dtype=np.float32):
        self.dtype = np.dtype(dtype)
        self._params: OrderedDict[str, Param] = OrderedDict()
        self.step = 0

    def add(self, name: str, value: np.ndarray) -> np.ndarray:
        if name in self._params:
            raise KeyError(f"duplicate parameter name {name!r}")
        value = np.array(value, dtype=self.dtype)
        self._params[name] = Param(
            value=value,
            grad=np.zeros_like(value),
            m=np.zeros_like(value),
            v=np.zeros_like(value),
        )
        return value

    def __getitem__(self, name: str) -> np.ndarray:
        return self._params[name].value

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def param(self, name: str) -> Param:
        return self._params[name]

    def items(self):
        return self._params.items()

    def grad(self, name: str) -> np.ndarray:
        return self._params[name].grad

    def accumulate(self, name: str, g: np.ndarray) -> None:
        p = self._params[name]
        if g.shape != p.grad.shape:
            raise ValueError(f"gradient shape {g.shape} != {p.grad.shape} for {name!r}")
        p.grad += g

    def zero_grad(self) -> None:
        for p in self._params.values():
            p.grad.fill(0)

    def set_value(self, name: str, value: np.ndarray) -> None:
        p = self._params[name]
        value = np.asarray(value)
        if value.shape != p.value.shape:
            raise ValueError(f"shape {value.shape} != {p.value.shape} for {name!r}")
        p.value[...] = value

    def values(self) -> dict[str, np.ndarray]:
        """Copies of all parameter values, in insertion order."""
        return OrderedDict((k, p.value.copy()) for k, p in self._params.items())

    def load_values(self, values: dict[str, np.ndarray]) -> None:
        missing = set(self._params) - set(values)
        extra = set(values) - set(self._params)
        if missing or extra:
            raise KeyError(f"parameter mismatch: missing={sorted(missing)} extra={sorted(extra)}")
        for k, v in values.items():
            self.set_value(k, v)

    def astype(self, dtype) -> "ParamStore":
        """Copy of the store with every array cast to ``dtype`` (e.g. float64 for grad checks)."""
        out = ParamStore(dtype)
        out.step = self.step
        for k, p in self._params.items():
            out._params[k] = Param(*(a.astype(dtype, copy=True) for a in (p.value, p.grad, p.m, p.v)))
        return out

    def n_values(self) -> int:
        return sum(p.value.size for p in self._params.values())


def glorot_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)
