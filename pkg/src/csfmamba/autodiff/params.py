from __future__ import annotations

from collections import OrderedDict

import numpy as np

from .tensor import Tensor, get_dtype


class ParamStore:
    """Named learnable tensors plus non-learnable buffers, in creation order."""

    def __init__(self):
        self._params: OrderedDict[str, Tensor] = OrderedDict()
        self._buffers: OrderedDict[str, Tensor] = OrderedDict()

    def add(self, name: str, value) -> Tensor:
        if name in self._params or name in self._buffers:
            raise KeyError(f"duplicate parameter name {name!r}")
        t = Tensor(np.array(value, dtype=get_dtype()), requires_grad=True, name=name)
        self._params[name] = t
        return t

    def add_buffer(self, name: str, value) -> Tensor:
        if name in self._params or name in self._buffers:
            raise KeyError(f"duplicate buffer name {name!r}")
        t = Tensor(np.array(value, dtype=get_dtype()), name=name)
        self._buffers[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name] if name in self._params else self._buffers[name]

    def __contains__(self, name):
        return name in self._params or name in self._buffers

    def __iter__(self):
        return iter(self._params.items())

    def __len__(self):
        return len(self._params)

    def names(self):
        return list(self._params)

    def buffers(self):
        return list(self._buffers.items())

    def items(self):
        """Parameters followed by buffers, each in creation order."""
        return list(self._params.items()) + list(self._buffers.items())

    def num_scalars(self) -> int:
        return int(sum(t.data.size for t in self._params.values()))

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.grad = np.zeros_like(t.data)

    def grads(self) -> dict[str, np.ndarray]:
        return {n: (t.grad if t.grad is not None else np.zeros_like(t.data))
                for n, t in self._params.items()}

    def state(self) -> dict[str, np.ndarray]:
        return {n: t.data.copy() for n, t in self.items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        for n, t in self.items():
            if n not in state:
                raise KeyError(f"missing tensor {n!r} in state")
            arr = np.asarray(state[n])
            if arr.shape != t.shape:
                raise ValueError(f"shape mismatch for {n!r}: {arr.shape} vs {t.shape}")
            t.data = arr.astype(t.dtype, copy=True)

    def astype(self, dtype) -> None:
        for _, t in self.items():
            t.data = t.data.astype(dtype)


def uniform_fan_in(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initializer."""
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)
