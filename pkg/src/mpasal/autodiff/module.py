from __future__ import annotations

import hashlib
from typing import Iterator

import numpy as np

from .tensor import Tensor, default_dtype


class Parameter(Tensor):
    """A trainable leaf tensor."""

    __slots__ = ()

    def __init__(self, data, name: str | None = None):
        super().__init__(data, requires_grad=True, name=name)


class Module:
    """Container that discovers parameters and sub-modules by attribute order."""

    def __setattr__(self, key, value):
        if isinstance(value, Parameter) and value.name is None:
            value.name = key
        object.__setattr__(self, key, value)

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for key, value in vars(self).items():
            if isinstance(value, Parameter):
                yield prefix + key, value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{prefix}{key}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{prefix}{key}.{i}.")
                    elif isinstance(item, Parameter):
                        yield f"{prefix}{key}.{i}", item

    def parameters(self) -> dict[str, Parameter]:
        return dict(self.named_parameters())

    def zero_grad(self) -> None:
        for p in self.parameters().values():
            p.zero_grad()

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: p.data.copy() for k, p in self.named_parameters()}

    def load_state_dict(self, state) -> None:
        params = self.parameters()
        missing = set(params) - set(state)
        if missing:
            raise KeyError(f"missing parameters: {sorted(missing)}")
        for k, p in params.items():
            arr = np.asarray(state[k])
            if arr.shape != p.shape:
                raise ValueError(f"parameter {k}: shape {arr.shape} != expected {p.shape}")
            p.data = arr.astype(p.dtype).copy()
            p.zero_grad()

    def cast(self, dtype=None) -> "Module":
        """Convert all parameters in place (to the current default dtype if none given)."""
        dtype = dtype or default_dtype()
        for p in self.parameters().values():
            p.data = p.data.astype(dtype)
            p.zero_grad()
        return self

    def checksum(self) -> str:
        h = hashlib.sha256()
        for k, p in self.named_parameters():
            h.update(k.encode())
            h.update(np.ascontiguousarray(p.data).tobytes())
        return h.hexdigest()
