"""Parameter containers shared by the network modules."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .tensor import Tensor, conv2d


@dataclass
class ConvParams:
    w: Tensor
    b: Tensor | None = None

    def __call__(self, x, pad: int | None = None) -> Tensor:
        k = self.w.shape[-1]
        return conv2d(x, self.w, self.b, pad=k // 2 if pad is None else pad)


def he_conv(rng: np.random.Generator, c_out: int, c_in: int, k: int, dtype, bias: bool = True,
            zero: bool = False) -> ConvParams:
    """Fan-in scaled normal init (or all zeros when ``zero``)."""
    shape = (c_out, c_in, k, k)
    if zero:
        w = np.zeros(shape)
    else:
        w = rng.standard_normal(shape) * np.sqrt(2.0 / (c_in * k * k))
    b = Tensor(np.zeros(c_out, dtype=dtype), requires_grad=True) if bias else None
    return ConvParams(Tensor(w.astype(dtype), requires_grad=True), b)


def named_tensors(obj, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
    """Walk dataclasses, dicts and lists, yielding (dotted name, Tensor)."""
    if isinstance(obj, Tensor):
        yield prefix, obj
    elif dataclasses.is_dataclass(obj):
        for f in dataclasses.fields(obj):
            yield from named_tensors(getattr(obj, f.name), f"{prefix}.{f.name}" if prefix else f.name)
    elif isinstance(obj, dict):
        for k, v in obj.items():
            yield from named_tensors(v, f"{prefix}.{k}" if prefix else str(k))
    elif isinstance(obj, (list, tuple)):
        for i, v in enumerate(obj):
            yield from named_tensors(v, f"{prefix}.{i}" if prefix else str(i))
