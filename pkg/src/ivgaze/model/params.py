"""Flat parameter storage with named views."""

from __future__ import annotations

from typing import Mapping

import numpy as np


class ToyModelParams:
    """All trainable scalars in one float64 vector, addressable by name.

    ``params["enc_n.blk0.att.q.W"]`` is a writable view into ``params.flat``,
    so optimizers and finite-difference checks can work on the flat vector
    while the model code reads named tensors.
    """

    def __init__(self, layout: Mapping[str, tuple], flat: np.ndarray | None = None):
        self.layout = {k: tuple(v) for k, v in layout.items()}
        self._slices = {}
        offset = 0
        for name, shape in self.layout.items():
            n = int(np.prod(shape)) if shape else 1
            self._slices[name] = (offset, offset + n)
            offset += n
        self.size = offset
        if flat is None:
            flat = np.zeros(offset)
        flat = np.asarray(flat, dtype=np.float64)
        if flat.shape != (offset,):
            raise ValueError(f"flat vector has {flat.size} entries, layout needs {offset}")
        self.flat = flat
        self._views = {
            name: self.flat[a:b].reshape(self.layout[name]) for name, (a, b) in self._slices.items()
        }

    def __getitem__(self, name: str) -> np.ndarray:
        return self._views[name]

    def __setitem__(self, name: str, value) -> None:
        # in-place update so the flat vector stays the single source of truth
        self._views[name][...] = value

    def __contains__(self, name: str) -> bool:
        return name in self._views

    def names(self) -> list[str]:
        return list(self.layout)

    def span(self, name: str) -> tuple[int, int]:
        return self._slices[name]

    def zeros_like(self) -> ToyModelParams:
        return ToyModelParams(self.layout)

    def copy(self) -> ToyModelParams:
        return ToyModelParams(self.layout, self.flat.copy())

    def owner_of(self, index: int) -> str:
        for name, (a, b) in self._slices.items():
            if a <= index < b:
                return name
        raise IndexError(index)
