"""Mixed-radix integer coding for products of finite domains.

The first variable is the most significant digit, so enumerating codes
0..size-1 walks the product space in row-major order.  All dense tables
in the package index joint states / joint actions this way.
"""

from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np

from .errors import DomainError, ValidationError


class MixedRadix:
    __slots__ = ("cards", "strides", "size")

    def __init__(self, cards: Iterable[int]):
        self.cards = tuple(int(c) for c in cards)
        if any(c < 1 for c in self.cards):
            raise ValidationError(f"cardinalities must be >= 1, got {self.cards}")
        strides = []
        s = 1
        for c in reversed(self.cards):
            strides.append(s)
            s *= c
        self.strides = tuple(reversed(strides))
        self.size = s

    def __len__(self) -> int:
        return len(self.cards)

    def encode(self, values: Sequence[int]) -> int:
        if len(values) != len(self.cards):
            raise DomainError(f"expected {len(self.cards)} digits, got {len(values)}")
        code = 0
        for v, c, st in zip(values, self.cards, self.strides):
            v = int(v)
            if not 0 <= v < c:
                raise DomainError(f"digit {v} out of range [0, {c})")
            code += v * st
        return code

    def encode_many(self, values: np.ndarray) -> np.ndarray:
        """Vectorized encode; `values` has shape (n, len(cards))."""
        values = np.asarray(values, dtype=np.int64)
        if values.ndim != 2 or values.shape[1] != len(self.cards):
            raise DomainError(f"expected shape (n, {len(self.cards)})")
        return values @ np.asarray(self.strides, dtype=np.int64)

    def decode(self, code: int) -> tuple[int, ...]:
        code = int(code)
        if not 0 <= code < self.size:
            raise DomainError(f"code {code} out of range [0, {self.size})")
        out = []
        for c, st in zip(self.cards, self.strides):
            out.append((code // st) % c)
        return tuple(out)

    def table(self) -> np.ndarray:
        """All codes decoded at once; shape (size, len(cards))."""
        codes = np.arange(self.size, dtype=np.int64)
        cols = [
            (codes // st) % c for c, st in zip(self.cards, self.strides)
        ]
        if not cols:
            return np.zeros((1, 0), dtype=np.int64)
        return np.stack(cols, axis=1)

    def __repr__(self) -> str:
        return f"MixedRadix({list(self.cards)})"
