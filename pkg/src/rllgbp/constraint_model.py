"""Run-length-limited constraint specifications and their window kernels.

A ``(d, k)`` rule on a line of binary symbols requires at least ``d`` zeros
between successive ones and forbids zero runs longer than ``k``.  On a grid
every axis carries its own pair, and the rule applies to each axis-aligned
line along that axis.

Both halves of the rule are local: a length ``d + 1`` window may hold at most
one 1, and a length ``k + 1`` window may not be all zeros.  The indicator of
an array is therefore the product of these two kernels slid over every
fully-contained window.  That product is the definition of admissibility
used everywhere in this package; on lines shorter than a kernel window the
corresponding half of the rule is vacuous.
"""
from __future__ import annotations

import enum
import itertools
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

INF = math.inf


class KernelKind(enum.Enum):
    AT_MOST_ONE_ONE = "at_most_one_one"
    AT_LEAST_ONE_ONE = "at_least_one_one"


@dataclass(frozen=True)
class RllSpec:
    """Per-axis ``(d, k)`` pairs; ``k`` may be ``INF``."""

    axes: tuple[tuple[int, float], ...]

    def __post_init__(self):
        axes = tuple((int(d), k if k == INF else int(k)) for d, k in self.axes)
        if not 1 <= len(axes) <= 3:
            raise ValueError(f"expected 1 to 3 axes, got {len(axes)}")
        for d, k in axes:
            if d < 0 or not d < k:
                raise ValueError(f"invalid run-length pair ({d}, {k}): need 0 <= d < k")
        object.__setattr__(self, "axes", axes)

    @classmethod
    def uniform(cls, d: int, k: float = INF, ndim: int = 2) -> "RllSpec":
        return cls(((d, k),) * ndim)

    @property
    def ndim(self) -> int:
        return len(self.axes)

    @property
    def all_k_infinite(self) -> bool:
        return all(k == INF for _, k in self.axes)

    def transposed(self) -> "RllSpec":
        return RllSpec(tuple(reversed(self.axes)))

    def __str__(self) -> str:
        return format_spec(self)


def parse_spec(text: str, ndim: int | None = None) -> RllSpec:
    """Parse ``"1,inf,2,4"`` style strings.

    A single pair is broadcast to ``ndim`` axes (default 2), so ``"1,inf"``
    is the 2-D (1, inf) constraint.
    """
    tokens = [t.strip().lower() for t in text.replace(";", ",").split(",") if t.strip()]
    if not tokens or len(tokens) % 2:
        raise ValueError(f"constraint {text!r} must list (d, k) pairs")
    values = []
    for tok in tokens:
        if tok in ("inf", "infinity", "oo"):
            values.append(INF)
            continue
        try:
            values.append(int(tok))
        except ValueError:
            raise ValueError(f"bad token {tok!r} in constraint {text!r}") from None
    for d in values[0::2]:
        if d == INF:
            raise ValueError(f"d must be finite in {text!r}")
    pairs = list(zip(values[0::2], values[1::2]))
    if len(pairs) == 1:
        pairs = pairs * (2 if ndim is None else ndim)
    elif ndim is not None and len(pairs) != ndim:
        raise ValueError(f"constraint {text!r} has {len(pairs)} axes, expected {ndim}")
    return RllSpec(tuple(pairs))


def format_spec(spec: RllSpec) -> str:
    out = []
    for d, k in spec.axes:
        out += [str(d), "inf" if k == INF else str(k)]
    return ",".join(out)


@dataclass(frozen=True, eq=False)
class WindowKernel:
    """A 0/1 truth table applied to every length-``window_length`` window along ``axis``."""

    axis: int
    window_length: int
    kind: KernelKind
    table: np.ndarray  # shape (2,) * window_length, uint8

    def __call__(self, window: Sequence[int]) -> int:
        return int(self.table[tuple(int(v) for v in window)])

    def violated(self, windows: np.ndarray) -> np.ndarray:
        """Vectorised check on ``(..., window_length)`` arrays of 0/1."""
        s = windows.sum(axis=-1)
        if self.kind is KernelKind.AT_MOST_ONE_ONE:
            return s >= 2
        return s == 0


def _kernel_table(length: int, kind: KernelKind) -> np.ndarray:
    table = np.zeros((2,) * length, dtype=np.uint8)
    for cfg in itertools.product((0, 1), repeat=length):
        ones = sum(cfg)
        ok = ones <= 1 if kind is KernelKind.AT_MOST_ONE_ONE else ones >= 1
        table[cfg] = ok
    return table


def build_kernels(spec: RllSpec) -> list[WindowKernel]:
    """Kernel templates whose sliding product is the indicator of ``spec``.

    Axes with ``d = 0`` emit no d-kernel and axes with ``k = inf`` no k-kernel.
    """
    kernels = []
    for axis, (d, k) in enumerate(spec.axes):
        if d > 0:
            kernels.append(WindowKernel(axis, d + 1, KernelKind.AT_MOST_ONE_ONE,
                                        _kernel_table(d + 1, KernelKind.AT_MOST_ONE_ONE)))
        if k != INF:
            kernels.append(WindowKernel(axis, k + 1, KernelKind.AT_LEAST_ONE_ONE,
                                        _kernel_table(k + 1, KernelKind.AT_LEAST_ONE_ONE)))
    return kernels


def kernel_windows(x: np.ndarray, kernel: WindowKernel) -> np.ndarray:
    """All fully-contained windows of ``kernel`` in ``x``, window cells on the last axis."""
    if x.shape[kernel.axis] < kernel.window_length:
        return np.zeros((0, kernel.window_length), dtype=x.dtype)
    return sliding_window_view(x, kernel.window_length, axis=kernel.axis)


def is_admissible(x, spec: RllSpec) -> bool:
    """True iff every fully-contained kernel window of ``x`` passes."""
    x = np.asarray(x)
    if x.ndim != spec.ndim:
        raise ValueError(f"array has {x.ndim} dimensions, constraint has {spec.ndim}")
    if x.size and not np.isin(x, (0, 1)).all():
        raise ValueError("array cells must be 0 or 1")
    for kern in build_kernels(spec):
        if kern.violated(kernel_windows(x, kern)).any():
            return False
    return True


def admissible_mask(batch: np.ndarray, spec: RllSpec) -> np.ndarray:
    """Vectorised :func:`is_admissible` over the leading axis of ``batch``."""
    ok = np.ones(batch.shape[0], dtype=bool)
    for kern in build_kernels(spec):
        if batch.shape[kern.axis + 1] < kern.window_length:
            continue
        win = sliding_window_view(batch, kern.window_length, axis=kern.axis + 1)
        bad = kern.violated(win).reshape(batch.shape[0], -1).any(axis=1)
        ok &= ~bad
    return ok


def runs_admissible(line: Sequence[int], d: int, k: float) -> bool:
    """Direct run-length scan of one line (independent of the kernel route)."""
    line = [int(v) for v in line]
    ones = [i for i, v in enumerate(line) if v]
    for a, b in zip(ones, ones[1:]):
        if b - a - 1 < d:
            return False
    run = 0
    for v in line:
        run = 0 if v else run + 1
        if run > k:
            return False
    return True
