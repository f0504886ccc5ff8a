"""Factor graphs of RLL constraints on concrete grids.

Constraint factors are placements of the kernel templates at every anchor
where the window fits.  Optional per-variable unary tables carry channel
evidence ``p(y_i | x_i)`` (strictly positive) or hard 0/1 restrictions.
Factor ids are deterministic: kernel placements first, in template order and
C-order of anchors, then one unary factor per variable.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .constraint_model import RllSpec, WindowKernel, build_kernels


class FactorKind(enum.Enum):
    CONSTRAINT = "constraint"
    EVIDENCE = "evidence"


@dataclass(frozen=True)
class FactorInstance:
    id: int
    scope: tuple[int, ...]
    table: np.ndarray = field(repr=False)
    kind: FactorKind


def placement_shape(shape: tuple[int, ...], kernel: WindowKernel) -> tuple[int, ...]:
    """Grid of valid anchors for ``kernel``; an axis of extent 0 means none fit."""
    out = list(shape)
    out[kernel.axis] = max(shape[kernel.axis] - kernel.window_length + 1, 0)
    return tuple(out)


class FactorGraph:
    """Binary grid variables plus kernel placements and optional unary tables."""

    def __init__(self, shape, spec: RllSpec, unary=None, unary_kind=FactorKind.EVIDENCE):
        shape = tuple(int(s) for s in shape)
        if len(shape) != spec.ndim:
            raise ValueError(f"shape {shape} does not match a {spec.ndim}-D constraint")
        if any(s < 1 for s in shape):
            raise ValueError(f"grid extents must be >= 1, got {shape}")
        self.shape = shape
        self.spec = spec
        self.kernels = build_kernels(spec)
        self.unary = None
        self.unary_kind = unary_kind
        if unary is not None:
            unary = np.asarray(unary, dtype=float).reshape(self.n_variables, 2)
            if not np.isfinite(unary).all() or (unary < 0).any():
                raise ValueError("unary tables must be finite and nonnegative")
            if unary_kind is FactorKind.EVIDENCE and (unary <= 0).any():
                raise ValueError("evidence tables must be strictly positive")
            if unary_kind is FactorKind.CONSTRAINT and not np.isin(unary, (0.0, 1.0)).all():
                raise ValueError("constraint tables must be 0/1")
            unary.setflags(write=False)
            self.unary = unary

    @property
    def ndim(self) -> int:
        return len(self.shape)

    @property
    def n_variables(self) -> int:
        return int(np.prod(self.shape))

    @property
    def log_unary(self):
        if self.unary is None:
            return None
        with np.errstate(divide="ignore"):
            return np.log(self.unary)

    def placement_counts(self) -> list[int]:
        return [int(np.prod(placement_shape(self.shape, k))) for k in self.kernels]

    @property
    def n_factors(self) -> int:
        return sum(self.placement_counts()) + (self.n_variables if self.unary is not None else 0)

    def _id_offsets(self) -> list[int]:
        return list(np.cumsum([0] + self.placement_counts()))

    def factor_id(self, template: int, anchor) -> int:
        pshape = placement_shape(self.shape, self.kernels[template])
        return int(self._id_offsets()[template] + np.ravel_multi_index(tuple(anchor), pshape))

    def unary_factor_id(self, var: int) -> int:
        if self.unary is None:
            raise ValueError("graph has no unary factors")
        return int(self._id_offsets()[-1] + var)

    def kernel_scope(self, template: int, anchor) -> tuple[int, ...]:
        kern = self.kernels[template]
        cells = []
        for t in range(kern.window_length):
            idx = list(anchor)
            idx[kern.axis] += t
            cells.append(int(np.ravel_multi_index(tuple(idx), self.shape)))
        return tuple(cells)

    @cached_property
    def factors(self) -> list[FactorInstance]:
        """Materialised factor list; intended for small graphs and inspection."""
        out = []
        for t, kern in enumerate(self.kernels):
            for anchor in np.ndindex(*placement_shape(self.shape, kern)):
                out.append(FactorInstance(len(out), self.kernel_scope(t, anchor),
                                          kern.table, FactorKind.CONSTRAINT))
        if self.unary is not None:
            for v in range(self.n_variables):
                out.append(FactorInstance(len(out), (v,), self.unary[v], self.unary_kind))
        return out

    def factor_product(self, x) -> float:
        """Product of every factor table at the full assignment ``x``."""
        x = np.asarray(x).reshape(self.shape)
        flat = x.ravel()
        val = 1.0
        for f in self.factors:
            val *= float(f.table[tuple(int(flat[v]) for v in f.scope)])
            if val == 0.0:
                return 0.0
        return val


def build_factor_graph(shape, spec: RllSpec) -> FactorGraph:
    return FactorGraph(shape, spec)


def attach_evidence(g: FactorGraph, tables) -> FactorGraph:
    """Return a copy of ``g`` whose factor product also carries ``prod_i tables[i, x_i]``.

    Existing unary tables are multiplied in, so evidence can be layered.
    """
    tables = np.asarray(tables, dtype=float)
    if tables.shape != (g.n_variables, 2) and tables.shape != tuple(g.shape) + (2,):
        raise ValueError(f"need one (p0, p1) table per variable, got shape {tables.shape}")
    tables = tables.reshape(g.n_variables, 2)
    if not np.isfinite(tables).all() or (tables <= 0).any():
        raise ValueError("evidence tables must be finite and strictly positive")
    if g.unary is not None:
        if g.unary_kind is FactorKind.CONSTRAINT:
            raise ValueError("cannot layer evidence on hard unary restrictions")
        tables = tables * g.unary
    return FactorGraph(g.shape, g.spec, tables, FactorKind.EVIDENCE)


def restrict_variables(g: FactorGraph, tables) -> FactorGraph:
    """Copy of ``g`` with hard 0/1 unary factors (e.g. to force cell values)."""
    return FactorGraph(g.shape, g.spec, tables, FactorKind.CONSTRAINT)
