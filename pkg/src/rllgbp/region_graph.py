"""Cluster-variation region graphs over box-shaped basic regions.

Basic regions are every placement of the plan box on the grid.  The region
set is their closure under intersection, counting numbers follow the
ancestor recursion ``c_R = 1 - sum_{A ancestor of R} c_A``, and edges form
the Hasse diagram of strict containment.

Boxes intersect coordinate-wise, so the closure of the box family is the
product of the per-axis closures of the window intervals, its containment
order is the product order, and the counting numbers multiply across axes.
:func:`build_region_graph` uses that factorisation, with the generic
set-based helpers below doing the per-axis work; the same helpers serve as
an independent cross-check on small grids.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .constraint_model import INF, RllSpec
from .grid_graph import FactorGraph, placement_shape


@dataclass(frozen=True)
class BasicRegionPlan:
    extents: tuple[int, ...]

    def fit_to(self, shape) -> "BasicRegionPlan":
        """Clip each extent to the grid; a clipped axis spans the whole grid."""
        return BasicRegionPlan(tuple(min(e, int(s)) for e, s in zip(self.extents, shape)))


def plan_basic_regions(spec: RllSpec) -> BasicRegionPlan:
    """``k + 1`` along axes with finite ``k``, otherwise ``d + 1``."""
    return BasicRegionPlan(tuple(d + 1 if k == INF else k + 1 for d, k in spec.axes))


# -- generic set-based machinery --------------------------------------------

def close_under_intersection(sets: Iterable[frozenset]) -> list[frozenset]:
    """Pairwise-iterated intersection closure, deduplicated, empty sets dropped."""
    found: dict[frozenset, None] = dict.fromkeys(frozenset(s) for s in sets)
    frontier = list(found)
    while frontier:
        members = list(found)
        fresh = {}
        for a in frontier:
            for b in members:
                c = a & b
                if c and c not in found and c not in fresh:
                    fresh[c] = None
        found.update(fresh)
        frontier = list(fresh)
    return list(found)


def ancestor_counting_numbers(regions: Sequence[frozenset]) -> list[int]:
    """``c_R = 1 - sum of c over strict supersets``, largest regions first."""
    order = sorted(range(len(regions)), key=lambda i: -len(regions[i]))
    c = [0] * len(regions)
    for pos, i in enumerate(order):
        r = regions[i]
        c[i] = 1 - sum(c[j] for j in order[:pos] if len(regions[j]) > len(r) and r < regions[j])
    return c


def hasse_edges(regions: Sequence[frozenset]) -> list[tuple[int, int]]:
    """Covering pairs ``(parent, child)`` of strict set containment."""
    supersets = [[j for j, s in enumerate(regions) if r < s] for r in regions]
    edges = []
    for i, sup in enumerate(supersets):
        for j in sup:
            if not any(regions[k] < regions[j] for k in sup if k != j):
                edges.append((j, i))
    return sorted(edges)


@dataclass
class _AxisPoset:
    starts: np.ndarray
    lengths: np.ndarray
    counting: np.ndarray
    edges: np.ndarray  # (E, 2) parent, child


def _axis_poset(extent: int, window: int) -> _AxisPoset:
    windows = [frozenset(range(p, p + window)) for p in range(extent - window + 1)]
    closed = close_under_intersection(windows)
    closed.sort(key=lambda s: (-len(s), min(s)))
    c = ancestor_counting_numbers(closed)
    edges = hasse_edges(closed)
    return _AxisPoset(
        starts=np.array([min(s) for s in closed], dtype=np.int64),
        lengths=np.array([len(s) for s in closed], dtype=np.int64),
        counting=np.array(c, dtype=np.int64),
        edges=np.array(edges, dtype=np.int64).reshape(-1, 2),
    )


# -- region graph -----------------------------------------------------------

@dataclass(frozen=True)
class Region:
    id: int
    vars: tuple[int, ...]
    factors: tuple[int, ...]
    counting_number: int
    origin: tuple[int, ...]
    extent: tuple[int, ...]


class RegionGraph:
    """Box regions with counting numbers and parent->child edges.

    Regions are indexed ``0..n_regions-1`` ordered by decreasing size, then
    origin.  ``edges`` holds ``(parent, child)`` rows sorted lexicographically.
    """

    def __init__(self, factor_graph: FactorGraph, plan: BasicRegionPlan,
                 origins, extents, counting, edges):
        self.factor_graph = factor_graph
        self.plan = plan
        self.origins = np.asarray(origins, dtype=np.int64)
        self.extents = np.asarray(extents, dtype=np.int64)
        self.counting = np.asarray(counting, dtype=np.int64)
        self.edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        for arr in (self.origins, self.extents, self.counting, self.edges):
            arr.setflags(write=False)
        self._topology = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.factor_graph.shape

    @property
    def n_regions(self) -> int:
        return len(self.counting)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def sizes(self) -> np.ndarray:
        return self.extents.prod(axis=1)

    @property
    def basic(self) -> np.ndarray:
        return (self.extents == np.array(self.plan.extents)).all(axis=1)

    def basic_raster_order(self) -> np.ndarray:
        """Basic region ids sorted by origin in C order."""
        ids = np.flatnonzero(self.basic)
        keys = np.ravel_multi_index(self.origins[ids].T, self.shape)
        return ids[np.argsort(keys, kind="stable")]

    def vars_of(self, i: int) -> np.ndarray:
        o, e = self.origins[i], self.extents[i]
        cells = np.indices(tuple(e)).reshape(len(e), -1) + o[:, None]
        return np.ravel_multi_index(tuple(cells), self.shape)

    def factors_of(self, i: int) -> np.ndarray:
        g = self.factor_graph
        o, e = self.origins[i], self.extents[i]
        ids = []
        offset = 0
        for t, kern in enumerate(g.kernels):
            pshape = placement_shape(g.shape, kern)
            span = e.copy()
            span[kern.axis] -= kern.window_length - 1
            if span[kern.axis] > 0:
                anchors = np.indices(tuple(span)).reshape(len(span), -1) + o[:, None]
                ids.append(offset + np.ravel_multi_index(tuple(anchors), pshape))
            offset += int(np.prod(pshape))
        if g.unary is not None:
            ids.append(offset + self.vars_of(i))
        return np.sort(np.concatenate(ids)) if ids else np.zeros(0, dtype=np.int64)

    def region(self, i: int) -> Region:
        if not 0 <= i < self.n_regions:
            raise IndexError(f"no region {i}")
        return Region(int(i), tuple(int(v) for v in self.vars_of(i)),
                      tuple(int(a) for a in self.factors_of(i)), int(self.counting[i]),
                      tuple(int(v) for v in self.origins[i]), tuple(int(v) for v in self.extents[i]))

    def regions(self) -> list[Region]:
        return [self.region(i) for i in range(self.n_regions)]

    def children_of(self, i: int) -> np.ndarray:
        return self.edges[self.edges[:, 0] == i, 1]

    def parents_of(self, i: int) -> np.ndarray:
        return self.edges[self.edges[:, 1] == i, 0]

    def find(self, origin, extent) -> int:
        hit = np.flatnonzero((self.origins == np.asarray(origin)).all(axis=1)
                             & (self.extents == np.asarray(extent)).all(axis=1))
        if not len(hit):
            raise KeyError(f"no region at {tuple(origin)} with extent {tuple(extent)}")
        return int(hit[0])

    def with_factor_graph(self, g: FactorGraph) -> "RegionGraph":
        """Same topology over a factor graph differing only in unary tables."""
        if g.shape != self.shape or g.spec != self.factor_graph.spec:
            raise ValueError("replacement factor graph must share shape and constraint")
        out = RegionGraph(g, self.plan, self.origins, self.extents, self.counting, self.edges)
        # the compiled topology depends only on the constraint and hard zeros
        if _hard_zero_pattern(g) == _hard_zero_pattern(self.factor_graph):
            out._topology = self._topology
        return out

    def with_counting_numbers(self, counting) -> "RegionGraph":
        return RegionGraph(self.factor_graph, self.plan, self.origins, self.extents,
                           counting, self.edges)

    def census(self) -> dict:
        """Region counts grouped by extent and counting number."""
        by_shape: dict[str, dict] = {}
        for e, c in zip(map(tuple, self.extents), self.counting):
            key = "x".join(map(str, e))
            entry = by_shape.setdefault(key, {"regions": 0, "counting_numbers": {}})
            entry["regions"] += 1
            cn = entry["counting_numbers"]
            cn[str(int(c))] = cn.get(str(int(c)), 0) + 1
        return {"regions": self.n_regions, "edges": self.n_edges, "by_extent": by_shape}


def _hard_zero_pattern(g: FactorGraph):
    if g.unary is None:
        return None
    zeros = g.unary == 0
    return zeros.tobytes() if zeros.any() else None


def build_region_graph(g: FactorGraph, plan: BasicRegionPlan) -> RegionGraph:
    shape = g.shape
    if len(plan.extents) != len(shape):
        raise ValueError("plan and grid dimensionality differ")
    if any(p < 1 for p in plan.extents):
        raise ValueError("plan extents must be positive")
    if any(p > s for p, s in zip(plan.extents, shape)):
        raise ValueError(f"plan {plan.extents} is larger than grid {shape}")

    axes = [_axis_poset(s, p) for s, p in zip(shape, plan.extents)]
    dims = tuple(len(a.starts) for a in axes)
    idx = np.indices(dims).reshape(len(dims), -1)
    origins = np.stack([a.starts[i] for a, i in zip(axes, idx)], axis=1)
    extents = np.stack([a.lengths[i] for a, i in zip(axes, idx)], axis=1)
    counting = np.prod(np.stack([a.counting[i] for a, i in zip(axes, idx)]), axis=0)

    size = extents.prod(axis=1)
    flat_origin = np.ravel_multi_index(origins.T, shape)
    order = np.lexsort((np.ravel_multi_index((extents - 1).T, plan.extents), flat_origin, -size))
    rank = np.empty_like(order)
    rank[order] = np.arange(len(order))

    edges = []
    for a, ax in enumerate(axes):
        if not len(ax.edges):
            continue
        other = [range(n) for b, n in enumerate(dims) if b != a]
        rest = np.array(list(itertools.product(*other)), dtype=np.int64).reshape(-1, len(dims) - 1)
        par_idx = []
        chi_idx = []
        for parent1, child1 in ax.edges:
            full_p = np.insert(rest, a, parent1, axis=1)
            full_c = np.insert(rest, a, child1, axis=1)
            par_idx.append(np.ravel_multi_index(full_p.T, dims))
            chi_idx.append(np.ravel_multi_index(full_c.T, dims))
        edges.append(np.stack([np.concatenate(par_idx), np.concatenate(chi_idx)], axis=1))
    edges = np.concatenate(edges) if edges else np.zeros((0, 2), dtype=np.int64)
    edges = rank[edges]
    edges = edges[np.lexsort((edges[:, 1], edges[:, 0]))]
    return RegionGraph(g, plan, origins[order], extents[order], counting[order], edges)


def generic_region_graph(g: FactorGraph, plan: BasicRegionPlan):
    """Set-based closure over all basic windows; returns (regions, counting, edges).

    Quadratic in the region count, so only for small grids.
    """
    shape = g.shape
    windows = []
    for origin in np.ndindex(*(s - p + 1 for s, p in zip(shape, plan.extents))):
        cells = np.indices(plan.extents).reshape(len(shape), -1) + np.array(origin)[:, None]
        windows.append(frozenset(int(v) for v in np.ravel_multi_index(tuple(cells), shape)))
    regions = close_under_intersection(windows)
    regions.sort(key=lambda s: (-len(s), sorted(s)))
    return regions, ancestor_counting_numbers(regions), hasse_edges(regions)


# -- validation ---------------------------------------------------------------

@dataclass
class ValidationReport:
    passed: bool
    variable_sums: np.ndarray = field(repr=False)
    factor_sums: np.ndarray = field(repr=False)
    bad_variables: list = field(default_factory=list)
    bad_factors: list = field(default_factory=list)
    edge_problems: list = field(default_factory=list)

    def summary(self) -> dict:
        return {
            "passed": self.passed,
            "variables": int(self.variable_sums.size),
            "factors": int(self.factor_sums.size),
            "bad_variables": [(int(v), int(s)) for v, s in self.bad_variables[:20]],
            "bad_factors": [(int(a), int(s)) for a, s in self.bad_factors[:20]],
            "edge_problems": self.edge_problems[:20],
        }


def _box_coverage(grid_shape, origins, extents, weights) -> np.ndarray:
    """sum of ``weights`` over boxes covering each cell, via an N-d difference array."""
    ndim = len(grid_shape)
    diff = np.zeros(tuple(s + 1 for s in grid_shape), dtype=np.int64)
    keep = (extents > 0).all(axis=1)
    origins, extents, weights = origins[keep], extents[keep], weights[keep]
    for corner in itertools.product((0, 1), repeat=ndim):
        corner = np.array(corner)
        idx = origins + extents * corner
        sign = -1 if corner.sum() % 2 else 1
        np.add.at(diff, tuple(idx.T), sign * weights)
    for a in range(ndim):
        diff = np.cumsum(diff, axis=a)
    return diff[tuple(slice(0, s) for s in grid_shape)]


def _box_codes(origins, extents, shape, max_ext):
    ext_code = np.ravel_multi_index((extents - 1).T, max_ext)
    return np.ravel_multi_index(origins.T, shape) * int(np.prod(max_ext)) + ext_code


def _edge_problems(rg: RegionGraph) -> list:
    problems = []
    if not rg.n_edges:
        nonbasic = np.flatnonzero(~rg.basic)
        return [f"region {int(r)} has no parent" for r in nonbasic[:20]]
    P, C = rg.edges[:, 0], rg.edges[:, 1]
    po, pe, co, ce = rg.origins[P], rg.extents[P], rg.origins[C], rg.extents[C]
    inside = (co >= po).all(axis=1) & (co + ce <= po + pe).all(axis=1)
    strict = rg.sizes[C] < rg.sizes[P]
    for e in np.flatnonzero(~(inside & strict))[:20]:
        problems.append(f"edge {int(P[e])}->{int(C[e])} is not a strict containment")
    if problems:
        return problems

    has_parent = np.zeros(rg.n_regions, dtype=bool)
    has_parent[C] = True
    for r in np.flatnonzero(~has_parent & ~rg.basic)[:20]:
        problems.append(f"region {int(r)} has no parent")

    # no region strictly between parent and child
    max_ext = tuple(int(v) for v in rg.extents.max(axis=0))
    codes = np.sort(_box_codes(rg.origins, rg.extents, rg.shape, max_ext))
    rel = co - po
    key = np.concatenate([pe, ce, rel], axis=1)
    types, inverse = np.unique(key, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    ndim = len(rg.shape)
    for t, row in enumerate(types):
        pe_t, ce_t, rel_t = row[:ndim], row[ndim:2 * ndim], row[2 * ndim:]
        per_axis = []
        for a in range(ndim):
            lo, hi = rel_t[a], rel_t[a] + ce_t[a]
            per_axis.append([(s, e) for s in range(0, lo + 1) for e in range(hi, pe_t[a] + 1)])
        members = np.flatnonzero(inverse == t)
        for combo in itertools.product(*per_axis):
            q_rel = np.array([s for s, _ in combo])
            q_ext = np.array([e - s for s, e in combo])
            if (q_ext == pe_t).all() or ((q_rel == rel_t).all() and (q_ext == ce_t).all()):
                continue
            q_org = po[members] + q_rel
            qc = _box_codes(q_org, np.broadcast_to(q_ext, q_org.shape), rg.shape, max_ext)
            pos = np.searchsorted(codes, qc)
            hit = (pos < len(codes)) & (codes[np.minimum(pos, len(codes) - 1)] == qc)
            for e in members[hit][:5]:
                problems.append(f"edge {int(P[e])}->{int(C[e])} skips an intermediate region")
    return problems


def validate_region_graph(rg: RegionGraph) -> ValidationReport:
    """Check counting-number sums (variables and factors) and the Hasse structure."""
    g = rg.factor_graph
    var_sums = _box_coverage(g.shape, rg.origins, rg.extents, rg.counting).ravel()
    factor_parts = []
    for kern in g.kernels:
        pshape = placement_shape(g.shape, kern)
        if int(np.prod(pshape)) == 0:
            continue
        span = rg.extents.copy()
        span[:, kern.axis] -= kern.window_length - 1
        span = np.maximum(span, 0)
        factor_parts.append(_box_coverage(pshape, rg.origins, span, rg.counting).ravel())
    if g.unary is not None:
        factor_parts.append(var_sums)
    factor_sums = np.concatenate(factor_parts) if factor_parts else np.zeros(0, dtype=np.int64)

    bad_v = [(int(v), int(var_sums[v])) for v in np.flatnonzero(var_sums != 1)]
    bad_f = [(int(a), int(factor_sums[a])) for a in np.flatnonzero(factor_sums != 1)]
    edge_problems = _edge_problems(rg)
    passed = not bad_v and not bad_f and not edge_problems
    return ValidationReport(passed, var_sums, factor_sums, bad_v, bad_f, edge_problems)
