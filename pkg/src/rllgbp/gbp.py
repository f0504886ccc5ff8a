"""Generalized belief propagation on box region graphs.

Three solvers share one compiled topology and return the same kind of
``BeliefSet``:

``Method.BLOCK`` (default)
    Block-coordinate updates.  Basic regions hold the factors; every other
    region with a nonzero counting number owns a belief ``q`` and one
    multiplier per containing basic region.  Updating a block makes all
    containing basic beliefs marginalise exactly to ``q``.  Positive
    counting numbers enter exactly; negative ones are linearised around
    the current ``q``.  Optional Anderson mixing speeds up the sweeps.
``Method.DOUBLE_LOOP``
    The same blocks, but the linearisation point is frozen until the
    inner sweeps settle.  Each outer step then minimises a convex upper
    bound of the free energy, so the free energy decreases monotonically.
    Slower, kept as a convergent fallback.
``Method.PARENT_TO_CHILD``
    Classic parent-to-child message passing, written in terms of beliefs:
    a message update multiplies the old message by the parent belief
    marginalised onto the child and divides by the child belief.  On
    larger loopy grids its undamped fixed points can be unstable.

All solvers reach the same fixed points: stationary points of the region
free energy with consistent beliefs along every edge.

Configurations forbidden by a region's own factors are never stored.  On
top of that an arc-consistency pass removes configurations that cannot be
extended into some parent or whose restriction to a child is unsupported;
the surviving pattern is the support mask that every product, division and
normalisation respects.  Everything runs in the log domain.
"""
from __future__ import annotations

import enum
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from .region_graph import RegionGraph

log = logging.getLogger(__name__)


class Method(enum.Enum):
    BLOCK = "block"
    DOUBLE_LOOP = "double-loop"
    PARENT_TO_CHILD = "parent-to-child"


class Schedule(enum.Enum):
    SYNCHRONOUS = "synchronous"
    SEQUENTIAL = "sequential"


class EmptySupportError(RuntimeError):
    """The constraints (plus any hard unary restrictions) admit no configuration."""


class NonConvergenceError(RuntimeError):
    """GBP stopped at ``max_iterations`` with the residual above tolerance."""

    def __init__(self, message, beliefs=None):
        super().__init__(message)
        self.beliefs = beliefs


@dataclass(frozen=True)
class GbpConfig:
    damping: float = 0.5
    tolerance: float = 1e-9
    max_iterations: int = 10_000
    schedule: Schedule = Schedule.SYNCHRONOUS
    seed: int = 0
    method: Method = Method.BLOCK
    # block method: Anderson mixing memory (0 disables) and the largest
    # state, in floats, for which the history is kept
    anderson: int = 3
    anderson_max_state: int = 4_000_000
    # parent-to-child only: divide each synchronous step by the number of parents of the child
    parent_scaling: bool = True

    def __post_init__(self):
        if not 0.0 <= self.damping < 1.0:
            raise ValueError("damping must lie in [0, 1)")
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")
        if self.anderson < 0:
            raise ValueError("anderson memory must be nonnegative")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be positive")
        object.__setattr__(self, "schedule", Schedule(self.schedule))
        object.__setattr__(self, "method", Method(self.method))

    def as_dict(self) -> dict:
        return {"damping": self.damping, "tolerance": self.tolerance,
                "max_iterations": self.max_iterations, "schedule": self.schedule.value,
                "seed": self.seed, "method": self.method.value,
                "anderson": self.anderson, "parent_scaling": self.parent_scaling}


# -- compilation ----------------------------------------------------------------

def box_configurations(extent, kernels) -> np.ndarray:
    """All 0/1 fillings of a box passing every kernel window inside it (C order)."""
    extent = tuple(int(e) for e in extent)
    size = int(np.prod(extent))
    strides = np.cumprod((1,) + extent[::-1])[:-1][::-1]
    configs = np.zeros((1, 0), dtype=np.uint8)
    for t in range(size):
        n = len(configs)
        configs = np.concatenate([np.repeat(configs, 2, axis=0),
                                  np.tile(np.array([[0], [1]], dtype=np.uint8), (n, 1))], axis=1)
        coord = np.unravel_index(t, extent)
        for kern in kernels:
            w = kern.window_length
            if coord[kern.axis] >= w - 1:
                cells = [t - j * int(strides[kern.axis]) for j in range(w - 1, -1, -1)]
                configs = configs[~kern.violated(configs[:, cells])]
    return configs


def _pack(bits: np.ndarray) -> np.ndarray:
    if bits.shape[1] > 62:
        raise ValueError("regions of more than 62 cells are not supported")
    return bits.astype(np.int64) @ (np.int64(1) << np.arange(bits.shape[1], dtype=np.int64))


@dataclass
class Topology:
    """Flat arrays describing one region graph for the numba kernels.

    Projection tables exist for every (outer shape, inner shape, offset)
    where the inner box fits in the outer one; ``lut`` maps the integer code
    of such a triple to its table.
    """

    shapes: np.ndarray
    sid: np.ndarray
    configs: list
    nvars: np.ndarray
    bits_flat: np.ndarray
    bits_off: np.ndarray
    conf_off: np.ndarray
    var_off: np.ndarray
    var_idx: np.ndarray
    edge_parent: np.ndarray
    edge_child: np.ndarray
    edge_proj: np.ndarray
    proj_flat: np.ndarray
    proj_off: np.ndarray
    lut: np.ndarray
    coder: "_Coder" = field(repr=False)
    mask: np.ndarray = field(repr=False)
    origins: np.ndarray = field(repr=False)
    compile_seconds: float = 0.0
    _slots: tuple | None = field(default=None, repr=False)
    _blocks: "Blocks | None" = field(default=None, repr=False)

    @property
    def msg_off(self) -> np.ndarray:
        counts = np.diff(self.conf_off)[self.edge_child]
        off = np.zeros(len(counts) + 1, dtype=np.int64)
        np.cumsum(counts, out=off[1:])
        return off

    def region_configs(self, r: int) -> np.ndarray:
        return self.configs[self.sid[r]]

    def region_slice(self, r: int) -> slice:
        return slice(int(self.conf_off[r]), int(self.conf_off[r + 1]))

    def proj_id(self, outer, inner, offsets) -> np.ndarray:
        return self.lut[self.coder.encode(self.sid[outer], self.sid[inner], offsets)]

    def projection(self, outer: int, inner: int) -> np.ndarray:
        """Map from configurations of region ``outer`` to those of ``inner`` inside it."""
        off = self.origins[inner] - self.origins[outer]
        if (off < 0).any() or (off + self.shapes[self.sid[inner]] > self.shapes[self.sid[outer]]).any():
            raise ValueError(f"region {inner} is not inside region {outer}")
        pid = int(self.proj_id(np.array([outer]), np.array([inner]), off[None, :])[0])
        if pid < 0:
            raise ValueError(f"region {inner} is not inside region {outer}")
        return self.proj_flat[self.proj_off[pid]:self.proj_off[pid + 1]]


class _Coder:
    """Integer codes for (outer shape, inner shape, offset) projection keys."""

    def __init__(self, shapes, max_ext):
        self.shapes = shapes
        self.n_shapes = len(shapes)
        self.max_ext = tuple(int(v) for v in max_ext)
        self.n_off = int(np.prod(self.max_ext))
        self.ostride = np.array(np.cumprod((1,) + self.max_ext[::-1])[:-1][::-1], dtype=np.int64)

    def encode(self, s_outer, s_inner, offsets):
        off = np.asarray(offsets) @ self.ostride
        return (np.asarray(s_outer) * self.n_shapes + s_inner) * self.n_off + off

    def containment_codes(self) -> np.ndarray:
        codes = []
        for so, eo in enumerate(self.shapes):
            for si, ei in enumerate(self.shapes):
                span = eo - ei + 1
                if (span < 1).any():
                    continue
                offs = np.indices(tuple(span)).reshape(len(span), -1).T
                codes.append(self.encode(so, si, offs))
        return np.unique(np.concatenate(codes))

    def tables(self, codes, configs):
        """Projection tables for each code; unmatched restrictions map to -1."""
        packed = [_pack(c) for c in configs]
        sorted_idx = [np.argsort(p, kind="stable") for p in packed]
        tables = []
        for code in codes:
            s_out, rem = divmod(int(code), self.n_shapes * self.n_off)
            s_in, off = divmod(rem, self.n_off)
            ext_out = tuple(self.shapes[s_out])
            ext_in = tuple(self.shapes[s_in])
            off = np.array(np.unravel_index(off, self.max_ext))
            local = np.indices(ext_in).reshape(len(ext_in), -1) + off[:, None]
            pos = np.ravel_multi_index(tuple(local), ext_out)
            key = _pack(configs[s_out][:, pos])
            table = np.full(len(key), -1, dtype=np.int64)
            order = sorted_idx[s_in]
            ref = packed[s_in][order]
            if len(ref):
                at = np.minimum(np.searchsorted(ref, key), len(ref) - 1)
                hit = ref[at] == key
                table[hit] = order[at[hit]]
            tables.append(table)
        return tables

    def flat_tables(self, codes, configs):
        tables = self.tables(codes, configs)
        proj_off = np.zeros(len(tables) + 1, dtype=np.int64)
        np.cumsum([len(t) for t in tables], out=proj_off[1:])
        proj_flat = np.concatenate(tables) if tables else np.zeros(0, dtype=np.int64)
        return proj_flat, proj_off


def _csr(keys, n):
    order = np.argsort(keys, kind="stable")
    off = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.bincount(keys, minlength=n), out=off[1:])
    return off, order


def compile_topology(rg: RegionGraph) -> Topology:
    """Candidate configurations, support masks and projection tables of ``rg``."""
    t0 = time.perf_counter()
    g = rg.factor_graph
    shapes, sid = np.unique(rg.extents, axis=0, return_inverse=True)
    sid = sid.reshape(-1).astype(np.int64)
    configs = [box_configurations(s, g.kernels) for s in shapes]
    nvars = shapes.prod(axis=1).astype(np.int64)
    coder = _Coder(shapes, rg.extents.max(axis=0))
    codes = coder.containment_codes()
    lut = np.full(coder.n_shapes * coder.n_shapes * coder.n_off, -1, dtype=np.int64)
    lut[codes] = np.arange(len(codes))

    sizes = nvars[sid]
    var_off = np.zeros(rg.n_regions + 1, dtype=np.int64)
    np.cumsum(sizes, out=var_off[1:])
    var_idx = np.empty(var_off[-1], dtype=np.int64)
    for s, ext in enumerate(shapes):
        members = np.flatnonzero(sid == s)
        local = np.indices(tuple(ext)).reshape(len(ext), -1).T
        cells = rg.origins[members][:, None, :] + local[None, :, :]
        flat = np.ravel_multi_index(tuple(np.moveaxis(cells, -1, 0)), rg.shape)
        pos = var_off[members][:, None] + np.arange(len(local))[None, :]
        var_idx[pos] = flat

    P = rg.edges[:, 0].copy()
    C = rg.edges[:, 1].copy()
    edge_proj = lut[coder.encode(sid[P], sid[C], rg.origins[C] - rg.origins[P])]
    if g.unary is not None:
        allowed = (g.unary > 0).astype(np.uint8)
    else:
        allowed = np.ones((g.n_variables, 2), dtype=np.uint8)

    def layout(cfgs):
        counts = np.array([len(c) for c in cfgs], dtype=np.int64)
        conf_off = np.zeros(rg.n_regions + 1, dtype=np.int64)
        np.cumsum(counts[sid], out=conf_off[1:])
        bits_off = np.zeros(len(cfgs) + 1, dtype=np.int64)
        np.cumsum([c.size for c in cfgs], out=bits_off[1:])
        bits_flat = np.concatenate([c.ravel() for c in cfgs]).astype(np.uint8)
        return counts, conf_off, bits_flat, bits_off

    # prune the locally admissible candidates to arc-consistent supports
    counts, conf_off, bits_flat, bits_off = layout(configs)
    proj_flat, proj_off = coder.flat_tables(codes, configs)
    mask = K.initial_mask(conf_off, sid, bits_flat, bits_off, nvars, var_off, var_idx, allowed)
    K.arc_consistency(P, C, edge_proj, proj_flat, proj_off, conf_off, mask)
    supported = np.add.reduceat(mask.astype(np.int64), conf_off[:-1])
    if (supported == 0).any():
        bad = int(np.flatnonzero(supported == 0)[0])
        raise EmptySupportError(f"region {bad} has no admissible configuration")

    # keep per shape only the configurations supported somewhere
    parts = []
    for s in range(len(shapes)):
        members = np.flatnonzero(sid == s)
        idx = conf_off[members][:, None] + np.arange(counts[s])[None, :]
        m2 = mask[idx].astype(bool)
        keep = m2.any(axis=0)
        configs[s] = configs[s][keep]
        parts.append((members, m2[:, keep]))
    counts, conf_off, bits_flat, bits_off = layout(configs)
    mask = np.zeros(conf_off[-1], dtype=np.uint8)
    for s, (members, m2) in enumerate(parts):
        idx = conf_off[members][:, None] + np.arange(counts[s])[None, :]
        mask[idx] = m2
    proj_flat, proj_off = coder.flat_tables(codes, configs)
    # restrictions of pruned configurations are never looked up; keep indices valid
    proj_flat = np.where(proj_flat < 0, 0, proj_flat)

    top = Topology(shapes, sid, configs, nvars, bits_flat, bits_off, conf_off, var_off, var_idx,
                   P, C, edge_proj, proj_flat, proj_off, lut, coder, mask, rg.origins,
                   time.perf_counter() - t0)
    log.debug("compiled %d regions (%d shapes) in %.2fs", rg.n_regions, len(shapes),
              top.compile_seconds)
    return top


def topology(rg: RegionGraph) -> Topology:
    if rg._topology is None:
        rg._topology = compile_topology(rg)
    return rg._topology


def _slots(rg: RegionGraph, top: Topology):
    """Messages entering each region's descendant closure from outside it."""
    if top._slots is None:
        P, C = top.edge_parent, top.edge_child
        ch_off, ch_order = _csr(P, rg.n_regions)
        ch_list = C[ch_order]
        pe_off, pe_list = _csr(C, rg.n_regions)
        slot_counts = K.count_slots(ch_off, ch_list, pe_off, pe_list, P, rg.n_regions)
        slot_off = np.zeros(rg.n_regions + 1, dtype=np.int64)
        np.cumsum(slot_counts, out=slot_off[1:])
        slot_edge = np.empty(slot_off[-1], dtype=np.int64)
        slot_code = np.empty(slot_off[-1], dtype=np.int64)
        c = top.coder
        K.fill_slots(ch_off, ch_list, pe_off, pe_list, P, rg.n_regions, slot_off, top.sid,
                     rg.origins, c.n_shapes, c.ostride, c.n_off, slot_edge, slot_code)
        top._slots = (slot_off, slot_edge, top.lut[slot_code])
    return top._slots


@dataclass
class Blocks:
    """Outer (basic) / inner (nonzero counting number) containment structure."""

    outer: np.ndarray          # region ids of basic regions, row order of S
    inner_order: np.ndarray    # inner region ids in update order
    blk_off: np.ndarray        # per region: range of its (outer, inner) pairs
    pair_alpha: np.ndarray     # row of S for each pair
    pair_proj: np.ndarray
    lam_off: np.ndarray
    passive: np.ndarray        # zero-counting-number non-basic regions
    passive_alpha: np.ndarray  # region id of a basic region containing each
    q_index: np.ndarray        # supported belief entries of the inner regions


def _blocks(rg: RegionGraph, top: Topology) -> Blocks:
    if top._blocks is not None:
        return top._blocks
    shape = np.array(rg.shape)
    w = np.array(rg.plan.extents)
    grid = tuple(shape - w + 1)
    outer = rg.basic_raster_order()
    is_basic = rg.basic
    inner = np.flatnonzero(~is_basic & (rg.counting != 0))
    passive = np.flatnonzero(~is_basic & (rg.counting == 0))

    alpha_rows, betas, projs = [], [], []
    for s, ext in enumerate(top.shapes):
        members = inner[top.sid[inner] == s]
        if not len(members):
            continue
        o = rg.origins[members]
        for d in np.indices(tuple(w - ext + 1)).reshape(len(w), -1).T:
            ao = o - d
            ok = ((ao >= 0) & (ao <= shape - w)).all(axis=1)
            if not ok.any():
                continue
            rows = np.ravel_multi_index(tuple(ao[ok].T), grid)
            alpha_rows.append(rows)
            betas.append(members[ok])
            code = top.coder.encode(top.sid[outer[0]], s, d)
            projs.append(np.full(int(ok.sum()), top.lut[code], dtype=np.int64))
    if betas:
        betas = np.concatenate(betas)
        order = np.argsort(betas, kind="stable")
        betas = betas[order]
        pair_alpha = np.concatenate(alpha_rows)[order]
        pair_proj = np.concatenate(projs)[order]
    else:
        betas = pair_alpha = pair_proj = np.zeros(0, dtype=np.int64)
    blk_off = np.zeros(rg.n_regions + 1, dtype=np.int64)
    np.cumsum(np.bincount(betas, minlength=rg.n_regions), out=blk_off[1:])
    nb = np.diff(top.conf_off)[betas]
    lam_off = np.zeros(len(betas) + 1, dtype=np.int64)
    np.cumsum(nb, out=lam_off[1:])
    keys = np.ravel_multi_index(tuple(rg.origins[inner].T), rg.shape)
    inner_order = inner[np.lexsort((keys, -rg.sizes[inner]))]
    ao = np.minimum(rg.origins[passive], shape - w)
    passive_alpha = outer[np.ravel_multi_index(tuple(ao.T), grid)] if len(passive) else passive
    counts = np.diff(top.conf_off)[inner]
    q_index = np.repeat(top.conf_off[inner], counts) + (
        np.arange(counts.sum()) - np.repeat(np.cumsum(counts) - counts, counts))
    q_index = q_index[top.mask[q_index] > 0]
    top._blocks = Blocks(outer, inner_order, blk_off, pair_alpha, pair_proj, lam_off,
                         passive, passive_alpha, q_index)
    return top._blocks


# -- beliefs --------------------------------------------------------------------

@dataclass
class BeliefSet:
    """Region beliefs of one run plus the state needed to warm-start another."""

    region_graph: RegionGraph = field(repr=False)
    topology: Topology = field(repr=False)
    log_beliefs: np.ndarray = field(repr=False)
    log_factors: np.ndarray = field(repr=False)
    state: dict = field(repr=False)
    mask: np.ndarray = field(repr=False)
    iterations: int
    residual: float
    converged: bool
    consistency_residual: float
    config: GbpConfig
    seconds: float = 0.0

    def support(self, region_id: int):
        """(configurations, probabilities) over the region's stored configurations."""
        if not 0 <= region_id < self.region_graph.n_regions:
            raise KeyError(f"unknown region {region_id}")
        sl = self.topology.region_slice(region_id)
        probs = np.where(self.mask[sl] > 0, np.exp(self.log_beliefs[sl]), 0.0)
        probs.setflags(write=False)
        return self.topology.region_configs(region_id), probs

    def belief_of(self, region_id: int) -> np.ndarray:
        """Normalised dense table of shape ``(2,) * n_vars`` in the region's variable order."""
        configs, probs = self.support(region_id)
        n = configs.shape[1]
        if n > 24:
            raise ValueError(f"region of {n} cells is too large for a dense table")
        table = np.zeros((2,) * n)
        table[tuple(configs.T)] = probs
        table.setflags(write=False)
        return table

    def report(self) -> dict:
        return {"iterations": self.iterations, "residual": self.residual,
                "converged": self.converged, "consistency_residual": self.consistency_residual,
                **self.config.as_dict()}


def belief_of(bs: BeliefSet, region_id: int) -> np.ndarray:
    return bs.belief_of(region_id)


def uniform_messages(top: Topology, mask: np.ndarray) -> np.ndarray:
    msg_off = top.msg_off
    if not len(top.edge_child):
        return np.zeros(0)
    supported = np.add.reduceat(mask.astype(np.int64), top.conf_off[:-1])
    child_counts = supported[top.edge_child]
    lengths = np.diff(msg_off)
    values = np.repeat(-np.log(child_counts.astype(float)), lengths)
    entry_child = np.repeat(top.edge_child, lengths)
    entry_pos = np.arange(msg_off[-1]) - np.repeat(msg_off[:-1], lengths)
    supported_entry = mask[top.conf_off[entry_child] + entry_pos] > 0
    return np.where(supported_entry, values, 0.0)


def _log_factors(rg: RegionGraph, top: Topology) -> np.ndarray:
    g = rg.factor_graph
    if g.unary is None:
        return np.zeros(top.conf_off[-1])
    with np.errstate(divide="ignore"):
        lu = np.where(g.unary > 0, np.log(np.where(g.unary > 0, g.unary, 1.0)), 0.0)
    return K.log_factors(top.conf_off, top.sid, top.bits_flat, top.bits_off, top.nvars,
                         top.var_off, top.var_idx, lu)


def run_gbp(rg: RegionGraph, cfg: GbpConfig | None = None, init: BeliefSet | None = None) -> BeliefSet:
    """Run the configured GBP method to a fixed point.

    Returns the beliefs even when ``max_iterations`` is hit; check
    ``converged``.  ``init`` (a previous result on a region graph with the
    same topology, e.g. the same grid with different evidence) warm-starts
    the iteration.
    """
    cfg = cfg or GbpConfig()
    t0 = time.perf_counter()
    top = topology(rg)
    mask = top.mask
    logf = _log_factors(rg, top)
    warm = None
    if init is not None and init.topology is top and init.config.method is cfg.method:
        warm = init.state
    if cfg.method is Method.PARENT_TO_CHILD:
        logb, state, it, residual, converged = _run_parent_to_child(rg, top, logf, cfg, warm)
    else:
        logb, state, it, residual, converged = _run_blocks(rg, top, logf, cfg, warm)
    cons = K.consistency(logb, top.edge_parent, top.edge_child, top.edge_proj, top.conf_off,
                         top.proj_flat, top.proj_off, mask) if len(top.edge_parent) else 0.0
    if not converged:
        log.warning("GBP (%s) stopped after %d iterations with residual %.3g",
                    cfg.method.value, it, residual)
    return BeliefSet(rg, top, logb, logf, state, mask, it, float(residual), converged,
                     float(cons), cfg, time.perf_counter() - t0)


class _Anderson:
    """Type-II Anderson mixing of a fixed-point map with a short history."""

    def __init__(self, memory: int):
        self.memory = memory
        self.reset()

    def reset(self):
        self.x = self.f = None
        self.dx: list = []
        self.df: list = []

    def __call__(self, x: np.ndarray, g: np.ndarray) -> np.ndarray:
        f = g - x
        if self.x is not None:
            self.dx.append(x - self.x)
            self.df.append(f - self.f)
            if len(self.dx) > self.memory:
                del self.dx[0], self.df[0]
        self.x, self.f = x, f
        if not self.dx:
            return g
        dF = np.stack(self.df, axis=1)
        gram = dF.T @ dF
        gram[np.diag_indices_from(gram)] += 1e-12 * np.trace(gram) + 1e-300
        try:
            gamma = np.linalg.solve(gram, dF.T @ f)
        except np.linalg.LinAlgError:
            self.reset()
            return g
        out = g - (np.stack(self.dx, axis=1) + dF) @ gamma
        return out if np.isfinite(out).all() else g


def _run_blocks(rg, top, logf, cfg, warm):
    """Block-coordinate updates between basic regions and the other counted regions.

    The basic regions carry the factors.  Every other region with a nonzero
    counting number gets a belief ``q`` and one multiplier per containing
    basic region; a block update sets all of them at once so that each
    containing basic belief marginalises to ``q``.  Positive counting
    numbers enter the update exactly; negative ones are linearised around
    the current ``q`` (single loop) or around a snapshot that is refreshed
    only once the inner sweeps have settled (double loop, a convex
    majorise-minimise scheme that decreases the free energy monotonically).
    """
    blk = _blocks(rg, top)
    conf_off, mask = top.conf_off, top.mask
    n_a = int(conf_off[blk.outer[0] + 1] - conf_off[blk.outer[0]])
    rows = conf_off[blk.outer][:, None] + np.arange(n_a)[None, :]
    S0 = np.where(mask[rows] > 0, logf[rows], K.NEG_INF)
    S = S0.copy()
    if warm is not None:
        lam = warm["lam"].copy()
        q = warm["q"].copy()
        K.apply_multipliers(S, lam, blk.pair_alpha, blk.pair_proj, blk.lam_off,
                            top.proj_flat, top.proj_off)
    else:
        lam = np.zeros(blk.lam_off[-1])
        q = np.zeros(conf_off[-1])
    counting = rg.counting.astype(float)
    chat = np.where(counting > 0, counting, 0.0)
    lin = counting - chat
    order = blk.inner_order
    if cfg.schedule is Schedule.SEQUENTIAL:
        rng = np.random.default_rng(cfg.seed)

    def sweep(qref):
        o = rng.permutation(order) if cfg.schedule is Schedule.SEQUENTIAL else order
        return K.block_sweep(o, S, lam, q, qref, blk.blk_off, blk.pair_alpha, blk.pair_proj,
                             blk.lam_off, conf_off, top.proj_flat, top.proj_off, mask, chat,
                             lin, logf, cfg.damping)

    q_idx = blk.q_index
    n_lam = len(lam)
    use_mixer = cfg.anderson > 0 and n_lam + len(q_idx) <= cfg.anderson_max_state

    def iterate(qref, tol, budget):
        """Sweep until the residual drops to ``tol``; returns (sweeps, residual)."""
        mixer = _Anderson(cfg.anderson) if use_mixer else None
        best, residual = np.inf, np.inf
        for n in range(1, budget + 1):
            if mixer is not None:
                x_old = np.concatenate([lam, q[q_idx]])
            residual = sweep(q if qref is None else qref)
            if not np.isfinite(residual):
                raise EmptySupportError("a region lost all support during the block updates")
            if residual <= tol:
                return n, residual
            if mixer is None:
                continue
            if residual > 10.0 * best:
                # extrapolation went astray: continue from the plain iterate
                mixer.reset()
            best = min(best, residual)
            x_new = mixer(x_old, np.concatenate([lam, q[q_idx]]))
            lam[:] = x_new[:n_lam]
            q[q_idx] = x_new[n_lam:]
            S[:] = S0
            K.apply_multipliers(S, lam, blk.pair_alpha, blk.pair_proj, blk.lam_off,
                                top.proj_flat, top.proj_off)
        return budget, residual

    it, residual, converged = 0, np.inf, False
    if not len(order):
        it, residual, converged = 1, 0.0, True
    elif cfg.method is Method.BLOCK:
        it, residual = iterate(None, cfg.tolerance, cfg.max_iterations)
        converged = residual <= cfg.tolerance
    else:
        if warm is None:
            sweep(q)  # start the linearisation from a consistent point
            it += 1
        inner_tol = 1e-3
        while it < cfg.max_iterations:
            qref = q.copy()
            n, _ = iterate(qref, max(inner_tol, 0.1 * cfg.tolerance), cfg.max_iterations - it)
            it += n
            residual = float(np.max(np.abs(q[q_idx] - qref[q_idx])))
            if residual <= cfg.tolerance and it < cfg.max_iterations:
                # confirm with a plain sweep, the same test the single loop uses
                residual = sweep(q)
                it += 1
                if residual <= cfg.tolerance:
                    converged = True
                    break
            inner_tol = max(0.01 * residual, 0.1 * cfg.tolerance)

    logb = np.zeros(conf_off[-1])
    for r in range(len(blk.outer)):
        row = S[r] - K.lse(S[r])
        logb[conf_off[blk.outer[r]]:conf_off[blk.outer[r] + 1]] = row
    logb[blk.q_index] = q[blk.q_index]
    if len(blk.passive):
        K.marginals_from(logb, blk.passive, blk.passive_alpha, top.lut, top.sid, top.origins,
                         top.coder.n_shapes, top.coder.ostride, top.coder.n_off, conf_off,
                         top.proj_flat, top.proj_off, mask)
    logb = np.where(mask > 0, logb, K.NEG_INF)
    return logb, {"lam": lam, "q": q}, it, float(residual), converged


def _run_parent_to_child(rg, top, logf, cfg, warm):
    """Classic parent-to-child message passing, written in terms of beliefs."""
    slot_off, slot_edge, slot_proj = _slots(rg, top)
    msg_off = top.msg_off
    mask = top.mask
    logm = warm["messages"].copy() if warm is not None else uniform_messages(top, mask)
    logb = np.empty(top.conf_off[-1])
    n_edges = len(top.edge_parent)
    all_edges = np.arange(n_edges, dtype=np.int64)
    step = np.full(n_edges, 1.0 - cfg.damping)
    if cfg.schedule is Schedule.SYNCHRONOUS and cfg.parent_scaling and n_edges:
        # every parent of a child corrects the same discrepancy at once
        step /= np.bincount(top.edge_child, minlength=rg.n_regions)[top.edge_child]

    def compute_beliefs():
        bad = K.beliefs(logf, logm, top.conf_off, slot_off, slot_edge, slot_proj,
                        msg_off, top.proj_flat, top.proj_off, mask, logb)
        if bad >= 0:
            raise EmptySupportError(f"region {bad} lost all support during message passing")

    if cfg.schedule is Schedule.SEQUENTIAL and n_edges:
        blocks = [np.flatnonzero(top.edge_proj == p) for p in np.unique(top.edge_proj)]
        rng = np.random.default_rng(cfg.seed)
    residual = np.inf
    converged = False
    it = 0
    new = np.empty_like(logm)
    for it in range(1, cfg.max_iterations + 1):
        if cfg.schedule is Schedule.SYNCHRONOUS or not n_edges:
            compute_beliefs()
            residual = K.update_messages(all_edges, logb, logm, new, top.edge_parent, top.edge_child,
                                         top.edge_proj, top.conf_off, msg_off, top.proj_flat,
                                         top.proj_off, mask, step) if n_edges else 0.0
            logm, new = new, logm
        else:
            residual = 0.0
            for b in rng.permutation(len(blocks)):
                compute_beliefs()
                res = K.update_messages(blocks[b], logb, logm, logm, top.edge_parent,
                                        top.edge_child, top.edge_proj, top.conf_off, msg_off,
                                        top.proj_flat, top.proj_off, mask, step)
                residual = max(residual, res)
        # measure the undamped step so the stopping rule does not depend on damping
        residual /= 1.0 - cfg.damping
        if not np.isfinite(residual):
            raise EmptySupportError("messages diverged during parent-to-child updates")
        if residual <= cfg.tolerance:
            converged = True
            break
    compute_beliefs()
    return logb, {"messages": logm}, it, float(residual), converged
