"""Approximately uniform admissible arrays drawn from converged region beliefs.

Basic regions are visited in raster order.  In each one, the configuration
is drawn from the region belief conditioned on the cells fixed by earlier
regions, which is the same as drawing the free cells one at a time.  Every
constraint window sits inside some basic region and every stored region
configuration passes the windows it contains, so completed arrays are
admissible by construction.

All samples advance together: the set of already-fixed cells of a region
depends only on the raster position, never on the sample, so each step is
one vectorised conditional draw over the whole batch.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .constraint_model import admissible_mask
from .gbp import BeliefSet
from .region_graph import RegionGraph

log = logging.getLogger(__name__)


class RestartBudgetExceededError(RuntimeError):
    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


@dataclass(frozen=True)
class _Step:
    cells: np.ndarray      # flat grid indices of the region's cells
    fixed: np.ndarray      # positions (within the region) fixed by earlier steps
    free: np.ndarray       # positions drawn here
    configs: np.ndarray    # (n_configs, n_cells) stored configurations
    probs: np.ndarray      # region belief over the stored configurations


def _plan(rg: RegionGraph, bs: BeliefSet) -> list[_Step]:
    top = bs.topology
    assigned = np.zeros(rg.factor_graph.n_variables, dtype=bool)
    steps = []
    for r in rg.basic_raster_order():
        cells = top.var_idx[top.var_off[r]:top.var_off[r + 1]]
        configs, probs = bs.support(int(r))
        keep = probs > 0
        fixed = np.flatnonzero(assigned[cells])
        free = np.flatnonzero(~assigned[cells])
        assigned[cells] = True
        steps.append(_Step(cells, fixed, free, configs[keep], probs[keep]))
    return steps


def _draw(step: _Step, x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Write a conditional draw of ``step`` into rows of ``x``; return the failed rows."""
    weights = np.broadcast_to(step.probs, (len(x), len(step.probs)))
    if len(step.fixed):
        known = x[:, step.cells[step.fixed]]
        match = (step.configs[None, :, step.fixed] == known[:, None, :]).all(axis=2)
        weights = weights * match
    total = weights.sum(axis=1)
    ok = total > 0
    cum = np.cumsum(weights, axis=1)
    u = rng.random(len(x)) * total
    pick = np.minimum((cum < u[:, None]).sum(axis=1), len(step.probs) - 1)
    chosen = step.configs[pick]
    rows = np.flatnonzero(ok)
    x[np.ix_(rows, step.cells[step.free])] = chosen[np.ix_(rows, step.free)]
    return np.flatnonzero(~ok)


def draw_samples(rg: RegionGraph, bs: BeliefSet, count: int, seed=0,
                 local_retries: int = 8, max_restarts: int = 100) -> list[np.ndarray]:
    """``count`` admissible 0/1 arrays of the grid shape.

    A conditional draw with zero mass redraws the previous region for the
    affected samples (up to ``local_retries`` times); samples still stuck
    restart from scratch, at most ``max_restarts`` rounds in total.
    """
    if count < 0:
        raise ValueError("count must be nonnegative")
    if count == 0:
        return []
    rng = np.random.default_rng(seed)
    steps = _plan(rg, bs)
    n = rg.factor_graph.n_variables
    out = np.zeros((count, n), dtype=np.uint8)
    pending = np.arange(count)
    restarts = 0
    local_used = 0
    while len(pending):
        x = np.zeros((len(pending), n), dtype=np.uint8)
        alive = np.ones(len(pending), dtype=bool)
        for i, step in enumerate(steps):
            idx = np.flatnonzero(alive)
            if not len(idx):
                break
            sub = x[idx]
            failed = _draw(step, sub, rng)
            tries = 0
            while len(failed) and i > 0 and tries < local_retries:
                tries += 1
                local_used += len(failed)
                retry = sub[failed]
                _draw(steps[i - 1], retry, rng)
                again = _draw(step, retry, rng)
                sub[failed] = retry
                failed = failed[again]
            x[idx] = sub
            alive[idx[failed]] = False
        done = np.flatnonzero(alive)
        out[pending[done]] = x[done]
        pending = pending[~alive]
        if len(pending):
            restarts += 1
            if restarts > max_restarts:
                raise RestartBudgetExceededError(
                    f"{len(pending)} samples still stuck after {max_restarts} restarts",
                    {"stuck": int(len(pending)), "restarts": restarts,
                     "local_redraws": local_used})
            log.debug("restarting %d samples", len(pending))
    samples = out.reshape((count,) + tuple(rg.shape))
    ok = admissible_mask(samples, rg.factor_graph.spec)
    if not ok.all():
        raise RuntimeError(f"{int((~ok).sum())} drawn arrays are inadmissible")
    return list(samples)


def to_bpsk(x: np.ndarray) -> np.ndarray:
    """0 -> -1, 1 -> +1."""
    return 2.0 * np.asarray(x, dtype=float) - 1.0
