"""Region-based free energy, capacity estimates and guard-band bounds.

Everything is accumulated in natural logs; bits appear only in the fields
meant for reporting.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from .constraint_model import RllSpec
from .gbp import BeliefSet, GbpConfig, run_gbp
from .grid_graph import build_factor_graph
from .region_graph import RegionGraph, build_region_graph, plan_basic_regions

LN2 = math.log(2.0)


class FiniteKUnsupportedError(ValueError):
    """All-zero guard bands violate a finite ``k``, so the bound does not apply."""


class SupportMismatchError(RuntimeError):
    """A belief puts mass where the factors are zero."""


@dataclass(frozen=True)
class FreeEnergyEstimate:
    f_hat: float
    energy: np.ndarray = field(repr=False)
    entropy: np.ndarray = field(repr=False)

    @property
    def log_Z(self) -> float:
        return -self.f_hat

    @property
    def log2_Z(self) -> float:
        return -self.f_hat / LN2


def region_free_energy(bs: BeliefSet, rg: RegionGraph | None = None) -> FreeEnergyEstimate:
    """``sum_R c_R sum_x b_R(x) (ln b_R(x) - ln f_R(x))`` over supported entries."""
    rg = rg if rg is not None else bs.region_graph
    top = bs.topology
    if len(bs.log_beliefs) != top.conf_off[-1] or rg.n_regions != len(top.conf_off) - 1:
        raise ValueError("beliefs do not belong to this region graph")
    outside = (bs.mask == 0) & np.isfinite(bs.log_beliefs)
    if outside.any():
        raise SupportMismatchError(f"{int(outside.sum())} belief entries lie outside the factor support")
    energy, entropy = K.region_terms(bs.log_beliefs, bs.log_factors, top.conf_off, bs.mask)
    c = rg.counting.astype(float)
    f_hat = math.fsum(c * energy) - math.fsum(c * entropy)
    return FreeEnergyEstimate(f_hat, energy, entropy)


@dataclass(frozen=True)
class CapacityEstimate:
    spec: RllSpec
    shape: tuple[int, ...]
    capacity_bits_per_symbol: float
    log2_Z: float
    iterations: int
    residual: float
    converged: bool
    consistency_residual: float
    n_regions: int
    config: GbpConfig
    seconds: float

    @property
    def n_cells(self) -> int:
        return int(np.prod(self.shape))

    def as_dict(self) -> dict:
        return {"constraint": str(self.spec), "shape": list(self.shape),
                "capacity_bits": self.capacity_bits_per_symbol, "log2_Z": self.log2_Z,
                "iterations": self.iterations, "residual": self.residual,
                "converged": self.converged, "consistency_residual": self.consistency_residual,
                "n_regions": self.n_regions, "seconds": self.seconds,
                "gbp": self.config.as_dict()}


def estimate_from_beliefs(bs: BeliefSet, seconds: float | None = None) -> CapacityEstimate:
    rg = bs.region_graph
    fe = region_free_energy(bs, rg)
    n = int(np.prod(rg.shape))
    return CapacityEstimate(rg.factor_graph.spec, tuple(rg.shape), fe.log2_Z / n, fe.log2_Z,
                            bs.iterations, bs.residual, bs.converged, bs.consistency_residual,
                            rg.n_regions, bs.config, bs.seconds if seconds is None else seconds)


def capacity_region_graph(spec: RllSpec, shape) -> RegionGraph:
    shape = tuple(int(s) for s in shape)
    g = build_factor_graph(shape, spec)
    return build_region_graph(g, plan_basic_regions(spec).fit_to(shape))


def capacity_estimate(spec: RllSpec, shape, cfg: GbpConfig | None = None) -> CapacityEstimate:
    """``log2 Z_hat / N`` for the noiseless constraint on ``shape``.

    A run that hits ``max_iterations`` is still reported, with
    ``converged=False``.
    """
    t0 = time.perf_counter()
    rg = capacity_region_graph(spec, shape)
    bs = run_gbp(rg, cfg or GbpConfig())
    return estimate_from_beliefs(bs, time.perf_counter() - t0)


@dataclass(frozen=True)
class ShannonBounds:
    lower: float
    upper: float
    guard_width: tuple[int, ...]

    def brackets(self, value: float) -> bool:
        return self.lower <= value <= self.upper


def shannon_bounds(ce: CapacityEstimate) -> ShannonBounds:
    """Guard-band sandwich: tiling ``m``-blocks separated by ``d`` zero lines.

    The lower bound is ``C(m) * prod_a m_a / (m_a + d_a)``; for a common
    ``d`` on a cube this is ``(m / (m + d))**dim * C(m)``.
    """
    if not ce.spec.all_k_infinite:
        raise FiniteKUnsupportedError(f"{ce.spec} has a finite k; all-zero guard bands are inadmissible")
    guards = tuple(d for d, _ in ce.spec.axes)
    ratio = 1.0
    for m, d in zip(ce.shape, guards):
        ratio *= m / (m + d)
    upper = ce.capacity_bits_per_symbol
    return ShannonBounds(ratio * upper, upper, guards)
