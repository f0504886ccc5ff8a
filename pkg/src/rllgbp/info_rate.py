"""Monte-Carlo information rates of RLL-constrained inputs over AWGN.

Inputs are uniform over admissible arrays and mapped to BPSK (0 -> -1,
1 -> +1).  For an output ``y``, ``p(y) = Z(y) / Z_0`` where ``Z(y)`` is the
partition function of the constraint graph with Gaussian evidence attached
and ``Z_0`` the noiseless count; both come from GBP on the same region
graph, so ``ln p(y) = ln Z_hat(y) - ln Z_hat_0``.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .constraint_model import RllSpec
from .free_energy import capacity_region_graph, region_free_energy
from .gbp import BeliefSet, GbpConfig, run_gbp
from .grid_graph import attach_evidence
from .region_graph import RegionGraph
from .sampler import draw_samples, to_bpsk

log = logging.getLogger(__name__)

LN2 = math.log(2.0)
# evidence entries are rescaled to max 1 per cell; keep the other one positive
_TINY = 1e-300


@dataclass(frozen=True)
class AwgnChannel:
    sigma2: float

    def __post_init__(self):
        if not self.sigma2 > 0 or not math.isfinite(self.sigma2):
            raise ValueError("noise variance must be positive and finite")

    @classmethod
    def from_snr_db(cls, snr_db: float) -> "AwgnChannel":
        return cls(10.0 ** (-snr_db / 10.0))

    @property
    def snr_db(self) -> float:
        return -10.0 * math.log10(self.sigma2)

    @property
    def sigma(self) -> float:
        return math.sqrt(self.sigma2)


@dataclass(frozen=True)
class OutputSample:
    y: np.ndarray = field(repr=False)
    input_index: int
    seed: int


@dataclass(frozen=True)
class InfoRateEstimate:
    snr_db: float
    rate_bits_per_symbol: float
    h_y_estimate: float
    h_y_given_x: float
    std_error: float
    L: int
    noiseless_capacity_reference: float
    n_cells: int
    non_converged: int = 0
    seconds: float = 0.0
    log_p: np.ndarray = field(default=None, repr=False)

    def as_dict(self) -> dict:
        return {"snr_db": self.snr_db, "rate_bits": self.rate_bits_per_symbol,
                "std_error": self.std_error, "h_y": self.h_y_estimate,
                "h_ygx": self.h_y_given_x, "L": self.L,
                "noiseless_capacity": self.noiseless_capacity_reference,
                "non_converged": self.non_converged, "seconds": self.seconds}


def conditional_entropy(channel: AwgnChannel, n: int) -> float:
    """``H(Y|X) = (n/2) log2(2 pi e sigma^2)`` bits."""
    return 0.5 * n * math.log2(2.0 * math.pi * math.e * channel.sigma2)


def simulate_outputs(inputs, channel: AwgnChannel, seed=0, noise=None) -> list[OutputSample]:
    """``y = x + sigma z`` per cell for BPSK inputs ``x``.

    ``noise`` optionally supplies the standard normal draws ``z`` so that
    several channels can share them.
    """
    inputs = [np.asarray(x, dtype=float) for x in inputs]
    if noise is None:
        rng = np.random.default_rng(seed)
        noise = [rng.standard_normal(x.shape) for x in inputs]
    return [OutputSample(x + channel.sigma * z, i, seed)
            for i, (x, z) in enumerate(zip(inputs, noise))]


def evidence_tables(y, channel: AwgnChannel):
    """Per-cell ``p(y_i | x_i)`` rescaled to max 1, and the total log scale removed."""
    y = np.asarray(y, dtype=float).reshape(-1)
    means = np.array([-1.0, 1.0])
    logp = (-0.5 * (y[:, None] - means[None, :]) ** 2 / channel.sigma2
            - 0.5 * math.log(2.0 * math.pi * channel.sigma2))
    top = logp.max(axis=1)
    tables = np.maximum(np.exp(logp - top[:, None]), _TINY)
    return tables, math.fsum(top)


class OutputProbability:
    """``ln p(y)`` evaluator reusing one region-graph topology across outputs."""

    def __init__(self, spec: RllSpec, shape, cfg: GbpConfig | None = None,
                 noiseless: BeliefSet | None = None):
        self.cfg = cfg or GbpConfig()
        if noiseless is None:
            rg = capacity_region_graph(spec, shape)
            noiseless = run_gbp(rg, self.cfg)
        self.rg0: RegionGraph = noiseless.region_graph
        self.noiseless = noiseless
        self.log_Z0 = region_free_energy(noiseless).log_Z
        self._last: BeliefSet | None = None
        self.non_converged = 0

    @property
    def capacity_reference(self) -> float:
        return self.log_Z0 / (LN2 * self.rg0.factor_graph.n_variables)

    def __call__(self, y, channel: AwgnChannel, index: int | None = None) -> float:
        tables, scale = evidence_tables(y, channel)
        g = attach_evidence(self.rg0.factor_graph, tables)
        rg = self.rg0.with_factor_graph(g)
        bs = run_gbp(rg, self.cfg, init=self._last)
        if not bs.converged and self._last is not None:
            bs = run_gbp(rg, self.cfg)
        if not bs.converged:
            self.non_converged += 1
            log.warning("output %s: GBP did not converge (residual %.3g)", index, bs.residual)
        self._last = bs
        return region_free_energy(bs).log_Z + scale - self.log_Z0


def output_log_probability(y, spec: RllSpec, channel: AwgnChannel, noiseless_log_Z: float | None = None,
                           cfg: GbpConfig | None = None) -> float:
    """``ln p(y)``; pass ``noiseless_log_Z`` to reuse a noiseless estimate."""
    y = np.asarray(y, dtype=float)
    tables, scale = evidence_tables(y, channel)
    rg0 = capacity_region_graph(spec, y.shape)
    cfg = cfg or GbpConfig()
    if noiseless_log_Z is None:
        noiseless_log_Z = region_free_energy(run_gbp(rg0, cfg)).log_Z
    rg = rg0.with_factor_graph(attach_evidence(rg0.factor_graph, tables))
    return region_free_energy(run_gbp(rg, cfg)).log_Z + scale - noiseless_log_Z


def _summarise(channel, log_p, n, reference, non_converged, seconds) -> InfoRateEstimate:
    L = len(log_p)
    bits = -np.asarray(log_p) / LN2
    h_y = math.fsum(bits) / L
    h_ygx = conditional_entropy(channel, n)
    se = float(np.std(bits, ddof=1) / math.sqrt(L) / n) if L > 1 else math.nan
    return InfoRateEstimate(channel.snr_db, (h_y - h_ygx) / n, h_y, h_ygx, se, L, reference, n,
                            non_converged, seconds, np.asarray(log_p))


def snr_sweep(spec: RllSpec, shape, snrs_db, L: int, seed=0, cfg: GbpConfig | None = None,
              on_point=None) -> list[InfoRateEstimate]:
    """Rates at each SNR from one shared set of inputs and standard normal draws.

    Sharing the inputs and noise across SNR points makes neighbouring
    estimates strongly correlated, so the curve's shape is much less noisy
    than independent runs of the same size would give.
    """
    if L < 1:
        raise ValueError("need at least one sample")
    shape = tuple(int(s) for s in shape)
    if len(shape) != 2:
        raise ValueError("information rates are implemented for 2-D grids")
    cfg = cfg or GbpConfig()
    t0 = time.perf_counter()
    evaluator = OutputProbability(spec, shape, cfg)
    seeds = np.random.SeedSequence(seed).spawn(2)
    inputs = [to_bpsk(x) for x in draw_samples(evaluator.rg0, evaluator.noiseless, L,
                                                seed=np.random.default_rng(seeds[0]))]
    rng = np.random.default_rng(seeds[1])
    noise = [rng.standard_normal(shape) for _ in range(L)]
    setup = time.perf_counter() - t0
    n = int(np.prod(shape))
    out = []
    for snr in snrs_db:
        t1 = time.perf_counter()
        channel = AwgnChannel.from_snr_db(float(snr))
        evaluator.non_converged = 0
        log_p = [evaluator(s.y, channel, s.input_index)
                 for s in simulate_outputs(inputs, channel, seed, noise)]
        est = _summarise(channel, log_p, n, evaluator.capacity_reference,
                         evaluator.non_converged, time.perf_counter() - t1 + setup)
        setup = 0.0
        out.append(est)
        if on_point is not None:
            on_point(est)
    return out


def estimate_info_rate(spec: RllSpec, shape, channel: AwgnChannel, L: int, seed=0,
                       cfg: GbpConfig | None = None) -> InfoRateEstimate:
    return snr_sweep(spec, shape, [channel.snr_db], L, seed, cfg)[0]
