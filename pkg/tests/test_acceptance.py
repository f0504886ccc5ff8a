"""Acceptance criteria A1 to A10.

Each test records a verdict that the terminal summary prints as one line
per criterion.  Runs that take many minutes carry the ``slow`` marker and
only execute with ``--run-slow`` (or ``RLLGBP_RUN_SLOW=1``).
"""
import itertools
import math
import time

import numpy as np
import pytest
from scipy.stats import chisquare

from conftest import record
from rllgbp.constraint_model import admissible_mask, parse_spec
from rllgbp.exact_oracle import exact_output_log_probability, transfer_matrix_count
from rllgbp.free_energy import capacity_estimate, capacity_region_graph, shannon_bounds
from rllgbp.gbp import GbpConfig, run_gbp
from rllgbp.info_rate import OutputProbability, AwgnChannel, snr_sweep
from rllgbp.region_graph import validate_region_graph
from rllgbp.sampler import draw_samples


def test_a1_single_region_exactness():
    t0 = time.perf_counter()
    est = capacity_estimate(parse_spec("1,inf"), (2, 2))
    seconds = time.perf_counter() - t0
    err = abs(est.capacity_bits_per_symbol - math.log2(7) / 4)
    ok = err <= 1e-12 and seconds < 1.0
    record("A1", ok, f"m=2 C={est.capacity_bits_per_symbol:.15f} |err|={err:.1e} in {seconds:.3f}s")
    assert ok


def test_a2_small_grids_against_transfer_matrix():
    spec = parse_spec("1,inf")
    t0 = time.perf_counter()
    worst = 0.0
    for m in (4, 6, 8, 10):
        gbp = capacity_estimate(spec, (m, m)).capacity_bits_per_symbol
        exact = transfer_matrix_count(spec, m, m).capacity(m * m)
        err = abs(gbp - exact)
        worst = max(worst, err)
        record("A2", err <= 5e-3, f"m={m} gbp={gbp:.6f} exact={exact:.6f} |err|={err:.1e}")
    seconds = time.perf_counter() - t0
    record("A2", seconds < 60, f"total {seconds:.1f}s")
    assert worst <= 5e-3 and seconds < 60


A3_POINTS = [
    ("1,inf", 300, 0.5884, 0.001),
    ("2,inf", 400, 0.4462, 0.0015),
    ("1,inf,2,inf", 200, 0.4994, 0.002),
    ("1,inf,3,inf", 200, 0.4346, 0.002),
    ("1,inf,4,inf", 200, 0.3864, 0.002),
    ("1,inf,2,4", 200, 0.3106, 0.003),
    ("1,inf,2,3", 200, 0.2109, 0.003),
]

_estimates: dict = {}


def estimate(text, m, **cfg):
    key = (text, m)
    if key not in _estimates:
        _estimates[key] = capacity_estimate(parse_spec(text), (m, m), GbpConfig(**cfg))
    return _estimates[key]


# the symmetry-breaking relaxation of (1,inf,2,3) needs far more sweeps than the others
# plain undamped sweeps without mixing were the fastest scheme there
_BUDGET = {"1,inf,2,3": dict(max_iterations=200_000, damping=0.0, anderson=0)}


@pytest.mark.slow
@pytest.mark.parametrize("text, m, target, tol", A3_POINTS)
def test_a3_published_values(text, m, target, tol):
    est = estimate(text, m, **_BUDGET.get(text, dict(max_iterations=10_000)))
    c = est.capacity_bits_per_symbol
    ok = est.converged and abs(c - target) <= tol
    record("A3", ok, f"({text}) m={m} C={c:.4f} target {target}+-{tol} converged={est.converged} "
                     f"it={est.iterations} {est.seconds:.0f}s")
    assert ok


@pytest.mark.slow
def test_a4_sandwich_hard_squares():
    b = shannon_bounds(estimate("1,inf", 300))
    ok = b.lower <= 0.5878911617 <= b.upper
    record("A4", ok, f"[{b.lower:.5f}, {b.upper:.5f}] vs 0.5878911617")
    assert ok


@pytest.mark.slow
def test_a5_sandwich_two_inf():
    b = shannon_bounds(estimate("2,inf", 400))
    ok = b.lower <= 0.4457 and b.upper >= 0.4453
    record("A5", ok, f"[{b.lower:.5f}, {b.upper:.5f}] vs published bracket [0.4453, 0.4457]")
    assert ok


def test_a6_three_dimensional_m20():
    est = capacity_estimate(parse_spec("1,inf", ndim=3), (20, 20, 20))
    c = est.capacity_bits_per_symbol
    ok = est.converged and 0.520 <= c <= 0.540
    record("A6", ok, f"m=20 C={c:.4f} in [0.520, 0.540] ({est.seconds:.0f}s)")
    assert ok


@pytest.mark.slow
def test_a6_three_dimensional_m40():
    est = capacity_estimate(parse_spec("1,inf", ndim=3), (40, 40, 40))
    c = est.capacity_bits_per_symbol
    ok = est.converged and abs(c - 0.5267) <= 0.001
    lower = shannon_bounds(est).lower
    record("A6", ok, f"m=40 C={c:.4f} target 0.5267+-0.001, guard-band lower {lower:.4f}, "
                     f"published bracket [0.5225017418, 0.5268808478] ({est.seconds:.0f}s)")
    assert ok


A7_BATTERY = [
    ("1,inf", (3, 3)), ("1,inf", (4, 3)), ("1,inf", (10, 10)), ("1,inf", (2, 9)),
    ("2,inf", (5, 5)), ("2,inf", (9, 7)), ("3,inf", (8, 8)), ("1,inf,2,inf", (12, 6)),
    ("1,inf,2,4", (7, 7)), ("1,inf,2,4", (12, 20)), ("1,inf,2,3", (9, 9)), ("1,3", (10, 10)),
    ("0,1,1,inf", (6, 8)), ("2,5,1,3", (11, 9)), ("0,2", (5, 5)), ("1,inf", (1, 12)),
    ("1,inf,1,inf,1,inf", (3, 3, 3)), ("1,inf,1,inf,1,inf", (5, 4, 6)),
    ("2,inf,2,inf,2,inf", (6, 6, 6)), ("1,inf,2,4,1,inf", (4, 7, 5)),
    ("1,3,1,3,1,3", (5, 5, 5)), ("0,1,1,inf,2,inf", (4, 4, 4)),
]


def test_a7_region_graph_validity():
    t0 = time.perf_counter()
    failures = []
    for text, shape in A7_BATTERY:
        rg = capacity_region_graph(parse_spec(text, ndim=len(shape)), shape)
        report = validate_region_graph(rg)
        exact = (report.variable_sums == 1).all() and (report.factor_sums == 1).all()
        if not (report.passed and exact):
            failures.append((text, shape))
    seconds = time.perf_counter() - t0
    ok = not failures and len(A7_BATTERY) >= 20 and seconds < 10
    record("A7", ok, f"{len(A7_BATTERY)} graphs, failures {failures}, {seconds:.2f}s")
    assert ok


def test_a8_sampler():
    spec = parse_spec("1,inf")
    rg = capacity_region_graph(spec, (4, 4))
    samples = np.array(draw_samples(rg, run_gbp(rg), 10_000, seed=0))
    admissible = admissible_mask(samples, spec).mean()
    record("A8", admissible == 1.0, f"4x4: {admissible:.2%} of 10^4 admissible")
    rg2 = capacity_region_graph(spec, (2, 2))
    small = np.array(draw_samples(rg2, run_gbp(rg2), 10_000, seed=0)).reshape(-1, 4)
    _, counts = np.unique(small @ (1 << np.arange(4)), return_counts=True)
    p = chisquare(counts).pvalue if len(counts) == 7 else 0.0
    record("A8", p > 0.01, f"2x2 chi-square p={p:.3f} over {len(counts)} patterns")
    assert admissible == 1.0 and p > 0.01


def check_inforate_sweep(points, label):
    rates = np.array([e.rate_bits_per_symbol for e in points])
    ses = np.array([e.std_error for e in points])
    ref = points[0].noiseless_capacity_reference
    drops = [(a.snr_db, b.snr_db) for a, b in zip(points, points[1:])
             if b.rate_bits_per_symbol < a.rate_bits_per_symbol
             - 2 * math.hypot(a.std_error, b.std_error)]
    over = [e.snr_db for e in points
            if e.rate_bits_per_symbol > 0.5943 + 3 * e.std_error]
    top = points[-1].rate_bits_per_symbol
    ok = not drops and not over and top > 0.9 * 0.5943
    curve = " ".join(f"{e.snr_db:g}:{e.rate_bits_per_symbol:.4f}" for e in points)
    record("A9", ok, f"{label} ref={ref:.4f} max SE={ses.max():.4f} drops={drops} over={over} "
                     f"rate(10dB)={top:.4f} curve {curve}")
    return ok


def test_a9_smoke_tier():
    t0 = time.perf_counter()
    points = snr_sweep(parse_spec("1,inf"), (30, 30), range(-10, 11, 2), L=100, seed=2026)
    seconds = time.perf_counter() - t0
    ok = check_inforate_sweep(points, f"L=100 ({seconds:.0f}s)")
    record("A9", seconds < 1800, f"smoke tier {seconds:.0f}s < 1800s")
    assert ok and seconds < 1800


@pytest.mark.slow
def test_a9_full_sweep():
    t0 = time.perf_counter()
    points = snr_sweep(parse_spec("1,inf"), (30, 30), range(-10, 11, 2), L=1000, seed=2026)
    assert check_inforate_sweep(points, f"L=1000 ({time.perf_counter() - t0:.0f}s)")


def test_a10_two_by_two_outputs():
    spec = parse_spec("1,inf")
    evaluator = OutputProbability(spec, (2, 2))
    channel = AwgnChannel(1.0)
    rng = np.random.default_rng(10)
    x = np.array([x for x in itertools.product((-1.0, 1.0), repeat=4)
                  if admissible_mask(((np.array(x) + 1) / 2).reshape(1, 2, 2), spec)[0]])
    worst = 0.0
    for _ in range(100):
        y = x[rng.integers(len(x))].reshape(2, 2) + rng.standard_normal((2, 2))
        exact = exact_output_log_probability(spec, (2, 2), y, 1.0)
        worst = max(worst, abs(evaluator(y, channel) - exact) / abs(exact))
    record("A10", worst <= 1e-9, f"100 outputs, worst relative error {worst:.1e}")
    assert worst <= 1e-9
