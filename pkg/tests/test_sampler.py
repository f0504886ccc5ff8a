"""Unit tests for the module sampler."""
import itertools

import numpy as np
import pytest
from scipy.stats import chisquare

from rllgbp.constraint_model import admissible_mask, parse_spec
from rllgbp.exact_oracle import exact_marginal
from rllgbp.free_energy import capacity_region_graph
from rllgbp.gbp import run_gbp
from rllgbp.sampler import RestartBudgetExceededError, draw_samples, to_bpsk


def converged(text, shape):
    rg = capacity_region_graph(parse_spec(text, ndim=len(shape)), shape)
    return rg, run_gbp(rg)


def test_two_by_two_frequencies():
    rg, bs = converged("1,inf", (2, 2))
    L = 70000
    samples = np.array(draw_samples(rg, bs, L, seed=1)).reshape(L, 4)
    codes, counts = np.unique(samples @ (1 << np.arange(4)), return_counts=True)
    assert len(codes) == 7
    sd = np.sqrt(L * (1 / 7) * (6 / 7))
    assert np.all(np.abs(counts - L / 7) < 3 * sd)
    assert chisquare(counts).pvalue > 0.01


def test_zero_samples(hard_squares):
    rg, bs = converged("1,inf", (3, 3))
    assert draw_samples(rg, bs, 0) == []
    with pytest.raises(ValueError):
        draw_samples(rg, bs, -1)


@pytest.mark.parametrize("text, shape", [("1,inf", (30, 30)), ("2,inf", (12, 17)),
                                         ("1,inf,2,3", (10, 10)), ("1,inf,2,4", (9, 14)),
                                         ("1,3", (8, 8)), ("1,inf", (4, 5, 6)),
                                         ("0,1,1,inf", (7, 7))])
def test_all_samples_admissible(text, shape):
    rg, bs = converged(text, shape)
    samples = np.array(draw_samples(rg, bs, 1000, seed=3))
    assert samples.shape == (1000,) + shape
    assert admissible_mask(samples, rg.factor_graph.spec).all()


def test_reproducible():
    rg, bs = converged("1,inf,2,4", (8, 8))
    a = draw_samples(rg, bs, 50, seed=123)
    b = draw_samples(rg, bs, 50, seed=123)
    c = draw_samples(rg, bs, 50, seed=124)
    assert all(np.array_equal(x, y) for x, y in zip(a, b))
    assert not all(np.array_equal(x, y) for x, y in zip(a, c))


@pytest.mark.parametrize("shape", [(3, 3), (4, 4), (2, 5)])
def test_marginals_close_to_exact(shape):
    spec = parse_spec("1,inf")
    rg, bs = converged("1,inf", shape)
    L = 10000
    freq = np.array(draw_samples(rg, bs, L, seed=11)).reshape(L, -1).mean(axis=0)
    exact = np.array([exact_marginal(spec, shape, v) for v in range(freq.size)])
    assert np.all(np.abs(freq - exact) <= 4 * np.sqrt(exact * (1 - exact) / L))


def test_restart_budget():
    rg, bs = converged("1,inf,2,3", (10, 10))
    with pytest.raises(RestartBudgetExceededError) as info:
        draw_samples(rg, bs, 500, seed=0, local_retries=0, max_restarts=0)
    assert info.value.diagnostics["stuck"] > 0


def test_bpsk():
    assert to_bpsk(np.array([[0, 1]])).tolist() == [[-1.0, 1.0]]


def test_every_two_by_two_pattern_is_reachable():
    rg, bs = converged("1,inf", (2, 2))
    seen = {tuple(x.ravel()) for x in draw_samples(rg, bs, 2000, seed=1)}
    expected = {x for x in itertools.product((0, 1), repeat=4)
                if admissible_mask(np.array(x).reshape(1, 2, 2), rg.factor_graph.spec)[0]}
    assert seen == expected
