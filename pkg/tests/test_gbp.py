"""Unit tests for the module gbp."""
import math

import numpy as np
import pytest

from rllgbp.constraint_model import parse_spec
from rllgbp.exact_oracle import exact_marginal
from rllgbp.free_energy import capacity_region_graph
from rllgbp.gbp import EmptySupportError, GbpConfig, Method, Schedule, belief_of, run_gbp
from rllgbp.grid_graph import restrict_variables

METHODS = [Method.BLOCK, Method.DOUBLE_LOOP, Method.PARENT_TO_CHILD]


def marginal_of(bs, region, position):
    table = bs.belief_of(region)
    return table.sum(axis=tuple(a for a in range(table.ndim) if a != position))


def test_single_region_is_uniform(hard_squares):
    rg = capacity_region_graph(hard_squares, (2, 2))
    bs = run_gbp(rg)
    assert bs.converged and bs.iterations <= 1
    configs, probs = bs.support(0)
    assert len(configs) == 7
    assert np.allclose(probs, 1 / 7, rtol=0, atol=1e-15)
    table = belief_of(bs, 0)
    assert np.count_nonzero(table) == 7
    assert table.sum() == pytest.approx(1.0, abs=1e-12)


def test_unconstrained_beliefs_are_uniform():
    rg = capacity_region_graph(parse_spec("0,inf"), (3, 3))
    bs = run_gbp(rg)
    for r in range(rg.n_regions):
        table = bs.belief_of(r)
        assert np.allclose(table, 1.0 / table.size, atol=1e-12)


def test_single_free_variable():
    rg = capacity_region_graph(parse_spec("0,inf"), (1, 1))
    assert np.allclose(run_gbp(rg).belief_of(0), [0.5, 0.5])


@pytest.mark.parametrize("method", METHODS)
def test_fig5_centre_marginal(fig5_graph, method):
    bs = run_gbp(fig5_graph, GbpConfig(method=method, max_iterations=20000))
    assert bs.converged
    centre = fig5_graph.find((1, 1), (1, 1))
    b1 = bs.belief_of(centre)[1]
    assert abs(b1 - exact_marginal(parse_spec("1,inf"), (3, 3), 4)) < 0.05
    assert abs(b1 - 16 / 63) < 0.05


def same_beliefs(a, b, atol=1e-7):
    return np.allclose(np.exp(a.log_beliefs) * a.mask, np.exp(b.log_beliefs) * b.mask, atol=atol)


@pytest.mark.parametrize("text, shape", [("1,inf", (4, 4)), ("2,inf", (4, 4)),
                                         ("1,inf,2,4", (5, 5)), ("1,inf", (3, 6))])
def test_parent_to_child_agrees_on_small_grids(text, shape):
    rg = capacity_region_graph(parse_spec(text), shape)
    cfg = dict(max_iterations=50000, tolerance=1e-11)
    block = run_gbp(rg, GbpConfig(**cfg))
    p2c = run_gbp(rg, GbpConfig(method=Method.PARENT_TO_CHILD, **cfg))
    assert block.converged and p2c.converged
    assert same_beliefs(block, p2c)


@pytest.mark.parametrize("text, shape", [("1,inf", (9, 9)), ("2,inf", (7, 5)),
                                         ("1,inf,2,4", (6, 8)), ("1,inf", (3, 3, 4))])
def test_single_and_double_loop_agree(text, shape):
    rg = capacity_region_graph(parse_spec(text, ndim=len(shape)), shape)
    cfg = dict(max_iterations=50000, tolerance=1e-11)
    single = run_gbp(rg, GbpConfig(**cfg))
    double = run_gbp(rg, GbpConfig(method=Method.DOUBLE_LOOP, **cfg))
    assert single.converged and double.converged
    assert same_beliefs(single, double)


@pytest.mark.parametrize("text", ["1,inf", "1,inf,2,4", "2,inf"])
def test_normalisation_support_and_consistency(text):
    rg = capacity_region_graph(parse_spec(text), (7, 7))
    bs = run_gbp(rg)
    assert bs.converged
    assert bs.consistency_residual < 1e-6
    g = rg.factor_graph
    for r in range(rg.n_regions):
        configs, probs = bs.support(r)
        assert math.fsum(probs) == pytest.approx(1.0, abs=1e-12)
        cells = rg.vars_of(r)
        for cfg, p in zip(configs, probs):
            x = np.zeros(g.n_variables, dtype=np.uint8)
            x[cells] = cfg
            if p > 0:
                for f in rg.region(r).factors:
                    scope = g.factors[f].scope
                    assert g.factors[f].table[tuple(x[list(scope)])] == 1


def test_forbidden_configurations_are_absent(fig5_graph):
    bs = run_gbp(fig5_graph)
    for r in np.flatnonzero(fig5_graph.basic):
        table = bs.belief_of(int(r))
        assert table[1, 1, 0, 0] == 0 and table[1, 0, 1, 0] == 0


@pytest.mark.parametrize("schedule", list(Schedule))
def test_determinism(schedule):
    rg = capacity_region_graph(parse_spec("1,inf,2,3"), (8, 8))
    cfg = GbpConfig(schedule=schedule, seed=11)
    a, b = run_gbp(rg, cfg), run_gbp(rg, cfg)
    assert np.array_equal(a.log_beliefs, b.log_beliefs)
    assert a.iterations == b.iterations


@pytest.mark.parametrize("method", METHODS)
@pytest.mark.parametrize("damping", [0.0, 0.3, 0.9])
def test_damping_invariance_of_fixed_points(method, damping):
    rg = capacity_region_graph(parse_spec("1,inf"), (4, 4) if method is Method.PARENT_TO_CHILD else (6, 6))
    cfg = GbpConfig(method=method, max_iterations=50000)
    bs = run_gbp(rg, cfg)
    assert bs.converged
    again = run_gbp(rg, GbpConfig(method=method, damping=damping, max_iterations=1), init=bs)
    assert again.residual < cfg.tolerance


def test_warm_start_from_other_method_is_ignored(fig5_graph):
    p2c = run_gbp(fig5_graph, GbpConfig(method=Method.PARENT_TO_CHILD))
    bs = run_gbp(fig5_graph, GbpConfig(), init=p2c)
    assert bs.converged


def test_non_convergence_is_flagged():
    rg = capacity_region_graph(parse_spec("1,inf"), (10, 10))
    bs = run_gbp(rg, GbpConfig(max_iterations=2))
    assert not bs.converged and bs.iterations == 2
    assert bs.residual > 1e-9


def test_empty_support(hard_squares):
    rg = capacity_region_graph(hard_squares, (3, 3))
    forced = rg.with_factor_graph(restrict_variables(rg.factor_graph, np.tile([0.0, 1.0], (9, 1))))
    with pytest.raises(EmptySupportError):
        run_gbp(forced)


def test_unknown_region(fig5_graph):
    bs = run_gbp(fig5_graph)
    with pytest.raises(KeyError):
        bs.belief_of(fig5_graph.n_regions)


@pytest.mark.parametrize("kwargs", [{"damping": 1.0}, {"damping": -0.1}, {"tolerance": 0.0},
                                    {"max_iterations": 0}, {"anderson": -1},
                                    {"schedule": "random"}, {"method": "two-way"}])
def test_config_validation(kwargs):
    with pytest.raises(ValueError):
        GbpConfig(**kwargs)


def test_report_carries_configuration(fig5_graph):
    report = run_gbp(fig5_graph, GbpConfig(damping=0.25)).report()
    assert report["damping"] == 0.25 and report["converged"] is True
    assert report["method"] == "block"
