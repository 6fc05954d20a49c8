import numpy as np
import pytest

from fairagg.aggregation import (
    AcceptabilityKind,
    FairnessOperator,
    MissingBaseline,
    NoStrictImprovement,
    ZeroBaseline,
    build_aggregate_model,
    operator_value,
    price_of_acceptability,
    solve_aggregate,
    solve_independent,
)
from fairagg.instance import make_instance
from fairagg.milp import SolverOptions

from oracles import independent_cost_by_enumeration, proportional_logsum, toy_oracle

U, P, MM, SM = (FairnessOperator(x) for x in ("utilitarian", "proportional", "minimax", "scaled-minimax"))


def test_baseline_matches_enumeration(toy, toy_baseline):
    expected = [
        independent_cost_by_enumeration(toy.p_da, toy.p_bal, toy.market.w_min, p.e_min, p.e_max, p.e_total)
        for p in toy.prosumers
    ]
    assert toy_baseline.v == pytest.approx(expected, abs=1e-9)
    assert toy_baseline.v_t.sum(axis=1) == pytest.approx(toy_baseline.v, abs=1e-6)


def test_baseline_schedules_feasible(toy, toy_baseline):
    x = toy_baseline.qda + toy_baseline.qb
    for k, p in enumerate(toy.prosumers):
        assert np.all(x[k] >= p.e_min - 1e-9) and np.all(x[k] <= p.e_max + 1e-9)
        assert x[k].sum() >= p.e_total - 1e-9
        traded = toy_baseline.qda[k] > 1e-9
        assert np.all(toy_baseline.qda[k][traded] >= toy.market.w_min - 1e-9)


def _check_joint_feasible(inst, sol):
    x = sol.qda + sol.qb
    for k, p in enumerate(inst.prosumers):
        assert np.all(x[k] >= p.e_min - 1e-6) and np.all(x[k] <= p.e_max + 1e-6)
        assert x[k].sum() >= p.e_total - 1e-6
    pooled = sol.qda.sum(axis=0)
    assert np.all(pooled[sol.u == 1] >= inst.market.w_min - 1e-6)
    assert np.all(pooled[sol.u == 0] <= 1e-6)
    assert sol.stage_costs.sum(axis=1) == pytest.approx(sol.costs, abs=1e-9)


@pytest.mark.parametrize(
    "accept",
    [AcceptabilityKind.none(), AcceptabilityKind.static(1.0), AcceptabilityKind.static(0.9)]
    + [AcceptabilityKind.average(), AcceptabilityKind.progressive(), AcceptabilityKind.stagewise()],
    ids=lambda a: a.label,
)
def test_utilitarian_matches_oracle(toy, toy_baseline, accept):
    oracle = toy_oracle(toy)
    tag = None if accept.tag.value == "none" else accept.tag.value
    ref, _ = oracle.solve("total", tag, toy_baseline.v, toy_baseline.v_t, accept.alpha or 1.0)
    sol = solve_aggregate(toy, U, accept, toy_baseline)
    assert sol.total == pytest.approx(ref, abs=1e-5)
    _check_joint_feasible(toy, sol)


@pytest.mark.parametrize("accept", [AcceptabilityKind.none(), AcceptabilityKind.progressive()], ids=lambda a: a.label)
def test_scaled_minimax_matches_oracle(toy, toy_baseline, accept):
    oracle = toy_oracle(toy)
    tag = None if accept.tag.value == "none" else accept.tag.value
    tau, _ = oracle.solve("ratio", tag, toy_baseline.v, toy_baseline.v_t)
    sol = solve_aggregate(toy, SM, accept, toy_baseline)
    assert sol.phase1_objective == pytest.approx(tau, abs=1e-7)
    assert sol.objective == pytest.approx(tau, abs=1e-6)
    _check_joint_feasible(toy, sol)


def test_minimax_epigraph(toy, toy_baseline):
    sol = solve_aggregate(toy, MM, AcceptabilityKind.none(), toy_baseline)
    assert sol.objective == pytest.approx(sol.costs.max(), abs=1e-6)
    # the maximum cost cannot go below the total split evenly
    assert sol.objective >= 333 / 4 - 1e-6


def test_proportional_matches_oracle(toy, toy_baseline):
    ref = proportional_logsum(toy_oracle(toy), toy_baseline.v)
    sol = solve_aggregate(toy, P, AcceptabilityKind.none(), toy_baseline)
    assert sol.phase1_objective == pytest.approx(ref, abs=1e-5)
    assert sol.oa_gap <= 1e-6
    assert np.all(sol.costs < toy_baseline.v)
    _check_joint_feasible(toy, sol)


def test_missing_and_zero_baseline(toy):
    with pytest.raises(MissingBaseline):
        build_aggregate_model(toy, SM, AcceptabilityKind.none(), None)
    free = make_instance([0, 0], [0, 0], 1, [(0, 2, 2), (0, 2, 2)])
    base = solve_independent(free)
    with pytest.raises(ZeroBaseline):
        solve_aggregate(free, SM, AcceptabilityKind.none(), base)


def test_single_agent_has_no_strict_improvement():
    inst = make_instance([1, 2], [3, 4], 1, [(0, 2, 2)])
    base = solve_independent(inst)
    with pytest.raises(NoStrictImprovement) as err:
        solve_aggregate(inst, P, AcceptabilityKind.none(), base)
    assert err.value.allocation.costs == pytest.approx(base.v)


def test_static_alpha_range():
    with pytest.raises(ValueError):
        AcceptabilityKind.static(0.0)
    with pytest.raises(ValueError):
        AcceptabilityKind.static(1.5)


def test_operator_value_and_poa():
    v = np.array([10.0, 20.0])
    c = np.array([5.0, 15.0])
    assert operator_value(U, c, v) == 20
    assert operator_value(SM, c, v) == 0.75
    assert operator_value(P, c, v) == pytest.approx(np.log(5) + np.log(5))
    poa = price_of_acceptability(333, 346)
    assert poa.absolute == 13 and poa.percent == pytest.approx(100 * 13 / 333)


def test_backends_agree(toy, toy_baseline, highs):
    a = solve_aggregate(toy, U, AcceptabilityKind.progressive(), toy_baseline)
    b = solve_aggregate(toy, U, AcceptabilityKind.progressive(), toy_baseline, highs)
    assert a.total == pytest.approx(b.total, abs=1e-5)


def test_numpy_kernel_path(toy, toy_baseline, monkeypatch):
    from fairagg.milp import _kernels

    monkeypatch.setattr(_kernels, "iterate", _kernels.get_kernel("numpy"))
    sol = solve_aggregate(toy, U, AcceptabilityKind.static(1.0), toy_baseline, SolverOptions(backend="embedded"))
    assert sol.total == pytest.approx(346, abs=1e-5)
