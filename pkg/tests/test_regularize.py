import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from schrodnet.continuum import BoundaryFunctionSet, DiskField, DiskGrid, Phantom, lumped_measurements
from schrodnet.netgraph import build_cmn
from schrodnet.netops import dtn_map, upper_entries
from schrodnet.recovery import recover_conductivity
from schrodnet.regularize import (
    LumpingPlan,
    SelectionExhausted,
    add_noise,
    lump_measurements,
    lumped_variance,
    select_network_size,
)

plans = st.integers(3, 25).flatmap(lambda N: st.tuples(st.just(N), st.integers(1, N)))


@given(plans)
def test_default_plan_valid(Nn):
    N, n = Nn
    plan = LumpingPlan.default(N, n)
    assert plan.n == n
    sizes = {len(S) for S in plan.sets}
    assert sizes == {N // n}
    A = plan.matrix()
    assert np.allclose(A.sum(axis=1), 1)
    assert np.all((A > 0).sum(axis=0) <= 1)


def test_default_plan_spreads_leftovers():
    plan = LumpingPlan.default(17, 5)
    assert plan.sets == ((0, 1, 2), (3, 4, 5), (6, 7, 8), (10, 11, 12), (13, 14, 15))


@pytest.mark.parametrize("sets, weights", [
    (((0, 2),), ((0.5, 0.5),)),          # not consecutive
    (((0, 1), (1, 2)), ((0.5, 0.5),) * 2),  # overlapping
    (((0, 1),), ((0.7, 0.7),)),          # weights do not sum to one
    (((0, 1),), ((1.5, -0.5),)),         # negative weight
    (((),), ((),)),                      # empty set
])
def test_plan_validation(sets, weights):
    with pytest.raises(ValueError):
        LumpingPlan(5, sets, weights)


def test_plan_wraps_around_and_json(tmp_path):
    plan = LumpingPlan(6, ((5, 0), (1, 2)), ((0.25, 0.75), (0.5, 0.5)))
    assert LumpingPlan.from_json(plan.to_json()) == plan
    plan.to_json(tmp_path / "p.json")
    assert LumpingPlan.from_json(tmp_path / "p.json") == plan


@given(st.integers(5, 15), st.integers(0, 10**6))
def test_identity_lumping_and_row_sums(N, seed):
    rng = np.random.default_rng(seed)
    G = build_cmn(N if N % 2 else N + 1)
    M = dtn_map(G, rng.uniform(0.5, 2, G.n_edges))
    N = M.shape[0]
    ident = LumpingPlan(N, tuple((j,) for j in range(N)), tuple((1.0,) for _ in range(N)))
    assert np.allclose(lump_measurements(M, ident), M, atol=1e-14 * np.abs(M).max())
    L = lump_measurements(M, LumpingPlan.default(N, max(1, N // 3)))
    assert np.abs(L.sum(axis=1)).max() <= 1e-13 * np.abs(M).max()


def test_lumping_commutes_with_pairing():
    N = 15
    g = DiskGrid(48, 60)
    phi = BoundaryFunctionSet(N)
    q = Phantom([{"gaussian": {"center": [0.2, 0.1], "width": 0.4, "amplitude": 1.0}}]).evaluate(g)
    M = lumped_measurements(q, phi)
    for n in (9, 5):
        plan = LumpingPlan.default(N, n)
        direct = lumped_measurements(q, phi.lumped(plan.matrix()))
        a, b = upper_entries(lump_measurements(M, plan)), upper_entries(direct)
        assert np.abs(a - b).max() <= 1e-12 * np.abs(b).max()


def test_noise_averaging():
    plan = LumpingPlan.default(15, 5)
    var = lumped_variance(plan, np.ones((15, 15)))
    assert np.all(var < 1.0)
    assert np.allclose(var, 1 / 9)


def test_noise_model_is_symmetric_and_seeded():
    M = dtn_map(build_cmn(5), np.ones(10))
    a, b = add_noise(M, 0.1, 3), add_noise(M, 0.1, 3)
    assert np.array_equal(a, b)
    assert np.allclose(a, a.T) and np.allclose(a.sum(axis=1), 0)
    assert not np.allclose(a, M)
    assert np.allclose(add_noise(M, 0.0, 1), M, rtol=0, atol=1e-15)


def test_select_clean_keeps_full_size():
    G = build_cmn(9)
    M = dtn_map(G, np.random.default_rng(0).uniform(0.5, 2, G.n_edges))
    sel = select_network_size(M, [9, 7, 5])
    assert sel.n == 9 and sel.log[0]["outcome"] == "accepted"
    assert np.allclose(sel.gamma, recover_conductivity(G, M), rtol=1e-8)


def test_select_validates_candidates():
    M = dtn_map(build_cmn(7), np.ones(21))
    with pytest.raises(ValueError):
        select_network_size(M, [6])
    with pytest.raises(ValueError):
        select_network_size(M, [9])


def test_select_reports_exhaustion():
    M = dtn_map(build_cmn(5), np.ones(10))
    M[0, 1] = M[1, 0] = 1.0
    with pytest.raises(SelectionExhausted) as err:
        select_network_size(M, [5])
    assert err.value.decisions[0]["n"] == 5


@pytest.mark.slow
def test_selected_size_monotone_in_noise():
    N = 11
    g = DiskGrid(64, 66)
    M = lumped_measurements(DiskField.constant(g, 1.0), BoundaryFunctionSet(N))
    sizes = [select_network_size(add_noise(M, lvl, 0), [11, 9, 7, 5]).n
             for lvl in (0.0, 1e-3, 1e-2, 1e-1)]
    assert sizes == sorted(sizes, reverse=True)
    assert sizes[0] == 11 and sizes[-1] < 11
