import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from schrodnet.netgraph import build_cmn
from schrodnet.netops import dtn_map, matrix_from_upper, network_dtn_jacobian, upper_entries
from schrodnet.recovery import (
    NearSingularJacobianError,
    NegativeConductorError,
    gamma_jacobian,
    recover_conductivity,
)

G5, G7 = build_cmn(5), build_cmn(7)


@settings(max_examples=15)
@given(arrays(float, G7.n_edges, elements=st.floats(0.5, 2)))
def test_roundtrip_c37(gamma):
    rec = recover_conductivity(G7, dtn_map(G7, gamma))
    assert np.abs(rec / gamma - 1).max() <= 1e-8


@given(arrays(float, G5.n_edges, elements=st.floats(0.1, 10)), st.floats(1e-3, 1e3))
def test_homogeneity(gamma, alpha):
    M = dtn_map(G5, gamma)
    a, b = recover_conductivity(G5, M), recover_conductivity(G5, alpha * M)
    assert np.abs(b / (alpha * a) - 1).max() <= 1e-9


def test_roundtrip_c49(rng):
    G = build_cmn(9)
    gamma = rng.uniform(0.5, 2, G.n_edges)
    assert np.abs(recover_conductivity(G, dtn_map(G, gamma)) / gamma - 1).max() <= 1e-8


def test_warm_start(rng):
    gamma = rng.uniform(0.5, 2, G7.n_edges)
    rec = recover_conductivity(G7, dtn_map(G7, gamma), initial=np.ones(G7.n_edges))
    assert np.allclose(rec, gamma, rtol=1e-8)
    with pytest.raises(ValueError):
        recover_conductivity(G7, dtn_map(G7, gamma), initial=-np.ones(G7.n_edges))


def test_positive_offdiagonal_rejected():
    M = dtn_map(G5, np.ones(10))
    M[0, 1] = M[1, 0] = 0.1
    with pytest.raises(NegativeConductorError):
        recover_conductivity(G5, M)


def test_noisy_data_signal_negative_conductor(rng):
    # large enough perturbations leave the range of positive networks
    M = dtn_map(G7, np.ones(G7.n_edges))
    vals = upper_entries(M)
    for level in (0.3, 1.0, 3.0):
        noisy = vals * np.exp(level * rng.standard_normal(vals.shape))
        try:
            recover_conductivity(G7, matrix_from_upper(noisy, 7))
        except NegativeConductorError:
            return
    pytest.fail("noise never produced a negative-conductor signal")


def test_shape_and_criticality_checks():
    with pytest.raises(ValueError):
        recover_conductivity(G5, np.zeros((4, 4)))
    with pytest.raises(ValueError):
        recover_conductivity(G7.without_edge(0), dtn_map(G7, np.ones(21)))


def test_gamma_jacobian_inverse_and_fd(rng):
    gamma = rng.uniform(0.5, 2, G5.n_edges)
    Jinv, cond = gamma_jacobian(G5, gamma)
    assert np.abs(Jinv @ network_dtn_jacobian(G5, gamma) - np.eye(10)).max() <= 1e-8
    vals = upper_entries(dtn_map(G5, gamma))
    for k in (0, 4, 9):
        h = 1e-6 * abs(vals[k])
        d = np.zeros_like(vals)
        d[k] = h
        fd = (recover_conductivity(G5, matrix_from_upper(vals + d, 5), initial=gamma)
              - recover_conductivity(G5, matrix_from_upper(vals - d, 5), initial=gamma)) / (2 * h)
        assert np.linalg.norm(fd - Jinv[:, k]) <= 1e-4 * np.linalg.norm(Jinv[:, k])


def test_condition_grows_with_n():
    conds = [gamma_jacobian(build_cmn(n), np.ones(n * (n - 1) // 2))[1] for n in (5, 7, 9, 11)]
    assert all(a < b for a, b in zip(conds, conds[1:]))
    with pytest.raises(NearSingularJacobianError):
        gamma_jacobian(build_cmn(11), np.ones(55), cond_max=10.0)
