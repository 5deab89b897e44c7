import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ccpd.model import (
    PartitionedFactors,
    Ranks,
    SolverConfig,
    assemble,
    check_dataset,
    coherence_penalty,
    cost,
    identifiability_check,
    residual_tensors,
    shared_and_distinct,
)
from ccpd.tensor import cp_reconstruct

from conftest import random_data, random_theta
from oracles import cost_loop, identifiable


def test_reference_ranks_column_counts():
    ranks = Ranks(2, (5, 4, 4))
    assert [ranks.total(k) for k in range(ranks.K)] == [7, 6, 6]


@pytest.mark.parametrize("R, L", [(-1, (1,)), (0, (0, 1)), (1, ())])
def test_ranks_validation(R, L):
    with pytest.raises(ValueError):
        Ranks(R, L)


def test_assemble_puts_shared_block_first():
    rng = np.random.default_rng(0)
    theta = random_theta(rng, 4, 5, [2, 3], 1, [1, 2])
    S1, V1, T1 = assemble(theta, 1)
    assert S1.shape == (4, 3) and V1.shape == (5, 3) and T1.shape == (3, 3)
    np.testing.assert_array_equal(S1[:, :1], theta.S_shared)
    np.testing.assert_array_equal(V1[:, 1:], theta.V_distinct[1])
    np.testing.assert_array_equal(T1[:, :1], theta.T_shared[1])
    with pytest.raises(IndexError):
        assemble(theta, 2)


def test_cost_matches_direct_summation():
    rng = np.random.default_rng(1)
    for lam in (0.0, 0.5, 10.0):
        theta = random_theta(rng, 6, 7, [2, 3], 1, [1, 2])
        data = random_data(rng, 6, 7, [2, 3])
        ref = cost_loop(theta, data, lam)
        assert abs(cost(theta, data, lam) - ref) <= 1e-10 * ref


def test_cost_frozen_value():
    # integer instance whose cost was evaluated with the summation oracle
    theta = PartitionedFactors(
        np.array([[1.0], [2.0]]),
        np.array([[1.0], [0.0], [1.0]]),
        [np.array([[0.0], [1.0]])],
        [np.array([[1.0], [1.0], [0.0]])],
        [np.array([[1.0], [-1.0]])],
        [np.array([[2.0], [0.0]])],
    )
    Y = np.arange(12, dtype=float).reshape(2, 3, 2)
    assert cost(theta, [Y], 0.0) == 498.0
    assert cost(theta, [Y], 2.0) == 506.0


def test_cost_exact_model_is_zero():
    rng = np.random.default_rng(2)
    theta = random_theta(rng, 5, 6, [3, 4], 2, [1, 0])
    data = [cp_reconstruct(*assemble(theta, k)) for k in range(2)]
    assert cost(theta, data, 0.0) < 1e-24


def test_shared_plus_distinct_reconstructs_model():
    rng = np.random.default_rng(3)
    theta = random_theta(rng, 4, 5, [2, 3], 1, [2, 1])
    for k in range(2):
        P, D = shared_and_distinct(theta, k)
        np.testing.assert_allclose(P + D, cp_reconstruct(*assemble(theta, k)), atol=1e-13)


def test_residual_tensors():
    rng = np.random.default_rng(4)
    theta = random_theta(rng, 3, 4, [2], 1, [1])
    data = random_data(rng, 3, 4, [2])
    (E,) = residual_tensors(theta, data)
    np.testing.assert_allclose(E, data[0] - cp_reconstruct(*assemble(theta, 0)))


def test_coherence_penalty_orthonormal_is_zero():
    Q, _ = np.linalg.qr(np.random.default_rng(5).standard_normal((8, 3)))
    assert coherence_penalty(Q) < 1e-28
    assert coherence_penalty(2 * np.eye(2)) == 18.0


def test_shape_mismatch_rejected():
    rng = np.random.default_rng(6)
    theta = random_theta(rng, 3, 4, [2], 1, [1])
    with pytest.raises(ValueError):
        cost(theta, random_data(rng, 3, 5, [2]), 0.0)
    with pytest.raises(ValueError):
        check_dataset([np.zeros((3, 4, 2)), np.zeros((3, 5, 2))])
    with pytest.raises(ValueError):
        cost(theta, random_data(rng, 3, 4, [2]), -1.0)


def test_identifiability_full_cohort_scale_passes():
    (row,) = identifiability_check(271, 48546, [3], Ranks(2, (5,)))
    assert row["bound"] == 68.0 and row["status"] == "pass"


@settings(max_examples=60, deadline=None)
@given(S=st.integers(1, 60), V=st.integers(1, 80), T=st.integers(1, 10),
       R=st.integers(0, 6), L=st.integers(1, 6))
def test_identifiability_matches_independent_inequality(S, V, T, R, L):
    (row,) = identifiability_check(S, V, [T], Ranks(R, (L,)))
    if T <= S <= V:
        assert row["status"] == ("pass" if identifiable(S, T, R + L) else "fail")
    else:
        assert row["status"] == "not applicable"


def test_solver_config_validation_and_echo():
    cfg = SolverConfig(Ranks(1, (2,)), lam=3.0, seed=7)
    d = cfg.to_dict()
    assert d["lambda"] == 3.0 and d["ranks"] == {"R": 1, "L": [2]} and d["seed"] == 7
    assert set(d) == {"ranks", "lambda", "max_iters", "rel_tol", "qn_memory", "qn_max_inner",
                      "seed", "cost_floor"}
    for bad in ({"lam": -1}, {"rel_tol": 0}, {"max_iters": 0}, {"seed": -1}, {"seed": 2**64}):
        with pytest.raises(ValueError):
            SolverConfig(Ranks(1, (1,)), **bad)
    assert SolverConfig({"R": 1, "L": [1]}).ranks == Ranks(1, (1,))


def test_from_assembled_roundtrip():
    rng = np.random.default_rng(7)
    theta = random_theta(rng, 4, 5, [2, 3], 2, [1, 2])
    parts = [assemble(theta, k) for k in range(2)]
    back = PartitionedFactors.from_assembled(*zip(*parts), R=2)
    for k in range(2):
        for a, b in zip(assemble(back, k), parts[k]):
            np.testing.assert_array_equal(a, b)
