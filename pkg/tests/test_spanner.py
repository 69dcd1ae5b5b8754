"""Approximate barycentric spanners over oracle-accessible vector families."""

import numpy as np
import pytest

from voxlab import BudgetError, VoxlabError
from voxlab.spanner import (
    robust_spanner,
    spanner_direction,
    spanner_rounds_bound,
    verify_spanner,
)

from oracles import oracle_cofactor_direction


def exact_vector_oracles(vectors):
    vectors = [np.asarray(v, dtype=float) for v in vectors]

    def lin_opt(theta):
        return int(np.argmax([theta @ v for v in vectors]))

    def lin_est(z):
        return vectors[z]

    return lin_opt, lin_est


def noisy_vector_oracles(vectors, eps_opt, rng):
    """lin_opt returns any index whose value is within eps_opt of the sup."""
    vectors = [np.asarray(v, dtype=float) for v in vectors]

    def lin_opt(theta):
        vals = np.array([theta @ v for v in vectors])
        ok = np.nonzero(vals >= vals.max() - eps_opt)[0]
        return int(rng.choice(ok))

    def lin_est(z):
        return vectors[z]

    return lin_opt, lin_est


def test_rounds_bound_arithmetic():
    assert spanner_rounds_bound(2.0, 0.1, 2) == 17
    assert spanner_rounds_bound(2.0, 0.05, 3) > spanner_rounds_bound(2.0, 0.1, 3)


def test_signed_basis_family_is_its_own_spanner():
    d = 3
    vectors = [e * s for e in np.eye(d) for s in (1.0, -1.0)]
    lin_opt, lin_est = exact_vector_oracles(vectors)
    state = robust_spanner(lin_opt, lin_est, C=2.0, eps=0.01, d=d)
    # every family member is expressible with coefficients at most 1
    checks = verify_spanner(state.W, vectors, C=2.0, eps=0.01)
    assert all(c["passed"] for c in checks)
    assert max(np.abs(c["beta"]).max() for c in checks) <= 1.0 + 0.1
    assert state.rounds <= spanner_rounds_bound(2.0, 0.01, d)


def test_random_families_meet_guarantee():
    rng = np.random.default_rng(0)
    for trial in range(10):
        d = 3
        raw = rng.standard_normal((12, d))
        vectors = [v / max(1.0, np.linalg.norm(v)) for v in raw]
        lin_opt, lin_est = exact_vector_oracles(vectors)
        state = robust_spanner(lin_opt, lin_est, C=2.0, eps=0.05, d=d)
        checks = verify_spanner(state.W, vectors, C=2.0, eps=0.05)
        assert all(c["passed"] for c in checks)
        assert max(c["residual"] for c in checks) <= 3 * 2.0 * d * 0.05 / 2 + 1e-9
        assert state.rounds <= spanner_rounds_bound(2.0, 0.05, d)


def test_noisy_oracle_still_meets_guarantee():
    rng = np.random.default_rng(1)
    for trial in range(6):
        d = 3
        raw = rng.standard_normal((10, d))
        vectors = [v / max(1.0, np.linalg.norm(v)) for v in raw]
        eps = 0.05
        lin_opt, lin_est = noisy_vector_oracles(vectors, eps / 2.0, rng)
        state = robust_spanner(lin_opt, lin_est, C=2.0, eps=eps, d=d)
        checks = verify_spanner(state.W, vectors, C=2.0, eps=eps)
        assert all(c["passed"] for c in checks)


def test_spanner_direction_is_replacement_determinant():
    rng = np.random.default_rng(2)
    for _ in range(10):
        W = rng.standard_normal((4, 4))
        i = int(rng.integers(4))
        theta = spanner_direction(W, i)
        ref = oracle_cofactor_direction(W, i)
        assert np.allclose(theta, ref, atol=1e-10)
        v = rng.standard_normal(4)
        Mod = W.copy()
        Mod[:, i] = v
        assert theta @ v == pytest.approx(np.linalg.det(Mod), abs=1e-9)


def test_spanner_direction_singular_matrix():
    # rank-deficient W: LU fallback still returns replacement determinants
    W = np.zeros((3, 3))
    W[:, 0] = [1.0, 0.0, 0.0]
    W[:, 1] = [1.0, 0.0, 0.0]
    W[:, 2] = [0.0, 1.0, 0.0]
    theta = spanner_direction(W, 1)
    v = np.array([0.0, 0.0, 1.0])
    Mod = W.copy()
    Mod[:, 1] = v
    assert theta @ v == pytest.approx(np.linalg.det(Mod), abs=1e-12)


def test_verify_spanner_trivials():
    W = np.eye(2)
    checks = verify_spanner(W, [np.array([0.5, 0.5])], C=2.0, eps=0.1)
    assert checks[0]["passed"]
    assert checks[0]["residual"] == pytest.approx(0.0, abs=1e-12)
    far = verify_spanner(W, [np.array([5.0, 0.0])], C=2.0, eps=0.0001)
    assert not far[0]["passed"]  # coefficient 5 exceeds C
    with pytest.raises(VoxlabError):
        verify_spanner(np.zeros((2, 2)), [np.array([1.0, 0.0])], C=2.0, eps=0.1)


def test_parameter_validation():
    lin_opt, lin_est = exact_vector_oracles([np.array([1.0, 0.0])])
    with pytest.raises(VoxlabError):
        robust_spanner(lin_opt, lin_est, C=1.0, eps=0.1, d=2)
    with pytest.raises(VoxlabError):
        robust_spanner(lin_opt, lin_est, C=2.0, eps=0.0, d=2)


def test_budget_error_reports_bound():
    # oracle whose reported vectors keep growing the determinant forever by
    # alternating which index it returns with inflating magnitudes
    d = 2
    scale = {"v": 1.0}

    def lin_opt(theta):
        return 0

    def lin_est(z):
        scale["v"] *= 4.0
        return np.array([scale["v"], 0.0])

    with pytest.raises(BudgetError) as exc:
        robust_spanner(lin_opt, lin_est, C=1.1, eps=0.5, d=d, max_rounds=6)
    msg = str(exc.value)
    assert "6 rounds" in msg
    assert str(spanner_rounds_bound(1.1, 0.5, d)) in msg


def test_round_and_call_accounting():
    vectors = [np.array([1.0, 0.0]), np.array([0.0, 1.0]),
               np.array([-1.0, 0.0]), np.array([0.0, -1.0])]
    lin_opt, lin_est = exact_vector_oracles(vectors)
    state = robust_spanner(lin_opt, lin_est, C=2.0, eps=0.01, d=2)
    assert state.rounds >= 2  # phase 1 places both columns
    assert state.oracle_calls >= 4 * state.rounds
    assert len(state.indices) == 2
    assert all(ix is not None for ix in state.indices)
