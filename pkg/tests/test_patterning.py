import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from susceptlab.patterning import (MatrixAssemblyError, SusceptibilityMatrix, assemble_matrix, jacobi_eigh,
                                   jacobi_pseudoinverse, pattern, read_matrix_csv, ridge_error, ridge_inverse,
                                   write_matrix_csv)
from susceptlab.susceptibility import SusceptibilityResult
from oracles import power_iteration_norm

seeds = st.integers(0, 2**32 - 1)


def test_zero_matrix():
    assert np.array_equal(ridge_inverse(np.zeros((2, 3)), 0.1), np.zeros((3, 2)))
    with pytest.raises(ValueError):
        ridge_inverse(np.eye(2), 0.0)
    with pytest.raises(ValueError):
        ridge_error(np.zeros((2, 2)), 0.1)


def test_scalar_case():
    for s in (0.1, 1.0, 3.0):
        assert ridge_inverse([[s]], 1.0)[0, 0] == pytest.approx(s / (s * s + 1.0))
    lam = 0.04
    assert ridge_inverse([[np.sqrt(lam)]], lam)[0, 0] == pytest.approx(1 / (2 * np.sqrt(lam)))


def test_small_lambda_approaches_pseudoinverse(rng):
    A = rng.standard_normal((4, 3))
    assert np.max(np.abs(ridge_inverse(A, 1e-8) - jacobi_pseudoinverse(A))) <= 1e-5


def test_jacobi_oracle(rng):
    S = rng.standard_normal((6, 6))
    S = S + S.T
    vals, vecs = jacobi_eigh(S)
    assert np.allclose(vecs @ np.diag(vals) @ vecs.T, S, atol=1e-12)
    assert np.allclose(np.sort(vals), np.linalg.eigvalsh(S), atol=1e-12)
    A = rng.standard_normal((3, 5))
    assert np.allclose(jacobi_pseudoinverse(A), np.linalg.pinv(A), atol=1e-10)
    low = rng.standard_normal((4, 1)) @ rng.standard_normal((1, 3))
    assert np.allclose(jacobi_pseudoinverse(low), np.linalg.pinv(low, rcond=1e-10), atol=1e-8)


def test_pattern_examples(rng):
    A = rng.standard_normal((3, 4))
    assert np.array_equal(pattern(A, np.zeros(3), 0.1).h_vector, np.zeros(4))
    Q = np.linalg.qr(rng.standard_normal((4, 4)))[0][:2] * np.array([[2.0], [0.5]])
    b = rng.standard_normal(2)
    sol = pattern(Q, b, 1e-12)
    assert np.allclose(sol.h_vector, Q.T @ np.linalg.solve(Q @ Q.T, b), atol=1e-9)
    assert sol.residual_norm <= 1e-9
    with pytest.raises(ValueError):
        pattern(A, np.ones(2), 0.1)


@settings(max_examples=200, deadline=None)
@given(seeds, st.integers(1, 8), st.integers(1, 8), st.sampled_from([1e-4, 1e-2, 1.0]))
def test_solution_norm_bound(seed, H, m, lam):
    rng = np.random.default_rng(seed)
    A, b = rng.standard_normal((H, m)), rng.standard_normal(H)
    sol = pattern(A, b, lam)
    assert np.linalg.norm(sol.h_vector) <= np.linalg.norm(b) / (2 * np.sqrt(lam)) * (1 + 1e-12)
    assert power_iteration_norm(ridge_inverse(A, lam)) <= 1 / (2 * np.sqrt(lam)) + 1e-9


@settings(max_examples=100, deadline=None)
@given(seeds, st.integers(1, 6), st.integers(1, 6))
def test_ridge_inverse_is_continuous(seed, H, m):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((H, m))
    E = rng.standard_normal((H, m))
    lam = 1e-2
    base = ridge_inverse(A, lam)
    diffs = [np.linalg.norm(ridge_inverse(A + t * E, lam) - base, 2) for t in (1e-2, 1e-4, 1e-6)]
    assert diffs[2] <= diffs[1] <= diffs[0] + 1e-15
    assert diffs[2] <= 1e-3


def test_ridge_error_examples():
    for lam in (1e-6, 1e-2, 0.5):
        assert ridge_error(np.diag([1.0, 2.0]), lam) == pytest.approx(lam / (1 + lam), rel=1e-12)
        direct = np.linalg.norm(ridge_inverse(np.diag([1.0, 2.0]), lam) - np.diag([1.0, 0.5]), 2)
        assert direct == pytest.approx(lam / (1 + lam), rel=1e-9)
    errs = [ridge_error(np.diag([1.0, 2.0]), lam) for lam in (1e-2, 1e-4, 1e-8)]
    assert errs[0] > errs[1] > errs[2] and errs[2] < 1e-7


def test_rank_deficient_blowup(rng):
    A = np.outer([1.0, 2.0], [1.0, -1.0])
    noisy = A + 1e-8 * rng.standard_normal((2, 2))
    lam = 1e-2
    assert np.linalg.norm(ridge_inverse(noisy, lam), 2) <= 1 / (2 * np.sqrt(lam))
    assert np.linalg.norm(ridge_inverse(noisy, lam) - ridge_inverse(A, lam), 2) < 1e-6
    assert np.linalg.norm(np.linalg.pinv(noisy), 2) > 1e6


def _const_estimator(table):
    return lambda o, x: SusceptibilityResult(table[(o, x)], "population_ren", 10.0)


def test_assemble_single_and_duplicate():
    M = assemble_matrix(["a"], ["x"], _const_estimator({("a", "x"): 1.5}), "population_ren")
    assert M.shape == (1, 1) and M.entries[0, 0] == 1.5
    table = {("a", "x"): 1.0, ("b", "x"): 2.0}
    D = assemble_matrix(["a", "b"], ["x", "x"], _const_estimator(table), "population_ren")
    assert np.array_equal(D.entries[:, 0], D.entries[:, 1])


def test_assemble_collects_all_failures():
    def est(o, x):
        if o == "bad":
            raise ArithmeticError("boom")
        return SusceptibilityResult(1.0, "ren", 10.0)

    with pytest.raises(MatrixAssemblyError) as info:
        assemble_matrix(["ok", "bad"], ["x", "y"], est, "ren")
    assert [(i, j) for i, j, *_ in info.value.failures] == [(1, 0), (1, 1)]


def test_assemble_records_standard_errors():
    est = lambda o, x: SusceptibilityResult(1.0, "sgld", 10.0, mc_std_err=0.25)
    M = assemble_matrix(["a", "b"], ["x"], est, "sgld")
    assert np.all(M.std_errs == 0.25)


def test_matrix_invariants():
    with pytest.raises(ValueError):
        SusceptibilityMatrix(np.array([[np.nan]]), "ren")
    with pytest.raises(ValueError):
        SusceptibilityMatrix(np.zeros((0, 2)), "ren")


def test_matrix_csv_roundtrip(tmp_path, rng):
    M = SusceptibilityMatrix(rng.standard_normal((3, 2)), "population_ren")
    path = tmp_path / "m.csv"
    write_matrix_csv(path, M)
    assert path.read_text().splitlines()[0] == "H=3,m=2,estimator_kind=population_ren"
    back = read_matrix_csv(path)
    assert np.array_equal(back.entries, M.entries) and back.estimator_kind == "population_ren"
