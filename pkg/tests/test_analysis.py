import itertools

import numpy as np
import pytest

from bsm.analysis import (
    SIR_CEILING_DB,
    BatchData,
    align_outputs,
    bsm_objective,
    constraint_residual,
    construct_optimum,
    ei_balance,
    is_signed_permutation,
    sir,
    theorem_bound_check,
    theorem_sweep,
    windowed_sir,
    wsm_cost,
)
from bsm.network import NetworkState
from bsm.signals import SourceSpec, generate_uniform_sources, inject_corners, random_orthogonal


def rotation(theta):
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


# ---------------------------------------------------------------- costs


@pytest.mark.parametrize("g2", [1.0, 0.9, 0.5])
def test_wsm_cost_perfect_match(rng, g2):
    X = rng.standard_normal((3, 15))
    # blocked BLAS products may round differently, hence not bitwise zero
    assert wsm_cost(BatchData(X, X.copy(), np.ones(3), gamma_sq=g2)) <= 1e-24


def test_wsm_cost_scalar():
    assert wsm_cost(BatchData([[1.0]], [[2.0]], [1.0]), kappa=1.0) == 9.0


def test_wsm_cost_matches_four_loops(rng):
    d, T, g2 = 3, 20, 0.8
    X = rng.standard_normal((d, T))
    Y = rng.standard_normal((d, T))
    D = rng.uniform(0.5, 2, d)
    w = [np.sqrt(g2) ** (T - 1 - t) for t in range(T)]
    total = 0.0
    for t in range(T):
        for s in range(T):
            gx = sum(X[k, t] * w[t] * X[k, s] * w[s] for k in range(d))
            gy = sum(Y[k, t] * w[t] * D[k] * Y[k, s] * w[s] for k in range(d))
            total += (gx - gy) ** 2
    kappa = sum(g2**k for k in range(T))
    got = wsm_cost(BatchData(X, Y, D, gamma_sq=g2))
    assert got == pytest.approx(total / kappa**2, rel=1e-10)


def test_wsm_cost_zero_iff_weighted_grams_agree(rng):
    X = rng.standard_normal((2, 30))
    Q = rotation(0.3)
    D = np.array([4.0, 0.25])
    Y = (Q @ X) / np.sqrt(D)[:, None]
    batch = BatchData(X, Y, D, gamma_sq=0.7)
    w = batch.time_weights()
    Xw, Yw = X * w, Y * w
    assert np.max(np.abs(Xw.T @ Xw - Yw.T @ (D[:, None] * Yw))) <= 1e-12
    assert wsm_cost(batch) <= 1e-20
    Y[0, 3] += 1e-3
    assert wsm_cost(BatchData(X, Y, D, gamma_sq=0.7)) > 0


def test_batch_validation():
    with pytest.raises(ValueError):
        BatchData(np.ones((2, 3)), np.ones((2, 4)), np.ones(2))
    with pytest.raises(ValueError):
        BatchData(np.ones((2, 3)), np.ones((2, 3)), np.ones(3))
    with pytest.raises(ValueError):
        BatchData(np.ones((2, 3)), np.ones((2, 3)), [1.0, 0.0])


def test_constraint_residual_zero_output(rng):
    X = rng.standard_normal((3, 10))
    r = constraint_residual(BatchData(X, np.zeros((3, 10)), np.ones(3)))
    assert r == pytest.approx(np.linalg.norm(X.T @ X), rel=1e-12)


def test_constraint_residual_scale_invariance(rng):
    X = rng.standard_normal((3, 10))
    Y = rng.standard_normal((3, 10))
    D = rng.uniform(1, 2, 3)
    a = constraint_residual(BatchData(X, Y, D))
    b = constraint_residual(BatchData(X, 2 * Y, D / 4))
    assert a == pytest.approx(b, rel=1e-12)


def test_constructed_optimum_is_feasible():
    spec = SourceSpec.random_uniform(3, seed=5)
    batch = inject_corners(generate_uniform_sources(spec, 2000))
    Theta = random_orthogonal(3, seed=6)
    X = Theta @ batch.standardized
    Y, D = construct_optimum(batch.scaled, batch.bounds_b, perm=[2, 0, 1], signs=[1, -1, -1])
    assert constraint_residual(BatchData(X, Y, D)) <= 1e-9
    np.testing.assert_allclose(D, 3.0, rtol=1e-15)


@pytest.mark.parametrize("D,expected", [((3.0, 4.0), 25.0), (np.ones(5), 5.0), ((3.0, 3.0, 3.0), 27.0)])
def test_bsm_objective(D, expected):
    assert bsm_objective(D) == expected


def test_bsm_objective_rejects_nonpositive():
    with pytest.raises(ValueError):
        bsm_objective([1.0, 0.0])


# ---------------------------------------------------------------- lower bound


def test_bound_identity():
    r = theorem_bound_check(np.eye(2), [np.sqrt(3)] * 2)
    assert r.cost_proxy == pytest.approx(6.0, rel=1e-15) and r.lower_bound == pytest.approx(6.0)
    assert r.is_signed_permutation and r.tight


def test_bound_45_degrees():
    r = theorem_bound_check(rotation(np.pi / 4), [np.sqrt(3)] * 2)
    assert r.cost_proxy == pytest.approx(12.0, rel=1e-12)
    assert r.holds and not r.tight and not r.is_signed_permutation


def test_bound_errors():
    with pytest.raises(ValueError):
        theorem_bound_check([[1.0, 0.1], [0.0, 1.0]], [1.0, 1.0])
    with pytest.raises(ValueError):
        theorem_bound_check(np.eye(2), [1.0, 0.5])
    with pytest.raises(ValueError):
        theorem_bound_check(np.eye(2), [1.0, 1.0, 1.0])


def test_bound_sweep():
    results = theorem_sweep(200, seed=3)
    assert all(r.holds for _, r in results)
    assert all(r.tight == r.is_signed_permutation for _, r in results)
    assert sum(r.is_signed_permutation for _, r in results) == 20


@pytest.mark.parametrize(
    "G,expected",
    [
        (np.eye(3), True),
        (-np.eye(3)[[2, 0, 1]], True),
        (np.array([[1.0, 1e-8], [0.0, 1.0]]), False),
        (np.array([[1.0, 0.0], [1.0, 0.0]]), False),
        (rotation(0.2), False),
    ],
)
def test_signed_permutation_detector(G, expected):
    assert is_signed_permutation(G) is expected


# ---------------------------------------------------------------- alignment


def test_align_identity(rng):
    S = rng.standard_normal((4, 500))
    r = align_outputs(S, S)
    assert list(r.permutation) == [0, 1, 2, 3] and np.all(r.signs == 1)


def test_align_reversed_negated(rng):
    S = rng.standard_normal((4, 500))
    r = align_outputs(-S[::-1], S)
    assert list(r.permutation) == [3, 2, 1, 0] and np.all(r.signs == -1)


def test_align_brute_force(rng):
    d = 5
    S = rng.standard_normal((d, 1000))
    perm = rng.permutation(d)
    signs = rng.choice([-1, 1], d)
    scales = rng.uniform(0.5, 2, d)
    Y = (signs * scales)[:, None] * S[perm] + 0.05 * rng.standard_normal((d, 1000))

    def score(p, s):
        return sum(s[i] * np.corrcoef(Y[i], S[p[i]])[0, 1] for i in range(d))

    best = max(
        ((p, s) for p in itertools.permutations(range(d)) for s in itertools.product((-1, 1), repeat=d)),
        key=lambda ps: score(*ps),
    )
    for method in ("greedy", "exhaustive"):
        r = align_outputs(Y, S, method=method)
        assert list(r.permutation) == list(perm) == list(best[0])
        assert list(r.signs) == list(signs) == list(best[1])
        np.testing.assert_allclose(np.abs(r.scales), scales, rtol=0.02)


def _clear_margin(C, margin=0.1):
    # every row has a distinct best column that beats its runner-up by ``margin``
    top = np.sort(C, axis=1)
    return len(set(C.argmax(axis=1).tolist())) == len(C) and np.min(top[:, -1] - top[:, -2]) >= margin


def test_align_greedy_agrees_with_exhaustive(rng):
    checked = 0
    for _ in range(60):
        d = int(rng.integers(2, 8))
        S = rng.standard_normal((d, 400))
        Y = (np.eye(d)[rng.permutation(d)] + 0.3 * rng.standard_normal((d, d))) @ S
        g = align_outputs(Y, S)
        if not _clear_margin(np.abs(g.correlation)):
            continue
        checked += 1
        e = align_outputs(Y, S, method="exhaustive")
        assert list(g.permutation) == list(e.permutation)
        assert list(g.signs) == list(e.signs)
    assert checked >= 10


def test_align_errors(rng):
    S = rng.standard_normal((2, 50))
    with pytest.raises(ValueError):
        align_outputs(np.vstack([S[0], np.zeros(50)]), S)
    with pytest.raises(ValueError):
        align_outputs(S[:, :10], S)
    with pytest.raises(ValueError):
        align_outputs(rng.standard_normal((9, 50)), rng.standard_normal((9, 50)), method="exhaustive")


# ---------------------------------------------------------------- SIR


def test_sir_perfect():
    S = np.random.default_rng(0).uniform(-1, 1, (3, 1000))
    r = sir(S, S)
    assert np.all(r.per_output_db == SIR_CEILING_DB)


def test_sir_20db(rng):
    S = rng.standard_normal((2, 2000))
    Y = np.array([[1.0, 0.1]]) @ S
    r = sir(np.vstack([Y, S[1]]), S)
    assert r.per_output_db[0] == pytest.approx(20.0, abs=1e-9)


def test_sir_known_mixture(rng):
    d, T = 4, 10_000
    S = rng.uniform(-np.sqrt(3), np.sqrt(3), (d, T))
    H = np.eye(d) + 0.05 * rng.standard_normal((d, d))
    r = sir(H @ S, S)
    assert np.max(np.abs(r.H - H)) <= 1e-3
    P = H**2
    lead = P.max(axis=1)
    expected = 10 * np.log10(lead / (P.sum(axis=1) - lead))
    np.testing.assert_allclose(r.per_output_db, expected, atol=0.01)


def test_sir_signed_permutation_invariance(rng):
    S = rng.standard_normal((4, 3000))
    Y = (np.eye(4) + 0.1 * rng.standard_normal((4, 4))) @ S
    perm = rng.permutation(4)
    flipped = np.array([1, -1, -1, 1])[:, None] * Y[perm]
    assert sir(flipped, S).mean_db == pytest.approx(sir(Y, S).mean_db, abs=1e-9)


def test_sir_errors(rng):
    with pytest.raises(ValueError):
        sir(rng.standard_normal((3, 2)), rng.standard_normal((3, 2)))
    S = rng.standard_normal((2, 100))
    with pytest.raises(ValueError):
        sir(S, np.vstack([S[0], S[0]]))
    with pytest.raises(ValueError):
        sir(S, S[:, :50])


def test_windowed_sir(rng):
    S = rng.standard_normal((2, 4000))
    Y = S.copy()
    Y[:, :2000] = np.array([[1.0, 0.1], [0.1, 1.0]]) @ S[:, :2000]
    trace = windowed_sir(Y, S, 2000, [2000, 4000])
    assert trace[0] == pytest.approx(20.0, abs=1e-9)
    assert trace[1] == SIR_CEILING_DB


# ---------------------------------------------------------------- E/I balance


def test_ei_zero_W():
    s = NetworkState(np.zeros((2, 2)), np.eye(2), np.ones(2))
    assert np.array_equal(ei_balance(s)["excitation"], np.zeros(2))


def test_ei_matches_loops(rng):
    d = 4
    s = NetworkState(rng.standard_normal((d, 3)), rng.standard_normal((d, d)), rng.uniform(0.5, 2, d))
    e = ei_balance(s)
    for i in range(d):
        exc = sum(s.W[i, j] ** 2 for j in range(3))
        inh = sum(s.D[j] * s.M[i, j] ** 2 for j in range(d))
        assert e["excitation"][i] == pytest.approx(exc, rel=1e-12)
        assert e["inhibition"][i] == pytest.approx(inh, rel=1e-12)
        assert e["gap"][i] == pytest.approx(exc - inh, rel=1e-12, abs=1e-12)
