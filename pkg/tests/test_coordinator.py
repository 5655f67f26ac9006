import itertools
import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pruw.client import decode_answers, query_vector
from pruw.coordinator import (Permutation, build_reversing_matrix, dump_setup, encode_storage,
                              mask_factor, reversing_matrix, setup)
from pruw.field import PrimeField
from pruw.params import Sabotage, SystemParams

WALKTHROUGH_PERM = Permutation((2, 5, 1, 3, 4))
# reversing matrix of the five-subpacket walkthrough, transcribed by hand
WALKTHROUGH_R = np.array([
    [0, 0, 1, 0, 0],
    [1, 0, 0, 0, 0],
    [0, 0, 0, 1, 0],
    [0, 0, 0, 0, 1],
    [0, 1, 0, 0, 0],
])


def test_walkthrough_reversing_matrix():
    np.testing.assert_array_equal(reversing_matrix(WALKTHROUGH_PERM), WALKTHROUGH_R)


def test_identity_reversing_matrix():
    np.testing.assert_array_equal(reversing_matrix(Permutation.identity(4)), np.eye(4, dtype=np.int64))


def test_permutation_rejects_non_bijection():
    with pytest.raises(ValueError):
        Permutation((1, 1, 2))
    with pytest.raises(IndexError):
        WALKTHROUGH_PERM(6)


@given(st.permutations(list(range(1, 8))), st.lists(st.integers(0, 100), min_size=7, max_size=7))
def test_reversing_matrix_restores_order(mapping, u):
    perm = Permutation(tuple(mapping))
    u = np.asarray(u)
    np.testing.assert_array_equal(reversing_matrix(perm) @ perm.permute(u), u)
    assert perm.inverse().inverse() == perm
    assert all(perm.inverse()(perm(i)) == i for i in range(1, 8))


def test_build_reversing_matrix_algebra(gf2053, rng):
    f = (5, 9)
    R = reversing_matrix(WALKTHROUGH_PERM)
    assert np.array_equal(build_reversing_matrix(gf2053, R, np.zeros((5, 5), dtype=np.int64), f, 3), R)
    Zbar = gf2053.random(rng, (5, 5))
    Rs = {a: build_reversing_matrix(gf2053, R, Zbar, f, a) for a in (3, 7)}
    c = {a: (f[0] - a) * (f[1] - a) % 2053 for a in (3, 7)}
    np.testing.assert_array_equal(gf2053.sub(Rs[3], Rs[7]), gf2053.mul((c[3] - c[7]) % 2053, Zbar))
    # subtracting the planted mask recovers the walkthrough matrix
    np.testing.assert_array_equal(gf2053.sub(Rs[3], gf2053.mul(c[3], Zbar)), WALKTHROUGH_R)
    with pytest.raises(ValueError):
        build_reversing_matrix(gf2053, R, np.zeros((4, 4)), f, 3)


def test_reversing_matrix_entries_uniform_exhaustive():
    q, P, f, alpha = 5, 2, (0,), 2
    fld = PrimeField(q)
    for mapping in itertools.permutations((1, 2)):
        R = reversing_matrix(Permutation(mapping))
        for i, j in itertools.product(range(P), repeat=2):
            counts = np.zeros(q, dtype=int)
            for z in range(q):
                Zbar = np.zeros((P, P), dtype=np.int64)
                Zbar[i, j] = z
                counts[build_reversing_matrix(fld, R, Zbar, f, alpha)[i, j]] += 1
            assert (counts == 1).all()


def test_encode_storage_layout(gf2053):
    M, P, ell, f, alpha = 3, 2, 2, (4, 8), 10
    W = np.arange(M * P * ell).reshape(M, P, ell)
    noise = np.zeros((M, P, ell, 2 * ell + 1), dtype=np.int64)
    S = encode_storage(gf2053, W, noise, f, alpha)
    assert S.shape == (P, ell * M)
    for m, s, k in itertools.product(range(M), range(P), range(ell)):
        assert S[s, k * M + m] == W[m, s, k]
    noise[1, 0, 1] = [1, 2, 0, 0, 0]
    S = encode_storage(gf2053, W, noise, f, alpha)
    assert S[0, 1 * M + 1] == (W[1, 0, 1] + (8 - 10) * (1 + 2 * 10)) % 2053


def test_mask_factor(gf2053):
    assert int(mask_factor(gf2053, (4, 8), 10)) == (4 - 10) * (8 - 10) % 2053
    np.testing.assert_array_equal(mask_factor(gf2053, (), np.array([1, 2])), [1, 1])


@pytest.mark.parametrize("N", [6, 10])
def test_read_after_setup_returns_initial_model(N, rng):
    p = SystemParams.build(N=N, M=3, P=4, q=2053, r="1/2", seed=9)
    fld = PrimeField(p.q)
    W = fld.random(rng, (p.M, p.P, p.ell))
    res = setup(p, W)
    inv = res.permutation.inverse()
    for theta in range(1, p.M + 1):
        noise = fld.random(rng, (p.ell, p.M))
        answers = np.array([[db.answer_read(query_vector(fld, p.M, theta, p.f, db.alpha, noise), inv(s))
                             for s in range(1, p.P + 1)] for db in res.databases])
        np.testing.assert_array_equal(decode_answers(fld, p.f, p.alpha, answers).T, W[theta - 1])


def test_setup_rejects_bad_shape(example_params):
    with pytest.raises(ValueError):
        setup(example_params, np.zeros((1, 5, 1)))


def test_setup_deterministic_and_sabotage(example_params):
    a, b = setup(example_params), setup(example_params)
    assert a.permutation == b.permutation
    for x, y in zip(a.databases, b.databases):
        assert np.array_equal(x.storage, y.storage)
        assert np.array_equal(x.reversing_matrix, y.reversing_matrix)
    ident = setup(example_params, sabotage=Sabotage.IDENTITY_PERMUTATION)
    assert ident.permutation == Permutation.identity(5)
    zero = setup(example_params, permutation=WALKTHROUGH_PERM, sabotage=Sabotage.ZERO_NOISE)
    assert all(np.array_equal(db.reversing_matrix, WALKTHROUGH_R) for db in zero.databases)


def test_dump_setup_withholds_permutation(tmp_path, example_params):
    res = setup(example_params)
    path = tmp_path / "setup.json"
    dump_setup(res.databases, path)
    data = json.loads(path.read_text())
    assert len(data) == 6
    assert set(data[0]) == {"n", "alpha", "reversing_matrix", "storage"}
