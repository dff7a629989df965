import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hymlab.forms import FormField, MixedForm, insert_index, merge_indices


def perm_sign(seq):
    sign = 1
    seq = list(seq)
    for i in range(len(seq)):
        for j in range(i + 1, len(seq)):
            if seq[i] > seq[j]:
                sign = -sign
    return sign


@given(st.lists(st.integers(0, 5), min_size=0, max_size=3, unique=True),
       st.lists(st.integers(0, 5), min_size=0, max_size=3, unique=True))
@settings(max_examples=200, deadline=None)
def test_merge_indices_matches_permutation_sign(a, b):
    a = tuple(sorted(a))
    b = tuple(sorted(b))
    res = merge_indices(a, b)
    if set(a) & set(b):
        assert res is None
        return
    merged, sign = res
    assert merged == tuple(sorted(a + b))
    assert sign == perm_sign(a + b)


def test_insert_index():
    assert insert_index(1, (0, 2)) == ((0, 1, 2), -1)
    assert insert_index(0, (1, 2)) == ((0, 1, 2), 1)
    assert insert_index(1, (1, 2)) is None


def rand_form(rng, n, p, q, shape=(2, 2)):
    comps = {}
    for J in itertools.combinations(range(n), p):
        for K in itertools.combinations(range(n), q):
            comps[(J, K)] = rng.normal(size=shape) + 1j * rng.normal(size=shape)
    return FormField(n, p, q, comps, grid_ndim=len(shape))


@pytest.mark.parametrize("pq1,pq2", [((1, 0), (0, 1)), ((1, 1), (1, 1)),
                                     ((2, 0), (0, 1)), ((1, 0), (1, 1))])
def test_wedge_graded_commutativity(pq1, pq2):
    rng = np.random.default_rng(0)
    a = rand_form(rng, 3, *pq1)
    b = rand_form(rng, 3, *pq2)
    ab = a.wedge(b)
    ba = b.wedge(a)
    sign = (-1) ** ((pq1[0] + pq1[1]) * (pq2[0] + pq2[1]))
    for key, v in ab.comps.items():
        assert np.allclose(v, sign * ba.comps[key])


def test_wedge_associativity():
    rng = np.random.default_rng(1)
    a = rand_form(rng, 3, 1, 0)
    b = rand_form(rng, 3, 0, 1)
    c = rand_form(rng, 3, 1, 1)
    lhs = a.wedge(b).wedge(c)
    rhs = a.wedge(b.wedge(c))
    for key in lhs.comps:
        assert np.allclose(lhs.comps[key], rhs.comps[key])


def test_conj_involution_and_degree_swap():
    rng = np.random.default_rng(2)
    a = rand_form(rng, 2, 1, 0)
    c = a.conj()
    assert (c.p, c.q) == (0, 1)
    cc = c.conj()
    for key in a.comps:
        assert np.allclose(cc.comps[key], a.comps[key])


def test_endo_wedge_uses_matrix_product():
    # matrix-valued one-forms: (a dz) ^ (b dzbar) keeps the a@b ordering
    rng = np.random.default_rng(3)
    A = rng.normal(size=(2, 2, 4, 4))
    B = rng.normal(size=(2, 2, 4, 4))
    fa = FormField(2, 1, 0, {((0,), ()): A}, grid_ndim=2)
    fb = FormField(2, 0, 1, {((), (0,)): B}, grid_ndim=2)
    w = fa.wedge(fb)
    got = w.comps[((0,), (0,))]
    want = np.einsum("ab...,bc...->ac...", A, B)
    assert np.allclose(got, want)


def test_trace_and_sup():
    rng = np.random.default_rng(4)
    A = rng.normal(size=(2, 2, 4, 4))
    f = FormField(2, 1, 1, {((0,), (1,)): A}, grid_ndim=2)
    tr = f.trace()
    assert np.allclose(tr.comps[((0,), (1,))], A[0, 0] + A[1, 1])
    assert f.sup() == pytest.approx(np.max(np.abs(A)))


def test_mixed_form_accumulates_by_bidegree():
    rng = np.random.default_rng(5)
    a = rand_form(rng, 2, 1, 0, shape=())
    m = MixedForm([a, a])
    assert set(m.parts) == {(1, 0)}
    for key in a.comps:
        assert np.allclose(m.parts[(1, 0)].comps[key], 2 * a.comps[key])
