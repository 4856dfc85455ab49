import json

import numpy as np
import pytest
import scipy.linalg as la
from hypothesis import given, settings
from hypothesis import strategies as st

from crackbif.lattice import (
    DIRECTIONS,
    Field,
    SiteIndex,
    build_domain,
    discrete_gradient,
    gram_apply,
    gram_matrix,
    h1_inner,
    is_crack_bond,
)

from oracles import crosses_cut, dense_gram, enumerate_ball


def positions(domain):
    return sorted(tuple(x) for x in (domain.labels - 0.5).tolist())


def test_domain_radius_2_has_twelve_sites():
    d = build_domain(2)
    assert d.n_sites == 12
    expected = sorted(
        [(sx * 0.5, sy * 0.5) for sx in (-1, 1) for sy in (-1, 1)]
        + [(sx * 1.5, sy * 0.5) for sx in (-1, 1) for sy in (-1, 1)]
        + [(sx * 0.5, sy * 1.5) for sx in (-1, 1) for sy in (-1, 1)]
    )
    assert positions(d) == expected


def test_ball_of_radius_1_5_has_four_sites():
    # build_domain rejects R < 2, so check the membership rule on its own
    assert [(l1 - 0.5, l2 - 0.5) for l1, l2 in enumerate_ball(1.5)] == [
        (-0.5, -0.5), (-0.5, 0.5), (0.5, -0.5), (0.5, 0.5)
    ]


def test_small_radius_rejected():
    with pytest.raises(ValueError):
        build_domain(1.5)


@pytest.mark.parametrize("R", [2, 3.5, 6, 10.2])
def test_domain_matches_enumeration(R):
    d = build_domain(R)
    assert [tuple(l) for l in d.labels.tolist()] == enumerate_ball(R)


@pytest.mark.parametrize("R,R2", [(2, 3), (4, 4.5), (6, 11)])
def test_domain_monotone(R, R2):
    small = set(build_domain(R).free_sites)
    big = set(build_domain(R2).free_sites)
    assert small <= big


def test_domain_ordering_lexicographic():
    d = build_domain(7)
    labels = [tuple(l) for l in d.labels.tolist()]
    assert labels == sorted(labels)
    assert d.index_of[SiteIndex(*labels[5])] == 5


def test_domain_summary_json():
    d = build_domain(2)
    payload = json.loads(d.summary_json())
    assert payload == {"R": 2.0, "n_sites": 12, "n_bonds_full": 48, "n_bonds_tilde": 44}
    assert len(d.bonds_full) == 48
    assert len(d.bonds_tilde) == 44


def test_crack_bond_examples():
    assert is_crack_bond(SiteIndex(0, 1), (0, -1))
    assert not is_crack_bond(SiteIndex(1, 1), (0, -1))
    assert not is_crack_bond(SiteIndex(0, 1), (1, 0))
    assert is_crack_bond((0, 0), (0, 1))
    with pytest.raises(ValueError):
        is_crack_bond((0, 0), (1, 1))


@pytest.mark.parametrize("R", [2, 4, 6])
def test_removed_bonds_are_symmetric(R):
    d = build_domain(R)
    for s in d.free_sites:
        removed = [rho for rho in DIRECTIONS if is_crack_bond(s, rho)]
        if s.in_gamma_plus or s.in_gamma_minus:
            assert len(removed) == 1
        else:
            assert removed == []
        for rho in removed:
            other = s.shift(rho)
            assert is_crack_bond(other, (-rho[0], -rho[1]))
        for rho in DIRECTIONS:
            assert is_crack_bond(s, rho) == crosses_cut((s.l1, s.l2), rho)


def test_gamma_membership_matches_half_integer_rule():
    for l1 in range(-4, 5):
        for l2 in range(-3, 4):
            s = SiteIndex(l1, l2)
            x1, x2 = s.x
            assert s.in_gamma_plus == (x1 < 0 and x2 == 0.5)
            assert s.in_gamma_minus == (x1 < 0 and x2 == -0.5)


def test_field_is_zero_outside():
    d = build_domain(3)
    f = Field(d, np.arange(d.n_sites, dtype=float) + 1)
    assert f((50, 50)) == 0.0
    assert f(d.free_sites[3]) == 4.0
    with pytest.raises(ValueError):
        Field(d, np.zeros(3))


def test_field_extension_roundtrip():
    small, big = build_domain(3), build_domain(6)
    f = Field(small, np.random.default_rng(0).standard_normal(small.n_sites))
    g = f.extend_to(big)
    for s in small.free_sites:
        assert g(s) == f(s)
    assert np.count_nonzero(g.values) == small.n_sites
    np.testing.assert_array_equal(g.extend_to(small).values, f.values)


def test_gradient_of_zero_field():
    d = build_domain(4)
    u = np.zeros(d.n_sites)
    for crack_aware in (True, False):
        np.testing.assert_array_equal(discrete_gradient(d, u, (0, 1), crack_aware), 0.0)


def test_gradient_of_indicator():
    d = build_domain(5)
    u = np.zeros(d.n_sites)
    u[d.index((2, 2))] = 0.7
    np.testing.assert_allclose(discrete_gradient(d, u, (2, 2)), -0.7 * np.ones(4))


def test_crack_aware_gradient_zeroes_cut_component():
    d = build_domain(5)
    u = np.zeros(d.n_sites)
    a, b = 1.3, -0.4
    u[d.index((0, 1))] = a
    u[d.index((0, 0))] = b
    full = discrete_gradient(d, u, (0, 1), crack_aware=False)
    cut = discrete_gradient(d, u, (0, 1), crack_aware=True)
    assert full[3] == pytest.approx(b - a)
    assert cut[3] == 0.0
    np.testing.assert_array_equal(full[:3], cut[:3])


@pytest.mark.parametrize("R", [3, 6])
def test_gradients_differ_only_on_crack_bonds(R):
    d = build_domain(R)
    u = np.random.default_rng(R).standard_normal(d.n_sites)
    for s in d.free_sites:
        full = discrete_gradient(d, u, s, False)
        cut = discrete_gradient(d, u, s, True)
        for r, rho in enumerate(DIRECTIONS):
            if is_crack_bond(s, rho):
                assert cut[r] == 0.0
            else:
                assert cut[r] == full[r]


def test_gradient_far_outside_is_zero():
    d = build_domain(3)
    u = np.ones(d.n_sites)
    np.testing.assert_array_equal(discrete_gradient(d, u, (40, 40)), 0.0)


def test_h1_inner_of_indicator_is_eight():
    d = build_domain(6)
    u = np.zeros(d.n_sites)
    u[d.index((3, 3))] = 1.0
    assert h1_inner(d, u, u) == pytest.approx(8.0)


def test_h1_inner_definite():
    d = build_domain(4)
    assert h1_inner(d, np.zeros(d.n_sites), np.zeros(d.n_sites)) == 0.0
    u = np.zeros(d.n_sites)
    u[0] = 1e-3
    assert h1_inner(d, u, u) > 0


@settings(max_examples=25, deadline=None)
@given(st.integers(min_value=0, max_value=2**32 - 1))
def test_h1_inner_symmetric(seed):
    d = build_domain(5)
    rng = np.random.default_rng(seed)
    u, v = rng.standard_normal((2, d.n_sites))
    assert h1_inner(d, u, v) == pytest.approx(h1_inner(d, v, u), rel=1e-14, abs=1e-13)


def test_gram_matches_dense_oracle():
    d = build_domain(4)
    G = gram_matrix(d).toarray()
    np.testing.assert_allclose(G, dense_gram(d), atol=1e-14)
    rng = np.random.default_rng(3)
    for _ in range(5):
        u, v = rng.standard_normal((2, d.n_sites))
        lhs = gram_apply(d, u) @ v
        assert lhs == pytest.approx(h1_inner(d, u, v), rel=1e-12)


def test_gram_zero_and_positive_definite():
    d = build_domain(4)
    np.testing.assert_array_equal(gram_apply(d, np.zeros(d.n_sites)), 0.0)
    ev = la.eigvalsh(dense_gram(d))
    assert ev[0] > 0


@pytest.mark.parametrize("R", [2, 4, 6])
def test_gram_cholesky(R):
    la.cholesky(gram_matrix(build_domain(R)).toarray())


def test_gram_is_twice_crack_aware_laplacian():
    d = build_domain(4)
    G = gram_matrix(d).toarray()
    # diagonal: 2 x (number of crack-aware bonds at the site)
    for i, s in enumerate(d.free_sites):
        n_bonds = sum(not is_crack_bond(s, rho) for rho in DIRECTIONS)
        assert G[i, i] == 2 * n_bonds
