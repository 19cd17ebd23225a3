from math import comb

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mbl_dann.errors import InvalidArgumentError
from mbl_dann.spin_chain import (
    OPEN,
    PERIODIC,
    build_hamiltonian,
    derive_seed,
    enumerate_basis,
    sample_disorder,
)
from oracles import full_space_hamiltonian, sz0_indices


@pytest.mark.parametrize("n,dim", [(2, 2), (4, 6), (12, 924)])
def test_basis_dimension(n, dim):
    assert enumerate_basis(n).dim == dim


def test_basis_n2_states():
    assert enumerate_basis(2).states.tolist() == [0b01, 0b10]


@pytest.mark.parametrize("n", [2, 4, 6, 8, 10])
def test_basis_invariants(n):
    basis = enumerate_basis(n)
    assert basis.dim == comb(n, n // 2)
    assert all(bin(int(s)).count("1") == n // 2 for s in basis.states)
    assert np.all(np.diff(basis.states) > 0)
    for k, s in enumerate(basis.states):
        assert basis.index_of(int(s)) == k
    np.testing.assert_array_equal(basis.indices(basis.states), np.arange(basis.dim))


@pytest.mark.parametrize("n", [0, 3, -2, 18, 2.0, "4"])
def test_basis_rejects_bad_sizes(n):
    with pytest.raises(InvalidArgumentError):
        enumerate_basis(n)


def test_index_of_unknown_mask():
    with pytest.raises(KeyError):
        enumerate_basis(4).index_of(0b0111)


def test_zero_disorder_is_exactly_zero():
    for seed in (0, 1, 2**64 - 1):
        d = sample_disorder(0.0, 8, seed)
        assert np.all(d.fields == 0.0)
        assert not np.any(np.signbit(d.fields))


def test_disorder_is_deterministic():
    a = sample_disorder(1.0, 12, 7)
    b = sample_disorder(1.0, 12, 7)
    np.testing.assert_array_equal(a.fields, b.fields)
    assert not np.array_equal(a.fields, sample_disorder(1.0, 12, 8).fields)


def test_disorder_moments():
    # 10^5 draws pooled from many seeds
    draws = np.concatenate([sample_disorder(2.0, 100, s).fields for s in range(1000)])
    assert draws.size == 100_000
    assert abs(draws.mean()) < 0.02
    assert abs(draws.var(ddof=1) - 4 / 3) < 0.05
    assert np.all(np.abs(draws) <= 2.0)


def test_negative_disorder_rejected():
    with pytest.raises(InvalidArgumentError):
        sample_disorder(-0.1, 4, 0)


def test_derive_seed_distinct_keys():
    seeds = {derive_seed(1, a, b, c) for a in range(3) for b in range(5) for c in range(5)}
    assert len(seeds) == 75
    assert derive_seed(1, 0, 1, 2) == derive_seed(1, 0, 1, 2)
    assert 0 <= derive_seed(2**64 - 1, 4) < 2**64


def _dense(n, fields, boundary):
    basis = enumerate_basis(n)
    d = sample_disorder(0.0, n, 0)
    d = type(d)(d.strength, np.asarray(fields, float), d.seed)
    return build_hamiltonian(basis, d, boundary).to_dense()


def test_two_site_open_block():
    m = _dense(2, [0.0, 0.0], OPEN)
    np.testing.assert_array_equal(m, [[-0.5, 1.0], [1.0, -0.5]])
    assert np.trace(m) == -1.0
    np.testing.assert_allclose(np.linalg.eigvalsh(m), [-1.5, 0.5], atol=1e-14)


def test_four_site_ground_state_matches_full_space():
    sector = _dense(4, np.zeros(4), PERIODIC)
    full = full_space_hamiltonian(np.zeros(4), periodic=True)
    idx = sz0_indices(4)
    assert np.linalg.eigvalsh(sector)[0] == pytest.approx(np.linalg.eigvalsh(full[np.ix_(idx, idx)])[0],
                                                         abs=1e-12)
    # sum of S.S on the 4-site ring bottoms out at -2; Pauli matrices double the S
    assert np.linalg.eigvalsh(sector)[0] == pytest.approx(-4.0)


@pytest.mark.parametrize("n", [2, 4, 6])
@pytest.mark.parametrize("boundary", [PERIODIC, OPEN])
def test_matches_pauli_oracle(n, boundary):
    rng = np.random.default_rng(n)
    for _ in range(3):
        fields = rng.uniform(-3, 3, n)
        sector = _dense(n, fields, boundary)
        full = full_space_hamiltonian(fields, periodic=boundary == PERIODIC)
        idx = sz0_indices(n)
        np.testing.assert_allclose(sector, full[np.ix_(idx, idx)], atol=1e-13, rtol=0)


@settings(max_examples=25, deadline=None)
@given(n=st.sampled_from([4, 6, 8]), h=st.floats(0, 10), seed=st.integers(0, 2**64 - 1),
       boundary=st.sampled_from([PERIODIC, OPEN]))
def test_sparse_structure(n, h, seed, boundary):
    basis = enumerate_basis(n)
    ham = build_hamiltonian(basis, sample_disorder(h, n, seed), boundary)
    entries = {(int(r), int(c)): v for r, c, v in ham.entries}
    assert len(entries) == len(ham.values)  # no duplicates
    for (r, c), v in entries.items():
        if r != c:
            assert entries[(c, r)] == v
            assert bin(int(basis.states[r])).count("1") == bin(int(basis.states[c])).count("1")
    assert all((i, i) in entries for i in range(basis.dim))
    np.testing.assert_array_equal(ham.to_csr().toarray(), ham.to_dense())


def test_field_count_mismatch():
    with pytest.raises(InvalidArgumentError):
        build_hamiltonian(enumerate_basis(4), sample_disorder(1.0, 6, 0))
