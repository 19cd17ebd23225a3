"""Zero-magnetization sector of the random-field spin-1/2 Heisenberg chain.

The Hamiltonian is

    H = 1/2 sum_i sigma_i . sigma_{i+1} - sum_i h_i sigma^z_i

with Pauli matrices and fields h_i uniform in [-h, h]. Basis states are
integer bit masks: bit ``i`` set means the spin on site ``i`` points up.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import comb

import numpy as np
from scipy import sparse

from .errors import InvalidArgumentError

PERIODIC = "periodic"
OPEN = "open"
BOUNDARIES = (PERIODIC, OPEN)

MAX_SITES = 16


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class SpinBasis:
    n_sites: int
    states: np.ndarray  # int64 masks, strictly increasing

    @property
    def dim(self) -> int:
        return len(self.states)

    def index_of(self, mask: int) -> int:
        k = int(np.searchsorted(self.states, mask))
        if k >= self.dim or self.states[k] != mask:
            raise KeyError(mask)
        return k

    def indices(self, masks: np.ndarray) -> np.ndarray:
        """Vectorized :meth:`index_of`; masks must belong to the basis."""
        return np.searchsorted(self.states, masks)


@dataclass(frozen=True)
class DisorderRealization:
    strength: float
    fields: np.ndarray
    seed: int


@dataclass(frozen=True)
class SparseHamiltonian:
    """Coordinate-list matrix sorted by (row, col) with no duplicate entries."""

    dim: int
    rows: np.ndarray
    cols: np.ndarray
    values: np.ndarray
    boundary: str = PERIODIC

    @property
    def entries(self):
        return list(zip(self.rows.tolist(), self.cols.tolist(), self.values.tolist()))

    def to_dense(self) -> np.ndarray:
        m = np.zeros((self.dim, self.dim))
        m[self.rows, self.cols] = self.values
        return m

    def to_csr(self) -> sparse.csr_matrix:
        return sparse.csr_matrix((self.values, (self.rows, self.cols)), shape=(self.dim, self.dim))

    def diagonal(self) -> np.ndarray:
        on = self.rows == self.cols
        d = np.zeros(self.dim)
        d[self.rows[on]] = self.values[on]
        return d


def enumerate_basis(n_sites: int, max_sites: int = MAX_SITES) -> SpinBasis:
    if (
        not isinstance(n_sites, (int, np.integer))
        or n_sites % 2
        or not 2 <= n_sites <= max_sites
    ):
        raise InvalidArgumentError(
            f"n_sites must be an even integer in [2, {max_sites}], got {n_sites!r}"
        )
    n_sites = int(n_sites)
    masks = np.arange(1 << n_sites, dtype=np.int64)
    popcount = np.zeros_like(masks)
    for i in range(n_sites):
        popcount += (masks >> i) & 1
    states = masks[popcount == n_sites // 2]
    assert len(states) == comb(n_sites, n_sites // 2)
    return SpinBasis(n_sites, _frozen(states))


def realization_rng(seed: int) -> np.random.Generator:
    """Counter-based generator keyed by a 64-bit seed."""
    return np.random.Generator(np.random.Philox(key=int(seed) & 0xFFFFFFFFFFFFFFFF))


def derive_seed(master_seed: int, *key: int) -> int:
    """Position-derived 64-bit seed; any (master_seed, key) pair is regenerable alone."""
    ss = np.random.SeedSequence(entropy=int(master_seed), spawn_key=tuple(int(k) for k in key))
    lo, hi = ss.generate_state(2, dtype=np.uint32)
    return (int(hi) << 32) | int(lo)


def sample_disorder(h: float, n_sites: int, seed: int) -> DisorderRealization:
    if not h >= 0:
        raise InvalidArgumentError(f"disorder strength must be >= 0, got {h!r}")
    if n_sites < 1:
        raise InvalidArgumentError(f"n_sites must be positive, got {n_sites!r}")
    u = realization_rng(seed).random(n_sites)
    # u in [0, 1) so |fields| <= h; +0.0 normalizes -0.0 at h = 0
    fields = h * (2.0 * u - 1.0) + 0.0
    return DisorderRealization(float(h), _frozen(fields), int(seed))


def bonds(n_sites: int, boundary: str = PERIODIC) -> list[tuple[int, int]]:
    if boundary not in BOUNDARIES:
        raise InvalidArgumentError(f"boundary must be one of {BOUNDARIES}, got {boundary!r}")
    last = n_sites if boundary == PERIODIC else n_sites - 1
    return [(i, (i + 1) % n_sites) for i in range(last)]


def build_hamiltonian(
    basis: SpinBasis, disorder: DisorderRealization, boundary: str = PERIODIC
) -> SparseHamiltonian:
    n = basis.n_sites
    fields = np.asarray(disorder.fields, dtype=float)
    if fields.shape != (n,):
        raise InvalidArgumentError(
            f"disorder has {fields.size} fields but the basis has {n} sites"
        )
    states = basis.states
    spin = [2 * ((states >> i) & 1) - 1 for i in range(n)]

    diag = np.zeros(basis.dim)
    off_rows, off_cols = [], []
    for i, j in bonds(n, boundary):
        diag += 0.5 * spin[i] * spin[j]
        anti = np.nonzero(spin[i] != spin[j])[0]
        off_rows.append(anti)
        off_cols.append(basis.indices(states[anti] ^ ((1 << i) | (1 << j))))
    for i in range(n):
        diag -= fields[i] * spin[i]

    idx = np.arange(basis.dim)
    rows = np.concatenate([idx, *off_rows])
    cols = np.concatenate([idx, *off_cols])
    vals = np.concatenate([diag, np.ones(sum(len(r) for r in off_rows))])

    # coalesce: a two-site periodic chain visits the same bond twice
    coo = sparse.coo_matrix((vals, (rows, cols)), shape=(basis.dim, basis.dim))
    coo.sum_duplicates()
    order = np.lexsort((coo.col, coo.row))
    rows, cols, vals = coo.row[order], coo.col[order], coo.data[order]
    # keep explicit zeros on the diagonal so every diagonal entry is stored once
    missing = np.setdiff1d(idx, rows[rows == cols])
    if missing.size:
        rows = np.concatenate([rows, missing])
        cols = np.concatenate([cols, missing])
        vals = np.concatenate([vals, np.zeros(missing.size)])
        order = np.lexsort((cols, rows))
        rows, cols, vals = rows[order], cols[order], vals[order]
    return SparseHamiltonian(
        basis.dim,
        _frozen(rows.astype(np.int64)),
        _frozen(cols.astype(np.int64)),
        _frozen(vals.astype(float)),
        boundary,
    )

