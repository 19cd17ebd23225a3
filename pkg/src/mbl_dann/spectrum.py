"""Full diagonalization, energy-density selection and level statistics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    CapacityError,
    DegenerateSpectrumError,
    InsufficientLevelsError,
    InvalidArgumentError,
)
from .spin_chain import SparseHamiltonian

DEFAULT_MAX_DIM = 3432  # binomial(14, 7)

# mean adjacent gap ratio for Wigner-Dyson (GOE) and Poisson level statistics
R_WIGNER_DYSON = 0.53
R_POISSON = 0.38
R_POISSON_EXACT = 2 * np.log(2) - 1

DEFAULT_WINDOW_HALF_WIDTH = 0.05


@dataclass(frozen=True)
class SpectrumResult:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray  # column k pairs with eigenvalues[k]

    @property
    def e_min(self) -> float:
        return float(self.eigenvalues[0])

    @property
    def e_max(self) -> float:
        return float(self.eigenvalues[-1])

    @property
    def dim(self) -> int:
        return len(self.eigenvalues)

    def normalized(self) -> np.ndarray:
        """Normalized energy of every eigenvalue."""
        width = self.e_max - self.e_min
        if not width > 0:
            raise DegenerateSpectrumError("spectrum has e_min == e_max")
        return (self.eigenvalues - self.e_min) / width


@dataclass(frozen=True)
class GapRatioStat:
    r_mean: float
    n_gaps: int
    window: tuple[float, float]
    n_ratios: int = 0
    n_skipped: int = 0


def diagonalize(hamiltonian, max_dim: int = DEFAULT_MAX_DIM) -> SpectrumResult:
    """Dense eigendecomposition of a real symmetric matrix.

    Accepts a :class:`SparseHamiltonian` or a square array. Eigenvalues come
    back ascending; eigenvector signs are whatever LAPACK returns.
    """
    if isinstance(hamiltonian, SparseHamiltonian):
        if hamiltonian.dim > max_dim:
            raise CapacityError(f"dimension {hamiltonian.dim} exceeds cap {max_dim}")
        m = hamiltonian.to_dense()
    else:
        m = np.asarray(hamiltonian, dtype=float)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise InvalidArgumentError(f"expected a square matrix, got shape {m.shape}")
        if m.shape[0] > max_dim:
            raise CapacityError(f"dimension {m.shape[0]} exceeds cap {max_dim}")
    if not np.array_equal(m, m.T):
        raise InvalidArgumentError("matrix is not symmetric")
    w, v = np.linalg.eigh(m)
    return SpectrumResult(w, v)


def normalized_energy(e: float, e_min: float, e_max: float) -> float:
    if not e_max > e_min:
        raise DegenerateSpectrumError(f"e_min={e_min} is not below e_max={e_max}")
    return (e - e_min) / (e_max - e_min)


def select_states(spec: SpectrumResult, eps_target: float, k: int = 50):
    """The ``k`` eigenpairs whose normalized energy is closest to ``eps_target``.

    Returns a list of ``(energy, eigenvector, eps)`` ordered by distance to
    the target, ties going to the lower eigenvalue index.
    """
    if not 0 <= eps_target <= 1:
        raise InvalidArgumentError(f"eps_target must lie in [0, 1], got {eps_target}")
    if not 1 <= k <= spec.dim:
        raise InvalidArgumentError(f"k={k} outside [1, {spec.dim}]")
    eps = spec.normalized()
    order = np.argsort(np.abs(eps - eps_target), kind="stable")[:k]
    return [(float(spec.eigenvalues[i]), spec.eigenvectors[:, i], float(eps[i])) for i in order]


def select_indices(spec: SpectrumResult, eps_target: float, k: int = 50) -> np.ndarray:
    if not 1 <= k <= spec.dim:
        raise InvalidArgumentError(f"k={k} outside [1, {spec.dim}]")
    return np.argsort(np.abs(spec.normalized() - eps_target), kind="stable")[:k]


def adjacent_gap_ratio(levels) -> tuple[float, int, int]:
    """Mean of min(d_n, d_{n+1}) / max(d_n, d_{n+1}) over consecutive spacings.

    Returns ``(r_mean, n_ratios, n_skipped)``; pairs with both spacings zero
    are skipped and counted.
    """
    levels = np.sort(np.asarray(levels, dtype=float))
    if levels.size < 3:
        raise InsufficientLevelsError(f"need at least 3 levels, got {levels.size}")
    gaps = np.diff(levels)
    lo = np.minimum(gaps[:-1], gaps[1:])
    hi = np.maximum(gaps[:-1], gaps[1:])
    ok = hi > 0
    n_ok = int(ok.sum())
    if n_ok == 0:
        raise InsufficientLevelsError("all spacings in the window are zero")
    return float(np.mean(lo[ok] / hi[ok])), n_ok, int((~ok).sum())


def energy_window(eps_target: float, half_width: float = DEFAULT_WINDOW_HALF_WIDTH):
    return (eps_target - half_width, eps_target + half_width)


def gap_ratio(spec: SpectrumResult, window: tuple[float, float]) -> GapRatioStat:
    lo, hi = window
    eps = spec.normalized()
    levels = spec.eigenvalues[(eps >= lo) & (eps <= hi)]
    if levels.size < 3:
        raise InsufficientLevelsError(
            f"window ({lo}, {hi}) holds {levels.size} levels, need at least 3"
        )
    r, n_ratios, n_skipped = adjacent_gap_ratio(levels)
    return GapRatioStat(r, levels.size - 1, (lo, hi), n_ratios, n_skipped)
