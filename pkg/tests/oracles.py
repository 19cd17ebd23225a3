"""Independent reference computations used only by the tests."""

from __future__ import annotations

import numpy as np


def full_space_hamiltonian(fields, periodic=True):
    """Dense 2^N x 2^N chain Hamiltonian built from Pauli tensor products.

    Full-space index bit ``i`` is site ``i``; local ordering is (down, up).
    """
    fields = np.asarray(fields, dtype=float)
    n = fields.size
    sx = np.array([[0, 1], [1, 0]], dtype=complex)
    sy = np.array([[0, 1j], [-1j, 0]], dtype=complex)
    sz = np.array([[-1, 0], [0, 1]], dtype=complex)

    def site_op(op, i):
        out = np.ones((1, 1), dtype=complex)
        for site in reversed(range(n)):
            out = np.kron(out, op if site == i else np.eye(2))
        return out

    ops = {a: [site_op(m, i) for i in range(n)] for a, m in (("x", sx), ("y", sy), ("z", sz))}
    pairs = [(i, i + 1) for i in range(n - 1)]
    if periodic:
        pairs.append((n - 1, 0))
    h = np.zeros((1 << n, 1 << n), dtype=complex)
    for i, j in pairs:
        for a in "xyz":
            h += 0.5 * ops[a][i] @ ops[a][j]
    for i in range(n):
        h -= fields[i] * ops["z"][i]
    assert np.allclose(h.imag, 0)
    return h.real


def sz0_indices(n):
    return np.array([m for m in range(1 << n) if bin(m).count("1") == n // 2])


def numerical_grad(f, x, eps=1e-6):
    """Central finite differences of scalar ``f`` with respect to array ``x`` (in place)."""
    g = np.zeros_like(x, dtype=float)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + eps
        fp = f()
        x[i] = old - eps
        fm = f()
        x[i] = old
        g[i] = (fp - fm) / (2 * eps)
    return g


def rel_error(a, b):
    a, b = np.asarray(a, float), np.asarray(b, float)
    return np.max(np.abs(a - b)) / max(np.max(np.abs(a)), np.max(np.abs(b)), 1e-12)
