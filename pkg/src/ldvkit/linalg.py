"""Small dense linear-algebra helpers for measurement matrices."""

from __future__ import annotations

import numpy as np

PIVOT_TOL = 1e-9


class RowBasis:
    """Incrementally maintained row-echelon basis (Gaussian elimination).

    ``add(row)`` reduces the row against the current basis and keeps it only
    if a pivot larger than ``tol`` survives, so ``rank`` is the rank of every
    row offered so far.
    """

    def __init__(self, ncols: int, tol: float = PIVOT_TOL):
        self.ncols = ncols
        self.tol = tol
        self._rows: list[np.ndarray] = []
        self._pivots: list[int] = []

    @property
    def rank(self) -> int:
        return len(self._rows)

    def reduce(self, row) -> np.ndarray:
        r = np.asarray(row, dtype=float).copy()
        for b, p in zip(self._rows, self._pivots):
            if r[p] != 0.0:
                r -= r[p] * b
        return r

    def increases_rank(self, row) -> bool:
        r = self.reduce(row)
        return bool(np.max(np.abs(r), initial=0.0) > self.tol)

    def add(self, row) -> bool:
        r = self.reduce(row)
        if r.size == 0:
            return False
        p = int(np.argmax(np.abs(r)))
        if abs(r[p]) <= self.tol:
            return False
        r /= r[p]
        # keep the basis fully reduced so later reductions stay single-pass
        for k, b in enumerate(self._rows):
            if b[p] != 0.0:
                self._rows[k] = b - b[p] * r
        self._rows.append(r)
        self._pivots.append(p)
        return True


def gaussian_rank(matrix, tol: float = PIVOT_TOL) -> int:
    m = np.atleast_2d(np.asarray(matrix, dtype=float))
    if m.size == 0:
        return 0
    basis = RowBasis(m.shape[1], tol)
    for row in m:
        basis.add(row)
    return basis.rank
