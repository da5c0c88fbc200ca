"""Linear measurement operators ``Z -> (<A_1, Z>, ..., <A_n, Z>)``.

Every interpolation step in the package needs the same three things from a
measurement operator: forward application, its adjoint, and the Gram matrix of
the filtered sensing matrices ``A_i F``.  Matrix completion gets a sparse
implementation; generic sensing stores the dense stack of ``A_i``.
"""

import numpy as np


class CompletionOperator:
    """Entry sampling ``Z -> Z[rows, cols]``."""

    def __init__(self, rows, cols, shape):
        self.rows = np.asarray(rows, dtype=np.intp)
        self.cols = np.asarray(cols, dtype=np.intp)
        self.shape = tuple(shape)
        self._same_row = None

    @property
    def n(self):
        return self.rows.size

    def apply(self, Z):
        return np.asarray(Z)[self.rows, self.cols]

    def adjoint(self, lam):
        out = np.zeros(self.shape)
        np.add.at(out, (self.rows, self.cols), lam)
        return out

    def filtered_gram(self, FFt):
        """``G_ij = <A_i F, A_j F>`` given ``FFt = F F^T``."""
        if self._same_row is None:
            self._same_row = self.rows[:, None] == self.rows[None, :]
        return np.where(self._same_row, FFt[self.cols[:, None], self.cols[None, :]], 0.0)


class DenseSensingOperator:
    """Generic sensing with an explicit ``(n, d1, d2)`` stack of matrices."""

    def __init__(self, matrices):
        self.matrices = np.asarray(matrices, dtype=float)
        if self.matrices.ndim != 3:
            raise ValueError("sensing matrices must have shape (n, d1, d2)")
        self.shape = self.matrices.shape[1:]
        self._flat = self.matrices.reshape(self.matrices.shape[0], -1)

    @property
    def n(self):
        return self.matrices.shape[0]

    def apply(self, Z):
        return self._flat @ np.asarray(Z, dtype=float).ravel()

    def adjoint(self, lam):
        return (np.asarray(lam, dtype=float) @ self._flat).reshape(self.shape)

    def filtered_gram(self, FFt):
        C = (self.matrices @ FFt).reshape(self.n, -1)
        return self._flat @ C.T
