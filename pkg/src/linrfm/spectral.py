"""Dense symmetric linear algebra used by every solver.

Spectral functions act on symmetric matrices through their eigenvalues:
``phi(A) = V diag(phi(lambda)) V^T``.  The three families used throughout the
package are :class:`Power` (``lambda -> (lambda + eps)**alpha``), :class:`Identity`
and :class:`HalfIntegerPower` (``lambda -> lambda**(k/2)``).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, NamedTuple, Union

import numpy as np
import scipy.linalg

from .exceptions import NonPsdInput, NumericFailure, SingularSystem

#: Relative threshold below which negative eigenvalues are treated as rounding noise.
PSD_CLAMP_RTOL = 1e-10
#: Relative pivot tolerance for unregularized Gram solves.
PIVOT_RTOL = 1e-14


@dataclass(frozen=True)
class Power:
    """``lambda -> (lambda + epsilon) ** alpha``."""

    alpha: float
    epsilon: float = 0.0

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError(f"alpha must be > 0, got {self.alpha}")
        if self.epsilon < 0:
            raise ValueError(f"epsilon must be >= 0, got {self.epsilon}")

    def __call__(self, lam):
        return np.power(np.asarray(lam, dtype=float) + self.epsilon, self.alpha)

    @property
    def strictly_positive(self):
        return self.epsilon > 0


@dataclass(frozen=True)
class Identity:
    alpha = 1.0
    epsilon = 0.0
    strictly_positive = False

    def __call__(self, lam):
        return np.asarray(lam, dtype=float)


@dataclass(frozen=True)
class HalfIntegerPower:
    """``lambda -> lambda ** (k / 2)``; the SVD-free solver handles exactly this family."""

    k: int

    def __post_init__(self):
        if int(self.k) != self.k or self.k < 1:
            raise ValueError(f"k must be a positive integer, got {self.k}")

    @property
    def alpha(self):
        return self.k / 2

    epsilon = 0.0
    strictly_positive = False

    def __call__(self, lam):
        return np.power(np.asarray(lam, dtype=float), self.k / 2)


SpectralFunction = Union[Power, Identity, HalfIntegerPower]
ScalarMap = Union[SpectralFunction, Callable[[np.ndarray], np.ndarray]]


class EigenDecomposition(NamedTuple):
    values: np.ndarray  # descending
    vectors: np.ndarray  # orthonormal columns

    def reconstruct(self):
        return (self.vectors * self.values) @ self.vectors.T


def symmetrize(A):
    A = np.asarray(A, dtype=float)
    return 0.5 * (A + A.T)


def eigh_desc(A) -> EigenDecomposition:
    """Eigendecomposition of the symmetric part of ``A``, eigenvalues descending."""
    try:
        lam, V = np.linalg.eigh(symmetrize(A))
    except np.linalg.LinAlgError as exc:
        raise NumericFailure(str(exc)) from exc
    return EigenDecomposition(lam[::-1].copy(), V[:, ::-1].copy())


def clamp_psd(lam):
    """Zero out rounding-level negative eigenvalues; raise on genuinely negative ones."""
    lam = np.asarray(lam, dtype=float)
    if lam.size == 0:
        return lam
    scale = np.max(np.abs(lam))
    threshold = PSD_CLAMP_RTOL * scale
    if lam.min() < -threshold:
        raise NonPsdInput(f"eigenvalue {lam.min():.3e} below -{threshold:.3e}")
    return np.maximum(lam, 0.0)


def apply_to_eig(eig: EigenDecomposition, phi: ScalarMap, check_psd=True):
    lam = clamp_psd(eig.values) if check_psd else eig.values
    mapped = np.asarray(phi(lam), dtype=float)
    if not np.all(np.isfinite(mapped)):
        raise NumericFailure("spectral map produced non-finite values")
    V = eig.vectors
    return symmetrize((V * mapped) @ V.T)


def spectral_apply(A, phi: ScalarMap, check_psd=True):
    """Return ``V diag(phi(lambda)) V^T`` for symmetric ``A``.

    Eigenvalues in ``[-1e-10 ||A||_2, 0)`` are clamped to zero before ``phi`` is
    applied; anything more negative raises :class:`NonPsdInput` unless
    ``check_psd`` is False.
    """
    return apply_to_eig(eigh_desc(A), phi, check_psd=check_psd)


def integer_matrix_power(A, k):
    """``A**k`` by repeated squaring (no eigendecomposition)."""
    k = int(k)
    if k < 1:
        raise ValueError("k must be >= 1")
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"square matrix required, got shape {A.shape}")
    result = None
    base = A
    while k:
        if k & 1:
            result = base if result is None else result @ base
        k >>= 1
        if k:
            base = base @ base
    return symmetrize(result) if np.allclose(A, A.T) else result


def solve_psd_gram(G, b, ridge=0.0):
    """Solve ``(G + ridge I) x = b`` for a PSD Gram matrix ``G``.

    With ``ridge == 0`` the system must be nonsingular: any eigenvalue below
    ``1e-14 * ||G||_2`` raises :class:`SingularSystem`.
    """
    G = symmetrize(G)
    b = np.asarray(b, dtype=float)
    n = G.shape[0]
    if n == 0:
        return np.zeros_like(b)
    if ridge > 0:
        try:
            cf = scipy.linalg.cho_factor(G + ridge * np.eye(n), check_finite=False)
            return scipy.linalg.cho_solve(cf, b, check_finite=False)
        except (np.linalg.LinAlgError, scipy.linalg.LinAlgError):
            return np.linalg.lstsq(G + ridge * np.eye(n), b, rcond=None)[0]
    eig = eigh_desc(G)
    lam = eig.values
    if lam[0] <= 0 or lam[-1] < PIVOT_RTOL * lam[0]:
        raise SingularSystem(
            f"Gram system singular (min eigenvalue {lam[-1]:.3e}, max {lam[0]:.3e}); use ridge > 0"
        )
    V = eig.vectors
    return V @ ((V.T @ b) / lam[:, None] if b.ndim == 2 else (V.T @ b) / lam)


def pseudo_inverse_solve(A, b, ridge=0.0):
    """Minimum-norm (``ridge == 0``) or ridge least-squares solution of ``A x = b``."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    b = np.atleast_1d(np.asarray(b, dtype=float))
    n, d = A.shape
    if ridge < 0:
        raise ValueError("ridge must be >= 0")
    if n <= d:
        z = solve_psd_gram(A @ A.T, b, ridge)
        return A.T @ z
    if ridge > 0:
        return solve_psd_gram(A.T @ A, A.T @ b, ridge)
    return np.linalg.lstsq(A, b, rcond=None)[0]


def singular_values(A):
    """Singular values in descending order.

    Computed with LAPACK's SVD rather than through the Gram matrix, which keeps
    tiny singular values accurate instead of ``sqrt(machine eps)``-accurate.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if A.size == 0:
        return np.zeros(0)
    try:
        return np.linalg.svd(A, compute_uv=False)
    except np.linalg.LinAlgError as exc:
        raise NumericFailure(str(exc)) from exc
