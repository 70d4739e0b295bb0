"""Dense complex linear-algebra kernels shared by the transceiver designs.

All tolerances are relative to the Frobenius norm unless the matrix is zero,
in which case they are absolute.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import InvalidInputError

HERMITIAN_RTOL = 1e-10
# Slightly negative eigenvalues of a numerically PSD matrix are floored to
# zero when they exceed -1e-10 * max(largest eigenvalue, 1).
PSD_CLIP = 1e-10


def herm(a):
    """Conjugate transpose."""
    return np.asarray(a).conj().T


def as_matrix(a, name="matrix"):
    """Validate a 2-D finite array and return it as a complex ndarray."""
    a = np.asarray(a, dtype=complex)
    if a.ndim != 2:
        raise InvalidInputError(f"{name} must be 2-D, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise InvalidInputError(f"{name} contains NaN or Inf entries")
    return a


def check_hermitian(a, rtol=HERMITIAN_RTOL, name="matrix"):
    """Return the Hermitian part of `a`, rejecting inputs that are not
    Hermitian within `rtol` (Frobenius-relative)."""
    a = as_matrix(a, name)
    if a.shape[0] != a.shape[1]:
        raise InvalidInputError(f"{name} must be square, got shape {a.shape}")
    scale = np.linalg.norm(a)
    tol = rtol * (scale if scale > 0 else 1.0)
    if np.linalg.norm(a - herm(a)) > tol:
        raise InvalidInputError(f"{name} is not Hermitian within tolerance {rtol}")
    return 0.5 * (a + herm(a))


def hermitianize(a):
    """Hermitian part of `a`, without the Hermitian-ness check."""
    a = np.asarray(a, dtype=complex)
    return 0.5 * (a + herm(a))


@dataclass
class EigenDecomposition:
    """Unitary eigenvectors (columns) and real eigenvalues sorted descending."""

    vectors: np.ndarray
    values: np.ndarray

    def reconstruct(self):
        return (self.vectors * self.values) @ herm(self.vectors)


def hermitian_eig(a, name="matrix"):
    """Eigendecomposition of a Hermitian matrix, eigenvalues descending.

    Uses the LAPACK Hermitian path (tridiagonalization based), never a general
    nonsymmetric solver, so eigenvalues are real and the basis is orthonormal.
    For a numerically PSD input, round-off negatives are floored to zero so
    downstream square roots cannot fail.
    """
    a = check_hermitian(a, name=name)
    vals, vecs = np.linalg.eigh(a)
    order = np.argsort(-vals, kind="stable")
    vals = vals[order].copy()
    vecs = vecs[:, order].copy()
    if vals.size:
        floor = PSD_CLIP * max(vals[0], 1.0)
        if vals[-1] >= -floor:
            vals = np.maximum(vals, 0.0)
    return EigenDecomposition(vecs, vals)


def hermitian_sqrt(a, name="matrix"):
    """Hermitian square root S of a PSD matrix, S @ S = a."""
    e = hermitian_eig(a, name=name)
    if e.values.size and e.values[-1] < 0.0:
        raise InvalidInputError(f"{name} is not positive semidefinite "
                                f"(min eigenvalue {e.values[-1]:.3e})")
    return hermitianize((e.vectors * np.sqrt(e.values)) @ herm(e.vectors))


def hermitian_inv_sqrt(a, name="matrix"):
    """Inverse Hermitian square root of a positive definite matrix."""
    e = hermitian_eig(a, name=name)
    if e.values.size == 0 or e.values[-1] <= 0.0:
        raise InvalidInputError(f"{name} must be positive definite")
    return hermitianize((e.vectors / np.sqrt(e.values)) @ herm(e.vectors))


def positive_part(x):
    """Elementwise max(x, 0) for a real vector."""
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise InvalidInputError("vector contains NaN or Inf entries")
    return np.maximum(x, 0.0)


def vec(a):
    """Stack the columns of `a` into a single vector."""
    return as_matrix(a, "vec argument").flatten(order="F")


def kron(a, b):
    """Kronecker product."""
    return np.kron(as_matrix(a, "kron left"), as_matrix(b, "kron right"))


def block_diag(*matrices):
    """Block-diagonal assembly; zeros off the diagonal blocks."""
    if not matrices:
        return np.zeros((0, 0), dtype=complex)
    mats = [as_matrix(m, "block") for m in matrices]
    return scipy.linalg.block_diag(*mats).astype(complex)
