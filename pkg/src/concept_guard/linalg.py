"""Projection linear algebra for dense bases.

Everything downstream reduces to one primitive: the orthogonal projector onto
the column span of a (possibly rank-deficient) basis matrix. The projector is
factorized once through an SVD; singular directions below a relative cutoff
are dropped, so duplicated or nearly dependent columns collapse into a single
retained direction instead of blowing up a Gram-matrix inverse.

All arithmetic is done in float64 regardless of how inputs arrive.
"""

from __future__ import annotations

import numpy as np

from .errors import InvalidDimensions, InvalidParameter, NonFiniteInput

# Relative singular-value cutoff: directions with sigma <= tol * sigma_max are
# treated as numerically absent from the span.
DEFAULT_PINV_TOLERANCE = 1e-10


def as_matrix(a, name: str = "matrix", allow_empty_cols: bool = False) -> np.ndarray:
    """Coerce ``a`` to a 2-D float64 array, enforcing shape and finiteness."""
    out = np.asarray(a, dtype=np.float64)
    if out.ndim != 2:
        raise InvalidDimensions(f"{name} must be 2-D, got shape {out.shape}")
    rows, cols = out.shape
    if rows < 1 or (cols < 1 and not allow_empty_cols):
        raise InvalidDimensions(f"{name} needs at least one row and column, got {out.shape}")
    if out.size and not np.all(np.isfinite(out)):
        raise NonFiniteInput(f"{name} contains NaN or infinity")
    return out


def as_vector(v, dim: int | None = None, name: str = "vector") -> np.ndarray:
    """Coerce ``v`` to a 1-D float64 array of optional fixed length."""
    out = np.asarray(v, dtype=np.float64)
    if out.ndim != 1:
        raise InvalidDimensions(f"{name} must be 1-D, got shape {out.shape}")
    if dim is not None and out.shape[0] != dim:
        raise InvalidDimensions(f"{name} has length {out.shape[0]}, expected {dim}")
    if not np.all(np.isfinite(out)):
        raise NonFiniteInput(f"{name} contains NaN or infinity")
    return out


class Projector:
    """Orthogonal projector onto the column span of a basis matrix.

    Parameters
    ----------
    basis : array_like, shape (D, K)
        Columns spanning the target subspace. K may be zero, in which case
        the projector is the zero map and the residual is the identity.
    tolerance : float
        Relative singular-value cutoff. Directions with
        ``sigma <= tolerance * sigma_max`` are dropped.
    """

    def __init__(self, basis, tolerance: float = DEFAULT_PINV_TOLERANCE):
        basis = as_matrix(basis, "basis", allow_empty_cols=True)
        if not np.isfinite(tolerance) or tolerance < 0:
            raise InvalidParameter(f"tolerance must be a finite non-negative float, got {tolerance}")
        self.basis = basis
        self.tolerance = float(tolerance)
        d, k = basis.shape
        if k == 0:
            self._range = np.zeros((d, 0))
            self._sigma = np.zeros(0)
            self._vt = np.zeros((0, 0))
        else:
            u, s, vt = np.linalg.svd(basis, full_matrices=False)
            cutoff = self.tolerance * (s[0] if s.size else 0.0)
            rank = int(np.count_nonzero(s > cutoff))
            self._range = u[:, :rank]
            self._sigma = s[:rank]
            self._vt = vt[:rank]
        for arr in (self.basis, self._range, self._sigma, self._vt):
            arr.setflags(write=False)

    @property
    def dim(self) -> int:
        return self.basis.shape[0]

    @property
    def rank(self) -> int:
        return self._range.shape[1]

    def coefficients(self, v) -> np.ndarray:
        """Minimum-norm ``z`` minimizing ``||v - basis @ z||_2``.

        Rank-deficient bases get the pseudoinverse solution, e.g. a duplicated
        column splits its coefficient evenly.
        """
        if self.basis.shape[1] == 0:
            raise InvalidDimensions("cannot solve coefficients against an empty basis")
        v = as_vector(v, self.dim, "v")
        return self._vt.T @ ((self._range.T @ v) / self._sigma)

    def apply(self, v) -> np.ndarray:
        """Project ``v`` (length-D vector, or stack of rows) onto the span."""
        arr = self._check_operand(v)
        return (arr @ self._range) @ self._range.T

    def residual(self, v) -> np.ndarray:
        """Component of ``v`` orthogonal to the span: ``v - apply(v)``."""
        arr = self._check_operand(v)
        return arr - (arr @ self._range) @ self._range.T

    def explicit_matrix(self) -> np.ndarray:
        """The D x D projector matrix itself. Intended for diagnostics."""
        return self._range @ self._range.T

    def _check_operand(self, v) -> np.ndarray:
        arr = np.asarray(v, dtype=np.float64)
        if arr.ndim not in (1, 2) or arr.shape[-1] != self.dim:
            raise InvalidDimensions(
                f"operand shape {arr.shape} does not match projector dimension {self.dim}"
            )
        return arr


def solve_coefficients(basis, v, tolerance: float = DEFAULT_PINV_TOLERANCE) -> np.ndarray:
    """Least-squares coefficients of ``v`` against ``basis`` (minimum-norm)."""
    basis = as_matrix(basis, "basis")
    if basis.size and not np.all(np.isfinite(basis)):
        raise NonFiniteInput("basis contains NaN or infinity")
    return Projector(basis, tolerance).coefficients(v)


def project(projector: Projector, v) -> np.ndarray:
    """Projection of ``v`` onto the projector's subspace."""
    return projector.apply(v)


def residual(projector: Projector, v) -> np.ndarray:
    """Component of ``v`` orthogonal to the projector's subspace."""
    return projector.residual(v)
