"""Dense linear algebra used by EDMD.

Matrices are plain float64 ``numpy`` arrays. The SVD itself is LAPACK's
(through ``numpy.linalg``); the pseudoinverse truncation and the Koopman
least-squares solve are built on top of it here.
"""

from __future__ import annotations

import numpy as np

from .errors import NumericalError, ShapeError

DEFAULT_RCOND = 1e-10


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    m = np.asarray(a, dtype=float)
    if m.ndim == 1:
        m = m.reshape(1, -1)
    if m.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise NumericalError(f"{name} has non-finite entries")
    return m


def svd(a) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Thin SVD ``A = U @ diag(s) @ Vt`` with ``s`` nonincreasing."""
    m = as_matrix(a)
    try:
        u, s, vt = np.linalg.svd(m, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"SVD did not converge: {exc}") from exc
    return u, s, vt


def pinv(a, rcond: float = DEFAULT_RCOND) -> np.ndarray:
    """Moore-Penrose pseudoinverse; singular values below ``rcond * s_max`` are dropped."""
    if not 0.0 < rcond < 1.0:
        raise ValueError("rcond must lie in (0, 1)")
    u, s, vt = svd(a)
    if s.size == 0 or s[0] == 0.0:
        return np.zeros((vt.shape[1], u.shape[0]))
    keep = s >= rcond * s[0]
    return (vt[keep].T / s[keep]) @ u[:, keep].T


def lstsq_K(phi_x, phi_y, rcond: float = DEFAULT_RCOND) -> np.ndarray:
    """Least-squares operator with ``phi_y ~= K @ phi_x`` (columns are snapshots)."""
    px = as_matrix(phi_x, "phi_x")
    py = as_matrix(phi_y, "phi_y")
    if px.shape[1] != py.shape[1]:
        raise ShapeError(
            f"snapshot counts differ: phi_x has {px.shape[1]}, phi_y has {py.shape[1]}"
        )
    return py @ pinv(px, rcond)


def lstsq_K_blocks(blocks, rcond: float = DEFAULT_RCOND) -> np.ndarray:
    """:func:`lstsq_K` over snapshot blocks ``(phi_x_i, phi_y_i)`` without stacking them.

    ``[phi_x^T | phi_y^T]`` is reduced block by block to its triangular QR
    factor ``[[R11, R12], [0, R22]]``; then ``K^T = pinv(R11) @ R12``. R11 has
    the singular values of the full ``phi_x``, so the ``rcond`` cut matches.
    """
    r = None
    d = None
    for px, py in blocks:
        px = as_matrix(px, "phi_x")
        py = as_matrix(py, "phi_y")
        if px.shape[1] != py.shape[1]:
            raise ShapeError("snapshot counts differ within a block")
        d = px.shape[0]
        stacked = np.hstack([px.T, py.T])
        if r is not None:
            stacked = np.vstack([r, stacked])
        r = np.linalg.qr(stacked, mode="r")
    if r is None:
        raise ShapeError("no snapshot blocks given")
    r11 = r[:d, :d]
    r12 = r[:d, d:]
    return (pinv(r11, rcond) @ r12).T
