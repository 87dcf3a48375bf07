"""Small dense linear-algebra helpers on float64 / complex128 numpy arrays.

Vectors are 1-D arrays, matrices are 2-D row-major arrays. Every helper returns
a fresh array and checks shapes up front so mismatches surface with both shapes
in the message instead of as a numpy broadcasting error deep inside a scan.
"""

import numpy as np

__all__ = [
    "as_vector",
    "as_matrix",
    "outer",
    "matmul",
    "hadamard",
    "matvec",
    "broadcast_col",
    "broadcast_row",
    "real_part",
    "cscale_rows",
    "cadd",
    "couter",
]


class ShapeError(ValueError):
    pass


def _check_finite(a):
    if not np.all(np.isfinite(a)):
        raise FloatingPointError("non-finite entry in result of shape %s" % (a.shape,))
    return a


def as_vector(v):
    v = np.asarray(v)
    if v.ndim != 1 or v.shape[0] < 1:
        raise ShapeError("expected a non-empty vector, got shape %s" % (v.shape,))
    return v.astype(np.complex128 if np.iscomplexobj(v) else np.float64, copy=False)


def as_matrix(a):
    a = np.asarray(a)
    if a.ndim != 2 or a.shape[0] < 1 or a.shape[1] < 1:
        raise ShapeError("expected a non-empty matrix, got shape %s" % (a.shape,))
    return a.astype(np.complex128 if np.iscomplexobj(a) else np.float64, copy=False)


def outer(u, v):
    u, v = as_vector(u), as_vector(v)
    return _check_finite(u[:, None] * v[None, :])


def matmul(a, b):
    a, b = as_matrix(a), as_matrix(b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError("matmul shape mismatch: %s @ %s" % (a.shape, b.shape))
    return _check_finite(a @ b)


def hadamard(a, b):
    a, b = as_matrix(a), as_matrix(b)
    if a.shape != b.shape:
        raise ShapeError("hadamard shape mismatch: %s vs %s" % (a.shape, b.shape))
    return _check_finite(a * b)


def matvec(m, s):
    """Return ``m.T @ s`` for ``m`` of shape (k, d) and ``s`` of length k."""
    m, s = as_matrix(m), as_vector(s)
    if m.shape[0] != s.shape[0]:
        raise ShapeError("matvec shape mismatch: m %s, s %s" % (m.shape, s.shape))
    return _check_finite(m.T @ s)


def broadcast_col(v, cols):
    """Repeat the column vector ``v`` across ``cols`` columns (v 1^T)."""
    v = as_vector(v)
    return np.repeat(v[:, None], cols, axis=1)


def broadcast_row(v, rows):
    """Repeat the row vector ``v`` down ``rows`` rows (1 v^T)."""
    v = as_vector(v)
    return np.repeat(v[None, :], rows, axis=0)


def real_part(a):
    a = np.asarray(a)
    return np.array(a.real, dtype=np.float64)


def cscale_rows(phases, m):
    """Multiply row j of ``m`` by the unit complex number exp(i * phases[j])."""
    phases, m = as_vector(phases), as_matrix(m)
    if phases.shape[0] != m.shape[0]:
        raise ShapeError("cscale_rows shape mismatch: phases %s, m %s" % (phases.shape, m.shape))
    return np.exp(1j * phases)[:, None] * m


def cadd(a, b):
    a, b = as_matrix(a), as_matrix(b)
    if a.shape != b.shape:
        raise ShapeError("cadd shape mismatch: %s vs %s" % (a.shape, b.shape))
    return (a + b).astype(np.complex128)


def couter(u, v):
    return outer(u, v).astype(np.complex128)
