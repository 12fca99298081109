"""Small dense linear-algebra helpers shared across modules."""

import numpy as np
import scipy.linalg

SYM_TOL = 1e-12
PSD_TOL = 1e-10
RANK_RTOL = 1e-10


def as_square(mat, name="matrix"):
    a = np.atleast_2d(np.asarray(mat, dtype=float))
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"{name} must be square, got shape {a.shape}")
    return a


def expm(a):
    # scipy uses scaling-and-squaring with Pade approximants (Al-Mohy & Higham).
    return scipy.linalg.expm(np.asarray(a, dtype=float))


def symmetrize(a):
    return 0.5 * (a + a.T)


def is_symmetric(a, tol=SYM_TOL):
    return bool(np.max(np.abs(a - a.T), initial=0.0) <= tol)


def lambda_min(a):
    return float(np.linalg.eigvalsh(symmetrize(a))[0])


def numerical_rank(a, rtol=RANK_RTOL):
    """Rank counting singular values above ``rtol * sigma_max``."""
    a = np.atleast_2d(a)
    if a.size == 0:
        return 0
    s = np.linalg.svd(a, compute_uv=False)
    if s[0] == 0.0:
        return 0
    return int(np.sum(s > rtol * s[0]))


def null_space(a, rtol=RANK_RTOL):
    """Orthonormal basis (columns) of ker(a), relative tolerance on singular values."""
    a = np.atleast_2d(a)
    n = a.shape[1]
    if a.size == 0:
        return np.eye(n)
    _, s, vh = np.linalg.svd(a)
    if s.size == 0 or s[0] == 0.0:
        return np.eye(n)
    rank = int(np.sum(s > rtol * s[0]))
    return vh[rank:].T.copy()


def orth_complement(basis, n):
    """Orthonormal basis of the orthogonal complement of span(basis) in R^n."""
    basis = np.asarray(basis, dtype=float).reshape(n, -1)
    if basis.shape[1] == 0:
        return np.eye(n)
    return null_space(basis.T)


def psd_sqrt(a):
    """Symmetric square root with eigenvalues clamped at zero."""
    w, v = np.linalg.eigh(symmetrize(np.asarray(a, dtype=float)))
    w = np.clip(w, 0.0, None)
    return (v * np.sqrt(w)) @ v.T


def canonical_signs(q):
    """Flip column signs so the largest-magnitude entry of each column is positive."""
    q = np.array(q, dtype=float, copy=True)
    for j in range(q.shape[1]):
        k = int(np.argmax(np.abs(q[:, j])))
        if q[k, j] < 0:
            q[:, j] = -q[:, j]
    return q
