"""Dense complex linear algebra for the small generators used in this package.

Everything here works on plain ``numpy`` arrays.  The matrices of interest are
2x2 effective Hamiltonians, 3x3 Kraus operators and 9x9 Liouvillians, so no
attention is paid to large-dimension performance.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

__all__ = [
    "EigenDecomposition",
    "EigenSolverError",
    "MatrixExpOverflow",
    "eig_general",
    "matrix_exp",
    "rk4_evolve",
    "canonical_order",
    "cluster_indices",
]

EIG_TOL = 1e-9
CLUSTER_TOL = 1e-4
RANK_TOL = 1e-6
DT_INTERNAL = 1e-3


class EigenSolverError(np.linalg.LinAlgError):
    """Raised when an eigendecomposition cannot be certified."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class MatrixExpOverflow(OverflowError):
    def __init__(self, message, norm):
        super().__init__(message)
        self.norm = norm


def _as_square(a, name="A"):
    a = np.asarray(a, dtype=complex)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"{name} must be a square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} has non-finite entries")
    return a


def canonical_order(values):
    """Indices sorting ``values`` by real part descending, then imaginary ascending."""
    values = np.asarray(values)
    return np.lexsort((values.imag, -values.real))


def cluster_indices(values, tol):
    """Single-linkage clusters of complex ``values`` at distance ``tol``.

    Returns a list of sorted index arrays; every index appears exactly once.
    """
    values = np.asarray(values)
    n = len(values)
    labels = -np.ones(n, dtype=int)
    current = 0
    for i in range(n):
        if labels[i] >= 0:
            continue
        stack = [i]
        labels[i] = current
        while stack:
            j = stack.pop()
            near = np.flatnonzero((np.abs(values - values[j]) <= tol) & (labels < 0))
            labels[near] = current
            stack.extend(near.tolist())
        current += 1
    return [np.flatnonzero(labels == c) for c in range(current)]


def gram_rank(vectors, rank_tol=RANK_TOL):
    """Numerical rank of the Gram matrix ``V^H V`` of the columns of ``vectors``.

    Singular values below ``rank_tol`` times the largest count as zero.
    """
    vectors = np.asarray(vectors)
    gram = vectors.conj().T @ vectors
    s = np.linalg.svd(gram, compute_uv=False)
    if s[0] == 0:
        return 0
    return int(np.sum(s > rank_tol * s[0]))


@dataclass(frozen=True)
class EigenDecomposition:
    """Eigenvalues with right and left eigenvectors of a general square matrix.

    ``right[:, k]`` and ``left[:, k]`` belong to ``eigenvalues[k]``; the left
    vectors satisfy ``left[:, k].conj() @ A == eigenvalues[k] * left[:, k].conj()``.
    Both sets are unit norm.  Eigenvalues are in canonical order (see
    :func:`canonical_order`).
    """

    eigenvalues: np.ndarray
    right: np.ndarray
    left: np.ndarray
    residual: float
    clusters: list = field(default_factory=list)
    defective: list = field(default_factory=list)

    @property
    def is_defective(self) -> bool:
        return any(self.defective)

    def defective_mask(self):
        """Per-eigenvalue flag: True where the eigenvalue sits in a defective cluster."""
        mask = np.zeros(len(self.eigenvalues), dtype=bool)
        for idx, flag in zip(self.clusters, self.defective):
            mask[idx] = flag
        return mask


_EPS = np.finfo(float).eps


def _residuals(a, w, vl, vr):
    right = np.linalg.norm(a @ vr - vr * w, axis=0)
    left = np.linalg.norm(a.conj().T @ vl - vl * w.conj(), axis=0)
    return right, left


def _null_pair(a, lam):
    """Unit right and left null vectors of ``a - lam I`` from the smallest singular triplet."""
    u, _, vh = np.linalg.svd(a - lam * np.eye(a.shape[0]))
    return vh[-1].conj(), u[:, -1]


def eig_general(a, eig_tol=EIG_TOL, cluster_tol=CLUSTER_TOL, rank_tol=RANK_TOL):
    """Eigendecomposition of a general complex matrix.

    Eigenvalues closer than ``cluster_tol`` are grouped; a group is flagged
    defective when the Gram matrix of its right eigenvectors is rank deficient
    at ``rank_tol``.

    Raises
    ------
    EigenSolverError
        If LAPACK fails to converge or the residual ``max ||A v - lambda v||``
        exceeds ``eig_tol``.
    """
    a = _as_square(a)
    # entries below round-off of the largest one only upset LAPACK's balancing
    # (wrong vectors or no convergence); residuals are still taken against ``a``
    scale = np.max(np.abs(a)) if a.size else 0.0
    work = np.where(np.abs(a) < _EPS * scale, 0.0, a)
    try:
        w, vl, vr = scipy.linalg.eig(work, left=True, right=True)
    except np.linalg.LinAlgError as exc:  # QR iteration budget exhausted
        raise EigenSolverError(f"eigensolver did not converge: {exc}") from exc

    order = canonical_order(w)
    w, vl, vr = w[order], vl[:, order], vr[:, order]
    vr = vr / np.linalg.norm(vr, axis=0)
    vl = vl / np.linalg.norm(vl, axis=0)

    right, left = _residuals(a, w, vl, vr)
    # balancing can still spoil individual vectors when entries span many
    # orders of magnitude; recompute those from the SVD of A - lambda I
    for k in np.flatnonzero((right > eig_tol) | (left > eig_tol)):
        vr[:, k], vl[:, k] = _null_pair(a, w[k])
    if len(w):
        right, left = _residuals(a, w, vl, vr)
    residual = float(np.max(right)) if len(w) else 0.0
    if residual > eig_tol:
        raise EigenSolverError(
            f"eigenpair residual {residual:.3e} exceeds tolerance {eig_tol:.1e}",
            residual=residual,
        )

    clusters = cluster_indices(w, cluster_tol)
    defective = [
        len(idx) > 1 and gram_rank(vr[:, idx], rank_tol) < len(idx) for idx in clusters
    ]
    return EigenDecomposition(w, vr, vl, residual, clusters, defective)


# Pade coefficients and theta bounds from Higham, SIAM J. Matrix Anal. Appl. 26 (2005).
_PADE = {
    3: (120.0, 60.0, 12.0, 1.0),
    5: (30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0),
    7: (17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0),
    9: (17643225600.0, 8821612800.0, 2075673600.0, 302702400.0, 30270240.0,
        2162160.0, 110880.0, 3960.0, 90.0, 1.0),
    13: (64764752532480000.0, 32382376266240000.0, 7771770303897600.0,
         1187353796428800.0, 129060195264000.0, 10559470521600.0,
         670442572800.0, 33522128640.0, 1323241920.0, 40840800.0, 960960.0,
         16380.0, 182.0, 1.0),
}
_THETA = {
    3: 1.495585217958292e-2,
    5: 2.539398330063230e-1,
    7: 9.504178996162932e-1,
    9: 2.097847961257068e0,
    13: 5.371920351148152e0,
}
_MAX_SQUARINGS = 1000


def _pade_uv(a, m):
    b = _PADE[m]
    n = a.shape[0]
    ident = np.eye(n, dtype=a.dtype)
    a2 = a @ a
    if m < 13:
        powers = [ident, a2]
        for _ in range(2, m // 2 + 1):
            powers.append(powers[-1] @ a2)
        u = sum(b[2 * j + 1] * powers[j] for j in range(m // 2 + 1))
        v = sum(b[2 * j] * powers[j] for j in range(m // 2 + 1))
        return a @ u, v
    a4 = a2 @ a2
    a6 = a4 @ a2
    u = a @ (a6 @ (b[13] * a6 + b[11] * a4 + b[9] * a2)
             + b[7] * a6 + b[5] * a4 + b[3] * a2 + b[1] * ident)
    v = (a6 @ (b[12] * a6 + b[10] * a4 + b[8] * a2)
         + b[6] * a6 + b[4] * a4 + b[2] * a2 + b[0] * ident)
    return u, v


def matrix_exp(a):
    """Matrix exponential by scaling and squaring with a diagonal Pade kernel.

    The Pade degree and the number of squarings follow the 1-norm bounds of
    Higham's 2005 algorithm, which target double-precision backward error.

    Raises
    ------
    MatrixExpOverflow
        When the norm is too large for the squaring phase or the result
        overflows.
    """
    a = _as_square(a)
    norm = float(np.linalg.norm(a, 1))
    if norm == 0.0:
        return np.eye(a.shape[0], dtype=complex)

    for m in (3, 5, 7, 9):
        if norm <= _THETA[m]:
            u, v = _pade_uv(a, m)
            return np.linalg.solve(v - u, v + u)

    s = max(0, int(np.ceil(np.log2(norm / _THETA[13]))))
    if s > _MAX_SQUARINGS:
        raise MatrixExpOverflow(f"matrix 1-norm {norm:.3e} too large for exp", norm)
    u, v = _pade_uv(a / 2.0**s, 13)
    r = np.linalg.solve(v - u, v + u)
    with np.errstate(over="ignore", invalid="ignore"):  # checked just below
        for _ in range(s):
            r = r @ r
    if not np.all(np.isfinite(r)):
        raise MatrixExpOverflow(f"exp overflowed (matrix 1-norm {norm:.3e})", norm)
    return r


def rk4_evolve(generator, v0, t_grid, dt_internal=DT_INTERNAL):
    """Integrate ``dv/dt = generator @ v`` with classical fixed-step RK4.

    Each interval of ``t_grid`` is split into the smallest number of equal
    substeps not longer than ``dt_internal``.  Returns an array of shape
    ``(len(t_grid), len(v0))`` whose first row is ``v0``.
    """
    g = _as_square(generator, "generator")
    v = np.asarray(v0, dtype=complex).copy()
    if v.shape != (g.shape[0],):
        raise ValueError(f"v0 has shape {v.shape}, generator is {g.shape}")
    t = np.asarray(t_grid, dtype=float)
    if t.ndim != 1 or t.size == 0:
        raise ValueError("t_grid must be a non-empty 1-D sequence")
    gaps = np.diff(t)
    if np.any(gaps <= 0):
        raise ValueError("t_grid must be strictly increasing")
    if gaps.size and dt_internal > gaps.min() * (1 + 1e-12):
        raise ValueError(
            f"dt_internal={dt_internal} exceeds the smallest grid spacing {gaps.min()}"
        )
    if dt_internal <= 0:
        raise ValueError("dt_internal must be positive")

    out = np.empty((t.size, v.size), dtype=complex)
    out[0] = v
    for k, gap in enumerate(gaps):
        n_sub = max(1, int(np.ceil(gap / dt_internal - 1e-9)))
        h = gap / n_sub
        for _ in range(n_sub):
            k1 = g @ v
            k2 = g @ (v + 0.5 * h * k1)
            k3 = g @ (v + 0.5 * h * k2)
            k4 = g @ (v + h * k3)
            v = v + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        out[k + 1] = v
    return out
