"""Liouvillian spectra: biorthogonal modes, drive sweeps and exceptional points."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .linalg import (
    EIG_TOL,
    RANK_TOL,
    EigenSolverError,
    canonical_order,
    eig_general,
    gram_rank,
)
from .model import SystemParams, build_generator, build_h_eff, unvectorize, vectorize

__all__ = [
    "BiorthogonalSystem", "SpectrumSweep", "EPReport", "DefectiveSpectrumError",
    "biorthogonal_decompose", "spectral_evolve", "sweep_spectrum", "detect_eps",
    "coherence_time", "ep_of_heff", "jordan_order",
]

GAP_TOL = 1e-3
TIE_TOL = 1e-12
PAIRING_COND_MAX = 1e12


class DefectiveSpectrumError(EigenSolverError):
    """The generator is (numerically) not diagonalizable."""


@dataclass(frozen=True)
class BiorthogonalSystem:
    """Right modes ``right[:, k]`` and left modes ``left[:, k]`` of a Liouvillian.

    For a non-defective system ``pairing = left^H right`` is the identity,
    i.e. ``Tr[psi_k^dagger phi_l] = delta_kl`` for the unvectorized modes.
    """

    eigenvalues: np.ndarray
    right: np.ndarray
    left: np.ndarray
    pairing: np.ndarray
    defective: bool
    clusters: list = field(default_factory=list)


def biorthogonal_decompose(generator, eig_tol=EIG_TOL):
    dec = eig_general(generator, eig_tol=eig_tol)
    right, left = dec.right, dec.left
    pairing = left.conj().T @ right
    if dec.is_defective:
        return BiorthogonalSystem(dec.eigenvalues, right, left, pairing, True, dec.clusters)

    cond = np.linalg.cond(pairing)
    if not np.isfinite(cond) or cond > PAIRING_COND_MAX:
        raise EigenSolverError(
            f"left/right pairing matrix is numerically singular (condition {cond:.3e})"
        )
    # rescale (and, inside degenerate clusters, mix) the left modes so that
    # left^H right = I
    left = left @ np.linalg.inv(pairing).conj().T
    pairing = left.conj().T @ right
    return BiorthogonalSystem(dec.eigenvalues, right, left, pairing, False, dec.clusters)


def spectral_evolve(system: BiorthogonalSystem, rho0, t_grid):
    """Evolve ``rho0`` by the mode expansion; returns an array ``(len(t_grid), 3, 3)``."""
    if system.defective:
        raise DefectiveSpectrumError(
            "spectral expansion is undefined for a defective generator; use matrix_exp"
        )
    coeffs = system.left.conj().T @ vectorize(rho0)
    t = np.asarray(t_grid, dtype=float)
    phases = np.exp(np.outer(t, system.eigenvalues))
    return unvectorize((phases * coeffs) @ system.right.T)


# ---------------------------------------------------------------------------
# Sweeps


@dataclass(frozen=True)
class SpectrumSweep:
    """Eigenvalue branches ``branches[i, k]`` of branch ``k`` at ``omega_grid[i]``.

    ``ties`` lists the grid indices at which the continuity matching had to
    fall back to the lexicographic tie-break.
    """

    omega_grid: np.ndarray
    branches: np.ndarray
    builder: str
    params: SystemParams
    ties: tuple = ()


def _match(previous, current):
    """Greedy minimal-distance assignment of ``current`` values to ``previous`` branches.

    Returns ``(assigned, tie)`` where ``assigned[k]`` is the value given to
    branch ``k``.
    """
    n = len(previous)
    dist = np.abs(previous[:, None] - current[None, :])
    # sort candidate pairs by distance, then new value (Re, Im), then branch index
    keys = np.lexsort((
        np.broadcast_to(np.arange(n)[:, None], (n, n)).ravel(),
        np.broadcast_to(current.imag[None, :], (n, n)).ravel(),
        np.broadcast_to(current.real[None, :], (n, n)).ravel(),
        dist.ravel(),
    ))
    free_b = np.ones(n, dtype=bool)
    free_c = np.ones(n, dtype=bool)
    assigned = np.empty(n, dtype=complex)
    flat = dist.ravel()
    tie = False
    for pos, key in enumerate(keys):
        b, c = divmod(int(key), n)
        if not (free_b[b] and free_c[c]):
            continue
        # an equally good competing pair still open means the choice was a tie
        for other in keys[pos + 1:]:
            if flat[other] - flat[key] > TIE_TOL:
                break
            ob, oc = divmod(int(other), n)
            if free_b[ob] and free_c[oc] and (ob == b) != (oc == c):
                tie = True
                break
        assigned[b] = current[c]
        free_b[b] = free_c[c] = False
        if not free_b.any():
            break
    return assigned, tie


def _eigvals(params, builder):
    return scipy.linalg.eigvals(build_generator(params, builder))


def sweep_spectrum(params_base: SystemParams, omega_grid, builder="nj"):
    """Eigenvalues of the chosen generator along ``omega_grid``, joined into branches."""
    omega = np.asarray(omega_grid, dtype=float)
    if omega.ndim != 1 or omega.size < 3:
        raise ValueError("omega_grid needs at least 3 points")
    if np.any(np.diff(omega) <= 0):
        raise ValueError("omega_grid must be strictly increasing")

    first = _eigvals(params_base.replace(omega=omega[0]), builder)
    branches = np.empty((omega.size, first.size), dtype=complex)
    branches[0] = first[canonical_order(first)]
    ties = []
    for i in range(1, omega.size):
        values = _eigvals(params_base.replace(omega=omega[i]), builder)
        branches[i], tie = _match(branches[i - 1], values)
        if tie:
            ties.append(i)
    return SpectrumSweep(omega, branches, builder, params_base, tuple(ties))


# ---------------------------------------------------------------------------
# Exceptional points


@dataclass(frozen=True)
class EPReport:
    """An exceptional point located along a drive sweep.

    ``order`` is the size of the largest Jordan block of the coalescing
    cluster; ``gram_rank`` the number of independent eigenvectors among the
    ``cluster_size`` coalescing eigenvalues.
    """

    omega_star: float
    order: int
    branches: tuple
    eigenvalue: complex
    min_gap: float
    cluster_size: int
    gram_rank: int
    order_perturbative: int
    tolerances: dict

    def to_dict(self):
        return {
            "omega_star": self.omega_star,
            "order": self.order,
            "branches": list(self.branches),
            "eigenvalue": {"re": self.eigenvalue.real, "im": self.eigenvalue.imag},
            "min_gap": self.min_gap,
            "cluster_size": self.cluster_size,
            "gram_rank": self.gram_rank,
            "order_perturbative": self.order_perturbative,
            "tolerances": dict(self.tolerances),
        }


def jordan_order(generator, center, radius, nil_tol=RANK_TOL):
    """Largest Jordan block among the eigenvalues within ``radius`` of ``center``.

    Uses the ordered Schur form: the leading triangular block ``T11`` holding
    the cluster is shifted by its mean eigenvalue, and the order is the
    smallest power that annihilates it at tolerance ``nil_tol`` (relative to
    the norm of the generator).
    """
    a = np.asarray(generator, dtype=complex)
    t, _, sdim = scipy.linalg.schur(
        a, output="complex", sort=lambda z: abs(z - center) <= radius
    )
    if sdim == 0:
        return 0
    t11 = t[:sdim, :sdim]
    nil = t11 - np.trace(t11) / sdim * np.eye(sdim)
    scale = max(1.0, np.linalg.norm(a, 2))
    power = np.eye(sdim, dtype=complex)
    for k in range(1, sdim + 1):
        power = power @ nil
        if np.linalg.norm(power, 2) <= nil_tol * scale**k:
            return k
    return sdim


def _perturbative_order(generator, center, size, radius):
    """Order estimate from the splitting exponent under a diagonal perturbation."""
    a = np.asarray(generator, dtype=complex)
    # complex entries: a real diagonal commutes with the conjugation symmetry of
    # the generator and can miss the leading splitting term
    rng = np.random.default_rng(20251014)
    pert = np.diag(rng.normal(size=a.shape[0]) + 1j * rng.normal(size=a.shape[0]))
    diam = []
    epsilons = (1e-6, 1e-4)
    for eps in epsilons:
        w = scipy.linalg.eigvals(a + eps * pert)
        near = w[np.argsort(np.abs(w - center))[:size]]
        diam.append(np.max(np.abs(near[:, None] - near[None, :])))
    if min(diam) <= 0:
        return 1
    slope = math.log(diam[1] / diam[0]) / math.log(epsilons[1] / epsilons[0])
    return max(1, int(round(1.0 / slope))) if slope > 0 else size


def _golden_min(f, a, b, xtol=1e-13, max_iter=200):
    """Golden-section search for a minimum of ``f`` on ``[a, b]``."""
    inv_phi = (math.sqrt(5.0) - 1.0) / 2.0
    c, d = b - inv_phi * (b - a), a + inv_phi * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(max_iter):
        if b - a <= xtol * max(1.0, abs(a) + abs(b)):
            break
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - inv_phi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + inv_phi * (b - a)
            fd = f(d)
    return c if fc <= fd else d


def detect_eps(sweep: SpectrumSweep, params=None, builder=None, gap_tol=GAP_TOL,
               rank_tol=RANK_TOL):
    """Locate exceptional points along a sweep.

    Candidates are interior grid points where the distance between two
    branches has a genuine local minimum.  Each candidate is refined by
    golden-section search over the neighbouring grid interval; it is kept if
    the refined cluster diameter is below ``gap_tol`` and its eigenvectors are
    rank deficient.  Returns a list of :class:`EPReport` sorted by ``omega_star``.
    """
    params = sweep.params if params is None else params
    builder = sweep.builder if builder is None else builder
    omega, br = sweep.omega_grid, sweep.branches
    n_branch = br.shape[1]
    tolerances = {"gap_tol": gap_tol, "rank_tol": rank_tol}

    candidates = []
    for k in range(n_branch):
        for l in range(k + 1, n_branch):
            d = np.abs(br[:, k] - br[:, l])
            for i in range(1, len(omega) - 1):
                if d[i] <= d[i - 1] and d[i] <= d[i + 1] and max(d[i - 1], d[i + 1]) - d[i] > gap_tol:
                    candidates.append((i, k, l))

    found = []
    for i, k, l in candidates:
        center0 = 0.5 * (br[i, k] + br[i, l])

        def pair_gap(x, i=i, k=k, l=l):
            values, _ = _match(br[i - 1], _eigvals(params.replace(omega=x), builder))
            return float(abs(values[k] - values[l]))

        x_star = _golden_min(pair_gap, omega[i - 1], omega[i + 1])
        gen = build_generator(params.replace(omega=x_star), builder)
        dec = eig_general(gen, eig_tol=max(EIG_TOL, 1e-8))
        w = dec.eigenvalues
        # center on the refined pair, then take every eigenvalue within gap_tol
        near_idx = np.argsort(np.abs(w - center0))[:2]
        center = w[near_idx].mean()
        members = np.flatnonzero(np.abs(w - center) <= gap_tol)
        if members.size < 2:
            continue
        center = w[members].mean()
        diameter = float(np.max(np.abs(w[members][:, None] - w[members][None, :])))
        if diameter > gap_tol:
            continue
        rank = gram_rank(dec.right[:, members], rank_tol)
        if rank >= members.size:
            continue
        order = jordan_order(gen, center, gap_tol, nil_tol=rank_tol)
        if order < 2:
            continue
        pert = _perturbative_order(gen, center, members.size, gap_tol)
        # branches are the grid curves that continue into the cluster
        i_near = int(np.argmin(np.abs(omega - x_star)))
        assigned, _ = _match(br[i_near], w)
        in_cluster = {int(b) for b in np.flatnonzero(np.abs(assigned - center) <= gap_tol)}

        merged = False
        for rep in found:
            if abs(rep["omega_star"] - x_star) < 1e-6 and abs(rep["eigenvalue"] - center) < gap_tol:
                rep["branches"].update(in_cluster)
                merged = True
                break
        if not merged:
            found.append({
                "omega_star": x_star, "order": order, "branches": in_cluster,
                "eigenvalue": complex(center), "min_gap": diameter,
                "cluster_size": int(members.size), "gram_rank": rank,
                "order_perturbative": pert,
            })

    reports = [
        EPReport(
            omega_star=r["omega_star"], order=r["order"], branches=tuple(sorted(r["branches"])),
            eigenvalue=r["eigenvalue"], min_gap=r["min_gap"], cluster_size=r["cluster_size"],
            gram_rank=r["gram_rank"], order_perturbative=r["order_perturbative"],
            tolerances=tolerances,
        )
        for r in found
    ]
    return sorted(reports, key=lambda r: (r.omega_star, -r.eigenvalue.real))


# ---------------------------------------------------------------------------
# Effective-Hamiltonian quantities


def coherence_time(params: SystemParams):
    """Population oscillation period ``pi / max|Re(Phi)|`` of the effective Hamiltonian.

    Returns ``math.inf`` on the overdamped side of the exceptional point,
    where both eigenvalues are purely imaginary.
    """
    phi = np.linalg.eigvals(build_h_eff(params))
    re = float(np.max(np.abs(phi.real)))
    scale = max(1.0, abs(params.omega), params.gamma_e, params.gamma_g)
    if re <= 1e-7 * scale:
        return math.inf
    return math.pi / re


def ep_of_heff(params: SystemParams):
    """Drive strength at which the effective-Hamiltonian eigenvalues coalesce."""
    if params.gamma_g < params.gamma_e:
        raise ValueError("closed form assumes gamma_g >= gamma_e")
    return (params.gamma_g - params.gamma_e) / 4.0
