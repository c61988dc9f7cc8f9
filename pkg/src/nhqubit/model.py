"""Three-level system model: parameters, states, Kraus operators and generators.

Basis order is fixed to ``[f, e, g]`` (index 0 is the second excited state,
index 2 the ground state).  Superoperators act on row-major vectorized
density matrices, i.e. the component order is
``(ff, fe, fg, ef, ee, eg, gf, ge, gg)``.

Units: rates and the drive ``omega`` in MHz, times in microseconds, with no
factor of 2*pi, so that ``rate * time`` is dimensionless.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .linalg import matrix_exp

__all__ = [
    "F", "E", "G", "LEVELS", "POPULATION_INDEX",
    "SystemParams", "KrausSet", "InvalidStateError", "ZeroProbabilityError",
    "ket", "projector", "check_density", "hermitize",
    "build_kraus_set", "apply_no_click", "apply_e_click", "apply_g_click",
    "vectorize", "unvectorize",
    "hamiltonian", "build_lindblad", "build_hybrid_nj", "build_hybrid_j",
    "build_h_eff", "build_generator",
    "left_superop", "right_superop", "commutator_superop", "anticommutator_superop",
    "dissipator_superop", "sandwich_superop",
]

F, E, G = 0, 1, 2
LEVELS = ("f", "e", "g")
# positions of rho_ff, rho_ee, rho_gg in the row-major vector
POPULATION_INDEX = np.array([0, 4, 8])

MARKOV_LIMIT = 0.1
P_MIN = 1e-15


class InvalidStateError(ValueError):
    pass


class ZeroProbabilityError(ValueError):
    """A measurement outcome with vanishing probability was requested."""


@dataclass(frozen=True)
class SystemParams:
    """Physical parameters of the monitored three-level system.

    Attributes
    ----------
    gamma_e : float
        Decay rate of ``|f> -> |e>`` (MHz).
    gamma_g : float
        Decay rate of ``|e> -> |g>`` (MHz).
    omega : float
        Drive strength coupling ``|f>`` and ``|e>`` (MHz).
    eta_e, eta_g : float
        Detection efficiencies of the detectors monitoring the two decays.
    """

    gamma_e: float = 0.2
    gamma_g: float = 4.0
    omega: float = 0.0
    eta_e: float = 1.0
    eta_g: float = 1.0

    def __post_init__(self):
        for name in ("gamma_e", "gamma_g", "omega", "eta_e", "eta_g"):
            value = float(getattr(self, name))
            if not np.isfinite(value):
                raise ValueError(f"{name} must be finite, got {value}")
            object.__setattr__(self, name, value)
        if self.gamma_e < 0 or self.gamma_g < 0:
            raise ValueError("decay rates must be non-negative")
        for name in ("eta_e", "eta_g"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {getattr(self, name)}")

    def replace(self, **changes) -> "SystemParams":
        values = {k: getattr(self, k) for k in self.__dataclass_fields__}
        values.update(changes)
        return SystemParams(**values)


def ket(level):
    """Column basis vector for ``'f'``, ``'e'``, ``'g'`` (or an index)."""
    idx = LEVELS.index(level) if isinstance(level, str) else int(level)
    v = np.zeros(3, dtype=complex)
    v[idx] = 1.0
    return v


def projector(level):
    v = ket(level)
    return np.outer(v, v.conj())


def _op(i, j):
    """Matrix unit ``|i><j|``."""
    m = np.zeros((3, 3), dtype=complex)
    m[i, j] = 1.0
    return m


def hermitize(rho):
    return 0.5 * (rho + rho.conj().T)


def check_density(rho, normalized=False):
    """Validate a 3x3 density matrix and return it as a complex array."""
    rho = np.asarray(rho, dtype=complex)
    if rho.shape != (3, 3):
        raise InvalidStateError(f"density matrix must be 3x3, got {rho.shape}")
    if not np.all(np.isfinite(rho)):
        raise InvalidStateError("density matrix has non-finite entries")
    if np.max(np.abs(rho - rho.conj().T)) > 1e-12:
        raise InvalidStateError("density matrix is not Hermitian")
    if np.linalg.eigvalsh(hermitize(rho)).min() < -1e-10:
        raise InvalidStateError("density matrix is not positive semidefinite")
    tr = np.trace(rho).real
    if not 0.0 < tr <= 1.0 + 1e-12:
        raise InvalidStateError(f"density matrix trace {tr} outside (0, 1]")
    if normalized and abs(tr - 1.0) > 1e-9:
        raise InvalidStateError(f"density matrix trace {tr} is not 1")
    return rho


# ---------------------------------------------------------------------------
# Kraus operators


@dataclass(frozen=True)
class KrausSet:
    """The five measurement operators for one time step ``dt``.

    Superscripts follow the detector order ``(D_e D_e^L, D_g D_g^L)``:
    ``k_10_00`` is a detected ``f -> e`` photon, ``k_00_10`` a detected
    ``e -> g`` photon, ``k_01_00`` and ``k_00_01`` the corresponding photons
    lost to the loss detectors, ``k_00_00`` no photon at all.

    ``half_drive`` is ``exp(-i H dt / 2)`` for the coherent drive; it is not
    part of the measurement and is applied by the trajectory stepper on both
    sides of the Kraus update.
    """

    dt: float
    k_00_00: np.ndarray
    k_00_01: np.ndarray
    k_01_00: np.ndarray
    k_10_00: np.ndarray
    k_00_10: np.ndarray
    half_drive: np.ndarray
    params: SystemParams

    @property
    def no_click(self):
        return (self.k_00_00, self.k_01_00, self.k_00_01)

    def all(self):
        return (self.k_00_00, self.k_00_01, self.k_01_00, self.k_10_00, self.k_00_10)

    def completeness(self):
        """``sum K^dagger K`` over the five operators (identity for a valid set)."""
        return sum(k.conj().T @ k for k in self.all())


def build_kraus_set(params: SystemParams, dt: float) -> KrausSet:
    dt = float(dt)
    if not dt > 0:
        raise ValueError("dt must be positive")
    ge, gg = params.gamma_e * dt, params.gamma_g * dt
    if ge >= MARKOV_LIMIT or gg >= MARKOV_LIMIT:
        raise ValueError(
            f"gamma*dt = ({ge:.3g}, {gg:.3g}) violates the Markov guard "
            f"(< {MARKOV_LIMIT}); the detectors operate in the Markovian regime "
            "only for gamma*dt << 1"
        )
    eta_e, eta_g = params.eta_e, params.eta_g

    k0 = np.diag([np.sqrt(1.0 - ge), np.sqrt(1.0 - gg), 1.0]).astype(complex)
    k_01_00 = np.sqrt(ge * (1.0 - eta_e)) * _op(E, F)
    k_10_00 = np.sqrt(ge * eta_e) * _op(E, F)
    k_00_01 = np.sqrt(gg * (1.0 - eta_g)) * _op(G, E)
    k_00_10 = np.sqrt(gg * eta_g) * _op(G, E)
    half_drive = matrix_exp(-0.5j * dt * hamiltonian(params))
    for arr in (k0, k_01_00, k_10_00, k_00_01, k_00_10, half_drive):
        arr.setflags(write=False)
    return KrausSet(dt, k0, k_00_01, k_01_00, k_10_00, k_00_10, half_drive, params)


def _channel(rho, ops):
    return sum(k @ rho @ k.conj().T for k in ops)


def apply_no_click(rho, kraus: KrausSet):
    """Update after a step in which neither monitored detector clicked.

    Sums the no-photon channel and the two loss channels, then normalizes.
    Returns ``(rho_new, probability)``; the probability is evaluated for the
    trace-one normalization of ``rho``.
    """
    rho = np.asarray(rho, dtype=complex)
    rho = rho / np.trace(rho).real
    out = _channel(rho, kraus.no_click)
    p = np.trace(out).real
    if p <= 0:
        raise InvalidStateError(f"no-click probability {p} is not positive")
    return hermitize(out / p), p


def _apply_click(rho, k, label):
    rho = np.asarray(rho, dtype=complex)
    rho = rho / np.trace(rho).real
    out = k @ rho @ k.conj().T
    p = np.trace(out).real
    if p < P_MIN:
        raise ZeroProbabilityError(f"{label} click has zero probability in this state")
    return hermitize(out / p), p


def apply_e_click(rho, kraus: KrausSet):
    """Update after a detected ``f -> e`` photon; returns ``(rho_new, probability)``."""
    return _apply_click(rho, kraus.k_10_00, "D_e")


def apply_g_click(rho, kraus: KrausSet):
    """Update after a detected ``e -> g`` photon; returns ``(rho_new, probability)``."""
    return _apply_click(rho, kraus.k_00_10, "D_g")


# ---------------------------------------------------------------------------
# Vectorization and superoperator algebra (row-major)


def vectorize(rho):
    return np.asarray(rho, dtype=complex).reshape(-1).copy()


def unvectorize(v):
    v = np.asarray(v, dtype=complex)
    d = int(round(np.sqrt(v.shape[-1])))
    return v.reshape(v.shape[:-1] + (d, d)).copy()


def left_superop(a):
    """Superoperator of ``rho -> a @ rho``."""
    a = np.asarray(a, dtype=complex)
    return np.kron(a, np.eye(a.shape[0]))


def right_superop(b):
    """Superoperator of ``rho -> rho @ b``."""
    b = np.asarray(b, dtype=complex)
    return np.kron(np.eye(b.shape[0]), b.T)


def sandwich_superop(a, b=None):
    """Superoperator of ``rho -> a @ rho @ b`` (``b`` defaults to ``a^dagger``)."""
    a = np.asarray(a, dtype=complex)
    b = a.conj().T if b is None else np.asarray(b, dtype=complex)
    return np.kron(a, b.T)


def commutator_superop(h):
    return left_superop(h) - right_superop(h)


def anticommutator_superop(x):
    return left_superop(x) + right_superop(x)


def dissipator_superop(jump):
    """Superoperator of ``D(L)[rho] = L rho L^dagger - {L^dagger L, rho}/2``."""
    jump = np.asarray(jump, dtype=complex)
    ldl = jump.conj().T @ jump
    return sandwich_superop(jump) - 0.5 * anticommutator_superop(ldl)


# ---------------------------------------------------------------------------
# Generators


def hamiltonian(params: SystemParams):
    """Drive ``H = omega (|e><f| + |f><e|)`` on the full three-level space."""
    return params.omega * (_op(E, F) + _op(F, E))


def build_lindblad(params: SystemParams):
    """Unmonitored Lindblad generator including the coherent drive."""
    return (
        -1j * commutator_superop(hamiltonian(params))
        + params.gamma_g * dissipator_superop(_op(G, E))
        + params.gamma_e * dissipator_superop(_op(E, F))
    )


def build_hybrid_nj(params: SystemParams):
    """Hybrid generator conditioned on no detected click at either detector.

    Detected photons only remove weight (anticommutator sinks scaled by the
    efficiencies); lost photons feed the lower level through the remainder
    of each dissipator.
    """
    pe, pf = _op(E, E), _op(F, F)
    return (
        -1j * commutator_superop(hamiltonian(params))
        - 0.5 * params.gamma_g * params.eta_g * anticommutator_superop(pe)
        - 0.5 * params.gamma_e * params.eta_e * anticommutator_superop(pf)
        + (1.0 - params.eta_g) * params.gamma_g * dissipator_superop(_op(G, E))
        + (1.0 - params.eta_e) * params.gamma_e * dissipator_superop(_op(E, F))
    )


def build_hybrid_j(params: SystemParams):
    """Hybrid generator conditioned only on no detected ``e -> g`` click.

    The ``f -> e`` channel is averaged over, so ``eta_e`` does not enter.
    """
    pe = _op(E, E)
    return (
        -1j * commutator_superop(hamiltonian(params))
        - 0.5 * params.gamma_g * params.eta_g * anticommutator_superop(pe)
        + (1.0 - params.eta_g) * params.gamma_g * dissipator_superop(_op(G, E))
        + params.gamma_e * dissipator_superop(_op(E, F))
    )


_BUILDERS = {"full": build_lindblad, "nj": build_hybrid_nj, "j": build_hybrid_j}


def build_generator(params: SystemParams, builder: str):
    """Dispatch on ``builder`` in ``{'full', 'nj', 'j'}``."""
    try:
        return _BUILDERS[builder.lower()](params)
    except KeyError:
        raise ValueError(f"unknown builder {builder!r}; expected one of {sorted(_BUILDERS)}")


def build_h_eff(params: SystemParams):
    """Effective non-Hermitian Hamiltonian on ``span{|f>, |e>}``."""
    return np.array(
        [[-0.5j * params.gamma_e, params.omega], [params.omega, -0.5j * params.gamma_g]],
        dtype=complex,
    )
