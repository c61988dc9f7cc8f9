"""Monte Carlo quantum trajectories with inefficient photodetection.

Each trajectory advances a 3x3 density matrix one step ``dt`` at a time.  In
every step a single uniform number selects one of three observable outcomes
(no click, click at ``D_e``, click at ``D_g``) with their exact conditional
probabilities, and the matching Kraus update is applied.  Photons reaching
the loss detectors are never observed; they only enter through the mixed
no-click update.

Random numbers come from one counter-based Philox stream per trajectory,
keyed by ``seed`` with the trajectory index in the counter, so the ensemble is
reproducible independently of how trajectories are split across workers.
"""
from __future__ import annotations

import enum
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .model import (
    P_MIN,
    KrausSet,
    SystemParams,
    apply_e_click,
    apply_g_click,
    apply_no_click,
    build_kraus_set,
    check_density,
    hermitize,
    projector,
    sandwich_superop,
)

__all__ = [
    "Event", "PostSelect", "TrajectoryConfig", "ClickRecord", "TrajectoryRecord",
    "EnsembleStats", "ConsistencyError", "step", "trajectory_rng", "run_trajectory",
    "run_ensemble", "conditional_populations", "default_workers", "WORKERS_ENV",
]

WORKERS_ENV = "NHQUBIT_WORKERS"
CHUNK_SIZE = 4096
RNG_BLOCK = 512


class ConsistencyError(RuntimeError):
    pass


class Event(enum.Enum):
    NO_CLICK = "no_click"
    E_CLICK = "e_click"
    G_CLICK = "g_click"


class PostSelect(enum.Enum):
    """Which detected clicks disqualify a trajectory."""

    NONE = "none"
    JUMP = "jump"  # a D_g click disqualifies
    NOJUMP = "nojump"  # a D_e or D_g click disqualifies

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        if value is None:
            return cls.NONE
        key = str(value).strip().lower().replace("-", "").replace("_", "")
        for member in cls:
            if member.value == key:
                return member
        raise ValueError(f"unknown post-selection mode {value!r}")


@dataclass(frozen=True)
class TrajectoryConfig:
    dt: float = 1e-3
    t_final: float = 3.0
    n_traj: int = 10_000
    seed: int = 0
    postselect_mode: PostSelect = PostSelect.NONE
    initial_state: np.ndarray = field(default_factory=lambda: projector("f"))

    def __post_init__(self):
        object.__setattr__(self, "postselect_mode", PostSelect.parse(self.postselect_mode))
        object.__setattr__(self, "initial_state", check_density(self.initial_state, normalized=True))
        if not self.dt > 0 or not self.t_final > 0:
            raise ValueError("dt and t_final must be positive")
        ratio = self.t_final / self.dt
        if not math.isclose(ratio, round(ratio), rel_tol=1e-12, abs_tol=1e-9):
            raise ValueError(f"t_final/dt = {ratio} is not an integer step count")
        if int(self.n_traj) < 1:
            raise ValueError("n_traj must be at least 1")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")
        object.__setattr__(self, "n_traj", int(self.n_traj))
        object.__setattr__(self, "seed", int(self.seed))

    @property
    def n_steps(self) -> int:
        return int(round(self.t_final / self.dt))

    @property
    def times(self):
        return np.arange(self.n_steps + 1) * self.dt


@dataclass
class ClickRecord:
    events: list = field(default_factory=list)  # (step_index, Event)

    def first(self, *kinds):
        for s, ev in self.events:
            if ev in kinds:
                return s
        return None


@dataclass
class TrajectoryRecord:
    times: np.ndarray
    populations: np.ndarray  # (n_times, 3): rho_ff, rho_ee, rho_gg
    clicks: ClickRecord


@dataclass
class EnsembleStats:
    """Conditional ensemble statistics on the trajectory time grid.

    Times with no surviving trajectory have ``valid == False``; their mean
    and standard-error rows hold NaN and must not be used.
    """

    times: np.ndarray
    mean_populations: np.ndarray
    survival_fraction: np.ndarray
    std_error: np.ndarray
    alive_counts: np.ndarray
    n_traj: int
    mode: PostSelect

    @property
    def valid(self):
        return self.alive_counts > 0


def trajectory_rng(seed, traj_index):
    """Independent, order-free random stream for one trajectory."""
    return np.random.Generator(np.random.Philox(key=int(seed), counter=[0, int(traj_index), 0, 0]))


def step(rho, kraus: KrausSet, rand_u):
    """Advance a normalized state by one measurement step.

    The coherent drive is split symmetrically around the Kraus update.
    Returns ``(rho_new, event)``.
    """
    u = kraus.half_drive
    rho = u @ np.asarray(rho, dtype=complex) @ u.conj().T

    k_e, k_g = kraus.k_10_00, kraus.k_00_10
    p_e = np.trace(k_e @ rho @ k_e.conj().T).real
    p_g = np.trace(k_g @ rho @ k_g.conj().T).real
    p_no = sum(np.trace(k @ rho @ k.conj().T).real for k in kraus.no_click)
    total = p_e + p_g + p_no
    if min(p_e, p_g, p_no) < -1e-15 or abs(total - 1.0) > 1e-12:
        raise ConsistencyError(
            f"outcome probabilities ({p_no}, {p_e}, {p_g}) do not form a distribution"
        )
    p_e = p_e if p_e >= P_MIN else 0.0
    p_g = p_g if p_g >= P_MIN else 0.0

    if rand_u < p_e:
        rho, _ = apply_e_click(rho, kraus)
        event = Event.E_CLICK
    elif rand_u < p_e + p_g:
        rho, _ = apply_g_click(rho, kraus)
        event = Event.G_CLICK
    else:
        rho, _ = apply_no_click(rho, kraus)
        event = Event.NO_CLICK
    return hermitize(u @ rho @ u.conj().T), event


def run_trajectory(config: TrajectoryConfig, params: SystemParams, traj_index: int = 0):
    """Single trajectory, a deterministic function of ``(config.seed, traj_index)``."""
    kraus = build_kraus_set(params, config.dt)
    draws = trajectory_rng(config.seed, traj_index).random(config.n_steps)
    rho = config.initial_state.copy()
    pops = np.empty((config.n_steps + 1, 3))
    pops[0] = np.diag(rho).real
    clicks = ClickRecord()
    for s in range(config.n_steps):
        rho, event = step(rho, kraus, draws[s])
        if event is not Event.NO_CLICK:
            clicks.events.append((s, event))
        pops[s + 1] = np.diag(rho).real
    return TrajectoryRecord(config.times, pops, clicks)


# ---------------------------------------------------------------------------
# Batched ensemble engine
#
# Hermitian 3x3 matrices are carried as 9 real coordinates
# (rho_ff, rho_ee, rho_gg, Re/Im rho_fe, Re/Im rho_fg, Re/Im rho_eg), so the
# batch update is a real matrix product and hermiticity holds exactly.


def _hermitian_basis():
    """Complex matrix ``C`` with ``vec(rho) = C @ x`` for Hermitian ``rho``."""
    c = np.zeros((9, 9), dtype=complex)
    for k, (i, j) in enumerate([(0, 0), (1, 1), (2, 2)]):
        c[3 * i + j, k] = 1.0
    for k, (i, j) in enumerate([(0, 1), (0, 2), (1, 2)]):
        re, im = 3 + 2 * k, 4 + 2 * k
        c[3 * i + j, re], c[3 * j + i, re] = 1.0, 1.0
        c[3 * i + j, im], c[3 * j + i, im] = 1j, -1j
    return c


_C = _hermitian_basis()
_C_INV = np.linalg.inv(_C)


def to_real_coords(rho):
    """Real coordinates of the Hermitian part of ``rho`` (last two axes 3x3)."""
    rho = np.asarray(rho, dtype=complex)
    v = rho.reshape(rho.shape[:-2] + (9,))
    return (v @ _C_INV.T).real


def from_real_coords(x):
    x = np.asarray(x, dtype=float)
    return (x @ _C.T).reshape(x.shape[:-1] + (3, 3))


def _real_superop(s):
    r = _C_INV @ s @ _C
    if np.max(np.abs(r.imag)) > 1e-12:
        raise ConsistencyError("superoperator does not preserve hermiticity")
    return r.real


def _batch_operators(kraus: KrausSet):
    """Real superoperators for the three outcomes and their trace rows."""
    u = kraus.half_drive

    def dressed(k):
        return _real_superop(sandwich_superop(u @ k @ u))

    r_no = sum(dressed(k) for k in kraus.no_click)
    r_e = dressed(kraus.k_10_00)
    r_g = dressed(kraus.k_00_10)
    # populations are the first three coordinates, so trace(R x) = R[:3].sum(0) @ x
    w = np.stack([r_e[:3].sum(0), r_g[:3].sum(0)])
    return r_no, r_e, r_g, w


def _run_chunk(params, config, start, stop):
    """Evolve trajectories ``start..stop-1`` and return per-time partial sums."""
    kraus = build_kraus_set(params, config.dt)
    r_no, r_e, r_g, w = _batch_operators(kraus)
    mode = config.postselect_mode
    n_steps = config.n_steps

    rngs = [trajectory_rng(config.seed, j) for j in range(start, stop)]
    # coordinate-major layout: x[:, j] is trajectory j
    x = np.repeat(to_real_coords(config.initial_state)[:, None], len(rngs), axis=1)

    sums = np.zeros((n_steps + 1, 3))
    m2 = np.zeros((n_steps + 1, 3))  # sum of squared deviations from the chunk mean
    alive = np.zeros(n_steps + 1, dtype=np.int64)

    def record(k, x):
        n = x.shape[1]
        if n == 0:
            return
        pops = x[:3]
        sums[k] = pops.sum(axis=1)
        dev = pops - (sums[k] / n)[:, None]
        m2[k] = (dev * dev).sum(axis=1)
        alive[k] = n

    record(0, x)
    rows = np.arange(len(rngs))
    for s in range(n_steps):
        if x.shape[1] == 0:
            break
        if s % RNG_BLOCK == 0:
            rngs = [rngs[r] for r in rows]
            rows = np.arange(len(rngs))
            block = np.empty((len(rngs), min(RNG_BLOCK, n_steps - s)))
            for rng, out in zip(rngs, block):
                rng.random(out=out)
        u = block[rows, s % RNG_BLOCK]

        p = w @ x
        p[p < P_MIN] = 0.0
        e_click = u < p[0]
        g_click = ~e_click & (u < p[0] + p[1])

        new = r_no @ x
        if e_click.any():
            new[:, e_click] = r_e @ x[:, e_click]
        if g_click.any():
            new[:, g_click] = r_g @ x[:, g_click]
        new /= new[0] + new[1] + new[2]
        x = new

        if mode is PostSelect.NOJUMP:
            keep = ~(e_click | g_click)
        elif mode is PostSelect.JUMP:
            keep = ~g_click
        else:
            keep = None
        if keep is not None and not keep.all():
            x = x[:, keep]
            rows = rows[keep]
        record(s + 1, x)
    return sums, m2, alive


def default_workers():
    value = os.environ.get(WORKERS_ENV, "").strip()
    if value:
        n = int(value)
        if n < 1:
            raise ValueError(f"{WORKERS_ENV} must be a positive integer")
        return n
    return os.cpu_count() or 1


def run_ensemble(config: TrajectoryConfig, params: SystemParams, workers=None):
    """Run ``config.n_traj`` trajectories and reduce them to conditional statistics.

    Trajectories are processed in fixed-size chunks whose partial sums are
    combined in chunk order, so the result is bit-identical for any
    ``workers``.  ``workers`` defaults to ``$NHQUBIT_WORKERS`` or the CPU count.
    """
    workers = default_workers() if workers is None else int(workers)
    bounds = [(a, min(a + CHUNK_SIZE, config.n_traj)) for a in range(0, config.n_traj, CHUNK_SIZE)]
    if workers > 1 and len(bounds) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(bounds))) as pool:
            parts = list(pool.map(_run_chunk, *zip(*[(params, config, a, b) for a, b in bounds])))
    else:
        parts = [_run_chunk(params, config, a, b) for a, b in bounds]

    # merge chunk moments in chunk order (pairwise-stable variance update)
    sums = np.sum([p[0] for p in parts], axis=0)
    alive = np.sum([p[2] for p in parts], axis=0)
    ok = alive > 0
    mean = np.full_like(sums, np.nan)
    mean[ok] = sums[ok] / alive[ok][:, None]
    m2 = np.zeros_like(sums)
    for c_sum, c_m2, c_alive in parts:
        has = c_alive > 0
        c_mean = c_sum[has] / c_alive[has][:, None]
        m2[has] += c_m2[has] + c_alive[has][:, None] * (c_mean - mean[has]) ** 2

    stderr = np.full_like(sums, np.nan)
    n = alive[ok][:, None].astype(float)
    var = np.zeros_like(sums[ok])
    many = alive[ok] > 1
    var[many] = m2[ok][many] / (n[many] - 1)
    stderr[ok] = np.sqrt(var / n)

    return EnsembleStats(
        times=config.times,
        mean_populations=mean,
        survival_fraction=alive / config.n_traj,
        std_error=stderr,
        alive_counts=alive,
        n_traj=config.n_traj,
        mode=config.postselect_mode,
    )


def conditional_populations(stats: EnsembleStats):
    """Normalized conditional populations, the observable compared with the Liouvillian."""
    return stats.mean_populations.copy()
