"""Run configuration, command implementations and result files.

Every command takes a resolved :class:`RunConfig` and an output directory,
writes its files there, and returns a summary dictionary.  Output files carry
a ``meta`` block holding the resolved configuration, the seed, the package
version and the wall-clock runtime.  CSV files stay plain tables (header row
first) and get their metadata from the ``meta.json`` written next to them.
"""
from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import math
import time
from dataclasses import dataclass
from datetime import datetime, timezone
from importlib import metadata
from pathlib import Path

import numpy as np

from .linalg import eig_general, matrix_exp
from .model import (
    LEVELS,
    POPULATION_INDEX,
    SystemParams,
    build_generator,
    build_kraus_set,
    projector,
    vectorize,
)
from .spectral import (
    GAP_TOL,
    biorthogonal_decompose,
    coherence_time,
    detect_eps,
    ep_of_heff,
    sweep_spectrum,
)
from .trajectory import PostSelect, TrajectoryConfig, default_workers, run_ensemble

__all__ = [
    "RunConfig", "ConfigError", "ComparisonReport", "load_config", "resolve_config",
    "run_directory", "check_command", "evolve_populations", "compare_results",
    "cmd_ensemble", "cmd_evolve", "cmd_spectrum", "cmd_sweep", "cmd_ep_find", "cmd_compare",
    "MODE_BUILDER", "ENSEMBLE_COLUMNS", "LIOUVILLE_COLUMNS", "MIN_ALIVE",
]

MODE_BUILDER = {PostSelect.NONE: "full", PostSelect.NOJUMP: "nj", PostSelect.JUMP: "j"}
MIN_ALIVE = 100
SIGMA = 3.0
# deviations this small are floating-point noise, not statistics
FLOAT_FLOOR = 1e-12

ENSEMBLE_COLUMNS = (
    "time", "mean_f", "mean_e", "mean_g", "survival",
    "stderr_f", "stderr_e", "stderr_g", "alive_count",
)
LIOUVILLE_COLUMNS = ("time", "rho_f_norm", "rho_e_norm", "rho_g_norm", "trace")


class ConfigError(ValueError):
    pass


def _version():
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:  # running from a source checkout
        return "0+unknown"


@dataclass(frozen=True)
class RunConfig:
    """Flat, fully resolved configuration of one CLI run."""

    gamma_e: float = 0.2
    gamma_g: float = 4.0
    omega: float = 0.0
    eta_e: float = 1.0
    eta_g: float = 1.0
    dt: float = 1e-3
    t_final: float = 3.0
    n_traj: int = 10_000
    seed: int = 0
    mode: str = "none"
    builder: str | None = None  # None: follow the mode (or "nj" for sweeps)
    omega_min: float = 0.0
    omega_max: float = 3.0
    omega_steps: int = 301

    def __post_init__(self):
        object.__setattr__(self, "mode", PostSelect.parse(self.mode).value)
        if self.builder is not None:
            b = str(self.builder).strip().lower()
            if b not in ("full", "nj", "j"):
                raise ConfigError(f"unknown builder {self.builder!r} (expected full, nj or j)")
            object.__setattr__(self, "builder", b)
        if self.omega_steps < 3:
            raise ConfigError("omega_steps must be at least 3")
        if not self.omega_max > self.omega_min:
            raise ConfigError("omega_max must exceed omega_min")
        # surface parameter errors before any computation starts
        self.params()
        self.trajectory_config()

    def params(self) -> SystemParams:
        return SystemParams(self.gamma_e, self.gamma_g, self.omega, self.eta_e, self.eta_g)

    def trajectory_config(self) -> TrajectoryConfig:
        return TrajectoryConfig(self.dt, self.t_final, self.n_traj, self.seed, self.mode)

    @property
    def omega_grid(self):
        return np.linspace(self.omega_min, self.omega_max, self.omega_steps)

    def evolve_builder(self):
        return self.builder or MODE_BUILDER[PostSelect.parse(self.mode)]

    def sweep_builder(self):
        return self.builder or "nj"

    def to_dict(self):
        return dataclasses.asdict(self)

    def digest(self):
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:12]


_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}


def _coerce(key, raw):
    kind = _FIELDS[key].type
    if isinstance(raw, str):
        raw = raw.strip()
    try:
        if kind == "float":
            return float(raw)
        if kind == "int":
            value = float(raw)
            if value != int(value):
                raise ValueError
            return int(value)
        if kind == "str | None":
            return None if raw in (None, "", "auto", "none") else str(raw)
        return str(raw)
    except (TypeError, ValueError):
        raise ConfigError(f"bad value for {key}: {raw!r}") from None


def _normalize_key(key):
    name = key.strip().lower().replace("-", "_")
    if name not in _FIELDS:
        raise ConfigError(f"unknown config key {key!r}")
    return name


def load_config(path):
    """Read a ``key = value`` text file.  Blank lines and ``#`` comments are skipped."""
    values = {}
    text = Path(path).read_text()
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, raw = line.split("=", 1)
        name = _normalize_key(key)
        values[name] = _coerce(name, raw)
    return values


def resolve_config(file_values=None, overrides=None) -> RunConfig:
    """Merge file values and overrides (overrides win) into a validated config."""
    merged = {}
    for source in (file_values or {}, overrides or {}):
        for key, raw in source.items():
            if raw is None:
                continue
            name = _normalize_key(key)
            merged[name] = _coerce(name, raw)
    try:
        return RunConfig(**merged)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def check_command(command, config: RunConfig):
    """Command-specific validation that must happen before any output is made."""
    if command in ("ensemble", "compare"):
        try:
            build_kraus_set(config.params(), config.dt)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
    if command == "compare":
        mode = PostSelect.parse(config.mode)
        expected = MODE_BUILDER[mode]
        if config.builder is not None and config.builder != expected:
            raise ConfigError(
                f"mode {mode.value!r} must be compared with builder {expected!r}, "
                f"got {config.builder!r}"
            )


def run_directory(base, command, config: RunConfig):
    """``<base>/<command>-<config hash>``, created on demand."""
    path = Path(base) / f"{command}-{config.digest()}"
    path.mkdir(parents=True, exist_ok=True)
    return path


# ---------------------------------------------------------------------------
# output helpers


def _fmt(x):
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".12g")


def _write_csv(path, header, columns):
    rows = zip(*columns)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (complex, np.complexfloating)):
        return {"re": _jsonable(obj.real), "im": _jsonable(obj.imag)}
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isfinite(x):
            return float(format(x, ".12g"))
        return None if math.isnan(x) else ("inf" if x > 0 else "-inf")
    return obj


def _write_json(path, payload):
    with open(path, "w") as fh:
        json.dump(_jsonable(payload), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _meta(command, config: RunConfig, started, **extra):
    meta = {
        "command": command,
        "config": config.to_dict(),
        "seed": config.seed,
        "version": _version(),
        "runtime_s": time.perf_counter() - started,
        "timestamp": datetime.now(timezone.utc).isoformat(timespec="seconds"),
    }
    meta.update(extra)
    return meta


# ---------------------------------------------------------------------------
# computations shared by several commands


def evolve_populations(params: SystemParams, builder, times, rho0=None):
    """Populations of ``exp(L t) rho0`` at each time, shape ``(len(times), 3)``.

    Uses one matrix exponential per time point, so there is no accumulation
    of propagator round-off along the grid.
    """
    gen = build_generator(params, builder)
    v0 = vectorize(projector("f") if rho0 is None else rho0)
    out = np.empty((len(times), 3))
    for i, t in enumerate(times):
        out[i] = (matrix_exp(gen * t) @ v0)[POPULATION_INDEX].real
    return out


@dataclass
class ComparisonReport:
    """Trajectory conditional means against normalized Liouvillian populations.

    The gate keeps times with at least ``MIN_ALIVE`` surviving trajectories.
    ``passed`` holds iff the largest deviation over gated times and
    populations is at most ``3 * max_std_error``.
    """

    deviation: dict
    max_std_error: float
    threshold: float
    passed: bool
    gated_points: int
    survival_deviation: float
    survival_threshold: float
    survival_passed: bool
    runtime_s: float
    seed: int

    def to_dict(self):
        return dataclasses.asdict(self)


def compare_results(stats, liouville_pops, runtime_s=0.0, seed=0, min_alive=MIN_ALIVE):
    """Apply the 3-sigma sup-norm criterion to a finished ensemble.

    The same sup rule is applied to the survival fraction against the trace,
    with the binomial standard error ``sqrt(S (1 - S) / n)`` of the Liouvillian
    trace ``S``.
    """
    trace = liouville_pops.sum(axis=1)
    normalized = liouville_pops / trace[:, None]
    gate = stats.alive_counts >= min_alive
    if not gate.any():
        raise ValueError(f"no time point has {min_alive} or more surviving trajectories")

    diff = np.abs(stats.mean_populations[gate] - normalized[gate])
    deviation = {f"rho_{lv}": float(diff[:, k].max()) for k, lv in enumerate(LEVELS)}
    max_se = float(stats.std_error[gate].max())
    threshold = SIGMA * max_se + FLOAT_FLOOR
    passed = max(deviation.values()) <= threshold

    s = np.clip(trace, 0.0, 1.0)
    binom = np.sqrt(s * (1.0 - s) / stats.n_traj)
    surv_dev = float(np.max(np.abs(stats.survival_fraction - trace)))
    surv_thr = SIGMA * float(binom.max()) + FLOAT_FLOOR
    return ComparisonReport(
        deviation=deviation,
        max_std_error=max_se,
        threshold=threshold,
        passed=bool(passed),
        gated_points=int(gate.sum()),
        survival_deviation=surv_dev,
        survival_threshold=surv_thr,
        survival_passed=bool(surv_dev <= surv_thr),
        runtime_s=runtime_s,
        seed=seed,
    )


def _ensemble_columns(stats):
    m, se = stats.mean_populations, stats.std_error
    return [stats.times, m[:, 0], m[:, 1], m[:, 2], stats.survival_fraction,
            se[:, 0], se[:, 1], se[:, 2], stats.alive_counts.astype(int)]


def _liouville_columns(times, pops):
    trace = pops.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        norm = pops / trace[:, None]
    return [times, norm[:, 0], norm[:, 1], norm[:, 2], trace]


# ---------------------------------------------------------------------------
# commands


def cmd_ensemble(config: RunConfig, out_dir, workers=None):
    started = time.perf_counter()
    out_dir = Path(out_dir)
    check_command("ensemble", config)
    workers = default_workers() if workers is None else workers
    stats = run_ensemble(config.trajectory_config(), config.params(), workers=workers)
    _write_csv(out_dir / "ensemble.csv", ENSEMBLE_COLUMNS, _ensemble_columns(stats))
    _write_json(out_dir / "meta.json", _meta("ensemble", config, started, workers=workers))
    return {"stats": stats, "files": ["ensemble.csv", "meta.json"]}


def cmd_evolve(config: RunConfig, out_dir):
    started = time.perf_counter()
    out_dir = Path(out_dir)
    builder = config.evolve_builder()
    times = config.trajectory_config().times
    pops = evolve_populations(config.params(), builder, times)
    _write_csv(out_dir / "liouville.csv", LIOUVILLE_COLUMNS, _liouville_columns(times, pops))
    _write_json(out_dir / "meta.json", _meta("evolve", config, started, builder=builder))
    return {"times": times, "populations": pops, "files": ["liouville.csv", "meta.json"]}


def _mode_matrix(v):
    return np.asarray(v).reshape(3, 3)


def cmd_spectrum(config: RunConfig, out_dir):
    started = time.perf_counter()
    out_dir = Path(out_dir)
    builder = config.evolve_builder()
    params = config.params()
    gen = build_generator(params, builder)
    dec = eig_general(gen)
    defective = dec.is_defective
    left = dec.left
    if not defective:
        left = biorthogonal_decompose(gen).left
    modes = [
        {
            "eigenvalue": complex(lam),
            "right": _mode_matrix(dec.right[:, k]),
            "left": _mode_matrix(left[:, k]),
            "zero_mode": bool(abs(lam) <= 1e-9),
        }
        for k, lam in enumerate(dec.eigenvalues)
    ]
    extra = {"builder": builder, "defective": defective,
             "zero_modes": int(sum(m["zero_mode"] for m in modes)),
             "left_normalization": "unit" if defective else "biorthogonal"}
    t_c = coherence_time(params)
    extra["coherence_time"] = t_c
    payload = {"eigenvalues": dec.eigenvalues, "modes": modes, **extra,
               "meta": _meta("spectrum", config, started, builder=builder)}
    _write_json(out_dir / "spectrum.json", payload)
    _write_json(out_dir / "meta.json", payload["meta"])
    return {"eigenvalues": dec.eigenvalues, "files": ["spectrum.json", "meta.json"], **extra}


def _sweep(config):
    return sweep_spectrum(config.params(), config.omega_grid, config.sweep_builder())


def cmd_sweep(config: RunConfig, out_dir):
    started = time.perf_counter()
    out_dir = Path(out_dir)
    sweep = _sweep(config)
    n = sweep.branches.shape[1]
    header = ["omega"]
    columns = [sweep.omega_grid]
    for k in range(n):
        header += [f"branch_{k}_re", f"branch_{k}_im"]
        columns += [sweep.branches[:, k].real, sweep.branches[:, k].imag]
    _write_csv(out_dir / "sweep.csv", header, columns)
    meta = _meta("sweep", config, started, builder=sweep.builder, ties=list(sweep.ties))
    _write_json(out_dir / "meta.json", meta)
    return {"sweep": sweep, "files": ["sweep.csv", "meta.json"]}


def cmd_ep_find(config: RunConfig, out_dir):
    started = time.perf_counter()
    out_dir = Path(out_dir)
    sweep = _sweep(config)
    reports = detect_eps(sweep)
    params = config.params()
    closed = ep_of_heff(params) if params.gamma_g >= params.gamma_e else None
    payload = {
        "builder": sweep.builder,
        "eps": [r.to_dict() for r in reports],
        "heff_ep": closed,
        "gap_tol": GAP_TOL,
        "meta": _meta("ep-find", config, started, builder=sweep.builder),
    }
    _write_json(out_dir / "eps.json", payload)
    _write_json(out_dir / "meta.json", payload["meta"])
    return {"eps": reports, "files": ["eps.json", "meta.json"]}


def cmd_compare(config: RunConfig, out_dir, workers=None):
    """Run trajectories and the matching Liouvillian on one config and compare them."""
    started = time.perf_counter()
    out_dir = Path(out_dir)
    check_command("compare", config)
    expected = MODE_BUILDER[PostSelect.parse(config.mode)]
    workers = default_workers() if workers is None else workers
    stats = run_ensemble(config.trajectory_config(), config.params(), workers=workers)
    pops = evolve_populations(config.params(), expected, stats.times)
    report = compare_results(stats, pops, time.perf_counter() - started, config.seed)

    _write_csv(out_dir / "ensemble.csv", ENSEMBLE_COLUMNS, _ensemble_columns(stats))
    _write_csv(out_dir / "liouville.csv", LIOUVILLE_COLUMNS, _liouville_columns(stats.times, pops))
    meta = _meta("compare", config, started, builder=expected, workers=workers)
    _write_json(out_dir / "report.json", {**report.to_dict(), "meta": meta})
    _write_json(out_dir / "meta.json", meta)
    return {"report": report, "stats": stats, "populations": pops,
            "files": ["ensemble.csv", "liouville.csv", "report.json", "meta.json"]}
