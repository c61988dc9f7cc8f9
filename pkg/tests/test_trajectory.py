import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats as sps

from nhqubit.model import SystemParams, build_kraus_set, projector
from nhqubit.trajectory import (
    ConsistencyError,
    Event,
    PostSelect,
    TrajectoryConfig,
    conditional_populations,
    from_real_coords,
    run_ensemble,
    run_trajectory,
    step,
    to_real_coords,
    trajectory_rng,
)
from nhqubit import trajectory

BASE = SystemParams(gamma_e=0.2, gamma_g=4.0)


def cfg(**kw):
    kw.setdefault("t_final", 1.0)
    kw.setdefault("n_traj", 200)
    return TrajectoryConfig(**kw)


class TestConfig:
    def test_defaults(self):
        c = TrajectoryConfig()
        assert c.n_steps == 3000 and c.times[-1] == pytest.approx(3.0)
        np.testing.assert_array_equal(c.initial_state, projector("f"))

    @pytest.mark.parametrize("bad", [
        dict(dt=0.0), dict(t_final=1.0005, dt=1e-3), dict(n_traj=0), dict(seed=-1),
        dict(postselect_mode="maybe"), dict(initial_state=np.diag([0.5, 0.2, 0])),
    ])
    def test_rejects(self, bad):
        with pytest.raises(ValueError):
            TrajectoryConfig(**bad)

    def test_mode_parsing(self):
        assert PostSelect.parse("No-Jump") is PostSelect.NOJUMP
        assert PostSelect.parse(None) is PostSelect.NONE


class TestStep:
    def test_ground_state_absorbing(self):
        ks = build_kraus_set(BASE, 1e-3)
        for u in (0.0, 0.5, 0.999999):
            rho, ev = step(projector("g"), ks, u)
            assert ev is Event.NO_CLICK
            np.testing.assert_allclose(rho, projector("g"), atol=1e-15)

    def test_e_click_from_f(self):
        ks = build_kraus_set(BASE, 1e-3)
        rho, ev = step(projector("f"), ks, 0.5 * 0.2e-3)
        assert ev is Event.E_CLICK
        np.testing.assert_allclose(rho, projector("e"), atol=1e-15)
        _, ev = step(projector("f"), ks, 0.2e-3 * 1.01)
        assert ev is Event.NO_CLICK

    def test_lost_photon_never_clicks(self):
        ks = build_kraus_set(BASE.replace(eta_e=0.0), 1e-3)
        rho, ev = step(projector("f"), ks, 0.0)
        assert ev is Event.NO_CLICK
        assert rho[1, 1].real == pytest.approx(0.2e-3)

    def test_inconsistent_kraus_set_detected(self):
        ks = build_kraus_set(BASE, 1e-3)
        broken = trajectory.KrausSet(ks.dt, 2 * ks.k_00_00, ks.k_00_01, ks.k_01_00,
                                     ks.k_10_00, ks.k_00_10, ks.half_drive, ks.params)
        with pytest.raises(ConsistencyError):
            step(projector("f"), broken, 0.3)


class TestSingleTrajectory:
    def test_staircase(self):
        rec = run_trajectory(cfg(t_final=3.0), BASE, traj_index=5)
        kinds = [ev for _, ev in rec.clicks.events]
        assert kinds in ([], [Event.E_CLICK], [Event.E_CLICK, Event.G_CLICK])
        # every population row is a basis state
        assert np.all(np.isclose(rec.populations.max(axis=1), 1.0))
        first_e = rec.clicks.first(Event.E_CLICK)
        if first_e is not None:
            assert np.all(rec.populations[: first_e + 1, 0] == 1.0)
            assert rec.populations[first_e + 1, 1] == 1.0

    def test_closed_system(self):
        p = SystemParams(gamma_e=0.0, gamma_g=0.0, omega=2.0)
        rec = run_trajectory(cfg(), p)
        assert rec.clicks.events == []
        np.testing.assert_allclose(rec.populations[:, 0], np.cos(2.0 * rec.times) ** 2, atol=1e-12)
        rec0 = run_trajectory(cfg(), p.replace(omega=0.0))
        assert np.all(rec0.populations[:, 0] == 1.0)

    def test_deterministic(self):
        a = run_trajectory(cfg(seed=3), BASE.replace(omega=2.0, eta_e=0.5), 11)
        b = run_trajectory(cfg(seed=3), BASE.replace(omega=2.0, eta_e=0.5), 11)
        np.testing.assert_array_equal(a.populations, b.populations)
        assert a.clicks.events == b.clicks.events

    def test_normalized(self):
        rec = run_trajectory(cfg(), BASE.replace(omega=3.0, eta_e=0.4, eta_g=0.6), 2)
        np.testing.assert_allclose(rec.populations.sum(axis=1), 1.0, atol=1e-9)
        assert rec.populations.min() >= -1e-12

    def test_first_click_waiting_time(self):
        # Ω = 0, η = 1: first D_e click is exponential with rate Γe
        c = TrajectoryConfig(dt=1e-3, t_final=3.0, n_traj=800, seed=1)
        times = []
        for j in range(c.n_traj):
            draws = trajectory_rng(c.seed, j).random(c.n_steps)
            hit = np.flatnonzero(draws < 0.2e-3)
            if hit.size:
                times.append((hit[0] + 1) * c.dt)
        # censored at t_final: compare the conditional distribution
        t = np.array(times)
        cdf = lambda x: (1 - np.exp(-0.2 * x)) / (1 - np.exp(-0.2 * 3.0))
        assert sps.kstest(t, cdf).statistic < 0.06


class TestRealCoordinates:
    @given(st.integers(0, 2**31))
    def test_round_trip(self, seed):
        rng = np.random.default_rng(seed)
        a = rng.standard_normal((3, 3)) + 1j * rng.standard_normal((3, 3))
        h = a + a.conj().T
        np.testing.assert_allclose(from_real_coords(to_real_coords(h)), h, atol=1e-14)


class TestEnsemble:
    def test_single_trajectory_matches_record(self):
        p = BASE.replace(omega=2.0, eta_e=0.6, eta_g=0.8)
        c = cfg(n_traj=1, seed=9)
        stats = run_ensemble(c, p, workers=1)
        rec = run_trajectory(c, p, 0)
        # the batched engine runs in real coordinates; agreement is to round-off
        np.testing.assert_allclose(stats.mean_populations, rec.populations, atol=1e-12)
        assert np.all(stats.std_error == 0)

    @pytest.mark.parametrize("mode", ["none", "jump", "nojump"])
    def test_engine_matches_scalar_path(self, mode):
        p = BASE.replace(omega=2.0, eta_e=0.7, eta_g=0.8)
        c = cfg(n_traj=30, postselect_mode=mode, seed=4)
        stats = run_ensemble(c, p, workers=1)
        recs = [run_trajectory(c, p, j) for j in range(c.n_traj)]
        alive = np.ones((c.n_steps + 1, c.n_traj), dtype=bool)
        kill = {"none": (), "jump": (Event.G_CLICK,), "nojump": (Event.E_CLICK, Event.G_CLICK)}[mode]
        for j, r in enumerate(recs):
            s = r.clicks.first(*kill) if kill else None
            if s is not None:
                alive[s + 1:, j] = False
        np.testing.assert_array_equal(stats.alive_counts, alive.sum(axis=1))
        pops = np.stack([r.populations for r in recs], axis=1)
        ok = stats.valid
        ref = (pops * alive[..., None]).sum(axis=1)[ok] / alive.sum(axis=1)[ok][:, None]
        np.testing.assert_allclose(stats.mean_populations[ok], ref, atol=1e-11)

    def test_block_draws_equal_single_draw(self):
        a = trajectory_rng(5, 17).random(1300)
        g = trajectory_rng(5, 17)
        b = np.concatenate([g.random(512), g.random(512), g.random(276)])
        np.testing.assert_array_equal(a, b)

    def test_streams_differ(self):
        assert trajectory_rng(0, 0).random() != trajectory_rng(0, 1).random()
        assert trajectory_rng(0, 0).random() != trajectory_rng(1, 0).random()

    def test_workers_bit_identical(self, monkeypatch):
        monkeypatch.setattr(trajectory, "CHUNK_SIZE", 64)
        c = cfg(n_traj=300, postselect_mode="jump", seed=2, t_final=0.5)
        p = BASE.replace(omega=2.0, eta_g=0.75)
        a = run_ensemble(c, p, workers=1)
        b = run_ensemble(c, p, workers=2)
        for name in ("mean_populations", "std_error", "alive_counts", "survival_fraction"):
            np.testing.assert_array_equal(getattr(a, name), getattr(b, name))

    def test_workers_env(self, monkeypatch):
        monkeypatch.setenv(trajectory.WORKERS_ENV, "3")
        assert trajectory.default_workers() == 3
        monkeypatch.setenv(trajectory.WORKERS_ENV, "0")
        with pytest.raises(ValueError):
            trajectory.default_workers()
        monkeypatch.delenv(trajectory.WORKERS_ENV)
        assert trajectory.default_workers() >= 1

    def test_mode_none_invariants(self):
        stats = run_ensemble(cfg(n_traj=500), BASE.replace(omega=1.0, eta_e=0.5), workers=1)
        assert np.all(stats.survival_fraction == 1.0)
        np.testing.assert_allclose(stats.mean_populations.sum(axis=1), 1.0, atol=1e-12)
        np.testing.assert_array_equal(conditional_populations(stats), stats.mean_populations)

    def test_nojump_perfect_detection_stays_in_fe(self):
        stats = run_ensemble(cfg(n_traj=300, postselect_mode="nojump"), BASE.replace(omega=2.0), workers=1)
        ok = stats.valid
        assert np.max(np.abs(stats.mean_populations[ok, 2])) <= 1e-12
        assert np.all(np.diff(stats.survival_fraction) <= 0)

    def test_jump_perfect_detection_no_ground(self):
        stats = run_ensemble(cfg(n_traj=300, postselect_mode="jump"), BASE.replace(omega=2.0), workers=1)
        assert np.max(np.abs(stats.mean_populations[stats.valid, 2])) <= 1e-12

    def test_jump_survives_longer_than_nojump(self):
        p = BASE.replace(omega=2.0, eta_e=0.8, eta_g=0.9)
        j = run_ensemble(cfg(n_traj=400, postselect_mode="jump", seed=8), p, workers=1)
        nj = run_ensemble(cfg(n_traj=400, postselect_mode="nojump", seed=8), p, workers=1)
        assert np.all(j.survival_fraction >= nj.survival_fraction)

    def test_closed_system_survival(self):
        p = SystemParams(gamma_e=0.0, gamma_g=0.0, omega=1.0)
        stats = run_ensemble(cfg(n_traj=50, postselect_mode="nojump"), p, workers=1)
        assert np.all(stats.survival_fraction == 1.0)

    def test_extinct_population_is_marked(self):
        p = SystemParams(gamma_e=90.0, gamma_g=90.0, omega=0.0)
        c = TrajectoryConfig(dt=1e-3, t_final=0.5, n_traj=20, postselect_mode="nojump")
        stats = run_ensemble(c, p, workers=1)
        assert not stats.valid[-1]
        assert np.isnan(stats.mean_populations[-1]).all()
        assert stats.alive_counts[-1] == 0

    @settings(max_examples=10)
    @given(st.integers(1, 40), st.integers(0, 2**63))
    def test_stderr_formula(self, n, seed):
        c = cfg(n_traj=n, seed=seed, t_final=0.2)
        p = BASE.replace(omega=3.0, eta_e=0.5)
        stats = run_ensemble(c, p, workers=1)
        pops = np.stack([run_trajectory(c, p, j).populations for j in range(n)], axis=1)
        if n > 1:
            ref = pops.std(axis=1, ddof=1) / np.sqrt(n)
        else:
            ref = np.zeros_like(pops[:, 0])
        np.testing.assert_allclose(stats.std_error, ref, atol=1e-10)
