import numpy as np
import pytest

import vortrace as vt
from vortrace import dynamics

from conftest import BENCH_CIRCULATIONS, BENCH_POSITIONS, bench_system


def mp_vortex_velocities(circulations, positions):
    """Extended-precision term-by-term evaluation of the mutual velocities."""
    import mpmath as mp

    mp.mp.dps = 50
    zs = [mp.mpc(x, y) for x, y in positions]
    gam = [mp.mpf(g) for g in circulations]
    out = []
    for v in range(len(zs)):
        s = mp.mpc(0)
        for j in range(len(zs)):
            if j != v:
                s += gam[j] / (zs[v] - zs[j])
        w = mp.conj(s / (2 * mp.pi * mp.mpc(0, 1)))
        out.append((float(w.real), float(w.imag)))
    return np.array(out)


def mp_tracer_velocity(circulations, positions, zp):
    import mpmath as mp

    mp.mp.dps = 50
    s = mp.mpc(0)
    for g, (x, y) in zip(circulations, positions):
        s += mp.mpf(g) / (mp.mpc(*zp) - mp.mpc(x, y))
    w = mp.conj(s / (2 * mp.pi * mp.mpc(0, 1)))
    return np.array([float(w.real), float(w.imag)])


class TestVortexVelocities:
    def test_single_vortex_is_stationary(self):
        vs = vt.VortexSystem([5.0], [[0.3, -0.7]])
        assert np.all(vt.vortex_velocities(vs) == 0.0)

    def test_symmetric_pair_hand_value(self):
        vs = vt.VortexSystem([2 * np.pi, 2 * np.pi], [[1.0, 0.0], [-1.0, 0.0]])
        vel = vt.vortex_velocities(vs)
        np.testing.assert_allclose(vel, [[0.0, 0.5], [0.0, -0.5]], atol=1e-15)

    def test_benchmark_against_extended_precision(self):
        vel = vt.vortex_velocities(bench_system())
        # frozen from the mpmath oracle below
        expected = np.array(
            [
                (0.1400563499208679, 0.48383102699936182),
                (0.32486332501698636, -0.16945320411548856),
                (-0.010610329539459689, 0.13793428401297596),
                (-0.18948800283411539, -0.13968186770182814),
            ]
        )
        np.testing.assert_allclose(vel, expected, rtol=0, atol=1e-15)
        oracle = mp_vortex_velocities(BENCH_CIRCULATIONS, BENCH_POSITIONS)
        np.testing.assert_allclose(vel, oracle, rtol=0, atol=1e-15)

    def test_collision_raises(self):
        with pytest.raises(vt.SingularConfiguration):
            vt.VortexSystem([1.0, 1.0], [[0.0, 0.0], [1e-8, 0.0]])

    def test_translation_and_rotation_equivariance(self):
        rng = np.random.default_rng(11)
        for _ in range(25):
            n = rng.integers(2, 6)
            gam = rng.uniform(-3, 3, n)
            pos = rng.uniform(-2, 2, (n, 2))
            try:
                base = vt.vortex_velocities(vt.VortexSystem(gam, pos))
            except vt.SingularConfiguration:
                continue
            shift = rng.uniform(-5, 5, 2)
            shifted = vt.vortex_velocities(vt.VortexSystem(gam, pos + shift))
            np.testing.assert_allclose(shifted, base, rtol=1e-12, atol=1e-13)
            theta = rng.uniform(0, 2 * np.pi)
            rot = np.array(
                [[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]]
            )
            rotated = vt.vortex_velocities(vt.VortexSystem(gam, pos @ rot.T))
            np.testing.assert_allclose(rotated, base @ rot.T, rtol=1e-12, atol=1e-12)


class TestTracerVelocities:
    def test_unit_circle_tangent(self):
        vs = vt.VortexSystem([2 * np.pi], [[0.0, 0.0]])
        vel = vt.tracer_velocities(vs, vt.TracerSet([[1.0, 0.0]]))
        np.testing.assert_allclose(vel, [[0.0, 1.0]], atol=1e-15)

    def test_zero_circulation_gives_zero_velocity(self):
        vs = vt.VortexSystem([0.0, 0.0], [[1.0, 0.0], [-1.0, 0.0]])
        ts = vt.TracerSet([[0.2, 0.4], [3.0, -2.0]])
        assert np.all(vt.tracer_velocities(vs, ts) == 0.0)

    def test_benchmark_tracer_at_origin(self):
        vel = vt.tracer_velocities(bench_system(), vt.TracerSet([[0.0, 0.0]]))
        expected = np.array([[0.46522214134554021, -0.29994585428857198]])
        np.testing.assert_allclose(vel, expected, rtol=0, atol=1e-15)
        oracle = mp_tracer_velocity(BENCH_CIRCULATIONS, BENCH_POSITIONS, (0.0, 0.0))
        np.testing.assert_allclose(vel[0], oracle, rtol=0, atol=1e-15)

    def test_tracer_on_vortex_raises(self):
        vs = vt.VortexSystem([1.0], [[0.5, 0.5]])
        with pytest.raises(vt.SingularConfiguration):
            vt.tracer_velocities(vs, vt.TracerSet([[0.5, 0.5]]))


class TestConservedQuantities:
    def test_symmetric_pair(self):
        q = vt.conserved_quantities(vt.VortexSystem([1.0, 1.0], [[1, 0], [-1, 0]]))
        assert q.impulse_x == 0.0
        assert q.impulse_y == 0.0
        assert q.angular_impulse == 2.0
        np.testing.assert_allclose(q.hamiltonian, -np.log(2) / (2 * np.pi), rtol=1e-15)

    def test_single_vortex(self):
        q = vt.conserved_quantities(vt.VortexSystem([3.0], [[2.0, -1.0]]))
        assert q.hamiltonian == 0.0
        np.testing.assert_allclose(q.angular_impulse, 3.0 * 5.0, rtol=1e-15)

    def test_benchmark_against_extended_precision(self):
        q = vt.conserved_quantities(bench_system())
        np.testing.assert_allclose(q.hamiltonian, -6.5435329793576258, rtol=1e-14)
        np.testing.assert_allclose(q.impulse_x, -6.5, rtol=1e-14)
        np.testing.assert_allclose(q.impulse_y, 11.5, rtol=1e-14)
        np.testing.assert_allclose(q.angular_impulse, 61.5, rtol=1e-14)


class TestIntegrate:
    def test_corotating_pair_matches_closed_form(self):
        # equal pair at +-d rotates about the origin at Gamma/(4 pi d^2)
        gamma = 2 * np.pi
        vs = vt.VortexSystem([gamma, gamma], [[1.0, 0.0], [-1.0, 0.0]])
        omega = gamma / (4 * np.pi)
        period = 2 * np.pi / omega
        grid = vt.TimeGrid(0.0, 0.01, int(round(10 * period / 0.01)) + 1)
        rec = vt.integrate(vs, None, grid)
        ang = omega * grid.times()
        closed = np.stack([np.cos(ang), np.sin(ang)], axis=1)
        assert np.abs(rec.vortex_history[:, 0, :] - closed).max() < 1e-6

    def test_single_vortex_tracer_circle(self):
        gamma = 2 * np.pi
        r = 1.5
        vs = vt.VortexSystem([gamma], [[0.0, 0.0]])
        period = 2 * np.pi * (2 * np.pi * r**2) / gamma
        grid = vt.TimeGrid(0.0, 0.01, int(round(period / 0.01)) + 1)
        rec = vt.integrate(vs, vt.TracerSet([[r, 0.0]]), grid)
        omega = gamma / (2 * np.pi * r**2)
        ang = omega * grid.times()
        closed = r * np.stack([np.cos(ang), np.sin(ang)], axis=1)
        assert np.abs(rec.tracer_history[:, 0, :] - closed).max() < 1e-6
        # the vortex itself never moves
        assert np.all(rec.vortex_history[:, 0, :] == [0.0, 0.0])

    def test_benchmark_step_halving_agreement(self):
        def final_state(h):
            grid = vt.TimeGrid(0.0, h, int(round(100.0 / h)) + 1)
            return vt.integrate(bench_system(), None, grid).vortex_history[-1]

        diff = np.abs(final_state(0.01) - final_state(0.005)).max()
        assert diff < 1e-6

    def test_one_way_coupling_bit_identical(self, medium_record):
        grid = vt.TimeGrid(0.0, 0.01, 2001)
        alone = vt.integrate(bench_system(), None, grid)
        ts = vt.TracerSet(medium_record.tracer_history[0])
        coupled = vt.integrate(bench_system(), ts, grid)
        assert np.array_equal(alone.vortex_history, coupled.vortex_history)

    def test_reversibility(self):
        grid = vt.TimeGrid(0.0, 0.01, 1001)
        ts = vt.TracerSet([[0.0, 0.0], [1.0, 2.0]])
        fwd = vt.integrate(bench_system(), ts, grid)
        # reversing time is equivalent to negating every circulation
        back = vt.integrate(
            vt.VortexSystem(-BENCH_CIRCULATIONS, fwd.vortex_history[-1]),
            vt.TracerSet(fwd.tracer_history[-1]),
            grid,
        )
        assert np.abs(back.vortex_history[-1] - BENCH_POSITIONS).max() < 1e-6
        assert np.abs(back.tracer_history[-1] - ts.positions).max() < 1e-6

    def test_step_halving_convergence_order(self):
        # coarse steps so truncation error dominates roundoff
        gamma = 2 * np.pi
        omega = gamma / (4 * np.pi)
        period = 2 * np.pi / omega

        def max_error(h):
            n = int(round(period / h)) + 1
            vs = vt.VortexSystem([gamma, gamma], [[1.0, 0.0], [-1.0, 0.0]])
            rec = vt.integrate(vs, None, vt.TimeGrid(0.0, h, n))
            ang = omega * rec.grid.times()
            closed = np.stack([np.cos(ang), np.sin(ang)], axis=1)
            return np.abs(rec.vortex_history[:, 0, :] - closed).max()

        e1 = max_error(period / 64)
        e2 = max_error(period / 128)
        assert e1 / e2 >= 2**4

    def test_conservation_drift(self):
        grid = vt.TimeGrid(0.0, 0.01, 10001)
        rec = vt.integrate(bench_system(), None, grid)
        q0 = vt.conserved_quantities(bench_system())
        worst = 0.0
        for k in range(0, grid.nt, 100):
            q = vt.conserved_quantities(
                vt.VortexSystem(BENCH_CIRCULATIONS, rec.vortex_history[k])
            )
            for a, b in zip(q, q0):
                worst = max(worst, abs(a - b) / abs(b))
        assert worst <= 1e-6

    def test_singular_configuration_reports_time(self, monkeypatch):
        # this triple's minimum pairwise distance dips from 1.12 to 0.58
        # within ten time units; a raised tolerance turns that into a
        # deterministic collision
        monkeypatch.setattr(dynamics, "COLLISION_TOLERANCE", 0.6)
        vs = vt.VortexSystem(
            [2.96416063, 1.68714301, -0.08678917],
            [[-0.23211481, 1.13258672], [-1.23955538, 0.62525627], [0.86746387, 0.89758914]],
        )
        grid = vt.TimeGrid(0.0, 0.01, 1001)
        with pytest.raises(vt.SingularConfiguration) as err:
            vt.integrate(vs, None, grid)
        assert "t=" in str(err.value)


class TestLyapunov:
    def test_integrable_pair_has_zero_exponent(self):
        vs = vt.VortexSystem([2 * np.pi, 2 * np.pi], [[1.0, 0.0], [-1.0, 0.0]])
        lam = vt.lyapunov_max(vs, 1e4, 1.0)
        assert abs(lam) < 0.005

    def test_three_vortices_below_chaos_threshold(self):
        vs = vt.VortexSystem(
            [1.0, 2.0, 3.0], [[1.0, 0.0], [-0.8, 0.6], [0.1, -1.1]]
        )
        lam = vt.lyapunov_max(vs, 1e4, 1.0)
        assert abs(lam) < 0.005

    def test_rejects_bad_horizon(self):
        with pytest.raises(ValueError):
            vt.lyapunov_max(bench_system(), 0.5, 1.0)
