import numpy as np
import pytest

import vortrace as vt
from vortrace import signals


def make_ensemble(values, h=0.01, provenance="raw"):
    arr = np.asarray(values, dtype=np.float64)
    grid = vt.TimeGrid(0.0, h, arr.shape[0])
    return signals.TrajectoryEnsemble(grid, arr, provenance)


def single_path(xy):
    return np.asarray(xy, dtype=np.float64).reshape(-1, 1, 2)


class TestAddNoise:
    def test_zero_sigma_is_identity(self, medium_raw):
        out = signals.add_noise(medium_raw, 0.0, seed=1)
        assert np.array_equal(out.positions, medium_raw.positions)
        assert out.provenance == "noisy"

    def test_same_seed_same_output(self, medium_raw):
        a = signals.add_noise(medium_raw, 0.01, seed=9)
        b = signals.add_noise(medium_raw, 0.01, seed=9)
        assert np.array_equal(a.positions, b.positions)
        c = signals.add_noise(medium_raw, 0.01, seed=10)
        assert not np.array_equal(a.positions, c.positions)

    def test_noise_statistics(self):
        # law-of-large-numbers check on the generator
        nt, npart, sigma = 6000, 10, 0.01
        ens = make_ensemble(np.zeros((nt, npart, 2)))
        noisy = signals.add_noise(ens, sigma, seed=77)
        delta = noisy.positions - ens.positions
        n = delta.size
        assert n >= 1e5
        assert abs(delta.mean()) <= 3 * sigma / np.sqrt(n)
        assert abs(delta.std() - sigma) <= 0.05 * sigma

    def test_requires_raw_input(self, medium_raw):
        noisy = signals.add_noise(medium_raw, 0.01, seed=1)
        with pytest.raises(ValueError):
            signals.add_noise(noisy, 0.01, seed=1)


class TestGaussianSmooth:
    def test_constant_path_unchanged(self):
        ens = make_ensemble(np.tile([1.5, -2.5], (200, 1, 1)))
        out = signals.gaussian_smooth(ens, 5.0)
        np.testing.assert_allclose(out.positions, ens.positions, atol=1e-14)
        assert out.provenance == "smoothed"

    def test_linear_path_unchanged_in_interior(self):
        t = np.arange(400) * 0.01
        path = single_path(np.stack([2.0 * t, -0.5 * t], axis=1))
        out = signals.gaussian_smooth(make_ensemble(path), 5.0)
        radius = int(np.ceil(4 * 5.0))
        interior = slice(radius, 400 - radius)
        assert np.abs(out.positions[interior] - path[interior]).max() < 1e-12

    def test_noise_reduction_on_sine(self):
        rng = np.random.default_rng(5)
        t = np.arange(4000) * 0.01
        clean = np.stack([np.sin(0.5 * t), np.cos(0.5 * t)], axis=1)
        noisy = clean + rng.normal(0.0, 0.01, clean.shape)
        out = signals.gaussian_smooth(make_ensemble(single_path(noisy)), 5.0)
        rms_before = np.sqrt(((noisy - clean) ** 2).mean())
        rms_after = np.sqrt(((out.positions[:, 0, :] - clean) ** 2).mean())
        assert rms_before / rms_after >= 3.0

    def test_linearity(self):
        rng = np.random.default_rng(8)
        x = rng.normal(size=(300, 2, 2))
        y = rng.normal(size=(300, 2, 2))
        sx = signals.gaussian_smooth(make_ensemble(x), 4.0).positions
        sy = signals.gaussian_smooth(make_ensemble(y), 4.0).positions
        combo = signals.gaussian_smooth(make_ensemble(2.0 * x - 3.0 * y), 4.0).positions
        np.testing.assert_allclose(combo, 2.0 * sx - 3.0 * sy, atol=1e-12)

    def test_short_grid_rejected(self):
        ens = make_ensemble(np.zeros((10, 1, 2)))
        with pytest.raises(vt.GridTooShort):
            signals.gaussian_smooth(ens, 5.0)


class TestFdVelocity:
    def test_constant_gives_zero(self):
        ens = make_ensemble(np.tile([0.7, 0.9], (50, 1, 1)))
        vel = signals.fd_velocity(ens)
        # edge stencil coefficients cancel only up to roundoff
        assert np.abs(vel.velocities).max() < 1e-12

    def test_quartic_exact(self):
        # the stencils are exact for polynomials up to degree four
        h = 0.1
        t = np.arange(25) * h
        path = single_path(np.stack([t**4, t**3 - 2.0 * t], axis=1))
        vel = signals.fd_velocity(make_ensemble(path, h=h))
        expected = np.stack([4.0 * t**3, 3.0 * t**2 - 2.0], axis=1)
        np.testing.assert_allclose(vel.velocities[:, 0, :], expected, atol=1e-10)
        k = int(round(1.0 / h))
        assert t[k] == pytest.approx(1.0)
        assert vel.velocities[k, 0, 0] == pytest.approx(4.0, abs=1e-12)

    def test_matches_advection_field_on_circular_orbit(self):
        # tracer on a circular orbit: derivative of the sampled path should
        # match the induced velocity field to fourth order
        gamma, r, h = 2 * np.pi, 1.0, 0.01
        omega = gamma / (2 * np.pi * r**2)
        t = np.arange(2000) * h
        path = single_path(r * np.stack([np.cos(omega * t), np.sin(omega * t)], axis=1))
        vel = signals.fd_velocity(make_ensemble(path, h=h))
        vs = vt.VortexSystem([gamma], [[0.0, 0.0]])
        worst = 0.0
        for k in range(0, 2000, 50):
            analytic = vt.tracer_velocities(vs, vt.TracerSet(path[k]))
            worst = max(worst, np.abs(vel.velocities[k, 0, :] - analytic[0]).max())
        assert worst < 1e-8  # h^4 * |f^(5)| / 30 with unit frequency

    def test_convergence_order(self):
        def max_err(h):
            t = np.arange(int(round(2.0 / h)) + 1) * h
            path = single_path(np.stack([np.sin(t), np.cos(t)], axis=1))
            vel = signals.fd_velocity(make_ensemble(path, h=h))
            expected = np.stack([np.cos(t), -np.sin(t)], axis=1)
            return np.abs(vel.velocities[2:-2, 0, :] - expected[2:-2]).max()

        assert max_err(0.02) / max_err(0.01) >= 2**4

    def test_needs_five_samples(self):
        with pytest.raises(vt.GridTooShort):
            signals.fd_velocity(make_ensemble(np.zeros((4, 1, 2))))


def direct_autocorr_magnitude(z, max_lag):
    """Reference biased estimator evaluated with explicit loops."""
    z = z - z.mean()
    var = np.mean(np.abs(z) ** 2)
    out = np.empty(max_lag + 1)
    for lag in range(max_lag + 1):
        acc = 0.0 + 0.0j
        for k in range(len(z) - lag):
            acc += z[k] * np.conj(z[k + lag])
        out[lag] = np.abs(acc) / (len(z) * var)
    return out


class TestAutocorrelation:
    def test_lag_zero_is_one(self, medium_raw):
        curve = signals.autocorrelation(medium_raw, 0, 100)
        assert curve.values[0] == 1.0
        assert curve.values.max() <= 1.0 + 1e-9

    def test_matches_direct_evaluation(self):
        rng = np.random.default_rng(3)
        path = rng.normal(size=(160, 1, 2)).cumsum(axis=0)
        ens = make_ensemble(path)
        curve = signals.autocorrelation(ens, 0, 40)
        z = path[:, 0, 0] + 1j * path[:, 0, 1]
        np.testing.assert_allclose(curve.values, direct_autocorr_magnitude(z, 40), atol=1e-10)

    def test_white_noise_decorrelates_immediately(self):
        rng = np.random.default_rng(12)
        ens = make_ensemble(rng.normal(size=(10000, 1, 2)))
        curve = signals.autocorrelation(ens, 0, 200)
        assert np.all(curve.values[1:] < 0.05)

    def test_slow_rotation_monotone_head(self):
        # slow pure rotation decays linearly through the estimator window
        t = np.arange(2000) * 0.01
        theta = 0.05 * t
        path = single_path(np.stack([np.cos(theta), np.sin(theta)], axis=1))
        curve = signals.autocorrelation(make_ensemble(path), 0, 1999)
        head = curve.values[: 200]
        assert np.all(np.diff(head) <= 1e-12)

    def test_translation_and_rotation_invariance(self):
        rng = np.random.default_rng(21)
        path = rng.normal(size=(300, 1, 2)).cumsum(axis=0)
        base = signals.autocorrelation(make_ensemble(path), 0, 60).values
        shifted = signals.autocorrelation(make_ensemble(path + [4.0, -7.0]), 0, 60).values
        np.testing.assert_allclose(shifted, base, atol=1e-9)
        theta = 1.1
        rot = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
        rotated = signals.autocorrelation(make_ensemble(path @ rot.T), 0, 60).values
        np.testing.assert_allclose(rotated, base, atol=1e-9)

    def test_degenerate_signal_rejected(self):
        ens = make_ensemble(np.tile([1.0, 1.0], (50, 1, 1)))
        with pytest.raises(vt.DegenerateSignal):
            signals.autocorrelation(ens, 0, 10)

    def test_max_lag_validated(self, medium_raw):
        with pytest.raises(ValueError):
            signals.autocorrelation(medium_raw, 0, medium_raw.grid.nt)


class TestDecorrelationTime:
    def test_white_noise_gives_one_step(self):
        rng = np.random.default_rng(14)
        ens = make_ensemble(rng.normal(size=(5000, 1, 2)))
        assert signals.decorrelation_time(ens, 0.2, 1000) == pytest.approx(0.01)

    def test_minimum_over_tracers(self):
        rng = np.random.default_rng(15)
        nt = 4000
        t = np.arange(nt) * 0.01
        fast = rng.normal(size=(nt, 2))  # decorrelates at one lag
        slow_angle = 0.8 * t + 0.15 * rng.normal(size=nt).cumsum()
        slow = np.stack([np.cos(slow_angle), np.sin(slow_angle)], axis=1)
        both = np.stack([fast, slow], axis=1)
        ens = make_ensemble(both)
        tau_fast = signals.decorrelation_time(make_ensemble(fast[:, None, :]), 0.2, 3000)
        tau_slow = signals.decorrelation_time(make_ensemble(slow[:, None, :]), 0.2, 3000)
        assert tau_fast < tau_slow
        assert signals.decorrelation_time(ens, 0.2, 3000) == tau_fast

    def test_monotone_in_alpha(self, medium_smoothed):
        lags = medium_smoothed.grid.nt - 1
        taus = []
        for alpha in (0.3, 0.5, 0.7, 0.9):
            taus.append(signals.decorrelation_time(medium_smoothed, alpha, lags))
        assert all(a >= b for a, b in zip(taus, taus[1:]))

    def test_no_decorrelation_raises(self):
        t = np.arange(500) * 0.01
        slow = single_path(np.stack([np.cos(0.05 * t), np.sin(0.05 * t)], axis=1))
        ens = make_ensemble(slow)
        with pytest.raises(vt.NoDecorrelation):
            signals.decorrelation_time(ens, 0.2, 100)

    def test_alpha_validated(self, medium_raw):
        with pytest.raises(ValueError):
            signals.decorrelation_time(medium_raw, 1.5, 100)
