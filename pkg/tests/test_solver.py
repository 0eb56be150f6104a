"""Solver checks: exact invariants, variance oracles, scheme cross-validation."""

import math

import numpy as np
import pytest

from sheclt.errors import ConfigError, SolverBlowup
from sheclt.noise import Grid
from sheclt.solver import (
    MarginalStats,
    SigmaFunction,
    marginal_stats,
    picard_solve,
    solve,
    solve_batch,
    step_euler,
)
from sheclt.spectral import CovarianceMeasure, time_integrated_cov

WHITE = CovarianceMeasure("dirac", 1, 1.0)


def grid_1d(dx=1.0 / 8.0, L=8.0):
    n = int(round(L / dx))
    return Grid(d=1, length=L, n=n, dt=dx * dx / 2.0)


def exact_discrete_variance_white(grid, n_steps, mass):
    """Fourier-exact per-cell variance of the explicit scheme, sigma == 1.

    The update filter has symbol 1 - (2 dt/dx^2) sin^2(pi k/n); summing the
    geometric propagation of independent white increments gives the scheme's
    own stationary-in-space variance, an exact reference that isolates Monte
    Carlo error from discretization error.
    """
    k = np.arange(grid.n)
    G = 1.0 - (2.0 * grid.dt / grid.dx**2) * np.sin(np.pi * k / grid.n) ** 2
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = (1.0 - G ** (2 * n_steps)) / (1.0 - G * G)
    terms[np.abs(G) == 1.0] = n_steps
    return grid.dt * mass / grid.dx * float(np.mean(terms))


class TestSigmaFunction:
    def test_constants(self):
        s = SigmaFunction.affine(2.0, -0.5)
        assert (s.sigma0, s.lip, s.sigma1) == (2.0, 0.5, 1.5)
        assert SigmaFunction.linear(3.0).lip == 3.0
        assert SigmaFunction.constant(2.0).lip == 0.0

    def test_sigma1_nonzero_enforced(self):
        with pytest.raises(ConfigError):
            SigmaFunction.constant(0.0)
        with pytest.raises(ConfigError):
            SigmaFunction.affine(1.0, -1.0)
        assert SigmaFunction.constant(0.0, allow_degenerate=True).sigma1 == 0.0

    def test_tabulated_lipschitz(self):
        s = SigmaFunction.tabulated([-1.0, 0.0, 2.0], [0.5, 1.0, 0.0])
        rng = np.random.default_rng(3)
        u, v = rng.normal(size=200, scale=4), rng.normal(size=200, scale=4)
        lhs = np.abs(s(u) - s(v))
        assert np.all(lhs <= s.lip * np.abs(u - v) + 1e-12)
        assert s(np.array(0.0)) == pytest.approx(1.0)

    def test_nondegeneracy_classification(self):
        assert SigmaFunction.constant(2.0).nondegeneracy_condition() == (1, 2.0)
        assert SigmaFunction.linear(-1.5).nondegeneracy_condition() == (2, 1.5)
        assert SigmaFunction.affine(0.5, 1.0).nondegeneracy_condition() == (1, 0.5)
        assert SigmaFunction.affine(1.0, -2.0).nondegeneracy_condition() is None


class TestEuler:
    def test_flat_state_exact_for_zero_sigma(self):
        g = grid_1d()
        sigma = SigmaFunction.constant(0.0, allow_degenerate=True)
        u, _ = solve_batch(g, sigma, WHITE, 1.0, seed=5, replicas=[0, 1])
        assert np.all(u == 1.0)

    def test_additive_single_step(self):
        g = grid_1d()
        from sheclt.noise import RngStream, sample_noise_batch, spectral_weights

        w = spectral_weights(g, WHITE)
        dW = sample_noise_batch(g, w, g.dt, [RngStream(seed=2)], 0)[0]
        out = step_euler(np.ones(g.shape), g, SigmaFunction.constant(1.0), dW)
        assert np.array_equal(out, 1.0 + dW)

    def test_time_zero_returns_initial_condition(self):
        g = grid_1d()
        field = solve(g, SigmaFunction.constant(1.0), WHITE, 0.0, seed=1, replica=0)
        assert np.all(field.values == 1.0)

    def test_blowup_raises_with_step(self):
        g = grid_1d(dx=0.25, L=4.0)
        sigma = SigmaFunction.linear(1e6)
        with pytest.raises(SolverBlowup) as err:
            solve_batch(g, sigma, WHITE, 1.0, seed=8, replicas=[0])
        assert err.value.step is not None

    def test_batch_matches_single(self):
        g = grid_1d()
        sigma = SigmaFunction.linear(1.0)
        batch, _ = solve_batch(g, sigma, WHITE, 0.25, seed=21, replicas=[3, 7])
        for i, r in enumerate([3, 7]):
            single = solve(g, sigma, WHITE, 0.25, seed=21, replica=r)
            assert np.array_equal(batch[i], single.values)

    def test_snapshots(self):
        g = grid_1d()
        sigma = SigmaFunction.constant(1.0)
        final, snaps = solve_batch(
            g, sigma, WHITE, 0.5, seed=4, replicas=[0], snapshot_times=[0.0, 0.25, 0.5]
        )
        assert np.all(snaps[0.0] == 1.0)
        assert np.array_equal(snaps[0.5], final)
        assert not np.array_equal(snaps[0.25], final)

    @pytest.mark.slow
    def test_variance_matches_scheme_exact_and_continuum(self):
        g = grid_1d(dx=1.0 / 8.0, L=16.0)
        sigma = SigmaFunction.constant(1.0)
        R = 600
        u, _ = solve_batch(g, sigma, WHITE, 1.0, seed=31, replicas=range(R))
        per_replica = np.var(u, axis=1) + (np.mean(u, axis=1) - 1.0) ** 2
        est = float(np.mean(per_replica))
        se = float(np.std(per_replica)) / math.sqrt(R)
        exact = exact_discrete_variance_white(g, round(1.0 / g.dt), 1.0)
        assert abs(est - exact) < 4 * se
        # continuum target 1/sqrt(pi), reached as dx -> 0; at dx=1/8 the
        # scheme sits within a few percent
        assert abs(est - 1.0 / math.sqrt(math.pi)) < 0.1 * 1.0 / math.sqrt(math.pi)

    @pytest.mark.slow
    def test_mean_one_and_stationarity(self):
        g = grid_1d(dx=1.0 / 8.0, L=16.0)
        sigma = SigmaFunction.linear(1.0)
        R = 800
        u, _ = solve_batch(g, sigma, WHITE, 0.5, seed=32, replicas=range(R))
        mean_per_rep = np.mean(u, axis=1)
        se = float(np.std(mean_per_rep)) / math.sqrt(R)
        assert abs(float(np.mean(mean_per_rep)) - 1.0) < 4 * se

    @pytest.mark.slow
    def test_variance_stationary_across_anchors(self):
        # pooled into cell blocks (one block spans two correlation lengths)
        # with per-replica block estimates supplying honest standard errors
        g = grid_1d(dx=1.0 / 8.0, L=16.0)
        R = 800
        u, _ = solve_batch(g, SigmaFunction.constant(1.0), WHITE, 0.5, seed=32, replicas=range(R))
        sq = (u - 1.0) ** 2
        blocks = sq.reshape(R, 8, g.n // 8).mean(axis=2)
        m = blocks.mean(axis=0)
        se_b = blocks.std(axis=0) / math.sqrt(R)
        dev = np.abs(m - m.mean())
        assert np.all(dev < 4.0 * se_b)


class TestPicard:
    def test_zero_sigma_flat_after_one_iteration(self):
        g = grid_1d(dx=0.25, L=4.0)
        sigma = SigmaFunction.constant(0.0, allow_degenerate=True)
        field = picard_solve(g, sigma, WHITE, 0.25, seed=6, replica=0, n_iter=1)
        assert np.all(field.values == 1.0)

    def test_constant_sigma_fixed_after_first(self):
        g = grid_1d(dx=0.25, L=4.0)
        sigma = SigmaFunction.constant(1.0)
        f1 = picard_solve(g, sigma, WHITE, 0.25, seed=6, replica=0, n_iter=1)
        f2 = picard_solve(g, sigma, WHITE, 0.25, seed=6, replica=0, n_iter=2)
        assert np.array_equal(f1.values, f2.values)

    @pytest.mark.slow
    def test_agreement_with_euler_linear_sigma(self):
        # same mild equation, same noise: relative L2 below 5% at dx=1/16
        g = grid_1d(dx=1.0 / 16.0, L=8.0)
        sigma = SigmaFunction.linear(1.0)
        eu, _ = solve_batch(g, sigma, WHITE, 0.25, seed=3, replicas=[0])
        pi = picard_solve(g, sigma, WHITE, 0.25, seed=3, replica=0, n_iter=8)
        rel = np.linalg.norm(pi.values - eu[0]) / np.linalg.norm(eu[0])
        assert rel < 0.05

    @pytest.mark.slow
    def test_refinement_shrinks_disagreement(self):
        # smooth noise: at least halves per level; white noise: decreases
        # (top-octave handling differs between the propagators, giving an
        # O(sqrt(dx)) floor for spatially white increments)
        sigma = SigmaFunction.linear(1.0)
        for f, factor in [
            (CovarianceMeasure("gaussian", 1, 1.0, 0.5), 0.65),
            (WHITE, 1.0),
        ]:
            rels = []
            for dx in (1.0 / 16.0, 1.0 / 32.0):
                g = grid_1d(dx=dx, L=8.0)
                eu, _ = solve_batch(g, sigma, f, 0.25, seed=3, replicas=[0])
                pi = picard_solve(g, sigma, f, 0.25, seed=3, replica=0, n_iter=8)
                rels.append(np.linalg.norm(pi.values - eu[0]) / np.linalg.norm(eu[0]))
            assert rels[1] < factor * rels[0]


class TestMarginalStats:
    def test_constant_observable(self):
        g = grid_1d()
        u, _ = solve_batch(g, SigmaFunction.constant(1.0), WHITE, 0.25, seed=9, replicas=range(4))
        st = marginal_stats(u, g, lambda x: np.full_like(x, 3.0), max_lag=2)
        assert st.variance == 0.0
        assert np.all(st.lag_cov == 0.0)

    @pytest.mark.slow
    def test_identity_mean_and_lag_covariance(self):
        g = grid_1d(dx=1.0 / 8.0, L=16.0)
        R = 1500
        u, _ = solve_batch(g, SigmaFunction.constant(1.0), WHITE, 1.0, seed=10, replicas=range(R))
        lag_cells = int(round(0.5 / g.dx))
        st = marginal_stats(u, g, lambda x: x, max_lag=2 * lag_cells)
        assert abs(st.mean - 1.0) < 0.03
        for x in (0.5, 1.0):
            target = time_integrated_cov(WHITE, 1.0, [x])
            got = st.lag_cov[int(round(x / g.dx))]
            assert abs(got - target) < 0.1 * target + 0.01


class TestTwoDimensional:
    def test_d2_solve_and_occupation_path(self):
        # structural smoke for d=2: synthesis, stepping, box integration
        from sheclt.occupation import (
            LipFunction,
            PreparedTestFunction,
            TestFunction,
            occupation_values,
        )

        f2 = CovarianceMeasure("gaussian", 2, 1.0, 0.6)
        g = Grid(d=2, length=8.0, n=32, dt=0.25**2 / 4.0)
        sigma = SigmaFunction.constant(1.0)
        fields, _ = solve_batch(g, sigma, f2, 0.125, seed=3, replicas=[0, 1])
        assert fields.shape == (2, 32, 32)
        assert np.all(np.isfinite(fields))
        psi = TestFunction.box((0.0, 0.0), (1.0, 1.5))
        prep = PreparedTestFunction(g, psi.scaled(2.0), halo=1.0)
        vals = occupation_values(prep, LipFunction.identity()(fields), 1.0, 2.0)
        assert vals.shape == (2,) and np.all(np.isfinite(vals))

    def test_d2_flat_weights_variance_target(self):
        # one-step noise variance for a 2-d product covariance
        from sheclt.noise import RngStream, periodized_covariance, sample_noise_batch, spectral_weights

        f2 = CovarianceMeasure("exponential", 2, 1.0, 1.0)
        g = Grid(d=2, length=8.0, n=32, dt=0.25**2 / 4.0)
        w = spectral_weights(g, f2)
        assert w.weights.shape == (32, 32)
        streams = [RngStream(seed=5, replica=r) for r in range(300)]
        batch = sample_noise_batch(g, w, g.dt, streams, step=0)
        target = g.dt * float(periodized_covariance(g, f2, lags=[0])[0])
        est = float(np.var(batch))
        se = target * math.sqrt(2.0 / batch.size) * 3  # cells correlated: inflate
        assert abs(est - target) < 6 * se
