"""Occupation-field machinery: box algebra, exact bilinearity, covariance form."""

import math

import numpy as np
import pytest

from sheclt.errors import (
    ConditionNotApplicable,
    ConfigError,
    CutoffTooSmall,
    SupportOverflow,
)
from sheclt.noise import Grid
from sheclt.occupation import (
    BtAccumulator,
    LipFunction,
    PreparedTestFunction,
    TestFunction,
    brownian_sheet_field,
    estimate_Bt,
    exact_Bt_constant_sigma,
    exact_baseline,
    estimate_baseline,
    nondegeneracy_check,
    occupation_sample,
    occupation_values,
    scale_psi,
)
from sheclt.solver import SigmaFunction, SolutionField, solve_batch
from sheclt.spectral import CovarianceMeasure

WHITE = CovarianceMeasure("dirac", 1, 1.0)


def grid_1d(dx=1.0 / 8.0, L=16.0):
    n = int(round(L / dx))
    return Grid(d=1, length=L, n=n, dt=dx * dx / 2.0)


def random_box_combo(rng, m=3, lo=-3.0, hi=3.0):
    terms = []
    for _ in range(m):
        a, b = np.sort(rng.uniform(lo, hi, size=2))
        terms.append((rng.normal(), (a,), (b + 0.05,)))
    return TestFunction(terms)


class TestTestFunction:
    def test_scale_identity(self):
        psi = TestFunction.box(0.0, 1.0)
        assert scale_psi(psi, 1.0).terms[0][0] == 1.0
        assert scale_psi(psi, 1.0).terms[0][1].hi == (1.0,)

    def test_scale_example(self):
        psi = TestFunction.box(0.0, 1.0)
        s = scale_psi(psi, 4.0)
        amp, box = s.terms[0]
        assert amp == pytest.approx(0.25)
        assert box.lo == (0.0,) and box.hi == (4.0,)

    def test_scale_preserves_l1_and_scales_l2(self):
        rng = np.random.default_rng(5)
        for _ in range(10):
            psi = random_box_combo(rng)
            for N in (2.0, 5.0, 16.0):
                s = psi.scaled(N)
                assert s.l1_norm() == pytest.approx(psi.l1_norm(), rel=1e-10)
                assert s.l2_norm() ** 2 * N == pytest.approx(psi.l2_norm() ** 2, rel=1e-10)

    def test_l2_closed_form_matches_grid_quadrature(self):
        rng = np.random.default_rng(6)
        xs = np.linspace(-4.0, 4.0, 160001)
        dx = xs[1] - xs[0]
        for _ in range(5):
            psi = random_box_combo(rng)
            vals = np.zeros_like(xs)
            for a, b in psi.terms:
                vals += a * ((xs >= b.lo[0]) & (xs <= b.hi[0]))
            quad = math.sqrt(np.sum(vals**2) * dx)
            assert abs(psi.l2_norm() - quad) < 2e-4  # grid quadrature noise O(dx)

    def test_l1_overlapping_arrangement(self):
        # 1_{[0,2]} - 1_{[1,3]} has |psi| = 1 on [0,1] u (2,3]: L1 = 2
        psi = TestFunction([(1.0, (0.0,), (2.0,)), (-1.0, (1.0,), (3.0,))])
        assert psi.l1_norm() == pytest.approx(2.0)
        assert psi.integral() == pytest.approx(0.0)
        assert psi.l2_norm() ** 2 == pytest.approx(2.0)

    def test_config_roundtrip(self):
        psi = TestFunction([(1.5, (0.0, 1.0), (2.0, 2.5)), (-0.5, (1.0, 0.0), (3.0, 1.0))])
        back = TestFunction.from_config(psi.to_config())
        assert back.terms == psi.terms and back.label == psi.label


class TestLipFunction:
    def test_norms(self):
        g = LipFunction.identity()
        assert (g.lip, g.g0, g.norm) == (1.0, 0.0, 1.0)
        s = LipFunction.shifted(LipFunction.sin(), 0.7)
        assert s.lip == 1.0
        assert s.g0 == pytest.approx(math.sin(-0.7))
        sc = LipFunction.scaled(LipFunction.sin(), 2.0, 3.0)
        assert sc.lip == pytest.approx(1.5)

    def test_lipschitz_on_random_pairs(self):
        rng = np.random.default_rng(7)
        funcs = [
            LipFunction.identity(),
            LipFunction.sin(),
            LipFunction.shifted(LipFunction.sin(), -1.2),
            LipFunction.scaled(LipFunction.sin(), 0.5, 2.0),
            LipFunction.tabulated([-2.0, 0.0, 1.0, 4.0], [1.0, 0.0, 2.0, 1.0]),
        ]
        u, v = rng.normal(size=500, scale=3), rng.normal(size=500, scale=3)
        for g in funcs:
            assert np.all(np.abs(g(u) - g(v)) <= g.lip * np.abs(u - v) + 1e-12)
            assert g.norm == abs(g.g0) + g.lip

    def test_config_roundtrip(self):
        g = LipFunction.scaled(LipFunction.sin(), 1.5, -2.0)
        back = LipFunction.from_config(g.to_config())
        u = np.linspace(-3, 3, 50)
        assert np.allclose(back(u), g(u))


class TestOccupationSample:
    def make_field(self, grid, sigma, t=0.5, seed=40, replica=0):
        vals, _ = solve_batch(grid, sigma, WHITE, t, seed, [replica])
        return SolutionField(grid=grid, time=t, values=vals[0], scheme="euler",
                             seed=seed, replica=replica)

    def test_constant_observable_exact_zero(self):
        grid = grid_1d()
        field = self.make_field(grid, SigmaFunction.linear(1.0))
        g = LipFunction.tabulated([-1.0, 1.0], [2.0, 2.0], label="const2")
        base = exact_baseline(g, SigmaFunction.constant(0.0, allow_degenerate=True))
        sample = occupation_sample(field, TestFunction.box(0.0, 1.0), g, 4.0,
                                   base or __import__("sheclt.occupation", fromlist=["BaselineValue"]).BaselineValue(2.0, "exact"))
        assert abs(sample.value) < 1e-12

    def test_flat_field_exact_zero(self):
        grid = grid_1d()
        sigma0 = SigmaFunction.constant(0.0, allow_degenerate=True)
        vals, _ = solve_batch(grid, sigma0, WHITE, 0.5, 1, [0])
        field = SolutionField(grid=grid, time=0.5, values=vals[0], scheme="euler", seed=1, replica=0)
        g = LipFunction.sin()
        base = exact_baseline(g, sigma0)
        assert base.provenance == "exact-flat-field"
        s = occupation_sample(field, TestFunction.box(0.0, 2.0), g, 2.0, base)
        assert s.value == pytest.approx(0.0, abs=1e-12)

    def test_bilinear_in_psi_exact(self):
        grid = grid_1d()
        field = self.make_field(grid, SigmaFunction.constant(1.0))
        g = LipFunction.identity()
        base = exact_baseline(g, SigmaFunction.constant(1.0))
        rng = np.random.default_rng(9)
        for _ in range(5):
            p1 = random_box_combo(rng, m=2, lo=0.0, hi=2.0)
            p2 = random_box_combo(rng, m=2, lo=0.5, hi=2.5)
            a, b = rng.normal(size=2)
            combo = p1.combine(p2, a, b)
            s_combo = occupation_sample(field, combo, g, 2.0, base).value
            s1 = occupation_sample(field, p1, g, 2.0, base).value
            s2 = occupation_sample(field, p2, g, 2.0, base).value
            assert s_combo == pytest.approx(a * s1 + b * s2, abs=1e-10)

    def test_bilinear_in_g_exact(self):
        grid = grid_1d()
        field = self.make_field(grid, SigmaFunction.constant(1.0))
        psi = TestFunction.box(0.0, 1.5)
        gid = LipFunction.identity()
        gsin = LipFunction.sin()
        from sheclt.occupation import BaselineValue

        b1, b2 = 1.0, 0.84  # any frozen centering values work for linearity
        a, c = 0.7, -1.3
        combo = lambda u: a * gid(u) + c * gsin(u)
        prepared = PreparedTestFunction(grid, psi.scaled(2.0))
        gu = combo(field.values)[np.newaxis]
        v_combo = occupation_values(prepared, gu, a * b1 + c * b2, 2.0)[0]
        v1 = occupation_values(prepared, gid(field.values)[np.newaxis], b1, 2.0)[0]
        v2 = occupation_values(prepared, gsin(field.values)[np.newaxis], b2, 2.0)[0]
        assert v_combo == pytest.approx(a * v1 + c * v2, abs=1e-10)

    def test_support_overflow(self):
        grid = grid_1d(L=8.0)
        field = self.make_field(grid, SigmaFunction.constant(1.0), t=0.5)
        g = LipFunction.identity()
        base = exact_baseline(g, SigmaFunction.constant(1.0))
        with pytest.raises(SupportOverflow):
            occupation_sample(field, TestFunction.box(0.0, 1.0), g, 7.5, base)

    def test_torus_wrap_matches_shifted_placement(self):
        # the same box placed across the seam integrates the same cells
        grid = grid_1d(L=8.0)
        rng = np.random.default_rng(12)
        vals = rng.normal(size=grid.shape)
        p_plain = PreparedTestFunction(grid, TestFunction.box(1.0, 3.0))
        p_wrapped = PreparedTestFunction(grid, TestFunction.box(1.0 + 8.0, 3.0 + 8.0))
        assert p_plain.integrate(vals[np.newaxis])[0] == pytest.approx(
            p_wrapped.integrate(vals[np.newaxis])[0], rel=1e-12
        )


class TestBrownianSheetField:
    def test_zero_corner(self):
        grid = grid_1d()
        vals, _ = solve_batch(grid, SigmaFunction.constant(1.0), WHITE, 0.5, 3, [0])
        field = SolutionField(grid=grid, time=0.5, values=vals[0], scheme="euler", seed=3, replica=0)
        g = LipFunction.identity()
        base = exact_baseline(g, SigmaFunction.constant(1.0))
        w = brownian_sheet_field(field, g, 4.0, [[0.0], [1.0]], base)
        assert w[0] == 0.0

    def test_box_additivity(self):
        grid = grid_1d()
        vals, _ = solve_batch(grid, SigmaFunction.constant(1.0), WHITE, 0.5, 3, [0])
        field = SolutionField(grid=grid, time=0.5, values=vals[0], scheme="euler", seed=3, replica=0)
        g = LipFunction.identity()
        base = exact_baseline(g, SigmaFunction.constant(1.0))
        w = brownian_sheet_field(field, g, 4.0, [[2.0]], base)[0]
        parts = [
            occupation_sample(field, TestFunction.box(0.0, 0.5), g, 4.0, base).value,
            occupation_sample(field, TestFunction.box(0.5, 1.25), g, 4.0, base).value,
            occupation_sample(field, TestFunction.box(1.25, 2.0), g, 4.0, base).value,
        ]
        assert w == pytest.approx(sum(parts), abs=1e-10)


class TestBtEstimate:
    def test_exact_constant_sigma_values(self):
        assert exact_Bt_constant_sigma(1.0, 1.0, WHITE) == 1.0
        assert exact_Bt_constant_sigma(2.0, 1.0, WHITE) == 4.0
        assert exact_Bt_constant_sigma(1.5, 0.0, WHITE) == 0.0

    def test_constant_observable_zero(self):
        grid = grid_1d()
        fields = np.ones((120,) + grid.shape) + np.random.default_rng(1).normal(
            size=(120,) + grid.shape
        )
        g = LipFunction.identity()
        G = LipFunction.tabulated([-10.0, 10.0], [1.0, 1.0], label="const")
        est = estimate_Bt(fields, grid, g, G=G, cutoff=2.0)
        assert est.value == pytest.approx(0.0, abs=1e-12)

    def test_flat_fields_zero(self):
        grid = grid_1d()
        fields = np.ones((150,) + grid.shape)
        est = estimate_Bt(fields, grid, LipFunction.identity(), cutoff=2.0)
        assert est.value == 0.0

    def test_requires_replicas(self):
        grid = grid_1d()
        with pytest.raises(ConfigError):
            estimate_Bt(np.ones((10,) + grid.shape), grid, LipFunction.identity(), cutoff=2.0)

    def test_cutoff_too_small_on_long_range_input(self):
        grid = grid_1d()
        rng = np.random.default_rng(3)
        common = rng.normal(size=(400, 1))
        fields = 1.0 + common + 0.01 * rng.normal(size=(400,) + grid.shape)
        with pytest.raises(CutoffTooSmall):
            estimate_Bt(fields, grid, LipFunction.identity(), cutoff=1.0)

    @pytest.mark.slow
    def test_benchmark_value_constant_sigma(self):
        grid = grid_1d(dx=1.0 / 8.0, L=16.0)
        fields, _ = solve_batch(grid, SigmaFunction.constant(1.0), WHITE, 1.0, 44, range(500))
        est = estimate_Bt(fields, grid, LipFunction.identity(), t=1.0, f=WHITE)
        target = exact_Bt_constant_sigma(1.0, 1.0, WHITE)
        assert abs(est.value - target) < 0.1 * target

    @pytest.mark.slow
    def test_streaming_accumulator_matches_batch(self):
        grid = grid_1d(dx=1.0 / 8.0, L=16.0)
        fields, _ = solve_batch(grid, SigmaFunction.constant(1.0), WHITE, 0.5, 45, range(200))
        g = LipFunction.identity()
        acc = BtAccumulator(grid, g, g, cutoff=3.0)
        acc.update(fields[:80])
        acc.update(fields[80:])
        stream = acc.finalize()
        direct = estimate_Bt(fields, grid, g, cutoff=3.0)
        assert stream.value == pytest.approx(direct.value, rel=1e-10)


class TestNondegeneracy:
    def test_inapplicable_sigma(self):
        grid = grid_1d()
        fields = np.ones((150,) + grid.shape)
        with pytest.raises(ConditionNotApplicable):
            nondegeneracy_check(fields, grid, WHITE, SigmaFunction.affine(1.0, -2.0), 0.5)

    def test_t_zero_skipped(self):
        grid = grid_1d()
        fields = np.ones((150,) + grid.shape)
        res = nondegeneracy_check(fields, grid, WHITE, SigmaFunction.constant(1.0), 0.0)
        assert res.skipped and res.passed

    @pytest.mark.slow
    def test_condition_one_equality_case(self):
        grid = grid_1d(dx=1.0 / 8.0, L=16.0)
        fields, _ = solve_batch(grid, SigmaFunction.constant(1.0), WHITE, 1.0, 46, range(400))
        res = nondegeneracy_check(fields, grid, WHITE, SigmaFunction.constant(1.0), 1.0)
        assert res.condition == 1 and res.passed

    @pytest.mark.slow
    def test_condition_two_linear_sigma(self):
        grid = grid_1d(dx=1.0 / 8.0, L=16.0)
        fields, _ = solve_batch(grid, SigmaFunction.linear(1.0), WHITE, 0.5, 47, range(400))
        res = nondegeneracy_check(fields, grid, WHITE, SigmaFunction.linear(1.0), 0.5)
        assert res.condition == 2 and res.passed


class TestBaseline:
    def test_identity_baseline_exact(self):
        base = exact_baseline(LipFunction.identity(), SigmaFunction.linear(2.0))
        assert base.value == 1.0 and base.provenance == "exact-mean-one"

    def test_general_g_needs_estimation(self):
        assert exact_baseline(LipFunction.sin(), SigmaFunction.linear(1.0)) is None

    def test_estimated_baseline_deterministic(self):
        grid = grid_1d(L=8.0)
        b1 = estimate_baseline(grid, SigmaFunction.linear(1.0), WHITE, 0.25,
                               LipFunction.sin(), 32, seed=5, domain=9)
        b2 = estimate_baseline(grid, SigmaFunction.linear(1.0), WHITE, 0.25,
                               LipFunction.sin(), 32, seed=5, domain=9)
        assert b1.value == b2.value
        assert b1.provenance == "mc" and b1.n_replicas == 32


class TestL2Continuity:
    @pytest.mark.slow
    def test_ratio_bound_over_random_box_pairs(self):
        # difference samples scale with the L2 distance of the test functions;
        # the analytic moment-bound constant dominates (documented loose)
        grid = grid_1d(dx=1.0 / 8.0, L=32.0)
        fields, _ = solve_batch(grid, SigmaFunction.constant(1.0), WHITE, 1.0, 48, range(400))
        g = LipFunction.identity()
        base = exact_baseline(g, SigmaFunction.constant(1.0))
        rng = np.random.default_rng(10)
        from sheclt.occupation import PreparedTestFunction, occupation_values
        from sheclt.spectral import (
            DalangProfile,
            MomentBoundParams,
            log_moment_bound,
        )

        prof = DalangProfile(WHITE)
        N = 4.0
        ratios = []
        for _ in range(8):
            psi = random_box_combo(rng, m=2, lo=0.0, hi=2.5)
            phi = random_box_combo(rng, m=2, lo=0.0, hi=2.5)
            diff = psi.combine(phi, 1.0, -1.0)
            dist = diff.l2_norm()
            if dist < 1e-6:
                continue
            prep = PreparedTestFunction(grid, diff.scaled(N), halo=8.0)
            vals = occupation_values(prep, fields, base.value, N)
            emp = math.sqrt(float(np.mean(vals**2)))
            ratios.append(emp / dist)
            params = MomentBoundParams(eps=0.5, k=2, N=N, T=1.0, sigma0=1.0,
                                       lip_sigma=1.0, lip_g=1.0, psi_norm=1.0)
            log_bound = log_moment_bound(params, prof) + 0.5 * math.log(N)
            assert math.log(max(emp / dist, 1e-300)) <= log_bound
        # empirical ratios hover near sqrt(B_t): uniformly bounded, stable
        assert ratios and max(ratios) < 5.0
