import json
import math

import numpy as np
import pytest

from dbmvd import (BranchPoint, KernelOptions, ModelError, SingularityError,
                   assemble_full_kernel, build_kernel_grid,
                   fit_gaussian_bounds, full_kernel_mass, get_engine,
                   radial_kernel, skew_density)
from dbmvd.analytic import SkewMeasure, drift_b, skew_density_grad
from dbmvd.model import reference_density


class TestDriftFreeReduction:
    def test_kernel_equals_skew_density(self, gaussian_params):
        eng = get_engine(gaussian_params)
        r2 = np.linspace(-3, 3, 25)
        for t in (0.1, 0.45, 1.0):
            for r1 in (-2.0, 0.0, 1.1):
                assert np.allclose(eng.phat(t, r1, r2),
                                   skew_density(t, r1, r2, 0.0), atol=1e-12)

    def test_no_series_is_built(self, gaussian_params):
        eng = get_engine(gaussian_params)
        assert eng.drift_free


class TestSeriesConstruction:
    def test_first_term_against_brute_quadrature(self, engine, default_params):
        # independent oracle: k1 = int_0^t ds int pZ(t-s, r1, .) b grad1
        # pZ(s, ., r2) dlam, with sqrt substitutions at both time endpoints
        pm = default_params
        kappa = pm.kappa
        t = 0.3
        R = np.arange(-6.0, 6.0 + 1e-12, 0.004)
        u, w = np.polynomial.legendre.leggauss(24)
        u = 0.5 * (u + 1.0)
        w = 0.5 * w
        half = math.sqrt(t / 2.0)
        s_lo = (half * u) ** 2
        w_lo = 2.0 * half * u * half * w
        svals = np.concatenate([s_lo, t - s_lo])
        sw = np.concatenate([w_lo, w_lo])

        def inner(s, r1, r2):
            # refine around both kernels' spikes and split at the origin,
            # where the integrand jumps with the skew coefficients
            fine = np.concatenate([
                R,
                r2 + math.sqrt(s) * np.linspace(-8, 8, 641),
                r1 + math.sqrt(t - s) * np.linspace(-8, 8, 641)])
            total = 0.0
            for sgn in (-1.0, 1.0):
                g = np.unique(np.concatenate([fine[sgn * fine > 0],
                                              [sgn * 1e-13]]))
                lam = SkewMeasure(kappa).density(g)
                b = np.where(g < 0,
                             drift_b(np.minimum(g, -1e-9), pm), -pm.gamma)
                f = (skew_density(t - s, r1, g, kappa) * b
                     * skew_density_grad(s, g, r2, kappa) * lam)
                total += np.trapezoid(f, g)
            return total

        def brute(r1, r2):
            return sum(ws * inner(s, r1, r2) for s, ws in zip(svals, sw))

        for r1, r2 in ((-0.5, 0.5), (0.25, 1.0), (-0.5, 2.0)):
            want = brute(r1, r2)
            got = float(engine.term(1, t, r1, np.atleast_1d(r2))[0])
            assert got == pytest.approx(want, rel=1e-2), (r1, r2)

    def test_term_maxima_decay(self, engine):
        maxima = [np.abs(tb[-1]).max() for tb in engine._terms]
        ratios = np.array(maxima[2:]) / np.array(maxima[1:-1])
        assert np.all(ratios < 0.6)

    def test_mass_is_one(self, engine):
        for t in (0.1, 0.5, 1.0):
            assert engine.mass(t, 0.3) == pytest.approx(1.0, abs=1e-3)

    def test_detailed_balance(self, engine):
        # the kernel against the speed measure is symmetric
        for (a, b) in ((0.6, -0.8), (1.2, 0.2)):
            s1 = float(engine.symmetric_kernel(0.4, a, np.atleast_1d(b))[0])
            s2 = float(engine.symmetric_kernel(0.4, b, np.atleast_1d(a))[0])
            assert s1 == pytest.approx(s2, rel=1e-2)

    def test_extension_is_continuous_at_base_time(self, engine):
        t0 = engine.t0
        r2 = np.array([0.4])
        lo = float(engine.phat(t0 * 0.999, 0.2, r2)[0])
        hi = float(engine.phat(t0 * 1.001, 0.2, r2)[0])
        assert hi == pytest.approx(lo, rel=5e-3)

    def test_extension_conserves_mass(self, engine):
        assert engine.mass(2.0, 0.5) == pytest.approx(1.0, abs=2e-3)

    def test_time_bounds(self, engine, default_params):
        with pytest.raises(ModelError):
            engine.phat(0.0, 0.1, np.array([0.2]))
        with pytest.raises(ModelError):
            engine.phat(1e5, 0.1, np.array([0.2]))

    def test_engine_cache(self, default_params):
        assert get_engine(default_params) is get_engine(default_params)

    def test_radial_kernel_wrapper(self, engine, default_params):
        v = radial_kernel(0.4, 0.1, np.array([0.6]), default_params)
        assert v[0] == pytest.approx(
            float(engine.phat(0.4, 0.1, np.array([0.6]))[0]), rel=1e-12)


class TestFullKernel:
    def test_symmetric_under_reference_measure(self, engine, default_params):
        pm = default_params
        pts = [BranchPoint.half_line(0.7), BranchPoint.space3(1.1, 0, 0),
               BranchPoint.space3(0.0, 0.4, 0.0)]
        for i in range(len(pts)):
            for j in range(i + 1, len(pts)):
                a = assemble_full_kernel(0.5, pts[i], pts[j], pm,
                                         engine=engine)
                b = assemble_full_kernel(0.5, pts[j], pts[i], pm,
                                         engine=engine)
                assert a == pytest.approx(b, rel=2e-2), (i, j)

    def test_mass_from_both_branches(self, engine, default_params):
        for x in (BranchPoint.half_line(0.5), BranchPoint.space3(0.8, 0, 0)):
            m = full_kernel_mass(0.5, x, default_params, engine=engine)
            assert m == pytest.approx(1.0, abs=2e-3)

    def test_origin_target_matches_half_line_zero(self, engine,
                                                  default_params):
        # the canonical origin is a valid boundary point of the half-line
        a = assemble_full_kernel(0.5, BranchPoint.half_line(1.0),
                                 BranchPoint.origin(), default_params,
                                 engine=engine)
        b = assemble_full_kernel(0.5, BranchPoint.half_line(1.0),
                                 BranchPoint.half_line(0.0), default_params,
                                 engine=engine)
        assert a == b and np.isfinite(a) and a > 0

    def test_noncanonical_3d_origin_is_singular(self, engine, default_params):
        bad = BranchPoint(branch="space3", x=(0.0, 0.0, 0.0))
        with pytest.raises(SingularityError):
            assemble_full_kernel(0.5, BranchPoint.half_line(1.0), bad,
                                 default_params, engine=engine)


class TestKernelGrid:
    def test_build_and_serialize(self, gaussian_params, tmp_path):
        grid = build_kernel_grid(gaussian_params, times=[0.25, 0.5],
                                 rgrid=np.arange(-1.0, 1.01, 0.5))
        assert grid.values.shape == (2, 5, 5)
        csv_path = tmp_path / "k.csv"
        meta_path = tmp_path / "k.json"
        grid.to_csv(csv_path)
        grid.metadata_json(meta_path)
        lines = csv_path.read_text().splitlines()
        assert lines[0] == "t,r1,r2,phat"
        assert len(lines) == 1 + 2 * 25
        meta = json.loads(meta_path.read_text())
        assert meta["schema"] == "v1"
        assert meta["params_hash"] == gaussian_params.digest()


class TestGaussianBounds:
    def test_radial_case_exact_for_gaussian(self, gaussian_params):
        grid = build_kernel_grid(gaussian_params)
        fit = fit_gaussian_bounds(grid, "radial")
        assert fit.feasible
        assert fit.c_upper == pytest.approx(0.5, rel=1e-6)
        assert fit.C_upper == pytest.approx(1.0 / (2.0 * math.sqrt(2 * math.pi)),
                                            rel=1e-6)

    def test_cases_need_params(self):
        with pytest.raises(ModelError):
            fit_gaussian_bounds(None, "i")
