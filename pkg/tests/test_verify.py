import json

import numpy as np
import pytest

from dbmvd.verify import (CheckReport, _empirical_ks, ck_residual,
                          killed_kernel_mc, mass_check, mc_compare,
                          symmetry_check, write_reports)


class TestCheckReport:
    def test_json_schema(self):
        rep = CheckReport(name="x", passed=True,
                          metrics={"v": np.float64(1.5)},
                          details={"arr": np.array([1.0, 2.0])})
        obj = json.loads(rep.to_json())
        assert obj["schema"] == "v1"
        assert obj["metrics"]["v"] == 1.5
        assert obj["details"]["arr"] == [1.0, 2.0]

    def test_write_reports(self, tmp_path):
        reps = [CheckReport("a", True), CheckReport("b", False)]
        path = tmp_path / "r.jsonl"
        assert write_reports(reps, path) is False
        lines = path.read_text().splitlines()
        assert len(lines) == 2
        assert json.loads(lines[1])["passed"] is False


def test_empirical_ks_uniform():
    rng = np.random.default_rng(0)
    samples = rng.uniform(size=5000)
    grid = np.linspace(0, 1, 101)
    assert _empirical_ks(samples, grid, grid) < 0.03


class TestGaussianModel:
    """The drift-free reduction needs no series build, so the analytic
    checks run in seconds."""

    def test_ck_residual(self, gaussian_params):
        rep = ck_residual(gaussian_params)
        assert rep.passed, rep.metrics
        assert rep.metrics["max_rel_residual"] < 1e-4

    def test_mass(self, gaussian_params):
        rep = mass_check(gaussian_params)
        assert rep.passed, rep.metrics

    def test_symmetry(self, gaussian_params):
        rep = symmetry_check(gaussian_params)
        assert rep.passed, rep.metrics


class TestMonteCarloChecks:
    def test_mc_compare_passes(self, gaussian_params):
        rep = mc_compare(gaussian_params, t=0.25, r0=0.1, n_paths=20000,
                         dt=1e-3, seed=5)
        assert rep.passed, rep.metrics

    def test_negative_control_fails(self, gaussian_params):
        rep = mc_compare(gaussian_params, t=0.25, r0=0.1, n_paths=20000,
                         dt=1e-3, seed=5, kappa_shift=0.2)
        assert not rep.passed, rep.metrics

    def test_killed_kernel(self, default_params):
        rep = killed_kernel_mc(default_params, t=0.5, x_radius=1.0,
                               n_paths=60000, dt=1e-3, seed=8, tol=0.1)
        assert rep.passed, rep.metrics
        assert abs(rep.metrics["survival_z"]) < 3.0
