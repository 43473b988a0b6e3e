import math

import numpy as np
import pytest

from dbmvd import (BranchPoint, ConfigurationError, ModelError, ModelParams,
                   RhoProfile, SingularityError, dist_E, reference_density,
                   validate)


def make(gamma=1.0, p=1.0, T=1.0, alpha=0.5):
    return ModelParams(gamma=gamma, weight_p=p, horizon_T=T,
                       rho=RhoProfile.exponential(alpha))


class TestRhoProfile:
    def test_exponential_values(self):
        rho = RhoProfile.exponential(0.5)
        r = np.array([0.0, 1.0, 2.0])
        assert np.allclose(rho(r), np.exp(-r) / np.pi)
        assert np.allclose(rho.derivative(r), -np.exp(-r) / np.pi)
        assert math.isclose(rho.integral(0.0, 1.0),
                            (1 - math.exp(-1.0)) / math.pi, rel_tol=1e-12)

    def test_rho0_is_one_over_pi(self):
        # rho(0) = 1/pi for every exponential profile
        for alpha in (-0.5, 0.0, 0.7):
            assert math.isclose(RhoProfile.exponential(alpha).rho0, 1 / math.pi)

    def test_one_over_rho_integrable(self):
        assert not RhoProfile.exponential(0.5).one_over_rho_integrable
        assert not RhoProfile.exponential(0.0).one_over_rho_integrable
        assert RhoProfile.exponential(-0.5).one_over_rho_integrable

    def test_tabulated_matches_samples(self):
        grid = np.linspace(0.0, 5.0, 200)
        vals = np.exp(-grid) / np.pi
        rho = RhoProfile.tabulated(grid, vals)
        r = np.array([0.3, 1.7, 4.2])
        assert np.allclose(rho(r), np.exp(-r) / np.pi, rtol=1e-6)

    def test_tabulated_rejects_bad_input(self):
        with pytest.raises(ConfigurationError):
            RhoProfile.tabulated([0, 1, 2], [1, 1, 1])  # too short
        with pytest.raises(ConfigurationError):
            RhoProfile.tabulated([0, 2, 1, 3], [1, 1, 1, 1])  # unsorted
        with pytest.raises(ConfigurationError, match="positive"):
            RhoProfile.tabulated([0, 1, 2, 3], [1.0, 0.0, 1.0, 1.0])

    def test_round_trip(self):
        rho = RhoProfile.exponential(0.25)
        again = RhoProfile.from_dict(rho.to_dict())
        assert again.alpha == 0.25


class TestModelParams:
    def test_kappa_presets(self):
        # kappa = (1 - pi p rho(0)) / (1 + pi p rho(0)) with rho(0) = 1/pi
        assert make(p=1.0).kappa == pytest.approx(0.0, abs=1e-15)
        assert make(p=3.0).kappa == pytest.approx(-0.5)
        assert make(p=1.0 / 3.0).kappa == pytest.approx(0.5)

    def test_invalid_parameters(self):
        with pytest.raises(ModelError):
            make(p=-1.0)
        with pytest.raises(ModelError):
            make(T=0.0)

    def test_dict_round_trip_and_digest(self):
        pm = make()
        again = ModelParams.from_dict(pm.to_dict())
        assert again.digest() == pm.digest()
        with pytest.raises(ConfigurationError):
            ModelParams.from_dict({"gamma": 1, "p": 1, "T": 1,
                                   "rho": {"family": "exponential",
                                           "alpha": 0.5},
                                   "bogus": 7})

    def test_validate_default(self):
        report = validate(make())
        assert report.passed, str(report)


class TestBranchPoint:
    def test_origin_canonicalization(self):
        assert BranchPoint.space3(0, 0, 0) == BranchPoint.origin()
        assert BranchPoint.half_line(0.0).is_origin

    def test_negative_radius_rejected(self):
        with pytest.raises(ModelError):
            BranchPoint.half_line(-1.0)

    def test_signed_radius(self):
        assert BranchPoint.half_line(2.0).signed_radius == -2.0
        assert BranchPoint.space3(3.0, 0, 0).signed_radius == 3.0

    def test_dist_E(self):
        x = BranchPoint.half_line(1.5)
        y = BranchPoint.space3(0.0, 2.0, 0.0)
        assert dist_E(x, y) == pytest.approx(3.5)
        assert dist_E(x, BranchPoint.half_line(0.5)) == pytest.approx(1.0)
        z = BranchPoint.space3(1.0, 1.0, 0.0)
        assert dist_E(y, z) == pytest.approx(math.sqrt(2.0))


class TestReferenceDensity:
    def test_half_line(self):
        pm = make(p=2.0)
        x = BranchPoint.half_line(1.0)
        assert reference_density(x, pm) == pytest.approx(
            math.sqrt(2.0 * math.exp(-1.0) / math.pi))

    def test_space3(self):
        pm = make(gamma=1.0)
        x = BranchPoint.space3(2.0, 0.0, 0.0)
        assert reference_density(x, pm) == pytest.approx(
            math.exp(-2.0) / (4.0 * math.pi))

    def test_singular_at_origin(self):
        with pytest.raises(SingularityError):
            reference_density(BranchPoint.origin(), make())
