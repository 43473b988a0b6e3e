import pytest

from dbmvd import ModelParams, RhoProfile, get_engine


@pytest.fixture(scope="session")
def default_params():
    """Reference configuration: gamma=1, exponential profile alpha=0.5,
    p=1 (so kappa=0), horizon 1."""
    return ModelParams(gamma=1.0, weight_p=1.0, horizon_T=1.0,
                       rho=RhoProfile.exponential(0.5))


@pytest.fixture(scope="session")
def gaussian_params():
    """Drift-free reduction: gamma=0, rho constant 1/pi, p=1."""
    return ModelParams(gamma=0.0, weight_p=1.0, horizon_T=1.0,
                       rho=RhoProfile.exponential(0.0))


@pytest.fixture(scope="session")
def engine(default_params):
    """Fully built parametrix engine for the reference configuration.
    Built once per session; the construction is the expensive step."""
    eng = get_engine(default_params)
    eng._ensure_built()
    return eng
