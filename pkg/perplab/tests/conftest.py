"""
Pytest configuration and fixtures for the perplab tests.
"""
import math
import os
import sys

import pytest

# Add perplab to path for imports
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from src.config import settings  # noqa: E402
from src.services.model_service import model_service  # noqa: E402
from src.services.spectral_service import spectral_service  # noqa: E402

PHI = (1 + math.sqrt(5)) / 2
GOLDEN_ALPHA = math.log2(PHI)


def golden_kappa(s: float) -> float:
    """kappa(s) of the law {(2, 1, 1/2), (1/4, 1, 1/2)}."""
    return (2.0**s + 4.0**-s) / 2


def golden_lambda_derivs(s: float):
    """Lambda and its first five derivatives in closed form (cumulants of the tilted two-point law)."""
    a, b = math.log(2.0), -2 * math.log(2.0)
    wa, wb = 2.0**s, 4.0**-s
    pa = wa / (wa + wb)
    pb = 1 - pa
    mean = pa * a + pb * b
    ca, cb = a - mean, b - mean
    m2 = pa * ca**2 + pb * cb**2
    m3 = pa * ca**3 + pb * cb**3
    m4 = pa * ca**4 + pb * cb**4
    m5 = pa * ca**5 + pb * cb**5
    return [
        math.log(golden_kappa(s)),
        mean,
        m2,
        m3,
        m4 - 3 * m2**2,
        m5 - 10 * m3 * m2,
    ]


@pytest.fixture(autouse=True)
def isolated_dirs(tmp_path, monkeypatch):
    """Keep outputs, caches and logs of every test inside its tmp_path."""
    monkeypatch.setattr(settings, "OUTPUT_DIR", tmp_path / "runs")
    monkeypatch.setattr(settings, "CACHE_DIR", tmp_path / "runs" / "cache")
    monkeypatch.setattr(settings, "LOG_FILE", str(tmp_path / "logs" / "perplab.log"))


@pytest.fixture(scope="session")
def golden_law():
    return model_service.load_law("golden_ratio")


@pytest.fixture(scope="session")
def d2_law():
    return model_service.load_law("d2_mixed")


@pytest.fixture(scope="session")
def deterministic_law():
    return model_service.load_law("deterministic_two")


@pytest.fixture(scope="session")
def half_two_law():
    return model_service.load_law("half_two")


@pytest.fixture(scope="session")
def golden_model(golden_law):
    return spectral_service.calibrate(golden_law)


@pytest.fixture(scope="session")
def d2_model(d2_law):
    return spectral_service.calibrate(d2_law)
