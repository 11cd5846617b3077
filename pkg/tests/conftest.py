import os
import tempfile

# Must run before ScatterLab is imported: the package opens its log file at import time
os.environ.setdefault("SCATTER_LOG_DIR", tempfile.mkdtemp(prefix="scatterlab_logs_"))

import pytest  # noqa: E402

from ScatterLab.utils.lattice import REFERENCE_K, QuasiMomentum, enumerate_window  # noqa: E402

RATIONAL_K = QuasiMomentum((0.3, 0.4, 0.45))


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: acceptance-scale checks (minutes)")


@pytest.fixture(scope="session")
def reference_k():
    return REFERENCE_K


@pytest.fixture(scope="session")
def rational_k():
    return RATIONAL_K


@pytest.fixture(scope="session")
def spectrum_0_300(reference_k):
    """Reference spectrum 𝒩 ∩ [0, 301] shared by the statistics tests."""
    return enumerate_window(reference_k, (0.0, 301.0), check_distinct=False)


@pytest.fixture(scope="session")
def spectrum_0_400(reference_k):
    return enumerate_window(reference_k, (0.0, 400.0), check_distinct=False)


@pytest.fixture(scope="session")
def spectrum_0_250(reference_k):
    """Covers [0, cutoff] for Green vectors with λ ≤ 100."""
    return enumerate_window(reference_k, (0.0, 250.0), check_distinct=False)
