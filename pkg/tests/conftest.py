import numpy as np
import pytest

from icplab.data import write_covtype
from icplab.kernels import available_backends
from icplab.synthetic import make_covtype_like

BACKENDS = available_backends()


@pytest.fixture(params=BACKENDS, ids=[b.NAME for b in BACKENDS])
def kernel(request, monkeypatch):
    """Run the test once per importable kernel backend."""
    import icplab.icp
    import icplab.mlp
    monkeypatch.setattr(icplab.mlp, "backend", request.param)
    monkeypatch.setattr(icplab.icp, "backend", request.param)
    return request.param


@pytest.fixture(scope="session")
def synthetic_data():
    return make_covtype_like(2747, seed=1)


@pytest.fixture(scope="session")
def small_covtype_file(tmp_path_factory):
    """Covtype-format file, 400 examples per class."""
    path = tmp_path_factory.mktemp("data") / "covtype_small.data"
    write_covtype(path, make_covtype_like(400, seed=3))
    return path


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_KEY = pytest.StashKey[list]()


@pytest.fixture(scope="session")
def acceptance_log(pytestconfig):
    """Collects one PASS/FAIL line per acceptance criterion for the summary."""
    return pytestconfig.stash.setdefault(ACCEPTANCE_KEY, [])


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
