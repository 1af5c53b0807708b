import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("ci", max_examples=200, deadline=None)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_CRITERIA = {
    1: "channel-permutation equivariance (voxelizer + backbone)",
    2: "sparse vs dense convolution",
    3: "bilinear alignment",
    4: "TeBEV aggregation laws",
    5: "TiVoxel invariance",
    6: "attention gradient check",
    7: "DA-Aug properties",
    8: "end-to-end desk-scale run",
}


_RESULTS = pytest.StashKey[dict]()


@pytest.fixture
def acceptance(request):
    """Record ``(criterion, passed, detail)`` for the terminal summary."""
    results = request.config.stash.setdefault(_RESULTS, {})

    def record(criterion: int, passed: bool, detail: str) -> bool:
        results[criterion] = (bool(passed), detail)
        return bool(passed)

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = config.stash.get(_RESULTS, None)
    if results is None:
        return
    terminalreporter.section("acceptance criteria")
    for k, name in ACCEPTANCE_CRITERIA.items():
        if k in results:
            ok, detail = results[k]
            terminalreporter.write_line(f"criterion {k} {'PASS' if ok else 'FAIL'}: {name}; {detail}")
        else:
            terminalreporter.write_line(f"criterion {k} NOT RUN: {name}")
