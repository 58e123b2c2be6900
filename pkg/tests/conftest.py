import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from oracles import indicator_amplitudes, mps_from_dense  # noqa: E402

from tnaif.env import enumerate_all_paths  # noqa: E402
from tnaif.mps import SequenceMPS  # noqa: E402


@pytest.fixture
def small_random_mps():
    """Factory for random models with mixed-sign entries and small bonds."""

    def make(seed, bonds=(3, 3), low=-1.0, high=1.0):
        return SequenceMPS.random(bonds, rng=np.random.default_rng(seed), low=low, high=high)

    return make


@pytest.fixture(scope="session")
def paths():
    return enumerate_all_paths()


@pytest.fixture(scope="session")
def exact_model(paths):
    """Model uniform over the T-maze path set, built by exact factorization."""
    m = mps_from_dense(indicator_amplitudes(paths))
    m.normalize()
    return m


ACCEPTANCE = pytest.StashKey[dict]()


@pytest.fixture
def criterion(request):
    """Record a criterion verdict for the end-of-run summary, then assert it."""
    results = request.config.stash.setdefault(ACCEPTANCE, {})

    def record(number, ok, detail):
        results.setdefault(number, []).append((bool(ok), detail))
        assert ok, detail

    return record


def pytest_terminal_summary(terminalreporter, config):
    results = dict(config.stash.get(ACCEPTANCE, {}))
    bad = [r.nodeid for key in ("failed", "error") for r in terminalreporter.stats.get(key, [])]
    failed_ids = {nid for nid in bad if "test_acceptance.py::test_criterion_" in nid}
    for nid in failed_ids:
        number = int(nid.split("test_criterion_")[1].split("_")[0])
        results.setdefault(number, [(False, "raised before reaching a verdict")])
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        checks = results[number]
        ok = all(passed for passed, _ in checks)
        prefix = f"test_acceptance.py::test_criterion_{number}"
        if any(prefix in nid for nid in failed_ids):
            ok = False
        details = "; ".join(detail for _, detail in checks)
        terminalreporter.write_line(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {details}")
