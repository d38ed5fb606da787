import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from ccl_pad.catalog import SynthConfig, synth_catalog  # noqa: E402

# Small grid: 15 subjects x 4 types x 2 scenes x 2 lights x 2 sensors x 2 frames.
SMALL = SynthConfig(subjects=15, frames=2, dim=16, scenes=(1, 2), lights=(1, 2), sensors=(1, 2))


@pytest.fixture(scope="session")
def small_catalog():
    return synth_catalog(SMALL, seed=3)


@pytest.fixture(scope="session")
def full_catalog():
    return synth_catalog(SynthConfig(), seed=7)


def pytest_terminal_summary(terminalreporter):
    try:
        import test_acceptance
    except ImportError:
        return
    if test_acceptance.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in test_acceptance.RESULTS:
            terminalreporter.write_line(line)
