import pytest

from skycast.dataset import ingest_directory
from skycast.synth import GenConfig, synth_generate

SMALL_GEN = GenConfig(days=4, image_size=33, regime_weights=[0.3, 0.4, 0.3])


@pytest.fixture(scope="session")
def small_archive(tmp_path_factory):
    """Four synthetic days at 33x33 px: enough for splits and tiny training runs."""
    root = tmp_path_factory.mktemp("small_archive")
    manifest = synth_generate(SMALL_GEN, 11, root)
    return root, manifest


@pytest.fixture(scope="session")
def small_index(small_archive):
    return ingest_directory(small_archive[0])


def pytest_terminal_summary(terminalreporter):
    """Print the acceptance verdicts, one line per criterion, at the end of the run."""
    import sys

    module = sys.modules.get("test_acceptance")
    lines = sorted(getattr(module, "RESULTS", []), key=lambda s: int(s.split("criterion")[1].split()[0]))
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
