import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(__file__))

from dualprop.data import TRAIN_IMAGES, export_mlxtend_subset  # noqa: E402


@pytest.fixture(scope="session")
def mnist_dir(tmp_path_factory):
    """Directory with IDX training files: $DUALPROP_DATA if populated, else the bundled sample."""
    env = os.environ.get("DUALPROP_DATA")
    if env and os.path.exists(os.path.join(env, TRAIN_IMAGES)):
        return env
    pytest.importorskip("mlxtend")
    return export_mlxtend_subset(str(tmp_path_factory.mktemp("mnist")))


_ACCEPTANCE = []


def record_criterion(number, passed, detail):
    line = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}"
    _ACCEPTANCE.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
