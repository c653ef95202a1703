import numpy as np
import pytest

from instfuse.core import NUM_LOCAL, PixelGrid, SoftmaxPatch


def make_patch(probs, origin=(0, 0), size_class="large", patch_id="p"):
    return SoftmaxPatch(patch_id, origin, size_class, np.asarray(probs, dtype=np.float64))


def onehot_patch(local_ids, origin=(0, 0), size_class="large", patch_id="p"):
    ids = np.asarray(local_ids)
    return make_patch(np.eye(NUM_LOCAL)[ids], origin, size_class, patch_id)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def grid_4x5():
    return PixelGrid(width=5, height=4)


# (criterion number, passed, detail) rows filled by the acceptance tests
ACCEPTANCE: list[tuple[int, bool, str]] = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for n, ok, detail in sorted(ACCEPTANCE):
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
