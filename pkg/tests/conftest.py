import numpy as np
import pytest

from signlab.imagecore import Image
from signlab.synthetic import hand_dataset, solid_color_dataset


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def random_image(rng):
    def make(w=7, h=5):
        return Image(rng.integers(0, 256, size=(h, w, 3)).astype(np.uint8))
    return make


@pytest.fixture(scope="session")
def solid_manifest(tmp_path_factory):
    return solid_color_dataset(tmp_path_factory.mktemp("solid"), per_class=4, size=16)


@pytest.fixture(scope="session")
def hands_manifest(tmp_path_factory):
    return hand_dataset(tmp_path_factory.mktemp("hands"), clips_per_class=2, frames_per_clip=4,
                        size=32, validation_clips_per_class=1, seed=0)


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def acceptance(capsys):
    """Record one PASS/FAIL line for an acceptance criterion and assert on it."""
    def record(number: int, title: str, checks: dict, elapsed: float, limit: float, detail: str = ""):
        checks = dict(checks, runtime=elapsed < limit)
        ok = all(checks.values())
        failed = [k for k, v in checks.items() if not v]
        line = (f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {title}"
                f"  [{elapsed:.2f}s / {limit:g}s]" + (f"  {detail}" if detail else "")
                + (f"  failed: {', '.join(failed)}" if failed else ""))
        ACCEPTANCE_LINES.append(line)
        with capsys.disabled():
            print("\n" + line)
        assert ok, line
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
