import time

import pytest

ACCEPTANCE_LINES: list[str] = []


class Criterion:
    """Records one PASS/FAIL line per check and fails the test if any check failed."""

    def __init__(self, tag: str):
        self.tag = tag
        self.failed: list[str] = []
        self.start = time.perf_counter()

    def check(self, name: str, ok: bool, detail: str) -> None:
        line = f"[{'PASS' if ok else 'FAIL'}] {self.tag} {name}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        if not ok:
            self.failed.append(line)

    def runtime(self, limit: float) -> None:
        elapsed = time.perf_counter() - self.start
        self.check("runtime", elapsed < limit, f"{elapsed:.1f} s (limit {limit:g} s)")

    def finish(self) -> None:
        if self.failed:
            pytest.fail("\n".join(self.failed), pytrace=False)


@pytest.fixture
def criterion(request):
    return Criterion(request.node.name.removeprefix("test_"))


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
