import sys
from importlib import resources
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from dffn.config import Config  # noqa: E402
from dffn.knowledge import load_snapshots  # noqa: E402
from dffn.sentence_encoder import load_embeddings  # noqa: E402

ROOT = Path(__file__).resolve().parent.parent
SAMPLE = ROOT / "sample"
SNAPSHOTS = Path(str(resources.files("dffn.data").joinpath("snapshots")))
MICRO_CFG = ROOT / "configs" / "micro.cfg"


@pytest.fixture(scope="session")
def micro_cfg() -> Config:
    return Config.from_file(MICRO_CFG)


@pytest.fixture(scope="session")
def sample_table():
    return load_embeddings(SAMPLE / "embeddings-d8.txt", 8)


@pytest.fixture(scope="session")
def shipped_kb():
    return load_snapshots(SNAPSHOTS)


# --- acceptance summary -----------------------------------------------------------

_criteria: dict[int, tuple[str, str, str]] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("acceptance")
    if mark is None:
        return
    number, title = mark.args
    detail = "; ".join(v for k, v in item.user_properties if k == "measured")
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        status = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}[report.outcome]
        if report.outcome == "skipped" and isinstance(report.longrepr, tuple):
            detail = report.longrepr[2].removeprefix("Skipped: ")
        _criteria[number] = (status, title, detail)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        status, title, detail = _criteria[number]
        line = f"[{status}] {number:>2}. {title}"
        terminalreporter.write_line(f"{line}  ({detail})" if detail else line)
