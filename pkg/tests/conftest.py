import pytest

from micromodels.core import Lexicon, placeholder_lexicon
from micromodels.embedding import FallbackEmbedder

_criteria = {}
_notes = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion covered by the test")


def pytest_runtest_logreport(report):
    marker = getattr(report, "criterion", None)
    if marker is None:
        return
    n, title = marker
    failed = report.failed or (report.when == "call" and report.skipped)
    prev = _criteria.get(n, (title, True))
    _criteria[n] = (title, prev[1] and not failed)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is not None:
        report.criterion = (mark.args[0], mark.args[1])


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_criteria):
        title, ok = _criteria[n]
        note = "; ".join(_notes.get(n, []))
        terminalreporter.write_line(
            f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {title}" + (f"  [{note}]" if note else "")
        )


@pytest.fixture
def note(request):
    """Attach a measured value to the current test's criterion summary line."""
    mark = request.node.get_closest_marker("criterion")

    def add(text):
        if mark is not None:
            _notes.setdefault(mark.args[0], []).append(text)

    return add


@pytest.fixture(scope="session")
def fallback():
    return FallbackEmbedder()


@pytest.fixture(scope="session")
def placeholder():
    return placeholder_lexicon()


@pytest.fixture
def fixture_lexicon():
    return Lexicon("L", {"neg": ("worthless", "hopeless*", "sad"), "pos": ("happy", "calm")})
