import random

import pytest

from vhirb.crypto import AeadCipher
from vhirb.store import MemoryStore
from vhirb.voram import VOram, VoramConfig


def make_voram(T=4, Z=512, *, seed=0, store=None, **kw):
    rng = random.Random(seed)
    voram = VOram(VoramConfig(T=T, Z=Z), store if store is not None else MemoryStore(),
                  rng=rng, cipher=kw.pop("cipher", AeadCipher(rng)), **kw)
    voram.initialize()
    return voram


@pytest.fixture
def voram():
    return make_voram()


# -- acceptance reporting ---------------------------------------------------

_CRITERIA: dict[int, tuple[str, str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


@pytest.fixture
def measured(request):
    """Attach a one-line measurement to the current criterion's report."""
    def note(text):
        request.node.user_properties.append(("measured", text))
    return note


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or report.when != "call" and not (report.when == "setup" and report.failed):
        return
    number, title = mark.args
    notes = "; ".join(v for k, v in item.user_properties if k == "measured")
    status = "PASS" if report.passed else "FAIL"
    if number in _CRITERIA:  # parametrized criteria fold into one line
        old_status, _, old_notes = _CRITERIA[number]
        status = "FAIL" if "FAIL" in (status, old_status) else status
        notes = "; ".join(x for x in (old_notes, notes) if x)
    _CRITERIA[number] = (status, title, notes)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        status, title, notes = _CRITERIA[number]
        line = f"criterion {number:2d} {status}: {title}"
        terminalreporter.write_line(line + (f" ({notes})" if notes else ""))
