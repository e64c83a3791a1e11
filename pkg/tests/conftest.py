import os
import sys

import pytest
import torch

sys.path.insert(0, os.path.dirname(__file__))
torch.set_num_threads(1)


@pytest.fixture(scope="session")
def vocab3():
    from kwspot.datamodel import make_vocab

    return make_vocab(3, 0)


@pytest.fixture(scope="session")
def small_samples(vocab3):
    from kwspot.synthgen import SynthConfig, synthesize

    return synthesize(SynthConfig(image_height=128, image_width=128, lines_per_image=(1, 2),
                                  glyph_size=(14, 20), seed=3), vocab3, 6)


# -- acceptance summary ------------------------------------------------------

ACCEPTANCE: dict = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    name = getattr(item.function, "criterion", None)
    if name is None or (rep.when != "call" and not rep.failed):
        return
    notes = list(getattr(item, "criterion_notes", []))
    if call.excinfo is not None:
        notes.append(str(call.excinfo.value).splitlines()[0][:160] if str(call.excinfo.value) else call.excinfo.typename)
    ACCEPTANCE[name] = (rep.passed, "; ".join(notes))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, (ok, detail) in ACCEPTANCE.items():
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")


@pytest.fixture
def note(request):
    """Append a measured value to the acceptance line of the running test."""
    notes = request.node.criterion_notes = []
    return notes.append
