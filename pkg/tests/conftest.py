import pytest

from mtlopm.dsp import EqualizerConfig
from mtlopm.features import DatasetSpec, build_frame_bank
from mtlopm.sigsim import SimConfig

SMALL_SIM = SimConfig(n_symbols=600)


@pytest.fixture(scope="session")
def small_bank():
    spec = DatasetSpec(osnr_grid=(32.0, 36.0, 40.0, 44.0), frames_per_point=3, bin_count=50, seed=3)
    return build_frame_bank(spec, SMALL_SIM, EqualizerConfig())


@pytest.fixture(scope="session")
def default_bank():
    return build_frame_bank(DatasetSpec())


# Acceptance reporting: one PASS/FAIL line per criterion at the end of the run.
_acceptance = {}


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.failed):
        return
    marker = dict(report.user_properties).get("criterion")
    if marker is None:
        return
    detail = dict(report.user_properties).get("detail", "")
    ok = report.passed
    prev = _acceptance.get(marker)
    _acceptance[marker] = (ok and (prev is None or prev[0]), ((prev[1] + "; ") if prev else "") + detail)


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_acceptance, key=lambda k: (int(k.split()[0]), k)):
        ok, detail = _acceptance[key]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {key}: {detail}")
