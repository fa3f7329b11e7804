import numpy as np
import pytest

from duple.dataio import SynthConfig, load_manifest, synth_generate
from duple.episodic import PreparedData, prepare_data


@pytest.fixture(scope="session")
def small_data(tmp_path_factory) -> PreparedData:
    """3 classes x 3 domains x 20 signals of length 1024."""
    out = tmp_path_factory.mktemp("small")
    synth_generate(SynthConfig(per_cell=20, length=1024), out)
    return prepare_data(load_manifest(out / "manifest.jsonl"))


def label_only_data(labels, domains, n_domains=None) -> PreparedData:
    """PreparedData with placeholder signals, for sampling and metric tests."""
    labels, domains = np.asarray(labels), np.asarray(domains)
    r = len(labels)
    nd = n_domains or int(domains.max()) + 1
    return PreparedData(np.zeros((r, 8)), np.zeros((r, 1, 1)), np.zeros((r, 26)), labels, domains,
                        [f"c{i:02d}" for i in range(int(labels.max()) + 1)], [f"d{i:02d}" for i in range(nd)])


# acceptance summary: one line per criterion, printed after the run

_ACCEPTANCE: dict[str, list[str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, text): acceptance criterion covered by the test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    key = (mark.args[0], mark.args[1])
    if rep.when == "call" or (rep.when == "setup" and rep.outcome != "passed"):
        _ACCEPTANCE.setdefault(key, []).append("skipped" if rep.skipped else rep.outcome)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for (num, text), outcomes in sorted(_ACCEPTANCE.items()):
        if all(o == "skipped" for o in outcomes):
            verdict = "N/A "
        else:
            verdict = "PASS" if all(o in ("passed", "skipped") for o in outcomes) else "FAIL"
        terminalreporter.write_line(f"criterion {num}: {verdict}  {text}  ({len(outcomes)} checks)")
