from pathlib import Path

import pytest

from dplstm.treebank import parse_conll, read_conll

DATA = Path(__file__).parent / "data"
PUD = DATA / "cs_pud-gold.conllu"

HE_WORKS = "1\tHe\t_\t_\tPRP\t_\t2\tnsubj\t_\t_\n2\tworks\t_\t_\tVBZ\t_\t0\troot\t_\t_\n\n"


def pytest_addoption(parser):
    parser.addoption("--run-nightly", action="store_true", default=False,
                     help="run the multi-hour reproduction checks")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--run-nightly"):
        return
    skip = pytest.mark.skip(reason="nightly run; enable with --run-nightly")
    for item in items:
        if "nightly" in item.keywords:
            item.add_marker(skip)


_acceptance_lines: list[str] = []


@pytest.fixture
def acceptance_log():
    return _acceptance_lines.append


def pytest_terminal_summary(terminalreporter):
    if _acceptance_lines:
        terminalreporter.section("acceptance criteria")
        for line in _acceptance_lines:
            terminalreporter.write_line(line)


def conll(rows):
    """Build CoNLL text from (form, pos, head, label) rows, one list per sentence."""
    out = []
    for sent in rows:
        for i, (form, pos, head, label) in enumerate(sent, 1):
            out.append(f"{i}\t{form}\t_\t_\t{pos}\t_\t{head}\t{label}\t_\t_")
        out.append("")
    return "\n".join(out) + "\n"


@pytest.fixture(scope="session")
def pud():
    return read_conll(PUD)


@pytest.fixture
def he_works():
    return parse_conll(HE_WORKS)[0]
