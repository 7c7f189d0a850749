from __future__ import annotations

from types import SimpleNamespace

import pytest

from ntgen.clustering import encode, kmeans_fit
from ntgen.features import FlowMeta, feature_table
from ntgen.fixture import FixtureSpec, make_fixture_corpus
from ntgen.flows import assemble_flows
from ntgen.packets import load_capture
from ntgen.pipeline import file_digest


@pytest.fixture(scope="session")
def corpus(tmp_path_factory):
    """The default fixture capture, assembled and featurised once per session."""
    path = tmp_path_factory.mktemp("corpus") / "fixture.pcap"
    truth = make_fixture_corpus(FixtureSpec(), path)
    packets, stats = load_capture(path)
    assembly = assemble_flows(packets)
    table = feature_table(assembly.flows, packets, file_digest(path))
    return SimpleNamespace(path=path, truth=truth, packets=packets, stats=stats,
                           assembly=assembly, table=table,
                           meta=[FlowMeta.of(f) for f in assembly.flows])


@pytest.fixture(scope="session")
def corpus_k10(corpus):
    return kmeans_fit(encode(corpus.table), K=10, seed=0)


_CRITERIA_KEY = pytest.StashKey[dict]()


@pytest.fixture
def criterion(request):
    """Record and print one PASS/FAIL line for an acceptance criterion."""
    lines = request.config.stash.setdefault(_CRITERIA_KEY, {})

    def report(number: int, ok: bool, detail: str) -> bool:
        line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}"
        lines[number] = line
        print(line)
        return ok
    return report


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_CRITERIA_KEY, {})
    if lines:
        terminalreporter.section("acceptance criteria")
        for number in sorted(lines):
            terminalreporter.write_line(lines[number])
