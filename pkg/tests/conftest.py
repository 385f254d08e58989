import numpy as np
import pytest

from kcln.graph import build_graph


def make_graph(n, edges, labels=None, features=None, label_names=("a", "b", "c"),
               vocab=None, symmetric=True, feature_dim=3, seed=0):
    rng = np.random.default_rng(seed)
    if features is None:
        features = rng.random((n, feature_dim))
    if labels is None:
        labels = rng.integers(0, len(label_names), n)
    return build_graph([f"e{i}" for i in range(n)], features, labels, label_names, edges,
                       vocab, symmetric=symmetric)


@pytest.fixture
def tiny_files(tmp_path):
    nodes = tmp_path / "nodes.tsv"
    edges = tmp_path / "edges.tsv"
    vocab = tmp_path / "vocab.tsv"
    nodes.write_text(
        "p1\ttype1\t0:0.5,2:1.0\n"
        "p2\ttype2\t1:0.25\n"
        "p3\t?\t\n"
        "p4\tnone\t0:0.1\n",
        encoding="utf-8",
    )
    edges.write_text("Cites\tp1\tp2\nCites\tp2\tp3\nsameAuthor\tp4\tp1\n", encoding="utf-8")
    vocab.write_text("HasWord:fat\t0\nHasWord:obese\t1\nHasWord:sugar\t2\n", encoding="utf-8")
    return nodes, edges, vocab


# criterion number -> (passed, detail), filled by test_acceptance.py
RESULTS = {}


def pytest_terminal_summary(terminalreporter):
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(RESULTS):
        ok, detail = RESULTS[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}")
