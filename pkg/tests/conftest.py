import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import HealthCheck, settings
from hypothesis import strategies as st

from copygraph.graph import Graph

settings.register_profile("default", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@st.composite
def undirected_graphs(draw, min_nodes=1, max_nodes=12, p=None):
    n = draw(st.integers(min_nodes, max_nodes))
    pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
    mask = draw(st.lists(st.booleans(), min_size=len(pairs), max_size=len(pairs)))
    return Graph.from_edges(n, [e for e, keep in zip(pairs, mask) if keep])


@st.composite
def directed_graphs(draw, min_nodes=1, max_nodes=10):
    n = draw(st.integers(min_nodes, max_nodes))
    pairs = [(i, j) for i in range(n) for j in range(n) if i != j]
    mask = draw(st.lists(st.booleans(), min_size=len(pairs), max_size=len(pairs)))
    return Graph.from_edges(n, [e for e, keep in zip(pairs, mask) if keep], directed=True)


def random_graph(n, p, rng, directed=False):
    a = sp.random(n, n, density=p, random_state=rng, data_rvs=np.ones, format="csr")
    a.setdiag(0)
    a.eliminate_zeros()
    if not directed:
        a = sp.triu(a, k=1)
        a = a + a.T
    return Graph(sp.csr_matrix(a), directed=directed)


@pytest.fixture
def triangle():
    return Graph.from_edges(3, [(0, 1), (1, 2), (0, 2)])


@pytest.fixture
def star():
    return Graph.from_edges(4, [(0, 1), (0, 2), (0, 3)])


def write_cli_inputs(root):
    """Small SBM graph, labels, features and interactions for CLI runs."""
    from copygraph.datasets import planted_partition
    from copygraph.graph import write_edge_list, write_features, write_interactions, write_labels
    from copygraph.recsys import planted_interactions
    from copygraph.rng import derive_rng

    data = planted_partition([60, 60], 0.1, 0.01, 60, derive_rng(0, "cli"))
    write_edge_list(data.graph, root / "g.txt")
    write_labels(data.labels, root / "l.csv")
    write_features(data.features, root / "f.csv")
    bg = planted_interactions(40, 30, 3, 0.4, 0.02, derive_rng(0, "cli", "rec"))[0]
    write_interactions(bg.pairs(), root / "inter.tsv")
    return {k: str(root / k) for k in ("g.txt", "l.csv", "f.csv", "inter.tsv")}


def cli_commands(paths, out):
    """One argument list per subcommand, chained through ``out``."""
    g, lab, f, inter = paths["g.txt"], paths["l.csv"], paths["f.csv"], paths["inter.tsv"]
    fast = ["--epochs", "30", "--hidden", "8"]
    return [
        ("stats", ["stats", "--graph", g, "--labels", lab, "--lcc"]),
        ("sample", ["sample", "--graph", g, "--k", "3", "--n-samples", "4", "--features", f]),
        ("verify", ["verify", "--model", "sbm", "--sizes", "20,20", "--dist", "within", "--trials", "60"]),
        ("classify", ["classify", "--graph", g, "--features", f, "--labels", lab, "--train-per-class", "5",
                      "--n-test", "50", "--n-graphs", "3", "--weight-samples", "2", *fast]),
        ("attack", ["attack", "--graph", g, "--labels", lab, "--n-targets", "10", "--train-per-class", "5"]),
        ("defend", ["defend", "--graph", str(out / "attack" / "attacked.txt"), "--features", f, "--labels", lab,
                    "--targets", str(out / "attack" / "manifest.json"), "--train-per-class", "5",
                    "--n-graphs", "3", "--p-nearest", "5", *fast]),
        ("recsys.train", ["recsys", "train", "--interactions", inter, "--dim", "8", "--epochs", "5"]),
        ("recsys.eval", ["recsys", "eval", "--model", str(out / "recsys.train" / "model.json"),
                         "--train", str(out / "recsys.train" / "train.tsv"), "--test", str(out / "recsys.train" / "test.tsv")]),
        ("recsys.ebpr", ["recsys", "ebpr", "--model", str(out / "recsys.train" / "model.json"), "--n-graphs", "3",
                         "--train", str(out / "recsys.train" / "train.tsv"), "--test", str(out / "recsys.train" / "test.tsv")]),
        ("recsys.sgbpr", ["recsys", "sgbpr", "--n-graphs", "3", "--dim", "8", "--epochs", "3",
                          "--train", str(out / "recsys.train" / "train.tsv"), "--test", str(out / "recsys.train" / "test.tsv")]),
    ]


def run_cli_chain(paths, out, seed, workers):
    """Run every subcommand into ``out/<name>``; returns ``{name: exit code}``."""
    from copygraph.cli import main

    codes = {}
    for name, args in cli_commands(paths, out):
        codes[name] = main(["--seed", str(seed), "--workers", str(workers), "--out", str(out / name), *args])
    return codes


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
