import numpy as np
import pytest

from tagcf.graph import build_graph


def random_graph(rng, n_users, n_items, n_attrs=0, p_ui=0.3, p_ua=0.3, p_ia=0.3):
    """Bernoulli edges per block; isolated attributes are kept so counts are fixed."""
    ui = np.argwhere(rng.random((n_users, n_items)) < p_ui)
    ua = np.argwhere(rng.random((n_users, n_attrs)) < p_ua) if n_attrs else None
    ia = np.argwhere(rng.random((n_items, n_attrs)) < p_ia) if n_attrs else None
    return build_graph(n_users, n_items, ui, ua, ia, n_attrs=n_attrs, drop_isolated_attrs=False)


def dense_block_adjacency(graph, relation):
    """Independent dense assembly of the relation adjacency."""
    nu, ni, na = graph.n_users, graph.n_items, graph.n_attrs
    n = nu + ni + na
    a = np.zeros((n, n))
    if relation == "UAI":
        for u, i in graph.ui_pairs():
            a[u, nu + i] = a[nu + i, u] = 1.0
    if relation in ("UAI", "UA"):
        for u, k in zip(*graph.ua.nonzero()):
            a[u, nu + ni + k] = a[nu + ni + k, u] = 1.0
    if relation in ("UAI", "IA"):
        for i, k in zip(*graph.ia.nonzero()):
            a[nu + i, nu + ni + k] = a[nu + ni + k, nu + i] = 1.0
    return a


def dense_normalize(a):
    deg = a.sum(axis=1)
    out = np.zeros_like(a)
    for v in range(len(a)):
        for w in range(len(a)):
            if a[v, w]:
                out[v, w] = a[v, w] / np.sqrt(deg[v] * deg[w])
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_graph():
    return random_graph(np.random.default_rng(7), 5, 4, 3, 0.5, 0.5, 0.5)


# acceptance outcomes, printed once at the end of the session
ACCEPTANCE_RESULTS: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_RESULTS):
        terminalreporter.write_line(ACCEPTANCE_RESULTS[n])
