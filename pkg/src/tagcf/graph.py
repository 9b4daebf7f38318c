"""Bipartite and tripartite (user-attribute-item) graphs.

Global node order is users ``[0, n_users)``, then items, then attributes.
Three relation graphs are kept: ``UAI`` (the full block matrix with U-I, U-A
and I-A edges), ``UA`` and ``IA``. Degrees are always taken inside the
relation graph being convolved.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .exceptions import GraphStructureError

RELATIONS = ("UAI", "UA", "IA")


def _binary_csr(rows, cols, shape) -> sp.csr_matrix:
    rows = np.asarray(rows, dtype=np.int64).ravel()
    cols = np.asarray(cols, dtype=np.int64).ravel()
    m = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=shape)
    m.sum_duplicates()
    m.data[:] = 1.0
    m.sort_indices()
    return m


def _as_pairs(edges) -> np.ndarray:
    if edges is None:
        return np.empty((0, 2), dtype=np.int64)
    arr = np.asarray(edges, dtype=np.int64)
    if arr.size == 0:
        return np.empty((0, 2), dtype=np.int64)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise GraphStructureError(f"edge list must have shape (n, 2), got {arr.shape}")
    return arr


def _check_range(pairs, limits, names, relation):
    for col, (limit, name) in enumerate(zip(limits, names)):
        bad = np.flatnonzero((pairs[:, col] < 0) | (pairs[:, col] >= limit))
        if len(bad):
            e = tuple(int(x) for x in pairs[bad[0]])
            raise GraphStructureError(
                f"{relation} edge {e} references {name} index {e[col]} outside [0, {limit})")


def symmetric_normalize(adj: sp.spmatrix) -> sp.csr_matrix:
    """``D^-1/2 A D^-1/2`` with zero rows left at zero."""
    adj = sp.csr_matrix(adj)
    deg = np.asarray(adj.sum(axis=1)).ravel()
    inv = np.zeros_like(deg)
    nz = deg > 0
    inv[nz] = 1.0 / np.sqrt(deg[nz])
    d = sp.diags(inv)
    out = sp.csr_matrix(d @ adj @ d)
    out.sort_indices()
    return out


@dataclass(eq=False)
class TripartiteGraph:
    """Immutable container for the U-I, U-A and I-A relation graphs.

    ``ui`` is ``n_users x n_items``, ``ua`` is ``n_users x n_attrs`` and ``ia``
    is ``n_items x n_attrs``; all binary CSR with sorted, unique columns.
    ``attr_index`` maps each kept attribute to its id before reindexing.
    """

    n_users: int
    n_items: int
    n_attrs: int
    ui: sp.csr_matrix
    ua: sp.csr_matrix
    ia: sp.csr_matrix
    attr_index: np.ndarray
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def n_nodes(self) -> int:
        return self.n_users + self.n_items + self.n_attrs

    @property
    def item_offset(self) -> int:
        return self.n_users

    @property
    def attr_offset(self) -> int:
        return self.n_users + self.n_items

    def adjacency(self, relation: str) -> sp.csr_matrix:
        """Symmetric binary adjacency of one relation over all nodes."""
        key = ("adj", relation)
        if key not in self._cache:
            self._cache[key] = self._assemble(relation)
        return self._cache[key]

    def _assemble(self, relation):
        if relation not in RELATIONS:
            raise KeyError(f"unknown relation {relation!r}")
        nu, ni, na = self.n_users, self.n_items, self.n_attrs
        z = lambda r, c: sp.csr_matrix((r, c))  # noqa: E731
        ui = self.ui if relation == "UAI" else z(nu, ni)
        ua = self.ua if relation in ("UAI", "UA") else z(nu, na)
        ia = self.ia if relation in ("UAI", "IA") else z(ni, na)
        blocks = [
            [z(nu, nu), ui, ua],
            [ui.T, z(ni, ni), ia],
            [ua.T, ia.T, z(na, na)],
        ]
        adj = sp.csr_matrix(sp.bmat(blocks, format="csr"))
        adj.sort_indices()
        return adj

    def degrees(self, relation: str) -> np.ndarray:
        key = ("deg", relation)
        if key not in self._cache:
            adj = self.adjacency(relation)
            self._cache[key] = np.diff(adj.indptr).astype(np.float64)
        return self._cache[key]

    def normalized(self, relation: str) -> sp.csr_matrix:
        key = ("norm", relation)
        if key not in self._cache:
            self._cache[key] = symmetric_normalize(self.adjacency(relation))
        return self._cache[key]

    def norm_coefficient(self, relation: str, v: int, w: int) -> float:
        """``1 / sqrt(deg(v) * deg(w))`` for an edge of ``relation``."""
        adj = self.adjacency(relation)
        if adj[v, w] == 0:
            raise GraphStructureError(f"({v}, {w}) is not an edge of {relation}")
        deg = self.degrees(relation)
        return 1.0 / np.sqrt(deg[v] * deg[w])

    def bipartite(self) -> "TripartiteGraph":
        """The same U-I graph with every attribute removed."""
        return build_graph(self.n_users, self.n_items, self.ui_pairs())

    def ui_pairs(self) -> np.ndarray:
        coo = self.ui.tocoo()
        return np.column_stack([coo.row, coo.col]).astype(np.int64)

    def summary(self) -> dict:
        return {
            "n_users": self.n_users,
            "n_items": self.n_items,
            "n_attrs": self.n_attrs,
            "ui_edges": int(self.ui.nnz),
            "ua_edges": int(self.ua.nnz),
            "ia_edges": int(self.ia.nnz),
        }


def build_graph(n_users, n_items, ui_edges, ua_edges=None, ia_edges=None, n_attrs=None,
                drop_isolated_attrs=True) -> TripartiteGraph:
    """Assemble a :class:`TripartiteGraph` from edge lists over dense indices.

    Attributes left without any U-A or I-A edge are dropped and the attribute
    space is reindexed (``attr_index`` keeps the original ids).
    """
    ui = _as_pairs(ui_edges)
    ua = _as_pairs(ua_edges)
    ia = _as_pairs(ia_edges)
    if n_attrs is None:
        n_attrs = int(max(ua[:, 1].max(initial=-1), ia[:, 1].max(initial=-1)) + 1)
    _check_range(ui, (n_users, n_items), ("user", "item"), "U-I")
    _check_range(ua, (n_users, n_attrs), ("user", "attribute"), "U-A")
    _check_range(ia, (n_items, n_attrs), ("item", "attribute"), "I-A")
    if drop_isolated_attrs:
        kept = np.unique(np.concatenate([ua[:, 1], ia[:, 1]]))
    else:
        kept = np.arange(n_attrs, dtype=np.int64)
    remap = np.full(n_attrs, -1, dtype=np.int64)
    remap[kept] = np.arange(len(kept))
    na = len(kept)
    return TripartiteGraph(
        n_users=int(n_users),
        n_items=int(n_items),
        n_attrs=na,
        ui=_binary_csr(ui[:, 0], ui[:, 1], (n_users, n_items)),
        ua=_binary_csr(ua[:, 0], remap[ua[:, 1]], (n_users, na)),
        ia=_binary_csr(ia[:, 0], remap[ia[:, 1]], (n_items, na)),
        attr_index=kept.astype(np.int64),
    )


def build_tripartite(ds, ua_edges=None, ia_edges=None, n_attrs=None) -> TripartiteGraph:
    """Graph over the interactions of ``ds`` (pass the train part only)."""
    return build_graph(ds.n_users, ds.n_items, ds.pairs, ua_edges, ia_edges, n_attrs)


def save_graph(graph: TripartiteGraph, path, **extra) -> None:
    """Write the graph's edge lists to a compressed ``.npz`` archive."""
    np.savez_compressed(
        path,
        counts=np.array([graph.n_users, graph.n_items, graph.n_attrs], dtype=np.int64),
        ui=graph.ui_pairs(),
        ua=np.column_stack(graph.ua.nonzero()).astype(np.int64).reshape(-1, 2),
        ia=np.column_stack(graph.ia.nonzero()).astype(np.int64).reshape(-1, 2),
        attr_index=graph.attr_index,
        **extra,
    )


def load_graph(path) -> TripartiteGraph:
    with np.load(path, allow_pickle=False) as z:
        nu, ni, na = (int(x) for x in z["counts"])
        g = build_graph(nu, ni, z["ui"], z["ua"], z["ia"], n_attrs=na, drop_isolated_attrs=False)
        g.attr_index = z["attr_index"].copy()
    return g
