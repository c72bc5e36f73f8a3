"""Bipartite user-item interaction graph and its normalized propagation weights."""

import logging
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .errors import EmptyGraph, IndexOutOfRange

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class InteractionGraph:
    """Deduplicated CSR graph in both directions.

    ``user_indptr/user_indices`` list the items of each user (sorted), and
    ``item_indptr/item_indices`` list the users of each item (sorted).
    """

    num_users: int
    num_items: int
    user_indptr: np.ndarray
    user_indices: np.ndarray
    item_indptr: np.ndarray
    item_indices: np.ndarray

    @property
    def num_edges(self) -> int:
        return int(self.user_indices.size)

    @property
    def user_degrees(self) -> np.ndarray:
        return np.diff(self.user_indptr)

    @property
    def item_degrees(self) -> np.ndarray:
        return np.diff(self.item_indptr)

    @property
    def degrees(self) -> np.ndarray:
        """Degrees of all N + M nodes, users first."""
        return np.concatenate([self.user_degrees, self.item_degrees])

    def items_of(self, user: int) -> np.ndarray:
        return self.user_indices[self.user_indptr[user]:self.user_indptr[user + 1]]

    def users_of(self, item: int) -> np.ndarray:
        return self.item_indices[self.item_indptr[item]:self.item_indptr[item + 1]]

    def edges(self) -> np.ndarray:
        """(E, 2) array of (user, item) pairs in CSR order."""
        users = np.repeat(np.arange(self.num_users), self.user_degrees)
        return np.stack([users, self.user_indices], axis=1)

    @cached_property
    def edge_keys(self) -> np.ndarray:
        """Sorted ``user * num_items + item`` key per edge."""
        users = np.repeat(np.arange(self.num_users, dtype=np.int64), self.user_degrees)
        return users * self.num_items + self.user_indices

    def has_edge(self, user: int, item: int) -> bool:
        row = self.items_of(user)
        k = np.searchsorted(row, item)
        return bool(k < row.size and row[k] == item)


def _csr(rows: np.ndarray, cols: np.ndarray, num_rows: int):
    order = np.lexsort((cols, rows))
    indices = cols[order].astype(np.int64)
    indptr = np.zeros(num_rows + 1, dtype=np.int64)
    np.cumsum(np.bincount(rows, minlength=num_rows), out=indptr[1:])
    return indptr, indices


def build_graph(edge_list, num_users: int, num_items: int) -> InteractionGraph:
    """Build a deduplicated bipartite graph from ``(user, item)`` pairs.

    Raises ``IndexOutOfRange`` for ids outside ``[0, N)``/``[0, M)`` and
    ``EmptyGraph`` when no edge is given.
    """
    if num_users < 1 or num_items < 1:
        raise EmptyGraph("graph needs at least one user and one item")
    edges = np.asarray(edge_list, dtype=np.int64).reshape(-1, 2)
    if edges.shape[0] == 0:
        raise EmptyGraph("no interactions given")
    users, items = edges[:, 0], edges[:, 1]
    if users.min() < 0 or users.max() >= num_users:
        raise IndexOutOfRange(f"user index out of range [0, {num_users})")
    if items.min() < 0 or items.max() >= num_items:
        raise IndexOutOfRange(f"item index out of range [0, {num_items})")

    keys = np.unique(users * num_items + items)
    users, items = keys // num_items, keys % num_items
    user_indptr, user_indices = _csr(users, items, num_users)
    item_indptr, item_indices = _csr(items, users, num_items)

    graph = InteractionGraph(num_users, num_items, user_indptr, user_indices,
                             item_indptr, item_indices)
    isolated_users = int(np.sum(graph.user_degrees == 0))
    isolated_items = int(np.sum(graph.item_degrees == 0))
    if isolated_users or isolated_items:
        logger.warning("graph has %d users and %d items without interactions",
                       isolated_users, isolated_items)
    return graph


@dataclass(frozen=True, eq=False)
class NormalizedAdjacency:
    """Edge weights ``1 / sqrt(deg(u) * deg(i))`` on the graph's sparsity.

    ``user_weights`` is aligned with ``graph.user_indices`` and
    ``item_weights`` with ``graph.item_indices``.
    """

    graph: InteractionGraph
    user_weights: np.ndarray
    item_weights: np.ndarray

    @property
    def num_users(self) -> int:
        return self.graph.num_users

    @property
    def num_items(self) -> int:
        return self.graph.num_items

    def weight(self, user: int, item: int) -> float:
        g = self.graph
        lo = g.user_indptr[user]
        row = g.items_of(user)
        k = np.searchsorted(row, item)
        if k >= row.size or row[k] != item:
            return 0.0
        return float(self.user_weights[lo + k])

    def weight_item_user(self, item: int, user: int) -> float:
        g = self.graph
        lo = g.item_indptr[item]
        row = g.users_of(item)
        k = np.searchsorted(row, user)
        if k >= row.size or row[k] != user:
            return 0.0
        return float(self.item_weights[lo + k])

    @cached_property
    def user_to_item(self) -> sp.csr_matrix:
        """N x M operator: row u aggregates the items of u."""
        g = self.graph
        return sp.csr_matrix((self.user_weights, g.user_indices, g.user_indptr),
                             shape=(g.num_users, g.num_items))

    @cached_property
    def item_to_user(self) -> sp.csr_matrix:
        """M x N operator: row i aggregates the users of i."""
        g = self.graph
        return sp.csr_matrix((self.item_weights, g.item_indices, g.item_indptr),
                             shape=(g.num_items, g.num_users))

    def to_dense(self) -> np.ndarray:
        """Full (N+M) x (N+M) symmetric matrix, for small graphs and checks."""
        n = self.num_users
        out = np.zeros((n + self.num_items,) * 2)
        out[:n, n:] = self.user_to_item.toarray()
        out[n:, :n] = self.item_to_user.toarray()
        return out


def normalize(graph: InteractionGraph) -> NormalizedAdjacency:
    du = graph.user_degrees.astype(np.float64)
    di = graph.item_degrees.astype(np.float64)
    rows_u = np.repeat(np.arange(graph.num_users), graph.user_degrees)
    rows_i = np.repeat(np.arange(graph.num_items), graph.item_degrees)
    # both directions use the same product so weight(u,i) == weight(i,u) bitwise
    user_weights = 1.0 / np.sqrt(du[rows_u] * di[graph.user_indices])
    item_weights = 1.0 / np.sqrt(du[graph.item_indices] * di[rows_i])
    return NormalizedAdjacency(graph, user_weights, item_weights)
