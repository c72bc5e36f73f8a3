import numpy as np
import pytest

from confrec.graph import build_graph, normalize


def random_bipartite(rng, max_nodes=64, min_users=1, min_items=1):
    """Random bipartite edge list with at most ``max_nodes`` users + items."""
    n = int(rng.integers(min_users, max_nodes // 2 + 1))
    m = int(rng.integers(min_items, max_nodes - n + 1))
    density = rng.uniform(0.05, 0.6)
    mask = rng.random((n, m)) < density
    mask[0, 0] = True  # never empty
    users, items = np.nonzero(mask)
    return list(zip(users.tolist(), items.tolist())), n, m


def dense_normalized(edges, n, m):
    """D^{-1/2} A D^{-1/2} of the (n+m)-node bipartite adjacency, built densely."""
    a = np.zeros((n + m, n + m))
    for u, i in edges:
        a[u, n + i] = 1.0
        a[n + i, u] = 1.0
    deg = a.sum(axis=1)
    inv = np.zeros_like(deg)
    inv[deg > 0] = deg[deg > 0] ** -0.5
    return inv[:, None] * a * inv[None, :]


def dense_layer_mean(edges, n, m, users, items, layers):
    a_hat = dense_normalized(edges, n, m)
    h = np.vstack([users, items])
    acc = h.copy()
    power = np.eye(n + m)
    for _ in range(layers):
        power = power @ a_hat
        acc = acc + power @ h
    acc /= layers + 1
    return acc[:n], acc[n:]


@pytest.fixture
def toy_graph():
    edges = [(0, 0), (0, 1), (1, 1)]
    return build_graph(edges, 2, 2)


@pytest.fixture
def toy_adj(toy_graph):
    return normalize(toy_graph)
