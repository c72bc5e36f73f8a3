"""Embedding tables, linear message propagation, scoring and the softmax normalization layer."""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import AllExcluded, DimensionMismatch, IndexOutOfRange
from .graph import NormalizedAdjacency

INIT_STD = 0.1


@dataclass
class EmbeddingState:
    """Layer-0 embeddings (the trainable parameters) and their propagated readout.

    ``final_user``/``final_item`` hold the layer-mean readout; right after
    :func:`init_embeddings` they equal the layer-0 tables (no propagation).
    """

    user_emb: np.ndarray
    item_emb: np.ndarray
    final_user: Optional[np.ndarray] = None
    final_item: Optional[np.ndarray] = None
    layer_outputs: Optional[list] = None

    def __post_init__(self):
        if self.final_user is None:
            self.final_user = self.user_emb.copy()
        if self.final_item is None:
            self.final_item = self.item_emb.copy()

    @property
    def num_users(self) -> int:
        return self.user_emb.shape[0]

    @property
    def num_items(self) -> int:
        return self.item_emb.shape[0]

    @property
    def dim(self) -> int:
        return self.user_emb.shape[1]

    def copy(self) -> "EmbeddingState":
        return EmbeddingState(self.user_emb.copy(), self.item_emb.copy(),
                              self.final_user.copy(), self.final_item.copy())


def init_embeddings(num_users: int, num_items: int, dim: int, seed: int) -> EmbeddingState:
    """Draw both tables i.i.d. from N(0, 0.1^2) using ``numpy.random.default_rng(seed)``."""
    if dim < 1:
        raise ValueError("embedding dimension must be >= 1")
    rng = np.random.default_rng(seed)
    users = rng.normal(0.0, INIT_STD, size=(num_users, dim))
    items = rng.normal(0.0, INIT_STD, size=(num_items, dim))
    return EmbeddingState(users, items)


def layer_mean(adj: NormalizedAdjacency, users: np.ndarray, items: np.ndarray,
               num_layers: int, keep_layers: bool = False):
    """Apply the layer-mean propagation operator to a pair of (N, d), (M, d) blocks.

    The operator is symmetric, so the same call maps readout gradients back to
    layer-0 gradients.
    """
    if users.shape[0] != adj.num_users or items.shape[0] != adj.num_items:
        raise DimensionMismatch(
            f"embeddings ({users.shape[0]}, {items.shape[0]}) do not match graph "
            f"({adj.num_users}, {adj.num_items})")
    if num_layers < 0:
        raise ValueError("number of layers must be >= 0")
    hu, hi = users, items
    acc_u, acc_i = users.copy(), items.copy()
    layers = [(hu, hi)] if keep_layers else None
    for _ in range(num_layers):
        hu, hi = adj.user_to_item @ hi, adj.item_to_user @ hu
        acc_u += hu
        acc_i += hi
        if keep_layers:
            layers.append((hu, hi))
    scale = 1.0 / (num_layers + 1)
    return acc_u * scale, acc_i * scale, layers


def propagate(state: EmbeddingState, adj: NormalizedAdjacency, num_layers: int,
              keep_layers: bool = False) -> EmbeddingState:
    """Return a new state whose readout is the mean of layers 0..L.

    Layer l+1 of a user is the weighted sum of its items' layer-l embeddings
    (and symmetrically for items); there is no feature transform or
    nonlinearity.
    """
    fu, fi, layers = layer_mean(adj, state.user_emb, state.item_emb, num_layers, keep_layers)
    return EmbeddingState(state.user_emb, state.item_emb, fu, fi, layers)


def score(state: EmbeddingState, user_index: int) -> np.ndarray:
    """Ratings of one user against every item (dot products of readouts)."""
    if not 0 <= user_index < state.num_users:
        raise IndexOutOfRange(f"user {user_index} not in [0, {state.num_users})")
    return state.final_item @ state.final_user[user_index]


def exclusion_mask(exclude, size: int) -> np.ndarray:
    mask = np.zeros(size, dtype=bool)
    if exclude is None:
        return mask
    if isinstance(exclude, (set, frozenset)):
        exclude = sorted(exclude)
    exclude = np.asarray(exclude)
    if exclude.dtype == bool:
        if exclude.shape != (size,):
            raise DimensionMismatch("boolean mask length does not match ratings")
        return exclude.copy()
    idx = exclude.astype(np.int64).ravel()
    if idx.size and (idx.min() < 0 or idx.max() >= size):
        raise IndexOutOfRange("excluded index out of range")
    mask[idx] = True
    return mask


def normalize_scores(ratings: np.ndarray, exclude=None) -> np.ndarray:
    """Softmax over the non-excluded ratings; excluded entries get probability 0.

    ``exclude`` is a set/array of item indices or a boolean mask.
    """
    ratings = np.asarray(ratings, dtype=np.float64)
    mask = exclusion_mask(exclude, ratings.size)
    keep = ~mask
    if not keep.any():
        raise AllExcluded("every item is excluded; nothing to rank")
    probs = np.zeros_like(ratings)
    shifted = ratings[keep] - ratings[keep].max()
    e = np.exp(shifted)
    probs[keep] = e / e.sum()
    return probs


@dataclass
class ScoreSheet:
    user_index: int
    ratings: np.ndarray
    probs: np.ndarray
    top_prediction: int
    top_confidence: float
    exclude: np.ndarray  # boolean mask of items outside the candidate set

    @classmethod
    def from_ratings(cls, user_index: int, ratings, exclude=None) -> "ScoreSheet":
        ratings = np.asarray(ratings, dtype=np.float64)
        mask = exclusion_mask(exclude, ratings.size)
        probs = normalize_scores(ratings, mask)
        top = int(np.argmax(probs))
        return cls(user_index, ratings, probs, top, float(probs[top]), mask)

    @property
    def candidates(self) -> np.ndarray:
        return np.flatnonzero(~self.exclude)


def score_sheet(state: EmbeddingState, user_index: int, exclude=None) -> ScoreSheet:
    return ScoreSheet.from_ratings(user_index, score(state, user_index), exclude)
