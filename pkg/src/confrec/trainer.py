"""Mini-batch BPR training with the confidence penalty on negatives.

Gradients are derived by hand: the scores depend linearly on the readout,
and the readout is a symmetric linear map of the layer-0 tables, so the
backward pass reuses :func:`confrec.model.layer_mean`.
"""

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import DivergenceDetected, LengthMismatch, NoNegativesAvailable
from .graph import InteractionGraph, NormalizedAdjacency, build_graph, normalize
from .model import EmbeddingState, init_embeddings, layer_mean, propagate

logger = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 256
    learning_rate: float = 0.01
    embed_dim: int = 32
    layers: int = 2
    l2_weight: float = 1e-4
    conf_weight: float = 0.1
    negatives: int = 1
    seed: int = 0
    patience: int = 0  # epochs without validation improvement before stopping; 0 disables
    early_stop_metric: str = "precision"
    topn: int = 20

    def validate(self) -> None:
        for name in ("epochs", "batch_size", "embed_dim", "negatives"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.learning_rate < 0 or self.l2_weight < 0 or self.conf_weight < 0:
            raise ValueError("learning_rate, l2_weight and conf_weight must be >= 0")
        if self.layers < 0:
            raise ValueError("layers must be >= 0")
        if self.early_stop_metric not in ("precision", "accuracy"):
            raise ValueError("early_stop_metric must be 'precision' or 'accuracy'")


@dataclass
class TrainBatch:
    users: np.ndarray  # (B,)
    pos_items: np.ndarray  # (B,)
    neg_items: np.ndarray  # (B, K)

    @property
    def candidates(self) -> np.ndarray:
        """(B, K+1) candidate items, positive first."""
        return np.concatenate([self.pos_items[:, None], self.neg_items], axis=1)

    def __len__(self):
        return self.users.size


def _as_graph(train) -> InteractionGraph:
    if isinstance(train, InteractionGraph):
        return train
    return build_graph(train.train, train.num_users, train.num_items)


def sample_negatives(graph: InteractionGraph, users: np.ndarray, k: int,
                     rng: np.random.Generator) -> np.ndarray:
    """``k`` distinct non-interacted items per user, by rejection."""
    m = graph.num_items
    free = m - graph.user_degrees[users]
    if np.any(free < k):
        bad = int(users[np.argmax(free < k)])
        raise NoNegativesAvailable(f"user {bad} has fewer than {k} non-interacted items")
    keys = graph.edge_keys
    negs = rng.integers(0, m, size=(users.size, k))
    todo = np.ones_like(negs, dtype=bool)
    while True:
        flat = users[:, None] * m + negs
        pos = np.searchsorted(keys, flat)
        pos = np.minimum(pos, keys.size - 1)
        bad = keys[pos] == flat
        for j in range(1, k):
            bad[:, j] |= np.any(negs[:, :j] == negs[:, j:j + 1], axis=1)
        todo = bad
        if not todo.any():
            return negs
        negs[todo] = rng.integers(0, m, size=int(todo.sum()))


def sample_batch(train, config: TrainConfig, rng: np.random.Generator) -> TrainBatch:
    """Uniformly sample ``batch_size`` training edges and attach negatives.

    ``train`` is a ``SplitDataset`` or the training ``InteractionGraph``.
    """
    graph = _as_graph(train)
    if graph.num_edges == 0:
        raise ValueError("training set is empty")
    picks = rng.integers(0, graph.num_edges, size=config.batch_size)
    users = np.searchsorted(graph.user_indptr, picks, side="right") - 1
    pos = graph.user_indices[picks]
    negs = sample_negatives(graph, users, config.negatives, rng)
    return TrainBatch(users, pos, negs)


def softplus(x):
    return np.logaddexp(0.0, x)


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=np.float64)))


def bpr_loss(pos_score, neg_score) -> float:
    """Mean of ``-log(sigmoid(pos - neg))``."""
    return float(np.mean(softplus(np.asarray(neg_score, dtype=np.float64) - pos_score)))


def confidence_penalty(conf):
    """Per-candidate penalty ``p * log(1 + exp(p))`` (natural log)."""
    conf = np.asarray(conf, dtype=np.float64)
    return conf * softplus(conf)


def conf_loss(probs, labels) -> float:
    """Confidence penalty summed over one candidate set (or rows of a 2-D batch, then averaged).

    Entries with label 1 contribute exactly zero.
    """
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if probs.shape != labels.shape:
        raise LengthMismatch(f"probs {probs.shape} and labels {labels.shape} differ")
    per = np.where(labels == 1, 0.0, (1.0 - labels) * confidence_penalty(probs))
    if per.ndim == 1:
        return float(per.sum())
    return float(per.sum(axis=-1).mean())


def candidate_softmax(scores: np.ndarray) -> np.ndarray:
    shifted = scores - scores.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass
class LossParts:
    bpr: float
    conf: float  # weighted: conf_weight * raw penalty
    l2: float  # weighted: l2_weight * squared-norm term
    neg_conf: float = 0.0  # mean candidate-softmax probability of the negatives

    @property
    def total(self) -> float:
        return self.bpr + self.conf + self.l2


def batch_objective(user_emb: np.ndarray, item_emb: np.ndarray, adj: NormalizedAdjacency,
                    batch: TrainBatch, config: TrainConfig, need_grad: bool = True):
    """Objective on one batch and its gradient w.r.t. the layer-0 tables.

    total = mean BPR over (pos, neg) pairs
          + conf_weight * mean over triples of the penalty on negatives,
            confidences being the softmax over each triple's candidates
          + l2_weight * 0.5 * (squared norms of the batch rows) / B

    Returns ``(LossParts, grad_user, grad_item)``; the gradients are None
    when ``need_grad`` is False.
    """
    fu, fi, _ = layer_mean(adj, user_emb, item_emb, config.layers)
    b = len(batch)
    k = batch.neg_items.shape[1]
    cand = batch.candidates
    u_vec = fu[batch.users]  # (B, d)
    c_vec = fi[cand]  # (B, K+1, d)
    scores = np.einsum("bd,bkd->bk", u_vec, c_vec)

    diff = scores[:, 1:] - scores[:, :1]  # neg - pos
    bpr = float(np.mean(softplus(diff)))
    d_scores = np.zeros_like(scores)
    g_diff = sigmoid(diff) / (b * k)
    d_scores[:, 1:] += g_diff
    d_scores[:, 0] -= g_diff.sum(axis=1)

    q = candidate_softmax(scores)
    conf = 0.0
    if config.conf_weight > 0:
        conf = float(confidence_penalty(q[:, 1:]).sum(axis=1).mean())
        # d/dq [q softplus(q)] = softplus(q) + q sigmoid(q)
        g_q = np.zeros_like(q)
        g_q[:, 1:] = (softplus(q[:, 1:]) + q[:, 1:] * sigmoid(q[:, 1:])) / b
        d_scores += config.conf_weight * q * (g_q - np.sum(g_q * q, axis=1, keepdims=True))

    u0 = user_emb[batch.users]
    i0 = item_emb[cand]
    reg = 0.5 * (np.sum(u0 * u0) + np.sum(i0 * i0)) / b
    parts = LossParts(bpr, config.conf_weight * conf, config.l2_weight * reg,
                      float(q[:, 1:].mean()))
    if not need_grad:
        return parts, None, None

    g_fu = np.zeros_like(fu)
    g_fi = np.zeros_like(fi)
    np.add.at(g_fu, batch.users, np.einsum("bk,bkd->bd", d_scores, c_vec))
    np.add.at(g_fi, cand, d_scores[:, :, None] * u_vec[:, None, :])
    g_user, g_item, _ = layer_mean(adj, g_fu, g_fi, config.layers)
    np.add.at(g_user, batch.users, (config.l2_weight / b) * u0)
    np.add.at(g_item, cand, (config.l2_weight / b) * i0)
    return parts, g_user, g_item


class Adam:
    """Adam over a dict of arrays, updated in place."""

    def __init__(self, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = {}
        self.v = {}
        self.t = 0

    def step(self, params: dict, grads: dict) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for key, p in params.items():
            g = grads[key]
            if key not in self.m:
                self.m[key] = np.zeros_like(p)
                self.v[key] = np.zeros_like(p)
            m, v = self.m[key], self.v[key]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p -= (self.lr / bc1) * m / (np.sqrt(v / bc2) + self.eps)


@dataclass
class EpochStats:
    epoch: int
    bpr: float
    conf: float
    l2: float
    wall_time: float
    neg_conf: float = float("nan")
    valid_metric: float = float("nan")

    def to_json(self) -> str:
        record = {k: (None if isinstance(v, float) and math.isnan(v) else v)
                  for k, v in asdict(self).items()}
        return json.dumps(record, sort_keys=True)


def train_epoch(state: EmbeddingState, adj: NormalizedAdjacency, train, config: TrainConfig,
                rng: np.random.Generator, optimizer: Adam = None, epoch: int = 0):
    """One pass of ceil(|train| / batch_size) Adam steps.

    Returns a new ``EmbeddingState`` (propagated with the updated tables)
    and the epoch's mean loss components.  Raises ``DivergenceDetected``
    if any parameter stops being finite.
    """
    graph = _as_graph(train)
    if optimizer is None:
        optimizer = Adam(config.learning_rate)
    params = {"user": state.user_emb.copy(), "item": state.item_emb.copy()}
    n_batches = max(1, math.ceil(graph.num_edges / config.batch_size))
    sums = np.zeros(4)
    start = time.perf_counter()
    for step in range(n_batches):
        batch = sample_batch(graph, config, rng)
        # overflow is reported as DivergenceDetected below
        with np.errstate(over="ignore", invalid="ignore"):
            parts, g_user, g_item = batch_objective(params["user"], params["item"], adj, batch,
                                                    config)
        sums += (parts.bpr, parts.conf, parts.l2, parts.neg_conf)
        optimizer.step(params, {"user": g_user, "item": g_item})
        if not (math.isfinite(parts.total) and np.isfinite(params["user"]).all()
                and np.isfinite(params["item"]).all()):
            raise DivergenceDetected(
                f"non-finite loss or parameters at epoch {epoch} step {step} "
                f"(bpr={float(parts.bpr)}, conf={float(parts.conf)}, l2={float(parts.l2)})")
    mean = sums / n_batches
    stats = EpochStats(epoch, float(mean[0]), float(mean[1]), float(mean[2]),
                       time.perf_counter() - start, float(mean[3]))
    new_state = propagate(EmbeddingState(params["user"], params["item"]), adj, config.layers)
    return new_state, stats


@dataclass
class TrainResult:
    state: EmbeddingState
    adj: NormalizedAdjacency
    history: list = field(default_factory=list)
    best_epoch: int = -1


def fit(split, config: TrainConfig, on_epoch=None) -> TrainResult:
    """Train from scratch on ``split.train``; the graph uses training edges only.

    ``on_epoch`` is called with each ``EpochStats``.  With ``patience > 0``
    training stops once validation Precision@N (or Accuracy@N) has not
    improved for that many epochs, and the best state is returned.
    """
    from .metrics import accuracy_at_n, collect_topk, precision_at_n

    config.validate()
    graph = build_graph(split.train, split.num_users, split.num_items)
    adj = normalize(graph)
    state = propagate(init_embeddings(split.num_users, split.num_items, config.embed_dim,
                                      config.seed), adj, config.layers)
    # sampling stream is independent of the initialization stream
    rng = np.random.default_rng([config.seed, 1])
    optimizer = Adam(config.learning_rate)
    result = TrainResult(state, adj)
    best, stale = -math.inf, 0
    for epoch in range(config.epochs):
        state, stats = train_epoch(state, adj, graph, config, rng, optimizer, epoch)
        if config.patience > 0 and split.valid.size:
            results = collect_topk(state, split, "valid", config.topn)
            metric = (precision_at_n(results, config.topn) if config.early_stop_metric == "precision"
                      else accuracy_at_n(results, n=config.topn))
            stats.valid_metric = metric
            if metric > best:
                best, stale = metric, 0
                result.state, result.best_epoch = state, epoch
            else:
                stale += 1
        else:
            result.state, result.best_epoch = state, epoch
        result.history.append(stats)
        if on_epoch is not None:
            on_epoch(stats)
        if config.patience > 0 and stale >= config.patience:
            logger.info("early stop at epoch %d (best epoch %d)", epoch, result.best_epoch)
            break
    return result


def mean_negative_confidence(state: EmbeddingState, graph: InteractionGraph, negatives: int,
                             rng: np.random.Generator, num_samples: int = 4096) -> float:
    """Mean candidate-softmax probability of sampled negatives under a propagated state."""
    cfg = TrainConfig(batch_size=num_samples, negatives=negatives)
    batch = sample_batch(graph, cfg, rng)
    cand = batch.candidates
    scores = np.einsum("bd,bkd->bk", state.final_user[batch.users], state.final_item[cand])
    return float(candidate_softmax(scores)[:, 1:].mean())
