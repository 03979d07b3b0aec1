"""Structural k-mer embeddings: biased random walks plus skip-gram training.

Walks sample the co-occurrence graph with second-order bias (return moves
scaled by 1/p, moves to candidates adjacent to the previous node kept as
is, all others scaled by 1/q; p = q = 1 reduces to weighted first-order
walks). The walk corpus then trains skip-gram with negative sampling and a
plain SGD loop, yielding one structural vector per k-mer.

The inner loops live in mg2vec.kernels; everything here marshals data in
and out of kernel form and owns the training hyperparameters.
"""

from dataclasses import dataclass

import numpy as np

from mg2vec import kernels
from mg2vec.embeddings import EmbeddingTable
from mg2vec.errors import DomainError, TrainingDivergedError, ValidationError


@dataclass(frozen=True)
class WalkConfig:
    walks_per_node: int = 10
    walk_length: int = 80
    p: float = 1.0
    q: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.walks_per_node < 1:
            raise DomainError("walks_per_node must be >= 1")
        if self.walk_length < 2:
            raise DomainError("walk_length must be >= 2")
        if self.p <= 0 or self.q <= 0:
            raise DomainError("p and q must be positive")


def generate_walks(graph, config, use_numba=None):
    """walks_per_node truncated walks from every node, as vocab-id arrays.

    Row order is node-major (all walks of the lowest node id first);
    deterministic for a fixed seed on either kernel backend.
    """
    if graph.num_nodes == 0:
        raise ValidationError("cannot walk an empty graph")
    kns = kernels.get_kernels(use_numba)
    n_walks = graph.num_nodes * config.walks_per_node
    out = np.full((n_walks, config.walk_length), -1, dtype=np.int64)
    lengths = np.zeros(n_walks, dtype=np.int64)
    max_degree = int(np.max(np.diff(graph.indptr)))
    scratch = np.zeros(max(max_degree, 1), dtype=np.float64)
    with np.errstate(over="ignore"):
        kns["walk_kernel"](
            graph.indptr, graph.nbrs, graph.weights,
            config.walks_per_node, config.walk_length,
            float(config.p), float(config.q), np.uint64(config.seed),
            scratch, out, lengths,
        )
    node_ids = graph.node_ids
    return [node_ids[out[i, : lengths[i]]] for i in range(n_walks)]


def save_walks(path, walks):
    """One walk per line, space-separated token ids."""
    with open(path, "w") as fh:
        for walk in walks:
            fh.write(" ".join(str(int(t)) for t in walk) + "\n")


def load_walks(path):
    walks = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                walks.append(np.array([int(t) for t in line.split()], dtype=np.int64))
    return walks


def negative_sampling_cdf(corpus_tokens, vocab_size, power=0.75):
    """Cumulative unigram^power distribution over corpus tokens."""
    counts = np.bincount(corpus_tokens, minlength=vocab_size).astype(np.float64)
    probs = counts ** power
    total = probs.sum()
    if total == 0:
        raise ValidationError("empty walk corpus")
    return np.cumsum(probs / total)


def _flatten(corpus):
    offsets = np.zeros(len(corpus) + 1, dtype=np.int64)
    for i, walk in enumerate(corpus):
        offsets[i + 1] = offsets[i] + len(walk)
    tokens = np.concatenate(corpus).astype(np.int64) if corpus else np.empty(0, np.int64)
    return tokens, offsets


def initial_embeddings(vocab_size, dim, seed):
    """word2vec-style init: uniform input rows, zero context rows."""
    rng = np.random.default_rng(seed)
    emb_in = rng.uniform(-0.5 / dim, 0.5 / dim, size=(vocab_size, dim))
    emb_ctx = np.zeros((vocab_size, dim), dtype=np.float64)
    return emb_in, emb_ctx


def train_skipgram(corpus, vocab_size, dim=64, window=5, negatives=5, epochs=5,
                   learning_rate=0.025, seed=0, vocab_hash="", on_epoch=None,
                   use_numba=None):
    """Train input-side token embeddings on a walk corpus.

    Single-threaded and deterministic per seed. on_epoch(epoch, mean_loss)
    is invoked after every epoch; non-finite loss aborts.
    """
    if not corpus:
        raise ValidationError("empty walk corpus")
    if window < 1 or negatives < 1:
        raise DomainError("window and negatives must be >= 1")
    if epochs < 0:
        raise DomainError("epochs must be >= 0")
    kns = kernels.get_kernels(use_numba)
    tokens, offsets = _flatten(corpus)
    if tokens.size and (tokens.min() < 0 or tokens.max() >= vocab_size):
        raise ValidationError("corpus token id outside vocabulary")
    emb_in, emb_ctx = initial_embeddings(vocab_size, dim, seed)
    if epochs == 0:
        return EmbeddingTable(vectors=emb_in, vocab_hash=vocab_hash)
    cdf = negative_sampling_cdf(tokens, vocab_size)
    pairs_per_epoch = int(kns["count_pairs_kernel"](offsets, window))
    if pairs_per_epoch == 0:
        raise ValidationError("walk corpus has no (center, context) pairs")
    pairs_total = pairs_per_epoch * epochs
    scratch = np.zeros(dim, dtype=np.float64)
    done = 0
    with np.errstate(over="ignore"):
        for epoch in range(epochs):
            loss_sum, pairs = kns["sgns_kernel"](
                tokens, offsets, emb_in, emb_ctx, cdf, window, negatives,
                float(learning_rate), pairs_total, done, np.uint64(seed), scratch,
            )
            done += pairs
            mean_loss = loss_sum / pairs
            if not np.isfinite(mean_loss):
                raise TrainingDivergedError(
                    f"skip-gram loss became non-finite at epoch {epoch}"
                )
            if on_epoch is not None:
                on_epoch(epoch, mean_loss)
    return EmbeddingTable(vectors=emb_in, vocab_hash=vocab_hash)


def skipgram_loss_and_grad(center, context, negative_ids, emb_in, emb_ctx):
    """Negative-sampling loss for one pair, with exact gradients.

    Returns (loss, grad_in, grad_ctx); the gradient arrays are full-table
    shaped with only the touched rows non-zero. Repeated negative ids
    accumulate, and a negative colliding with the positive target is still
    treated as a negative, matching the training kernel.
    """
    grad_in = np.zeros_like(emb_in)
    grad_ctx = np.zeros_like(emb_ctx)
    v = emb_in[center]
    targets = [(int(context), 1.0)] + [(int(n), 0.0) for n in negative_ids]
    loss = 0.0
    for target, label in targets:
        u = emb_ctx[target]
        dot = float(v @ u)
        # log(1 + exp(-x)) evaluated stably on either sign
        if dot >= 0:
            pos_term = np.log1p(np.exp(-dot))
            neg_term = dot + pos_term
            f = 1.0 / (1.0 + np.exp(-dot))
        else:
            neg_term = np.log1p(np.exp(dot))
            pos_term = -dot + neg_term
            f = np.exp(dot) / (1.0 + np.exp(dot))
        loss += pos_term if label > 0.5 else neg_term
        g = f - label
        grad_in[center] += g * u
        grad_ctx[target] += g * v
    return loss, grad_in, grad_ctx
