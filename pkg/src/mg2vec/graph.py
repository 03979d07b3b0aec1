"""Global weighted directed k-mer co-occurrence graph.

Nodes are k-mer ids observed in the corpus; an edge src -> dst exists for
every consecutive k-mer pair (stride 1) seen in a read, with UNK windows
severing adjacency. Raw observation counts are the source of truth: the
edge weight is a pure function of the count, obtained by folding the
update rule below, so construction is order-invariant and shards can be
merged before weights are derived.

Weight update for an edge re-observed with incoming weight 1:

    psi    = current / max(|current - incoming|, denom_floor)
    damp   = min(psi - lambda_min, lambda_min) + lambda_min
    next   = lambda_max * sqrt(max(psi - 1, 1)) + damp

A brand-new edge starts at weight 1. With the defaults
(lambda_max = lambda_min = 2, denom_floor = 1) the sequence over repeat
observations is 1, 3, 3.5, ... converging to 2 + sqrt(2): frequently
re-observed pairs saturate instead of growing without bound, and rare
repeats are only weakly reinforced. The denominator is floored because
the first repeat observation would otherwise divide by zero.
"""

from bisect import bisect_left
from dataclasses import dataclass

import numpy as np

from mg2vec.errors import (
    ArtifactFormatError,
    DeadEndError,
    DomainError,
    EmptyGraphError,
    ValidationError,
)
from mg2vec.kmer import tokenize


@dataclass(frozen=True)
class WeightParams:
    lambda_max: float = 2.0
    lambda_min: float = 2.0
    denom_floor: float = 1.0
    raw_counts: bool = False  # ablation: use counts directly as weights

    def __post_init__(self):
        if self.lambda_max <= 0 or self.lambda_min <= 0:
            raise DomainError("lambda_max and lambda_min must be positive")
        if self.denom_floor <= 0:
            raise DomainError("denom_floor must be positive")


def update_weight(current, incoming, params=WeightParams()):
    """Fold one repeat observation of weight `incoming` into `current`."""
    if current <= 0 or incoming <= 0:
        raise DomainError("edge weights must be positive")
    psi = current / max(abs(current - incoming), params.denom_floor)
    damp = min(psi - params.lambda_min, params.lambda_min) + params.lambda_min
    return params.lambda_max * np.sqrt(max(psi - 1.0, 1.0)) + damp


def weight_from_count(count, params=WeightParams()):
    """Weight of an edge observed `count` times (first observation -> 1.0)."""
    if count < 1:
        raise DomainError("observation count must be >= 1")
    if params.raw_counts:
        return float(count)
    weight = 1.0
    for _ in range(count - 1):
        weight = update_weight(weight, 1.0, params)
    return weight


class KmerGraph:
    """CSR-form directed graph over k-mer token ids.

    node_ids are the observed vocabulary ids (sorted); all CSR arrays are
    indexed by dense local node index, and each neighbor row is sorted by
    local destination index. Counts and weights align with `nbrs`.
    """

    def __init__(self, node_ids, indptr, nbrs, counts, params, vocab):
        self.node_ids = node_ids
        self.indptr = indptr
        self.nbrs = nbrs
        self.counts = counts
        self.params = params
        self.vocab = vocab
        self.weights = derive_weights(counts, params)
        self._local = {int(v): i for i, v in enumerate(node_ids)}

    @property
    def num_nodes(self):
        return len(self.node_ids)

    @property
    def num_edges(self):
        return len(self.nbrs)

    def local_index(self, token_id):
        try:
            return self._local[int(token_id)]
        except KeyError:
            raise DomainError(f"token id {token_id} is not a graph node") from None

    def out_edges(self, token_id):
        """(dst token ids, counts, weights) of a node's outgoing edges."""
        i = self.local_index(token_id)
        lo, hi = self.indptr[i], self.indptr[i + 1]
        return self.node_ids[self.nbrs[lo:hi]], self.counts[lo:hi], self.weights[lo:hi]

    def edge_count(self, src_token, dst_token):
        """Observation count of edge src -> dst, or 0 when absent."""
        i = self.local_index(src_token)
        j = self._local.get(int(dst_token))
        if j is None:
            return 0
        lo, hi = self.indptr[i], self.indptr[i + 1]
        pos = lo + bisect_left(self.nbrs[lo:hi].tolist(), j)
        if pos < hi and self.nbrs[pos] == j:
            return int(self.counts[pos])
        return 0


def derive_weights(counts, params):
    if np.any(counts < 1):
        raise DomainError("edge counts must be >= 1")
    if params.raw_counts:
        return counts.astype(np.float64)
    table = {}
    weights = np.empty(len(counts), dtype=np.float64)
    for i, n in enumerate(counts):
        n = int(n)
        if n not in table:
            table[n] = weight_from_count(n, params)
        weights[i] = table[n]
    return weights


def count_transitions(reads, vocab, stride=1):
    """Consecutive-token pair counts over all reads.

    Returns (src_ids, dst_ids, counts) as arrays of vocabulary ids; pairs
    touching UNK are severed. Suitable for sharded accumulation: counts from
    shards can be summed before building the graph.
    """
    srcs = []
    dsts = []
    for read in reads:
        ids = tokenize(read, vocab, stride=stride)
        if len(ids) < 2:
            continue
        a, b = ids[:-1], ids[1:]
        keep = (a != vocab.unk_id) & (b != vocab.unk_id)
        if keep.any():
            srcs.append(a[keep])
            dsts.append(b[keep])
    if not srcs:
        return (np.empty(0, np.int64), np.empty(0, np.int64), np.empty(0, np.int64))
    src = np.concatenate(srcs)
    dst = np.concatenate(dsts)
    codes, counts = np.unique(src * vocab.size + dst, return_counts=True)
    return codes // vocab.size, codes % vocab.size, counts.astype(np.int64)


def from_counts(src_ids, dst_ids, counts, vocab, params=WeightParams()):
    """Assemble a KmerGraph from (possibly merged) pair counts."""
    if len(src_ids) == 0:
        raise EmptyGraphError("no read produced two adjacent k-mer tokens")
    node_ids = np.unique(np.concatenate([src_ids, dst_ids]))
    remap = {int(v): i for i, v in enumerate(node_ids)}
    src_local = np.fromiter((remap[int(v)] for v in src_ids), np.int64, len(src_ids))
    dst_local = np.fromiter((remap[int(v)] for v in dst_ids), np.int64, len(dst_ids))
    order = np.lexsort((dst_local, src_local))
    src_local, dst_local = src_local[order], dst_local[order]
    counts = np.asarray(counts, dtype=np.int64)[order]
    indptr = np.zeros(len(node_ids) + 1, dtype=np.int64)
    np.add.at(indptr, src_local + 1, 1)
    indptr = np.cumsum(indptr)
    return KmerGraph(node_ids, indptr, dst_local, counts, params, vocab)


def merge_counts(*shards):
    """Sum pair-count shards produced by count_transitions."""
    keyed = {}
    for src_ids, dst_ids, counts in shards:
        for s, d, n in zip(src_ids, dst_ids, counts):
            key = (int(s), int(d))
            keyed[key] = keyed.get(key, 0) + int(n)
    if not keyed:
        return (np.empty(0, np.int64), np.empty(0, np.int64), np.empty(0, np.int64))
    items = sorted(keyed.items())
    src = np.array([k[0] for k, _ in items], dtype=np.int64)
    dst = np.array([k[1] for k, _ in items], dtype=np.int64)
    cnt = np.array([n for _, n in items], dtype=np.int64)
    return src, dst, cnt


def build_graph(reads, vocab, params=WeightParams(), stride=1):
    """Single-pass graph construction over a read corpus."""
    src, dst, cnt = count_transitions(reads, vocab, stride=stride)
    return from_counts(src, dst, cnt, vocab, params)


def transition_distribution(graph, token_id):
    """(dst token ids, probabilities) proportional to outgoing edge weights."""
    dst, _, weights = graph.out_edges(token_id)
    if len(dst) == 0:
        raise DeadEndError(f"node {token_id} has no outgoing edges")
    probs = weights / weights.sum()
    return dst, probs


GRAPH_FORMAT_VERSION = 1


def save_graph(path, graph):
    """Edge-list TSV with a header tying the file to its vocabulary."""
    lines = [
        f"#mg2vec-graph\tv{GRAPH_FORMAT_VERSION}\tvocab={graph.vocab.content_hash()}"
        f"\tk={graph.vocab.k}\talphabet={graph.vocab.alphabet}"
        f"\tlambda_max={graph.params.lambda_max!r}\tlambda_min={graph.params.lambda_min!r}"
        f"\tdenom_floor={graph.params.denom_floor!r}\traw_counts={int(graph.params.raw_counts)}"
    ]
    for i in range(graph.num_nodes):
        src = graph.vocab.id_to_token(int(graph.node_ids[i]))
        for e in range(graph.indptr[i], graph.indptr[i + 1]):
            dst = graph.vocab.id_to_token(int(graph.node_ids[graph.nbrs[e]]))
            lines.append(f"{src}\t{dst}\t{int(graph.counts[e])}\t{graph.weights[e]!r}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_graph(path, vocab):
    with open(path) as fh:
        header = fh.readline().rstrip("\n").split("\t")
        if not header or header[0] != "#mg2vec-graph":
            raise ArtifactFormatError(f"{path}: not a graph edge list")
        meta = dict(part.split("=", 1) for part in header[2:])
        if header[1] != f"v{GRAPH_FORMAT_VERSION}":
            raise ArtifactFormatError(f"{path}: unsupported graph format {header[1]}")
        if meta["vocab"] != vocab.content_hash():
            raise ValidationError(
                f"{path}: graph was built with vocabulary {meta['vocab']}, "
                f"expected {vocab.content_hash()}"
            )
        params = WeightParams(
            lambda_max=float(meta["lambda_max"]),
            lambda_min=float(meta["lambda_min"]),
            denom_floor=float(meta["denom_floor"]),
            raw_counts=bool(int(meta["raw_counts"])),
        )
        src_ids, dst_ids, counts = [], [], []
        for line in fh:
            src, dst, cnt, _weight = line.rstrip("\n").split("\t")
            src_ids.append(vocab.token_to_id(src))
            dst_ids.append(vocab.token_to_id(dst))
            counts.append(int(cnt))
    return from_counts(
        np.array(src_ids, np.int64), np.array(dst_ids, np.int64),
        np.array(counts, np.int64), vocab, params,
    )
