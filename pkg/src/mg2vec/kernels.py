"""Hot inner loops: biased random walks and skip-gram negative sampling.

Both kernels are scalar loops that dominate pipeline runtime, so they are
compiled with numba's @njit by default. Setting the environment variable
MG2VEC_NUMBA=0 (or numba being unimportable) selects the uncompiled
fallback: the very same functions interpreted by CPython over NumPy arrays.
Slow, but useful for debugging and for checking backend parity.

The kernels draw randomness from an inline splitmix64 generator on uint64
state, so for a given seed the two backends take identical random decisions
(uint64 arithmetic wraps the same way compiled or interpreted; callers
suppress NumPy's scalar overflow warning). Walk output is bit-identical
across backends; skip-gram updates agree to within 1 ulp because compiled
exp/log1p may round differently than NumPy's. Each random walk derives its
own stream from (seed, node, walk index), so walk output does not depend
on scheduling order.

Kernel calling convention: NumPy arrays and scalars only. Graphs arrive in
CSR form (indptr/neighbors/weights) over dense local node indices with each
neighbor row sorted ascending; walk corpora arrive as a flat token array
plus offsets.
"""

import os

import numpy as np

_FLAG = os.environ.get("MG2VEC_NUMBA", "1").strip().lower()
_WANT_NUMBA = _FLAG not in ("0", "false", "off", "no")

if _WANT_NUMBA:
    try:
        import numba
    except ImportError:
        numba = None
else:
    numba = None

NUMBA_ENABLED = numba is not None

# splitmix64 constants
_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_U53 = 1.1102230246251565e-16  # 2 ** -53


def backend_name():
    return "numba" if NUMBA_ENABLED else "numpy"


def _walk_kernel(indptr, nbrs, weights, walks_per_node, walk_length,
                 p, q, seed, scratch, out_walks, out_lengths):
    """Generate second-order weighted random walks from every node.

    out_walks is (n_nodes * walks_per_node, walk_length), prefilled with -1;
    row order is node-major then walk index. A dead end truncates the walk.
    scratch must hold at least max out-degree floats.
    """
    n_nodes = indptr.shape[0] - 1
    inv_p = 1.0 / p
    inv_q = 1.0 / q
    first_order = (p == 1.0) and (q == 1.0)
    for node in range(n_nodes):
        for wi in range(walks_per_node):
            row = node * walks_per_node + wi
            # stream unique to (seed, node, walk index)
            state = seed + np.uint64(node + 1) * _MIX1 + np.uint64(wi + 1) * _MIX2
            cur = node
            prev = -1
            out_walks[row, 0] = cur
            length = 1
            for _step in range(1, walk_length):
                lo = indptr[cur]
                hi = indptr[cur + 1]
                deg = hi - lo
                if deg == 0:
                    break
                total = 0.0
                if first_order or prev < 0:
                    for e in range(lo, hi):
                        scratch[e - lo] = weights[e]
                        total += weights[e]
                else:
                    for e in range(lo, hi):
                        cand = nbrs[e]
                        w = weights[e]
                        if cand == prev:
                            w *= inv_p
                        else:
                            # unbiased iff cand links back to prev
                            clo = indptr[cand]
                            chi = indptr[cand + 1]
                            found = False
                            while clo < chi:
                                mid = (clo + chi) // 2
                                if nbrs[mid] < prev:
                                    clo = mid + 1
                                elif nbrs[mid] > prev:
                                    chi = mid
                                else:
                                    found = True
                                    break
                            if not found:
                                w *= inv_q
                        scratch[e - lo] = w
                        total += w
                # splitmix64 step
                state = state + _GAMMA
                z = state
                z = (z ^ (z >> np.uint64(30))) * _MIX1
                z = (z ^ (z >> np.uint64(27))) * _MIX2
                z = z ^ (z >> np.uint64(31))
                r = np.float64(z >> np.uint64(11)) * _U53 * total
                nxt = nbrs[hi - 1]
                acc = 0.0
                for e in range(lo, hi):
                    acc += scratch[e - lo]
                    if r < acc:
                        nxt = nbrs[e]
                        break
                out_walks[row, length] = nxt
                prev = cur
                cur = nxt
                length += 1
            out_lengths[row] = length
    return 0


def _sgns_kernel(tokens, offsets, emb_in, emb_ctx, neg_cdf, window, negatives,
                 lr_start, pairs_total, pairs_done, seed, grad_scratch):
    """One epoch of skip-gram with negative sampling over a walk corpus.

    Updates emb_in/emb_ctx in place (plain SGD, word2vec update order:
    context rows move while the center gradient accumulates, the center row
    moves last). The learning rate decays linearly over all pairs of the
    whole training run, floored at 1e-4 of the start rate. Negatives are
    drawn from neg_cdf (cumulative distribution over token ids) and kept
    even when they collide with the positive target, so every pair costs
    exactly 1 + negatives sigmoid terms.

    Returns (summed pair loss, pair count) for this epoch.
    """
    dim = emb_in.shape[1]
    n_walks = offsets.shape[0] - 1
    vocab = neg_cdf.shape[0]
    state = seed + np.uint64(pairs_done + 1) * _GAMMA
    loss_sum = 0.0
    pairs = 0
    min_lr = lr_start * 1e-4
    for wk in range(n_walks):
        a = offsets[wk]
        b = offsets[wk + 1]
        for i in range(a, b):
            center = tokens[i]
            jlo = i - window
            if jlo < a:
                jlo = a
            jhi = i + window + 1
            if jhi > b:
                jhi = b
            for j in range(jlo, jhi):
                if j == i:
                    continue
                lr = lr_start * (1.0 - (pairs_done + pairs) / pairs_total)
                if lr < min_lr:
                    lr = min_lr
                for d in range(dim):
                    grad_scratch[d] = 0.0
                # positive target plus `negatives` sampled targets
                for t in range(negatives + 1):
                    if t == 0:
                        target = tokens[j]
                        label = 1.0
                    else:
                        state = state + _GAMMA
                        z = state
                        z = (z ^ (z >> np.uint64(30))) * _MIX1
                        z = (z ^ (z >> np.uint64(27))) * _MIX2
                        z = z ^ (z >> np.uint64(31))
                        u = np.float64(z >> np.uint64(11)) * _U53
                        lo = 0
                        hi = vocab - 1
                        while lo < hi:
                            mid = (lo + hi) // 2
                            if neg_cdf[mid] > u:
                                hi = mid
                            else:
                                lo = mid + 1
                        target = lo
                        label = 0.0
                    dot = 0.0
                    for d in range(dim):
                        dot += emb_in[center, d] * emb_ctx[target, d]
                    # stable log-sigmoid pieces
                    if dot >= 0.0:
                        f = 1.0 / (1.0 + np.exp(-dot))
                        if label > 0.5:
                            loss_sum += np.log1p(np.exp(-dot))
                        else:
                            loss_sum += dot + np.log1p(np.exp(-dot))
                    else:
                        ex = np.exp(dot)
                        f = ex / (1.0 + ex)
                        if label > 0.5:
                            loss_sum += -dot + np.log1p(ex)
                        else:
                            loss_sum += np.log1p(ex)
                    g = f - label
                    for d in range(dim):
                        grad_scratch[d] += g * emb_ctx[target, d]
                        emb_ctx[target, d] -= lr * g * emb_in[center, d]
                for d in range(dim):
                    emb_in[center, d] -= lr * grad_scratch[d]
                pairs += 1
    return loss_sum, pairs


def _count_pairs_kernel(offsets, window):
    """Number of (center, context) pairs one epoch visits."""
    total = 0
    n_walks = offsets.shape[0] - 1
    for wk in range(n_walks):
        n = offsets[wk + 1] - offsets[wk]
        for i in range(n):
            lo = i - window
            if lo < 0:
                lo = 0
            hi = i + window + 1
            if hi > n:
                hi = n
            total += hi - lo - 1
    return total


_PURE = {
    "walk_kernel": _walk_kernel,
    "sgns_kernel": _sgns_kernel,
    "count_pairs_kernel": _count_pairs_kernel,
}

_compiled_cache = {}


def get_kernels(use_numba=None):
    """Return the kernel namespace for one backend.

    use_numba=None picks the module default (env flag + availability).
    Tests pass True/False explicitly to compare backends in-process.
    """
    if use_numba is None:
        use_numba = NUMBA_ENABLED
    if not use_numba:
        return dict(_PURE)
    if numba is None:
        raise RuntimeError("numba backend requested but numba is not importable")
    if not _compiled_cache:
        for name, fn in _PURE.items():
            _compiled_cache[name] = numba.njit(cache=True)(fn)
    return dict(_compiled_cache)
