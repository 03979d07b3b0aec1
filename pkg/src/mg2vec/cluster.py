"""Unsupervised segmentation: k-means and optimal cluster-to-class mapping.

K-means uses the D^2-weighted seeding followed by Lloyd iterations until
the assignment reaches a fixpoint; an emptied cluster is re-seeded to the
point farthest from its centroid. The cluster-to-class mapping maximizes
the contingency agreement with an O(n^3) assignment solver (potentials
method) and handles rectangular tables: surplus clusters map to None
("unassigned"), surplus classes get no cluster.
"""

from dataclasses import dataclass, field

import numpy as np

from mg2vec.errors import DomainError, ValidationError


@dataclass
class KMeansResult:
    assignments: np.ndarray
    centroids: np.ndarray
    inertia: float
    inertia_history: list[float] = field(default_factory=list)
    iterations: int = 0


def _squared_distances(points, centroids):
    # |x - c|^2 expanded; clip tiny negatives from cancellation
    cross = points @ centroids.T
    sq = (points ** 2).sum(axis=1)[:, None] + (centroids ** 2).sum(axis=1)[None, :]
    return np.maximum(sq - 2.0 * cross, 0.0)


def _plusplus_init(points, k, rng):
    n = len(points)
    centroids = np.empty((k, points.shape[1]))
    centroids[0] = points[rng.integers(n)]
    closest = _squared_distances(points, centroids[:1]).ravel()
    for i in range(1, k):
        total = closest.sum()
        if total <= 0:
            centroids[i] = points[rng.integers(n)]
            continue
        centroids[i] = points[rng.choice(n, p=closest / total)]
        closest = np.minimum(closest, _squared_distances(points, centroids[i:i + 1]).ravel())
    return centroids


def kmeans(features, k, seed=0, max_iters=300, n_init=10):
    """Deterministic-per-seed k-means with D^2 seeding and Lloyd updates.

    Runs n_init seedings (sub-seeds derived from seed) and keeps the run
    with the lowest inertia.
    """
    best = None
    for restart in range(max(n_init, 1)):
        result = _kmeans_once(features, k, [seed, restart], max_iters)
        if best is None or result.inertia < best.inertia:
            best = result
    return best


def _kmeans_once(features, k, seed, max_iters):
    points = np.asarray(features, dtype=np.float64)
    if points.ndim != 2:
        raise ValidationError("features must be a 2-D matrix")
    if k < 1:
        raise DomainError("k must be >= 1")
    if k > len(points):
        raise DomainError(f"k={k} exceeds {len(points)} points")
    rng = np.random.default_rng(seed)
    centroids = _plusplus_init(points, k, rng)
    assignments = np.full(len(points), -1, dtype=np.int64)
    history = []
    iterations = 0
    for iterations in range(1, max_iters + 1):
        distances = _squared_distances(points, centroids)
        new_assignments = distances.argmin(axis=1)
        history.append(float(distances[np.arange(len(points)), new_assignments].sum()))
        if (new_assignments == assignments).all():
            break
        assignments = new_assignments
        for c in range(k):
            member = assignments == c
            if member.any():
                centroids[c] = points[member].mean(axis=0)
            else:
                # re-seed an emptied cluster to the farthest point
                dist_to_own = ((points - centroids[assignments]) ** 2).sum(axis=1)
                centroids[c] = points[dist_to_own.argmax()]
    distances = _squared_distances(points, centroids)
    inertia = float(distances[np.arange(len(points)), assignments].sum())
    return KMeansResult(
        assignments=assignments, centroids=centroids, inertia=inertia,
        inertia_history=history, iterations=iterations,
    )


def _solve_min_assignment(cost):
    """Potentials-based solver; cost is (n, m) with n <= m.

    Returns col_of_row: for each row, the assigned column.
    """
    n, m = cost.shape
    INF = np.inf
    u = np.zeros(n + 1)
    v = np.zeros(m + 1)
    row_of_col = np.zeros(m + 1, dtype=np.int64)  # 0 means free; rows are 1-based
    way = np.zeros(m + 1, dtype=np.int64)
    for i in range(1, n + 1):
        row_of_col[0] = i
        j0 = 0
        minv = np.full(m + 1, INF)
        used = np.zeros(m + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = row_of_col[j0]
            delta = INF
            j1 = 0
            for j in range(1, m + 1):
                if used[j]:
                    continue
                cur = cost[i0 - 1, j - 1] - u[i0] - v[j]
                if cur < minv[j]:
                    minv[j] = cur
                    way[j] = j0
                if minv[j] < delta:
                    delta = minv[j]
                    j1 = j
            for j in range(m + 1):
                if used[j]:
                    u[row_of_col[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if row_of_col[j0] == 0:
                break
        while j0 != 0:
            j1 = way[j0]
            row_of_col[j0] = row_of_col[j1]
            j0 = j1
    col_of_row = np.zeros(n, dtype=np.int64)
    for j in range(1, m + 1):
        if row_of_col[j] > 0:
            col_of_row[row_of_col[j] - 1] = j - 1
    return col_of_row


@dataclass
class ClusterMapping:
    cluster_to_class: dict  # cluster index -> class index or None
    agreement: int


def hungarian_map(contingency):
    """Injective cluster->class mapping maximizing summed agreement.

    contingency[k][c] counts points of cluster k with truth class c. With
    more clusters than classes the surplus clusters map to None; with more
    classes than clusters the surplus classes receive no cluster.
    """
    table = np.asarray(contingency, dtype=np.float64)
    if table.ndim != 2 or table.size == 0:
        raise ValidationError("contingency must be a non-empty 2-D table")
    if (table < 0).any():
        raise ValidationError("contingency counts must be non-negative")
    n_clusters, n_classes = table.shape
    if n_clusters <= n_classes:
        col_of_row = _solve_min_assignment(-table)
        mapping = {k: int(col_of_row[k]) for k in range(n_clusters)}
    else:
        row_of_col = _solve_min_assignment(-table.T)
        mapping = {k: None for k in range(n_clusters)}
        for c in range(n_classes):
            mapping[int(row_of_col[c])] = c
    agreement = sum(
        table[k, c] for k, c in mapping.items() if c is not None
    )
    return ClusterMapping(cluster_to_class=mapping, agreement=int(round(agreement)))


def build_contingency(clusters, truth, n_clusters, n_classes):
    clusters = np.asarray(clusters, dtype=np.int64)
    truth = np.asarray(truth, dtype=np.int64)
    if clusters.shape != truth.shape:
        raise ValidationError("cluster and truth vectors must align")
    table = np.zeros((n_clusters, n_classes), dtype=np.int64)
    np.add.at(table, (clusters, truth), 1)
    return table


def mapped_predictions(clusters, mapping, unassigned=-1):
    """Translate cluster ids to class indices; unmapped clusters -> unassigned."""
    out = np.empty(len(clusters), dtype=np.int64)
    for i, c in enumerate(clusters):
        target = mapping.cluster_to_class.get(int(c))
        out[i] = unassigned if target is None else target
    return out
