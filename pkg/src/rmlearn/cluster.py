"""DBSCAN, cluster centers and prototype extraction."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, ClusterMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .exceptions import EmptyInputError, NoClustersError, ValidationError
from .trajectories import DemonstrationSet

NOISE = -1
_BLOCK_ELEMS = 4_000_000


@dataclass(frozen=True)
class DbscanParams:
    eps_cluster: float
    min_points: int

    def __post_init__(self):
        if not self.eps_cluster > 0:
            raise ValidationError(f"eps_cluster must be > 0, got {self.eps_cluster}")
        if int(self.min_points) < 1:
            raise ValidationError(f"min_points must be >= 1, got {self.min_points}")


@dataclass(frozen=True, eq=False)
class Clustering:
    labels: np.ndarray      # -1 for noise, else 0..k-1
    core: np.ndarray        # bool mask of core points
    k: int

    def members(self, cluster_id: int) -> np.ndarray:
        return np.flatnonzero(self.labels == cluster_id)

    def sizes(self) -> list[int]:
        return [int(np.sum(self.labels == c)) for c in range(self.k)]

    @property
    def n_noise(self) -> int:
        return int(np.sum(self.labels == NOISE))

    def relabel(self, order) -> "Clustering":
        """Renumber clusters so that old cluster ``order[i]`` becomes ``i``."""
        if sorted(order) != list(range(self.k)):
            raise ValidationError("relabel order must be a permutation of cluster ids")
        mapping = np.full(self.k + 1, NOISE)
        for new, old in enumerate(order):
            mapping[old] = new
        return Clustering(mapping[self.labels], self.core, self.k)


@dataclass(frozen=True, eq=False)
class Prototype:
    cluster_id: int
    center: np.ndarray
    vector: np.ndarray
    source: tuple       # (trajectory id, frame index)
    row: int            # row in the flattened demonstration set


def _as_points(points) -> np.ndarray:
    if points is None or len(points) == 0:
        raise EmptyInputError("no points to cluster")
    return check_array(points, dtype=np.float64)


def _distance_rows(X, lo, hi):
    return np.sqrt(((X[lo:hi, None, :] - X[None, :, :]) ** 2).sum(-1))


def dbscan(points, params: DbscanParams) -> Clustering:
    """Density-based clustering with a closed eps-ball and Euclidean metric.

    A point is core if its neighborhood (itself included) holds at least
    ``min_points`` points. A non-core point within reach of several
    clusters joins the one owning its nearest core point, lowest index on
    ties, so the result does not depend on visiting order.
    """
    X = _as_points(points)
    n = X.shape[0]
    eps, min_pts = params.eps_cluster, int(params.min_points)

    step = max(1, _BLOCK_ELEMS // max(1, n * X.shape[1]))
    neighbors = []
    for lo in range(0, n, step):
        d = _distance_rows(X, lo, min(n, lo + step))
        neighbors.extend(np.flatnonzero(row <= eps) for row in d)
    core = np.array([len(nb) >= min_pts for nb in neighbors], dtype=bool)

    labels = np.full(n, NOISE, dtype=np.int64)
    k = 0
    for i in range(n):
        if not core[i] or labels[i] != NOISE:
            continue
        labels[i] = k
        queue = deque([i])
        while queue:
            q = queue.popleft()
            for j in neighbors[q]:
                if core[j] and labels[j] == NOISE:
                    labels[j] = k
                    queue.append(j)
        k += 1

    for i in np.flatnonzero(~core):
        cores = neighbors[i][core[neighbors[i]]]
        if cores.size:
            d = np.sqrt(((X[cores] - X[i]) ** 2).sum(-1))
            labels[i] = labels[cores[int(np.argmin(d))]]
    return Clustering(labels, core, k)


def cluster_center(points) -> np.ndarray:
    X = _as_points(points)
    return X.mean(axis=0)


def extract_prototypes(demos: DemonstrationSet, clustering: Clustering) -> list[Prototype]:
    """One prototype per cluster: the member closest to the cluster mean.

    Ties go to the member that comes first in dataset order.
    """
    if clustering.k == 0:
        raise NoClustersError("clustering found no clusters; lower min_points or raise eps")
    X = demos.stack()
    if X.shape[0] != clustering.labels.shape[0]:
        raise ValidationError("clustering does not match the demonstration set")
    index = demos.index()
    protos = []
    for c in range(clustering.k):
        rows = clustering.members(c)
        center = cluster_center(X[rows])
        d = np.sqrt(((X[rows] - center) ** 2).sum(-1))
        r = int(rows[int(np.argmin(d))])
        ti, fi = index[r]
        v = X[r].copy()
        v.setflags(write=False)
        center.setflags(write=False)
        protos.append(Prototype(c, center, v, (demos.trajectories[ti].id, fi), r))
    return protos


class DBSCAN(ClusterMixin, BaseEstimator):
    """Estimator wrapper around :func:`dbscan`.

    Attributes
    ----------
    labels_ : ndarray of shape (n_samples,)
        Cluster index per sample, ``-1`` for noise.
    core_sample_mask_ : ndarray of bool
    n_clusters_ : int
    """

    def __init__(self, eps=0.5, min_points=5):
        self.eps = eps
        self.min_points = min_points

    def fit(self, X, y=None):
        result = dbscan(X, DbscanParams(self.eps, self.min_points))
        self.labels_ = result.labels
        self.core_sample_mask_ = result.core
        self.n_clusters_ = result.k
        self.clustering_ = result
        return self

    @property
    def core_sample_indices_(self):
        check_is_fitted(self, "labels_")
        return np.flatnonzero(self.core_sample_mask_)
