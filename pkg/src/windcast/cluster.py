"""Turbine clustering by position (k-means) or by power correlation.

Both methods sort turbines by id before doing anything else and relabel the
final clusters in order of their smallest member id, so the result does not
depend on the order turbines were supplied in.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._io import SCHEMA_VERSION, read_json, write_json
from .ingest import DataError, Dataset, Validity, layout_arrays

log = logging.getLogger(__name__)

SPATIAL_KMEANS = "SPATIAL_KMEANS"
CORRELATION_AGGLOMERATIVE = "CORRELATION_AGGLOMERATIVE"


@dataclass(frozen=True, eq=False)
class ClusterModel:
    method: str
    k: int
    turbine_ids: np.ndarray
    assignment: np.ndarray
    centroids: np.ndarray | None = None
    seed: int | None = None
    inertia_history: tuple = field(default=(), repr=False)

    def cluster_of(self, turbine_id: int) -> int:
        hits = np.nonzero(self.turbine_ids == turbine_id)[0]
        if hits.size == 0:
            raise KeyError(f"turbine {turbine_id} not in cluster model")
        return int(self.assignment[hits[0]])

    def members(self, c: int) -> np.ndarray:
        return self.turbine_ids[self.assignment == c]

    def assignment_for(self, turbine_ids) -> np.ndarray:
        return np.array([self.cluster_of(int(t)) for t in turbine_ids], dtype=np.int64)

    def partition(self) -> frozenset:
        """Label-free view: the set of member-id sets."""
        return frozenset(frozenset(int(t) for t in self.members(c)) for c in range(self.k))

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "method": self.method,
            "k": self.k,
            "seed": self.seed,
            "assignment": [[int(t), int(c)] for t, c in zip(self.turbine_ids, self.assignment)],
            "centroids": None if self.centroids is None else self.centroids.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ClusterModel":
        pairs = np.array(d["assignment"], dtype=np.int64).reshape(-1, 2)
        cent = d.get("centroids")
        return cls(
            method=d["method"], k=int(d["k"]), turbine_ids=pairs[:, 0], assignment=pairs[:, 1],
            centroids=None if cent is None else np.array(cent, dtype=np.float64), seed=d.get("seed"),
        )

    def save(self, path) -> None:
        write_json(path, self.to_dict())

    @classmethod
    def load(cls, path) -> "ClusterModel":
        return cls.from_dict(read_json(Path(path)))


def _canonical_labels(ids: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Relabel so cluster 0 holds the smallest id, cluster 1 the next-smallest unseen, ..."""
    mapping = {}
    for i in np.argsort(ids, kind="stable"):
        mapping.setdefault(int(labels[i]), len(mapping))
    return np.array([mapping[int(c)] for c in labels], dtype=np.int64)


def _kmeanspp(xy: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = xy.shape[0]
    chosen = [int(rng.integers(n))]
    d2 = ((xy - xy[chosen[0]]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total > 0:
            nxt = int(rng.choice(n, p=d2 / total))
        else:
            rest = np.setdiff1d(np.arange(n), chosen)
            nxt = int(rng.choice(rest))
        chosen.append(nxt)
        d2 = np.minimum(d2, ((xy - xy[nxt]) ** 2).sum(axis=1))
    return xy[chosen].copy()


def _sq_dists(xy, centroids):
    return ((xy[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)


def cluster_spatial(layout, k: int, seed: int = 0, max_iter: int = 300) -> ClusterModel:
    """Lloyd's k-means on turbine coordinates with k-means++ seeding."""
    ids, xy = layout_arrays(layout)
    n = ids.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"k={k} out of range 1..{n}")
    if not np.isfinite(xy).all():
        raise DataError("non-finite turbine coordinates")
    order = np.argsort(ids, kind="stable")
    ids, xy = ids[order], xy[order]

    rng = np.random.default_rng(seed)
    centroids = _kmeanspp(xy, k, rng)
    assign = None
    history = []
    for it in range(max_iter):
        d2 = _sq_dists(xy, centroids)
        new = np.argmin(d2, axis=1)
        if assign is not None and np.array_equal(new, assign):
            break
        assign = new
        for c in range(k):
            if not np.any(assign == c):
                # Empty cluster: take over the point farthest from its centroid.
                own = d2[np.arange(n), assign]
                counts = np.bincount(assign, minlength=k)
                own = np.where(counts[assign] > 1, own, -1.0)
                far = int(np.argmax(own))
                assign[far] = c
                d2[far] = _sq_dists(xy[far:far + 1], centroids)[0]
            centroids[c] = xy[assign == c].mean(axis=0)
        history.append(float(((xy - centroids[assign]) ** 2).sum()))
    else:
        log.warning("k-means stopped at max_iter=%d before reaching a fixed point", max_iter)

    labels = _canonical_labels(ids, assign)
    relabeled = np.empty_like(centroids)
    for old, new in zip(assign, labels):
        relabeled[new] = centroids[old]
    return ClusterModel(SPATIAL_KMEANS, k, ids, labels, relabeled, seed, tuple(history))


def correlation_matrix(ds: Dataset) -> tuple[np.ndarray, np.ndarray]:
    """Pairwise Pearson correlation of active power over jointly valid slots.

    Returns ``(corr, degenerate)``; pairs with fewer than two joint points or
    zero joint variance get correlation 0. ``degenerate`` flags turbines whose
    own valid power series has fewer than two points or zero variance.
    """
    patv = ds.field("patv")
    valid = (ds.validity == Validity.VALID) & np.isfinite(patv)
    m = valid.astype(np.float64)
    x = np.where(valid, patv, 0.0)
    cnt = m.sum(axis=1)
    own_mean = np.divide(x.sum(axis=1), cnt, out=np.zeros_like(cnt), where=cnt > 0)
    x = np.where(valid, patv - own_mean[:, None], 0.0)
    own_var = (x * x).sum(axis=1)
    raw_ss = np.where(valid, patv, 0.0) ** 2
    degenerate = (cnt < 2) | (own_var <= 1e-20 * raw_ss.sum(axis=1))

    nn = m @ m.T
    sx = x @ m.T
    sy = m @ x.T
    sxx = (x * x) @ m.T
    syy = m @ (x * x).T
    sxy = x @ x.T
    with np.errstate(invalid="ignore", divide="ignore"):
        cov = nn * sxy - sx * sy
        vx = nn * sxx - sx * sx
        vy = nn * syy - sy * sy
        corr = cov / np.sqrt(vx * vy)
    ok = (nn >= 2) & (vx > 0) & (vy > 0) & np.isfinite(corr)
    corr = np.where(ok, np.clip(corr, -1.0, 1.0), 0.0)
    np.fill_diagonal(corr, 1.0)
    return corr, degenerate


def _average_linkage(dist: np.ndarray, k: int) -> np.ndarray:
    """Agglomerate singletons until ``k`` clusters remain; returns labels.

    Rows/columns of ``dist`` must already be in ascending turbine-id order;
    ties go to the pair whose smallest member ids are smallest.
    """
    n = dist.shape[0]
    members = [[i] for i in range(n)]
    sizes = np.ones(n)
    d = dist.astype(np.float64).copy()
    np.fill_diagonal(d, np.inf)
    active = list(range(n))
    while len(active) > k:
        sub = d[np.ix_(active, active)]
        iu = np.triu_indices(len(active), 1)
        flat = sub[iu]
        pos = int(np.argmin(flat))
        a, b = active[iu[0][pos]], active[iu[1][pos]]
        # Lance-Williams update for average linkage.
        na, nb = sizes[a], sizes[b]
        d[a, :] = (na * d[a, :] + nb * d[b, :]) / (na + nb)
        d[:, a] = d[a, :]
        d[a, a] = np.inf
        sizes[a] = na + nb
        members[a].extend(members[b])
        active.remove(b)
    labels = np.empty(n, dtype=np.int64)
    for c, rep in enumerate(active):
        labels[members[rep]] = c
    return labels


def cluster_correlation(ds: Dataset, k: int, layout=None) -> ClusterModel:
    """Average-linkage agglomerative clustering on ``1 - pearson(patv_i, patv_j)``.

    Turbines with an undefined correlation (constant power) are left out of
    the linkage and attached to the cluster of their nearest neighbour: by
    position when ``layout`` is given, otherwise by turbine id.
    """
    n = ds.n_turbines
    if not 1 <= k <= n:
        raise ValueError(f"k={k} out of range 1..{n}")
    order = np.argsort(ds.turbine_ids, kind="stable")
    ids = ds.turbine_ids[order]
    corr, degenerate = correlation_matrix(ds)
    corr, degenerate = corr[np.ix_(order, order)], degenerate[order]
    good = np.nonzero(~degenerate)[0]
    if good.size < k:
        raise DataError(f"only {good.size} turbines have a usable power series; cannot form {k} clusters")
    labels = np.full(n, -1, dtype=np.int64)
    labels[good] = _average_linkage(1.0 - corr[np.ix_(good, good)], k)

    bad = np.nonzero(degenerate)[0]
    if bad.size:
        warnings.warn(
            f"turbines {ids[bad].tolist()} have zero-variance power; assigned by nearest neighbour",
            RuntimeWarning, stacklevel=2,
        )
        if layout is not None:
            lid, lxy = layout_arrays(layout)
            pos = {int(t): p for t, p in zip(lid, lxy)}
            coords = np.array([pos[int(t)] for t in ids])
        else:
            coords = np.column_stack([ids.astype(np.float64), np.zeros(n)])
        for i in bad:
            d2 = ((coords[good] - coords[i]) ** 2).sum(axis=1)
            labels[i] = labels[good[int(np.argmin(d2))]]

    labels = _canonical_labels(ids, labels)
    return ClusterModel(CORRELATION_AGGLOMERATIVE, k, ids, labels, None, None)
