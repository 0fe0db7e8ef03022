"""Market states: k-means over epoch correlation matrices and snapshot sequences.

Each epoch matrix is flattened and divided by K, so squared Euclidean
distances between points equal the squared scaled Frobenius distance used by
the distance matrix.  A snapshot clusters epochs ``[0, n)``; growing ``n``
one epoch at a time gives a snapshot sequence whose labels are aligned from
one snapshot to the next.
"""

from __future__ import annotations

import dataclasses
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist

from .errors import ConfigError, DegenerateClusteringError


@dataclass(frozen=True)
class ClusterConfig:
    """k-means settings.

    ``min_separation`` is the smallest ratio of centroid distance to the
    pooled within-cluster RMS spread for which clusters count as distinct
    market states; weaker splits are merged (see :func:`cluster_states`).
    Zero disables merging.
    """

    k: int = 2
    restarts: int = 32
    max_iters: int = 300
    seed: int = 0
    tol: float = 1e-8
    min_separation: float = 2.5

    def __post_init__(self):
        if self.k < 1:
            raise ConfigError("k must be >= 1")
        if self.restarts < 1:
            raise ConfigError("restarts must be >= 1")
        if self.max_iters < 1:
            raise ConfigError("max_iters must be >= 1")
        if self.min_separation < 0:
            raise ConfigError("min_separation must be >= 0")

    def to_dict(self):
        return dataclasses.asdict(self)


@dataclass(frozen=True)
class StateAssignment:
    labels: np.ndarray
    centroids: np.ndarray  # (k, d); NaN rows for unpopulated labels
    inertia: float
    epochs: np.ndarray | None = None
    restart_inertias: tuple = ()
    histories: tuple = ()  # per-restart inertia after every Lloyd update
    separation: float = float("nan")

    @property
    def k(self):
        return self.centroids.shape[0]

    @property
    def populated(self):
        return sorted(set(int(x) for x in self.labels))

    @property
    def degenerate(self):
        return len(self.populated) < self.k

    def members(self, label):
        return np.flatnonzero(self.labels == label)

    def partition(self):
        """Membership as a set of frozensets, independent of label ids."""
        return {frozenset(self.members(lab).tolist()) for lab in self.populated}


@dataclass(frozen=True)
class TypicalState:
    state: int
    matrix: np.ndarray
    member_count: int


@dataclass(frozen=True)
class Transition:
    snapshot: int  # index into the sequence
    n_epochs: int  # epochs clustered in that snapshot
    label: int
    epoch: int  # first epoch carrying the new label
    members: tuple
    persistent: bool

    def to_dict(self):
        return dataclasses.asdict(self)


@dataclass(frozen=True)
class SnapshotSequence:
    snapshots: tuple
    alignment: tuple  # alignment[i][raw_label] = aligned label
    start_count: int

    def __len__(self):
        return len(self.snapshots)


def vectorize(matrix) -> np.ndarray:
    m = np.asarray(matrix, dtype=float)
    return m.ravel() / m.shape[0]


def _as_points(points):
    if isinstance(points, np.ndarray) and points.ndim == 2:
        return np.asarray(points, dtype=float)
    pts = [np.asarray(p, dtype=float).ravel() for p in points]
    if len({p.shape for p in pts}) > 1:
        raise ConfigError("points of different dimension")
    return np.stack(pts)


def _sq_dist(points, centroids):
    # direct differences, not the expanded quadratic form: exact zeros for duplicates
    return ((points[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)


def pairwise_sq_dist(points) -> np.ndarray:
    """Squared Euclidean distances between all points (exactly symmetric, zero diagonal)."""
    return cdist(points, points, "sqeuclidean")


# Lloyd iterations run on the n x n squared-distance matrix D.  Every centroid
# is the mean of a label set S, so
#   |x_i - mean(S)|^2 = sum_{j in S} D_ij / |S| - sum_{j,l in S} D_jl / (2 |S|^2)
# and no d-dimensional centroid is needed until the result is reported.


def _to_means(d2, labels, k):
    """(n, k) squared distances from every point to every cluster mean; inf if empty."""
    out = np.full((len(d2), k), np.inf)
    for j in range(k):
        mask = labels == j
        c = int(mask.sum())
        if c:
            cols = d2[:, mask].sum(axis=1)
            spread = cols[mask].sum() / (2.0 * c * c)
            out[:, j] = np.maximum(cols / c - spread, 0.0)
    return out


def _plusplus(d2, k, rng):
    n = len(d2)
    centers = [int(rng.integers(n))]
    nearest = d2[centers[0]].copy()
    for _ in range(1, k):
        total = nearest.sum()
        if total <= 0:
            idx = int(np.argmax(nearest))
        else:
            idx = int(np.searchsorted(np.cumsum(nearest), rng.random() * total, side="right"))
            idx = min(idx, n - 1)
        centers.append(idx)
        nearest = np.minimum(nearest, d2[idx])
    return centers


def _reseed_empty(d2, labels, k):
    """Move the point farthest from its centroid into every empty cluster."""
    labels = labels.copy()
    for j in range(k):
        if not (labels == j).any():
            own = _to_means(d2, labels, k)[np.arange(len(labels)), labels]
            labels[int(np.argmax(own))] = j
    return labels


def _inertia(d2, labels, k):
    return float(_to_means(d2, labels, k)[np.arange(len(labels)), labels].sum())


def _centroids(points, labels, k):
    out = np.full((k, points.shape[1]), np.nan)
    for j in range(k):
        mask = labels == j
        if mask.any():
            out[j] = points[mask].mean(axis=0)
    return out


def lloyd(d2, k, rng, max_iters=300, tol=1e-8):
    """One k-means++ seeded Lloyd run on squared distances; returns labels, inertia, history."""
    centers = _plusplus(d2, k, rng)
    labels = _reseed_empty(d2, np.argmin(d2[:, centers], axis=1), k)
    history = [_inertia(d2, labels, k)]
    for _ in range(max_iters - 1):
        new_labels = np.argmin(_to_means(d2, labels, k), axis=1)
        if np.array_equal(new_labels, labels):
            break
        labels = _reseed_empty(d2, new_labels, k)
        history.append(_inertia(d2, labels, k))
        prev, cur = history[-2], history[-1]
        if prev <= 0 or (prev - cur) / prev < tol:
            break
    return labels, history[-1], history


def _distinct_count(d2):
    dup = np.tril(d2 == 0, -1).any(axis=1)
    return int((~dup).sum())


def kmeans(points, cfg: ClusterConfig = ClusterConfig(), k=None, threads=1, epochs=None, sqdist=None) -> StateAssignment:
    """Best of ``cfg.restarts`` Lloyd runs (seeds ``cfg.seed + r``) by inertia.

    ``sqdist`` may supply the precomputed :func:`pairwise_sq_dist` of ``points``.
    """
    pts = _as_points(points)
    k = cfg.k if k is None else k
    if len(pts) < k:
        raise DegenerateClusteringError(f"{len(pts)} points for {k} clusters")
    d2 = pairwise_sq_dist(pts) if sqdist is None else np.asarray(sqdist, dtype=float)
    if _distinct_count(d2) < k:
        raise DegenerateClusteringError(f"fewer than {k} distinct points")

    def run(r):
        rng = np.random.default_rng(cfg.seed + r)
        return lloyd(d2, k, rng, cfg.max_iters, cfg.tol)

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            runs = list(pool.map(run, range(cfg.restarts)))
    else:
        runs = [run(r) for r in range(cfg.restarts)]
    inertias = [r[1] for r in runs]
    best = int(np.argmin(inertias))  # first minimum: lowest restart index wins ties
    labels, inertia, _ = runs[best]
    return StateAssignment(
        labels=labels,
        centroids=_centroids(pts, labels, k),
        inertia=inertia,
        epochs=epochs,
        restart_inertias=tuple(inertias),
        histories=tuple(tuple(r[2]) for r in runs),
    )


def separation_ratio(points, a: StateAssignment) -> float:
    """Smallest centroid distance over the pooled within-cluster RMS spread.

    The spread uses ``n - k`` degrees of freedom; with none left (every
    cluster a singleton) the ratio is 0.
    """
    n = len(a.labels)
    dof = n - a.k
    if dof <= 0:
        return 0.0
    spread = np.sqrt(a.inertia / dof)
    cd = np.sqrt(_sq_dist(a.centroids, a.centroids))
    cd = cd[np.triu_indices(a.k, 1)].min()
    if spread == 0:
        return np.inf if cd > 0 else 0.0
    return float(cd / spread)


def cluster_states(points, cfg: ClusterConfig = ClusterConfig(), threads=1, epochs=None, sqdist=None) -> StateAssignment:
    """k-means with weak splits merged.

    Tries ``k = cfg.k, cfg.k - 1, ..., 2`` and keeps the first solution
    whose :func:`separation_ratio` reaches ``cfg.min_separation``; if none
    does, all points form one state.  Labels beyond the accepted count stay
    unpopulated (NaN centroids), so the result always has ``cfg.k`` labels.
    """
    pts = _as_points(points)
    n = len(pts)
    d2 = pairwise_sq_dist(pts) if sqdist is None else np.asarray(sqdist, dtype=float)
    for kk in range(min(cfg.k, n), 1, -1):
        try:
            a = kmeans(pts, cfg, k=kk, threads=threads, epochs=epochs, sqdist=d2)
        except DegenerateClusteringError:
            continue
        sep = separation_ratio(pts, a)
        if cfg.min_separation == 0 or sep >= cfg.min_separation:
            return _pad(a, cfg.k, sep)
    labels = np.zeros(n, dtype=np.int64)
    one = StateAssignment(labels, _centroids(pts, labels, 1), _inertia(d2, labels, 1), epochs)
    return _pad(one, cfg.k, float("nan"))


def _pad(a: StateAssignment, k, sep):
    if a.k < k:
        extra = np.full((k - a.k, a.centroids.shape[1]), np.nan)
        a = dataclasses.replace(a, centroids=np.vstack([a.centroids, extra]))
    return dataclasses.replace(a, separation=sep)


def relabel(a: StateAssignment, perm) -> StateAssignment:
    """Apply ``perm[old] = new`` to labels and centroid rows."""
    perm = np.asarray(perm)
    centroids = np.empty_like(a.centroids)
    centroids[perm] = a.centroids
    return dataclasses.replace(a, labels=perm[a.labels], centroids=centroids)


def _first_appearance_perm(a: StateAssignment):
    order = []
    for lab in a.labels:
        if int(lab) not in order:
            order.append(int(lab))
    order += [j for j in range(a.k) if j not in order]
    perm = np.empty(a.k, dtype=np.int64)
    perm[order] = np.arange(a.k)
    return perm


def align_labels(prev: StateAssignment, cur: StateAssignment):
    """Permutation ``perm[cur_label] = prev_label`` minimizing total centroid distance."""
    k = cur.k
    pc, cc = prev.centroids, cur.centroids
    ok_p = ~np.isnan(pc).any(axis=1)
    ok_c = ~np.isnan(cc).any(axis=1)
    cost = np.zeros((k, k))
    finite = [(i, j) for i in range(k) for j in range(k) if ok_p[i] and ok_c[j]]
    big = 1.0
    for i, j in finite:
        cost[i, j] = np.sqrt(((pc[i] - cc[j]) ** 2).sum())
        big = max(big, cost[i, j])
    big = 10.0 * big + 1.0
    for i in range(k):
        for j in range(k):
            if not (ok_p[i] and ok_c[j]):
                cost[i, j] = big
    rows, cols = linear_sum_assignment(cost)
    perm = np.empty(k, dtype=np.int64)
    perm[cols] = rows
    return perm


def snapshot_sequence(epoch_mats, cfg: ClusterConfig = ClusterConfig(), start_count=None, threads=1, epochs=None) -> SnapshotSequence:
    """Cluster epochs ``[0, n)`` for ``n = start_count, ..., N``.

    ``epoch_mats`` are ReducedRankCorr objects or plain matrices.  Every
    snapshot is clustered from scratch; only the label ids are carried over
    by :func:`align_labels`.  The first snapshot is labelled in order of
    first appearance.
    """
    mats = [getattr(m, "matrix", m) for m in epoch_mats]
    total = len(mats)
    start_count = cfg.k if start_count is None else start_count
    if start_count < cfg.k or start_count > total:
        raise ConfigError(f"start_count {start_count} must lie in [{cfg.k}, {total}]")
    pts = np.stack([vectorize(m) for m in mats])
    d2 = pairwise_sq_dist(pts)  # snapshot n uses the leading n x n block

    def snap(n):
        ep = None if epochs is None else np.asarray(epochs)[:n]
        return cluster_states(pts[:n], cfg, epochs=ep, sqdist=d2[:n, :n])

    counts = range(start_count, total + 1)
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            raw = list(pool.map(snap, counts))
    else:
        raw = [snap(n) for n in counts]

    snapshots, alignment = [], []
    for i, a in enumerate(raw):
        perm = _first_appearance_perm(a) if i == 0 else align_labels(snapshots[-1], a)
        snapshots.append(relabel(a, perm))
        alignment.append(perm)
    return SnapshotSequence(tuple(snapshots), tuple(alignment), start_count)


def typical_state(assignment: StateAssignment, mats) -> list:
    """Element-wise mean matrix of every populated state."""
    mats = [np.asarray(getattr(m, "matrix", m), dtype=float) for m in mats]
    if len(mats) != len(assignment.labels):
        raise ConfigError("assignment and matrix list differ in length")
    out = []
    for lab in assignment.populated:
        idx = assignment.members(lab)
        mean = np.mean([mats[i] for i in idx], axis=0)
        out.append(TypicalState(lab, 0.5 * (mean + mean.T), len(idx)))
    return out


def detect_transition(seq: SnapshotSequence) -> list:
    """Snapshots where an aligned label that was empty in the previous snapshot is populated.

    Returns a list of :class:`Transition` (empty when no new state appears).
    ``persistent`` is true when the label stays populated, and keeps its
    first epoch, in every later snapshot.
    """
    found = []
    for i in range(1, len(seq.snapshots)):
        prev, snap = seq.snapshots[i - 1], seq.snapshots[i]
        for lab in snap.populated:
            if lab in prev.populated:
                continue
            members = tuple(int(x) for x in snap.members(lab))
            first = members[0]
            later = seq.snapshots[i + 1 :]
            persistent = all(lab in s.populated and s.labels[first] == lab for s in later)
            found.append(Transition(i, len(snap.labels), lab, first, members, persistent))
    return found


def assignment_to_dict(a: StateAssignment, epoch_dates=None, centroid_refs=None, cfg=None) -> dict:
    """JSON-ready record; ``epoch_dates`` is a list of (start, end) ISO dates."""
    epochs = []
    for i, lab in enumerate(a.labels):
        rec = {"index": i, "label": int(lab)}
        if epoch_dates is not None:
            rec["start_date"], rec["end_date"] = (str(x) for x in epoch_dates[i])
        epochs.append(rec)
    return {
        "epochs": epochs,
        "centroid_refs": list(centroid_refs) if centroid_refs is not None else [],
        "inertia": float(a.inertia),
        "separation": None if not np.isfinite(a.separation) else float(a.separation),
        "populated": a.populated,
        "degenerate_k": a.degenerate,
        "config_echo": cfg.to_dict() if cfg is not None else None,
    }


def sequence_to_dict(seq: SnapshotSequence, epoch_dates=None, cfg=None) -> dict:
    return {
        "start_count": seq.start_count,
        "snapshots": [assignment_to_dict(s, epoch_dates, None, None) for s in seq.snapshots],
        "alignment": [[int(x) for x in p] for p in seq.alignment],
        "transitions": [t.to_dict() for t in detect_transition(seq)],
        "config_echo": cfg.to_dict() if cfg is not None else None,
    }
