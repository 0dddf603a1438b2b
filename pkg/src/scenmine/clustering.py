"""Cluster assignment backends: codebook lookup, Lloyd k-means with
k-means++ seeding, and agglomerative hierarchical clustering.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import cvqvae
from .types import ScenarioRecord

BACKENDS = ("codebook", "kmeans", "hierarchical")
LINKAGES = ("ward", "average", "complete")


@dataclass(frozen=True)
class ClusterAssignment:
    backend: str
    labels: np.ndarray  # per-record cluster index in [0, k)
    k: int
    record_ids: tuple[str, ...] = ()

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.int64)
        object.__setattr__(self, "labels", labels)
        if self.backend not in BACKENDS:
            raise ValueError(f"unknown backend {self.backend!r}")
        if labels.size and (labels.min() < 0 or labels.max() >= self.k):
            raise ValueError("cluster labels must lie in [0, k)")

    def as_mapping(self) -> dict[str, int]:
        return {rid: int(lbl) for rid, lbl in zip(self.record_ids, self.labels)}


def encode_latents(records: Sequence[ScenarioRecord], params: cvqvae.ModelParams) -> np.ndarray:
    """(M, d) continuous latents from the trained encoder."""
    inputs, masks, _, _ = cvqvae._record_arrays(records)
    x = cvqvae._standardize(inputs, masks, params)
    z, _ = cvqvae._encode_batch(x.reshape(x.shape[0], -1), params)
    return z


def assign_codebook(
    records: Sequence[ScenarioRecord], params: cvqvae.ModelParams
) -> ClusterAssignment:
    """Nearest-codebook-entry assignment: the model's intrinsic clustering."""
    z = encode_latents(records, params)
    labels = cvqvae._quantize_batch(z, params.codebook)
    return ClusterAssignment(
        backend="codebook",
        labels=labels,
        k=params.codebook_size,
        record_ids=tuple(r.record_id for r in records),
    )


# ---------------------------------------------------------------------------
# k-means (Lloyd, k-means++ init)
# ---------------------------------------------------------------------------

def _nearest(latents: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    d2 = (
        np.sum(latents * latents, axis=1, keepdims=True)
        - 2.0 * latents @ centroids.T
        + np.sum(centroids * centroids, axis=1)
    )
    return np.argmin(d2, axis=1)


def _kmeans_pp_init(latents: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = latents.shape[0]
    centroids = np.empty((k, latents.shape[1]))
    centroids[0] = latents[int(rng.integers(n))]
    d2 = np.sum((latents - centroids[0]) ** 2, axis=1)
    for i in range(1, k):
        total = d2.sum()
        if total <= 0:
            centroids[i] = latents[int(rng.integers(n))]
        else:
            centroids[i] = latents[int(rng.choice(n, p=d2 / total))]
        d2 = np.minimum(d2, np.sum((latents - centroids[i]) ** 2, axis=1))
    return centroids


def kmeans(
    latents: np.ndarray,
    k: int,
    seed: int = 0,
    max_iter: int = 300,
    record_ids: tuple[str, ...] = (),
) -> tuple[ClusterAssignment, np.ndarray]:
    """Lloyd iterations to an assignment fixed point (or max_iter); empty
    clusters are re-seeded from the point farthest from its centroid."""
    latents = np.asarray(latents, dtype=float)
    n = latents.shape[0]
    if n < k:
        raise ValueError(f"need at least k={k} latents, got {n}")
    rng = np.random.default_rng(seed)
    centroids = _kmeans_pp_init(latents, k, rng)
    labels = _nearest(latents, centroids)
    for _ in range(max_iter):
        for c in range(k):
            members = labels == c
            if members.any():
                centroids[c] = latents[members].mean(axis=0)
            else:
                dists = np.sum((latents - centroids[labels]) ** 2, axis=1)
                far = int(np.argmax(dists))
                centroids[c] = latents[far]
                labels[far] = c
        new_labels = _nearest(latents, centroids)
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
    assignment = ClusterAssignment(
        backend="kmeans", labels=labels, k=k, record_ids=record_ids
    )
    return assignment, centroids


def kmeans_inertia(latents: np.ndarray, labels: np.ndarray, centroids: np.ndarray) -> float:
    return float(np.sum((latents - centroids[labels]) ** 2))


# ---------------------------------------------------------------------------
# Agglomerative hierarchical clustering
# ---------------------------------------------------------------------------

def hierarchical(
    latents: np.ndarray,
    k: int,
    linkage: str = "ward",
    record_ids: tuple[str, ...] = (),
) -> ClusterAssignment:
    assignment, _ = hierarchical_with_merges(latents, k, linkage, record_ids)
    return assignment


def hierarchical_with_merges(
    latents: np.ndarray,
    k: int,
    linkage: str = "ward",
    record_ids: tuple[str, ...] = (),
) -> tuple[ClusterAssignment, list[tuple[int, int]]]:
    """Agglomerative merging until k clusters remain.

    Ward linkage merges the pair with the minimum variance increase
    |A||B|/(|A|+|B|) * ||mu_A - mu_B||^2; ties break to the lowest pair of
    active-cluster positions. Returns the assignment and the merge sequence
    as (i, j) positions into the then-active cluster list (i < j).
    """
    if linkage not in LINKAGES:
        raise ValueError(f"unknown linkage {linkage!r}")
    latents = np.asarray(latents, dtype=float)
    n = latents.shape[0]
    if n < k:
        raise ValueError(f"need at least k={k} latents, got {n}")

    members: list[list[int]] = [[i] for i in range(n)]
    merges: list[tuple[int, int]] = []
    while len(members) > k:
        best: tuple[float, int, int] | None = None
        for i in range(len(members)):
            for j in range(i + 1, len(members)):
                cost = _linkage_cost(latents, members[i], members[j], linkage)
                if best is None or cost < best[0] - 1e-15 or (
                    abs(cost - best[0]) <= 1e-15 and (i, j) < (best[1], best[2])
                ):
                    best = (cost, i, j)
        _, i, j = best
        merges.append((i, j))
        members[i] = members[i] + members[j]
        del members[j]

    labels = np.empty(n, dtype=np.int64)
    # Clusters numbered by their smallest member index for determinism.
    for new_label, cluster in enumerate(sorted(members, key=min)):
        for idx in cluster:
            labels[idx] = new_label
    assignment = ClusterAssignment(
        backend="hierarchical", labels=labels, k=k, record_ids=record_ids
    )
    return assignment, merges


def _linkage_cost(latents: np.ndarray, a: list[int], b: list[int], linkage: str) -> float:
    if linkage == "ward":
        mu_a = latents[a].mean(axis=0)
        mu_b = latents[b].mean(axis=0)
        na, nb = len(a), len(b)
        return na * nb / (na + nb) * float(np.sum((mu_a - mu_b) ** 2))
    diffs = latents[a][:, None, :] - latents[b][None, :, :]
    dists = np.sqrt(np.sum(diffs * diffs, axis=2))
    return float(dists.mean() if linkage == "average" else dists.max())


def assign_to_centroids(latents: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    """Nearest-centroid labels for held-out latents (k-means inference)."""
    return _nearest(np.asarray(latents, dtype=float), centroids)


def assign_to_nearest_member(
    latents: np.ndarray, train_latents: np.ndarray, train_labels: np.ndarray
) -> np.ndarray:
    """Label held-out latents by their nearest training latent (used for the
    hierarchical backend, which has no centroid model)."""
    d2 = (
        np.sum(latents * latents, axis=1, keepdims=True)
        - 2.0 * latents @ train_latents.T
        + np.sum(train_latents * train_latents, axis=1)
    )
    return train_labels[np.argmin(d2, axis=1)]
