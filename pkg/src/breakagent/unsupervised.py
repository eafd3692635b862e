"""Spectral embedding and clustering of feature tables, plus the accuracy
convention used to compare clusters with labels."""
from __future__ import annotations

import csv
import itertools
import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import eigsh
from sklearn.base import BaseEstimator, ClusterMixin
from sklearn.utils.validation import check_array

from .breaks import ContractError

SCALE_FLOOR = 1e-12
WEIGHT_THRESHOLD = 1e-12


@dataclass(frozen=True)
class SimilarityGraph:
    adjacency: sparse.csr_matrix
    k_neighbors: int
    scale_rule: str = "self-tuning"

    @property
    def n_nodes(self) -> int:
        return self.adjacency.shape[0]


@dataclass(frozen=True)
class SpectralEmbedding:
    coordinates: np.ndarray
    eigenvalues: np.ndarray


def standardize_full(rows) -> np.ndarray:
    """Z-score with statistics of the whole matrix (labels are never used)."""
    X = check_array(rows, dtype=np.float64)
    std = X.std(axis=0)
    return np.where(std > 1e-12, (X - X.mean(axis=0)) / np.where(std > 1e-12, std, 1.0), 0.0)


def build_knn_graph(rows, k_neighbors: int = 10) -> SimilarityGraph:
    """Symmetric k-NN graph with self-tuning Gaussian weights.

    w_ij = exp(-d_ij^2 / (s_i s_j)) with s_i the distance from i to its
    ceil(k/2)-th neighbour; symmetrised by the elementwise max. Weights
    below 1e-12 are dropped.
    """
    X = check_array(rows, dtype=np.float64)
    n = len(X)
    if k_neighbors < 1 or n <= k_neighbors:
        raise ContractError(f"need more rows ({n}) than k_neighbors ({k_neighbors})")
    sq = (X * X).sum(axis=1)
    d2 = np.maximum(sq[:, None] + sq[None, :] - 2.0 * X @ X.T, 0.0)
    np.fill_diagonal(d2, np.inf)
    # neighbours ordered by (distance, index) for determinism
    order = np.lexsort((np.broadcast_to(np.arange(n), (n, n)), d2), axis=1)[:, :k_neighbors]
    nd2 = np.take_along_axis(d2, order, axis=1)
    scale = np.sqrt(nd2[:, math.ceil(k_neighbors / 2) - 1])
    scale = np.maximum(scale, SCALE_FLOOR)
    w = np.exp(-nd2 / (scale[:, None] * scale[order]))
    rows_idx = np.repeat(np.arange(n), k_neighbors)
    W = sparse.csr_matrix((w.ravel(), (rows_idx, order.ravel())), shape=(n, n))
    W = W.maximum(W.T).tocsr()
    W.data[W.data < WEIGHT_THRESHOLD] = 0.0
    W.eliminate_zeros()
    W.sort_indices()
    return SimilarityGraph(W, k_neighbors)


def normalized_laplacian(graph: SimilarityGraph) -> sparse.csr_matrix:
    W = graph.adjacency
    deg = np.asarray(W.sum(axis=1)).ravel()
    if np.any(deg <= 0):
        warnings.warn(f"{int((deg <= 0).sum())} isolated node(s); degree floored at 1e-12", RuntimeWarning, stacklevel=2)
    inv_sqrt = 1.0 / np.sqrt(np.maximum(deg, 1e-12))
    D = sparse.diags(inv_sqrt)
    return (sparse.identity(W.shape[0], format="csr") - D @ W @ D).tocsr()


def laplacian_eigenpairs(graph: SimilarityGraph, k: int) -> tuple:
    """The k smallest eigenpairs of the symmetric normalised Laplacian.

    Lanczos on 2I - L (whose top eigenvalues are L's bottom ones, spectrum
    of L being in [0, 2]) with a fixed start vector.
    """
    L = normalized_laplacian(graph)
    n = L.shape[0]
    if n < k + 1:
        raise ContractError(f"need at least {k + 1} nodes for a {k}-dimensional embedding")
    shifted = 2.0 * sparse.identity(n, format="csr") - L
    v0 = np.ones(n) / math.sqrt(n)
    vals, vecs = eigsh(shifted, k=k, which="LA", v0=v0, tol=1e-12, maxiter=max(10000, 50 * n))
    vals = 2.0 - vals
    order = np.argsort(vals, kind="stable")
    return vals[order], vecs[:, order]


def spectral_embedding(graph: SimilarityGraph, k_dims: int = 2) -> SpectralEmbedding:
    """Bottom eigenvectors of I - D^-1/2 W D^-1/2, rows scaled to unit length."""
    vals, vecs = laplacian_eigenpairs(graph, k_dims)
    for j in range(vecs.shape[1]):
        i = int(np.argmax(np.abs(vecs[:, j])))
        if vecs[i, j] < 0:
            vecs[:, j] = -vecs[:, j]
    norms = np.linalg.norm(vecs, axis=1, keepdims=True)
    coords = np.divide(vecs, norms, out=np.zeros_like(vecs), where=norms > 0)
    return SpectralEmbedding(coords, vals)


def _kmeans_pp(X, k, rng):
    n = len(X)
    centers = [X[rng.integers(n)]]
    d2 = ((X - centers[0]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = d2.sum()
        idx = int(rng.integers(n)) if total <= 0 else int(rng.choice(n, p=d2 / total))
        centers.append(X[idx])
        d2 = np.minimum(d2, ((X - X[idx]) ** 2).sum(axis=1))
    return np.array(centers)


def _lloyd(X, centers, max_iter):
    labels = None
    history = []
    for _ in range(max_iter):
        d2 = ((X[:, None, :] - centers[None]) ** 2).sum(axis=2)
        new = np.argmin(d2, axis=1)
        history.append(float(d2[np.arange(len(X)), new].sum()))
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        for c in range(len(centers)):
            members = labels == c
            if members.any():
                centers[c] = X[members].mean(axis=0)
            else:
                # empty cluster: move it to the point farthest from its centre
                far = int(np.argmax(d2[np.arange(len(X)), labels]))
                centers[c] = X[far]
                labels[far] = c
    d2 = ((X[:, None, :] - centers[None]) ** 2).sum(axis=2)
    labels = np.argmin(d2, axis=1)
    inertia = float(d2[np.arange(len(X)), labels].sum())
    return labels, inertia, history


def kmeans(points, k: int, restarts: int = 10, max_iter: int = 300, rng=None, return_history: bool = False):
    """k-means++ seeding and Lloyd iterations; the best of ``restarts`` runs.

    Restart r draws from its own stream spawned from ``rng``; ties in
    inertia keep the lowest restart index.
    """
    X = check_array(points, dtype=np.float64)
    if k < 1:
        raise ContractError("k must be >= 1")
    if len(X) < k:
        raise ContractError(f"need at least k={k} points, got {len(X)}")
    rng = np.random.default_rng(rng)
    children = rng.bit_generator.seed_seq.spawn(restarts) if hasattr(rng.bit_generator, "seed_seq") else None
    best = None
    histories = []
    for r in range(restarts):
        sub = np.random.default_rng(children[r] if children else rng.integers(2**63))
        labels, inertia, hist = _lloyd(X, _kmeans_pp(X, k, sub), max_iter)
        histories.append(hist)
        if best is None or inertia < best[1]:
            best = (labels, inertia)
    if return_history:
        return best[0], best[1], histories
    return best


def clustering_accuracy(pred_labels, true_labels) -> float:
    """Best fraction of agreement over one-to-one renamings of the clusters."""
    return _best_mapping(pred_labels, true_labels)[0]


def _best_mapping(pred_labels, true_labels):
    pred = np.asarray(pred_labels).astype(str)
    true = np.asarray(true_labels).astype(str)
    if len(pred) != len(true):
        raise ContractError("pred_labels and true_labels differ in length")
    if len(pred) == 0:
        raise ContractError("empty labelling")
    clusters = sorted(set(pred.tolist()))
    classes = sorted(set(true.tolist()))
    if max(len(clusters), len(classes)) > 8:
        raise ContractError("permutation search is limited to 8 clusters")
    counts = np.array([[np.sum((pred == c) & (true == t)) for t in classes] for c in clusters])
    # pad with dummy classes so every cluster gets a distinct target
    padded = np.zeros((len(clusters), max(len(clusters), len(classes))), dtype=np.int64)
    padded[:, : len(classes)] = counts
    best, best_perm = -1, None
    for perm in itertools.permutations(range(padded.shape[1]), len(clusters)):
        score = int(padded[np.arange(len(clusters)), perm].sum())
        if score > best:
            best, best_perm = score, perm
    mapping = {c: (classes[j] if j < len(classes) else None) for c, j in zip(clusters, best_perm)}
    return best / len(pred), mapping


def per_class_cluster_accuracy(pred_labels, true_labels) -> dict:
    _, mapping = _best_mapping(pred_labels, true_labels)
    pred = np.asarray(pred_labels).astype(str)
    true = np.asarray(true_labels).astype(str)
    mapped = np.array([mapping[p] for p in pred], dtype=object)
    return {t: float(np.mean(mapped[true == t] == t)) for t in sorted(set(true.tolist()))}


class SpectralClusterer(ClusterMixin, BaseEstimator):
    """Ng-Jordan-Weiss spectral clustering on full-data standardized features."""

    def __init__(self, n_clusters: int = 2, k_neighbors: int = 10, restarts: int = 10, seed: int = 0):
        self.n_clusters = n_clusters
        self.k_neighbors = k_neighbors
        self.restarts = restarts
        self.seed = seed

    def fit(self, X, y=None):
        Z = standardize_full(X)
        self.graph_ = build_knn_graph(Z, self.k_neighbors)
        self.embedding_ = spectral_embedding(self.graph_, self.n_clusters)
        self.labels_, self.inertia_ = kmeans(
            self.embedding_.coordinates, self.n_clusters, self.restarts, rng=np.random.default_rng(self.seed)
        )
        return self


def spectral_clustering(rows, k: int = 2, rng=None, k_neighbors: int = 10) -> np.ndarray:
    seed = np.random.default_rng(rng).integers(2**63)
    return SpectralClusterer(k, k_neighbors, seed=int(seed)).fit(rows).labels_


def export_scatter(embedding: SpectralEmbedding, labels, path, ids=None) -> None:
    coords = np.asarray(embedding.coordinates)
    if coords.size == 0 or len(coords) == 0:
        raise ContractError("empty embedding")
    if coords.shape[1] != 2:
        raise ContractError(f"scatter export needs a 2-D embedding, got {coords.shape[1]} dimensions")
    labels = np.asarray(labels).astype(str)
    if len(labels) != len(coords):
        raise ContractError("one label per embedded row required")
    ids = [str(i) for i in range(len(coords))] if ids is None else [str(i) for i in ids]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "x", "y", "label"])
        for i, (x, y), lab in zip(ids, coords, labels):
            w.writerow([i, repr(float(x)), repr(float(y)), lab])


def read_scatter(path) -> tuple:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    coords = np.array([[float(r["x"]), float(r["y"])] for r in rows]).reshape(-1, 2)
    return [r["id"] for r in rows], coords, [r["label"] for r in rows]
