"""Garment segmentation: board plane, 6-D k-means, labeling and cleanup."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import List, Optional

import numpy as np
from scipy.sparse import coo_matrix, csgraph
from scipy.spatial import cKDTree

from .cloud import PointCloud, rgb_to_hsv

log = logging.getLogger(__name__)


class SegmentationError(RuntimeError):
    pass


@dataclass(frozen=True)
class PlaneModel:
    """Plane ``normal . p + offset = 0`` with an upward unit normal."""

    normal: np.ndarray
    offset: float
    inliers: np.ndarray

    def signed_distance(self, xyz: np.ndarray) -> np.ndarray:
        return np.asarray(xyz) @ self.normal + self.offset

    def height_at(self, x, y):
        """z of the plane above (x, y)."""
        a, b, c = self.normal
        return -(a * np.asarray(x) + b * np.asarray(y) + self.offset) / c

    def project(self, xyz: np.ndarray) -> np.ndarray:
        xyz = np.asarray(xyz)
        return xyz - np.outer(self.signed_distance(xyz), self.normal)


def _plane_from_points(p: np.ndarray):
    n = np.cross(p[1] - p[0], p[2] - p[0])
    norm = np.linalg.norm(n)
    if norm < 1e-12:
        return None
    n = n / norm
    if n[2] < 0:
        n = -n
    return n, -float(n @ p[0])


def _refit(xyz: np.ndarray):
    centroid = xyz.mean(axis=0)
    _, _, vt = np.linalg.svd(xyz - centroid, full_matrices=False)
    n = vt[-1]
    if n[2] < 0:
        n = -n
    n = n / np.linalg.norm(n)
    return n, -float(n @ centroid)


def fit_board_plane(
    cloud: PointCloud,
    dist_threshold: float = 0.02,
    z_angle_tol: float = 15.0,
    iterations: int = 1000,
    rng_seed: int = 0,
) -> PlaneModel:
    """RANSAC plane restricted to near-horizontal candidates.

    Candidates whose normal is more than ``z_angle_tol`` degrees from +z
    are discarded before scoring. The winner maximizes the inlier count,
    ties going to the higher inlier centroid. The winning model is then
    refit by least squares on its inliers, provided the refit still
    satisfies the angular prior and does not lose inliers.
    """
    xyz = cloud.xyz
    n_pts = len(xyz)
    if n_pts < 3:
        raise SegmentationError("plane fit needs at least 3 points")
    if not dist_threshold > 0:
        raise ValueError("dist_threshold must be positive")
    cos_tol = np.cos(np.radians(z_angle_tol))
    rng = np.random.default_rng(rng_seed)
    samples = np.stack([rng.choice(n_pts, size=3, replace=False) for _ in range(iterations)])

    best = None
    best_key = (-1, -np.inf)
    for tri in samples:
        model = _plane_from_points(xyz[tri])
        if model is None or model[0][2] < cos_tol:
            continue
        n, d = model
        inl = np.abs(xyz @ n + d) <= dist_threshold
        count = int(inl.sum())
        if count < best_key[0]:
            continue
        height = float(xyz[inl, 2].mean())
        key = (count, height)
        if key > best_key:
            best_key = key
            best = (n, d, inl)
    if best is None:
        raise SegmentationError("no board plane found")

    n, d, inl = best
    rn, rd = _refit(xyz[inl])
    r_inl = np.abs(xyz @ rn + rd) <= dist_threshold
    if rn[2] >= cos_tol and r_inl.sum() >= inl.sum():
        n, d, inl = rn, rd, r_inl
    log.debug("board plane n=%s d=%.4f inliers=%d", n, d, inl.sum())
    return PlaneModel(normal=n, offset=d, inliers=np.flatnonzero(inl))


def standardize_features(cloud: PointCloud) -> np.ndarray:
    """(N, 6) features ``x y z h s v`` scaled to zero mean, unit variance.

    Hue is mapped to [0, 1) before scaling. Constant dimensions stay 0.
    """
    if len(cloud) < 2:
        raise ValueError("standardization needs at least 2 points")
    hsv = rgb_to_hsv(cloud.rgb)
    hsv[:, 0] /= 360.0
    feats = np.concatenate([cloud.xyz, hsv], axis=1)
    mean = feats.mean(axis=0)
    std = feats.std(axis=0)
    centered = feats - mean
    out = np.zeros_like(feats)
    # Spread below float noise relative to the mean counts as constant.
    live = std > 1e-12 * np.maximum(1.0, np.abs(mean))
    out[:, live] = centered[:, live] / std[live]
    return out


@dataclass
class ClusterSet:
    assignments: np.ndarray
    centroids: np.ndarray
    objective_trace: List[float]

    @property
    def k(self) -> int:
        return len(self.centroids)


def _kmeans_pp(features: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(features)
    centers = [features[rng.integers(n)]]
    d2 = np.sum((features - centers[0]) ** 2, axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0:
            idx = rng.integers(n)
        else:
            idx = rng.choice(n, p=d2 / total)
        centers.append(features[idx])
        d2 = np.minimum(d2, np.sum((features - features[idx]) ** 2, axis=1))
    return np.array(centers)


def _assign(features, centroids):
    d2 = np.stack([np.sum((features - c) ** 2, axis=1) for c in centroids], axis=1)
    return np.argmin(d2, axis=1)


def _wcss(features, labels, centroids) -> float:
    return float(np.sum((features - centroids[labels]) ** 2))


def kmeans(
    features: np.ndarray,
    k: int = 2,
    max_iters: int = 100,
    tol: float = 1e-6,
    rng_seed: int = 0,
) -> ClusterSet:
    """Lloyd's algorithm from k-means++ seeds.

    ``objective_trace`` holds the within-cluster sum of squares after every
    assignment step; it never increases.
    """
    features = np.asarray(features, dtype=np.float64)
    n = len(features)
    if k < 1 or k > n:
        raise ValueError(f"k must be in [1, {n}], got {k}")
    rng = np.random.default_rng(rng_seed)
    centroids = _kmeans_pp(features, k, rng)
    labels = _assign(features, centroids)
    trace = [_wcss(features, labels, centroids)]
    for _ in range(max_iters):
        new = centroids.copy()
        for c in range(k):
            members = labels == c
            if members.any():
                new[c] = features[members].mean(axis=0)
        shift = float(np.max(np.linalg.norm(new - centroids, axis=1)))
        centroids = new
        labels = _assign(features, centroids)
        trace.append(_wcss(features, labels, centroids))
        if shift < tol:
            break
    for c in range(k):
        members = labels == c
        if members.any():
            centroids[c] = features[members].mean(axis=0)
    return ClusterSet(assignments=labels, centroids=centroids, objective_trace=trace)


def label_garment(clusters: ClusterSet, plane: PlaneModel, cloud: PointCloud) -> int:
    """Cluster id of the garment among two clusters.

    The garment is the cluster sitting higher above the board plane; when
    mean heights agree within 0.1 mm the smaller footprint wins.
    """
    if clusters.k != 2:
        raise SegmentationError(f"garment labeling expects 2 clusters, got {clusters.k}")
    heights = plane.signed_distance(cloud.xyz)
    stats = []
    for c in range(2):
        members = clusters.assignments == c
        if not members.any():
            raise SegmentationError(f"cluster {c} is empty")
        pts = cloud.xyz[members]
        span = pts[:, :2].max(axis=0) - pts[:, :2].min(axis=0)
        stats.append((float(heights[members].mean()), float(span[0] * span[1])))
    (h0, a0), (h1, a1) = stats
    if abs(h0 - h1) > 1e-4:
        return 0 if h0 > h1 else 1
    return 0 if a0 <= a1 else 1


def euclidean_components(xyz: np.ndarray, cluster_tol: float) -> np.ndarray:
    """Connected-component label per point under ``|p - q| <= cluster_tol``."""
    if not cluster_tol > 0:
        raise ValueError("cluster_tol must be positive")
    tree = cKDTree(xyz)
    pairs = tree.query_pairs(cluster_tol, output_type="ndarray")
    n = len(xyz)
    graph = coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(n, n))
    _, labels = csgraph.connected_components(graph, directed=False)
    return labels


def euclidean_filter(xyz: np.ndarray, cluster_tol: float = 0.02, min_size: int = 50) -> np.ndarray:
    """Indices of the largest Euclidean cluster with at least ``min_size`` points."""
    labels = euclidean_components(xyz, cluster_tol)
    sizes = np.bincount(labels)
    sizes[sizes < min_size] = 0
    if sizes.max(initial=0) == 0:
        raise SegmentationError("garment vanished: no cluster reaches min_size")
    return np.flatnonzero(labels == int(np.argmax(sizes)))


@dataclass
class SegmentationResult:
    plane: PlaneModel
    clusters: ClusterSet
    garment_label: int
    garment_indices: np.ndarray  # into the input cloud
    band_indices: np.ndarray

    def garment(self, cloud: PointCloud) -> PointCloud:
        return cloud.subset(self.garment_indices)


def segment_garment(
    cloud: PointCloud,
    ransac_threshold: float = 0.02,
    z_angle_tol: float = 15.0,
    ransac_iterations: int = 1000,
    kmeans_max_iters: int = 100,
    kmeans_tol: float = 1e-6,
    cluster_tol: float = 0.02,
    min_size: int = 50,
    seed: int = 0,
    plane: Optional[PlaneModel] = None,
) -> SegmentationResult:
    """Full stage: plane band -> k-means(k=2) -> garment label -> cleanup."""
    if plane is None:
        plane = fit_board_plane(cloud, ransac_threshold, z_angle_tol, ransac_iterations, seed)
    band = plane.inliers
    band_cloud = cloud.subset(band)
    feats = standardize_features(band_cloud)
    clusters = kmeans(feats, 2, kmeans_max_iters, kmeans_tol, seed)
    label = label_garment(clusters, plane, band_cloud)
    members = np.flatnonzero(clusters.assignments == label)
    keep = euclidean_filter(band_cloud.xyz[members], cluster_tol, min_size)
    garment_idx = band[members[keep]]
    return SegmentationResult(plane, clusters, label, garment_idx, band)
