"""Colored point clouds: storage, ASCII I/O, radius search and normals."""

from __future__ import annotations

import colorsys
import os
from dataclasses import dataclass, field, replace
from typing import Dict, Optional, Sequence

import numpy as np
from scipy.spatial import cKDTree


class CloudFormatError(ValueError):
    """Raised when a cloud file cannot be parsed."""


# Default viewpoint used to orient normals: far above the scene.
DEFAULT_VIEWPOINT = (0.0, 0.0, 1.0e3)


@dataclass(frozen=True)
class PointCloud:
    """Immutable colored cloud.

    ``xyz`` is (N, 3) meters, ``rgb`` is (N, 3) in [0, 1]. ``normals`` is
    (N, 3) or None; ``normal_valid`` flags points whose normal could be
    estimated. ``scalars`` holds named per-point fields.
    """

    xyz: np.ndarray
    rgb: np.ndarray
    normals: Optional[np.ndarray] = None
    normal_valid: Optional[np.ndarray] = None
    scalars: Dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        xyz = np.ascontiguousarray(self.xyz, dtype=np.float64).reshape(-1, 3)
        rgb = np.ascontiguousarray(self.rgb, dtype=np.float64).reshape(-1, 3)
        if len(rgb) != len(xyz):
            raise ValueError("rgb and xyz lengths differ")
        if not np.all(np.isfinite(xyz)):
            raise ValueError("non-finite coordinates")
        object.__setattr__(self, "xyz", xyz)
        object.__setattr__(self, "rgb", rgb)
        if self.normals is not None:
            normals = np.ascontiguousarray(self.normals, dtype=np.float64).reshape(-1, 3)
            if len(normals) != len(xyz):
                raise ValueError("normals and xyz lengths differ")
            valid = self.normal_valid
            if valid is None:
                valid = np.ones(len(xyz), dtype=bool)
            valid = np.asarray(valid, dtype=bool)
            object.__setattr__(self, "normals", normals)
            object.__setattr__(self, "normal_valid", valid)
        for name, values in self.scalars.items():
            if len(values) != len(xyz):
                raise ValueError(f"scalar field {name!r} has wrong length")
        for arr in (self.xyz, self.rgb, self.normals, self.normal_valid):
            if arr is not None:
                arr.setflags(write=False)

    def __len__(self) -> int:
        return len(self.xyz)

    @property
    def has_normals(self) -> bool:
        return self.normals is not None

    def subset(self, indices) -> "PointCloud":
        """Cloud restricted to ``indices`` (int array or boolean mask)."""
        idx = np.asarray(indices)
        return PointCloud(
            xyz=self.xyz[idx],
            rgb=self.rgb[idx],
            normals=None if self.normals is None else self.normals[idx],
            normal_valid=None if self.normal_valid is None else self.normal_valid[idx],
            scalars={k: np.asarray(v)[idx] for k, v in self.scalars.items()},
        )

    def with_normals(self, normals: np.ndarray, valid: np.ndarray) -> "PointCloud":
        return replace(self, normals=normals, normal_valid=valid)

    def with_scalar(self, name: str, values: np.ndarray) -> "PointCloud":
        scalars = dict(self.scalars)
        scalars[name] = np.asarray(values)
        return replace(self, scalars=scalars)


# ---------------------------------------------------------------------------
# ASCII XYZRGB format

def load_cloud(path: str | os.PathLike) -> PointCloud:
    """Read an ASCII ``x y z r g b [nx ny nz]`` file.

    Lines starting with ``#`` are comments. Colors are 8-bit integers and
    are normalized to [0, 1].
    """
    xyz, rgb, normals = [], [], []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.strip()
            if not text or text.startswith("#"):
                continue
            parts = text.split()
            if len(parts) not in (6, 9):
                raise CloudFormatError(
                    f"{path}:{lineno}: expected 6 or 9 columns, got {len(parts)}"
                )
            if normals and len(parts) != 9 or xyz and not normals and len(parts) == 9:
                raise CloudFormatError(f"{path}:{lineno}: inconsistent column count")
            try:
                p = [float(v) for v in parts[:3]]
                c = [int(v) for v in parts[3:6]]
                n = [float(v) for v in parts[6:9]]
            except ValueError as exc:
                raise CloudFormatError(f"{path}:{lineno}: {exc}") from None
            if any(ch < 0 or ch > 255 for ch in c):
                raise CloudFormatError(f"{path}:{lineno}: color outside 0-255")
            if not all(np.isfinite(p)):
                raise CloudFormatError(f"{path}:{lineno}: non-finite coordinate")
            xyz.append(p)
            rgb.append(c)
            if n:
                normals.append(n)
    if not xyz:
        raise CloudFormatError(f"{path}: empty cloud")
    cloud_normals = np.array(normals, dtype=np.float64) if normals else None
    valid = None
    if cloud_normals is not None:
        norm = np.linalg.norm(cloud_normals, axis=1)
        valid = norm > 0.5
    return PointCloud(
        xyz=np.array(xyz, dtype=np.float64),
        rgb=np.array(rgb, dtype=np.float64) / 255.0,
        normals=cloud_normals,
        normal_valid=valid,
    )


def save_cloud(cloud: PointCloud, path: str | os.PathLike, extra_column: Optional[Sequence[int]] = None) -> None:
    """Write ``cloud`` in the ASCII XYZRGB format.

    Positions use 10 significant digits; invalid normals are written as
    zeros. ``extra_column`` appends one integer column (cluster labels).
    """
    if len(cloud) == 0:
        raise ValueError("cannot save an empty cloud")
    rgb8 = np.clip(np.rint(cloud.rgb * 255.0), 0, 255).astype(int)
    cols = [cloud.xyz]
    header = "# x y z r g b"
    normals = None
    if cloud.normals is not None:
        normals = np.where(cloud.normal_valid[:, None], cloud.normals, 0.0)
        header += " nx ny nz"
    if extra_column is not None:
        header += " label"
        extra = np.asarray(extra_column, dtype=int)
    lines = [header]
    for i in range(len(cloud)):
        x, y, z = cols[0][i]
        r, g, b = rgb8[i]
        row = f"{x:.10g} {y:.10g} {z:.10g} {r} {g} {b}"
        if normals is not None:
            nx, ny, nz = normals[i]
            row += f" {nx:.10g} {ny:.10g} {nz:.10g}"
        if extra_column is not None:
            row += f" {extra[i]}"
        lines.append(row)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines))
        fh.write("\n")


# ---------------------------------------------------------------------------
# Color

def rgb_to_hsv(rgb) -> np.ndarray:
    """Hexcone RGB -> HSV. Hue in degrees [0, 360), achromatic hue is 0.

    Accepts a single triple or an (N, 3) array.
    """
    arr = np.asarray(rgb, dtype=np.float64)
    if arr.ndim == 1:
        h, s, v = colorsys.rgb_to_hsv(*arr)
        return np.array([(h * 360.0) % 360.0, s, v])
    r, g, b = arr[:, 0], arr[:, 1], arr[:, 2]
    maxc = arr.max(axis=1)
    minc = arr.min(axis=1)
    delta = maxc - minc
    v = maxc
    s = np.where(maxc > 0, delta / np.where(maxc > 0, maxc, 1.0), 0.0)
    safe = np.where(delta > 0, delta, 1.0)
    rc = (maxc - r) / safe
    gc = (maxc - g) / safe
    bc = (maxc - b) / safe
    h = np.where(r == maxc, bc - gc, np.where(g == maxc, 2.0 + rc - bc, 4.0 + gc - rc))
    h = (h / 6.0) % 1.0
    h = np.where(delta > 0, h, 0.0)
    return np.stack([(h * 360.0) % 360.0, s, v], axis=1)


# ---------------------------------------------------------------------------
# Spatial index

class SpatialIndex:
    """Radius search over a fixed set of positions (kd-tree backed)."""

    def __init__(self, xyz: np.ndarray):
        xyz = np.asarray(xyz, dtype=np.float64).reshape(-1, 3)
        if len(xyz) == 0:
            raise ValueError("cannot index an empty cloud")
        self.xyz = xyz
        self._tree = cKDTree(xyz)

    def __len__(self) -> int:
        return len(self.xyz)

    def radius_neighbors(self, center, r: float, exclude: Optional[int] = None) -> np.ndarray:
        """Sorted indices within distance ``r`` of ``center``.

        A point coinciding with ``center`` is dropped only when its index
        is passed as ``exclude``.
        """
        if not r > 0:
            raise ValueError(f"radius must be positive, got {r}")
        idx = np.asarray(self._tree.query_ball_point(np.asarray(center, dtype=np.float64), r), dtype=np.intp)
        idx.sort()
        if exclude is not None:
            idx = idx[idx != exclude]
        return idx

    def neighbor_lists(self, r: float, points: Optional[np.ndarray] = None):
        """CSR neighborhoods of every indexed point (self included).

        Returns ``(offsets, indices)`` such that the neighbors of point i
        are ``indices[offsets[i]:offsets[i + 1]]``.
        """
        if not r > 0:
            raise ValueError(f"radius must be positive, got {r}")
        query = self.xyz if points is None else np.asarray(points, dtype=np.float64)
        lists = self._tree.query_ball_point(query, r, return_sorted=True)
        counts = np.fromiter((len(l) for l in lists), dtype=np.intp, count=len(lists))
        offsets = np.zeros(len(lists) + 1, dtype=np.intp)
        np.cumsum(counts, out=offsets[1:])
        if offsets[-1]:
            indices = np.concatenate([np.asarray(l, dtype=np.intp) for l in lists if l])
        else:
            indices = np.zeros(0, dtype=np.intp)
        return offsets, indices


def build_index(cloud: PointCloud) -> SpatialIndex:
    if len(cloud) == 0:
        raise ValueError("cannot index an empty cloud")
    return SpatialIndex(cloud.xyz)


def radius_neighbors(index: SpatialIndex, center, r: float) -> np.ndarray:
    """Indices of points within ``r`` of ``center``, excluding ``center`` itself.

    The query point is excluded when it is one of the indexed points
    (exact coordinate match).
    """
    idx = index.radius_neighbors(center, r)
    same = np.all(index.xyz[idx] == np.asarray(center, dtype=np.float64), axis=1)
    return idx[~same]


# ---------------------------------------------------------------------------
# Normals

def _smallest_eigvec(cov: np.ndarray) -> np.ndarray:
    _, vecs = np.linalg.eigh(cov)
    return vecs[..., :, 0]


def estimate_normals(
    cloud: PointCloud,
    radius: float,
    viewpoint=DEFAULT_VIEWPOINT,
    index: Optional[SpatialIndex] = None,
) -> PointCloud:
    """PCA normals over a radius neighborhood, flipped toward ``viewpoint``.

    Points with fewer than 3 neighbors (self included) get a zero normal
    and ``normal_valid = False``.
    """
    if not radius > 0:
        raise ValueError(f"normal radius must be positive, got {radius}")
    index = index or build_index(cloud)
    offsets, indices = index.neighbor_lists(radius)
    counts = np.diff(offsets)
    xyz = cloud.xyz
    n = len(cloud)

    # Per-point first and second moments via segment sums.
    owner = np.repeat(np.arange(n), counts)
    nb = xyz[indices]
    sums = np.stack([np.bincount(owner, weights=nb[:, k], minlength=n) for k in range(3)], axis=1)
    safe_counts = np.maximum(counts, 1)
    mean = sums / safe_counts[:, None]
    centered = nb - mean[owner]
    cov = np.empty((n, 3, 3))
    for a in range(3):
        for b in range(a, 3):
            s = np.bincount(owner, weights=centered[:, a] * centered[:, b], minlength=n)
            cov[:, a, b] = s
            cov[:, b, a] = s
    cov /= safe_counts[:, None, None]

    valid = counts >= 3
    normals = np.zeros((n, 3))
    if valid.any():
        normals[valid] = _smallest_eigvec(cov[valid])
    normals[valid] /= np.linalg.norm(normals[valid], axis=1, keepdims=True)
    to_view = np.asarray(viewpoint, dtype=np.float64) - xyz
    flip = np.einsum("ij,ij->i", normals, to_view) < 0
    normals[flip] *= -1.0
    return cloud.with_normals(normals, valid)
