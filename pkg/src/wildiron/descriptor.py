"""Per-point wrinkle descriptors and their projection onto the board plane."""

from __future__ import annotations

import os
from dataclasses import dataclass, replace

import numpy as np
from scipy import ndimage

from .cloud import PointCloud, SpatialIndex
from .segmentation import PlaneModel

RSD_MAX_RADIUS = 0.2


@dataclass(frozen=True)
class DescriptorField:
    values: np.ndarray
    valid: np.ndarray
    name: str = "wild"
    clamped: int = 0


def _check_normals(cloud: PointCloud):
    if not cloud.has_normals:
        raise ValueError("descriptor needs a cloud with normals")


def _pairs(index: SpatialIndex, radius: float):
    """Neighbor pairs (owner, neighbor) within ``radius``, self excluded."""
    offsets, indices = index.neighbor_lists(radius)
    owner = np.repeat(np.arange(len(offsets) - 1), np.diff(offsets))
    keep = indices != owner
    return owner[keep], indices[keep]


def compute_wild(cloud: PointCloud, index: SpatialIndex, radius: float = 0.03) -> DescriptorField:
    """Wrinkleness local descriptor.

    For each point, the mean of ``n_i . n_j`` over neighbors ``j`` with a
    valid normal inside ``radius`` (the point itself excluded). Means are
    clamped to [0, 1]; ``clamped`` counts how many needed it. Points with
    an invalid normal or no valid neighbor are flagged invalid.
    """
    _check_normals(cloud)
    if not radius > 0:
        raise ValueError("WiLD radius must be positive")
    n = len(cloud)
    normals = cloud.normals
    ok = cloud.normal_valid
    owner, nb = _pairs(index, radius)
    use = ok[nb]
    owner, nb = owner[use], nb[use]
    k = np.bincount(owner, minlength=n)
    # sum_j n_i . n_j == n_i . sum_j n_j
    nsum = np.stack([np.bincount(owner, weights=normals[nb, c], minlength=n) for c in range(3)], axis=1)
    valid = ok & (k > 0)
    raw = np.zeros(n)
    raw[valid] = np.einsum("ij,ij->i", normals[valid], nsum[valid]) / k[valid]
    clamped = int(np.count_nonzero(valid & ((raw < 0.0) | (raw > 1.0))))
    values = np.where(valid, np.clip(raw, 0.0, 1.0), np.nan)
    return DescriptorField(values=values, valid=valid, name="wild", clamped=clamped)


def rsd_pair_radius(d, cos_alpha):
    """Sphere radius through two oriented points ``d`` apart at angle alpha."""
    d = np.asarray(d, dtype=np.float64)
    one_minus = 1.0 - np.clip(np.asarray(cos_alpha, dtype=np.float64), -1.0, 1.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        r = d / np.sqrt(2.0 * one_minus)
    return np.where(one_minus > 0, r, np.inf)


def compute_rsd(
    cloud: PointCloud,
    index: SpatialIndex,
    radius: float = 0.03,
    r_max: float = RSD_MAX_RADIUS,
) -> DescriptorField:
    """Simplified radius-based surface descriptor (minimum fitted radius).

    Each valid neighbor gives ``d / sqrt(2 (1 - cos a))``; the descriptor
    is the minimum over neighbors, capped at ``r_max``.
    """
    _check_normals(cloud)
    if not radius > 0:
        raise ValueError("RSD radius must be positive")
    n = len(cloud)
    normals = cloud.normals
    ok = cloud.normal_valid
    owner, nb = _pairs(index, radius)
    use = ok[nb] & ok[owner]
    owner, nb = owner[use], nb[use]
    diff = cloud.xyz[owner] - cloud.xyz[nb]
    dist = np.sqrt(np.einsum("ij,ij->i", diff, diff))
    cos_a = np.einsum("ij,ij->i", normals[owner], normals[nb])
    r = np.minimum(rsd_pair_radius(dist, cos_a), r_max)
    k = np.bincount(owner, minlength=n)
    valid = ok & (k > 0)
    values = np.full(n, np.nan)
    if len(owner):
        starts = np.flatnonzero(np.r_[True, owner[1:] != owner[:-1]])
        mins = np.minimum.reduceat(r, starts)
        values[owner[starts]] = mins
    return DescriptorField(values=values, valid=valid, name="rsd")


# ---------------------------------------------------------------------------
# Projection

@dataclass(frozen=True)
class ImageGrid:
    """Raster on the board plane.

    Pixel ``(row, col)`` sits at ``origin + col*res*u_axis + row*res*v_axis``.
    ``values`` is NaN and ``depth`` is -inf where nothing projected.
    """

    origin: np.ndarray
    u_axis: np.ndarray
    v_axis: np.ndarray
    resolution: float
    values: np.ndarray
    depth: np.ndarray

    @property
    def shape(self):
        return self.values.shape

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    def pixel_to_world(self, rows, cols) -> np.ndarray:
        rows = np.asarray(rows, dtype=np.float64)[..., None]
        cols = np.asarray(cols, dtype=np.float64)[..., None]
        return self.origin + cols * self.resolution * self.u_axis + rows * self.resolution * self.v_axis

    def world_to_pixel(self, xyz):
        """Nearest (row, col) of world points (projected along the plane normal)."""
        rel = np.asarray(xyz, dtype=np.float64) - self.origin
        col = np.rint(rel @ self.u_axis / self.resolution).astype(int)
        row = np.rint(rel @ self.v_axis / self.resolution).astype(int)
        return row, col

    def pixel_centers(self):
        """World xyz of every pixel center, shape (H, W, 3)."""
        rows, cols = np.mgrid[0 : self.height, 0 : self.width]
        return self.pixel_to_world(rows, cols)

    def with_values(self, values: np.ndarray) -> "ImageGrid":
        return replace(self, values=values)

    def filled(self, domain: np.ndarray) -> "ImageGrid":
        """Copy whose undefined pixels inside ``domain`` take the nearest defined value."""
        defined = np.isfinite(self.values)
        if not defined.any():
            raise ValueError("image has no defined pixel")
        _, (ri, ci) = ndimage.distance_transform_edt(~defined, return_indices=True)
        nearest = self.values[ri, ci]
        values = np.where(defined, self.values, np.where(domain, nearest, np.nan))
        return replace(self, values=values)


def plane_axes(plane: PlaneModel):
    """In-plane orthonormal axes: world x projected, then normal x u."""
    n = plane.normal
    u = np.array([1.0, 0.0, 0.0]) - n[0] * n
    u /= np.linalg.norm(u)
    v = np.cross(n, u)
    return u, v


def project_to_grid(
    garment: PointCloud,
    field: DescriptorField,
    plane: PlaneModel,
    resolution: float = 0.002,
    margin: int = 2,
):
    """Orthogonal projection of valid descriptor values onto the board plane.

    The grid spans the garment's in-plane bounding box plus ``margin``
    pixels. Per pixel the point highest above the plane wins. Returns
    ``(ImageGrid, mask)``; the mask is True exactly where a valid point
    landed.
    """
    if len(garment) == 0:
        raise ValueError("empty garment cloud")
    if not resolution > 0:
        raise ValueError("resolution must be positive")
    u, v = plane_axes(plane)
    onplane = plane.project(garment.xyz)
    pu = onplane @ u
    pv = onplane @ v
    anchor = onplane[0] - pu[0] * u - pv[0] * v  # plane point with pu = pv = 0
    u0 = np.floor(pu.min() / resolution) * resolution - margin * resolution
    v0 = np.floor(pv.min() / resolution) * resolution - margin * resolution
    origin = anchor + u0 * u + v0 * v
    cols = np.rint((pu - u0) / resolution).astype(int)
    rows = np.rint((pv - v0) / resolution).astype(int)
    width = int(cols.max()) + margin + 1
    height = int(rows.max()) + margin + 1

    values = np.full((height, width), np.nan)
    depth = np.full((height, width), -np.inf)
    sel = np.flatnonzero(field.valid)
    if len(sel):
        h = plane.signed_distance(garment.xyz[sel])
        flat = rows[sel] * width + cols[sel]
        # Sort by pixel then height, last entry of each pixel is the highest.
        order = np.lexsort((h, flat))
        flat_s = flat[order]
        last = np.r_[flat_s[1:] != flat_s[:-1], True]
        win = sel[order][last]
        pix = flat_s[last]
        values.flat[pix] = field.values[win]
        depth.flat[pix] = h[order][last]
    mask = np.isfinite(depth)
    grid = ImageGrid(origin=origin, u_axis=u, v_axis=v, resolution=float(resolution), values=values, depth=depth)
    return grid, mask


# ---------------------------------------------------------------------------
# Raster files

def write_pbm(mask: np.ndarray, path: str | os.PathLike) -> None:
    """Plain (P1) PBM; 1 is foreground."""
    mask = np.asarray(mask, dtype=bool)
    h, w = mask.shape
    lines = ["P1", f"{w} {h}"]
    for row in mask.astype(np.uint8):
        lines.append(" ".join(map(str, row)))
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")


def read_pbm(path: str | os.PathLike) -> np.ndarray:
    with open(path, "r", encoding="ascii") as fh:
        tokens = []
        for line in fh:
            line = line.split("#", 1)[0]
            tokens.extend(line.split())
    if tokens[0] != "P1":
        raise ValueError(f"{path}: not a plain PBM")
    w, h = int(tokens[1]), int(tokens[2])
    bits = "".join(tokens[3:])
    data = np.array([int(c) for c in bits], dtype=np.uint8)
    return data.reshape(h, w).astype(bool)


def write_pgm16(values: np.ndarray, path: str | os.PathLike, mask=None) -> tuple:
    """Binary 16-bit PGM of min-max scaled values; undefined pixels are 0.

    The scaling goes into a ``# scale`` comment and a ``.scale`` sidecar
    file so raw values can be recovered. Returns ``(vmin, vmax)``.
    """
    vals = np.asarray(values, dtype=np.float64)
    defined = np.isfinite(vals) if mask is None else (np.asarray(mask, bool) & np.isfinite(vals))
    if defined.any():
        vmin, vmax = float(vals[defined].min()), float(vals[defined].max())
    else:
        vmin, vmax = 0.0, 0.0
    span = vmax - vmin
    scaled = np.zeros(vals.shape, dtype=">u2")
    if span > 0:
        scaled[defined] = np.rint(1.0 + (vals[defined] - vmin) / span * 65534.0).astype(">u2")
    else:
        scaled[defined] = 1
    h, w = vals.shape
    header = f"P5\n# scale min={vmin!r} max={vmax!r} zero=undefined\n{w} {h}\n65535\n".encode("ascii")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(scaled.tobytes())
    with open(str(path) + ".scale", "w", encoding="ascii") as fh:
        fh.write(f"min {vmin!r}\nmax {vmax!r}\nlevels 1..65535\nundefined 0\n")
    return vmin, vmax


def write_grid_csv(values: np.ndarray, path: str | os.PathLike) -> None:
    """Raw float image, one row per line, ``nan`` where undefined."""
    np.savetxt(path, np.asarray(values, dtype=np.float64), delimiter=",", fmt="%.10g")
