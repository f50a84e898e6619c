"""Synthetic ironing scenes: board, garment height field and analytic truth."""

from __future__ import annotations

from dataclasses import dataclass
import os
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .cloud import PointCloud, rgb_to_hsv

TRUTH_SLOPE_DEG = 15.0


class SceneSpecError(ValueError):
    pass


@dataclass(frozen=True)
class Wrinkle:
    """Gaussian ridge around a straight crest segment."""

    center: Tuple[float, float]
    direction: Tuple[float, float]
    length: float
    amplitude: float
    width: float

    def segment(self):
        c = np.asarray(self.center, dtype=np.float64)
        d = np.asarray(self.direction, dtype=np.float64)
        d = d / np.linalg.norm(d)
        half = 0.5 * self.length * d
        return c - half, c + half

    def offset(self, x, y):
        """Vector from the nearest crest point to (x, y), shape (..., 2)."""
        a, b = self.segment()
        p = np.stack([np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64)], axis=-1)
        ab = b - a
        denom = float(ab @ ab)
        t = np.clip(((p - a) @ ab) / denom, 0.0, 1.0) if denom > 0 else np.zeros(p.shape[:-1])
        return p - (a + t[..., None] * ab)

    def height(self, x, y):
        off = self.offset(x, y)
        d2 = np.sum(off**2, axis=-1)
        return self.amplitude * np.exp(-d2 / (2.0 * self.width**2))

    def gradient(self, x, y):
        off = self.offset(x, y)
        d2 = np.sum(off**2, axis=-1)
        g = self.amplitude * np.exp(-d2 / (2.0 * self.width**2)) / self.width**2
        return -g[..., None] * off


@dataclass(frozen=True)
class SceneSpec:
    board_extent: Tuple[float, float] = (0.60, 0.40)
    board_height: float = 0.80
    board_color: Tuple[float, float, float] = (0.30, 0.45, 0.70)
    garment_extent: Tuple[float, float] = (0.30, 0.24)
    garment_offset: Tuple[float, float] = (0.02, 0.0)
    garment_color: Tuple[float, float, float] = (0.90, 0.50, 0.10)
    garment_thickness: float = 0.003
    wrinkles: Tuple[Wrinkle, ...] = ()
    density: float = 150_000.0
    noise: float = 0.0003
    color_noise: float = 0.01
    cell: float = 0.001
    rng_seed: int = 0

    def garment_bounds(self):
        (gx, gy), (ox, oy) = self.garment_extent, self.garment_offset
        return (ox - gx / 2, ox + gx / 2), (oy - gy / 2, oy + gy / 2)

    def validate(self) -> None:
        problems = []
        bx, by = self.board_extent
        (x0, x1), (y0, y1) = self.garment_bounds()
        if not (-bx / 2 < x0 < x1 < bx / 2 and -by / 2 < y0 < y1 < by / 2):
            problems.append("garment must lie strictly inside the board footprint")
        hb = rgb_to_hsv(np.array(self.board_color))[0]
        hg = rgb_to_hsv(np.array(self.garment_color))[0]
        dh = abs(hb - hg) % 360.0
        if min(dh, 360.0 - dh) < 60.0:
            problems.append("board and garment hues must differ by at least 60 degrees")
        for i, w in enumerate(self.wrinkles):
            if not (w.amplitude > 0 and w.width > 0 and w.length >= 0):
                problems.append(f"wrinkle {i}: amplitude and width must be positive")
            if np.linalg.norm(w.direction) == 0:
                problems.append(f"wrinkle {i}: zero direction")
        if not self.density > 0:
            problems.append("density must be positive")
        if self.noise < 0 or self.garment_thickness < 0:
            problems.append("noise and thickness must be non-negative")
        if problems:
            raise SceneSpecError("; ".join(problems))


@dataclass
class ClothHeightField:
    """Garment heights above its resting level, on a regular xy grid.

    The garment's top surface sits at ``board_height + thickness +
    heights``. Outside the grid the surface is the bare board.
    """

    origin: Tuple[float, float]
    cell: float
    heights: np.ndarray
    board_height: float
    thickness: float
    color: Tuple[float, float, float]

    def __post_init__(self):
        self.heights = np.asarray(self.heights, dtype=np.float64)
        if np.any(self.heights < 0) or not np.all(np.isfinite(self.heights)):
            raise ValueError("cloth heights must be finite and non-negative")

    @property
    def shape(self):
        return self.heights.shape

    def bounds(self):
        ny, nx = self.heights.shape
        x0, y0 = self.origin
        return (x0, x0 + (nx - 1) * self.cell), (y0, y0 + (ny - 1) * self.cell)

    def inside(self, x, y):
        (x0, x1), (y0, y1) = self.bounds()
        x, y = np.asarray(x), np.asarray(y)
        return (x >= x0) & (x <= x1) & (y >= y0) & (y <= y1)

    def wrinkle_height(self, x, y):
        """Bilinear height above the resting level; 0 outside the grid."""
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        ny, nx = self.heights.shape
        fx = (x - self.origin[0]) / self.cell
        fy = (y - self.origin[1]) / self.cell
        inside = (fx >= 0) & (fx <= nx - 1) & (fy >= 0) & (fy <= ny - 1)
        fx = np.clip(fx, 0, nx - 1)
        fy = np.clip(fy, 0, ny - 1)
        i0 = np.minimum(np.floor(fx).astype(int), nx - 2)
        j0 = np.minimum(np.floor(fy).astype(int), ny - 2)
        tx = fx - i0
        ty = fy - j0
        h = self.heights
        val = (
            h[j0, i0] * (1 - tx) * (1 - ty)
            + h[j0, i0 + 1] * tx * (1 - ty)
            + h[j0 + 1, i0] * (1 - tx) * ty
            + h[j0 + 1, i0 + 1] * tx * ty
        )
        return np.where(inside, val, 0.0)

    def surface_height(self, x, y):
        """World z of the topmost surface (garment or board) at (x, y)."""
        inside = self.inside(x, y)
        garment = self.board_height + self.thickness + self.wrinkle_height(x, y)
        return np.where(inside, garment, self.board_height)

    def cell_centers(self):
        ny, nx = self.heights.shape
        xs = self.origin[0] + np.arange(nx) * self.cell
        ys = self.origin[1] + np.arange(ny) * self.cell
        return np.meshgrid(xs, ys)

    def copy(self) -> "ClothHeightField":
        return ClothHeightField(self.origin, self.cell, self.heights.copy(), self.board_height, self.thickness, self.color)


def save_height_field(cloth: ClothHeightField, path: str | os.PathLike) -> None:
    """Heights (meters) as CSV rows of constant y, geometry in comment lines."""
    x0, y0 = cloth.origin
    r, g, b = cloth.color
    header = (
        f"origin_x={x0!r} origin_y={y0!r} cell={cloth.cell!r}\n"
        f"board_height={cloth.board_height!r} thickness={cloth.thickness!r}\n"
        f"color={r!r},{g!r},{b!r}"
    )
    np.savetxt(path, cloth.heights, delimiter=",", fmt="%.10g", header=header)


def load_height_field(path: str | os.PathLike) -> ClothHeightField:
    meta = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if not line.startswith("#"):
                break
            for item in line[1:].split():
                key, _, val = item.partition("=")
                meta[key] = val
    try:
        color = tuple(float(v) for v in meta["color"].split(","))
        heights = np.loadtxt(path, delimiter=",", comments="#", ndmin=2)
        return ClothHeightField(
            (float(meta["origin_x"]), float(meta["origin_y"])),
            float(meta["cell"]),
            heights,
            float(meta["board_height"]),
            float(meta["thickness"]),
            color,
        )
    except (KeyError, ValueError) as exc:
        raise ValueError(f"{path}: bad height field ({exc})") from None


def build_cloth(spec: SceneSpec) -> ClothHeightField:
    (x0, x1), (y0, y1) = spec.garment_bounds()
    nx = int(round((x1 - x0) / spec.cell)) + 1
    ny = int(round((y1 - y0) / spec.cell)) + 1
    xs = x0 + np.arange(nx) * spec.cell
    ys = y0 + np.arange(ny) * spec.cell
    X, Y = np.meshgrid(xs, ys)
    H = np.zeros_like(X)
    for w in spec.wrinkles:
        H += w.height(X, Y)
    return ClothHeightField((x0, y0), spec.cell, H, spec.board_height, spec.garment_thickness, spec.garment_color)


def render_cloud(
    cloth: ClothHeightField,
    spec: SceneSpec,
    rng: np.random.Generator,
) -> Tuple[PointCloud, np.ndarray]:
    """Sample board and garment tops uniformly at ``spec.density``.

    Returns the cloud and a boolean array marking garment points.
    """
    bx, by = spec.board_extent
    (gx0, gx1), (gy0, gy1) = cloth.bounds()
    g_area = (gx1 - gx0) * (gy1 - gy0)
    n_garment = rng.poisson(spec.density * g_area)
    gx = rng.uniform(gx0, gx1, n_garment)
    gy = rng.uniform(gy0, gy1, n_garment)
    gz = cloth.surface_height(gx, gy)

    n_board = rng.poisson(spec.density * bx * by)
    bxs = rng.uniform(-bx / 2, bx / 2, n_board)
    bys = rng.uniform(-by / 2, by / 2, n_board)
    visible = ~cloth.inside(bxs, bys)
    bxs, bys = bxs[visible], bys[visible]
    bzs = np.full(len(bxs), spec.board_height)

    xyz = np.concatenate([np.c_[gx, gy, gz], np.c_[bxs, bys, bzs]])
    xyz = xyz + rng.normal(0.0, spec.noise, xyz.shape) if spec.noise > 0 else xyz
    rgb = np.concatenate(
        [np.tile(cloth.color, (len(gx), 1)), np.tile(spec.board_color, (len(bxs), 1))]
    )
    if spec.color_noise > 0:
        rgb = np.clip(rgb + rng.normal(0.0, spec.color_noise, rgb.shape), 0.0, 1.0)
    # 8-bit quantization as a scanner would deliver.
    rgb = np.rint(rgb * 255.0) / 255.0
    is_garment = np.r_[np.ones(len(gx), bool), np.zeros(len(bxs), bool)]
    return PointCloud(xyz=xyz, rgb=rgb), is_garment


@dataclass
class GroundTruth:
    """Analytic wrinkle truth, rasterizable onto any board-plane grid."""

    spec: SceneSpec
    slope_deg: float = TRUTH_SLOPE_DEG

    def slope(self, x, y):
        x = np.asarray(x, dtype=np.float64)
        g = np.zeros(x.shape + (2,))
        for w in self.spec.wrinkles:
            g += w.gradient(x, y)
        return np.linalg.norm(g, axis=-1)

    def garment_at(self, x, y):
        (x0, x1), (y0, y1) = self.spec.garment_bounds()
        x, y = np.asarray(x), np.asarray(y)
        return (x >= x0) & (x <= x1) & (y >= y0) & (y <= y1)

    def wrinkle_at(self, x, y):
        return self.garment_at(x, y) & (self.slope(x, y) > np.tan(np.radians(self.slope_deg)))

    def rasterize(self, grid):
        """``(wrinkle, garment)`` masks at the pixel centers of an ImageGrid."""
        centers = grid.pixel_centers()
        x, y = centers[..., 0], centers[..., 1]
        return self.wrinkle_at(x, y), self.garment_at(x, y)

    def canonical(self, resolution: float = 0.002):
        """Masks on a grid aligned with the garment rectangle (row = y)."""
        (x0, x1), (y0, y1) = self.spec.garment_bounds()
        nx = int(round((x1 - x0) / resolution)) + 1
        ny = int(round((y1 - y0) / resolution)) + 1
        X, Y = np.meshgrid(x0 + np.arange(nx) * resolution, y0 + np.arange(ny) * resolution)
        return self.wrinkle_at(X, Y), self.garment_at(X, Y)


@dataclass
class Scene:
    spec: SceneSpec
    cloud: PointCloud
    truth: GroundTruth
    cloth: ClothHeightField
    is_garment: np.ndarray


def generate_scene(spec: SceneSpec) -> Scene:
    spec.validate()
    rng = np.random.default_rng(spec.rng_seed)
    cloth = build_cloth(spec)
    cloud, is_garment = render_cloud(cloth, spec, rng)
    return Scene(spec, cloud, GroundTruth(spec), cloth, is_garment)


# ---------------------------------------------------------------------------
# Random scene suites

# Wrinkle shape ranges for random suites.
WIDTH_RANGE = (0.008, 0.011)
AMPLITUDE_RANGE = (0.009, 0.013)
LENGTH_RANGE = (0.08, 0.12)
BORDER_CLEARANCE = 0.05
MIN_SEPARATION = 0.07


def _segment_distance(a0, a1, b0, b1) -> float:
    """Minimum distance between two 2-D segments (sampled)."""
    t = np.linspace(0.0, 1.0, 41)[:, None]
    pa = a0 + t * (a1 - a0)
    pb = b0 + t * (b1 - b0)
    return float(np.min(np.linalg.norm(pa[:, None, :] - pb[None, :, :], axis=-1)))


def random_wrinkles(n: int, spec: SceneSpec, rng: np.random.Generator, max_tries: int = 10_000) -> Tuple[Wrinkle, ...]:
    """Draw ``n`` ridges that clear the garment border and each other."""
    (x0, x1), (y0, y1) = spec.garment_bounds()
    out: List[Wrinkle] = []
    for _ in range(max_tries):
        if len(out) == n:
            break
        length = rng.uniform(*LENGTH_RANGE)
        angle = rng.uniform(0.0, np.pi)
        d = np.array([np.cos(angle), np.sin(angle)])
        # Centers whose crest ends keep the border clearance.
        hx, hy = 0.5 * length * np.abs(d) + BORDER_CLEARANCE
        if x1 - x0 < 2 * hx or y1 - y0 < 2 * hy:
            continue
        c = np.array([rng.uniform(x0 + hx, x1 - hx), rng.uniform(y0 + hy, y1 - hy)])
        w = Wrinkle(
            center=(float(c[0]), float(c[1])),
            direction=(float(d[0]), float(d[1])),
            length=float(length),
            amplitude=float(rng.uniform(*AMPLITUDE_RANGE)),
            width=float(rng.uniform(*WIDTH_RANGE)),
        )
        a, b = w.segment()
        if any(_segment_distance(a, b, *o.segment()) < MIN_SEPARATION for o in out):
            continue
        out.append(w)
    if len(out) != n:
        raise SceneSpecError(f"could not place {n} wrinkles")
    return tuple(out)


def suite_spec(n_wrinkles: int, seed: int, base: Optional[SceneSpec] = None) -> SceneSpec:
    from dataclasses import replace

    base = base or SceneSpec()
    rng = np.random.default_rng(10_000 + seed)
    wrinkles = random_wrinkles(n_wrinkles, base, rng)
    return replace(base, wrinkles=wrinkles, rng_seed=seed)


def default_suite(base: Optional[SceneSpec] = None, first_seed: int = 1, n: int = 10) -> List[SceneSpec]:
    """Suite of ``n`` scenes; the first half has one wrinkle, the rest two.

    With the defaults: seeds 1-5 one wrinkle, seeds 6-10 two.
    """
    half = (n + 1) // 2
    return [suite_spec(1 if i < half else 2, first_seed + i, base) for i in range(n)]


def loop_suite(base: Optional[SceneSpec] = None, seeds: Sequence[int] = (1, 2, 3, 4, 5)) -> List[SceneSpec]:
    """Two-wrinkle scenes for the closed ironing loop."""
    return [suite_spec(2, s, base) for s in seeds]
