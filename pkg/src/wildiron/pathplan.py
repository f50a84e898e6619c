"""From a descriptor image to an ironing path on the board plane."""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from .descriptor import ImageGrid
from .segmentation import PlaneModel

log = logging.getLogger(__name__)

Pixel = Tuple[int, int]

# Clockwise from north: N, NE, E, SE, S, SW, W, NW.
NEIGHBOR_ORDER: Tuple[Pixel, ...] = ((-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1))
EIGHT = np.ones((3, 3), dtype=bool)


class PathPlanningError(RuntimeError):
    pass


class NoWrinklePath(PathPlanningError):
    pass


class CyclicSkeleton(PathPlanningError):
    pass


class DegeneratePath(PathPlanningError):
    pass


class DisconnectedSkeleton(PathPlanningError):
    pass


@dataclass(frozen=True)
class ThresholdParams:
    low: float = 0.4
    high: float = 0.95

    def __post_init__(self):
        if not 0.0 <= self.low < self.high <= 1.0:
            raise ValueError(f"need 0 <= low < high <= 1, got {self.low}, {self.high}")


# ---------------------------------------------------------------------------
# Mask operations

def _check_size(size: int, name: str):
    if size <= 0 or size % 2 == 0:
        raise ValueError(f"{name} must be a positive odd integer, got {size}")


def asymmetric_closing(mask: np.ndarray, dilate_size: int = 5, erode_size: int = 11) -> np.ndarray:
    """Square dilation followed by a larger square erosion.

    Fills projection gaps and trims the garment border by
    ``(erode_size - dilate_size) // 2`` pixels. Outside the image counts
    as background.
    """
    _check_size(dilate_size, "dilate_size")
    _check_size(erode_size, "erode_size")
    if dilate_size > erode_size:
        raise ValueError("dilation must not be larger than erosion")
    mask = np.asarray(mask, dtype=bool)
    pad = dilate_size
    big = np.pad(mask, pad)
    dil = ndimage.binary_dilation(big, structure=np.ones((dilate_size, dilate_size), bool))
    ero = ndimage.binary_erosion(dil, structure=np.ones((erode_size, erode_size), bool), border_value=0)
    return ero[pad:-pad, pad:-pad]


def boundary_pixels(mask: np.ndarray) -> np.ndarray:
    """Foreground pixels with at least one background 4-neighbor."""
    mask = np.asarray(mask, dtype=bool)
    p = np.pad(mask, 1)
    inner = p[:-2, 1:-1] & p[2:, 1:-1] & p[1:-1, :-2] & p[1:-1, 2:]
    return mask & ~inner


def _moore_trace(fg: np.ndarray, start: Pixel, back: Pixel) -> List[Pixel]:
    """Clockwise Moore-neighbor border following from ``start``.

    ``back`` is a background neighbor of ``start``. Stops when ``start``
    is re-entered from the original backtrack position.
    """
    h, w = fg.shape

    def on(p):
        return 0 <= p[0] < h and 0 <= p[1] < w and fg[p]

    # Clockwise ring in (row, col): W, NW, N, NE, E, SE, S, SW.
    ring = ((0, -1), (-1, -1), (-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1))
    out = [start]
    cur, b = start, back
    first_back = back
    for _ in range(8 * h * w + 8):
        d = (b[0] - cur[0], b[1] - cur[1])
        k = ring.index(d)
        nxt = None
        prev = b
        for step in range(1, 9):
            cand_d = ring[(k + step) % 8]
            cand = (cur[0] + cand_d[0], cur[1] + cand_d[1])
            if on(cand):
                nxt = cand
                break
            prev = cand
        if nxt is None:
            return out  # isolated pixel
        cur, b = nxt, prev
        if cur == start and b == first_back:
            break
        out.append(cur)
    return out


def extract_contour(mask: np.ndarray) -> List[Pixel]:
    """Ordered boundary of the largest 8-connected component.

    The outer border is traced first, then the border of each hole.
    Every pixel satisfying :func:`boundary_pixels` appears exactly once.
    """
    region = largest_region(mask)
    if not region.any():
        raise PathPlanningError("cannot extract a contour from an empty mask")
    border = boundary_pixels(region)
    seen = set()
    ordered: List[Pixel] = []

    def take(trace):
        for p in trace:
            if p not in seen and border[p]:
                seen.add(p)
                ordered.append(p)

    rows, cols = np.nonzero(region)
    start = (int(rows[0]), int(cols[0]))
    take(_moore_trace(region, start, (start[0], start[1] - 1)))

    # Holes: background components not touching the image edge.
    holes, n_holes = ndimage.label(~region)
    edge_labels = set(np.unique(np.r_[holes[0], holes[-1], holes[:, 0], holes[:, -1]]))
    for lab in range(1, n_holes + 1):
        if lab in edge_labels:
            continue
        hr, hc = np.nonzero(holes == lab)
        first = (int(hr[0]), int(hc[0]))
        s = (first[0], first[1] - 1)
        take(_moore_trace(region, s, first))
    # Pixels a trace skipped (pinched shapes) in raster order.
    for r, c in zip(*np.nonzero(border)):
        p = (int(r), int(c))
        if p not in seen:
            seen.add(p)
            ordered.append(p)
    return ordered


def normalize_over(values: np.ndarray, mask: np.ndarray, min_range: float = 0.0):
    """Min-max normalize ``values`` over finite pixels of ``mask``.

    Returns None when the range is not above ``min_range`` (flat image).
    """
    mask = np.asarray(mask, dtype=bool) & np.isfinite(values)
    if not mask.any():
        return None
    lo = float(values[mask].min())
    hi = float(values[mask].max())
    if not hi - lo > min_range:
        return None
    out = np.full(values.shape, np.nan)
    out[mask] = (values[mask] - lo) / (hi - lo)
    return out


def wrinkle_mask(
    image: ImageGrid,
    mask: np.ndarray,
    t: ThresholdParams = ThresholdParams(),
    min_range: float = 0.0,
    invert: bool = False,
) -> np.ndarray:
    """Pixels whose normalized value lies strictly between the thresholds.

    ``invert`` flips the normalized scale (1 - v), for descriptors where
    small values mean curved. A range not above ``min_range`` means a
    flat garment and gives an empty mask.
    """
    values = image.values if isinstance(image, ImageGrid) else np.asarray(image, dtype=np.float64)
    if values.shape != np.shape(mask):
        raise ValueError("image and mask dimensions differ")
    norm = normalize_over(values, mask, min_range)
    if norm is None:
        return np.zeros(values.shape, dtype=bool)
    if invert:
        norm = 1.0 - norm
    with np.errstate(invalid="ignore"):
        return (norm > t.low) & (norm < t.high)


def label_regions(mask: np.ndarray):
    """8-connected labels and per-label sizes (index 0 is background)."""
    labels, n = ndimage.label(np.asarray(mask, dtype=bool), structure=EIGHT)
    sizes = np.bincount(labels.ravel(), minlength=n + 1)
    sizes[0] = 0
    return labels, sizes


def regions_by_size(mask: np.ndarray) -> List[np.ndarray]:
    """8-connected components, largest first (ties by raster order)."""
    labels, sizes = label_regions(mask)
    order = sorted(range(1, len(sizes)), key=lambda lab: (-sizes[lab], lab))
    return [labels == lab for lab in order]


def largest_region(mask: np.ndarray) -> np.ndarray:
    labels, sizes = label_regions(mask)
    if len(sizes) <= 1:
        return np.zeros(np.shape(mask), dtype=bool)
    return labels == int(np.argmax(sizes))


# ---------------------------------------------------------------------------
# Thinning

def _zs_neighbors(img: np.ndarray):
    p = np.pad(img, 1)
    n = p[:-2, 1:-1]
    ne = p[:-2, 2:]
    e = p[1:-1, 2:]
    se = p[2:, 2:]
    s = p[2:, 1:-1]
    sw = p[2:, :-2]
    w = p[1:-1, :-2]
    nw = p[:-2, :-2]
    return n, ne, e, se, s, sw, w, nw


def _zs_pass(img: np.ndarray, first: bool) -> np.ndarray:
    p2, p3, p4, p5, p6, p7, p8, p9 = (a.astype(np.int8) for a in _zs_neighbors(img))
    ring = (p2, p3, p4, p5, p6, p7, p8, p9, p2)
    b = p2 + p3 + p4 + p5 + p6 + p7 + p8 + p9
    a = sum(((ring[i] == 0) & (ring[i + 1] == 1)).astype(np.int8) for i in range(8))
    if first:
        c1 = p2 * p4 * p6
        c2 = p4 * p6 * p8
    else:
        c1 = p2 * p4 * p8
        c2 = p2 * p6 * p8
    return img & (b >= 2) & (b <= 6) & (a == 1) & (c1 == 0) & (c2 == 0)


def zhang_suen(mask: np.ndarray) -> np.ndarray:
    """Classic two-subiteration Zhang-Suen thinning, run to convergence."""
    img = np.asarray(mask, dtype=bool).copy()
    while True:
        changed = False
        for first in (True, False):
            kill = _zs_pass(img, first)
            if kill.any():
                img &= ~kill
                changed = True
        if not changed:
            return img


def _is_simple(win: np.ndarray) -> bool:
    """Whether removing the center of a 3x3 window keeps 8-connectivity local."""
    w = win.copy()
    w[1, 1] = False
    if w.sum() == 0:
        return False
    _, n = ndimage.label(w, structure=EIGHT)
    return n == 1


def _break_squares(img: np.ndarray) -> np.ndarray:
    """Remove pixels of any remaining 2x2 block where that keeps connectivity."""
    img = img.copy()
    h, w = img.shape
    while True:
        blocks = img[:-1, :-1] & img[1:, :-1] & img[:-1, 1:] & img[1:, 1:]
        if not blocks.any():
            return img
        removed = False
        for r, c in zip(*np.nonzero(blocks)):
            if not (img[r, c] and img[r + 1, c] and img[r, c + 1] and img[r + 1, c + 1]):
                continue
            for pr, pc in ((r, c), (r, c + 1), (r + 1, c), (r + 1, c + 1)):
                pad = np.pad(img, 1)
                win = pad[pr : pr + 3, pc : pc + 3]
                if _is_simple(win):
                    img[pr, pc] = False
                    removed = True
                    break
        if not removed:
            return img


def skeletonize(mask: np.ndarray) -> np.ndarray:
    """Zhang-Suen skeleton that keeps every input component.

    Two guards on top of the classic iteration: leftover 2x2 blocks are
    broken where a pixel is locally simple, and a component the
    iteration erased entirely (e.g. a 2x2 square) keeps one pixel.
    """
    mask = np.asarray(mask, dtype=bool)
    skel = _break_squares(zhang_suen(mask))
    labels, n = ndimage.label(mask, structure=EIGHT)
    if n:
        kept = np.bincount(labels[skel], minlength=n + 1)
        for lab in np.flatnonzero(kept[1:] == 0) + 1:
            rows, cols = np.nonzero(labels == lab)
            skel[rows[0], cols[0]] = True
    return skel


# ---------------------------------------------------------------------------
# Skeleton graph and path

@dataclass
class SkeletonGraph:
    nodes: List[Pixel]
    adjacency: Dict[Pixel, List[Pixel]]

    @property
    def edges(self) -> set:
        return {tuple(sorted((a, b))) for a, nbs in self.adjacency.items() for b in nbs}

    @property
    def leaves(self) -> List[Pixel]:
        return [p for p in self.nodes if len(self.adjacency[p]) == 1]

    def degree(self, p: Pixel) -> int:
        return len(self.adjacency[p])


def to_graph(skel: np.ndarray) -> SkeletonGraph:
    """8-adjacency graph of skeleton pixels; neighbor lists in N..NW order."""
    skel = np.asarray(skel, dtype=bool)
    rows, cols = np.nonzero(skel)
    if len(rows) == 0:
        raise NoWrinklePath("no wrinkle path: empty skeleton")
    h, w = skel.shape
    nodes = [(int(r), int(c)) for r, c in zip(rows, cols)]
    adjacency: Dict[Pixel, List[Pixel]] = {}
    for r, c in nodes:
        nbs = []
        for dr, dc in NEIGHBOR_ORDER:
            rr, cc = r + dr, c + dc
            if 0 <= rr < h and 0 <= cc < w and skel[rr, cc]:
                nbs.append((rr, cc))
        adjacency[(r, c)] = nbs
    return SkeletonGraph(nodes=nodes, adjacency=adjacency)


def contour_distances(points: Sequence[Pixel], contour: Sequence[Pixel]) -> np.ndarray:
    """Euclidean pixel distance from each point to its nearest contour pixel."""
    tree = cKDTree(np.asarray(contour, dtype=np.float64))
    d, _ = tree.query(np.asarray(points, dtype=np.float64))
    return np.atleast_1d(d)


def select_endpoints(graph: SkeletonGraph, contour: Sequence[Pixel]) -> Tuple[Pixel, Pixel]:
    """Leaf closest to the garment contour and leaf furthest from it."""
    leaves = sorted(graph.leaves)
    if not leaves:
        raise CyclicSkeleton("cyclic skeleton: no leaf node")
    if len(leaves) == 1:
        raise DegeneratePath("degenerate path: single leaf")
    if not contour:
        raise PathPlanningError("empty contour")
    d = contour_distances(leaves, contour)
    # Leaves are sorted, so argmin/argmax return the lexicographically first tie.
    start = leaves[int(np.argmin(d))]
    # The end is picked among the remaining leaves so equal distances still
    # give two distinct tips.
    rest = [i for i in range(len(leaves)) if leaves[i] != start]
    far = d[rest].max()
    end = leaves[next(i for i in rest if d[i] == far)]
    return start, end


def spanning_tree(graph: SkeletonGraph, root: Pixel) -> SkeletonGraph:
    """Depth-first spanning tree of ``root``'s component (N..NW order).

    Opens the cycles of a ring-shaped skeleton while keeping long
    branches, so the usual leaf endpoint rule applies to the result.
    """
    tree: Dict[Pixel, List[Pixel]] = {root: []}
    stack = [(root, iter(graph.adjacency[root]))]
    while stack:
        node, it = stack[-1]
        for nb in it:
            if nb in tree:
                continue
            tree[node].append(nb)
            tree[nb] = [node]
            stack.append((nb, iter(graph.adjacency[nb])))
            break
        else:
            stack.pop()
    nodes = [p for p in graph.nodes if p in tree]
    return SkeletonGraph(nodes=nodes, adjacency={p: sorted(tree[p], key=_order_key(p)) for p in nodes})


def _order_key(center: Pixel):
    rank = {d: i for i, d in enumerate(NEIGHBOR_ORDER)}
    return lambda q: rank[(q[0] - center[0], q[1] - center[1])]


def dfs_path(graph: SkeletonGraph, start: Pixel, end: Pixel) -> List[Pixel]:
    """Simple path found by iterative depth-first search.

    Neighbors are expanded in the fixed N, NE, E, ..., NW order, so the
    result is deterministic.
    """
    if start == end:
        raise DegeneratePath("start equals end")
    if start not in graph.adjacency or end not in graph.adjacency:
        raise PathPlanningError("endpoint not in graph")
    visited = {start}
    stack = [(start, iter(graph.adjacency[start]))]
    while stack:
        node, it = stack[-1]
        for nb in it:
            if nb in visited:
                continue
            visited.add(nb)
            if nb == end:
                return [p for p, _ in stack] + [nb]
            stack.append((nb, iter(graph.adjacency[nb])))
            break
        else:
            stack.pop()
    raise DisconnectedSkeleton("disconnected skeleton: end unreachable from start")


@dataclass
class IroningPath:
    waypoints: np.ndarray  # (N, 3) world meters
    pixels: List[Pixel] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.waypoints)

    @property
    def length(self) -> float:
        if len(self.waypoints) < 2:
            return 0.0
        return float(np.sum(np.linalg.norm(np.diff(self.waypoints, axis=0), axis=1)))


def to_waypoints(path: Sequence[Pixel], grid: ImageGrid, plane: PlaneModel, stride: int = 5) -> IroningPath:
    """Every ``stride``-th path pixel (first and last always) in world frame.

    Waypoint height is the board plane height; vertical motion is left to
    the force controller.
    """
    if stride < 1:
        raise ValueError("stride must be >= 1")
    if len(path) == 0:
        raise PathPlanningError("empty path")
    picks = list(range(0, len(path), stride))
    if picks[-1] != len(path) - 1:
        picks.append(len(path) - 1)
    px = [path[i] for i in picks]
    rows = np.array([p[0] for p in px])
    cols = np.array([p[1] for p in px])
    world = grid.pixel_to_world(rows, cols)
    world[:, 2] = plane.height_at(world[:, 0], world[:, 1])
    return IroningPath(waypoints=world, pixels=px)


def write_path_csv(path: IroningPath, filename: str | os.PathLike) -> None:
    lines = ["index,x,y,z"]
    for i, (x, y, z) in enumerate(path.waypoints):
        lines.append(f"{i},{x:.9f},{y:.9f},{z:.9f}")
    with open(filename, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def read_path_csv(filename: str | os.PathLike) -> IroningPath:
    data = np.loadtxt(filename, delimiter=",", skiprows=1, ndmin=2)
    return IroningPath(waypoints=data[:, 1:4])


# ---------------------------------------------------------------------------
# Stage driver

@dataclass
class PlanResult:
    closed_mask: np.ndarray
    contour: List[Pixel]
    wrinkles: np.ndarray
    region: Optional[np.ndarray] = None
    skeleton: Optional[np.ndarray] = None
    pixel_path: List[Pixel] = field(default_factory=list)
    start: Optional[Pixel] = None
    end: Optional[Pixel] = None
    path: Optional[IroningPath] = None
    skipped: List[str] = field(default_factory=list)
    cycle_broken: bool = False


def _accept(result: PlanResult, region, skel, pixels, start, end, grid, plane, stride):
    result.region = region
    result.skeleton = skel
    result.pixel_path = pixels
    result.start, result.end = start, end
    result.path = to_waypoints(pixels, grid, plane, stride)


def plan_path(
    image: ImageGrid,
    mask: np.ndarray,
    plane: PlaneModel,
    thresholds: ThresholdParams = ThresholdParams(),
    dilate_size: int = 5,
    erode_size: int = 11,
    stride: int = 5,
    min_range: float = 0.0,
    invert: bool = False,
    break_cycles: bool = True,
) -> PlanResult:
    """Closing, contour, thresholding and path extraction for one image.

    Wrinkle regions are tried largest first; a region whose skeleton is
    cyclic or degenerate is skipped. If all are, ``break_cycles`` plans on
    a spanning tree of the largest one instead. ``path`` stays None when
    the garment shows no wrinkle or no region yields a path.
    """
    closed = asymmetric_closing(mask, dilate_size, erode_size)
    if not closed.any():
        raise PathPlanningError("garment mask vanished after closing")
    contour = extract_contour(closed)
    filled = image.filled(closed)
    wrinkles = wrinkle_mask(filled, closed, thresholds, min_range=min_range, invert=invert)
    result = PlanResult(closed_mask=closed, contour=contour, wrinkles=wrinkles)
    regions = regions_by_size(wrinkles)
    for region in regions:
        skel = skeletonize(region)
        graph = to_graph(skel)
        try:
            start, end = select_endpoints(graph, contour)
            pixels = dfs_path(graph, start, end)
        except (CyclicSkeleton, DegeneratePath) as exc:
            result.skipped.append(str(exc))
            log.debug("skipping wrinkle region of %d px: %s", region.sum(), exc)
            continue
        _accept(result, region, skel, pixels, start, end, filled, plane, stride)
        break
    if result.path is None and regions and break_cycles:
        # Every region was a loop: open the largest one at its pixel
        # nearest the contour and plan on the spanning tree.
        region = regions[0]
        skel = skeletonize(region)
        graph = to_graph(skel)
        nodes = sorted(graph.nodes)
        root = nodes[int(np.argmin(contour_distances(nodes, contour)))]
        tree = spanning_tree(graph, root)
        try:
            start, end = select_endpoints(tree, contour)
            pixels = dfs_path(tree, start, end)
        except (CyclicSkeleton, DegeneratePath) as exc:
            result.skipped.append(f"spanning tree: {exc}")
        else:
            result.cycle_broken = True
            _accept(result, region, skel, pixels, start, end, filled, plane, stride)
    return result
