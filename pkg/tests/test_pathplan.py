import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import ndimage

from wildiron.descriptor import ImageGrid
from wildiron.pathplan import (
    CyclicSkeleton,
    DegeneratePath,
    NoWrinklePath,
    PathPlanningError,
    SkeletonGraph,
    ThresholdParams,
    asymmetric_closing,
    contour_distances,
    dfs_path,
    extract_contour,
    largest_region,
    plan_path,
    read_path_csv,
    regions_by_size,
    select_endpoints,
    skeletonize,
    spanning_tree,
    to_graph,
    to_waypoints,
    wrinkle_mask,
    write_path_csv,
    zhang_suen,
)
from wildiron.segmentation import PlaneModel


def random_mask(seed, shape=(48, 48), sigma=2.5, level=0.55):
    rng = np.random.default_rng(seed)
    field = ndimage.gaussian_filter(rng.random(shape), sigma)
    field = (field - field.min()) / (np.ptp(field) or 1.0)
    return field > level


def has_2x2_block(img):
    return bool(np.any(img[:-1, :-1] & img[1:, :-1] & img[:-1, 1:] & img[1:, 1:]))


def n_components(mask):
    return ndimage.label(mask, structure=np.ones((3, 3)))[1]


# -- closing -------------------------------------------------------------------

def test_closing_square_shrinks_by_three():
    m = np.zeros((80, 80), bool)
    m[10:61, 10:61] = True
    out = asymmetric_closing(m, 5, 11)
    want = np.zeros_like(m)
    want[13:58, 13:58] = True
    np.testing.assert_array_equal(out, want)


def test_closing_unit_elements_identity():
    m = random_mask(0)
    np.testing.assert_array_equal(asymmetric_closing(m, 1, 1), m)


def test_closing_fills_one_pixel_hole():
    m = np.zeros((40, 40), bool)
    m[5:35, 5:35] = True
    m[20, 20] = False
    assert asymmetric_closing(m, 5, 5)[20, 20]


@pytest.mark.parametrize("d, e", [(4, 11), (5, 10), (0, 11), (-1, 3), (7, 5)])
def test_closing_bad_sizes(d, e):
    with pytest.raises(ValueError):
        asymmetric_closing(np.ones((5, 5), bool), d, e)


def test_closing_inside_dilation():
    m = random_mask(1)
    dil = ndimage.binary_dilation(m, np.ones((5, 5), bool))
    out = asymmetric_closing(m, 5, 11)
    assert not np.any(out & ~dil)


# -- contour -------------------------------------------------------------------

def boundary_predicate(mask):
    h, w = mask.shape
    out = set()
    for r in range(h):
        for c in range(w):
            if not mask[r, c]:
                continue
            for dr, dc in ((-1, 0), (1, 0), (0, -1), (0, 1)):
                rr, cc = r + dr, c + dc
                if not (0 <= rr < h and 0 <= cc < w) or not mask[rr, cc]:
                    out.add((r, c))
                    break
    return out


def test_contour_3x3():
    m = np.zeros((7, 7), bool)
    m[2:5, 2:5] = True
    cont = extract_contour(m)
    assert len(cont) == 8 and (3, 3) not in cont


def test_contour_single_pixel():
    m = np.zeros((5, 5), bool)
    m[2, 2] = True
    assert extract_contour(m) == [(2, 2)]


def test_contour_empty_rejected():
    with pytest.raises(PathPlanningError):
        extract_contour(np.zeros((4, 4), bool))


@pytest.mark.parametrize("seed", range(8))
def test_contour_matches_predicate(seed):
    m = largest_region(random_mask(seed))
    cont = extract_contour(m)
    assert set(cont) == boundary_predicate(m)
    assert len(cont) == len(set(cont))


def test_outer_trace_is_8_connected():
    m = np.zeros((30, 30), bool)
    m[5:25, 8:20] = True
    m[10:15, 3:8] = True
    cont = extract_contour(m)
    steps = np.abs(np.diff(np.asarray(cont), axis=0)).max(axis=1)
    assert np.all(steps == 1)


# -- thresholding --------------------------------------------------------------

def test_flat_garment_gives_empty_mask():
    img = np.ones((10, 10))
    assert not wrinkle_mask(img, np.ones((10, 10), bool)).any()


def test_threshold_examples():
    img = np.array([[0.0, 0.3, 0.7, 1.0]])
    m = wrinkle_mask(img, np.ones_like(img, bool), ThresholdParams(0.4, 0.95))
    np.testing.assert_array_equal(m, [[False, False, True, False]])


def test_threshold_strict_at_bounds():
    img = np.array([[0.0, 0.4, 0.95, 1.0]])
    m = wrinkle_mask(img, np.ones_like(img, bool), ThresholdParams(0.4, 0.95))
    assert not m.any()


def test_threshold_outside_mask_is_zero():
    img = np.array([[0.0, 0.7, 1.0, 0.7]])
    mask = np.array([[True, True, True, False]])
    np.testing.assert_array_equal(wrinkle_mask(img, mask), [[False, True, False, False]])


def test_min_range_floor():
    img = np.array([[0.99, 0.995, 1.0]])
    mask = np.ones_like(img, bool)
    assert wrinkle_mask(img, mask).any()
    assert not wrinkle_mask(img, mask, min_range=0.02).any()


def test_threshold_dimension_mismatch():
    with pytest.raises(ValueError):
        wrinkle_mask(np.ones((3, 3)), np.ones((3, 4), bool))


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000), lo=st.floats(0, 0.5), h1=st.floats(0.5, 1.0), h2=st.floats(0.5, 1.0))
def test_threshold_monotone(seed, lo, h1, h2):
    img = np.random.default_rng(seed).random((12, 12))
    mask = np.ones_like(img, bool)
    a, b = sorted((h1, h2))
    if not lo < a:
        return
    narrow = wrinkle_mask(img, mask, ThresholdParams(lo, a))
    wide = wrinkle_mask(img, mask, ThresholdParams(lo, b))
    assert not np.any(narrow & ~wide)
    higher_lo = wrinkle_mask(img, mask, ThresholdParams(min(lo + 0.1, a - 1e-9), a))
    assert not np.any(higher_lo & ~narrow)


def test_threshold_params_validated():
    with pytest.raises(ValueError):
        ThresholdParams(0.9, 0.4)


# -- regions -------------------------------------------------------------------

def test_largest_of_two_blobs():
    m = np.zeros((30, 40), bool)
    m[2:12, 2:12] = True  # 100 px
    m[20:25, 20:28] = True  # 40 px
    big = largest_region(m)
    assert big.sum() == 100 and big[5, 5]


def test_largest_region_empty():
    assert not largest_region(np.zeros((5, 5), bool)).any()


def union_find_areas(mask):
    pix = list(zip(*np.nonzero(mask)))
    index = {p: i for i, p in enumerate(pix)}
    parent = list(range(len(pix)))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for (r, c), i in index.items():
        for dr in (-1, 0, 1):
            for dc in (-1, 0, 1):
                j = index.get((r + dr, c + dc))
                if j is not None:
                    parent[find(i)] = find(j)
    roots = [find(i) for i in range(len(pix))]
    return sorted(np.bincount(np.unique(roots, return_inverse=True)[1]).tolist(), reverse=True)


@pytest.mark.parametrize("seed", range(5))
def test_region_areas_match_union_find(seed):
    m = random_mask(seed, level=0.6)
    areas = [int(r.sum()) for r in regions_by_size(m)]
    assert areas == union_find_areas(m)


# -- thinning ------------------------------------------------------------------

def test_bar_thins_to_line():
    m = np.zeros((11, 40), bool)
    m[4:7, 5:35] = True
    sk = skeletonize(m)
    rows, cols = np.nonzero(sk)
    assert len(set(rows.tolist())) == 1
    assert 24 <= len(cols) <= 30


def test_single_pixel_fixed_point():
    m = np.zeros((5, 5), bool)
    m[2, 2] = True
    np.testing.assert_array_equal(skeletonize(m), m)


@pytest.mark.parametrize("seed", range(50))
def test_thin_idempotent_connected(seed):
    m = random_mask(seed)
    sk = skeletonize(m)
    assert not has_2x2_block(sk)
    np.testing.assert_array_equal(skeletonize(sk), sk)
    assert not np.any(sk & ~m)
    assert n_components(sk) == n_components(m)


def test_plain_zhang_suen_subset():
    m = random_mask(3)
    assert not np.any(zhang_suen(m) & ~m)


# -- graph ---------------------------------------------------------------------

def line_skel(n=10):
    sk = np.zeros((5, n + 4), bool)
    sk[2, 2 : 2 + n] = True
    return sk


def test_line_graph():
    g = to_graph(line_skel(10))
    assert len(g.nodes) == 10 and len(g.edges) == 9 and len(g.leaves) == 2


def test_t_shape_graph():
    sk = np.zeros((9, 9), bool)
    sk[2, 2:7] = True
    sk[3:7, 4] = True
    g = to_graph(sk)
    assert sorted(g.leaves) == [(2, 2), (2, 6), (6, 4)]


@pytest.mark.parametrize("seed", range(5))
def test_edges_match_all_pairs(seed):
    sk = skeletonize(random_mask(seed))
    g = to_graph(sk)
    pts = g.nodes
    brute = {
        tuple(sorted((a, b)))
        for i, a in enumerate(pts)
        for b in pts[i + 1 :]
        if max(abs(a[0] - b[0]), abs(a[1] - b[1])) == 1
    }
    assert g.edges == brute


def test_empty_skeleton():
    with pytest.raises(NoWrinklePath):
        to_graph(np.zeros((3, 3), bool))


# -- endpoints and DFS ---------------------------------------------------------

def test_endpoints_near_and_far():
    sk = np.zeros((60, 60), bool)
    sk[10, 5:41] = True  # tips at columns 5 and 40
    contour = [(r, 0) for r in range(60)]
    start, end = select_endpoints(to_graph(sk), contour)
    assert start == (10, 5) and end == (10, 40)


def test_endpoint_tie_lexicographic():
    sk = np.zeros((20, 20), bool)
    sk[5, 5:15] = True
    contour = [(5, 0), (5, 19)]  # both tips 5 px away
    start, end = select_endpoints(to_graph(sk), contour)
    assert start == (5, 5) and end == (5, 14)


def test_endpoint_distances_match_bruteforce():
    rng = np.random.default_rng(0)
    pts = [tuple(p) for p in rng.integers(0, 50, (30, 2)).tolist()]
    contour = [tuple(p) for p in rng.integers(0, 50, (80, 2)).tolist()]
    d = contour_distances(pts, contour)
    brute = [min(np.hypot(p[0] - q[0], p[1] - q[1]) for q in contour) for p in pts]
    np.testing.assert_allclose(d, brute)


def ring():
    sk = np.zeros((12, 12), bool)
    sk[2, 2:9] = sk[8, 2:9] = True
    sk[2:9, 2] = sk[2:9, 8] = True
    return sk


def test_pure_cycle_rejected():
    with pytest.raises(CyclicSkeleton):
        select_endpoints(to_graph(ring()), [(0, 0)])


def test_single_leaf_rejected():
    sk = ring()
    sk[8:11, 5] = True  # one spur
    with pytest.raises(DegeneratePath):
        select_endpoints(to_graph(sk), [(11, 5)])


def validate_path(graph: SkeletonGraph, path, start, end):
    assert path[0] == start and path[-1] == end
    assert len(set(path)) == len(path)
    for a, b in zip(path, path[1:]):
        assert b in graph.adjacency[a]


def test_dfs_straight_line():
    g = to_graph(line_skel(10))
    path = dfs_path(g, (2, 2), (2, 11))
    assert path == [(2, c) for c in range(2, 12)]


def test_dfs_y_shape_skips_third_branch():
    sk = np.zeros((15, 15), bool)
    for k in range(5):
        sk[2 + k, 2 + k] = True  # left arm
        sk[2 + k, 12 - k] = True  # right arm
    sk[7:13, 7] = True  # stem
    g = to_graph(sk)
    path = dfs_path(g, (2, 2), (2, 12))
    validate_path(g, path, (2, 2), (2, 12))
    assert (12, 7) not in path


@pytest.mark.parametrize("seed", range(10))
def test_dfs_path_valid_on_random_skeletons(seed):
    sk = skeletonize(largest_region(random_mask(seed)))
    g = to_graph(sk)
    if len(g.leaves) < 2:
        return
    leaves = sorted(g.leaves)
    path = dfs_path(g, leaves[0], leaves[-1])
    validate_path(g, path, leaves[0], leaves[-1])


def test_spanning_tree_opens_ring():
    g = to_graph(ring())
    root = min(g.nodes)
    t = spanning_tree(g, root)
    assert len(t.nodes) == len(g.nodes)
    assert len(t.edges) == len(t.nodes) - 1
    assert t.edges <= g.edges
    assert len(t.leaves) >= 2


# -- waypoints -----------------------------------------------------------------

def simple_grid(h=20, w=20, res=0.002):
    return ImageGrid(
        origin=np.array([0.1, -0.2, 0.8]),
        u_axis=np.array([1.0, 0, 0]),
        v_axis=np.array([0, 1.0, 0]),
        resolution=res,
        values=np.zeros((h, w)),
        depth=np.zeros((h, w)),
    )


PLANE = PlaneModel(np.array([0, 0, 1.0]), -0.8, np.zeros(0, int))


def test_waypoint_stride_indices():
    path = [(0, c) for c in range(10)]
    ip = to_waypoints(path, simple_grid(), PLANE, stride=3)
    assert ip.pixels == [(0, 0), (0, 3), (0, 6), (0, 9)]
    np.testing.assert_allclose(ip.waypoints[0], [0.1, -0.2, 0.8])
    np.testing.assert_allclose(ip.waypoints[-1], [0.1 + 9 * 0.002, -0.2, 0.8])


def test_waypoint_spacing_and_last_kept():
    path = [(0, c) for c in range(12)]
    ip = to_waypoints(path, simple_grid(), PLANE, stride=5)
    assert ip.pixels[-1] == (0, 11)
    gaps = np.linalg.norm(np.diff(ip.waypoints, axis=0), axis=1)
    assert np.all(gaps <= 5 * 0.002 + 1e-12)


def test_waypoints_empty_path():
    with pytest.raises(Exception):
        to_waypoints([], simple_grid(), PLANE)


def test_path_csv_round_trip(tmp_path):
    ip = to_waypoints([(r, r) for r in range(15)], simple_grid(), PLANE, stride=2)
    write_path_csv(ip, tmp_path / "p.csv")
    assert (tmp_path / "p.csv").read_text().splitlines()[0] == "index,x,y,z"
    np.testing.assert_allclose(read_path_csv(tmp_path / "p.csv").waypoints, ip.waypoints, atol=1e-9)


# -- full stage ----------------------------------------------------------------

def test_plan_path_deterministic(small_perception):
    d = small_perception.description
    plane = small_perception.prepared.segmentation.plane
    a = plan_path(d.grid, d.mask, plane, min_range=0.02)
    b = plan_path(d.grid, d.mask, plane, min_range=0.02)
    assert a.pixel_path == b.pixel_path
    np.testing.assert_array_equal(a.path.waypoints, b.path.waypoints)
    assert len(a.path) >= 2


def test_plan_path_flat_image_has_no_path():
    grid = simple_grid()
    grid = grid.with_values(np.ones((20, 20)))
    mask = np.zeros((20, 20), bool)
    mask[2:18, 2:18] = True
    res = plan_path(grid, mask, PLANE, dilate_size=1, erode_size=1)
    assert res.path is None and not res.wrinkles.any()
