"""End-to-end acceptance checks, one printed PASS/FAIL line per criterion.

The lines are collected in ``ACCEPTANCE`` and echoed in the terminal
summary by ``conftest.py``, so they show up without ``-s``.
"""

import time

import numpy as np
import pytest
from scipy import ndimage

from wildiron.cli import main
from wildiron.cloud import PointCloud, build_index, estimate_normals
from wildiron.config import PipelineConfig
from wildiron.controlsim import (
    EndEffectorState,
    control_step,
    descend_until_contact,
    follow_path,
    read_force,
)
from wildiron.descriptor import compute_wild
from wildiron.evaluation import benchmark, jaccard, wrinkleness
from wildiron.pathplan import IroningPath, skeletonize
from wildiron.pipeline import perceive, run_ironing_loop
from wildiron.scene import ClothHeightField, default_suite, generate_scene, loop_suite

ACCEPTANCE = []


def report(name, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'} {name}: {detail}"
    ACCEPTANCE.append(line)
    print(line)
    assert ok, line


@pytest.fixture(scope="module")
def bench():
    t0 = time.perf_counter()
    rep = benchmark(default_suite(), PipelineConfig())
    return rep, time.perf_counter() - t0


# -- descriptor ----------------------------------------------------------------

def wild_all_pairs(xyz, normals, valid, r):
    """O(n^2) reference from the full distance matrix."""
    d = np.sqrt(((xyz[:, None, :] - xyz[None, :, :]) ** 2).sum(-1))
    adj = (d <= r) & valid[None, :] & valid[:, None]
    np.fill_diagonal(adj, False)
    dots = normals @ normals.T
    k = adj.sum(1)
    out = np.full(len(xyz), np.nan)
    ok = valid & (k > 0)
    out[ok] = np.clip((dots * adj).sum(1)[ok] / k[ok], 0.0, 1.0)
    return out


def test_wild_bounds_and_oracle():
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    worst, n_vals, in_bounds = 0.0, 0, True
    for _ in range(100):
        n = int(rng.integers(20, 2001))
        xyz = rng.uniform(0, 0.12, (n, 3)) * [1, 1, 0.3]
        cloud = PointCloud(xyz, np.zeros_like(xyz))
        idx = build_index(cloud)
        cloud = estimate_normals(cloud, 0.02, index=idx)
        got = compute_wild(cloud, idx, 0.03).values
        want = wild_all_pairs(cloud.xyz, cloud.normals, cloud.normal_valid, 0.03)
        defined = ~np.isnan(want)
        if not np.array_equal(np.isnan(got), ~defined):
            worst = np.inf
            break
        v = got[defined]
        in_bounds &= bool(np.all((v >= 0) & (v <= 1)))
        n_vals += len(v)
        worst = max(worst, float(np.max(np.abs(v - want[defined]), initial=0.0)))
    dt = time.perf_counter() - t0
    ok = in_bounds and worst <= 1e-12 and dt < 60
    report("WiLD bounds", ok, f"{n_vals} values in [0,1]={in_bounds}, max |indexed - brute| = {worst:.1e}, {dt:.1f} s")


def test_wild_flat_plane():
    rng = np.random.default_rng(5)
    xyz = np.c_[rng.uniform(0, 0.2, (20000, 2)), np.zeros(20000)]
    cloud = PointCloud(xyz, np.zeros_like(xyz))
    idx = build_index(cloud)
    cloud = estimate_normals(cloud, 0.02, index=idx)
    v = compute_wild(cloud, idx, 0.03).values
    interior = np.all((xyz[:, :2] > 0.03) & (xyz[:, :2] < 0.17), axis=1)
    low = float(np.nanmin(v[interior]))
    report("WiLD flat plane", low >= 0.99 - 0.01, f"interior min WiLD {low:.6f} (need >= 0.99, tol 0.01)")


def test_descriptor_ordering(bench):
    rep, dt = bench
    w, r = rep.mean_jsi("wild"), rep.mean_jsi("rsd")
    ok = w > r and w >= 0.50 and dt < 300
    report(
        "Descriptor ordering",
        ok,
        f"mean JSI WiLD {w:.4f} vs RSD {r:.4f} (WiLD > RSD: {w > r}, WiLD >= 0.50: {w >= 0.50}), "
        f"{len(rep.failed_trials())} failed trials, {dt:.0f} s",
    )


def test_timing_ordering(bench):
    rep, _ = bench
    ok_trials = rep.ok_trials()
    faster = [t.time_s["wild"] < t.time_s["rsd"] for t in ok_trials]
    ok = len(ok_trials) == len(rep.trials) and all(faster)
    ratio = max(t.time_s["wild"] / t.time_s["rsd"] for t in ok_trials)
    report("Timing ordering", ok, f"WiLD faster on {sum(faster)}/{len(rep.trials)} scenes, worst WiLD/RSD ratio {ratio:.2f}")


def test_segmentation_accuracy(bench):
    rep, _ = bench
    recalls = [t.segmentation_recall for t in rep.trials]
    ok = all(r >= 0.99 for r in recalls)
    report("Segmentation accuracy", ok, f"min garment recall {min(recalls):.4f} over {len(recalls)} scenes")


# -- skeleton and path ---------------------------------------------------------

def random_mask(seed):
    rng = np.random.default_rng(seed)
    f = ndimage.gaussian_filter(rng.random((64, 64)), 3.0)
    return f > np.quantile(f, 0.45)


def crest_fraction(spec, cfg, max_px=3.0):
    """Share of path length whose both ends lie within ``max_px`` of the crest."""
    d = perceive(generate_scene(spec).cloud, cfg).description
    pix = d.plan.pixel_path
    if len(pix) < 2:
        return 0.0
    rows, cols = np.array(pix).T
    world = d.grid.pixel_to_world(rows, cols)
    dist = np.min(
        [np.linalg.norm(w.offset(world[:, 0], world[:, 1]), axis=-1) for w in spec.wrinkles], axis=0
    ) / d.grid.resolution
    seg = np.linalg.norm(np.diff(world[:, :2], axis=0), axis=1)
    near = (dist[:-1] <= max_px) & (dist[1:] <= max_px)
    return float(seg[near].sum() / seg.sum())


def test_skeleton_and_path():
    thin = idem = 0
    for seed in range(50):
        sk = skeletonize(random_mask(seed))
        thin += not np.any(sk[:-1, :-1] & sk[1:, :-1] & sk[:-1, 1:] & sk[1:, 1:])
        idem += np.array_equal(skeletonize(sk), sk)
    cfg = PipelineConfig()
    cfg.descriptor.timing_repeats = 1
    singles = [s for s in default_suite() if len(s.wrinkles) == 1]
    fracs = [crest_fraction(s, cfg) for s in singles]
    ok = thin == 50 and idem == 50 and all(f >= 0.90 for f in fracs)
    report(
        "Skeleton/path",
        ok,
        f"thin {thin}/50, idempotent {idem}/50, path within 3 px of crest: "
        + ", ".join(f"{100 * f:.0f}%" for f in fracs)
        + " (need >= 90% each)",
    )


# -- control -------------------------------------------------------------------

def test_control_law():
    cfg = PipelineConfig()
    params, model = cfg.controller(), cfg.contact_model()
    cloth = ClothHeightField((-0.2, -0.2), 0.005, np.zeros((81, 81)), model.board_height, 0.003, (0.9, 0.5, 0.1))
    top = model.board_height + 0.003
    contact, _ = descend_until_contact(EndEffectorState([-0.15, 0.0, top + 0.05]), cloth, model, params)
    f_desc = read_force(contact, cloth, model).fz
    x = np.linspace(-0.15, 0.15, 61)
    path = IroningPath(np.c_[x, np.zeros_like(x), np.full_like(x, model.board_height)])
    _, log = follow_path(path, cloth, model, params, contact)
    mag_err = float(np.max(np.abs(np.array(log.planar_norms) - params.tangential_step)))
    # Independent re-evaluation of the control law on the logged states.
    pos = np.vstack([contact.position, log.position_array()[:-1]])
    re = [np.hypot(*control_step(p, path.waypoints[i], params, read_force(EndEffectorState(p), cloth, model), 0.0)[:2])
          for p, i in zip(pos, log.waypoint_index)]
    mag_err = max(mag_err, float(np.max(np.abs(np.array(re) - params.tangential_step))))
    fz = log.force_array()[:, 2]
    settle = float(np.max(np.abs(fz[100:] - params.desired_fz)))
    ok = mag_err <= 1e-9 and settle < 0.05 * abs(params.desired_fz) and abs(f_desc) >= 200
    report(
        "Control law",
        ok,
        f"planar |c| error {mag_err:.1e}, max |fz - fdz| after 100 steps {settle:.2f} IU (< 10), descent |fz| {abs(f_desc):.0f} IU",
    )


def test_closed_loop():
    cfg = PipelineConfig()
    cfg.descriptor.timing_repeats = 1
    cfg.control.flatten = 0.9
    t0 = time.perf_counter()
    rows, ok = [], True
    for spec in loop_suite(cfg.scene_base()):
        rep = run_ironing_loop(spec, cfg, max_iterations=3)
        curve = rep.wrinkleness_curve
        dec = all(b < a for a, b in zip(curve, curve[1:]))
        good = rep.converged and curve[-1] == 0.0 and rep.iterations <= 3 and dec
        ok &= good
        rows.append(f"seed {spec.rng_seed}: {rep.iterations} it")
    dt = time.perf_counter() - t0
    ok &= dt < 600
    report("Closed loop", ok, "; ".join(rows) + f", {dt:.0f} s")


# -- metrics -------------------------------------------------------------------

def test_metric_oracles():
    def m(idx, shape=(20, 20)):
        a = np.zeros(shape, bool)
        a.flat[list(idx)] = True
        return a

    jac_cases = [
        (m(range(100)), m(range(50, 150)), 50 / 150),
        (m(range(10)), m(range(10)), 1.0),
        (m(range(10)), m(range(10, 20)), 0.0),
        (m([]), m([]), 1.0),
        (m([0, 1, 2, 3], (2, 2)), m([0], (2, 2)), 0.25),
    ]
    wr_cases = [
        (m([]), m(range(50)), 0.0),
        (m(range(50)), m(range(50)), 1.0),
        (m(range(25)), m(range(200)), 0.125),
        (m([0], (2, 2)), m(range(3), (2, 2)), 1 / 3),
        (m(range(7)), m(range(100)), 0.07),
    ]
    hits = sum(abs(jaccard(a, b) - v) < 1e-12 for a, b, v in jac_cases)
    hits += sum(abs(wrinkleness(w, g) - v) < 1e-12 for w, g, v in wr_cases)
    rng = np.random.default_rng(0)
    props = 0
    for _ in range(200):
        a, b = rng.random((2, 12, 12)) < rng.random()
        props += jaccard(a, b) == jaccard(b, a) and jaccard(a, a) == 1.0
    report("Metric oracles", hits == 10 and props == 200, f"{hits}/10 hand counts, symmetry and self-JSI on {props}/200 random pairs")


# -- determinism ---------------------------------------------------------------

def value_files(out):
    """Every non-image output; timing columns stripped."""
    files = {}
    for f in sorted(out.iterdir()):
        if f.suffix == ".png" or f.name in ("bench.csv", "summary.txt"):
            continue
        text = f.read_bytes()
        if f.name == "report.csv":
            text = b"\n".join(b",".join(l.split(b",")[:-1]) for l in text.splitlines())
        files[f.name] = text
    return files


def test_determinism(tmp_path):
    scene = tmp_path / "scene"
    runs = {
        "synth": ["synth", "--seed", "4"],
        "perceive": ["perceive", str(scene / "cloud.xyz"), "--descriptor", "both"],
        "iron": ["iron", "--seed", "4", "--max-iterations", "3", "--set", "descriptor.timing_repeats=1"],
        "bench": ["bench", "--scenes", "2", "--set", "descriptor.timing_repeats=1"],
    }
    assert main(["synth", "--seed", "4", "--out", str(scene)]) == 0
    same = []
    for name, args in runs.items():
        outs = []
        for k in range(2):
            out = tmp_path / f"{name}_{k}"
            main(args + ["--out", str(out)])
            outs.append(value_files(out))
        same.append((name, outs[0] == outs[1] and len(outs[0]) > 0))
    ok = all(s for _, s in same)
    report("Determinism", ok, ", ".join(f"{n} {'identical' if s else 'DIFFERS'}" for n, s in same))
