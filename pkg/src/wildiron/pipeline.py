"""Perception pipeline and the closed perceive / iron loop."""

from __future__ import annotations

import logging
import os
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from .cloud import PointCloud, SpatialIndex, build_index, estimate_normals
from .config import PipelineConfig
from .controlsim import TrackingFailure, TrajectoryLog, apply_ironing_effect, iron_along
from .descriptor import DescriptorField, ImageGrid, compute_rsd, compute_wild, project_to_grid
from .evaluation import wrinkleness
from .pathplan import PlanResult, plan_path
from .scene import ClothHeightField, SceneSpec, build_cloth, render_cloud
from .segmentation import SegmentationResult, segment_garment

log = logging.getLogger(__name__)


class StageError(RuntimeError):
    """A pipeline stage failed; ``stage`` names it."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"{stage}: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass
class PreparedGarment:
    segmentation: SegmentationResult
    garment: PointCloud  # with normals
    index: SpatialIndex
    timings: Dict[str, float] = field(default_factory=dict)


@dataclass
class Description:
    field: DescriptorField
    grid: ImageGrid
    mask: np.ndarray
    plan: PlanResult
    descriptor_time: float
    wrinkleness: float


@dataclass
class Perception:
    prepared: PreparedGarment
    description: Description
    timings: Dict[str, float]

    @property
    def plan(self) -> PlanResult:
        return self.description.plan

    @property
    def wrinkleness(self) -> float:
        return self.description.wrinkleness


def _stage(name, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except StageError:
        raise
    except Exception as exc:
        raise StageError(name, exc) from exc


def prepare_garment(cloud: PointCloud, cfg: PipelineConfig) -> PreparedGarment:
    """Segmentation, spatial index and normals of the garment points."""
    s = cfg.segmentation
    t0 = time.perf_counter()
    seg = _stage(
        "segmentation",
        segment_garment,
        cloud,
        ransac_threshold=s.ransac_threshold,
        z_angle_tol=s.z_angle_tol,
        ransac_iterations=s.ransac_iterations,
        kmeans_max_iters=s.kmeans_max_iters,
        kmeans_tol=s.kmeans_tol,
        cluster_tol=s.cluster_tol,
        min_size=s.min_size,
        seed=cfg.seed,
    )
    t1 = time.perf_counter()
    garment = seg.garment(cloud)
    index = build_index(garment)
    garment = _stage("normals", estimate_normals, garment, cfg.descriptor.normal_radius, index=index)
    t2 = time.perf_counter()
    return PreparedGarment(seg, garment, index, {"segmentation": t1 - t0, "normals": t2 - t1})


def compute_descriptor(prep: PreparedGarment, cfg: PipelineConfig, name: str) -> DescriptorField:
    d = cfg.descriptor
    if name == "wild":
        return compute_wild(prep.garment, prep.index, d.wild_radius)
    if name == "rsd":
        return compute_rsd(prep.garment, prep.index, d.rsd_radius, d.rsd_max_radius)
    raise ValueError(f"unknown descriptor {name!r}")


def describe(prep: PreparedGarment, cfg: PipelineConfig, name: str = "wild") -> Description:
    """Descriptor (timed, best of ``timing_repeats``), projection and path."""
    best = np.inf
    fld = None
    for _ in range(cfg.descriptor.timing_repeats):
        t0 = time.perf_counter()
        fld = _stage("descriptor", compute_descriptor, prep, cfg, name)
        best = min(best, time.perf_counter() - t0)
    plane = prep.segmentation.plane
    grid, mask = _stage("projection", project_to_grid, prep.garment, fld, plane, cfg.descriptor.resolution)
    p = cfg.pathplan
    # Both descriptors are small where curved, so one min-max scale serves both.
    plan = _stage(
        "pathplan",
        plan_path,
        grid,
        mask,
        plane,
        cfg.thresholds(),
        dilate_size=p.dilate_size,
        erode_size=p.erode_size,
        stride=p.stride,
        min_range=p.min_range if name == "wild" else p.rsd_min_range,
        break_cycles=p.break_cycles,
    )
    w = wrinkleness(plan.wrinkles, plan.closed_mask)
    return Description(fld, grid, mask, plan, best, w)


def perceive(cloud: PointCloud, cfg: PipelineConfig, descriptor: str = "wild") -> Perception:
    t0 = time.perf_counter()
    prep = prepare_garment(cloud, cfg)
    desc = describe(prep, cfg, descriptor)
    timings = dict(prep.timings)
    timings["descriptor"] = desc.descriptor_time
    timings["total"] = time.perf_counter() - t0
    return Perception(prep, desc, timings)


# ---------------------------------------------------------------------------
# Closed loop

REPORT_HEADER = "iteration,wrinkleness,path_length,steps,wallclock_s"


@dataclass
class IterationRecord:
    iteration: int
    wrinkleness: float
    path_length: float
    steps: int
    wallclock_s: float


@dataclass
class LoopReport:
    records: List[IterationRecord] = field(default_factory=list)
    logs: List[TrajectoryLog] = field(default_factory=list)
    perceptions: List[Perception] = field(default_factory=list)
    status: str = "running"  # converged | not_converged | no_path | tracking_failure
    message: str = ""
    cloth: Optional[ClothHeightField] = None

    @property
    def iterations(self) -> int:
        """Number of ironing passes executed."""
        return len(self.logs)

    @property
    def converged(self) -> bool:
        return self.status == "converged"

    @property
    def wrinkleness_curve(self) -> List[float]:
        return [r.wrinkleness for r in self.records]

    def rows(self, with_time: bool = True) -> List[str]:
        header = REPORT_HEADER if with_time else REPORT_HEADER.rsplit(",", 1)[0]
        out = [header]
        for r in self.records:
            row = f"{r.iteration},{r.wrinkleness:.6f},{r.path_length:.6f},{r.steps}"
            out.append(row + (f",{r.wallclock_s:.6f}" if with_time else ""))
        return out

    def write_csv(self, path: str | os.PathLike, with_time: bool = True) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(self.rows(with_time)) + "\n")


def run_ironing_loop(
    spec: SceneSpec,
    cfg: PipelineConfig,
    max_iterations: Optional[int] = None,
    descriptor: str = "wild",
    keep_perceptions: bool = False,
    cloth: Optional[ClothHeightField] = None,
) -> LoopReport:
    """Perceive, iron along the path, flatten, repeat until nothing is left.

    Record ``k`` holds the wrinkleness seen after ``k`` passes, the length
    of the path planned from it and the steps of the pass that followed
    (0 for the final record). Every perception re-renders the cloth with
    a fresh, seed-derived sampling. ``cloth`` overrides the height field
    built from ``spec``.
    """
    if max_iterations is None:
        max_iterations = cfg.control.max_iterations
    spec.validate()
    c = cfg.control
    cloth = build_cloth(spec) if cloth is None else cloth.copy()
    model = cfg.contact_model()
    params = cfg.controller()
    report = LoopReport()
    k = 0
    while True:
        t0 = time.perf_counter()
        rng = np.random.default_rng([spec.rng_seed, k])
        cloud, _ = render_cloud(cloth, spec, rng)
        per = perceive(cloud, cfg, descriptor)
        if keep_perceptions:
            report.perceptions.append(per)
        rec = IterationRecord(k, per.wrinkleness, 0.0, 0, 0.0)
        report.records.append(rec)
        if per.wrinkleness == 0.0:
            report.status = "converged"
            rec.wallclock_s = time.perf_counter() - t0
            break
        if k >= max_iterations:
            report.status = "not_converged"
            report.message = f"wrinkleness {per.wrinkleness:.4f} after {k} iterations"
            rec.wallclock_s = time.perf_counter() - t0
            break
        path = per.plan.path
        if path is None:
            report.status = "no_path"
            report.message = "wrinkles detected but no region gave an acyclic path"
            rec.wallclock_s = time.perf_counter() - t0
            break
        rec.path_length = path.length
        try:
            ip = iron_along(path, cloth, model, params, c.approach_height)
        except TrackingFailure as exc:
            report.logs.append(exc.log)
            report.status = "tracking_failure"
            report.message = str(exc)
            rec.steps = len(exc.log)
            rec.wallclock_s = time.perf_counter() - t0
            break
        report.logs.append(ip.log)
        rec.steps = len(ip.log)
        contacts = np.vstack([ip.contact_state.position[None, :], ip.log.contact_positions()])
        cloth = apply_ironing_effect(cloth, contacts, c.iron_halfwidth, c.flatten)
        rec.wallclock_s = time.perf_counter() - t0
        k += 1
        log.info("iteration %d: wrinkleness %.4f, path %.3f m, %d steps", k, rec.wrinkleness, rec.path_length, rec.steps)
    report.cloth = cloth
    return report
