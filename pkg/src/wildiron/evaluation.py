"""Metrics (wrinkleness, Jaccard) and the WiLD vs RSD benchmark harness."""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

log = logging.getLogger(__name__)

DESCRIPTORS = ("wild", "rsd")


def jaccard(a: np.ndarray, b: np.ndarray) -> float:
    """|A & B| / |A | B|; two empty masks score 1.0."""
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    if a.shape != b.shape:
        raise ValueError(f"mask dimensions differ: {a.shape} vs {b.shape}")
    union = int(np.count_nonzero(a | b))
    if union == 0:
        return 1.0
    return int(np.count_nonzero(a & b)) / union


def wrinkleness(wrinkle: np.ndarray, garment: np.ndarray) -> float:
    """Fraction of garment pixels that are wrinkled."""
    wrinkle = np.asarray(wrinkle, dtype=bool)
    garment = np.asarray(garment, dtype=bool)
    if wrinkle.shape != garment.shape:
        raise ValueError(f"mask dimensions differ: {wrinkle.shape} vs {garment.shape}")
    n = int(np.count_nonzero(garment))
    if n == 0:
        raise ValueError("empty garment mask")
    if np.any(wrinkle & ~garment):
        raise ValueError("wrinkle mask is not a subset of the garment mask")
    return int(np.count_nonzero(wrinkle)) / n


# ---------------------------------------------------------------------------
# Benchmark

@dataclass
class TrialResult:
    trial: int
    seed: int
    n_wrinkles: int
    jsi: Dict[str, float] = field(default_factory=dict)
    time_s: Dict[str, float] = field(default_factory=dict)
    segmentation_recall: float = float("nan")
    error: Optional[str] = None

    @property
    def failed(self) -> bool:
        return self.error is not None


@dataclass
class EvalReport:
    trials: List[TrialResult]
    descriptors: Sequence[str] = DESCRIPTORS

    def ok_trials(self) -> List[TrialResult]:
        return [t for t in self.trials if not t.failed]

    def failed_trials(self) -> List[TrialResult]:
        return [t for t in self.trials if t.failed]

    def mean_jsi(self, name: str) -> float:
        vals = [t.jsi[name] for t in self.ok_trials()]
        return float(np.mean(vals)) if vals else float("nan")

    def mean_time(self, name: str) -> float:
        vals = [t.time_s[name] for t in self.ok_trials()]
        return float(np.mean(vals)) if vals else float("nan")

    def rows(self, with_time: bool = True) -> List[str]:
        header = "trial,descriptor,jsi,time_s" if with_time else "trial,descriptor,jsi"
        out = [header]
        for t in self.trials:
            for d in self.descriptors:
                if t.failed:
                    row = [str(t.trial), d, "failed"] + (["failed"] if with_time else [])
                else:
                    row = [str(t.trial), d, f"{t.jsi[d]:.6f}"] + ([f"{t.time_s[d]:.6f}"] if with_time else [])
                out.append(",".join(row))
        for d in self.descriptors:
            row = ["mean", d, f"{self.mean_jsi(d):.6f}"] + ([f"{self.mean_time(d):.6f}"] if with_time else [])
            out.append(",".join(row))
        return out

    def write_csv(self, path: str | os.PathLike, with_time: bool = True) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(self.rows(with_time)) + "\n")

    def summary(self) -> str:
        lines = [f"{'trial':>6} {'wrinkles':>8} " + " ".join(f"{d + ' JSI%':>10} {d + ' t(s)':>9}" for d in self.descriptors)]
        for t in self.trials:
            if t.failed:
                lines.append(f"{t.trial:>6} {t.n_wrinkles:>8}  FAILED: {t.error}")
                continue
            cells = " ".join(f"{100 * t.jsi[d]:>10.2f} {t.time_s[d]:>9.3f}" for d in self.descriptors)
            lines.append(f"{t.trial:>6} {t.n_wrinkles:>8} {cells}")
        cells = " ".join(f"{100 * self.mean_jsi(d):>10.2f} {self.mean_time(d):>9.3f}" for d in self.descriptors)
        lines.append(f"{'mean':>6} {'':>8} {cells}")
        if self.failed_trials():
            lines.append(f"{len(self.failed_trials())} failed trial(s) excluded from means")
        return "\n".join(lines)


def run_trial(trial: int, spec, cfg, descriptors: Sequence[str] = DESCRIPTORS) -> TrialResult:
    """Segment once, then time and score each descriptor on the same garment."""
    from .pipeline import prepare_garment, describe

    from .scene import generate_scene

    result = TrialResult(trial=trial, seed=spec.rng_seed, n_wrinkles=len(spec.wrinkles))
    try:
        scene = generate_scene(spec)
        prep = prepare_garment(scene.cloud, cfg)
        truth_idx = np.flatnonzero(scene.is_garment)
        result.segmentation_recall = float(np.isin(truth_idx, prep.segmentation.garment_indices).mean())
        for name in descriptors:
            desc = describe(prep, cfg, name)
            truth, _ = scene.truth.rasterize(desc.grid)
            result.jsi[name] = jaccard(desc.plan.wrinkles, truth)
            result.time_s[name] = desc.descriptor_time
    except Exception as exc:  # recorded, the benchmark goes on
        log.warning("trial %d failed: %s", trial, exc)
        result.error = f"{type(exc).__name__}: {exc}"
    return result


def benchmark(specs: Sequence, cfg, descriptors: Sequence[str] = DESCRIPTORS) -> EvalReport:
    """Table-I style comparison of descriptors over a scene suite."""
    if len(specs) == 0:
        raise ValueError("benchmark needs at least one scene")
    for d in descriptors:
        if d not in DESCRIPTORS:
            raise ValueError(f"unknown descriptor {d!r}")
    trials = [run_trial(i, spec, cfg, descriptors) for i, spec in enumerate(specs, start=1)]
    return EvalReport(trials, tuple(descriptors))
