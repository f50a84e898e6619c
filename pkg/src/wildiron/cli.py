"""Command line: synth, perceive, iron and bench.

Exit codes: 0 success, 1 input/parse or stage error, 2 nothing to iron,
3 ironing loop did not converge.
"""

from __future__ import annotations

import argparse
import logging
import sys
from importlib import resources
from pathlib import Path
from typing import List, Optional

import numpy as np

from .cloud import CloudFormatError, load_cloud, save_cloud
from .config import ConfigError, PipelineConfig, dump_config, load_config
from .descriptor import write_grid_csv, write_pbm, write_pgm16
from .pathplan import write_path_csv
from .scene import SceneSpecError, build_cloth, default_suite, generate_scene, load_height_field, save_height_field

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_NOTHING = 2
EXIT_NOT_CONVERGED = 3

log = logging.getLogger("wildiron")


def default_config_path() -> str:
    return str(resources.files("wildiron").joinpath("default.ini"))


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", help="INI file (default: the packaged default.ini)")
    p.add_argument("--seed", type=int, help="scene and algorithm seed")
    p.add_argument("--out", default="out", help="output directory (created if missing)")
    p.add_argument("--descriptor", choices=("wild", "rsd", "both"), default=None)
    p.add_argument("--max-iterations", type=int, dest="max_iterations")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override, e.g. pathplan.erode_size=9")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="wildiron", description="Wrinkle detection and simulated ironing.")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("synth", parents=[common], help="write a synthetic scene (cloud, truth mask, height field)")
    p = sub.add_parser("perceive", parents=[common], help="segment, describe and plan a path for a cloud file")
    p.add_argument("cloud", help="ASCII XYZRGB cloud")
    p = sub.add_parser("iron", parents=[common], help="run the closed perceive / iron loop")
    p.add_argument("--scene", help="directory from `synth` (uses its heights.csv)")
    p = sub.add_parser("bench", parents=[common], help="WiLD vs RSD comparison on a scene suite")
    p.add_argument("--scenes", type=int, default=10, help="suite size (default 10)")
    return parser


def _load(args) -> PipelineConfig:
    overrides = list(args.set)
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    if args.max_iterations is not None:
        overrides.append(f"control.max_iterations={args.max_iterations}")
    return load_config(args.config or default_config_path(), overrides)


def _outdir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# Commands

def cmd_synth(args, cfg: PipelineConfig) -> int:
    out = _outdir(args)
    spec = cfg.scene_spec()
    scene = generate_scene(spec)
    save_cloud(scene.cloud, out / "cloud.xyz")
    truth, _ = scene.truth.canonical(cfg.descriptor.resolution)
    write_pbm(truth, out / "truth.pbm")
    save_height_field(scene.cloth, out / "heights.csv")
    print(f"points={len(scene.cloud)} wrinkles={len(spec.wrinkles)} out={out}")
    return EXIT_OK


def write_snapshots(desc, out: Path, prefix: str = "") -> None:
    plan = desc.plan
    empty = np.zeros(plan.wrinkles.shape, dtype=bool)
    write_pbm(plan.closed_mask, out / f"{prefix}mask.pbm")
    write_pbm(plan.region if plan.region is not None else empty, out / f"{prefix}region.pbm")
    write_pbm(plan.skeleton if plan.skeleton is not None else empty, out / f"{prefix}skeleton.pbm")
    path_img = empty.copy()
    for r, c in plan.pixel_path:
        path_img[r, c] = True
    write_pbm(path_img, out / f"{prefix}path.pbm")
    filled = desc.grid.filled(plan.closed_mask).values
    write_pgm16(filled, out / f"{prefix}{desc.field.name}.pgm", mask=plan.closed_mask)
    write_grid_csv(filled, out / f"{prefix}{desc.field.name}.csv")


def cmd_perceive(args, cfg: PipelineConfig) -> int:
    from .pipeline import describe, prepare_garment
    from .plotting import plot_stages

    out = _outdir(args)
    cloud = load_cloud(args.cloud)
    names = ["wild", "rsd"] if args.descriptor == "both" else [args.descriptor or "wild"]
    prep = prepare_garment(cloud, cfg)
    seg = prep.segmentation
    save_cloud(cloud.subset(seg.band_indices), out / "band.xyz", extra_column=seg.clusters.assignments)
    save_cloud(seg.garment(cloud), out / "garment.xyz")
    main = None
    for name in names:
        desc = describe(prep, cfg, name)
        prefix = "" if len(names) == 1 else f"{name}_"
        write_snapshots(desc, out, prefix)
        plot_stages(desc, out / f"{prefix}stages.png", title=f"{name}: wrinkleness {desc.wrinkleness:.4f}")
        if main is None:
            main = desc
    w = main.wrinkleness
    print(f"wrinkleness={w:.6g}")
    if w == 0.0:
        return EXIT_NOTHING
    if main.plan.path is None:
        print("pathplan: no wrinkle region yields a path", file=sys.stderr)
        return EXIT_INPUT
    write_path_csv(main.plan.path, out / "path.csv")
    return EXIT_OK


def cmd_iron(args, cfg: PipelineConfig) -> int:
    from .pipeline import run_ironing_loop
    from .plotting import plot_stages, plot_trajectory, plot_wrinkleness

    out = _outdir(args)
    spec = cfg.scene_spec()
    cloth = load_height_field(Path(args.scene) / "heights.csv") if args.scene else None
    descriptor = args.descriptor or "wild"
    if descriptor == "both":
        raise ConfigError("descriptor: iron needs a single descriptor (wild or rsd)")
    report = run_ironing_loop(spec, cfg, descriptor=descriptor, keep_perceptions=True, cloth=cloth)
    report.write_csv(out / "report.csv")
    for k, tlog in enumerate(report.logs):
        tlog.write_csv(out / f"trajectory_{k}.csv")
    for k, per in enumerate(report.perceptions):
        plot_stages(per.description, out / f"stages_{k}.png", title=f"iteration {k}: wrinkleness {per.wrinkleness:.4f}")
    if report.logs:
        plot_trajectory(report.logs[0], cloth or build_cloth(spec), out / "trajectory_0.png", cfg.control.desired_fz)
    plot_wrinkleness({f"seed {cfg.seed}": report.wrinkleness_curve}, out / "wrinkleness.png")
    print(f"iterations={report.iterations}")
    print(f"status={report.status}")
    if not report.converged:
        print(f"ironing did not converge: {report.status} {report.message}".rstrip(), file=sys.stderr)
        return EXIT_NOT_CONVERGED
    return EXIT_OK


def cmd_bench(args, cfg: PipelineConfig) -> int:
    from .evaluation import DESCRIPTORS, benchmark
    from .plotting import plot_benchmark

    out = _outdir(args)
    if args.scenes < 1:
        raise ConfigError("scenes: need at least one scene")
    names = DESCRIPTORS if args.descriptor in (None, "both") else (args.descriptor,)
    specs = default_suite(cfg.scene_base(), first_seed=cfg.seed, n=args.scenes)
    report = benchmark(specs, cfg, names)
    report.write_csv(out / "bench.csv")
    report.write_csv(out / "bench_values.csv", with_time=False)
    summary = report.summary()
    (out / "summary.txt").write_text(summary + "\n", encoding="utf-8")
    plot_benchmark(report, out / "benchmark.png")
    print(summary)
    return EXIT_INPUT if len(report.failed_trials()) == len(report.trials) else EXIT_OK


COMMANDS = {"synth": cmd_synth, "perceive": cmd_perceive, "iron": cmd_iron, "bench": cmd_bench}


def main(argv: Optional[List[str]] = None) -> int:
    from .pipeline import StageError

    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _load(args)
        with open(_outdir(args) / "config.ini", "w", encoding="utf-8") as fh:
            fh.write(dump_config(cfg))
        return COMMANDS[args.command](args, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
    except CloudFormatError as exc:
        print(f"parse error: {exc}", file=sys.stderr)
    except SceneSpecError as exc:
        print(f"scene error: {exc}", file=sys.stderr)
    except StageError as exc:
        print(f"stage error in {exc}", file=sys.stderr)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
    return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
