"""Command-line front end: compose the pipeline from seeded, file-based stages.

Subcommands: gen-scene, gen-truth, sample, reconstruct, evaluate, sweep.
Exit codes: 0 success, 2 input error, 3 numeric failure, 4 partial sweep
failure. A single --seed drives every stage; sub-seeds are derived by
fixed-label hashing so stages are independently reproducible.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import fileio
from .baselines import BaselineConfig, reconstruct_with
from .estimation import EstimatorConfig
from .exceptions import (
    FileFormatError,
    InvalidArgumentError,
    NumericError,
    VscatError,
)
from .geometry import (
    AodSectorization,
    Box3,
    PhysicalScatterer,
    Scene,
    partition_region,
)
from .gpr import GprConfig, run_proposed
from .metrics import ALL_METHODS, ExperimentSpec, map_nmse, run_experiment
from .seeding import derive_seed
from .synth import TruthSpec, generate_truth, sample_measurements

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NUMERIC = 3
EXIT_PARTIAL = 4


def _say(args, message: str) -> None:
    if not args.quiet:
        print(message, file=sys.stderr)


def _out_dir(args) -> Path:
    out = args.out_dir or os.environ.get("VSCAT_OUT_DIR") or "."
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _out_path(args, name: str) -> Path:
    """Resolve an output file name against --out-dir (absolute paths win)."""
    p = Path(name)
    if p.is_absolute():
        return p
    p = _out_dir(args) / p
    p.parent.mkdir(parents=True, exist_ok=True)
    return p


def _load_configs(args) -> tuple[EstimatorConfig, GprConfig, BaselineConfig]:
    doc = fileio.load_config_file(args.config) if args.config else {}
    known = {"estimator", "gpr", "baseline", "grid", "sectors"}
    unknown = set(doc) - known
    if unknown:
        raise FileFormatError(
            f"{args.config}: unknown config sections {sorted(unknown)}; valid: {sorted(known)}"
        )
    est_data = dict(doc.get("estimator", {}))
    for flag in ("objective", "step_rho", "max_progressive_iters", "ridge_lambda", "zeta_rel_tol"):
        value = getattr(args, flag, None)
        if value is not None:
            est_data[flag] = value
    estimator = fileio.estimator_config_from(est_data)
    gpr = fileio.gpr_config_from(doc.get("gpr", {}))
    baseline = fileio.baseline_config_from(doc.get("baseline", {}))
    baseline = dataclasses.replace(baseline, estimator=estimator, gpr=gpr)
    return estimator, gpr, baseline


def _grid_from_args(args, scene: Scene):
    doc = fileio.load_config_file(args.config) if args.config else {}
    grid_cfg = doc.get("grid", {})
    sect_cfg = doc.get("sectors", {})
    nx = args.grid_nx if args.grid_nx is not None else grid_cfg.get("nx", 60)
    ny = args.grid_ny if args.grid_ny is not None else grid_cfg.get("ny", 60)
    plane = (
        args.plane_height
        if args.plane_height is not None
        else grid_cfg.get("plane_height", 1.5)
    )
    m_az = args.m_azimuth if args.m_azimuth is not None else sect_cfg.get("m_azimuth", 8)
    m_el = args.m_elevation if args.m_elevation is not None else sect_cfg.get("m_elevation", 1)
    sectors = AodSectorization(int(m_az), int(m_el))
    grid = partition_region(scene, int(nx), int(ny), float(plane))
    return grid, sectors


# ---------------------------------------------------------------------------
# gen-scene
# ---------------------------------------------------------------------------

def cmd_gen_scene(args) -> int:
    rng = np.random.default_rng(derive_seed(args.seed, "gen-scene"))
    side = float(args.region)
    height = float(args.region_height)
    region = Box3([0.0, 0.0, 0.0], [side, side, height])
    tx = np.array([side / 2.0, side / 2.0, float(args.tx_height)])

    boxes: list[PhysicalScatterer] = []
    for sid in range(1, args.n_scatterers + 1):
        placed = False
        for _ in range(1000):
            w = rng.uniform(args.min_size, args.max_size)
            d = rng.uniform(args.min_size, args.max_size)
            h = rng.uniform(args.min_height, min(args.max_height, height - 1.0))
            x = rng.uniform(0.0, side - w)
            y = rng.uniform(0.0, side - d)
            box = Box3([x, y, 0.0], [x + w, y + d, h])
            if box.contains(tx):
                continue
            if any(
                box.footprint_overlaps(
                    b.box.min_corner[0], b.box.max_corner[0],
                    b.box.min_corner[1], b.box.max_corner[1],
                )
                for b in boxes
            ):
                continue
            boxes.append(PhysicalScatterer(id=sid, box=box))
            placed = True
            break
        if not placed:
            print(
                f"gen-scene: could not place scatterer {sid} after 1000 attempts; "
                "try fewer or smaller scatterers",
                file=sys.stderr,
            )
            return EXIT_INPUT

    scene = Scene(
        region=region,
        tx_position=tx,
        scatterers=tuple(boxes),
        beta0=args.beta0,
        alpha=args.alpha,
        wavelength=args.wavelength,
    )
    out = _out_path(args, args.out)
    fileio.save_scene(scene, out)
    _say(args, f"wrote {out} ({len(boxes)} scatterers)")
    return EXIT_OK


# ---------------------------------------------------------------------------
# gen-truth
# ---------------------------------------------------------------------------

def cmd_gen_truth(args) -> int:
    scene = fileio.load_scene(args.scene)
    grid, sectors = _grid_from_args(args, scene)
    spec = TruthSpec(
        seed=derive_seed(args.seed, "truth"),
        n_true=args.n_true,
        src_v=args.src_v,
        src_rho=args.src_rho,
        src_mean=args.src_mean,
        noise_std_rel=args.noise_std_rel,
        generator=args.generator,
    )
    vs, truth = generate_truth(scene, grid, sectors, spec)

    model_path = _out_path(args, args.prefix + "_model.json")
    map_path = _out_path(args, args.prefix + "_map.csv")
    meta_path = _out_path(args, args.prefix + "_meta.json")
    fileio.save_model_json(model_path, vs, sectors)
    fileio.save_map_csv(map_path, grid, truth)
    fileio.save_json(
        meta_path,
        {
            "seed": args.seed,
            "truth": dataclasses.asdict(spec),
            "grid": {
                "nx": grid.grid_count_x,
                "ny": grid.grid_count_y,
                "plane_height": grid.plane_height,
            },
            "sectors": {"m_azimuth": sectors.m_azimuth, "m_elevation": sectors.m_elevation},
            "scene": str(args.scene),
        },
    )
    if args.figures:
        from .report import render_map_figure

        render_map_figure(
            _out_path(args, args.prefix + "_map.png"),
            grid,
            truth,
            title="ground-truth gain map",
            scene=scene,
        )
    _say(args, f"wrote {model_path}, {map_path}, {meta_path}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# sample
# ---------------------------------------------------------------------------

def cmd_sample(args) -> int:
    scene = fileio.load_scene(args.scene)
    grid, sectors = _grid_from_args(args, scene)
    nx, ny, truth = fileio.load_map_csv(args.truth)
    if nx != grid.grid_count_x or ny != grid.grid_count_y:
        raise FileFormatError(
            f"{args.truth}: map is {nx}x{ny} but the grid options specify "
            f"{grid.grid_count_x}x{grid.grid_count_y}"
        )
    noise = args.noise_std_rel
    if noise is None and args.meta:
        noise = fileio.load_json(args.meta).get("truth", {}).get("noise_std_rel", 0.0)
    measurements = sample_measurements(
        truth,
        grid,
        scene,
        sectors,
        args.L,
        args.selection,
        derive_seed(args.seed, f"sample/L={args.L}/{args.selection}"),
        noise if noise is not None else 0.0,
    )
    out = _out_path(args, args.out)
    fileio.save_measurements_csv(out, measurements)
    _say(args, f"wrote {out} ({measurements.count} measurements, {args.selection})")
    return EXIT_OK


# ---------------------------------------------------------------------------
# reconstruct
# ---------------------------------------------------------------------------

def cmd_reconstruct(args) -> int:
    scene = fileio.load_scene(args.scene)
    grid, sectors = _grid_from_args(args, scene)
    measurements = fileio.load_measurements_csv(args.measurements)
    for i in measurements.indices:
        grid.position_of(int(i))  # cross-validate indices against the grid
    if args.method == "kriging" and measurements.count < 2:
        print("reconstruct: kriging requires >= 2 measurements", file=sys.stderr)
        return EXIT_INPUT
    estimator, gpr_config, baseline = _load_configs(args)

    map_path = _out_path(args, args.out)
    report_path = map_path.with_suffix(".report.json")
    report: dict = {
        "method": args.method,
        "measurements": str(args.measurements),
        "scene": str(args.scene),
        "grid": {"nx": grid.grid_count_x, "ny": grid.grid_count_y},
        "sectors": {"m_azimuth": sectors.m_azimuth, "m_elevation": sectors.m_elevation},
    }
    tic = time.perf_counter()
    try:
        if args.method == "proposed":
            result = run_proposed(scene, grid, sectors, measurements, estimator, gpr_config)
            cgm = result.cgm
            report["fit"] = result.report.to_dict()
            fileio.save_model_json(
                map_path.with_suffix(".model.json"),
                result.scatterers,
                sectors,
                gpr_models=result.gpr_models,
            )
        else:
            config = dataclasses.replace(baseline, method=args.method)
            cgm = reconstruct_with(args.method, scene, grid, sectors, measurements, config)
            if args.method == "issm":
                report["zero_fill_uncovered_sectors"] = True
    except NumericError as exc:
        report["status"] = "numeric-failure"
        report["error"] = str(exc)
        fileio.save_json(report_path, report)
        print(f"reconstruct: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    report["status"] = "ok"
    report["runtime_s"] = time.perf_counter() - tic

    fileio.save_map_csv(map_path, grid, cgm)
    fileio.save_json(report_path, report)
    if args.figures:
        from .report import render_map_figure

        render_map_figure(
            map_path.with_suffix(".png"),
            grid,
            cgm,
            title=f"reconstruction ({args.method})",
            scene=scene,
            measurements=measurements,
        )
    _say(args, f"wrote {map_path} and {report_path}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# evaluate
# ---------------------------------------------------------------------------

def cmd_evaluate(args) -> int:
    _, _, truth = fileio.load_map_csv(args.truth)
    rows = []
    for est_path in args.estimate:
        _, _, estimate = fileio.load_map_csv(est_path)
        nmse = map_nmse(truth, estimate)
        rows.append((Path(est_path).stem, nmse))
        _say(args, f"NMSE {Path(est_path).stem}: {nmse:.6g} ({10*np.log10(nmse):.2f} dB)"
             if nmse > 0 else f"NMSE {Path(est_path).stem}: 0")
    out = _out_path(args, args.out)
    with open(out, "w", newline="", encoding="utf-8") as fh:
        fh.write("estimate,nmse\n")
        for name, nmse in rows:
            fh.write(f"{name},{repr(float(nmse))}\n")
    _say(args, f"wrote {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# sweep
# ---------------------------------------------------------------------------

def _experiment_spec_from_file(path) -> ExperimentSpec:
    doc = fileio.load_config_file(path)
    base = Path(path).parent
    required = {"scene", "l_values", "selections", "methods"}
    missing = required - set(doc)
    if missing:
        raise FileFormatError(f"{path}: missing keys {sorted(missing)}")
    scene_path = Path(doc["scene"])
    if not scene_path.is_absolute():
        scene_path = base / scene_path
    scene = fileio.load_scene(scene_path)
    grid_cfg = doc.get("grid", {})
    sect_cfg = doc.get("sectors", {})
    if "seeds" in doc:
        seeds = [int(s) for s in doc["seeds"]]
    else:
        seeds = list(range(int(doc.get("n_seeds", 1))))
    for method in doc["methods"]:
        if method not in ALL_METHODS:
            raise FileFormatError(f"{path}: unknown method {method!r}")
    estimator = fileio.estimator_config_from(doc.get("estimator", {}))
    gpr = fileio.gpr_config_from(doc.get("gpr", {}))
    baseline = fileio.baseline_config_from(doc.get("baseline", {}))
    baseline = dataclasses.replace(baseline, estimator=estimator, gpr=gpr)
    return ExperimentSpec(
        scene=scene,
        grid_nx=int(grid_cfg.get("nx", 60)),
        grid_ny=int(grid_cfg.get("ny", 60)),
        plane_height=float(grid_cfg.get("plane_height", 1.5)),
        sectors=AodSectorization(
            int(sect_cfg.get("m_azimuth", 8)), int(sect_cfg.get("m_elevation", 1))
        ),
        truth=fileio.truth_spec_from(doc.get("truth", {})),
        l_values=[int(v) for v in doc["l_values"]],
        selections=list(doc["selections"]),
        methods=list(doc["methods"]),
        seeds=seeds,
        estimator=estimator,
        gpr=gpr,
        baseline=baseline,
        include_failed_as_one=bool(doc.get("include_failed_as_one", False)),
    )


def cmd_sweep(args) -> int:
    spec = _experiment_spec_from_file(args.spec)
    results_path = _out_path(args, "results.csv")
    aggregates_path = _out_path(args, "aggregates.csv")

    previous = []
    skip = frozenset()
    if args.resume and results_path.exists():
        previous = fileio.load_results_csv(results_path)
        skip = frozenset((r.seed, r.L, r.selection, r.method) for r in previous)
        _say(args, f"resuming: {len(previous)} rows already complete")

    def progress(row):
        _say(
            args,
            f"seed={row.seed} L={row.L} {row.selection} {row.method}: "
            f"{row.status} nmse={row.nmse:.4g} ({row.runtime_ms:.0f} ms)",
        )

    rows, _ = run_experiment(spec, progress=progress, skip_keys=skip, jobs=args.jobs)
    merged = {(r.seed, r.L, r.selection, r.method): r for r in previous}
    merged.update({(r.seed, r.L, r.selection, r.method): r for r in rows})
    ordered = [merged[k] for k in spec.run_keys() if k in merged]
    from .metrics import aggregate_rows

    aggregates = aggregate_rows(spec, ordered)
    fileio.save_results_csv(results_path, ordered)
    fileio.save_aggregates_csv(aggregates_path, aggregates)
    if args.figures:
        from .report import render_nmse_curves

        render_nmse_curves(_out_path(args, "nmse_vs_L.png"), aggregates)
    failures = sum(1 for r in ordered if r.status != "ok")
    _say(args, f"wrote {results_path} and {aggregates_path} ({failures} failed runs)")
    return EXIT_OK if failures == 0 else EXIT_PARTIAL


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="master seed (default 0)")
    common.add_argument("--config", default=None, help="TOML/JSON config file")
    common.add_argument(
        "--out-dir", default=None, help="output directory (default $VSCAT_OUT_DIR or .)"
    )
    common.add_argument("--quiet", action="store_true", help="suppress progress output")

    grid_opts = argparse.ArgumentParser(add_help=False)
    grid_opts.add_argument("--grid-nx", type=int, default=None, help="grid columns (default 60)")
    grid_opts.add_argument("--grid-ny", type=int, default=None, help="grid rows (default 60)")
    grid_opts.add_argument(
        "--plane-height", type=float, default=None, help="map plane height in m (default 1.5)"
    )
    grid_opts.add_argument(
        "--m-azimuth", type=int, default=None, help="azimuth sectors (default 8)"
    )
    grid_opts.add_argument(
        "--m-elevation", type=int, default=None, help="elevation sectors (default 1)"
    )

    est_opts = argparse.ArgumentParser(add_help=False)
    est_opts.add_argument("--objective", choices=["mse", "nmse"], default=None)
    est_opts.add_argument("--step-rho", dest="step_rho", type=int, default=None)
    est_opts.add_argument(
        "--max-progressive-iters", dest="max_progressive_iters", type=int, default=None
    )
    est_opts.add_argument("--ridge-lambda", dest="ridge_lambda", type=float, default=None)
    est_opts.add_argument("--zeta-rel-tol", dest="zeta_rel_tol", type=float, default=None)

    parser = argparse.ArgumentParser(
        prog="vscat",
        description="Channel gain map reconstruction with a virtual-scatterer model.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-scene", parents=[common], help="generate a random scene JSON")
    p.add_argument("--region", type=float, default=300.0, help="square region side in m")
    p.add_argument("--region-height", type=float, default=40.0)
    p.add_argument("--n-scatterers", type=int, default=30)
    p.add_argument("--tx-height", type=float, default=9.0)
    p.add_argument("--beta0", type=float, default=1e-4, help="reference gain at 1 m (linear)")
    p.add_argument("--alpha", type=float, default=2.5, help="path loss exponent")
    p.add_argument("--wavelength", type=float, default=0.11)
    p.add_argument("--min-size", type=float, default=10.0, help="min footprint side in m")
    p.add_argument("--max-size", type=float, default=30.0, help="max footprint side in m")
    p.add_argument("--min-height", type=float, default=5.0)
    p.add_argument("--max-height", type=float, default=20.0)
    p.add_argument("--out", default="scene.json")
    p.set_defaults(func=cmd_gen_scene)

    p = sub.add_parser(
        "gen-truth", parents=[common, grid_opts], help="generate synthetic ground truth"
    )
    p.add_argument("--scene", required=True)
    p.add_argument("--n-true", type=int, default=5)
    p.add_argument("--src-v", type=float, default=0.25)
    p.add_argument("--src-rho", type=float, default=1.0)
    p.add_argument("--src-mean", type=float, default=0.5)
    p.add_argument("--noise-std-rel", type=float, default=0.0)
    p.add_argument("--generator", choices=["model_consistent", "single_bounce"],
                   default="model_consistent")
    p.add_argument("--prefix", default="truth", help="output file prefix")
    p.add_argument("--figures", dest="figures", action="store_true", default=True)
    p.add_argument("--no-figures", dest="figures", action="store_false")
    p.set_defaults(func=cmd_gen_truth)

    p = sub.add_parser(
        "sample", parents=[common, grid_opts], help="sample measurement grids from a truth map"
    )
    p.add_argument("--scene", required=True)
    p.add_argument("--truth", required=True, help="truth map CSV")
    p.add_argument("--meta", default=None, help="truth metadata JSON (noise default)")
    p.add_argument("--L", type=int, required=True)
    p.add_argument("--selection", choices=["type1", "type2"], default="type2")
    p.add_argument("--noise-std-rel", type=float, default=None)
    p.add_argument("--out", default="measurements.csv")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser(
        "reconstruct",
        parents=[common, grid_opts, est_opts],
        help="reconstruct a gain map from measurements",
    )
    p.add_argument("--scene", required=True)
    p.add_argument("--measurements", required=True)
    p.add_argument("--method", choices=list(ALL_METHODS), default="proposed")
    p.add_argument("--out", default="map.csv")
    p.add_argument("--figures", dest="figures", action="store_true", default=True)
    p.add_argument("--no-figures", dest="figures", action="store_false")
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser(
        "evaluate", parents=[common], help="compute map NMSE against a truth map"
    )
    p.add_argument("--truth", required=True)
    p.add_argument("--estimate", nargs="+", required=True)
    p.add_argument("--out", default="evaluation.csv")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep", parents=[common], help="run a seeded NMSE sweep")
    p.add_argument("--spec", required=True, help="experiment spec (TOML/JSON)")
    p.add_argument("--resume", action="store_true", help="skip runs already in results.csv")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--figures", dest="figures", action="store_true", default=True)
    p.add_argument("--no-figures", dest="figures", action="store_false")
    p.set_defaults(func=cmd_sweep)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (FileFormatError, InvalidArgumentError) as exc:
        print(f"vscat {args.command}: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except FileNotFoundError as exc:
        print(f"vscat {args.command}: file not found: {exc.filename}", file=sys.stderr)
        return EXIT_INPUT
    except NumericError as exc:
        print(f"vscat {args.command}: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except VscatError as exc:
        print(f"vscat {args.command}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
