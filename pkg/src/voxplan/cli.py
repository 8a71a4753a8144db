"""Command-line entry point: episode runner, micro-benchmarks, oracle suites.

Subcommands:
  run            execute a scenario and write its episode log and metrics
  bench-edt      time occupancy fusion and the distance transform per grid size
  bench-planner  time one planning cycle versus sample count and threads
  oracle         compare production kernels against brute-force references

Thread counts default to the PARAMAP_THREADS environment variable, then the
machine core count. Exit codes: 0 success, 1 usage or configuration error,
2 episode timeout or oracle failure.
"""

from __future__ import annotations

import argparse
import json
import statistics
import sys
import time
from pathlib import Path

import numpy as np

import voxplan
from voxplan import config, parallel
from voxplan.geometry import RigidTransform


class _Parser(argparse.ArgumentParser):
    """argparse with usage failures mapped to exit code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(1)


def _parse_sizes(text: str) -> list[tuple[int, int, int]]:
    sizes = []
    for item in text.split(","):
        item = item.strip().lower()
        if not item:
            continue
        parts = item.split("x")
        try:
            if len(parts) == 1:
                n = int(parts[0])
                sizes.append((n, n, n))
            elif len(parts) == 3:
                sizes.append(tuple(int(p) for p in parts))
            else:
                raise ValueError
        except ValueError:
            raise ValueError(f"bad grid size {item!r}; use N or NXxNYxNZ") from None
    if not sizes:
        raise ValueError("no grid sizes given")
    if any(min(s) < 1 for s in sizes):
        raise ValueError("grid sizes must be positive")
    return sizes


def _parse_thread_list(text: str | None) -> list[int]:
    if text is None:
        return [parallel.default_threads()]
    counts = [int(v) for v in text.split(",") if v.strip()]
    if not counts or any(c < 1 for c in counts):
        raise ValueError("thread counts must be positive integers")
    return counts


def _write_table(path, header_fields: dict, columns: list[str], rows: list[list]):
    with open(path, "w", encoding="utf-8") as fh:
        for key, value in header_fields.items():
            fh.write(f"# {key}={value}\n")
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(str(v) for v in row) + "\n")


def _print_table(columns: list[str], rows: list[list]):
    widths = [
        max(len(str(c)), max((len(str(r[i])) for r in rows), default=0))
        for i, c in enumerate(columns)
    ]
    print("  ".join(str(c).ljust(w) for c, w in zip(columns, widths)))
    for row in rows:
        print("  ".join(str(v).ljust(w) for v, w in zip(row, widths)))


def cmd_run(args) -> int:
    scenario_path = Path(args.scenario)
    if not scenario_path.exists():
        print(f"error: scenario file {scenario_path} does not exist", file=sys.stderr)
        return 1
    if args.threads < 1:
        print(f"error: thread count must be >= 1, got {args.threads}", file=sys.stderr)
        return 1
    try:
        scenario = config.load_scenario(scenario_path, seed_override=args.seed)
    except (ValueError, KeyError, TypeError) as exc:
        print(f"error: cannot parse scenario {scenario_path}: {exc}", file=sys.stderr)
        return 1
    threads = parallel.set_threads(args.threads)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    from voxplan.sim import run_episode, write_episode_log

    if args.verbose:
        print(
            f"running {scenario.name} (seed {scenario.seed}, {threads} threads, "
            f"{scenario.timeout_cycles} cycle budget)"
        )
    start = time.perf_counter()
    log = run_episode(scenario)
    wall = time.perf_counter() - start

    write_episode_log(log, out_dir / "episode.ndjson")
    metrics_doc = {
        "version": voxplan.__version__,
        "seed": scenario.seed,
        "config_hash": scenario.config_digest,
        "schema_version": 1,
        "scenario": scenario.name,
        "threads": threads,
        "success": log.success,
        "timeout": log.timeout,
        "goal_cycles": log.goal_cycles,
        "cycles": len(log.records),
        "wall_s": wall,
        "metrics": log.metrics.as_dict() if log.metrics else None,
    }
    with open(out_dir / "metrics.json", "w", encoding="utf-8") as fh:
        json.dump(metrics_doc, fh, indent=2)
        fh.write("\n")

    m = log.metrics
    status = "success" if log.success else "TIMEOUT"
    print(
        f"{scenario.name}: {status} in {len(log.records)} cycles "
        f"(e_pos {m.e_pos_mm:.1f} mm, e_ori {m.e_ori_rad:.3f} rad, "
        f"path {m.path_length_rad:.2f} rad, min clearance {m.min_clearance_m:.3f} m)"
    )
    if args.verbose:
        print(
            f"mean mapping {m.mapping_time_ms:.1f} ms, mean planning "
            f"{m.planning_time_ms:.1f} ms, wall {wall:.1f} s"
        )
    return 0 if log.success else 2


def _bench_edt_scene(dims: tuple[int, int, int]):
    from voxplan.mapping import CameraModel, OccupancyMapper, VoxelGrid
    from voxplan.sim import BoxShape, MotionScript, Obstacle, advance_world, render_depth

    voxel = 0.02
    extent = np.array(dims) * voxel
    origin = (-extent[0] / 2.0, -extent[1] / 2.0, 0.0)
    grid = VoxelGrid(origin, voxel, dims)
    cam = CameraModel(
        fx=120.0,
        fy=120.0,
        cx=79.5,
        cy=59.5,
        width=160,
        height=120,
        d_min=0.05,
        d_max=20.0,
        pose=RigidTransform.from_translation((0.0, 0.0, -1.0)),
    )
    box = Obstacle(
        BoxShape(tuple(np.maximum(extent * 0.25, voxel * 2))),
        MotionScript.fixed(
            RigidTransform.from_translation((0.0, 0.0, float(extent[2]) * 0.5))
        ),
    )
    depth = render_depth([box], advance_world([box], 0.0), cam)
    return grid, cam, depth


def cmd_bench_edt(args) -> int:
    try:
        sizes = _parse_sizes(args.sizes)
        thread_counts = _parse_thread_list(args.threads)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    if args.reps < 1:
        print("error: reps must be >= 1", file=sys.stderr)
        return 1

    from voxplan.mapping import edt_3d, update_occupancy

    columns = [
        "size",
        "threads",
        "ogm_ms_mean",
        "ogm_ms_median",
        "edt_ms_mean",
        "edt_ms_median",
        "total_ms_mean",
        "speedup",
    ]
    rows = []
    for dims in sizes:
        base_total = None
        for threads in thread_counts:
            effective = parallel.set_threads(threads)
            grid, cam, depth = _bench_edt_scene(dims)
            update_occupancy(grid, depth, cam)  # warm the kernels
            edt_3d(grid)
            ogm_times = []
            edt_times = []
            for _ in range(args.reps):
                t0 = time.perf_counter()
                update_occupancy(grid, depth, cam)
                t1 = time.perf_counter()
                edt_3d(grid)
                t2 = time.perf_counter()
                ogm_times.append((t1 - t0) * 1000.0)
                edt_times.append((t2 - t1) * 1000.0)
            total = statistics.mean(ogm_times) + statistics.mean(edt_times)
            if base_total is None:
                base_total = total
            rows.append(
                [
                    "x".join(str(d) for d in dims),
                    effective,
                    round(statistics.mean(ogm_times), 3),
                    round(statistics.median(ogm_times), 3),
                    round(statistics.mean(edt_times), 3),
                    round(statistics.median(edt_times), 3),
                    round(total, 3),
                    round(base_total / total, 2),
                ]
            )
    _print_table(columns, rows)
    if args.out:
        header = {
            "version": voxplan.__version__,
            "seed": 0,
            "config_hash": config.config_hash(
                {"sizes": args.sizes, "reps": args.reps, "threads": args.threads}
            ),
            "benchmark": "edt",
        }
        _write_table(args.out, header, columns, rows)
    return 0


def cmd_bench_planner(args) -> int:
    try:
        samples_list = [int(v) for v in args.samples.split(",") if v.strip()]
        thread_counts = _parse_thread_list(args.threads)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    if not samples_list or any(s < 1 for s in samples_list):
        print("error: sample counts must be positive", file=sys.stderr)
        return 1
    if args.horizon < 1 or args.reps < 1:
        print("error: horizon and reps must be >= 1", file=sys.stderr)
        return 1

    from voxplan.mapping import VoxelGrid, edt_3d
    from voxplan.planner import Planner
    from voxplan.robot import JointState, forward_kinematics, load_robot

    chain, model = load_robot(config.bundled_scenario_path("robot_7dof"))
    grid = VoxelGrid((-1.5, -1.5, 0.0), 0.02, (150, 150, 25))
    grid.log_odds[60:80, 60:80, 5:20] = grid.params.l_max
    field = edt_3d(grid, outside_default=0.8)
    goal = forward_kinematics(chain, np.full(7, 0.35))[-1]
    state = JointState.resting(np.full(7, 0.05))

    columns = ["samples", "threads", "plan_ms_mean", "plan_ms_median", "speedup"]
    rows = []
    for samples in samples_list:
        params = config.planner_params(
            chain.dof, {"samples": samples, "horizon": args.horizon}
        )
        planner = Planner(chain, model, params)
        base = None
        for threads in thread_counts:
            effective = parallel.set_threads(threads)
            planner.smpc_step(state, goal, field, None, 0)  # warm the kernel
            times = []
            nominal = None
            for rep in range(args.reps):
                t0 = time.perf_counter()
                result = planner.smpc_step(state, goal, field, nominal, rep)
                times.append((time.perf_counter() - t0) * 1000.0)
                nominal = result.next_nominal
            mean = statistics.mean(times)
            if base is None:
                base = mean
            rows.append(
                [
                    samples,
                    effective,
                    round(mean, 3),
                    round(statistics.median(times), 3),
                    round(base / mean, 2),
                ]
            )
    _print_table(columns, rows)
    if args.out:
        header = {
            "version": voxplan.__version__,
            "seed": 0,
            "config_hash": config.config_hash(
                {
                    "samples": args.samples,
                    "horizon": args.horizon,
                    "reps": args.reps,
                    "threads": args.threads,
                }
            ),
            "benchmark": "planner",
        }
        _write_table(args.out, header, columns, rows)
    return 0


def _oracle_edt(cases: int, rng: np.random.Generator) -> list[str]:
    from voxplan.mapping import VoxelGrid, edt_3d
    from voxplan.oracles import brute_force_sqdist

    failures = []
    for case in range(cases):
        dims = (16, 16, 16)
        grid = VoxelGrid((0.0, 0.0, 0.0), 0.1, dims)
        density = rng.uniform(0.01, 0.5)
        occ = rng.random(dims) < density
        grid.log_odds[occ] = grid.params.l_max
        got = edt_3d(grid).sq
        expected = brute_force_sqdist(occ)
        if not np.array_equal(got, expected):
            bad = np.argwhere(got != expected)[0]
            failures.append(
                f"edt case {case}: mismatch at voxel {tuple(bad)}: "
                f"got {got[tuple(bad)]}, expected {expected[tuple(bad)]}"
            )
    return failures


def _geometry_failures(cases: int, rng: np.random.Generator) -> list[str]:
    import math

    from voxplan.geometry import Twist6, se3_exp, se3_log
    from voxplan.oracles import se3_log_vector_series

    failures = []
    for case in range(cases):
        omega = rng.normal(size=3)
        norm = np.linalg.norm(omega)
        if norm > 0:
            omega = omega / norm * rng.uniform(0.0, math.pi - 0.01)
        xi = Twist6(rng.normal(size=3), omega)
        transform = se3_exp(xi)
        back = se3_log(transform).as_vector()
        if np.abs(back - xi.as_vector()).max() > 1e-9:
            failures.append(
                f"geometry case {case}: round trip error "
                f"{np.abs(back - xi.as_vector()).max():.3e}"
            )
            continue
        if np.linalg.norm(omega) < 2.5:
            expected = se3_log_vector_series(transform.as_matrix())
            if np.abs(back - expected).max() > 1e-9:
                failures.append(
                    f"geometry case {case}: series oracle disagrees by "
                    f"{np.abs(back - expected).max():.3e}"
                )
    return failures


def _occupancy_failures(cases: int, rng: np.random.Generator) -> list[str]:
    from voxplan.geometry import RigidTransform
    from voxplan.mapping import CameraModel, DepthImage, VoxelGrid, update_occupancy
    from voxplan.oracles import classify_voxels_raycast, raycast_box_depth

    failures = []
    for case in range(cases):
        origin = np.array([-1.0, -1.0, 0.0])
        voxel = 0.05
        dims = (40, 40, 40)
        center = rng.uniform([-0.3, -0.3, 0.7], [0.3, 0.3, 1.1])
        half = rng.uniform(0.1, 0.25, size=3)
        box = (center - half, center + half)
        pose = RigidTransform.from_translation((0.0, 0.0, -0.8))
        cam = CameraModel(70.0, 70.0, 40.0, 30.0, 80, 60, 0.1, 6.0, pose=pose)
        depth = DepthImage(
            raycast_box_depth(
                pose.translation,
                pose.rotation.matrix,
                cam.fx,
                cam.fy,
                cam.cx,
                cam.cy,
                cam.width,
                cam.height,
                cam.d_min,
                cam.d_max,
                [box],
            )
        )
        grid = VoxelGrid(origin, voxel, dims)
        frames = 2
        for _ in range(frames):
            update_occupancy(grid, depth, cam)
        labels, margins = classify_voxels_raycast(
            origin,
            voxel,
            dims,
            pose.as_matrix(),
            cam.fx,
            cam.fy,
            cam.cx,
            cam.cy,
            cam.width,
            cam.height,
            cam.d_min,
            cam.d_max,
            [box],
            grid.tau,
            frames,
            grid.params.l_hit,
            grid.params.l_occ_threshold,
        )
        states = np.asarray(grid.states())
        unambiguous = margins > 2.0 * grid.tau
        mism = unambiguous & (states != labels)
        if mism.any():
            bad = np.argwhere(mism)[0]
            failures.append(
                f"occupancy case {case}: voxel {tuple(bad)} got state "
                f"{states[tuple(bad)]}, oracle says {labels[tuple(bad)]}"
            )
    return failures


def cmd_oracle(args) -> int:
    if args.cases < 0:
        print("error: cases must be >= 0", file=sys.stderr)
        return 1
    if args.cases == 0:
        print(f"warning: 0 cases requested; suite {args.suite} passes vacuously")
        return 0
    parallel.set_threads(parallel.default_threads())
    rng = np.random.default_rng(args.seed)
    runners = {
        "edt": _oracle_edt,
        "geometry": _geometry_failures,
        "occupancy": _occupancy_failures,
    }
    failures = runners[args.suite](args.cases, rng)
    passed = args.cases - len(failures)
    print(f"suite {args.suite}: {passed}/{args.cases} cases passed")
    for line in failures:
        print(f"  FAIL {line}")
    return 0 if not failures else 2


def build_parser() -> _Parser:
    parser = _Parser(prog="voxplan", description=__doc__.splitlines()[0])
    parser.add_argument(
        "--version", action="version", version=f"voxplan {voxplan.__version__}"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run one scenario episode")
    run_p.add_argument("--scenario", required=True, help="scenario YAML path")
    run_p.add_argument("--out", required=True, help="output directory")
    run_p.add_argument(
        "--threads", type=int, default=parallel.default_threads(), help="worker count"
    )
    run_p.add_argument("--seed", type=int, default=None, help="override scenario seed")
    run_p.add_argument("-v", "--verbose", action="store_true")
    run_p.set_defaults(func=cmd_run)

    edt_p = sub.add_parser("bench-edt", help="time fusion and distance transform")
    edt_p.add_argument("--sizes", required=True, help="e.g. 16,64,128x128x64")
    edt_p.add_argument("--reps", type=int, default=10)
    edt_p.add_argument("--threads", default=None, help="comma list, e.g. 1,8")
    edt_p.add_argument("--out", default=None, help="write CSV table here")
    edt_p.set_defaults(func=cmd_bench_edt)

    plan_p = sub.add_parser("bench-planner", help="time planning cycles")
    plan_p.add_argument("--samples", default="512", help="comma list of batch sizes")
    plan_p.add_argument("--horizon", type=int, default=30)
    plan_p.add_argument("--reps", type=int, default=20)
    plan_p.add_argument("--threads", default=None, help="comma list, e.g. 1,8")
    plan_p.add_argument("--out", default=None, help="write CSV table here")
    plan_p.set_defaults(func=cmd_bench_planner)

    oracle_p = sub.add_parser("oracle", help="run brute-force comparison suites")
    oracle_p.add_argument(
        "--suite", required=True, choices=("edt", "geometry", "occupancy")
    )
    oracle_p.add_argument("--cases", type=int, default=25)
    oracle_p.add_argument("--seed", type=int, default=0)
    oracle_p.set_defaults(func=cmd_oracle)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
