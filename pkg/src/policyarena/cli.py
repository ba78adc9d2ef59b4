"""Batch command-line front door.

Three entry points:
  arena    rank / report        -- fit rankings from a log, tabulate scores
  perturb  color / poses / bg   -- generate perturbation variants
  sysid    run                  -- identify PD gains on recorded trajectories

Exit codes: 0 success, 1 input error, 2 statistical infeasibility
(disconnected comparison graph or empty decisive set).
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import perturb as perturb_mod
from . import progress, ranking, sysid as sysid_mod
from .errors import (
    EmptyDecisiveSet,
    GraphDisconnected,
    NotInCatalog,
    OptimizationFailed,
)

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_INFEASIBLE = 2


def _fail(message: str, code: int = EXIT_INPUT) -> int:
    print(message, file=sys.stderr)
    return code


# ---------------------------------------------------------------------------
# arena

def cmd_rank(args) -> int:
    try:
        records = ranking.load_comparison_log(args.log)
    except OSError as exc:
        return _fail(f"cannot read log: {exc}")
    except ValueError as exc:
        return _fail(f"malformed log: {exc}")
    if not records:
        return _fail("log contains no records")
    try:
        report = ranking.fit_bradley_terry(records)
        estimate = ranking.estimate_with_covariance(report, records)
    except GraphDisconnected as exc:
        print("comparison graph is disconnected; components:", file=sys.stderr)
        for comp in exc.components:
            print("  " + ", ".join(comp), file=sys.stderr)
        return EXIT_INFEASIBLE
    except EmptyDecisiveSet:
        return _fail("no decisive comparisons in log", EXIT_INFEASIBLE)
    bands = ranking.confidence_intervals(estimate, args.alpha)
    ranked = ranking.global_ranking(estimate, bands)

    payload = ranking.fit_report_to_json(report, estimate.centered_covariance)
    payload["thetas"] = [float(t) for t in estimate.thetas]
    payload["alpha"] = args.alpha
    payload["intervals"] = [
        {"policy": p, "lower": float(lo), "upper": float(hi)}
        for p, lo, hi in zip(estimate.policies, bands.lower, bands.upper)
    ]
    payload["ranking"] = [
        {"policy": r.policy, "rank": r.rank, "beta": r.beta, "decisive": r.decisive}
        for r in ranked
    ]
    if args.output:
        Path(args.output).write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")

    idx = {p: k for k, p in enumerate(estimate.policies)}
    print(f"{'rank':>4}  {'policy':<20} {'beta':>10} {'theta':>10} "
          f"{'ci_low':>10} {'ci_high':>10}  decisive")
    for r in ranked:
        k = idx[r.policy]
        print(
            f"{r.rank:>4}  {r.policy:<20} {r.beta:>10.4f} "
            f"{float(estimate.thetas[k]):>10.4f} "
            f"{float(bands.lower[k]):>10.4f} {float(bands.upper[k]):>10.4f}  "
            f"{'yes' if r.decisive else 'no'}"
        )
    if report.flags:
        print("flags: " + ", ".join(sorted(report.flags)))
    return EXIT_OK


def cmd_report(args) -> int:
    scores_dir = Path(args.scores)
    if not scores_dir.is_dir():
        return _fail(f"not a directory: {scores_dir}")
    groups: dict[tuple[str, str], list[float]] = {}
    for path in sorted(scores_dir.glob("*.jsonl")):
        try:
            entries = progress.load_series_file(path)
        except (ValueError, KeyError) as exc:
            return _fail(f"malformed series file {path}: {exc}")
        for series, meta in entries:
            policy = meta.get("policy", "unknown")
            group = meta.get(args.group_by, "all")
            value = progress.aggregate(series, progress.AggregationMethod.FINAL_30).value
            groups.setdefault((policy, str(group)), []).append(value)
    if not groups:
        return _fail("no score series found")

    writer = csv.writer(sys.stdout if not args.output else open(args.output, "w", newline=""))
    writer.writerow(["policy", args.group_by, "mean_final30", "sem", "n"])
    for (policy, group), values in sorted(groups.items()):
        mean = float(np.mean(values))
        sem_cell = f"{progress.sem(values):.6f}" if len(values) >= 2 else ""
        writer.writerow([policy, group, f"{mean:.6f}", sem_cell, len(values)])
    return EXIT_OK


def main_arena(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="arena", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_rank = sub.add_parser("rank", help="fit a leaderboard from a comparison log")
    p_rank.add_argument("log", help="JSONL comparison log")
    p_rank.add_argument("--alpha", type=float, default=0.05)
    p_rank.add_argument("--output", help="write the JSON leaderboard here")
    p_rank.set_defaults(func=cmd_rank)

    p_report = sub.add_parser("report", help="aggregate frame-score series to CSV")
    p_report.add_argument("scores", help="directory of JSONL score series files")
    p_report.add_argument(
        "--group-by", default="environment", choices=["environment", "perturbation", "task"]
    )
    p_report.add_argument("--output", help="write CSV here instead of stdout")
    p_report.set_defaults(func=cmd_report)

    args = parser.parse_args(argv)
    return args.func(args)


# ---------------------------------------------------------------------------
# perturb

def cmd_perturb_color(args) -> int:
    try:
        image = perturb_mod.load_image(args.input)
        mask = perturb_mod.load_mask(args.mask) if args.mask else None
        out = perturb_mod.color_swap(image, mask, args.alpha)
    except (OSError, ValueError) as exc:
        return _fail(str(exc))
    perturb_mod.save_image(out, args.output)
    return EXIT_OK


def cmd_perturb_poses(args) -> int:
    try:
        scene = perturb_mod.load_scene(args.scene)
    except (OSError, ValueError, KeyError) as exc:
        return _fail(f"cannot load scene: {exc}")
    outdir = Path(args.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    for k, variant in enumerate(perturb_mod.pose_permutations(scene, args.seed)):
        perturb_mod.save_scene(variant, outdir / f"{scene.scene_id}_pose{k}.json")
    return EXIT_OK


def cmd_perturb_bg(args) -> int:
    try:
        scene = perturb_mod.load_scene(args.scene)
        catalog = args.catalog.split(",") if args.catalog else [args.id]
        swapped = perturb_mod.swap_background(scene, args.id, catalog)
    except (OSError, ValueError, KeyError, NotInCatalog) as exc:
        return _fail(str(exc))
    perturb_mod.save_scene(swapped, args.output)
    return EXIT_OK


def main_perturb(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="perturb", description="scene perturbations")
    sub = parser.add_subparsers(dest="command", required=True)

    p_color = sub.add_parser("color", help="blend background pixels toward BGR")
    p_color.add_argument("--alpha", type=float, required=True)
    p_color.add_argument("--mask", help="8-bit mask PNG; >= 128 marks background")
    p_color.add_argument("input")
    p_color.add_argument("output")
    p_color.set_defaults(func=cmd_perturb_color)

    p_poses = sub.add_parser("poses", help="emit the N pose-permutation variants")
    p_poses.add_argument("--seed", type=int, default=0)
    p_poses.add_argument("scene")
    p_poses.add_argument("outdir")
    p_poses.set_defaults(func=cmd_perturb_poses)

    p_bg = sub.add_parser("bg", help="swap the background reference")
    p_bg.add_argument("--id", required=True)
    p_bg.add_argument("--catalog", help="comma-separated background ids")
    p_bg.add_argument("scene")
    p_bg.add_argument("output")
    p_bg.set_defaults(func=cmd_perturb_bg)

    args = parser.parse_args(argv)
    return args.func(args)


# ---------------------------------------------------------------------------
# sysid

def _quat_to_matrix(w: float, x: float, y: float, z: float) -> np.ndarray:
    n = np.sqrt(w * w + x * x + y * y + z * z)
    w, x, y, z = w / n, x / n, y / n, z / n
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def _load_trajectory(path):
    """JSONL per timestep: {t, q, x: [3], quat: [w, x, y, z]}."""
    positions, rotations = [], []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            positions.append([float(v) for v in obj["x"]])
            quat = obj.get("quat", [1.0, 0.0, 0.0, 0.0])
            rotations.append(_quat_to_matrix(*[float(v) for v in quat]))
    if not positions:
        raise ValueError(f"empty trajectory file {path}")
    return sysid_mod.EePoseTrajectory(
        positions=np.asarray(positions), orientations=np.asarray(rotations)
    )


def cmd_sysid_run(args) -> int:
    traj_dir = Path(args.traj)
    files = sorted(traj_dir.glob("*.jsonl")) if traj_dir.is_dir() else []
    if not files:
        return _fail(f"no trajectory files in {args.traj}")
    try:
        trajectories = [_load_trajectory(f) for f in files]
    except (ValueError, KeyError) as exc:
        return _fail(f"malformed trajectory: {exc}")
    # the recorded end-effector path doubles as the position command sequence
    commands = [t.positions for t in trajectories]
    bounds = sysid_mod.GainBounds(
        kp=(args.kp_min, args.kp_max), kd=(args.kd_min, args.kd_max)
    )
    config = sysid_mod.AnnealConfig(steps=args.steps, seed=args.seed)

    def plant(gains, cmd):
        return sysid_mod.reference_plant(gains, cmd, dt=args.dt, mass=args.mass)

    try:
        gains, loss, trace = sysid_mod.anneal_gains(
            plant, commands, trajectories, bounds, config
        )
    except OptimizationFailed as exc:
        return _fail(f"gain search failed: {exc}", EXIT_INFEASIBLE)
    result = {"kp": gains.kp, "kd": gains.kd, "loss": loss, "trace": trace}
    out = Path(args.output) if args.output else Path("sysid_result.json")
    out.write_text(json.dumps(result) + "\n", encoding="utf-8")

    # XY overlay of ground truth vs simulated positions at the fitted gains
    overlay = out.with_suffix(".csv")
    with open(overlay, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["trajectory", "t", "gt_x", "gt_y", "sim_x", "sim_y"])
        for name, cmd, gt in zip(files, commands, trajectories):
            sim = plant(gains, cmd)
            for t in range(len(gt)):
                writer.writerow(
                    [
                        name.stem,
                        t,
                        f"{gt.positions[t, 0]:.6f}",
                        f"{gt.positions[t, 1]:.6f}",
                        f"{sim.positions[t, 0]:.6f}",
                        f"{sim.positions[t, 1]:.6f}",
                    ]
                )
    print(f"kp={gains.kp:.2f} kd={gains.kd:.2f} loss={loss:.6f}")
    print(f"wrote {out} and {overlay}")
    return EXIT_OK


def main_sysid(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="sysid", description="PD gain identification")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="anneal PD gains against recorded trajectories")
    p_run.add_argument("--traj", required=True, help="directory of JSONL trajectories")
    p_run.add_argument("--steps", type=int, default=5000)
    p_run.add_argument("--seed", type=int, default=0)
    p_run.add_argument("--kp-min", type=float, default=sysid_mod.KP_BOUNDS[0])
    p_run.add_argument("--kp-max", type=float, default=sysid_mod.KP_BOUNDS[1])
    p_run.add_argument("--kd-min", type=float, default=sysid_mod.KD_BOUNDS[0])
    p_run.add_argument("--kd-max", type=float, default=sysid_mod.KD_BOUNDS[1])
    # the default keeps the whole default gain box stable under the
    # semi-implicit integrator (needs dt * kd / mass < 2)
    p_run.add_argument("--dt", type=float, default=0.001)
    p_run.add_argument("--mass", type=float, default=1.0)
    p_run.add_argument("--output", help="result JSON path")
    p_run.set_defaults(func=cmd_sysid_run)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main_arena())
