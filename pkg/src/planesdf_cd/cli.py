"""Command-line entry point: ``detect``, ``gen`` and ``eval``."""

from __future__ import annotations

import argparse
import logging
import os
import shutil
import sys
import tempfile

from .config import ConfigError, parse_config
from .evaluation import score
from .geometry import GeometryError
from .pipeline import NoPlanesError, detect_changes, evaluate_run, write_direction
from .scene_io import (SCENARIO_KINDS, ParseError, PointCloud, ScenarioError, generate_scene_pair,
                       load_point_cloud, make_scenario, save_point_cloud)

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_CONFIG = 3
EXIT_INTERNAL = 4

log = logging.getLogger("planesdf_cd")


class InputError(Exception):
    pass


def _require_file(path: str, what: str) -> None:
    if not os.path.isfile(path):
        raise InputError(f"{what} not found: {path}")


def _load(path: str, what: str) -> PointCloud:
    _require_file(path, what)
    try:
        return load_point_cloud(path)
    except (ParseError, ValueError) as exc:
        raise InputError(f"cannot read {what}: {exc}") from exc


def _publish(staging: str, out_dir: str) -> None:
    """Move a finished staging directory into place."""
    if not os.path.exists(out_dir):
        os.replace(staging, out_dir)
        return
    for name in sorted(os.listdir(staging)):
        dst = os.path.join(out_dir, name)
        if os.path.isdir(dst):
            shutil.rmtree(dst)
        os.replace(os.path.join(staging, name), dst)
    shutil.rmtree(staging)


def _staging_dir(out_dir: str) -> str:
    parent = os.path.dirname(os.path.abspath(out_dir))
    os.makedirs(parent, exist_ok=True)
    return tempfile.mkdtemp(prefix=".staging-", dir=parent)


def cmd_detect(args) -> int:
    _require_file(args.source, "source cloud")
    _require_file(args.target, "target cloud")
    if args.gt:
        _require_file(args.gt, "ground truth cloud")
    if args.config:
        _require_file(args.config, "config file")
    overrides = list(args.set or [])
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    cfg = parse_config(args.config, overrides)

    source = _load(args.source, "source cloud")
    target = _load(args.target, "target cloud")
    gt = _load(args.gt, "ground truth cloud") if args.gt else None
    if gt is not None and gt.labels is None:
        raise InputError("ground truth cloud has no label property")

    run = detect_changes(source, target, cfg, args.direction)

    staging = _staging_dir(args.out)
    try:
        with open(os.path.join(staging, "config.txt"), "w", encoding="ascii", newline="\n") as fh:
            fh.write(cfg.to_text())
        for name, res in (("forward", run.forward), ("backward", run.backward)):
            if res is not None:
                write_direction(res, os.path.join(staging, name), cfg)
        save_point_cloud(run.changed_points(), os.path.join(staging, "changed_voxels.ply"))
        if gt is not None:
            report = evaluate_run(run, gt, cfg)
            with open(os.path.join(staging, "evaluation.txt"), "w", encoding="ascii", newline="\n") as fh:
                fh.write(report.as_text())
            sys.stdout.write(report.as_text())
        _publish(staging, args.out)
    except BaseException:
        shutil.rmtree(staging, ignore_errors=True)
        raise

    for name, res in (("forward", run.forward), ("backward", run.backward)):
        if res is None:
            continue
        m = res.matches
        log.info("%s: %d pairings, %d unmatched source planes, %d changed cells",
                 name, len(m.pairings), len(m.unmatched_source), res.changed_cells())
    print(f"changed voxels: {len(run.changed_points())} -> {os.path.join(args.out, 'changed_voxels.ply')}")
    return EXIT_OK


def cmd_gen(args) -> int:
    try:
        scn = make_scenario(args.scenario, args.seed, noise_sigma=args.noise, density=args.density,
                            n_objects=args.objects)
        source, target, gt = generate_scene_pair(scn, args.seed)
    except ScenarioError as exc:
        raise InputError(str(exc)) from exc
    staging = _staging_dir(args.out)
    try:
        save_point_cloud(source, os.path.join(staging, "source.ply"))
        save_point_cloud(target, os.path.join(staging, "target.ply"))
        changed = gt.changed_points()
        save_point_cloud(PointCloud(changed.points, None, changed.labels), os.path.join(staging, "gt.ply"))
        rows = ["id,name,shape,height,source_x,source_y,target_x,target_y,changed"]
        for o in scn.objects:
            sx, sy = o.source_xy if o.source_xy is not None else ("", "")
            tx, ty = o.target_xy if o.target_xy is not None else ("", "")
            rows.append(f"{o.id},{o.name},{o.shape},{o.height:.6f},{sx},{sy},{tx},{ty},{int(o.changed)}")
        with open(os.path.join(staging, "objects.csv"), "w", encoding="ascii", newline="\n") as fh:
            fh.write("\n".join(rows) + "\n")
        _publish(staging, args.out)
    except BaseException:
        shutil.rmtree(staging, ignore_errors=True)
        raise
    print(f"{args.scenario} seed {args.seed}: changed objects {gt.changed_ids} -> {args.out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    detected = _load(args.detected, "detected cloud")
    gt = _load(args.gt, "ground truth cloud")
    if gt.labels is None:
        raise InputError("ground truth cloud has no label property")
    report = score(detected, gt, args.radius, args.cluster_cell)
    if args.csv:
        print(report.CSV_HEADER)
        print(report.as_csv_row())
    else:
        sys.stdout.write(report.as_text())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="planesdf-cd", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    d = sub.add_parser("detect", help="detect changes between two point clouds")
    d.add_argument("--source", required=True)
    d.add_argument("--target", required=True)
    d.add_argument("--config")
    d.add_argument("--out", required=True)
    d.add_argument("--direction", choices=("forward", "backward", "both"), default="both")
    d.add_argument("--gt", help="labelled PLY of changed points, enables scoring")
    d.add_argument("--seed", type=int)
    d.add_argument("--set", action="append", metavar="KEY=VALUE", help="config override, repeatable")
    d.set_defaults(func=cmd_detect)

    g = sub.add_parser("gen", help="generate a synthetic tabletop scene pair")
    g.add_argument("--scenario", required=True, choices=SCENARIO_KINDS)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.add_argument("--noise", type=float, default=0.0, help="point noise sigma in metres")
    g.add_argument("--density", type=float, default=40000.0, help="points per square metre")
    g.add_argument("--objects", type=int, default=3)
    g.set_defaults(func=cmd_gen)

    e = sub.add_parser("eval", help="score detected change points against ground truth")
    e.add_argument("--detected", required=True)
    e.add_argument("--gt", required=True)
    e.add_argument("--radius", type=float, default=0.014)
    e.add_argument("--cluster-cell", type=float, default=0.014)
    e.add_argument("--csv", action="store_true")
    e.set_defaults(func=cmd_eval)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except NoPlanesError as exc:
        print(f"error: {exc}; nothing to compare", file=sys.stderr)
        return EXIT_INPUT
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (GeometryError, AssertionError) as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
