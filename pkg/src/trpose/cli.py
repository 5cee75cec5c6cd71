"""Command line entry point: generate a synthetic dataset, sample training
pairs, train a regressor, and evaluate checkpoints into report tables and
charts.  Exit codes: 0 success, 1 usage or config error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import os
import sys

import numpy as np

from .configfile import (ConfigError, camera_from_config, load_config,
                         model_from_config, run_plan_from_config,
                         train_from_config, world_from_config)
from .data import ImageCache, PairDataset, load_pairs, save_pairs
from .evaluation import (EvalReport, ModelPredictor, OraclePredictor,
                         error_cdf, integrate_vo, localize_standalone,
                         path_follow, rmse_matrix)
from .geometry import Pose2, relative_pose
from .model import init, load_checkpoint
from .plots import plot_error_cdfs, plot_fusion_trace, plot_rmse_matrix, plot_tracks
from .pose_graph import LOCALIZATION, VO, PoseGraph
from .training import train
from .world import generate_dataset

_KIND_BY_FLAG = {"vo": VO, "loc": LOCALIZATION}


class CliParser(argparse.ArgumentParser):
    """argparse exits 2 on usage errors; this project reserves 2 for runtime
    failures, so usage errors exit 1 instead."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _parse_int_list(text: str) -> list[int]:
    return [int(tok) for tok in text.split(",") if tok]


def _write_run_manifest(out_dir: str, command: str, args: argparse.Namespace) -> None:
    payload = {"command": command}
    payload.update({k: v for k, v in sorted(vars(args).items()) if k != "func"})
    with open(os.path.join(out_dir, "run_manifest.json"), "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")


# -- generate -----------------------------------------------------------------

def cmd_generate(args) -> int:
    cfg = load_config(args.config)
    world = world_from_config(cfg)
    camera = camera_from_config(cfg)
    sweep = args.sweep.split(",") if args.sweep else None
    plan = run_plan_from_config(cfg, seed_base=args.seed, sweep=sweep)
    os.makedirs(args.out, exist_ok=True)

    label_seed = args.seed if args.seed is not None else cfg["runs"].getint("seed_base")
    gen = generate_dataset(
        world, camera, plan, args.out,
        label_noise_sigma=cfg["runs"].getfloat("label_noise_sigma"),
        label_seed=label_seed)

    graph_path = os.path.join(args.out, "graph.txt")
    gen.graph.save(graph_path)

    with open(os.path.join(args.out, "runs.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["run", "index", "x", "y", "theta", "condition"])
        for run, (poses, name) in enumerate(zip(gen.global_poses, gen.condition_names)):
            for i, p in enumerate(poses):
                writer.writerow([run, i, repr(p.x), repr(p.y), repr(p.theta), name])

    with open(os.path.join(args.out, "images_manifest.tsv"), "w") as fh:
        fh.write("run\tindex\tleft\tright\n")
        for run in gen.graph.runs():
            for kf in gen.graph.keyframes(run):
                fh.write(f"{run}\t{kf.id.index}\t{kf.image_left}\t{kf.image_right}\n")

    _write_run_manifest(args.out, "generate", args)
    total = sum(len(p) for p in gen.global_poses)
    print(f"teach + {len(plan) - 1} repeat runs: {total} keyframes, "
          f"{2 * total} images")
    print(f"graph: {graph_path}")
    return 0


# -- sample -------------------------------------------------------------------

def cmd_sample(args) -> int:
    graph = PoseGraph.load(args.graph)
    rng = np.random.default_rng(args.seed)
    runs = _parse_int_list(args.runs) if args.runs else None
    kind = _KIND_BY_FLAG[args.kind]
    if kind == VO:
        pool = [p for r in (runs if runs is not None else graph.runs())
                for p in graph.sample_vo_pairs(r)]
        perm = rng.permutation(len(pool))
        pairs = [pool[i] for i in perm[:args.n]]
    else:
        pairs = graph.sample_localization_pairs(args.n, rng,
                                                spatial_hops=args.hops, runs=runs)
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, f"pairs_{kind}.txt")
    save_pairs(pairs, path)
    _write_run_manifest(args.out, "sample", args)
    print(f"{len(pairs)} {kind} pairs: {path}")
    return 0


# -- train --------------------------------------------------------------------

def cmd_train(args) -> int:
    cfg = load_config(args.config)
    graph = PoseGraph.load(args.graph)
    pairs = load_pairs(args.manifest)
    kinds = {p.kind for p in pairs}
    if len(kinds) != 1:
        raise ValueError(f"manifest mixes pair kinds {sorted(kinds)}; train on one kind")
    kind = kinds.pop()

    train_cfg = train_from_config(cfg)
    if args.seed is not None:
        train_cfg = dataclasses.replace(train_cfg, seed=args.seed)

    if args.resume:
        model = load_checkpoint(args.resume)
        net_cfg = model.config
    else:
        net_cfg = model_from_config(cfg)
        model = init(net_cfg, train_cfg.seed)

    rng = np.random.default_rng(train_cfg.seed)
    perm = rng.permutation(len(pairs))
    pairs = [pairs[i] for i in perm]
    n_val = min(max(int(round(len(pairs) * train_cfg.val_fraction)), 1), len(pairs) - 1)
    size = (net_cfg.input_height, net_cfg.input_width)
    cache = ImageCache()
    val_set = PairDataset(graph, pairs[:n_val], size, cache)
    train_set = PairDataset(graph, pairs[n_val:], size, cache)

    os.makedirs(args.out, exist_ok=True)
    ckpt_path = os.path.join(args.out, f"checkpoint_{kind}.pt")
    model, report = train(model, train_set, val_set, train_cfg,
                          checkpoint_path=ckpt_path, log=print)
    report.to_csv(os.path.join(args.out, f"train_report_{kind}.csv"))
    _write_run_manifest(args.out, "train", args)
    print(f"best checkpoint (epoch {report.best_epoch}, "
          f"val {report.best_val_loss:.6f}): {ckpt_path}")
    return 0


# -- evaluate -----------------------------------------------------------------

def _truth_tracks(graph_path: str, runs: list[int]) -> dict[int, list[Pose2]]:
    """Ground-truth tracks from the runs.csv written at generation time,
    rebased to each run's first pose so they overlay the integrated VO."""
    path = os.path.join(os.path.dirname(os.path.abspath(graph_path)), "runs.csv")
    if not os.path.isfile(path):
        return {}
    per_run: dict[int, list[Pose2]] = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            per_run.setdefault(int(row["run"]), []).append(
                Pose2(float(row["x"]), float(row["y"]), float(row["theta"])))
    return {r: [relative_pose(p, poses[0]) for p in poses]
            for r, poses in per_run.items() if r in runs}


def cmd_evaluate(args) -> int:
    graph = PoseGraph.load(args.graph)
    test_runs = _parse_int_list(args.runs) if args.runs \
        else [r for r in graph.runs() if r > 0]
    if not test_runs:
        raise ValueError("no repeat runs to evaluate")

    if args.stub_oracle:
        vo_pred = loc_pred = OraclePredictor(graph)
    else:
        if not (args.vo_model and args.loc_model):
            raise ValueError("need --vo-model and --loc-model, or --stub-oracle")
        cache = ImageCache()
        vo_pred = ModelPredictor(graph, load_checkpoint(args.vo_model), cache=cache)
        loc_pred = ModelPredictor(graph, load_checkpoint(args.loc_model), cache=cache)

    cells = rmse_matrix(graph, vo_pred, loc_pred, test_runs)

    vo_tracks = {}
    for r in test_runs:
        vo_pairs = graph.sample_vo_pairs(r)
        preds = vo_pred.predict_many([(p.a, p.b) for p in vo_pairs])
        vo_tracks[r] = integrate_vo(preds)

    cdfs = {}
    for r in test_runs:
        trace = localize_standalone(graph, loc_pred, r, 0)
        cdfs[f"run{r:02d}_vs_teach"] = error_cdf(trace)

    w_vo, w_loc = (float(v) for v in args.weights.split(","))
    follow_run = args.follow_run if args.follow_run is not None else test_runs[0]
    fusion = path_follow(graph, vo_pred, loc_pred, follow_run, 0,
                         window=args.window, fusion_weights=(w_vo, w_loc))

    report = EvalReport(matrix=cells, vo_tracks=vo_tracks, cdfs=cdfs,
                        fusion_traces=[fusion])
    written = report.save(args.out)
    written.append(plot_rmse_matrix(cells, os.path.join(args.out, "rmse_matrix.png")))
    written.append(plot_tracks(vo_tracks, os.path.join(args.out, "vo_tracks.png"),
                               reference=_truth_tracks(args.graph, test_runs)))
    written.append(plot_error_cdfs(cdfs, os.path.join(args.out, "error_cdfs.png")))
    written.append(plot_fusion_trace(
        fusion, os.path.join(args.out, f"fusion_run{fusion.repeat_run:02d}.png")))
    _write_run_manifest(args.out, "evaluate", args)
    for path in written:
        print(path)
    return 0


# -- wiring -------------------------------------------------------------------

def build_parser() -> CliParser:
    parser = CliParser(prog="trpose",
                       description="Teach-and-repeat relative pose toolkit")
    sub = parser.add_subparsers(dest="command", required=True,
                                parser_class=CliParser)

    p = sub.add_parser("generate", help="render a synthetic dataset and its pose graph")
    p.add_argument("--config", help="config file (defaults built in)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, help="override the run seed base")
    p.add_argument("--sweep", help="comma list of conditions, one repeat each")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("sample", help="sample labeled training pairs from a graph")
    p.add_argument("--graph", required=True, help="pose graph file")
    p.add_argument("--kind", required=True, choices=sorted(_KIND_BY_FLAG))
    p.add_argument("--n", type=int, default=1000, help="number of pairs")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--hops", type=int, default=0, help="teach-chain hops when sampling")
    p.add_argument("--runs", help="comma list of runs to sample from")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("train", help="train a regressor on a pairs manifest")
    p.add_argument("--config", help="config file (defaults built in)")
    p.add_argument("--graph", required=True)
    p.add_argument("--manifest", required=True, help="pairs manifest from `sample`")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, help="override the training seed")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="write report tables and charts")
    p.add_argument("--graph", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--vo-model", help="VO checkpoint")
    p.add_argument("--loc-model", help="localization checkpoint")
    p.add_argument("--stub-oracle", action="store_true",
                   help="replace both models with the ground-truth oracle")
    p.add_argument("--runs", help="comma list of runs to evaluate (default: all repeats)")
    p.add_argument("--window", type=int, default=5,
                   help="teach keyframes considered per fusion step")
    p.add_argument("--weights", default="0.3,0.7", help="fusion weights W_VO,W_LOC")
    p.add_argument("--follow-run", type=int, help="repeat run for the fusion trace")
    p.set_defaults(func=cmd_evaluate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"{parser.prog}: config error: {e}", file=sys.stderr)
        return 1
    except Exception as e:
        print(f"{parser.prog}: error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
