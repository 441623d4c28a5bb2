"""Command-line surface: dataset synthesis, depth projection, training,
completion, evaluation, and the gradient self-check.

Exit codes: 0 success, 1 usage, 2 data error, 3 numerical abort.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import metrics as M
from .config import (ConfigError, RunConfig, load_run_config, profile,
                     run_config_from_dict, train_defaults)
from .data import load_dataset, read_xyz, synth_dataset, write_dataset, write_xyz
from .errors import DataError, NumericalAbort
from .model import CompletionModel, complete_cloud, load_model, prepare_input
from .projection import (default_fov_deg, jitter_viewpoints, orthogonal_viewpoints,
                         project_all, write_depth_map, write_raster)
from .tensor import GRAD_CHECK_OPS, grad_check
from .training import restore_optimizer, train

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="svcomplete",
                     description="Point cloud completion pipeline (synthesize, project, "
                                 "train, complete, evaluate, self-check).")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--profile", choices=("pcn", "shapenet55", "desk"), default="desk")

    p = sub.add_parser("project", help="render a cloud into depth maps")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--profile", choices=("pcn", "shapenet55", "desk"), default="desk")
    p.add_argument("--views", type=int, default=None)
    p.add_argument("--res", type=int, default=None)
    p.add_argument("--dist", type=float, default=None)
    p.add_argument("--fov", type=float, default=None)
    p.add_argument("--jitter", action="store_true",
                   help="randomly perturb view angle (<=10 deg) and distance (<=0.1)")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("train", help="train on a dataset directory")
    p.add_argument("--config", default=None, help="JSON run config")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--profile", choices=("pcn", "shapenet55", "desk"), default=None,
                   help="profile when no --config is given (default desk)")
    p.add_argument("--steps", type=int, default=None, help="cap on optimizer steps")
    p.add_argument("--resume", default=None, help="checkpoint directory to resume from")
    p.add_argument("--seed", type=int, default=None)

    p = sub.add_parser("complete", help="complete a partial cloud with a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--dump-stages", action="store_true")
    p.add_argument("--dump-attn", default=None,
                   help="directory for refiner cross-attention maps (f32le + meta)")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("eval", help="evaluate predictions against ground truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", default=None)
    p.add_argument("--metrics", default="cd_l1,cd_l2,dcd,f1")
    p.add_argument("--refs", default=None, help="reference directory for MMD mode")
    p.add_argument("--tau", type=float, default=M.FSCORE_TAU)
    p.add_argument("--dcd-alpha", type=float, default=M.DCD_ALPHA)
    p.add_argument("--variant", choices=("l1", "l2"), default="l1",
                   help="Chamfer variant used by MMD")

    p = sub.add_parser("gradcheck", help="finite-difference check of every op")
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.add_argument("--runs", type=int, default=5)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return _dispatch(parser, args)
    except SystemExit as exc:
        return int(exc.code or 0)
    except (DataError, ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalAbort as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


def _dispatch(parser, args) -> int:
    if args.command == "synth":
        return cmd_synth(parser, args)
    if args.command == "project":
        return cmd_project(parser, args)
    if args.command == "train":
        return cmd_train(parser, args)
    if args.command == "complete":
        return cmd_complete(parser, args)
    if args.command == "eval":
        return cmd_eval(parser, args)
    if args.command == "gradcheck":
        return cmd_gradcheck(parser, args)
    parser.error(f"unknown command {args.command!r}")
    return EXIT_USAGE


def cmd_synth(parser, args) -> int:
    if args.count < 1:
        parser.error("--count must be >= 1")
    cfg = profile(args.profile)
    pairs = synth_dataset(args.count, args.seed, cfg)
    write_dataset(args.out, pairs, args.profile, args.seed)
    print(f"wrote {len(pairs)} pairs to {args.out}")
    return EXIT_OK


def cmd_project(parser, args) -> int:
    cfg = profile(args.profile)
    n_views = args.views if args.views is not None else cfg.n_views
    res = args.res if args.res is not None else cfg.view_res
    dist = args.dist if args.dist is not None else cfg.view_distance
    if n_views < 1:
        parser.error("--views must be >= 1")
    fov = args.fov if args.fov is not None else default_fov_deg(cfg.half_extent, dist)
    cloud = read_xyz(args.input)
    views = orthogonal_viewpoints(dist)
    views = (views * ((n_views + 2) // 3))[:n_views]
    if args.jitter:
        views = jitter_viewpoints(views, np.random.default_rng(args.seed))
    view_set = project_all(cloud, views, res, fov)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i, dm in enumerate(view_set.maps):
        write_depth_map(out / f"view{i}", dm)
    print(f"wrote {len(view_set.maps)} depth maps ({res}x{res}) to {out}")
    return EXIT_OK


def _run_config(args) -> RunConfig:
    if args.config is not None:
        run = load_run_config(args.config)
        if args.profile is not None and run.model.profile != args.profile:
            raise ConfigError("--profile conflicts with the profile in --config")
    else:
        run = run_config_from_dict({"profile": args.profile or "desk"})
    return run


def cmd_train(parser, args) -> int:
    run = _run_config(args)
    tc = run.train
    if args.steps is not None:
        from dataclasses import replace
        tc = replace(tc, steps=args.steps)
    if args.seed is not None:
        from dataclasses import replace
        tc = replace(tc, seed=args.seed)
    run = RunConfig(model=run.model, train=tc, seed=tc.seed)
    pairs = load_dataset(args.data)
    if args.resume is not None:
        model, extras = load_model(args.resume)
        optimizer, start_step = restore_optimizer(model, extras, lr=tc.lr)
    else:
        model = CompletionModel(run.model, seed=tc.seed)
        optimizer, start_step = None, 0
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.time()
    train(model, pairs, run, out, trace_path=out / "trace.csv",
          start_step=start_step, optimizer=optimizer)
    print(f"trained to step {tc.steps if tc.steps is not None else 'end'} "
          f"in {time.time() - t0:.1f}s; checkpoint at {out}")
    return EXIT_OK


def cmd_complete(parser, args) -> int:
    model, _ = load_model(args.ckpt)
    cloud = read_xyz(args.input)
    stages = complete_cloud(model, cloud, seed=args.seed)
    out = Path(args.out)
    if out.parent != Path(""):
        out.parent.mkdir(parents=True, exist_ok=True)
    write_xyz(out, stages["final"])
    if args.dump_stages:
        base = out.with_suffix("")
        for name in ("coarse", "merged", "refine1"):
            write_xyz(base.parent / f"{base.name}.{name}.xyz", stages[name])
    if args.dump_attn is not None:
        attn_dir = Path(args.dump_attn)
        attn_dir.mkdir(parents=True, exist_ok=True)
        for name, weights in model.attention_dumps().items():
            write_raster(attn_dir / name, weights, {})
    print(f"wrote {stages['final'].shape[0]} points to {out}")
    return EXIT_OK


def _cloud_files(directory) -> dict[str, Path]:
    directory = Path(directory)
    files = sorted(directory.glob("*.xyz"))
    if not files:
        raise DataError(f"{directory}: no .xyz files")
    return {f.stem: f for f in files}


def _categories(directory) -> dict[str, str]:
    index = Path(directory) / "index.json"
    if not index.exists():
        return {}
    with open(index) as fh:
        data = json.load(fh)
    return {e["id"]: e.get("category", "all") for e in data.get("pairs", [])}


def cmd_eval(parser, args) -> int:
    names = [m.strip() for m in args.metrics.split(",") if m.strip()]
    if names == ["mmd"]:
        if args.refs is None:
            parser.error("--metrics mmd requires --refs")
        preds = _cloud_files(args.pred)
        refs = [read_xyz(p) for p in _cloud_files(args.refs).values()]
        values = []
        for pid, path in preds.items():
            best = min(M.chamfer(read_xyz(path), ref, args.variant) for ref in refs)
            values.append(best)
            print(f"{pid} {best:.6f}")
        print(f"MEAN {float(np.mean(values)):.6f}")
        return EXIT_OK
    known = ("cd_l1", "cd_l2", "dcd", "f1")
    bad = [n for n in names if n not in known]
    if bad:
        parser.error(f"unknown metric(s) {bad}; known: {', '.join(known + ('mmd',))}")
    if args.gt is None:
        parser.error("--gt is required unless --metrics mmd")
    preds = _cloud_files(args.pred)
    gts = _cloud_files(args.gt)
    missing = sorted(set(preds) - set(gts))
    if missing:
        raise DataError(f"no ground truth for: {', '.join(missing[:5])}")
    cats = _categories(args.gt)
    report = M.MetricReport()
    for pid in sorted(preds):
        row = M.evaluate_pair(read_xyz(preds[pid]), read_xyz(gts[pid]),
                              dcd_alpha=args.dcd_alpha, tau=args.tau)
        report.add(pid, row, cats.get(pid.split(".")[0], "all"))
        print(f"{pid} " + " ".join(f"{row[n]:.6f}" for n in names))
    mean = report.mean()
    print("MEAN " + " ".join(f"{mean[n]:.6f}" for n in names))
    if cats:
        for cat, values in report.by_category().items():
            print(f"# {cat} " + " ".join(f"{values[n]:.6f}" for n in names))
    return EXIT_OK


def cmd_gradcheck(parser, args) -> int:
    failed = []
    print(f"{'op':<20} {'max rel err':>12}  result")
    for name in GRAD_CHECK_OPS:
        worst = max(grad_check(name, tolerance=args.tolerance, seed=seed)
                    for seed in range(args.runs))
        ok = worst < args.tolerance
        print(f"{name:<20} {worst:>12.3e}  {'PASS' if ok else 'FAIL'}")
        if not ok:
            failed.append(name)
    if failed:
        print(f"gradient check failed for: {', '.join(failed)}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
