"""Command-line entry point: datasets, training, generation, evaluation.

Every command is reproducible from its persisted config snapshot; exit
codes are 0 (success), 2 (usage error), 3 (numerical abort).
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys

import numpy as np

from . import data, generate, metrics, sources, train
from .bw import Gaussian
from .entropic import PointCloud

EXIT_USAGE = 2
EXIT_NUMERICAL = 3


class UsageError(ValueError):
    pass


def _seed_or_env(seed):
    if seed is not None:
        return int(seed)
    return int(os.environ.get("WFM_SEED", "0"))


# ---------------------------------------------------------------- dataset

def _cmd_dataset(args) -> int:
    if args.generator == "make-spiral":
        ds = data.make_spiral_gaussians(args.count, noise=args.noise,
                                        seed=_seed_or_env(args.seed))
    elif args.generator == "make-moons":
        ds = data.make_moons_gaussians(args.count, seed=_seed_or_env(args.seed),
                                       noise=args.noise)
    elif args.generator == "make-sphere":
        ds = data.make_sphere_gaussians(args.count, seed=_seed_or_env(args.seed))
    elif args.generator == "make-shapes":
        families = [f.strip() for f in args.families.split(",") if f.strip()]
        if not families:
            raise UsageError("--families must name at least one shape family")
        seed = _seed_or_env(args.seed)
        parts = []
        for i, family in enumerate(families):
            parts.append(data.make_shape_pointclouds(
                family, args.count, n_range=(args.min_points, args.max_points),
                jitter=args.jitter, seed=seed + i,
                label=i if len(families) > 1 else None))
        ds = parts[0] if len(parts) == 1 else data.concat_datasets(parts)
    elif args.generator == "from-image":
        grid = data.read_pgm(args.image)
        cloud = data.image_to_pointcloud(grid, args.threshold)
        ds = data.PointCloudDataset([cloud], dim=2,
                                    metadata={"generator": "from-image",
                                              "image": os.path.basename(args.image),
                                              "threshold": args.threshold})
    elif args.generator == "split":
        ds = data.load_dataset(args.data)
        tr, te = data.split(ds, args.test_fraction, seed=_seed_or_env(args.seed))
        data.save_dataset(args.train_out, tr)
        data.save_dataset(args.test_out, te)
        return 0
    else:  # pragma: no cover - argparse restricts choices
        raise UsageError(f"unknown generator {args.generator!r}")
    data.save_dataset(args.out, ds)
    return 0


# ------------------------------------------------------------------ train

_TRAIN_FLAGS = {
    "steps": "steps", "batch": "batch_size", "lr": "base_lr",
    "baseline": "baseline", "epsilon": "epsilon",
    "hidden": "hidden", "layers": "layers",
    "embed": "embed", "heads": "heads", "blocks": "blocks",
    "t_samples": "t_samples", "checkpoint_every": "checkpoint_every",
}


def _build_train_config(args) -> train.TrainConfig:
    # precedence: flags > config file > defaults
    cfg_dict: dict = {}
    if args.config:
        with open(args.config) as fh:
            cfg_dict.update(json.load(fh))
    cfg_dict["geometry"] = args.geo
    for flag, key in _TRAIN_FLAGS.items():
        value = getattr(args, flag)
        if value is not None:
            cfg_dict[key] = value
    if args.seed is not None or "seed" not in cfg_dict:
        cfg_dict["seed"] = _seed_or_env(args.seed)
    if args.epsilon_raw:
        cfg_dict["epsilon_normalized"] = False
    if args.multisample != "auto":
        cfg_dict["multisample"] = args.multisample == "on"
    if args.interpolant != "auto":
        cfg_dict["interpolant"] = args.interpolant
    if args.conditional:
        cfg_dict["conditional"] = True
    if args.paper_scale:
        base = train.TrainConfig.paper_scale(args.geo).to_json()
        base.update(cfg_dict)
        cfg_dict = base
    elif args.geo == "pc":
        base = train.TrainConfig.desk_pc().to_json()
        base.update(cfg_dict)
        cfg_dict = base
    return train.TrainConfig.from_json(cfg_dict)


def _cmd_train(args) -> int:
    cfg = _build_train_config(args)
    dataset = data.load_dataset(args.data)
    if cfg.geometry == "bw" and dataset.kind != "gaussian":
        raise UsageError("bw geometry requires a Gaussian dataset")
    if cfg.geometry == "pc" and dataset.kind != "pointcloud":
        raise UsageError("pc geometry requires a point-cloud dataset")

    def progress(step, loss):
        if not args.quiet:
            print(f"step {step}: loss {loss:.6f}", flush=True)

    train.train(cfg, dataset, run_dir=args.out, progress=progress)
    return 0


# --------------------------------------------------------------- generate

def _cmd_generate(args) -> int:
    model, cfg, spec, extra = train.load_checkpoint_bundle(args.checkpoint)
    geometry = extra["geometry"]
    vocab = int(extra.get("label_vocab", 0))
    label = args.cond
    if label is not None and vocab == 0:
        raise UsageError("checkpoint was trained unconditionally; --cond invalid")
    if label is not None and not 0 <= label < vocab:
        raise UsageError(f"--cond must be in [0, {vocab})")
    rng = np.random.default_rng(_seed_or_env(args.seed))
    n_steps = args.steps or (generate.DEFAULT_BW_STEPS if geometry == "bw"
                             else generate.DEFAULT_PC_STEPS)

    items, trajectories = [], []
    if geometry == "bw":
        baseline = extra.get("baseline", train.RIEMANNIAN)
        field = generate.model_bw_field(model["mean"], model["cov"], label=label)
        for _ in range(args.count):
            init = sources.sample_source_bw(spec, rng)
            if baseline == train.RIEMANNIAN:
                g, traj, _ = generate.generate_bw(
                    field, init, n_steps,
                    keep_trajectory=args.trajectory is not None)
            else:
                g, traj, _ = generate.generate_bw_euclidean(field, init, n_steps)
            items.append(g)
            trajectories.append(traj)
        ds = data.GaussianDataset(
            items, dim=spec.mean_loc.shape[0],
            labels=[label] * len(items) if label is not None else None,
            metadata={"generator": "generate", "checkpoint": os.path.basename(args.checkpoint),
                      "count": args.count, "steps": n_steps})
    else:
        field = generate.model_pc_field(model["field"], label=label)
        for _ in range(args.count):
            n = args.points or sources.sample_source_size(spec, rng)
            init = sources.sample_source_pc(spec, n, rng)
            cloud, traj = generate.generate_pc(
                field, init, n_steps,
                keep_trajectory=args.trajectory is not None)
            items.append(cloud)
            trajectories.append(traj)
        ds = data.PointCloudDataset(
            items, dim=spec.dim,
            labels=[label] * len(items) if label is not None else None,
            metadata={"generator": "generate", "checkpoint": os.path.basename(args.checkpoint),
                      "count": args.count, "steps": n_steps})
    data.save_dataset(args.out, ds)
    if args.trajectory is not None:
        os.makedirs(args.trajectory, exist_ok=True)
        cls = data.GaussianDataset if geometry == "bw" else data.PointCloudDataset
        dim = ds.dim
        for i, traj in enumerate(trajectories):
            if traj is None:
                continue
            tds = cls(traj, dim=dim, metadata={"generator": "trajectory", "sample": i})
            data.save_dataset(os.path.join(args.trajectory, f"traj_{i:04d}.jsonl"), tds)
    return 0


# ------------------------------------------------------------------- eval

_METRIC_CHOICES = ("min-bw", "1nn-bw", "1nn-cd", "1nn-emd", "label-1nn-cd",
                   "label-1nn-bw")


def _eval_metric(name, gen_ds, ref_ds):
    gaussian = gen_ds.kind == "gaussian"
    if name == "min-bw":
        if not gaussian:
            raise UsageError("min-bw requires Gaussian datasets")
        return metrics.min_bw_to_dataset(gen_ds.items, ref_ds.items)
    if name == "1nn-bw":
        if not gaussian:
            raise UsageError("1nn-bw requires Gaussian datasets")
        return metrics.one_nn_accuracy(gen_ds.items, ref_ds.items, metric="bw")
    if name in ("1nn-cd", "1nn-emd"):
        if gaussian:
            raise UsageError(f"{name} requires point-cloud datasets")
        return metrics.one_nn_accuracy(gen_ds.items, ref_ds.items,
                                       metric=name.split("-")[1])
    if name.startswith("label-1nn"):
        kind = name.rsplit("-", 1)[1]
        if (kind == "bw") != gaussian:
            raise UsageError(f"{name} does not match the dataset kind")
        return metrics.label_accuracy_1nn(gen_ds.items, gen_ds.labels,
                                          ref_ds.items, ref_ds.labels, metric=kind)
    raise UsageError(f"unknown metric {name!r}")


def _cmd_eval(args) -> int:
    gen_ds = data.load_dataset(args.generated)
    ref_ds = data.load_dataset(args.reference)
    if gen_ds.kind != ref_ds.kind:
        raise UsageError("generated and reference datasets differ in kind")
    names = [m.strip() for m in args.metrics.split(",") if m.strip()]
    for name in names:
        if name not in _METRIC_CHOICES:
            raise UsageError(f"unknown metric {name!r}; choices: {_METRIC_CHOICES}")
    report = {
        "metrics": [
            {"metric": name, "value": float(_eval_metric(name, gen_ds, ref_ds))}
            for name in names
        ],
        "config": {
            "generated": os.path.basename(args.generated),
            "reference": os.path.basename(args.reference),
            "requested": names,
        },
        "seed": _seed_or_env(args.seed),
    }
    with open(args.out, "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["metric", "value"])
            for row in report["metrics"]:
                writer.writerow([row["metric"], row["value"]])
    if args.plot:
        from . import plotting

        plotting.render_comparison(args.plot, gen_ds.items, ref_ds.items,
                                   kind=gen_ds.kind)
    return 0


# ------------------------------------------------------------------ wiring

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="wfm", description=__doc__)
    parser.add_argument("--threads", type=int, default=1,
                        help="worker bound (results are thread-count independent)")
    sub = parser.add_subparsers(dest="command", required=True)

    ds = sub.add_parser("dataset", help="generate or transform datasets")
    ds_sub = ds.add_subparsers(dest="generator", required=True)
    for name in ("make-spiral", "make-moons", "make-sphere"):
        p = ds_sub.add_parser(name)
        p.add_argument("--count", type=int, required=True)
        p.add_argument("--noise", type=float, default=0.0)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", required=True)
    p = ds_sub.add_parser("make-shapes")
    p.add_argument("--families", default="ring",
                   help="comma-separated subset of ring,cross,box")
    p.add_argument("--count", type=int, required=True, help="clouds per family")
    p.add_argument("--min-points", type=int, default=50)
    p.add_argument("--max-points", type=int, default=100)
    p.add_argument("--jitter", type=float, default=0.02)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p = ds_sub.add_parser("from-image")
    p.add_argument("--image", required=True, help="plain PGM (P2) file")
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--out", required=True)
    p = ds_sub.add_parser("split")
    p.add_argument("--data", required=True)
    p.add_argument("--test-fraction", type=float, required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--train-out", required=True)
    p.add_argument("--test-out", required=True)

    tr = sub.add_parser("train", help="train a flow-matching model")
    tr.add_argument("--geo", choices=("bw", "pc"), required=True)
    tr.add_argument("--data", required=True)
    tr.add_argument("--out", required=True, help="run directory")
    tr.add_argument("--config", default=None, help="JSON config file")
    tr.add_argument("--steps", type=int, default=None)
    tr.add_argument("--batch", type=int, default=None)
    tr.add_argument("--lr", type=float, default=None)
    tr.add_argument("--seed", type=int, default=None)
    tr.add_argument("--baseline", choices=train.BASELINES, default=None)
    tr.add_argument("--conditional", action="store_true")
    tr.add_argument("--epsilon", type=float, default=None)
    tr.add_argument("--epsilon-raw", action="store_true",
                    help="treat epsilon as absolute, not cost-normalized")
    tr.add_argument("--multisample", choices=("auto", "on", "off"), default="auto")
    tr.add_argument("--interpolant", choices=("auto", "rounding", "entropic-map"),
                    default=None)
    tr.add_argument("--t-samples", dest="t_samples", type=int, default=None,
                    help="time samples per pair per step (bw geometry)")
    tr.add_argument("--hidden", type=int, default=None)
    tr.add_argument("--layers", type=int, default=None)
    tr.add_argument("--embed", type=int, default=None)
    tr.add_argument("--heads", type=int, default=None)
    tr.add_argument("--blocks", type=int, default=None)
    tr.add_argument("--checkpoint-every", dest="checkpoint_every", type=int,
                    default=None)
    tr.add_argument("--paper-scale", action="store_true")
    tr.add_argument("--quiet", action="store_true")

    ge = sub.add_parser("generate", help="sample from a trained checkpoint")
    ge.add_argument("--checkpoint", required=True)
    ge.add_argument("--count", type=int, required=True)
    ge.add_argument("--steps", type=int, default=None)
    ge.add_argument("--seed", type=int, default=None)
    ge.add_argument("--out", required=True)
    ge.add_argument("--trajectory", default=None,
                    help="directory for per-step snapshots")
    ge.add_argument("--cond", type=int, default=None)
    ge.add_argument("--points", type=int, default=None,
                    help="fixed cloud size (pc geometry)")

    ev = sub.add_parser("eval", help="evaluate generated samples")
    ev.add_argument("--generated", required=True)
    ev.add_argument("--reference", required=True)
    ev.add_argument("--metrics", required=True,
                    help=f"comma-separated subset of {','.join(_METRIC_CHOICES)}")
    ev.add_argument("--out", required=True)
    ev.add_argument("--csv", default=None)
    ev.add_argument("--plot", default=None)
    ev.add_argument("--seed", type=int, default=None)
    return parser


_COMMANDS = {"dataset": _cmd_dataset, "train": _cmd_train,
             "generate": _cmd_generate, "eval": _cmd_eval}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (UsageError, data.DatasetError, metrics.MetricError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (train.NumericalAbort, generate.GenerationAbort) as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
