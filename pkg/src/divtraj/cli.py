"""Command-line entry points.

Every command honors --seed and --config; a config file (JSON) supplies
defaults that explicit flags override. The DIVTRAJ_CONFIG environment
variable names a default config path. Exit codes: 0 success, 2 usage or
configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import dpp
from .checkpoint import save_arrays
from .errors import ConfigError, DivtrajError, GeometryError, NumericalError, ShapeError
from .experiments import (
    ExperimentConfig,
    ablation_table_text,
    run_ablation_grid,
    run_lambda_sweep,
)
from .forecaster import Forecaster
from .plotting import render_scene_svg, write_svg
from .scenes import load_dataset, generate_dataset, to_agent_frame
from .scenes.dataset import DEFAULT_LAYOUT_MIX
from .training import (
    TrainConfig,
    evaluate_checkpoint,
    prepare_scene_tensors,
    train_cvae,
    train_dsf,
)

EXIT_USAGE = 2
EXIT_NUMERICAL = 3


def _load_config_dict(path) -> dict:
    if path is None:
        path = os.environ.get("DIVTRAJ_CONFIG")
    if path is None:
        return {}
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    return json.loads(p.read_text())


def _merged(args: argparse.Namespace, config: dict, key: str, default=None):
    """Explicit flag > config file entry > default."""
    val = getattr(args, key.replace("-", "_"), None)
    if val is not None:
        return val
    if key in config:
        return config[key]
    return default


def _parse_mix(text):
    if text is None:
        return None
    mix = {}
    for part in text.split(","):
        k, _, v = part.partition("=")
        if not _:
            raise ConfigError(f"bad layout-mix entry {part!r}; expected kind=weight")
        mix[k.strip()] = float(v)
    return mix


# ---------------------------------------------------------------------------
# commands


def cmd_gen_scenes(args):
    config = _load_config_dict(args.config)
    out = _merged(args, config, "out")
    if out is None:
        raise ConfigError("gen-scenes needs --out")
    n = int(_merged(args, config, "n-scenes", 200))
    seed = int(_merged(args, config, "seed", 0))
    grid = int(_merged(args, config, "grid-size", 64))
    mix = _parse_mix(_merged(args, config, "layout-mix")) or config.get("layout_mix")
    ds = generate_dataset(out, n_scenes=n, master_seed=seed, grid_size=grid, layout_mix=mix)
    print(f"wrote {len(ds)} scenes to {out}")
    return 0


def _train_config_from_args(args) -> TrainConfig:
    config = _load_config_dict(args.config)
    if not config:
        raise ConfigError("training commands need --config (a TrainConfig JSON)")
    cfg = TrainConfig.from_dict(config)
    if args.seed is not None:
        cfg.seed = int(args.seed)
    return cfg


def cmd_train_cvae(args):
    cfg = _train_config_from_args(args)
    if cfg.stage != "cvae":
        raise ConfigError(f"train-cvae got a config with stage={cfg.stage!r}")
    result = train_cvae(cfg)
    print(
        f"stage 1 done: steps={result.steps} best_val={result.best_val:.6f} "
        f"checkpoint={result.checkpoint}"
    )
    if result.diverged:
        print("training diverged; kept last good checkpoint", file=sys.stderr)
        return EXIT_NUMERICAL
    return 0


def cmd_train_dsf(args):
    cfg = _train_config_from_args(args)
    if cfg.stage != "dsf":
        raise ConfigError(f"train-dsf got a config with stage={cfg.stage!r}")
    result = train_dsf(cfg)
    print(
        f"stage 2 done: steps={result.steps} best_val={result.best_val:.6f} "
        f"checkpoint={result.checkpoint}"
    )
    if result.diverged:
        print("training diverged; kept last good checkpoint", file=sys.stderr)
        return EXIT_NUMERICAL
    return 0


def cmd_eval(args):
    config = _load_config_dict(args.config)
    checkpoint = _merged(args, config, "checkpoint")
    data = _merged(args, config, "data")
    if checkpoint is None or data is None:
        raise ConfigError("eval needs --checkpoint and --data")
    sampler = _merged(args, config, "sampler", "dsf")
    seed = int(_merged(args, config, "seed", 0))
    report = evaluate_checkpoint(checkpoint, data, sampler, seed=seed)
    prefix = _merged(args, config, "out-prefix")
    if prefix:
        Path(prefix).parent.mkdir(parents=True, exist_ok=True)
        report.to_json(f"{prefix}.json")
        report.to_csv(f"{prefix}.csv")
    print(report.summary_table())
    return 0


def cmd_ablate(args):
    config = _load_config_dict(args.config)
    if not config:
        raise ConfigError("ablate needs --config (an ExperimentConfig JSON)")
    cfg = ExperimentConfig.from_dict(config)
    if args.seed is not None:
        cfg.master_seed = int(args.seed)
    if args.workers is not None:
        cfg.workers = int(args.workers)
    table = run_ablation_grid(cfg)
    print(ablation_table_text(table))
    return 0


def cmd_sweep_lambda(args):
    config = _load_config_dict(args.config)
    if not config:
        raise ConfigError("sweep-lambda needs --config (an ExperimentConfig JSON)")
    cfg = ExperimentConfig.from_dict(config)
    if args.seed is not None:
        cfg.master_seed = int(args.seed)
    if args.workers is not None:
        cfg.workers = int(args.workers)
    if args.lambdas is not None:
        cfg.lambdas = tuple(float(x) for x in args.lambdas.split(","))
    table = run_lambda_sweep(cfg)
    print("lambda    FSD      DAC")
    for lam in cfg.lambdas:
        m = table[f"{lam:g}"]
        print(f"{lam:<8g} {m['fsd']:8.3f} {m['dac']:8.3f}")
    return 0


def _scene_predictions(args, config):
    checkpoint = _merged(args, config, "checkpoint")
    data = _merged(args, config, "data")
    scene_id = _merged(args, config, "scene-id")
    if checkpoint is None or data is None or scene_id is None:
        raise ConfigError("need --checkpoint, --data and --scene-id")
    sampler = _merged(args, config, "sampler", "dsf")
    seed = int(_merged(args, config, "seed", 0))

    model = Forecaster.load(checkpoint)
    ds = load_dataset(data)
    record = ds.by_id(scene_id)
    pose = record.pose
    past_agent = to_agent_frame(record.trajectory.past, pose)[None]
    smap = record.scene_map()
    rng = np.random.default_rng(np.random.SeedSequence([61, seed]))

    model.train(False)
    with ad.no_grad():
        h, m = model.encode(ad.tensor(past_agent), ad.tensor(smap.grid[None]))
        if sampler == "dsf":
            trajs, _ = model.dsf_sample(h, m)
        elif sampler == "prior":
            trajs = model.prior_sample(h, m, model.cfg.n_predictions, rng)
        elif sampler == "oracle":
            fut = to_agent_frame(record.trajectory.future, pose).reshape(1, -1)
            trajs = ad.tensor(np.repeat(fut, model.cfg.n_predictions, axis=0))
        else:
            raise ConfigError(f"unknown sampler {sampler!r}")
    agent_preds = trajs.data.reshape(model.cfg.n_predictions, -1, 2)
    world_preds = agent_preds @ pose.rotation().T + pose.position
    return model, record, smap, world_preds


def cmd_plot_scene(args):
    config = _load_config_dict(args.config)
    out = _merged(args, config, "out")
    if out is None:
        raise ConfigError("plot-scene needs --out")
    _, record, smap, world_preds = _scene_predictions(args, config)
    tf = smap.transform
    svg = render_scene_svg(
        drivable_mask=smap.drivable_mask,
        lane_channel=smap.grid[:, :, 1],
        past_grid=tf.world_to_grid(record.trajectory.past),
        future_grid=tf.world_to_grid(record.trajectory.future),
        predictions_grid=[tf.world_to_grid(p) for p in world_preds],
    )
    write_svg(out, svg)
    print(f"wrote {out}")
    return 0


def cmd_dump_kernel(args):
    config = _load_config_dict(args.config)
    out = _merged(args, config, "out")
    if out is None:
        raise ConfigError("dump-kernel needs --out")
    kind = _merged(args, config, "kind", "compound")
    model, record, smap, world_preds = _scene_predictions(args, config)
    pose = record.pose
    agent_preds = to_agent_frame(world_preds.reshape(-1, 2), pose).reshape(world_preds.shape)
    kernel = dpp.build_kernel(agent_preds, np.zeros(2), kind=kind)
    save_arrays(
        out,
        {
            "kernel": kernel.values(),
            "alpha": np.array(kernel.alpha),
            "jitter": np.array(kernel.jitter),
            "expected_cardinality": np.array(dpp.expected_cardinality(kernel.values())),
        },
    )
    print(f"wrote {out} (alpha={kernel.alpha:.6g})")
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="divtraj",
        description="Diverse and admissible trajectory forecasting on synthetic road scenes.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config file supplying defaults (env: DIVTRAJ_CONFIG)")
        p.add_argument("--seed", type=int, help="RNG seed override (default: 0 or config value)")

    p = sub.add_parser(
        "gen-scenes",
        help="generate a synthetic scene dataset",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    common(p)
    p.add_argument("--out", help="output dataset directory")
    p.add_argument("--n-scenes", type=int, help="number of scenes (default 200)")
    p.add_argument("--grid-size", type=int, help="raster size in cells (default 64)")
    p.add_argument(
        "--layout-mix",
        help="comma list kind=weight, e.g. straight=0.4,t-intersection=0.3,"
        "crossroad=0.2,curve=0.1 (the default mix)",
    )
    p.set_defaults(func=cmd_gen_scenes)

    p = sub.add_parser("train-cvae", help="stage 1: train the generative backbone")
    common(p)
    p.set_defaults(func=cmd_train_cvae)

    p = sub.add_parser("train-dsf", help="stage 2: train the diversity sampler")
    common(p)
    p.set_defaults(func=cmd_train_dsf)

    p = sub.add_parser(
        "eval",
        help="evaluate a checkpoint over a dataset",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    common(p)
    p.add_argument("--checkpoint", help="model checkpoint path")
    p.add_argument("--data", help="dataset directory")
    p.add_argument(
        "--sampler", choices=("prior", "dsf", "oracle"), help="sampling mode (default dsf)"
    )
    p.add_argument("--out-prefix", help="write <prefix>.json and <prefix>.csv reports")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="run the component/fusion ablation grid")
    common(p)
    p.add_argument("--workers", type=int, help="parallel worker processes (default 2)")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("sweep-lambda", help="run the diversity/quality tradeoff sweep")
    common(p)
    p.add_argument("--workers", type=int, help="parallel worker processes (default 2)")
    p.add_argument("--lambdas", help="comma list of weights, e.g. 0,0.25,0.5,0.75,1")
    p.set_defaults(func=cmd_sweep_lambda)

    p = sub.add_parser(
        "plot-scene",
        help="render a scene with predictions as SVG",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    common(p)
    p.add_argument("--checkpoint", help="model checkpoint path")
    p.add_argument("--data", help="dataset directory")
    p.add_argument("--scene-id", help="scene id from the dataset index")
    p.add_argument("--sampler", choices=("prior", "dsf", "oracle"), help="sampling mode")
    p.add_argument("--out", help="output SVG path")
    p.set_defaults(func=cmd_plot_scene)

    p = sub.add_parser(
        "dump-kernel",
        help="dump a scene's DPP kernel in the checkpoint value format",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    common(p)
    p.add_argument("--checkpoint", help="model checkpoint path")
    p.add_argument("--data", help="dataset directory")
    p.add_argument("--scene-id", help="scene id from the dataset index")
    p.add_argument("--sampler", choices=("prior", "dsf", "oracle"), help="sampling mode")
    p.add_argument("--kind", choices=dpp.KERNEL_KINDS, help="kernel kind (default compound)")
    p.add_argument("--out", help="output kernel file path")
    p.set_defaults(func=cmd_dump_kernel)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except NumericalError as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ConfigError, GeometryError, ShapeError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except DivtrajError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
