"""Ablation-grid and tradeoff-sweep orchestration.

Cells (one diversity-sampler training + evaluation per seed) run as
independent subprocesses of this package's CLI, each pinned to one BLAS
thread; the parent aggregates per-seed evaluation reports into seed
medians. Finished cells are detected by their output files and skipped,
so ablation and sweep runs share the cells they have in common and reruns
are idempotent.
"""

from __future__ import annotations

import json
import os
import subprocess
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from .errors import ConfigError, NumericalError
from .forecaster import ForecasterConfig
from .plotting import render_sweep_svg, write_svg
from .training import TrainConfig
from .scenes.dataset import DEFAULT_LAYOUT_MIX

DEFAULT_SEEDS = (0, 1, 2)

# Table-style ablation cells: (name, dsf variant, fusion, lambda)
ABLATION_CELLS = (
    ("dsf-1b-d", "1B-D", "product", 1.0),
    ("dsf-1b-l", "1B-L", "product", 0.0),
    ("dsf-2b-d", "2B", "product", 1.0),
    ("dsf-2b-dl", "2B", "product", 0.5),
)
FUSION_CELLS = (
    ("fusion-concat", "2B", "concat", 0.5),
    ("fusion-sum", "2B", "sum", 0.5),
    ("fusion-product", "2B", "product", 0.5),
)


@dataclass
class ExperimentConfig:
    """One self-contained experiment workspace (datasets, checkpoints, reports)."""

    out_dir: str
    master_seed: int = 0
    seeds: Sequence[int] = DEFAULT_SEEDS
    n_train: int = 2000
    n_val: int = 400
    grid_size: int = 64
    layout_mix: Optional[Dict[str, float]] = None
    cvae_epochs: int = 40
    dsf_epochs: int = 10
    batch_size: int = 32
    kernel_kind: str = "compound"
    lambdas: Sequence[float] = (0.0, 0.25, 0.5, 0.75, 1.0)
    workers: int = 2
    model: ForecasterConfig = field(default_factory=ForecasterConfig)

    def to_dict(self) -> dict:
        d = {
            "schema_version": 1,
            "out_dir": str(self.out_dir),
            "master_seed": self.master_seed,
            "seeds": list(self.seeds),
            "n_train": self.n_train,
            "n_val": self.n_val,
            "grid_size": self.grid_size,
            "layout_mix": self.layout_mix,
            "cvae_epochs": self.cvae_epochs,
            "dsf_epochs": self.dsf_epochs,
            "batch_size": self.batch_size,
            "kernel_kind": self.kernel_kind,
            "lambdas": list(self.lambdas),
            "workers": self.workers,
            "model": self.model.to_dict(),
        }
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        if d.pop("schema_version", 1) != 1:
            raise ConfigError("unsupported experiment config schema version")
        d["model"] = ForecasterConfig.from_dict(d.get("model", ForecasterConfig().to_dict()))
        d["seeds"] = tuple(d.get("seeds", DEFAULT_SEEDS))
        d["lambdas"] = tuple(d.get("lambdas", (0.0, 0.25, 0.5, 0.75, 1.0)))
        return cls(**d)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    # -- paths ---------------------------------------------------------------
    @property
    def root(self) -> Path:
        return Path(self.out_dir)

    def train_data(self) -> Path:
        return self.root / "data" / "train"

    def val_data(self) -> Path:
        return self.root / "data" / "val"

    def backbone_ckpt(self, seed: int) -> Path:
        return self.root / "checkpoints" / f"backbone_s{seed}.ckpt"

    def cell_ckpt(self, cell: str, seed: int) -> Path:
        return self.root / "checkpoints" / f"{cell}_s{seed}.ckpt"

    def eval_path(self, cell: str, seed: int) -> Path:
        return self.root / "reports" / f"eval_{cell}_s{seed}.json"


def _worker_env() -> dict:
    env = dict(os.environ)
    for var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
        env[var] = "1"
    return env


def _run_cli(args: List[str]):
    cmd = [sys.executable, "-m", "divtraj.cli"] + args
    proc = subprocess.run(cmd, env=_worker_env(), capture_output=True, text=True)
    if proc.returncode == 3:
        raise NumericalError(f"worker diverged: {' '.join(args)}\n{proc.stderr[-2000:]}")
    if proc.returncode != 0:
        raise ConfigError(
            f"worker failed ({proc.returncode}): {' '.join(args)}\n{proc.stderr[-2000:]}"
        )


def ensure_datasets(cfg: ExperimentConfig):
    for path, n, tag in (
        (cfg.train_data(), cfg.n_train, 1),
        (cfg.val_data(), cfg.n_val, 2),
    ):
        if not (path / "index.json").exists():
            args = [
                "gen-scenes",
                "--out",
                str(path),
                "--n-scenes",
                str(n),
                "--seed",
                str(cfg.master_seed * 10 + tag),
                "--grid-size",
                str(cfg.grid_size),
            ]
            if cfg.layout_mix:
                mix = ",".join(f"{k}={v}" for k, v in sorted(cfg.layout_mix.items()))
                args += ["--layout-mix", mix]
            _run_cli(args)


def _backbone_train_config(cfg: ExperimentConfig, seed: int) -> TrainConfig:
    return TrainConfig(
        stage="cvae",
        train_dataset=str(cfg.train_data()),
        val_dataset=str(cfg.val_data()),
        checkpoint_out=str(cfg.backbone_ckpt(seed)),
        epochs=cfg.cvae_epochs,
        batch_size=cfg.batch_size,
        seed=seed,
        val_every=4,
        log_csv=str(cfg.root / "logs" / f"backbone_s{seed}.csv"),
        model=replace(cfg.model, grid_size=cfg.grid_size),
    )


def _cell_train_config(
    cfg: ExperimentConfig, cell: str, variant: str, fusion: str, lam: float, seed: int
) -> TrainConfig:
    model = replace(cfg.model, grid_size=cfg.grid_size, dsf_variant=variant, fusion=fusion)
    return TrainConfig(
        stage="dsf",
        train_dataset=str(cfg.train_data()),
        val_dataset=str(cfg.val_data()),
        checkpoint_in=str(cfg.backbone_ckpt(seed)),
        checkpoint_out=str(cfg.cell_ckpt(cell, seed)),
        epochs=cfg.dsf_epochs,
        batch_size=cfg.batch_size,
        lam=lam,
        kernel_kind=cfg.kernel_kind,
        seed=seed,
        val_every=5,
        log_csv=str(cfg.root / "logs" / f"{cell}_s{seed}.csv"),
        model=model,
    )


def _train_and_eval_cell(cfg: ExperimentConfig, cell: str, train_cfg: TrainConfig, seed: int, sampler: str):
    report = cfg.eval_path(cell, seed)
    if report.exists():
        return
    ckpt = Path(train_cfg.checkpoint_out)
    if sampler == "dsf" and not ckpt.exists():
        cfg_path = cfg.root / "configs" / f"{cell}_s{seed}.json"
        cfg_path.parent.mkdir(parents=True, exist_ok=True)
        train_cfg.save(cfg_path)
        _run_cli(["train-dsf", "--config", str(cfg_path)])
    _run_cli(
        [
            "eval",
            "--checkpoint",
            str(ckpt),
            "--data",
            str(cfg.val_data()),
            "--sampler",
            sampler,
            "--seed",
            str(seed),
            "--out-prefix",
            str(report)[: -len(".json")],
        ]
    )


def _ensure_backbones(cfg: ExperimentConfig):
    ensure_datasets(cfg)
    jobs = []
    for seed in cfg.seeds:
        if cfg.backbone_ckpt(seed).exists():
            continue
        tc = _backbone_train_config(cfg, seed)
        cfg_path = cfg.root / "configs" / f"backbone_s{seed}.json"
        cfg_path.parent.mkdir(parents=True, exist_ok=True)
        tc.save(cfg_path)
        jobs.append(["train-cvae", "--config", str(cfg_path)])
    _run_parallel(jobs, cfg.workers)


def _run_parallel(cli_jobs: List[List[str]], workers: int):
    if not cli_jobs:
        return
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        futures = [pool.submit(_run_cli, job) for job in cli_jobs]
        for f in futures:
            f.result()


def _run_cells(cfg: ExperimentConfig, cells):
    """cells: list of (cell_name, variant, fusion, lam) trained per seed."""
    _ensure_backbones(cfg)
    tasks = []
    for name, variant, fusion, lam in cells:
        for seed in cfg.seeds:
            tc = _cell_train_config(cfg, name, variant, fusion, lam, seed)
            tasks.append((name, tc, seed, "dsf"))
    for seed in cfg.seeds:  # the untrained-prior baseline
        tc = _backbone_train_config(cfg, seed)
        tasks.append(("cvae-prior", tc, seed, "prior"))
    with ThreadPoolExecutor(max_workers=max(1, cfg.workers)) as pool:
        futures = [
            pool.submit(_train_and_eval_cell, cfg, name, tc, seed, sampler)
            for name, tc, seed, sampler in tasks
        ]
        for f in futures:
            f.result()


def seed_median_means(cfg: ExperimentConfig, cell: str) -> Dict[str, float]:
    """Median across seeds of each corpus-mean metric for one cell."""
    per_seed = []
    for seed in cfg.seeds:
        payload = json.loads(cfg.eval_path(cell, seed).read_text())
        per_seed.append(payload["means"])
    keys = per_seed[0].keys()
    return {k: float(np.median([m[k] for m in per_seed])) for k in keys}


def _cell_name_for_lambda(lam: float) -> str:
    # shared cells: lambda 1.0 is the diversity-only model, 0.5 the default
    if lam == 1.0:
        return "dsf-2b-d"
    if lam == 0.5:
        return "dsf-2b-dl"
    return f"sweep-lam{lam:g}"


def run_ablation_grid(cfg: ExperimentConfig) -> Dict[str, Dict[str, float]]:
    """Train/evaluate the component and fusion ablations; medians per cell."""
    cells = list(ABLATION_CELLS) + [c for c in FUSION_CELLS if c[0] != "fusion-product"]
    _run_cells(cfg, cells)
    table = {"cvae-prior": seed_median_means(cfg, "cvae-prior")}
    for name, *_ in ABLATION_CELLS:
        table[name] = seed_median_means(cfg, name)
    table["fusion-concat"] = seed_median_means(cfg, "fusion-concat")
    table["fusion-sum"] = seed_median_means(cfg, "fusion-sum")
    table["fusion-product"] = seed_median_means(cfg, "dsf-2b-dl")
    out = cfg.root / "reports" / "ablation_summary.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(table, sort_keys=True, indent=1) + "\n")
    return table


def run_lambda_sweep(cfg: ExperimentConfig) -> Dict[str, Dict[str, float]]:
    """One diversity-sampler training per lambda value; medians per lambda."""
    cells = []
    for lam in cfg.lambdas:
        name = _cell_name_for_lambda(lam)
        cells.append((name, "2B", "product", float(lam)))
    _run_cells(cfg, cells)
    table = {}
    for lam in cfg.lambdas:
        table[f"{lam:g}"] = seed_median_means(cfg, _cell_name_for_lambda(lam))
    out = cfg.root / "reports" / "lambda_sweep.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(table, sort_keys=True, indent=1) + "\n")

    lams = [float(l) for l in cfg.lambdas]
    fsd = [table[f"{l:g}"]["fsd"] for l in lams]
    dac = [table[f"{l:g}"]["dac"] for l in lams]
    write_svg(cfg.root / "reports" / "lambda_sweep.svg", render_sweep_svg(lams, fsd, dac))
    return table


def ablation_table_text(table: Dict[str, Dict[str, float]]) -> str:
    order = [
        "cvae-prior",
        "dsf-1b-d",
        "dsf-1b-l",
        "dsf-2b-d",
        "dsf-2b-dl",
        "fusion-concat",
        "fusion-sum",
        "fusion-product",
    ]
    lines = ["model          mADE/mFDE        DAO      DAC     rF       ASD     FSD"]
    for name in order:
        if name not in table:
            continue
        m = table[name]
        lines.append(
            f"{name:<13} {m['made']:6.3f}/{m['mfde']:6.3f} {m['dao']:8.2f} "
            f"{m['dac']:8.3f} {m['rf']:7.3f} {m['asd']:7.3f} {m['fsd']:7.3f}"
        )
    return "\n".join(lines)
