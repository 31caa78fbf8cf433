"""Two-stage training: the generative backbone first, then the diversity
sampler against a frozen backbone, plus batch evaluation helpers.

Everything is deterministic given (config, seed, dataset): batch order,
noise draws and parameter updates all derive from one seed sequence.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from . import autodiff as ad
from . import dpp
from .checkpoint import config_hash, load_arrays, load_sidecar
from .errors import ConfigError, NumericalError
from .forecaster import Forecaster, ForecasterConfig
from .losses import cvae_loss, dsf_loss
from .metrics import EvalReport, evaluate_scene
from .optim import Adam
from .scenes import SceneDataset, load_dataset, to_agent_frame, to_world_frame
from .scenes.chamfer import ChamferField
from .scenes.raster import GridTransform

CONFIG_SCHEMA_VERSION = 1

BACKBONE_CONFIG_KEYS = (
    "t_p",
    "t_f",
    "d_h",
    "d_m",
    "d_z",
    "grid_size",
    "map_channels",
    "conv_channels",
    "head_hidden",
    "posterior_hidden",
)


@dataclass
class TrainConfig:
    stage: str  # "cvae" | "dsf"
    train_dataset: str
    val_dataset: str
    checkpoint_out: str
    checkpoint_in: Optional[str] = None  # frozen backbone for stage "dsf"
    epochs: int = 60
    batch_size: int = 32
    lr: Optional[float] = None  # default depends on the stage
    lam: float = 0.5
    kernel_kind: str = "compound"
    beta: float = 1.0
    normalized_layout: bool = False  # per-point mean instead of the raw sum
    seed: int = 0
    val_every: int = 2
    grad_clip: Optional[float] = None
    log_csv: Optional[str] = None
    model: ForecasterConfig = field(default_factory=ForecasterConfig)

    def __post_init__(self):
        if self.stage not in ("cvae", "dsf"):
            raise ConfigError(f"unknown training stage {self.stage!r}")
        if self.epochs <= 0 or self.batch_size <= 0:
            raise ConfigError("epochs and batch size must be positive")
        if not 0.0 <= self.lam <= 1.0:
            raise ConfigError(f"lambda must lie in [0, 1], got {self.lam}")
        if self.lr is None:
            self.lr = 1e-3 if self.stage == "cvae" else 1e-4
        if self.lr <= 0:
            raise ConfigError("learning rate must be positive")
        if self.kernel_kind not in dpp.KERNEL_KINDS:
            raise ConfigError(f"unknown kernel kind {self.kernel_kind!r}")

    def to_dict(self) -> dict:
        return {
            "schema_version": CONFIG_SCHEMA_VERSION,
            "stage": self.stage,
            "train_dataset": str(self.train_dataset),
            "val_dataset": str(self.val_dataset),
            "checkpoint_out": str(self.checkpoint_out),
            "checkpoint_in": None if self.checkpoint_in is None else str(self.checkpoint_in),
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "lr": self.lr,
            "lambda": self.lam,
            "kernel_kind": self.kernel_kind,
            "beta": self.beta,
            "normalized_layout": self.normalized_layout,
            "seed": self.seed,
            "val_every": self.val_every,
            "grad_clip": self.grad_clip,
            "log_csv": None if self.log_csv is None else str(self.log_csv),
            "model": self.model.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        version = d.pop("schema_version", None)
        if version != CONFIG_SCHEMA_VERSION:
            raise ConfigError(f"unsupported config schema version {version!r}")
        d["lam"] = d.pop("lambda")
        d["model"] = ForecasterConfig.from_dict(d["model"])
        return cls(**d)

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True, indent=1) + "\n")

    @classmethod
    def load(cls, path) -> "TrainConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


def backbone_config_dict(model_cfg: ForecasterConfig) -> dict:
    d = model_cfg.to_dict()
    return {k: d[k] for k in BACKBONE_CONFIG_KEYS}


# ---------------------------------------------------------------------------
# scene tensors


@dataclass
class SceneTensors:
    """Per-record arrays precomputed once per training/eval run."""

    ids: List[str]
    past_agent: np.ndarray  # (n, t_p, 2)
    future_agent: np.ndarray  # (n, t_f * 2), time-major
    future_world: np.ndarray  # (n, t_f, 2)
    rotations: np.ndarray  # (n, 2, 2) agent -> world
    positions: np.ndarray  # (n, 2)
    transforms: List[GridTransform]
    drivable_masks: List[np.ndarray]
    chamfer_agent: List[ChamferField]  # fields with agent-frame transforms


def agent_frame_field(field: ChamferField, rotation: np.ndarray, position: np.ndarray) -> ChamferField:
    """Re-express a world-frame chamfer field in a scene's agent frame."""
    m = field.transform.matrix @ rotation
    o = field.transform.matrix @ position + field.transform.offset
    tf = GridTransform(
        matrix=m,
        offset=o,
        shape=field.transform.shape,
        anchor=field.transform.anchor,
        cell_m=field.transform.cell_m,
    )
    return ChamferField(values=field.values, transform=tf)


def prepare_scene_tensors(ds: SceneDataset, with_chamfer: bool) -> Tuple[SceneTensors, np.ndarray]:
    """Extract per-scene arrays; returns (tensors, rasters (n, H, W, C))."""
    n = len(ds)
    t_p = ds.records[0].trajectory.t_p
    t_f = ds.records[0].trajectory.t_f
    past = np.empty((n, t_p, 2))
    fut_agent = np.empty((n, t_f * 2))
    fut_world = np.empty((n, t_f, 2))
    rots = np.empty((n, 2, 2))
    poss = np.empty((n, 2))
    transforms, masks, chamfers, ids = [], [], [], []
    rasters = np.empty((n, ds.grid_size, ds.grid_size, 3))
    for i, rec in enumerate(ds.records):
        pose = rec.pose
        past[i] = to_agent_frame(rec.trajectory.past, pose)
        fa = to_agent_frame(rec.trajectory.future, pose)
        fut_agent[i] = fa.reshape(-1)
        fut_world[i] = rec.trajectory.future
        rots[i] = pose.rotation()
        poss[i] = pose.position
        smap = rec.scene_map()
        rasters[i] = smap.grid
        transforms.append(smap.transform)
        masks.append(smap.drivable_mask.copy())
        if with_chamfer:
            chamfers.append(agent_frame_field(rec.chamfer_field(), rots[i], poss[i]))
        ids.append(rec.id)
        rec._grid = None  # free the cached blob; the arrays above are enough
        rec._chamfer = None
    tensors = SceneTensors(
        ids=ids,
        past_agent=past,
        future_agent=fut_agent,
        future_world=fut_world,
        rotations=rots,
        positions=poss,
        transforms=transforms,
        drivable_masks=masks,
        chamfer_agent=chamfers,
    )
    return tensors, rasters


def _rng_digest(rng: np.random.Generator) -> str:
    state = json.dumps(rng.bit_generator.state, sort_keys=True, default=int)
    return hashlib.sha1(state.encode()).hexdigest()[:10]


class TrainLog:
    """CSV training log: step, epoch, loss components, RNG state digest."""

    FIELDS = ["step", "epoch", "reconstruction", "kl", "dpp", "layout", "total", "rng_digest"]

    def __init__(self, path: Optional[str]):
        self.path = Path(path) if path else None
        self.rows: List[dict] = []

    def add(self, step, epoch, components: Dict[str, float], total: float, digest: str):
        row = {k: "" for k in self.FIELDS}
        row.update(step=step, epoch=epoch, total=repr(total), rng_digest=digest)
        for k, v in components.items():
            row[k] = repr(v)
        self.rows.append(row)

    def write(self):
        if self.path is None:
            return
        self.path.parent.mkdir(parents=True, exist_ok=True)
        with open(self.path, "w", newline="") as f:
            w = csv.DictWriter(f, fieldnames=self.FIELDS)
            w.writeheader()
            for row in self.rows:
                w.writerow(row)


@dataclass
class TrainResult:
    checkpoint: str
    diverged: bool
    best_val: float
    steps: int
    totals: List[float]


def _clip_gradients(params, max_norm: float):
    total = np.sqrt(sum(float((p.grad**2).sum()) for _, p in params if p.grad is not None))
    if total > max_norm:
        scale = max_norm / (total + 1e-12)
        for _, p in params:
            if p.grad is not None:
                p.grad *= scale


# ---------------------------------------------------------------------------
# stage 1: the generative backbone


def train_cvae(cfg: TrainConfig) -> TrainResult:
    if cfg.stage != "cvae":
        raise ConfigError("train_cvae requires a stage='cvae' config")
    train_ds = load_dataset(cfg.train_dataset)
    val_ds = load_dataset(cfg.val_dataset)
    tens, rasters = prepare_scene_tensors(train_ds, with_chamfer=False)
    vtens, vrasters = prepare_scene_tensors(val_ds, with_chamfer=False)

    model = Forecaster(cfg.model, seed=cfg.seed)
    params = list(model.named_parameters())
    opt = Adam(params, lr=cfg.lr)
    rng = np.random.default_rng(np.random.SeedSequence([51, cfg.seed]))

    log = TrainLog(cfg.log_csv)
    n = len(train_ds)
    best_val = np.inf
    best_state = model.state_dict()
    step = 0
    totals: List[float] = []
    diverged = False

    try:
        for epoch in range(cfg.epochs):
            model.train(True)
            order = rng.permutation(n)
            for lo in range(0, n, cfg.batch_size):
                idx = order[lo : lo + cfg.batch_size]
                past = ad.tensor(tens.past_agent[idx])
                maps = ad.tensor(rasters[idx])
                future = tens.future_agent[idx]

                h, m = model.encode(past, maps)
                mu, logvar = model.posterior(h, m, ad.tensor(future))
                eps = rng.standard_normal(mu.shape)
                z = model.reparameterize(mu, logvar, eps)
                pred = model.decode(z, h, m)
                out = cvae_loss(pred, future, mu, logvar, beta=cfg.beta)

                model.zero_grad()
                out.total.backward()
                if cfg.grad_clip:
                    _clip_gradients(params, cfg.grad_clip)
                opt.step()

                step += 1
                total = out.total.item()
                totals.append(total)
                log.add(step, epoch, out.component_values(), total, _rng_digest(rng))

            if (epoch + 1) % cfg.val_every == 0 or epoch == cfg.epochs - 1:
                val = _validate_reconstruction(model, vtens, vrasters)
                if val < best_val:
                    best_val = val
                    best_state = model.state_dict()
    except NumericalError:
        diverged = True  # halt and keep the last good (best validated) state

    model.load_state_dict(best_state)
    model.save(cfg.checkpoint_out)
    log.write()
    return TrainResult(
        checkpoint=str(cfg.checkpoint_out),
        diverged=diverged,
        best_val=float(best_val),
        steps=step,
        totals=totals,
    )


def _validate_reconstruction(model: Forecaster, tens: SceneTensors, rasters: np.ndarray) -> float:
    """Posterior-mean reconstruction error on the validation split."""
    model.train(False)
    with ad.no_grad():
        h, m = model.encode(ad.tensor(tens.past_agent), ad.tensor(rasters))
        mu, _ = model.posterior(h, m, ad.tensor(tens.future_agent))
        pred = model.decode(mu, h, m)
        err = float(((pred.data - tens.future_agent) ** 2).mean())
    model.train(True)
    return err


# ---------------------------------------------------------------------------
# stage 2: the diversity sampler against a frozen backbone


def _load_backbone(model: Forecaster, checkpoint_in: str):
    """Copy backbone parameters/buffers from a stage-1 checkpoint."""
    saved_cfg = load_sidecar(Path(checkpoint_in).with_suffix(".ckpt.json"))
    expect = backbone_config_dict(model.cfg)
    got = {k: saved_cfg[k] for k in BACKBONE_CONFIG_KEYS}
    if config_hash(got) != config_hash(expect):
        raise ConfigError(
            "backbone architecture hash mismatch: checkpoint "
            f"{config_hash(got)} vs configured {config_hash(expect)}"
        )
    arrays = load_arrays(checkpoint_in)
    for name, mod in model.backbone_modules().items():
        state = {}
        for key, p in mod.named_parameters():
            state[f"param.{key}"] = arrays[f"param.{name}.{key}"]
        for key, _ in mod.named_buffers():
            state[f"buffer.{key}"] = arrays[f"buffer.{name}.{key}"]
        mod.load_state_dict(state)
    return arrays


def _precompute_embeddings(model: Forecaster, tens: SceneTensors, rasters: np.ndarray, batch=64):
    """Frozen-backbone context embeddings for every scene (eval mode)."""
    model.train(False)
    hs, ms = [], []
    with ad.no_grad():
        for lo in range(0, len(rasters), batch):
            h, m = model.encode(
                ad.tensor(tens.past_agent[lo : lo + batch]), ad.tensor(rasters[lo : lo + batch])
            )
            hs.append(h.data)
            ms.append(m.data)
    return np.concatenate(hs), np.concatenate(ms)


def train_dsf(cfg: TrainConfig) -> TrainResult:
    if cfg.stage != "dsf":
        raise ConfigError("train_dsf requires a stage='dsf' config")
    if not cfg.checkpoint_in:
        raise ConfigError("stage 'dsf' needs checkpoint_in (the trained backbone)")
    train_ds = load_dataset(cfg.train_dataset)
    val_ds = load_dataset(cfg.val_dataset)
    tens, rasters = prepare_scene_tensors(train_ds, with_chamfer=True)
    vtens, vrasters = prepare_scene_tensors(val_ds, with_chamfer=False)

    model = Forecaster(cfg.model, seed=cfg.seed)
    backbone_arrays = _load_backbone(model, cfg.checkpoint_in)
    model.freeze_backbone()

    h_all, m_all = _precompute_embeddings(model, tens, rasters)
    vh, vm = _precompute_embeddings(model, vtens, vrasters)
    del rasters, vrasters

    dsf_params = [(f"dsf.{k}", p) for k, p in model.dsf.named_parameters()]
    opt = Adam(dsf_params, lr=cfg.lr)
    rng = np.random.default_rng(np.random.SeedSequence([52, cfg.seed]))
    log = TrainLog(cfg.log_csv)

    n = len(train_ds)
    n_pred = cfg.model.n_predictions
    origin = np.zeros(2)
    best_val = -np.inf
    best_state = model.state_dict()
    step = 0
    totals: List[float] = []
    diverged = False

    try:
        for epoch in range(cfg.epochs):
            model.dsf.train(True)
            order = rng.permutation(n)
            for lo in range(0, n, cfg.batch_size):
                idx = order[lo : lo + cfg.batch_size]
                h = ad.tensor(h_all[idx])
                m = ad.tensor(m_all[idx])
                trajs, _ = model.dsf_sample(h, m)

                scene_totals = []
                dpp_vals, layout_vals = [], []
                for row, scene in enumerate(idx):
                    rows = trajs[row * n_pred : (row + 1) * n_pred, :]
                    out = dsf_loss(
                        rows,
                        origin,
                        tens.chamfer_agent[scene],
                        lam=cfg.lam,
                        kernel_kind=cfg.kernel_kind,
                        normalized_layout=cfg.normalized_layout,
                    )
                    scene_totals.append(out.total.reshape(1))
                    dpp_vals.append(out.components["dpp"].item())
                    layout_vals.append(out.components["layout"].item())
                loss = ad.concat(scene_totals, axis=0).mean()

                model.zero_grad()
                loss.backward()
                _assert_backbone_untouched(model)
                if cfg.grad_clip:
                    _clip_gradients(dsf_params, cfg.grad_clip)
                opt.step()

                step += 1
                total = loss.item()
                totals.append(total)
                log.add(
                    step,
                    epoch,
                    {"dpp": float(np.mean(dpp_vals)), "layout": float(np.mean(layout_vals))},
                    total,
                    _rng_digest(rng),
                )

            if (epoch + 1) % cfg.val_every == 0 or epoch == cfg.epochs - 1:
                val = _validate_dsf(model, vtens, vh, vm, n_pred)
                if val > best_val:
                    best_val = val
                    best_state = model.state_dict()
    except NumericalError:
        diverged = True

    model.load_state_dict(best_state)
    _assert_backbone_matches(model, backbone_arrays)
    model.save(cfg.checkpoint_out)
    log.write()
    return TrainResult(
        checkpoint=str(cfg.checkpoint_out),
        diverged=diverged,
        best_val=float(best_val),
        steps=step,
        totals=totals,
    )


def _assert_backbone_untouched(model: Forecaster):
    for name, p in model.backbone_parameters():
        if p.grad is not None:
            raise NumericalError(f"gradient leaked into frozen backbone parameter {name}")


def _assert_backbone_matches(model: Forecaster, arrays: Dict[str, np.ndarray]):
    for name, mod in model.backbone_modules().items():
        for key, p in mod.named_parameters():
            if not np.array_equal(p.data, arrays[f"param.{name}.{key}"]):
                raise NumericalError(f"frozen backbone parameter {name}.{key} changed during stage 2")


def _validate_dsf(model, vtens, vh, vm, n_pred) -> float:
    """Scalarized selection criterion on the validation split: FSD * DAC."""
    model.train(False)
    report = evaluate_embedded(model, vtens, vh, vm, sampler="dsf", n_predictions=n_pred)
    model.dsf.train(True)
    return report.means["fsd"] * report.means["dac"]


# ---------------------------------------------------------------------------
# evaluation


def evaluate_embedded(
    model: Forecaster,
    tens: SceneTensors,
    h_all: np.ndarray,
    m_all: np.ndarray,
    sampler: str,
    n_predictions: int,
    rng: Optional[np.random.Generator] = None,
) -> EvalReport:
    """Evaluate a sampler given precomputed embeddings (deterministic order)."""
    n = len(tens.ids)
    model.train(False)
    if sampler == "oracle":
        # ground truth replicated N times, already in the world frame
        flat = np.repeat(tens.future_world[:, None], n_predictions, axis=1)
    elif sampler in ("dsf", "prior"):
        with ad.no_grad():
            h = ad.tensor(h_all)
            m = ad.tensor(m_all)
            if sampler == "dsf":
                trajs, _ = model.dsf_sample(h, m)
            else:
                if rng is None:
                    raise ConfigError("prior sampling needs an RNG")
                trajs = model.prior_sample(h, m, n_predictions, rng)
        flat = trajs.data.reshape(n, n_predictions, -1, 2)
    else:
        raise ConfigError(f"unknown sampler {sampler!r}")

    scenes = []
    for i in range(n):
        if sampler == "oracle":
            world = flat[i]
        else:
            world = flat[i] @ tens.rotations[i].T + tens.positions[i]
        scenes.append(
            evaluate_scene(
                tens.ids[i],
                world,
                tens.future_world[i],
                tens.drivable_masks[i],
                tens.transforms[i],
            )
        )
    return EvalReport.from_scenes(scenes, n_predictions)


def evaluate_checkpoint(
    checkpoint: str,
    dataset: str,
    sampler: str,
    seed: int = 0,
    n_predictions: Optional[int] = None,
) -> EvalReport:
    """Load a model and dataset, run the chosen sampler over every scene."""
    model = Forecaster.load(checkpoint)
    ds = load_dataset(dataset)
    if ds.grid_size != model.cfg.grid_size:
        raise ConfigError(
            f"checkpoint/dataset mismatch: model grid {model.cfg.grid_size}, "
            f"dataset grid {ds.grid_size}"
        )
    tens, rasters = prepare_scene_tensors(ds, with_chamfer=False)
    h_all, m_all = _precompute_embeddings(model, tens, rasters)
    rng = np.random.default_rng(np.random.SeedSequence([61, seed]))
    n_pred = n_predictions or model.cfg.n_predictions
    return evaluate_embedded(model, tens, h_all, m_all, sampler, n_pred, rng=rng)
