"""Scene datasets: generation, on-disk format, loading.

A dataset directory holds ``index.json`` plus one raster blob per record
under ``rasters/``. Records are fully determined by the master seed, and
the written bytes are reproducible run to run.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from ..checkpoint import load_raster, save_raster
from ..errors import ConfigError, GeometryError
from .chamfer import ChamferField, chamfer_transform
from .layout import LAYOUT_KINDS, generate_layout
from .raster import DEFAULT_GRID_SIZE, GridTransform, SceneMap, rasterize
from .simulate import simulate_agent
from .trajectory import AgentPose, Trajectory

INDEX_VERSION = 1

DEFAULT_LAYOUT_MIX = {
    "straight": 0.4,
    "t-intersection": 0.3,
    "crossroad": 0.2,
    "curve": 0.1,
}


def scene_id(kind: str, seed: int) -> str:
    """Content hash of (layout kind, seed); stable across regeneration."""
    return hashlib.sha1(f"{kind}:{seed}".encode()).hexdigest()[:12]


@dataclass
class SceneRecord:
    id: str
    kind: str
    seed: int
    trajectory: Trajectory
    pose: AgentPose
    grid_size: int
    raster_path: Path
    _grid: Optional[np.ndarray] = field(default=None, repr=False)
    _chamfer: Optional[ChamferField] = field(default=None, repr=False)

    def transform(self) -> GridTransform:
        return GridTransform.for_pose(self.pose, self.grid_size)

    def scene_map(self) -> SceneMap:
        if self._grid is None:
            self._grid = load_raster(self.raster_path)
        return SceneMap(grid=self._grid, transform=self.transform(), pose=self.pose)

    def chamfer_field(self) -> ChamferField:
        if self._chamfer is None:
            smap = self.scene_map()
            self._chamfer = chamfer_transform(smap.drivable_mask, smap.transform)
        return self._chamfer


@dataclass
class SceneDataset:
    root: Path
    master_seed: int
    grid_size: int
    records: List[SceneRecord]

    def __len__(self):
        return len(self.records)

    def __getitem__(self, i) -> SceneRecord:
        return self.records[i]

    def by_id(self, rid: str) -> SceneRecord:
        for r in self.records:
            if r.id == rid:
                return r
        raise ConfigError(f"scene {rid!r} not found in {self.root}")


def _normalize_mix(mix: Optional[Dict[str, float]]) -> Dict[str, float]:
    mix = dict(DEFAULT_LAYOUT_MIX if mix is None else mix)
    for kind in mix:
        if kind not in LAYOUT_KINDS:
            raise ConfigError(f"unknown layout kind in mix: {kind!r}")
    total = sum(mix.values())
    if total <= 0:
        raise ConfigError("layout mix must have positive total weight")
    return {k: v / total for k, v in mix.items()}


def generate_dataset(
    out_dir,
    n_scenes: int,
    master_seed: int,
    grid_size: int = DEFAULT_GRID_SIZE,
    layout_mix: Optional[Dict[str, float]] = None,
) -> SceneDataset:
    """Generate and write a dataset; byte-identical for identical arguments."""
    out = Path(out_dir)
    (out / "rasters").mkdir(parents=True, exist_ok=True)
    mix = _normalize_mix(layout_mix)
    kinds = sorted(mix)
    probs = np.array([mix[k] for k in kinds])

    rng = np.random.default_rng(np.random.SeedSequence([11, master_seed]))
    entries = []
    records = []
    for _ in range(n_scenes):
        kind = kinds[int(rng.choice(len(kinds), p=probs))]
        for attempt in range(100):
            seed = int(rng.integers(2**62))
            layout = generate_layout(kind, seed)
            try:
                traj = simulate_agent(layout, seed)
            except GeometryError:
                continue
            fx, fy = traj.future[:, 0], traj.future[:, 1]
            if bool(np.all(layout.contains(fx, fy))):
                break
        else:
            raise GeometryError(f"could not generate a valid {kind} scene")

        rid = scene_id(kind, seed)
        smap = rasterize(layout, traj, grid_size)
        rel = f"rasters/{rid}.bin"
        save_raster(out / rel, smap.grid)
        pose = smap.pose
        entries.append(
            {
                "id": rid,
                "kind": kind,
                "seed": seed,
                "points": traj.points.tolist(),
                "t_p": traj.t_p,
                "rate_hz": traj.rate_hz,
                "pose": {"position": pose.position.tolist(), "heading": pose.heading},
                "raster": rel,
            }
        )
        records.append(
            SceneRecord(
                id=rid,
                kind=kind,
                seed=seed,
                trajectory=traj,
                pose=pose,
                grid_size=grid_size,
                raster_path=out / rel,
                _grid=smap.grid,
            )
        )

    index = {
        "version": INDEX_VERSION,
        "master_seed": master_seed,
        "grid_size": grid_size,
        "layout_mix": {k: mix[k] for k in kinds},
        "records": entries,
    }
    (out / "index.json").write_text(json.dumps(index, sort_keys=True, indent=1) + "\n")
    return SceneDataset(root=out, master_seed=master_seed, grid_size=grid_size, records=records)


def load_dataset(root) -> SceneDataset:
    root = Path(root)
    index_path = root / "index.json"
    if not index_path.exists():
        raise ConfigError(f"no dataset at {root} (missing index.json)")
    index = json.loads(index_path.read_text())
    if index.get("version") != INDEX_VERSION:
        raise ConfigError(f"unsupported dataset version {index.get('version')}")
    records = []
    for e in index["records"]:
        traj = Trajectory(
            points=np.array(e["points"], dtype=np.float64),
            t_p=int(e["t_p"]),
            rate_hz=float(e["rate_hz"]),
        )
        pose = AgentPose(
            position=np.array(e["pose"]["position"], dtype=np.float64),
            heading=float(e["pose"]["heading"]),
        )
        records.append(
            SceneRecord(
                id=e["id"],
                kind=e["kind"],
                seed=int(e["seed"]),
                trajectory=traj,
                pose=pose,
                grid_size=int(index["grid_size"]),
                raster_path=root / e["raster"],
            )
        )
    return SceneDataset(
        root=root,
        master_seed=int(index["master_seed"]),
        grid_size=int(index["grid_size"]),
        records=records,
    )
