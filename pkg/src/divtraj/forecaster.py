"""Forecasting networks: recurrent past encoder, convolutional map encoder,
cVAE latent head and decoder, and the two-branch diversity sampler.

The networks operate in the agent-centered frame (current position at the
origin, heading along +x). The decoder emits per-step offsets that are
cumulatively summed, so zero weights decode to an agent that stays put.
Trajectory tensors are (rows, t_f * 2) with time-major coordinate layout.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Tuple

import numpy as np

from . import autodiff as ad
from . import nn
from .autodiff import Tensor
from .checkpoint import load_arrays, load_sidecar, save_arrays, save_sidecar
from .errors import ConfigError, ShapeError

FUSION_MODES = ("concat", "sum", "product")
DSF_VARIANTS = ("2B", "1B-D", "1B-L")


@dataclass
class ForecasterConfig:
    t_p: int = 12
    t_f: int = 6
    d_h: int = 128
    d_m: int = 128
    d_z: int = 16
    grid_size: int = 64
    map_channels: int = 3
    conv_channels: Tuple[int, ...] = (8, 16, 32, 64)
    head_hidden: int = 64
    posterior_hidden: int = 128
    n_predictions: int = 12
    dsf_width: int = 128
    dsf_layers: int = 4
    fusion: str = "product"
    dsf_variant: str = "2B"  # 2B | 1B-D (past-fed) | 1B-L (map-fed)
    logvar_clamp: float = 10.0

    def __post_init__(self):
        if self.fusion not in FUSION_MODES:
            raise ConfigError(f"unknown fusion mode {self.fusion!r}; expected {FUSION_MODES}")
        if self.dsf_variant not in DSF_VARIANTS:
            raise ConfigError(f"unknown DSF variant {self.dsf_variant!r}; expected {DSF_VARIANTS}")
        if self.fusion == "concat" and self.d_z % 2:
            raise ConfigError("concat fusion needs an even latent dimension")

    @property
    def decoder_hidden(self) -> int:
        return self.d_z + self.d_h + self.d_m

    def to_dict(self) -> dict:
        d = asdict(self)
        d["conv_channels"] = list(self.conv_channels)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ForecasterConfig":
        d = dict(d)
        d["conv_channels"] = tuple(d["conv_channels"])
        return cls(**d)


class PastEncoder(nn.Module):
    """h = GRU(S_p): final hidden state of a unidirectional pass."""

    def __init__(self, cfg: ForecasterConfig, rng):
        super().__init__()
        self.cell = nn.GRUCell(2, cfg.d_h, rng)
        self.t_p = cfg.t_p
        self.d_h = cfg.d_h

    def __call__(self, past: Tensor) -> Tensor:
        if past.ndim != 3 or past.shape[1] != self.t_p or past.shape[2] != 2:
            raise ShapeError(f"past must be (B, {self.t_p}, 2), got {past.shape}")
        b = past.shape[0]
        h = ad.tensor(np.zeros((b, self.d_h)))
        for t in range(self.t_p):
            x = past[:, t, :].reshape(b, 2)
            h = self.cell(x, h)
        return h


class MapEncoder(nn.Module):
    """m = CNN(M): strided conv blocks, global average pool, linear head."""

    def __init__(self, cfg: ForecasterConfig, rng):
        super().__init__()
        chans = (cfg.map_channels,) + tuple(cfg.conv_channels)
        self.convs = nn.ModuleList(
            [nn.Conv2d(chans[i], chans[i + 1], rng, stride=2, pad=1) for i in range(len(chans) - 1)]
        )
        self.norms = nn.ModuleList([nn.BatchNorm(c) for c in chans[1:]])
        self.head = nn.Linear(chans[-1], cfg.d_m, rng)
        self.grid_size = cfg.grid_size
        self.map_channels = cfg.map_channels

    def __call__(self, maps: Tensor) -> Tensor:
        expected = (self.grid_size, self.grid_size, self.map_channels)
        if maps.ndim != 4 or maps.shape[1:] != expected:
            raise ShapeError(f"maps must be (B, {expected[0]}, {expected[1]}, {expected[2]}), got {maps.shape}")
        x = maps
        for conv, norm in zip(self.convs, self.norms):
            x = conv(x)
            b, h, w, c = x.shape
            x = norm(x.reshape(b * h * w, c)).reshape(b, h, w, c)
            x = nn.leaky_relu(x)
        b, h, w, c = x.shape
        pooled = x.reshape(b, h * w, c).mean(axis=1)
        return self.head(pooled)


class Posterior(nn.Module):
    """q(z | h, m, S_f): Gaussian parameters from the fused context."""

    def __init__(self, cfg: ForecasterConfig, rng):
        super().__init__()
        d_in = cfg.d_h + cfg.d_m + cfg.t_f * 2
        self.fc1 = nn.Linear(d_in, cfg.posterior_hidden, rng)
        self.fc2 = nn.Linear(cfg.posterior_hidden, 2 * cfg.d_z, rng)
        self.d_z = cfg.d_z
        self.clamp = cfg.logvar_clamp

    def __call__(self, h: Tensor, m: Tensor, future_flat: Tensor):
        x = ad.concat([h, m, future_flat], axis=1)
        x = nn.leaky_relu(self.fc1(x))
        out = self.fc2(x)
        mu = out[:, : self.d_z]
        logvar = ad.clamp(out[:, self.d_z :], -self.clamp, self.clamp)
        return mu, logvar


class Decoder(nn.Module):
    """Recurrent decoder unrolled t_f steps from a (z, h, m) initialization."""

    def __init__(self, cfg: ForecasterConfig, rng):
        super().__init__()
        self.cell = nn.GRUCell(1, cfg.decoder_hidden, rng)  # input is always zero
        self.fc1 = nn.Linear(cfg.decoder_hidden, cfg.head_hidden, rng)
        self.fc2 = nn.Linear(cfg.head_hidden, 2, rng)
        self.t_f = cfg.t_f

    def __call__(self, z: Tensor, h: Tensor, m: Tensor) -> Tensor:
        state = ad.concat([z, h, m], axis=1)
        pos = None
        outputs = []
        for _ in range(self.t_f):
            state = self.cell(None, state)
            offset = self.fc2(nn.leaky_relu(self.fc1(state)))
            pos = offset if pos is None else pos + offset
            outputs.append(pos)
        return ad.concat(outputs, axis=1)  # (B, t_f * 2), time-major


class DsfBranch(nn.Module):
    """Four fully-connected layers with batch norm and leaky relu."""

    def __init__(self, d_in: int, width: int, n_layers: int, d_out: int, rng):
        super().__init__()
        dims = [d_in] + [width] * (n_layers - 1)
        self.hidden = nn.ModuleList([nn.Linear(dims[i], dims[i + 1], rng) for i in range(len(dims) - 1)])
        self.norms = nn.ModuleList([nn.BatchNorm(width) for _ in range(n_layers - 1)])
        self.out = nn.Linear(dims[-1], d_out, rng)

    def __call__(self, x: Tensor) -> Tensor:
        for fc, norm in zip(self.hidden, self.norms):
            x = nn.leaky_relu(norm(fc(x)))
        return self.out(x)


class DiversitySampler(nn.Module):
    """Maps context embeddings to all N latent codes at once.

    Two branches produce partial codes from the past embedding (diversity)
    and the map embedding (quality); a gating fusion combines them. The
    one-branch ablations drop either input.
    """

    def __init__(self, cfg: ForecasterConfig, rng):
        super().__init__()
        self.cfg = cfg
        n, d_z = cfg.n_predictions, cfg.d_z
        per_branch = d_z // 2 if (cfg.fusion == "concat" and cfg.dsf_variant == "2B") else d_z
        if cfg.dsf_variant == "2B":
            self.past_branch = DsfBranch(cfg.d_h, cfg.dsf_width, cfg.dsf_layers, n * per_branch, rng)
            self.map_branch = DsfBranch(cfg.d_m, cfg.dsf_width, cfg.dsf_layers, n * per_branch, rng)
        elif cfg.dsf_variant == "1B-D":
            self.past_branch = DsfBranch(cfg.d_h, cfg.dsf_width, cfg.dsf_layers, n * d_z, rng)
        else:  # 1B-L
            self.map_branch = DsfBranch(cfg.d_m, cfg.dsf_width, cfg.dsf_layers, n * d_z, rng)

    def codes(self, h: Tensor, m: Tensor) -> Tensor:
        """(B * N, d_z) latent codes, scene-major row order."""
        cfg = self.cfg
        n, d_z = cfg.n_predictions, cfg.d_z
        b = h.shape[0]
        if cfg.dsf_variant == "1B-D":
            return self.past_branch(h).reshape(b * n, d_z)
        if cfg.dsf_variant == "1B-L":
            return self.map_branch(m).reshape(b * n, d_z)
        zp = self.past_branch(h)
        zm = self.map_branch(m)
        if cfg.fusion == "product":
            return (zp * zm).reshape(b * n, d_z)
        if cfg.fusion == "sum":
            return (zp + zm).reshape(b * n, d_z)
        half = d_z // 2
        return ad.concat(
            [zp.reshape(b * n, half), zm.reshape(b * n, half)], axis=1
        )


class Forecaster(nn.Module):
    """The full model: cVAE backbone (upper path) plus diversity sampler."""

    def __init__(self, cfg: ForecasterConfig, seed: int = 0):
        super().__init__()
        rng = np.random.default_rng(np.random.SeedSequence([23, seed]))
        self.cfg = cfg
        self.past_encoder = PastEncoder(cfg, rng)
        self.map_encoder = MapEncoder(cfg, rng)
        self.posterior = Posterior(cfg, rng)
        self.decoder = Decoder(cfg, rng)
        self.dsf = DiversitySampler(cfg, rng)

    # -- backbone ------------------------------------------------------------
    def encode(self, past: Tensor, maps: Tensor) -> Tuple[Tensor, Tensor]:
        return self.past_encoder(past), self.map_encoder(maps)

    def reparameterize(self, mu: Tensor, logvar: Tensor, eps: np.ndarray) -> Tensor:
        sigma = ad.exp(0.5 * logvar)
        return mu + sigma * ad.tensor(eps)

    def decode(self, z: Tensor, h: Tensor, m: Tensor) -> Tensor:
        return self.decoder(z, h, m)

    def prior_sample(self, h: Tensor, m: Tensor, n: int, rng: np.random.Generator) -> Tensor:
        """Decode n independent standard-normal codes per scene: (B * n, t_f * 2)."""
        b = h.shape[0]
        z = ad.tensor(rng.standard_normal((b * n, self.cfg.d_z)))
        return self.decode(z, ad.repeat_rows(h, n), ad.repeat_rows(m, n))

    # -- diversity sampler -----------------------------------------------------
    def dsf_sample(self, h: Tensor, m: Tensor) -> Tuple[Tensor, Tensor]:
        """All N futures for each scene: trajectories (B * N, t_f * 2) and codes."""
        n = self.cfg.n_predictions
        codes = self.dsf.codes(h, m)
        trajs = self.decode(codes, ad.repeat_rows(h, n), ad.repeat_rows(m, n))
        return trajs, codes

    # -- backbone freezing -------------------------------------------------
    def backbone_modules(self):
        return {
            "past_encoder": self.past_encoder,
            "map_encoder": self.map_encoder,
            "posterior": self.posterior,
            "decoder": self.decoder,
        }

    def backbone_parameters(self):
        for name, mod in self.backbone_modules().items():
            for pname, p in mod.named_parameters(f"{name}."):
                yield pname, p

    def freeze_backbone(self):
        for mod in self.backbone_modules().values():
            mod.freeze()
            mod.eval()

    # -- persistence ---------------------------------------------------------
    def save(self, path):
        path = Path(path)
        save_arrays(path, self.state_dict())
        save_sidecar(path.with_suffix(path.suffix + ".json"), self.cfg.to_dict())

    @classmethod
    def load(cls, path) -> "Forecaster":
        path = Path(path)
        cfg = ForecasterConfig.from_dict(load_sidecar(path.with_suffix(path.suffix + ".json")))
        model = cls(cfg)
        model.load_state_dict(load_arrays(path))
        return model


def expected_backbone_hash(path) -> str:
    """Architecture hash stored in a checkpoint's sidecar."""
    import json

    path = Path(path)
    payload = json.loads(path.with_suffix(path.suffix + ".json").read_text())
    return payload["hash"]
