"""Small neural-network layer library over the tensor engine."""

from __future__ import annotations

from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, ShapeError

LEAKY_SLOPE = 0.1


class Module:
    """Base class with parameter/buffer registries and train/eval modes."""

    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_buffers", {})
        object.__setattr__(self, "_children", {})
        object.__setattr__(self, "training", True)

    def __setattr__(self, name, value):
        if isinstance(value, Tensor) and value.requires_grad:
            self._params[name] = value
        elif isinstance(value, Module):
            self._children[name] = value
        object.__setattr__(self, name, value)

    def register_buffer(self, name, array):
        arr = np.asarray(array, dtype=np.float64)
        self._buffers[name] = arr
        object.__setattr__(self, name, arr)

    # -- traversal ---------------------------------------------------------
    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Tensor]]:
        for name, p in self._params.items():
            yield f"{prefix}{name}", p
        for cname, child in self._children.items():
            yield from child.named_parameters(f"{prefix}{cname}.")

    def named_buffers(self, prefix: str = "") -> Iterator[Tuple[str, np.ndarray]]:
        for name, b in self._buffers.items():
            yield f"{prefix}{name}", b
        for cname, child in self._children.items():
            yield from child.named_buffers(f"{prefix}{cname}.")

    def parameters(self) -> List[Tensor]:
        return [p for _, p in self.named_parameters()]

    # -- modes -------------------------------------------------------------
    def train(self, mode: bool = True):
        object.__setattr__(self, "training", mode)
        for child in self._children.values():
            child.train(mode)
        return self

    def eval(self):
        return self.train(False)

    def freeze(self):
        for p in self.parameters():
            p.requires_grad = False
        return self

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    # -- state -------------------------------------------------------------
    def state_dict(self) -> Dict[str, np.ndarray]:
        out = {f"param.{k}": p.data.copy() for k, p in self.named_parameters()}
        out.update({f"buffer.{k}": b.copy() for k, b in self.named_buffers()})
        return out

    def load_state_dict(self, state: Dict[str, np.ndarray]):
        own_params = dict(self.named_parameters())
        own_buffers = dict(self.named_buffers())
        expected = {f"param.{k}" for k in own_params} | {f"buffer.{k}" for k in own_buffers}
        if set(state) != expected:
            missing = expected - set(state)
            extra = set(state) - expected
            raise ConfigError(f"state mismatch: missing {sorted(missing)}, extra {sorted(extra)}")
        for k, p in own_params.items():
            src = state[f"param.{k}"]
            if src.shape != p.data.shape:
                raise ConfigError(f"shape mismatch for {k}: {src.shape} vs {p.data.shape}")
            p.data[...] = src
        for k, b in own_buffers.items():
            b[...] = state[f"buffer.{k}"]


class ModuleList(Module):
    def __init__(self, modules):
        super().__init__()
        self.items = list(modules)
        for i, m in enumerate(self.items):
            self._children[str(i)] = m

    def __iter__(self):
        return iter(self.items)

    def __getitem__(self, i):
        return self.items[i]

    def __len__(self):
        return len(self.items)


def _xavier(rng: np.random.Generator, fan_in: int, fan_out: int, shape) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, zero_init=False):
        super().__init__()
        w = np.zeros((d_in, d_out)) if zero_init else _xavier(rng, d_in, d_out, (d_in, d_out))
        self.w = ad.tensor(w, requires_grad=True)
        self.b = ad.tensor(np.zeros(d_out), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return x @ self.w + self.b


class BatchNorm(Module):
    """Batch normalization over rows of (rows, channels) activations."""

    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5):
        super().__init__()
        self.gamma = ad.tensor(np.ones(channels), requires_grad=True)
        self.beta = ad.tensor(np.zeros(channels), requires_grad=True)
        self.register_buffer("running_mean", np.zeros(channels))
        self.register_buffer("running_var", np.ones(channels))
        self.momentum = momentum
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return ad.batch_norm(
            x,
            self.gamma,
            self.beta,
            self.running_mean,
            self.running_var,
            self.training,
            self.momentum,
            self.eps,
        )


class GRUCell(Module):
    """Gated recurrent cell; a None input runs the zero-input recurrence."""

    def __init__(self, d_in: int, d_hidden: int, rng: np.random.Generator):
        super().__init__()
        h = d_hidden
        self.d_in = d_in
        self.d_hidden = h
        self.w_zr = ad.tensor(_xavier(rng, d_in, 2 * h, (d_in, 2 * h)), requires_grad=True)
        self.u_zr = ad.tensor(_xavier(rng, h, 2 * h, (h, 2 * h)), requires_grad=True)
        self.b_zr = ad.tensor(np.zeros(2 * h), requires_grad=True)
        self.w_n = ad.tensor(_xavier(rng, d_in, h, (d_in, h)), requires_grad=True)
        self.u_n = ad.tensor(_xavier(rng, h, h, (h, h)), requires_grad=True)
        self.b_n = ad.tensor(np.zeros(h), requires_grad=True)

    def __call__(self, x: Optional[Tensor], h: Tensor) -> Tensor:
        pre = h @ self.u_zr + self.b_zr
        if x is not None:
            pre = pre + x @ self.w_zr
        zr = ad.sigmoid(pre)
        z = zr[:, : self.d_hidden]
        r = zr[:, self.d_hidden :]
        n_pre = (r * h) @ self.u_n + self.b_n
        if x is not None:
            n_pre = n_pre + x @ self.w_n
        n = ad.tanh(n_pre)
        return (1.0 - z) * n + z * h


def conv2d(x: Tensor, w: Tensor, b: Tensor, stride: int = 1, pad: int = 0) -> Tensor:
    """2-d convolution on NHWC tensors (custom op, im2col forward/col2im backward)."""
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"conv2d expects NHWC input and (kh,kw,cin,cout) weight, got {x.shape}, {w.shape}")
    n, h, wid, cin = x.shape
    kh, kw, cin_w, cout = w.shape
    if cin != cin_w:
        raise ShapeError(f"conv2d channel mismatch: input {cin}, weight {cin_w}")
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (wid + 2 * pad - kw) // stride + 1
    xp = np.pad(x.data, ((0, 0), (pad, pad), (pad, pad), (0, 0))) if pad else x.data

    cols = np.empty((n, ho, wo, kh, kw, cin))
    for ki in range(kh):
        for kj in range(kw):
            cols[:, :, :, ki, kj, :] = xp[:, ki : ki + stride * ho : stride, kj : kj + stride * wo : stride, :]
    cols2 = cols.reshape(n * ho * wo, kh * kw * cin)
    wmat = w.data.reshape(kh * kw * cin, cout)
    out = (cols2 @ wmat + b.data).reshape(n, ho, wo, cout)

    def bw(g):
        g2 = g.reshape(n * ho * wo, cout)
        dw = (cols2.T @ g2).reshape(kh, kw, cin, cout)
        db = g2.sum(axis=0)
        dcols = (g2 @ wmat.T).reshape(n, ho, wo, kh, kw, cin)
        dxp = np.zeros_like(xp)
        for ki in range(kh):
            for kj in range(kw):
                dxp[:, ki : ki + stride * ho : stride, kj : kj + stride * wo : stride, :] += dcols[
                    :, :, :, ki, kj, :
                ]
        dx = dxp[:, pad : pad + h, pad : pad + wid, :] if pad else dxp
        return dx, dw, db

    return ad.apply_op(out, (x, w, b), bw, "conv2d")


class Conv2d(Module):
    def __init__(self, cin: int, cout: int, rng: np.random.Generator, kernel: int = 3, stride: int = 1, pad: int = 1):
        super().__init__()
        fan_in = kernel * kernel * cin
        self.w = ad.tensor(
            _xavier(rng, fan_in, cout, (kernel, kernel, cin, cout)), requires_grad=True
        )
        self.b = ad.tensor(np.zeros(cout), requires_grad=True)
        self.stride = stride
        self.pad = pad

    def __call__(self, x: Tensor) -> Tensor:
        return conv2d(x, self.w, self.b, self.stride, self.pad)


def leaky_relu(x: Tensor) -> Tensor:
    return ad.leaky_relu(x, LEAKY_SLOPE)
