"""Gradient plumbing: reverse-mode backward, AdamW, EMA and checkpoints.

Reverse-mode differentiation is delegated to ``torch.autograd``; this module
fixes the contract around it (scalar losses, named parameter maps) and owns
the optimizer and averaging updates so their state can be serialized into the
``SBUF1`` container.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import torch

__all__ = [
    "GradientError",
    "backward",
    "AdamWState",
    "optimizer_step",
    "EmaState",
    "ema_update",
    "grad_norm",
    "save_container",
    "load_container",
]


class GradientError(RuntimeError):
    pass


def backward(loss: torch.Tensor, params: Mapping[str, torch.Tensor]) -> dict:
    """Gradients of a scalar ``loss`` w.r.t. each named parameter.

    Parameters the loss does not depend on get zero gradients.  The graph is
    consumed.
    """
    if loss.numel() != 1:
        raise GradientError(f"backward needs a scalar loss, got shape {tuple(loss.shape)}")
    names = list(params)
    tensors = [params[n] for n in names]
    if not loss.requires_grad:
        raise GradientError("loss is detached from every tracked parameter")
    grads = torch.autograd.grad(loss.reshape(()), tensors, allow_unused=True)
    return {
        n: torch.zeros_like(p) if g is None else g
        for n, p, g in zip(names, tensors, grads)
    }


def grad_norm(grads: Mapping[str, torch.Tensor]) -> float:
    total = sum(float(torch.sum(g.detach().double() ** 2)) for g in grads.values())
    return total**0.5


@dataclass
class AdamWState:
    lr: float = 1e-4
    betas: tuple = (0.9, 0.999)
    weight_decay: float = 0.0
    eps: float = 1e-8
    step_count: int = 0
    first_moment: dict = field(default_factory=dict)
    second_moment: dict = field(default_factory=dict)


@torch.no_grad()
def optimizer_step(params: Mapping[str, torch.Tensor], grads: Mapping[str, torch.Tensor], state: AdamWState) -> AdamWState:
    """One AdamW update (decoupled weight decay), applied in place."""
    state.step_count += 1
    beta1, beta2 = state.betas
    bc1 = 1.0 - beta1**state.step_count
    bc2 = 1.0 - beta2**state.step_count
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {tuple(g.shape)} != parameter shape {tuple(p.shape)} for {name}")
        m = state.first_moment.get(name)
        if m is None:
            m = state.first_moment[name] = torch.zeros_like(p)
            state.second_moment[name] = torch.zeros_like(p)
        v = state.second_moment[name]
        if m.shape != p.shape:
            raise ValueError(f"optimizer state for {name} has shape {tuple(m.shape)}")
        if state.weight_decay:
            p.mul_(1.0 - state.lr * state.weight_decay)
        m.mul_(beta1).add_(g, alpha=1.0 - beta1)
        v.mul_(beta2).addcmul_(g, g, value=1.0 - beta2)
        denom = (v / bc2).sqrt_().add_(state.eps)
        p.addcdiv_(m, denom, value=-state.lr / bc1)
    return state


@dataclass
class EmaState:
    decay: float = 0.999
    shadow: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 0.0 < self.decay < 1.0:
            raise ValueError(f"EMA decay must lie in (0, 1), got {self.decay}")

    @classmethod
    def from_params(cls, params: Mapping[str, torch.Tensor], decay: float = 0.999) -> "EmaState":
        return cls(decay=decay, shadow={n: p.detach().clone() for n, p in params.items()})


@torch.no_grad()
def ema_update(params: Mapping[str, torch.Tensor], state: EmaState) -> EmaState:
    for name, p in params.items():
        s = state.shadow[name]
        if s.shape != p.shape:
            raise ValueError(f"EMA shadow shape {tuple(s.shape)} != parameter shape {tuple(p.shape)} for {name}")
        s.mul_(state.decay).add_(p.detach(), alpha=1.0 - state.decay)
    return state


# SBUF1 container: all integers little-endian.
#   magic  b"SBUF1"
#   u32    metadata length, then UTF-8 JSON metadata
#   u32    number of tensor records
#   record: u16 name length, UTF-8 name, u8 dtype code, u8 ndim,
#           ndim x u64 dims, raw little-endian data
MAGIC = b"SBUF1"
_DTYPES = {0: torch.float32, 1: torch.float64, 2: torch.int64}
_CODES = {v: k for k, v in _DTYPES.items()}


def save_container(path, tensors: Mapping[str, torch.Tensor], metadata: dict | None = None) -> None:
    meta = json.dumps(metadata or {}, sort_keys=True).encode()
    chunks = [MAGIC, struct.pack("<I", len(meta)), meta, struct.pack("<I", len(tensors))]
    for name in sorted(tensors):
        t = tensors[name].detach().contiguous().cpu()
        if t.dtype not in _CODES:
            raise TypeError(f"unsupported dtype {t.dtype} for {name}")
        raw_name = name.encode()
        chunks.append(struct.pack("<H", len(raw_name)) + raw_name)
        chunks.append(struct.pack("<BB", _CODES[t.dtype], t.dim()))
        chunks.append(struct.pack(f"<{t.dim()}Q", *t.shape))
        arr = t.numpy()
        chunks.append(arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_container(path) -> tuple:
    """Read an ``SBUF1`` file; returns ``(tensors, metadata)``."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    buf = path.read_bytes()
    if buf[:5] != MAGIC:
        raise ValueError(f"{path}: not an SBUF1 container")
    pos = 5
    (meta_len,) = struct.unpack_from("<I", buf, pos)
    pos += 4
    metadata = json.loads(buf[pos : pos + meta_len].decode())
    pos += meta_len
    (count,) = struct.unpack_from("<I", buf, pos)
    pos += 4
    tensors = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", buf, pos)
        pos += 2
        name = buf[pos : pos + name_len].decode()
        pos += name_len
        code, ndim = struct.unpack_from("<BB", buf, pos)
        pos += 2
        shape = struct.unpack_from(f"<{ndim}Q", buf, pos)
        pos += 8 * ndim
        dtype = _DTYPES[code]
        n = 1
        for d in shape:
            n *= d
        nbytes = n * torch.empty((), dtype=dtype).element_size()
        data = torch.frombuffer(bytearray(buf[pos : pos + nbytes]), dtype=dtype) if nbytes else torch.empty(0, dtype=dtype)
        tensors[name] = data.reshape(shape).clone()
        pos += nbytes
    return tensors, metadata
