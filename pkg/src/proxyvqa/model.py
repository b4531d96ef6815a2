"""Shared convolutional encoder and per-task MLP heads built on :mod:`autodiff`."""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from proxyvqa import autodiff as ad
from proxyvqa.autodiff import Tensor
from proxyvqa.errors import ValidationError

CHANNELS = (8, 16, 32)
EMBED_DIM = 64
HEAD_HIDDEN = 32


def _uniform(rng, shape, fan_in):
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


@dataclass
class EncoderParams:
    """Conv stack (3x3, stride 2, ReLU) -> global average pool -> linear to ``embed_dim``."""

    height: int
    width: int
    tensors: "OrderedDict[str, Tensor]" = field(default_factory=OrderedDict)

    @property
    def embed_dim(self) -> int:
        return self.tensors["proj.w"].shape[1]

    @property
    def n_conv(self) -> int:
        return sum(1 for k in self.tensors if k.startswith("conv") and k.endswith(".w"))

    def parameters(self) -> list:
        return list(self.tensors.values())

    def n_params(self) -> int:
        return int(sum(t.data.size for t in self.tensors.values()))

    def flat_grad(self) -> np.ndarray:
        return np.concatenate([_grad_or_zero(t).ravel() for t in self.tensors.values()])


@dataclass
class HeadParams:
    """MLP head: (linear -> ReLU ->) linear to a scalar. ``hidden=None`` drops the hidden layer."""

    task: str
    tensors: "OrderedDict[str, Tensor]" = field(default_factory=OrderedDict)

    @property
    def in_dim(self) -> int:
        return self.tensors["fc1.w"].shape[0]

    @property
    def hidden(self) -> Optional[int]:
        return self.tensors["fc1.w"].shape[1] if "fc2.w" in self.tensors else None

    def parameters(self) -> list:
        return list(self.tensors.values())


def _grad_or_zero(t: Tensor) -> np.ndarray:
    return t.grad if t.grad is not None else np.zeros_like(t.data)


def _param(data, name):
    t = Tensor(data, requires_grad=True, name=name)
    t.zero_grad()
    return t


def init_encoder(seed: int, height: int, width: int, channels: Sequence[int] = CHANNELS,
                 embed_dim: int = EMBED_DIM) -> EncoderParams:
    rng = np.random.default_rng([seed, 1])
    enc = EncoderParams(height, width)
    c_in = 1
    for i, c_out in enumerate(channels):
        fan_in = c_in * 9
        enc.tensors[f"conv{i}.w"] = _param(_uniform(rng, (c_out, c_in, 3, 3), fan_in), f"conv{i}.w")
        enc.tensors[f"conv{i}.b"] = _param(np.zeros(c_out), f"conv{i}.b")
        c_in = c_out
    enc.tensors["proj.w"] = _param(_uniform(rng, (c_in, embed_dim), c_in) / np.sqrt(2), "proj.w")
    enc.tensors["proj.b"] = _param(np.zeros(embed_dim), "proj.b")
    return enc


def init_head(seed: int, task: str, in_dim: int = EMBED_DIM, hidden: Optional[int] = HEAD_HIDDEN,
              task_index: int = 0) -> HeadParams:
    rng = np.random.default_rng([seed, 2, task_index])
    head = HeadParams(task)
    if hidden is None:
        head.tensors["fc1.w"] = _param(_uniform(rng, (in_dim, 1), in_dim) / np.sqrt(2), "fc1.w")
        head.tensors["fc1.b"] = _param(np.zeros(1), "fc1.b")
        return head
    head.tensors["fc1.w"] = _param(_uniform(rng, (in_dim, hidden), in_dim), "fc1.w")
    head.tensors["fc1.b"] = _param(np.zeros(hidden), "fc1.b")
    head.tensors["fc2.w"] = _param(_uniform(rng, (hidden, 1), hidden) / np.sqrt(2), "fc2.w")
    head.tensors["fc2.b"] = _param(np.zeros(1), "fc2.b")
    return head


def encode_batch(params: EncoderParams, frames) -> Tensor:
    """Embed a stack of frames (N, H, W) -> (N, D)."""
    x = frames.data if isinstance(frames, Tensor) else np.asarray(frames, dtype=np.float64)
    if x.ndim != 3 or x.shape[1:] != (params.height, params.width):
        raise ValidationError(
            f"encoder expects frames of {params.width}x{params.height}, got shape {x.shape}")
    h = Tensor(x[:, None, :, :] - 0.5)
    t = params.tensors
    for i in range(params.n_conv):
        h = ad.relu(ad.conv2d(h, t[f"conv{i}.w"], t[f"conv{i}.b"], stride=2, pad=1))
    pooled = ad.mean(h, axis=(2, 3))
    return pooled @ t["proj.w"] + t["proj.b"]


def encoder_forward(params: EncoderParams, frame) -> Tensor:
    frame = np.asarray(frame, dtype=np.float64)
    if frame.ndim != 2:
        raise ValidationError("encoder_forward takes a single 2-D frame")
    return ad.reshape(encode_batch(params, frame[None]), (params.embed_dim,))


def head_forward(head: HeadParams, z) -> Tensor:
    """Scalar prediction per embedding; z is (D,) or (N, D)."""
    z = ad.as_tensor(z)
    if z.shape[-1] != head.in_dim:
        raise ValidationError(f"head expects dimension {head.in_dim}, got {z.shape[-1]}")
    single = z.data.ndim == 1
    if single:
        z = ad.reshape(z, (1, head.in_dim))
    t = head.tensors
    out = z @ t["fc1.w"] + t["fc1.b"]
    if "fc2.w" in t:
        out = ad.relu(out) @ t["fc2.w"] + t["fc2.b"]
    return ad.reshape(out, () if single else (z.shape[0],))


def smooth_l1(pred: float, target: float, beta: float = 1.0) -> float:
    if beta <= 0:
        raise ValidationError("beta must be > 0")
    r = pred - target
    return r * r / (2 * beta) if abs(r) < beta else abs(r) - beta / 2


def task_loss_from_embeddings(head: HeadParams, z: Tensor, targets, beta: float = 1.0) -> Tensor:
    pred = head_forward(head, z)
    return ad.mean(ad.smooth_l1(pred, np.asarray(targets, dtype=np.float64), beta))


def task_loss(params: EncoderParams, head: HeadParams, frames, targets, beta: float = 1.0) -> Tensor:
    """Mean Smooth-L1 over a batch of (frame, target) pairs."""
    targets = np.atleast_1d(np.asarray(targets, dtype=np.float64))
    if len(targets) != len(frames):
        raise ValidationError(f"{len(frames)} frames but {len(targets)} targets")
    return task_loss_from_embeddings(head, encode_batch(params, frames), targets, beta)


def mean_pool(embeddings) -> Tensor:
    """Temporal mean of per-frame embeddings: a list of (D,) tensors or one (N, D) tensor."""
    if isinstance(embeddings, Tensor):
        stacked = embeddings
    else:
        embeddings = [ad.as_tensor(e) for e in embeddings]
        if not embeddings:
            raise ValidationError("mean_pool needs at least one embedding")
        dims = {e.shape for e in embeddings}
        if len(dims) != 1:
            raise ValidationError(f"embeddings have mixed shapes {sorted(dims)}")
        if any(e.requires_grad for e in embeddings):
            # keep the graph: sum then scale
            acc = embeddings[0]
            for e in embeddings[1:]:
                acc = acc + e
            return acc * (1.0 / len(embeddings))
        stacked = Tensor(np.stack([e.data for e in embeddings]))
    if stacked.data.ndim != 2 or stacked.shape[0] == 0:
        raise ValidationError("mean_pool expects a nonempty (N, D) stack")
    return ad.mean(stacked, axis=0)


def pooled_features(params: EncoderParams, frames, stride: int = 1, chunk: int = 64) -> np.ndarray:
    """Frozen-encoder clip feature: mean embedding over every ``stride``-th frame."""
    frames = np.asarray(frames)[::stride]
    parts = [encode_batch(params, frames[i:i + chunk]).data for i in range(0, len(frames), chunk)]
    return mean_pool(Tensor(np.concatenate(parts))).data
