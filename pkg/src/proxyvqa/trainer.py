"""Two-pass MGDA training of the shared encoder and per-task heads.

Pass 1 backpropagates each task loss on its own and snapshots the encoder
gradient; the min-norm solver turns those into simplex weights. Pass 2
recomputes the forward pass, backpropagates the weighted joint loss and
applies SGD with momentum to the encoder and every head.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from proxyvqa import model as M
from proxyvqa.errors import PipelineError, ValidationError
from proxyvqa.fr_metrics import parse_tasks
from proxyvqa.mgda import GradientBundle, compose_joint_loss, min_norm_solve
from proxyvqa.storage import Manifest, read_container, write_container, write_csv

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    batch_size: int = 20
    learning_rate: float = 0.01
    momentum: float = 0.9
    epochs: int = 10
    frame_stride: int = 2
    tasks: tuple = ("ssim", "ms_ssim", "psnr_norm")
    seed: int = 0
    beta: float = 1.0
    embed_dim: int = M.EMBED_DIM
    head_hidden: int = M.HEAD_HIDDEN

    def __post_init__(self):
        self.tasks = parse_tasks(self.tasks)
        if self.batch_size < 1:
            raise ValidationError("batch_size must be >= 1")
        if not self.learning_rate >= 0:
            raise ValidationError("learning_rate must be >= 0")
        if not 0 <= self.momentum < 1:
            raise ValidationError("momentum must lie in [0, 1)")
        if self.epochs < 1 or self.frame_stride < 1:
            raise ValidationError("epochs and frame_stride must be >= 1")
        if self.beta <= 0:
            raise ValidationError("beta must be > 0")

    @classmethod
    def from_mapping(cls, values: dict) -> "TrainConfig":
        known = {f.name: f.type for f in fields(cls)}
        unknown = set(values) - set(known)
        if unknown:
            raise ValidationError(f"unknown train config keys: {', '.join(sorted(unknown))}")
        kw = {}
        for k, v in values.items():
            if k == "tasks":
                kw[k] = parse_tasks(v)
            elif known[k] == "int":
                kw[k] = int(v)
            else:
                kw[k] = float(v)
        return cls(**kw)

    def as_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["tasks"] = ",".join(self.tasks)
        return d


@dataclass
class StepRecord:
    step: int
    losses: np.ndarray
    alpha: np.ndarray
    joint_loss: float
    grad_norms: np.ndarray
    aborted: bool = False
    degenerate: bool = False
    applied_encoder_grad: Optional[np.ndarray] = field(default=None, repr=False)
    task_grads: Optional[np.ndarray] = field(default=None, repr=False)


class MultiTaskModel:
    """Encoder, ordered heads and SGD momentum buffers."""

    def __init__(self, encoder: M.EncoderParams, heads: Sequence[M.HeadParams]):
        self.encoder = encoder
        self.heads = list(heads)
        self.velocity = [np.zeros_like(p.data) for p in self.parameters()]  # same order as parameters()

    @classmethod
    def init(cls, config: TrainConfig, height: int, width: int) -> "MultiTaskModel":
        enc = M.init_encoder(config.seed, height, width, embed_dim=config.embed_dim)
        heads = [M.init_head(config.seed, t, enc.embed_dim, config.head_hidden or None, i)
                 for i, t in enumerate(config.tasks)]
        return cls(enc, heads)

    @property
    def tasks(self) -> tuple:
        return tuple(h.task for h in self.heads)

    def parameters(self) -> list:
        out = self.encoder.parameters()
        for h in self.heads:
            out += h.parameters()
        return out

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def task_losses(self, frames, targets, beta):
        z = M.encode_batch(self.encoder, frames)
        return [M.task_loss_from_embeddings(h, z, targets[:, t], beta) for t, h in enumerate(self.heads)]

    def sgd_update(self, lr: float, momentum: float):
        for p, v in zip(self.parameters(), self.velocity):
            v *= momentum
            v += p.grad
            p.data -= lr * v

    def state(self) -> dict:
        out = {f"encoder.{k}": t.data for k, t in self.encoder.tensors.items()}
        for h in self.heads:
            out.update({f"head.{h.task}.{k}": t.data for k, t in h.tensors.items()})
        return out


def train_step(net: MultiTaskModel, frames, targets, config: TrainConfig, step: int = 0,
               keep_grads: bool = False) -> StepRecord:
    targets = np.asarray(targets, dtype=np.float64)
    if targets.ndim != 2 or targets.shape != (len(frames), len(net.heads)):
        raise ValidationError(f"targets must be (batch, {len(net.heads)}), got {targets.shape}")

    # pass 1: per-task encoder gradients
    losses = net.task_losses(frames, targets, config.beta)
    loss_vals = np.array([L.item() for L in losses])
    grads = []
    for L in losses:
        net.zero_grad()
        L.backward()
        grads.append(net.encoder.flat_grad().copy())
    grads = np.stack(grads)
    norms = np.sqrt((grads * grads).sum(axis=1))
    if not (np.all(np.isfinite(loss_vals)) and np.all(np.isfinite(grads))):
        net.zero_grad()
        nan = np.full(len(net.heads), np.nan)
        return StepRecord(step, loss_vals, nan, float("nan"), norms, aborted=True)

    sol = min_norm_solve(GradientBundle(net.tasks, grads))

    # pass 2: joint loss, full update
    net.zero_grad()
    joint = compose_joint_loss(sol, net.task_losses(frames, targets, config.beta))
    joint.backward()
    applied = net.encoder.flat_grad().copy() if keep_grads else None
    net.sgd_update(config.learning_rate, config.momentum)
    return StepRecord(step, loss_vals, sol.alpha, joint.item(), norms, degenerate=sol.degenerate,
                      applied_encoder_grad=applied, task_grads=grads if keep_grads else None)


@dataclass
class TrainLog:
    tasks: tuple
    records: list = field(default_factory=list)

    def columns(self) -> list:
        t = self.tasks
        return (["step", "epoch"] + [f"loss_{x}" for x in t] + [f"alpha_{x}" for x in t]
                + ["joint_loss"] + [f"gnorm_{x}" for x in t] + ["aborted"])

    def rows(self):
        for epoch, r in self.records:
            yield ([r.step, epoch] + list(r.losses) + list(r.alpha) + [r.joint_loss]
                   + list(r.grad_norms) + [int(r.aborted)])

    def epoch_means(self) -> np.ndarray:
        epochs = sorted({e for e, _ in self.records})
        out = []
        for ep in epochs:
            vals = [r.joint_loss for e, r in self.records if e == ep and not r.aborted]
            out.append(np.mean(vals) if vals else np.nan)
        return np.array(out)

    def write(self, path, provenance=None):
        write_csv(path, self.columns(), self.rows(), provenance)


@dataclass
class TrainingSet:
    frames: np.ndarray  # (n, H, W)
    targets: np.ndarray  # (n, T)
    tasks: tuple


def build_training_set(manifest: Manifest, target_rows: list, tasks: Sequence[str],
                       frame_stride: int = 2, contents: Optional[set] = None) -> TrainingSet:
    """Distorted frames with per-frame targets; validated before any training."""
    tasks = tuple(tasks)
    lookup = {}
    for r in target_rows:
        fi = int(r["frame_index"])
        if fi < 0:
            continue
        key = (int(r["content_id"]), int(r["level"]), fi)
        try:
            lookup[key] = [float(r[t]) for t in tasks]
        except KeyError as exc:
            raise ValidationError(f"targets table lacks task column {exc}") from None
    frames, targets = [], []
    for e in manifest.distorted():
        if contents is not None and e.content_id not in contents:
            continue
        clip = manifest.load(e)
        for fi in range(0, e.frames, frame_stride):
            key = (e.content_id, e.level, fi)
            if key not in lookup:
                raise ValidationError(f"no proxy targets for content {key[0]} level {key[1]} frame {fi}")
            frames.append(clip.frames[fi])
            targets.append(lookup[key])
    if not frames:
        raise ValidationError("training set is empty (no distorted clips matched)")
    return TrainingSet(np.stack(frames).astype(np.float64), np.array(targets), tasks)


def save_checkpoint(path, net: MultiTaskModel, config: TrainConfig, epoch: int) -> None:
    meta = dict(height=net.encoder.height, width=net.encoder.width, tasks=list(net.tasks),
                embed_dim=net.encoder.embed_dim, head_hidden=config.head_hidden,
                seed=config.seed, epoch=epoch)
    state = net.state()
    limit = np.finfo(np.float32).max
    bad = [k for k, v in state.items() if not np.all(np.abs(v) <= limit)]
    if bad:
        raise PipelineError(f"epoch {epoch}: parameters diverged ({bad[0]} not representable)")
    write_container(path, state, meta, dtype="f4")


def load_checkpoint(path) -> MultiTaskModel:
    tensors, meta = read_container(path)
    try:
        enc = M.EncoderParams(int(meta["height"]), int(meta["width"]))
        for k, v in tensors.items():
            if k.startswith("encoder."):
                enc.tensors[k[len("encoder."):]] = M._param(v, k)
        heads = []
        for task in meta["tasks"]:
            h = M.HeadParams(task)
            prefix = f"head.{task}."
            for k, v in tensors.items():
                if k.startswith(prefix):
                    h.tensors[k[len(prefix):]] = M._param(v, k)
            heads.append(h)
    except KeyError as exc:
        raise ValidationError(f"{path}: checkpoint lacks {exc}") from None
    return MultiTaskModel(enc, heads)


def pretrain(data: TrainingSet, config: TrainConfig, out_dir=None, progress=None):
    """Run ``config.epochs`` epochs. Returns (model, TrainLog, checkpoint paths)."""
    if tuple(data.tasks) != tuple(config.tasks):
        raise ValidationError(f"training targets {data.tasks} do not match config tasks {config.tasks}")
    n, h, w = data.frames.shape
    net = MultiTaskModel.init(config, h, w)
    tlog = TrainLog(config.tasks)
    paths = []
    step = 0
    for epoch in range(1, config.epochs + 1):
        order = np.random.default_rng([config.seed, 3, epoch]).permutation(n)
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            with np.errstate(over="ignore", invalid="ignore"):  # divergence is caught as an abort
                rec = train_step(net, data.frames[idx], data.targets[idx], config, step)
            if rec.aborted:
                log.warning("step %d aborted: non-finite loss", step)
            tlog.records.append((epoch, rec))
            step += 1
        means = tlog.epoch_means()
        if not np.isfinite(means[-1]):
            raise PipelineError(f"epoch {epoch}: every step aborted")
        log.info("epoch %d joint loss %.6f", epoch, means[-1])
        if progress:
            progress(epoch, means[-1])
        if out_dir is not None:
            p = Path(out_dir) / f"epoch_{epoch:03d}.bin"
            save_checkpoint(p, net, config, epoch)
            paths.append(p)
    if out_dir is not None:
        p = Path(out_dir) / "final.bin"
        save_checkpoint(p, net, config, config.epochs)
        paths.append(p)
    return net, tlog, paths
