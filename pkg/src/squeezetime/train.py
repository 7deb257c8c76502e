"""SGD training with linear warmup and cosine annealing, checkpointed
resumption, and multi-view evaluation."""
from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import ModelConfig
from .data import VideoRecord, center_crop, flip_horizontal, make_views, sample_clip, shuffle_frames
from .model import Model, build_model
from .nn import ops

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    def __init__(self, msg, last_good=None):
        super().__init__(msg if last_good is None else f"{msg} (last good checkpoint: {last_good})")
        self.last_good = last_good


@dataclass(frozen=True)
class TrainConfig:
    lr0: float = 0.015
    warmup_epochs: int = 8
    total_epochs: int = 30  # full-scale schedule: 100 epochs, batch 512
    weight_decay: float = 7e-5
    momentum: float = 0.9
    batch_size: int = 32
    seed: int = 0
    interval: int = 2  # frame stride of the dense sampler
    flip: bool = True
    shuffle_frames: bool = False  # destroys frame order, for the temporal probe
    clips_per_video: int = 1  # independently augmented clips drawn per video per epoch

    def __post_init__(self):
        if self.warmup_epochs < 0 or (self.total_epochs > 0 and self.warmup_epochs >= self.total_epochs):
            raise ValueError(f"need 0 <= warmup_epochs < total_epochs, got {self.warmup_epochs}, {self.total_epochs}")
        if self.lr0 <= 0:
            raise ValueError(f"lr0 must be positive, got {self.lr0}")
        if self.total_epochs < 0 or self.batch_size < 2 or self.interval < 1 or self.clips_per_video < 1:
            raise ValueError("total_epochs >= 0, batch_size >= 2, interval >= 1 and clips_per_video >= 1 are required")

    def to_dict(self):
        return dataclasses.asdict(self)


def lr_schedule(epoch: int, cfg: TrainConfig) -> float:
    w, e = cfg.warmup_epochs, cfg.total_epochs
    if not 0 <= epoch <= e:
        raise ValueError(f"epoch {epoch} outside [0, {e}]")
    if epoch < w:
        return cfg.lr0 * (epoch + 1) / w
    if e == w:
        return cfg.lr0
    return cfg.lr0 * 0.5 * (1.0 + math.cos(math.pi * (epoch - w) / (e - w)))


def decays(name: str) -> bool:
    """Weight decay applies to conv and linear weights only."""
    return name.endswith(".weight")


def sgd_step(params: dict, grads: dict, velocity: dict, lr: float, cfg: TrainConfig) -> None:
    """Classical momentum SGD with L2 weight decay folded into the gradient,
    updating ``params`` and ``velocity`` in place."""
    bad = [k for k, g in grads.items() if not np.all(np.isfinite(g))]
    if bad:
        raise FloatingPointError(f"non-finite gradient in {len(bad)} tensors, first {bad[0]!r}; step rejected")
    for k, p in params.items():
        g = grads[k]
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape} for {k}")
        if cfg.weight_decay and decays(k):
            g = g + cfg.weight_decay * p
        v = velocity.get(k)
        v = g.astype(p.dtype) if v is None else cfg.momentum * v + g
        velocity[k] = v
        p -= (lr * v).astype(p.dtype)


def _top1(logits, labels):
    return float(np.mean(np.argmax(logits, axis=1) == labels))


class Trainer:
    """Owns a model during training.

    All randomness (shuffle order, temporal offsets, flips, frame shuffles)
    comes from one PCG64 stream whose state is checkpointed with the
    momentum buffers, so an interrupted run resumes bit-exactly.
    """

    def __init__(self, model: Model, cfg: TrainConfig, dataset: Sequence[VideoRecord]):
        self.model = model
        self.cfg = cfg
        self.dataset = dataset
        self.velocity: dict[str, np.ndarray] = {}
        self.rng = np.random.Generator(np.random.PCG64(cfg.seed))
        self.epoch = 0
        self.history: list[dict] = []

    @property
    def crop(self):
        return self.model.config.resolution

    def _clip(self, rec: VideoRecord):
        c = self.model.config
        clip = sample_clip(rec, c.frames, self.cfg.interval, int(self.rng.integers(rec.length)))
        clip = center_crop(clip, self.crop)
        label = rec.label
        if self.cfg.flip and self.rng.random() < 0.5:
            clip, label = flip_horizontal(clip, label)
        if self.cfg.shuffle_frames:
            clip = shuffle_frames(clip, self.rng)
        return clip, label

    def run_epoch(self) -> dict:
        if self.epoch >= self.cfg.total_epochs:
            raise RuntimeError(f"already trained {self.epoch} of {self.cfg.total_epochs} epochs")
        lr = lr_schedule(self.epoch, self.cfg)
        order = np.concatenate([self.rng.permutation(len(self.dataset))
                                for _ in range(self.cfg.clips_per_video)])
        bs = self.cfg.batch_size
        self.model.train()
        losses, hits, seen = [], 0.0, 0
        for start in range(0, len(order), bs):
            idx = order[start:start + bs]
            if len(idx) < 2:  # train-mode batchnorm needs at least two samples
                continue
            clips, labels = zip(*(self._clip(self.dataset[i]) for i in idx))
            batch = np.stack(clips).astype(self.model.dtype)
            labels = np.array(labels)
            loss, logits, grads = self.model.loss_and_grads(batch, labels)
            if not math.isfinite(loss):
                raise TrainingDiverged(f"non-finite loss at epoch {self.epoch}", getattr(self, "last_good", None))
            sgd_step(self.model.params, grads, self.velocity, lr, self.cfg)
            losses.append(loss * len(idx))
            hits += _top1(logits, labels) * len(idx)
            seen += len(idx)
        self.model.eval()
        entry = {"epoch": self.epoch, "lr": lr,
                 "loss": float(sum(losses) / seen) if seen else float("nan"),
                 "top1": hits / seen if seen else float("nan")}
        self.history.append(entry)
        self.epoch += 1
        log.info("epoch %d lr %.5f loss %.4f top1 %.3f", entry["epoch"], lr, entry["loss"], entry["top1"])
        return entry

    def fit(self, epochs: int | None = None, checkpoint_dir: str | Path | None = None) -> list[dict]:
        """Train up to ``epochs`` more epochs (default: to the end of the schedule)."""
        end = self.cfg.total_epochs if epochs is None else min(self.cfg.total_epochs, self.epoch + epochs)
        while self.epoch < end:
            self.run_epoch()
            if checkpoint_dir is not None:
                path = Path(checkpoint_dir) / f"epoch{self.epoch:04d}.sqzt"
                self.save(path)
                self.last_good = str(path)
        return self.history

    def save(self, path: str | Path) -> None:
        header = {"model_config": self.model.config.to_dict(), "train_config": self.cfg.to_dict(),
                  "epoch": self.epoch, "rng_state": self.rng.bit_generator.state,
                  "history": self.history}
        save_checkpoint(path, header, {"params": self.model.params, "buffers": self.model.buffers,
                                       "momentum": self.velocity})

    @classmethod
    def resume(cls, path: str | Path, dataset: Sequence[VideoRecord]) -> "Trainer":
        ckpt = load_checkpoint(path)
        model = model_from_checkpoint(ckpt)
        tcfg = ckpt.header["train_config"]
        tr = cls(model, TrainConfig(**tcfg), dataset)
        tr.velocity = dict(ckpt.group("momentum"))
        tr.rng.bit_generator.state = ckpt.header["rng_state"]
        tr.epoch = int(ckpt.header["epoch"])
        tr.history = list(ckpt.header["history"])
        return tr


def model_from_checkpoint(ckpt: Checkpoint | str | Path) -> Model:
    if not isinstance(ckpt, Checkpoint):
        ckpt = load_checkpoint(ckpt)
    cfg = ModelConfig(**ckpt.header["model_config"])
    params = ckpt.group("params")
    dtype = next(iter(params.values())).dtype if params else np.float32
    model = build_model(cfg, dtype=dtype)
    for group, target in (("params", model.params), ("buffers", model.buffers)):
        saved = ckpt.group(group)
        if set(saved) != set(target):
            raise ValueError(f"checkpoint {group} do not match the model config")
        for k, v in saved.items():
            if v.shape != target[k].shape:
                raise ValueError(f"checkpoint tensor {k} has shape {v.shape}, model expects {target[k].shape}")
            target[k] = v.copy()
    return model


def train(model_cfg: ModelConfig, train_cfg: TrainConfig, dataset: Sequence[VideoRecord],
          checkpoint_dir=None) -> tuple[list[dict], Model]:
    """Build a model from ``train_cfg.seed`` and train it for the full schedule."""
    trainer = Trainer(build_model(model_cfg, seed=train_cfg.seed), train_cfg, dataset)
    trainer.fit(checkpoint_dir=checkpoint_dir)
    return trainer.history, trainer.model


@dataclass(frozen=True)
class ViewConfig:
    n_clips: int = 1
    n_crops: int = 1
    interval: int = 2


def predict_scores(model: Model, clips: np.ndarray, batch_size: int = 64) -> np.ndarray:
    """Softmax scores for a stack of clips, in infer mode."""
    mode = model.mode
    model.eval()
    try:
        out = [ops.softmax(model.forward(clips[i:i + batch_size].astype(model.dtype)).astype(np.float64), axis=1)
               for i in range(0, len(clips), batch_size)]
    finally:
        model.mode = mode
    return np.concatenate(out) if out else np.zeros((0, model.config.num_classes))


def topk_hits(scores: np.ndarray, labels: np.ndarray, k: int) -> np.ndarray:
    # stable sort on negated scores: equal scores rank the lower class first
    order = np.argsort(-scores, axis=1, kind="stable")[:, :k]
    return (order == labels[:, None]).any(axis=1)


def multiview_scores(model: Model, videos: Sequence[VideoRecord], views: ViewConfig = ViewConfig(),
                     transform: Callable[[np.ndarray], np.ndarray] | None = None,
                     batch_size: int = 64) -> np.ndarray:
    """Per-video softmax scores averaged over ``n_clips * n_crops`` views.

    ``transform`` is applied to every view before scoring (e.g. a frame
    shuffle).
    """
    c = model.config
    n_views = views.n_clips * views.n_crops
    clips = [transform(v) if transform else v
             for rec in videos
             for v in make_views(rec, c.frames, views.interval, views.n_clips, views.n_crops, c.resolution)]
    if not clips:
        return np.zeros((0, c.num_classes))
    s = predict_scores(model, np.stack(clips), batch_size).reshape(len(videos), n_views, -1)
    scores = s[:, 0].copy()
    for j in range(1, n_views):  # fixed summation order keeps results bit-stable
        scores += s[:, j]
    return scores / n_views


def evaluate_multiview(model: Model, dataset: Sequence[VideoRecord], views: ViewConfig = ViewConfig(),
                       transform: Callable[[np.ndarray], np.ndarray] | None = None,
                       batch_size: int = 64) -> dict:
    """Top-1, top-k (k = min(5, classes)) and per-class accuracy of the
    view-averaged scores. Ties rank the lower class index first."""
    scores = multiview_scores(model, dataset, views, transform, batch_size)
    labels = np.array([rec.label for rec in dataset], dtype=np.int64)
    if not len(labels):
        return {"top1": float("nan"), "top5": float("nan"), "per_class": {}, "scores": scores}
    k = min(5, model.config.num_classes)
    top1 = topk_hits(scores, labels, 1)
    per_class = {int(y): float(top1[labels == y].mean()) for y in np.unique(labels)}
    return {"top1": float(top1.mean()), "top5": float(topk_hits(scores, labels, k).mean()),
            "per_class": per_class, "scores": scores}
