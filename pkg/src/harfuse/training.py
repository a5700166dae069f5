"""Training loops, fusion training, evaluation and model checkpoints."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .data import DatasetSplit, SkeletonSequence, SkeletonTopology, iter_batches, resample
from .losses import LossConfig, ce_loss, stage_mse, total_loss
from .metrics import DEFAULT_THRESHOLDS, MetricsReport, evaluate_streams
from .models import (
    FusionHead,
    ModelConfig,
    POGCN,
    TransformerSegmentationModel,
    build_model,
    extract_features,
    fuse,
    AlignmentError,
)
from .optim import Adam

log = logging.getLogger(__name__)

BUFFER_PREFIX = "buffer:"


@dataclass(frozen=True, kw_only=True)
class TrainConfig:
    """``target_hz`` has no default: every run must state its common rate."""

    target_hz: float
    epochs: int = 100
    batch_size: int = 4
    seed: int = 0
    loss: LossConfig = field(default_factory=LossConfig)
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if isinstance(self.loss, dict):
            object.__setattr__(self, "loss", LossConfig(**self.loss))
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if not self.target_hz > 0:
            raise ValueError(f"target_hz must be positive, got {self.target_hz}")
        if self.lr < 0:
            raise ValueError("lr must be >= 0")

    def to_json(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d["loss"] = self.loss.to_json()
        return d

    @classmethod
    def from_json(cls, obj: dict) -> "TrainConfig":
        unknown = set(obj) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown train keys: {sorted(unknown)}")
        obj = dict(obj)
        if "loss" in obj:
            loss = obj["loss"]
            bad = set(loss) - set(LossConfig.__dataclass_fields__)
            if bad:
                raise ValueError(f"unknown loss keys: {sorted(bad)}")
            obj["loss"] = LossConfig(**loss)
        return cls(**obj)


@dataclass
class TrainLog:
    epochs: list[dict] = field(default_factory=list)
    steps: int = 0
    skipped: int = 0

    def losses(self) -> list[float]:
        return [e["loss"] for e in self.epochs]


def prepare(seqs: Sequence[SkeletonSequence], target_hz: float) -> list[SkeletonSequence]:
    return [s if s.sampling_rate_hz == target_hz else resample(s, target_hz) for s in seqs]


def _run_epochs(
    params: ad.ParamSet,
    items: Sequence,
    cfg: TrainConfig,
    batch_loss: Callable[[list], tuple[ad.Tensor, int, int, int]],
    on_epoch: Callable[[dict], None] | None,
) -> tuple[TrainLog, Adam]:
    """Shared loop: one Adam step per batch on the mean per-item loss.

    ``batch_loss`` returns (loss, items used, correct frames, frames).
    """
    opt = Adam(params, lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps)
    opt.zero_grad()
    tlog = TrainLog()
    for epoch in range(cfg.epochs):
        loss_sum, used_sum, correct, frames = 0.0, 0, 0, 0
        for batch in iter_batches(items, cfg.batch_size, cfg.seed, epoch):
            with ad.Tape() as tape:
                loss, used, c, n = batch_loss(batch)
            if used == 0:
                continue
            tape.backward(loss, params.values())
            opt.step()
            tlog.steps += 1
            loss_sum += loss.item() * used
            used_sum += used
            correct += c
            frames += n
        entry = {
            "epoch": epoch + 1,
            "loss": loss_sum / used_sum if used_sum else float("nan"),
            "train_acc": correct / frames if frames else 0.0,
        }
        tlog.epochs.append(entry)
        if on_epoch is not None:
            on_epoch(entry)
    return tlog, opt


def train_model(
    kind: str,
    data: DatasetSplit,
    cfg: TrainConfig,
    model_config: ModelConfig,
    topology: SkeletonTopology | None = None,
    on_epoch: Callable[[dict], None] | None = None,
):
    """Train one base model; returns (model, TrainLog).

    The Transformer's single logits map is treated as a one-stage output
    of the combined loss.  Sequences shorter than the temporal kernel
    are skipped (PO-GCN only) and counted in the log.
    """
    if not data.train:
        raise ValueError("training split is empty")
    model = build_model(kind, model_config, topology, seed=cfg.seed)
    train = prepare(data.train, cfg.target_hz)
    usable = []
    skipped = 0
    for seq in train:
        if kind == "pogcn" and seq.T < model_config.temporal_kernel:
            log.warning("skipping %s: %d frames < temporal kernel %d", seq.id, seq.T, model_config.temporal_kernel)
            skipped += 1
        else:
            usable.append(seq)
    if not usable:
        raise ValueError("no training sequence is long enough for the temporal kernel")

    def batch_loss(batch):
        losses, correct, frames = [], 0, 0
        for seq in batch:
            stage_logits, _ = model.forward(seq.frames, training=True)
            losses.append(total_loss(stage_logits, seq.labels, cfg.loss))
            pred = stage_logits[-1].data.argmax(axis=1)
            correct += int(np.count_nonzero(pred == seq.labels))
            frames += seq.T
        loss = losses[0]
        for extra in losses[1:]:
            loss = ad.add(loss, extra)
        return ad.scale(loss, 1.0 / len(losses)), len(losses), correct, frames

    tlog, _ = _run_epochs(model.params, usable, cfg, batch_loss, on_epoch)
    tlog.skipped = skipped
    return model, tlog


# ---------------------------------------------------------------------------
# fusion


class FusionModel:
    """Two frozen base models feeding a trained fusion head."""

    kind = "fusion"

    def __init__(self, pogcn: POGCN, transformer: TransformerSegmentationModel, head: FusionHead):
        self.pogcn, self.transformer, self.head = pogcn, transformer, head

    def fused_features(self, frames: np.ndarray) -> np.ndarray:
        (a,) = extract_features(self.pogcn, [frames])
        (b,) = extract_features(self.transformer, [frames])
        return fuse(a, b)

    def forward(self, frames: np.ndarray, training: bool = False):
        return [self.head.forward(self.fused_features(frames), training=training)], None


def fusion_loss(logits: ad.Tensor, labels, loss_cfg: LossConfig) -> ad.Tensor:
    """Cross-entropy plus sigma times the MSE term of one stage."""
    loss = ce_loss(logits, labels)
    if loss_cfg.sigma > 0:
        loss = ad.add(loss, ad.scale(stage_mse(logits, labels, loss_cfg), loss_cfg.sigma))
    return loss


def train_fusion(
    pogcn: POGCN,
    transformer: TransformerSegmentationModel,
    data: DatasetSplit,
    cfg: TrainConfig,
    hidden: int | None = None,
    on_epoch: Callable[[dict], None] | None = None,
):
    """Train only the fusion head on frozen base-model features.

    Features are extracted once in eval mode.  Within a batch the frames
    of all sequences form the batch-norm batch; losses are computed per
    sequence and averaged.  Returns (FusionModel, TrainLog).
    """
    if not data.train:
        raise ValueError("training split is empty")
    train = prepare(data.train, cfg.target_hz)
    k = pogcn.config.temporal_kernel
    train = [s for s in train if s.T >= k]
    items = []
    for seq in train:
        (a,) = extract_features(pogcn, [seq.frames])
        (b,) = extract_features(transformer, [seq.frames])
        if a.T != b.T or a.T != seq.T:
            raise AlignmentError(f"{seq.id}: feature lengths {a.T}/{b.T} vs {seq.T} frames")
        items.append((fuse(a, b), seq.labels))
    in_features = items[0][0].shape[1]
    head = FusionHead(
        in_features,
        hidden if hidden is not None else pogcn.config.fusion_hidden,
        pogcn.config.num_classes,
        seed=cfg.seed,
    )

    def batch_loss(batch):
        x = np.concatenate([f for f, _ in batch], axis=0)
        if x.shape[0] < 2:
            return None, 0, 0, 0
        logits = head.forward(x, training=True)
        losses, start, correct = [], 0, 0
        for feats, labels in batch:
            end = start + feats.shape[0]
            lg = logits[start:end]
            losses.append(fusion_loss(lg, labels, cfg.loss))
            correct += int(np.count_nonzero(lg.data.argmax(axis=1) == labels))
            start = end
        loss = losses[0]
        for extra in losses[1:]:
            loss = ad.add(loss, extra)
        return ad.scale(loss, 1.0 / len(losses)), len(losses), correct, x.shape[0]

    tlog, _ = _run_epochs(head.params, items, cfg, batch_loss, on_epoch)
    return FusionModel(pogcn, transformer, head), tlog


# ---------------------------------------------------------------------------
# inference and evaluation


def predict_labels(model, frames: np.ndarray) -> np.ndarray:
    with ad.no_grad():
        logits, _ = model.forward(frames, training=False)
    return logits[-1].data.argmax(axis=1).astype(np.int64)


def evaluate(
    model,
    seqs: Sequence[SkeletonSequence],
    target_hz: float | None = None,
    thresholds: Sequence[float] = DEFAULT_THRESHOLDS,
) -> MetricsReport:
    """Corpus metrics of eval-mode argmax predictions."""
    if not seqs:
        raise ValueError("cannot evaluate an empty test split")
    if target_hz is not None:
        seqs = prepare(seqs, target_hz)
    return evaluate_streams(((predict_labels(model, s.frames), s.labels) for s in seqs), thresholds)


# ---------------------------------------------------------------------------
# checkpoints of models


class CheckpointMismatchError(CheckpointError):
    pass


def model_tensors(model) -> dict[str, np.ndarray]:
    tensors = {name: t.data for name, t in model.params.items()}
    for name, arr in model.buffers.items():
        tensors[BUFFER_PREFIX + name] = arr
    return tensors


def _assign(model, tensors: dict[str, np.ndarray], source: str) -> None:
    expected = model_tensors(model)
    for name, arr in expected.items():
        if name not in tensors:
            raise CheckpointMismatchError(f"{source}: tensor {name!r} missing from checkpoint")
        if tensors[name].shape != arr.shape:
            raise CheckpointMismatchError(
                f"{source}: tensor {name!r} has shape {tensors[name].shape}, config expects {arr.shape}"
            )
    extra = sorted(set(tensors) - set(expected))
    if extra:
        raise CheckpointMismatchError(f"{source}: unexpected tensor {extra[0]!r} in checkpoint")
    model.params.load_state_dict({n: tensors[n] for n in model.params})
    buffers = {n[len(BUFFER_PREFIX):]: a for n, a in tensors.items() if n.startswith(BUFFER_PREFIX)}
    if buffers:
        model.load_buffers(buffers)


def save_model(model, path, extra_config: dict | None = None) -> None:
    config = {"kind": model.kind}
    if model.kind in ("pogcn", "transformer"):
        config["model"] = model.config.to_json()
        config["topology"] = model.topology.to_json()
    else:
        config["fusion"] = {
            "in_features": model.in_features,
            "hidden": model.hidden,
            "num_classes": model.num_classes,
        }
    if extra_config:
        config.update(extra_config)
    save_checkpoint(model_tensors(model), path, config)


def load_base_model(path, kind: str, model_config: ModelConfig, topology: SkeletonTopology | None = None):
    """Rebuild a base model from ``model_config`` and load weights, checking every shape."""
    tensors, config = load_checkpoint(path)
    model = build_model(kind, model_config, topology)
    _assign(model, tensors, str(path))
    if config.get("kind") not in (None, kind):
        raise CheckpointMismatchError(f"{path}: checkpoint holds a {config.get('kind')!r} model, expected {kind!r}")
    return model


def load_fusion_head(path, in_features: int, hidden: int, num_classes: int) -> FusionHead:
    tensors, _ = load_checkpoint(path)
    head = FusionHead(in_features, hidden, num_classes)
    _assign(head, tensors, str(path))
    return head


def load_model(path):
    """Rebuild a base model from the config echoed in its checkpoint."""
    tensors, config = load_checkpoint(path)
    kind = config.get("kind")
    if kind not in ("pogcn", "transformer"):
        raise CheckpointMismatchError(f"{path}: not a base-model checkpoint (kind={kind!r})")
    model = build_model(kind, ModelConfig.from_json(config["model"]), SkeletonTopology.from_json(config["topology"]))
    _assign(model, tensors, str(path))
    return model
