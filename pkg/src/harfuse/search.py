"""Exhaustive hyperparameter grid search over training and model settings."""

from __future__ import annotations

import itertools
import logging
import warnings
from dataclasses import replace
from typing import Mapping, Sequence

from .data import DatasetSplit, SkeletonTopology
from .losses import LossConfig
from .models import ModelConfig, TransformerConfig
from .training import TrainConfig, evaluate, train_model

log = logging.getLogger(__name__)

_TRAIN_KEYS = {"lr", "batch_size", "beta1", "beta2", "eps"}
_LOSS_KEYS = set(LossConfig.__dataclass_fields__)
_MODEL_KEYS = {"stages", "gcn_channels", "temporal_kernel", "fusion_hidden"}
_TRANSFORMER_KEYS = set(TransformerConfig.__dataclass_fields__)
SEARCHABLE = _TRAIN_KEYS | _LOSS_KEYS | _MODEL_KEYS | _TRANSFORMER_KEYS


class ValidationOnTestWarning(UserWarning):
    """Candidates are ranked on the test split (no separate validation set)."""


def apply_overrides(
    point: Mapping[str, object], cfg: TrainConfig, model_config: ModelConfig
) -> tuple[TrainConfig, ModelConfig]:
    unknown = set(point) - SEARCHABLE
    if unknown:
        raise ValueError(f"not searchable: {sorted(unknown)}; choose from {sorted(SEARCHABLE)}")
    train = {k: v for k, v in point.items() if k in _TRAIN_KEYS}
    loss = {k: v for k, v in point.items() if k in _LOSS_KEYS}
    model = {k: v for k, v in point.items() if k in _MODEL_KEYS}
    tf = {k: v for k, v in point.items() if k in _TRANSFORMER_KEYS}
    if "stages" in model and "gcn_channels" not in model:
        model["gcn_channels"] = (model_config.gcn_channels[0],) * int(model["stages"])
    if tf:
        model["transformer"] = replace(model_config.transformer, **tf)
    cfg = replace(cfg, loss=replace(cfg.loss, **loss), **train)
    return cfg, replace(model_config, **model)


def grid_search(
    space: Mapping[str, Sequence],
    data: DatasetSplit,
    cfg: TrainConfig,
    model_config: ModelConfig,
    kind: str = "pogcn",
    budget: int | None = None,
    epochs: int = 10,
    topology: SkeletonTopology | None = None,
    synthetic: bool = True,
) -> list[dict]:
    """Train every grid point (up to ``budget``) and rank them.

    Points are enumerated as the Cartesian product in key order, each
    trained for ``epochs`` epochs with the same seed, and ranked by
    test-split frame accuracy, then F1@0.50, then enumeration index.
    """
    if not space or any(len(v) == 0 for v in space.values()):
        raise ValueError("search space is empty")
    if not synthetic:
        warnings.warn(
            "grid search ranks candidates on the test split; hold out a validation split for real data",
            ValidationOnTestWarning, stacklevel=2,
        )
    keys = list(space)
    points = [dict(zip(keys, values)) for values in itertools.product(*(space[k] for k in keys))]
    if budget is not None:
        points = points[:budget]
    results = []
    for index, point in enumerate(points):
        run_cfg, run_model = apply_overrides(point, replace(cfg, epochs=epochs), model_config)
        model, tlog = train_model(kind, data, run_cfg, run_model, topology)
        report = evaluate(model, data.test, run_cfg.target_hz)
        result = {
            "index": index,
            "params": point,
            "accuracy": report.accuracy,
            "f1@0.50": report.f1_at[0.5],
            "final_loss": tlog.epochs[-1]["loss"],
        }
        log.info("candidate %d %s -> acc %.4f", index, point, report.accuracy)
        results.append(result)
    results.sort(key=lambda r: (-r["accuracy"], -r["f1@0.50"], r["index"]))
    for rank, r in enumerate(results, start=1):
        r["rank"] = rank
    return results
