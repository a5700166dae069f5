"""Training objective: stage-summed cross-entropy plus a weighted MSE term."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


class DegenerateInputWarning(UserWarning):
    """A loss term had too few frames to be defined and contributed zero."""


MSE_MODES = ("literal", "smoothing")


@dataclass(frozen=True)
class LossConfig:
    """``sigma`` weights the MSE term; ``tau`` clamps the smoothing variant.

    Defaults are implementation choices (no published values exist).
    """

    sigma: float = 0.15
    tau: float = 4.0
    mse_mode: str = "smoothing"

    def __post_init__(self):
        if not self.sigma >= 0:
            raise ValueError(f"sigma must be >= 0, got {self.sigma}")
        if not self.tau > 0:
            raise ValueError(f"tau must be > 0, got {self.tau}")
        if self.mse_mode not in MSE_MODES:
            raise ValueError(f"mse_mode must be one of {MSE_MODES}, got {self.mse_mode!r}")

    def to_json(self) -> dict:
        return {"sigma": self.sigma, "tau": self.tau, "mse_mode": self.mse_mode}


def ce_loss(logits: Tensor, labels) -> Tensor:
    """Frame-averaged cross-entropy of (T, K) logits; log floored at -100."""
    return ad.cross_entropy(logits, labels, floor=-100.0)


def one_hot(labels, K: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    out = np.zeros((labels.size, K), dtype=np.float32)
    out[np.arange(labels.size), labels] = 1.0
    return out


def mse_literal(probs: Tensor, labels) -> Tensor:
    """Mean squared difference between probabilities and one-hot targets."""
    target = one_hot(labels, probs.shape[1])
    return ad.mean(ad.square(ad.sub(probs, target)))


def mse_smoothing(log_probs: Tensor, tau: float) -> Tensor:
    """Truncated squared change of log-probabilities between adjacent frames.

    Mean over frames 1..T-1 and classes of ``min(|d|, tau)**2``.  Fewer
    than two frames gives zero and a :class:`DegenerateInputWarning`.
    """
    T = log_probs.shape[0]
    if T < 2:
        warnings.warn(f"smoothing term needs T >= 2, got {T}", DegenerateInputWarning, stacklevel=2)
        return Tensor(np.zeros(()))
    delta = ad.sub(log_probs[1:], log_probs[:-1])
    return ad.mean(ad.square(ad.clip(ad.abs_(delta), hi=tau)))


def stage_mse(logits: Tensor, labels, cfg: LossConfig) -> Tensor:
    if cfg.mse_mode == "literal":
        return mse_literal(ad.softmax(logits, axis=1), labels)
    return mse_smoothing(ad.log_softmax(logits, axis=1), cfg.tau)


def total_loss(stage_logits: Sequence[Tensor], labels, cfg: LossConfig) -> Tensor:
    """Sum over stages of ``CE + sigma * MSE``; with sigma = 0 only CE remains."""
    total = None
    for logits in stage_logits:
        term = ce_loss(logits, labels)
        if cfg.sigma > 0:
            term = ad.add(term, ad.scale(stage_mse(logits, labels, cfg), cfg.sigma))
        total = term if total is None else ad.add(total, term)
    if total is None:
        raise ValueError("total_loss needs at least one stage")
    return total
