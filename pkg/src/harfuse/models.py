"""Sequence models: multi-stage graph convolutional network, Transformer
encoder, and the fused per-frame classifier head."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import BatchNormState, ParamSet, ShapeError, Tensor
from .data import SkeletonTopology, default_topology
from .graph import NormalizedAdjacency, PoolingMap, build_adjacency, graph_conv, graph_pool
from .rng import SplitMix64

MODEL_KINDS = ("pogcn", "transformer")


class SequenceTooShortError(ValueError):
    pass


class SequenceTooLongError(ValueError):
    pass


class AlignmentError(ValueError):
    pass


# ---------------------------------------------------------------------------
# configuration


def _strict_kwargs(cls, obj: dict, where: str) -> dict:
    unknown = set(obj) - set(cls.__dataclass_fields__)
    if unknown:
        raise ValueError(f"unknown {where} keys: {sorted(unknown)}")
    return dict(obj)


@dataclass(frozen=True)
class TransformerConfig:
    depth: int = 2
    model_dim: int = 32
    heads: int = 4
    ff_dim: int = 64
    max_T: int = 1024

    def __post_init__(self):
        if self.model_dim % self.heads:
            raise ValueError(f"model_dim {self.model_dim} not divisible by heads {self.heads}")
        if min(self.depth, self.model_dim, self.heads, self.ff_dim, self.max_T) < 1:
            raise ValueError("transformer sizes must be positive")


@dataclass(frozen=True)
class ModelConfig:
    """Architecture of both base models and the fusion head.

    ``in_channels`` is the coordinate count C per joint.
    """

    num_classes: int = 5
    in_channels: int = 3
    stages: int = 4
    gcn_channels: tuple[int, ...] = (32, 32, 32, 32)
    temporal_kernel: int = 5
    transformer: TransformerConfig = field(default_factory=TransformerConfig)
    fusion_hidden: int = 64

    def __post_init__(self):
        object.__setattr__(self, "gcn_channels", tuple(int(c) for c in self.gcn_channels))
        if isinstance(self.transformer, dict):
            object.__setattr__(
                self, "transformer",
                TransformerConfig(**_strict_kwargs(TransformerConfig, self.transformer, "transformer")),
            )
        if self.stages < 1:
            raise ValueError(f"stages must be >= 1, got {self.stages}")
        if len(self.gcn_channels) != self.stages:
            raise ValueError(f"gcn_channels needs {self.stages} entries, got {len(self.gcn_channels)}")
        if self.temporal_kernel < 1 or self.temporal_kernel % 2 == 0:
            raise ValueError(f"temporal_kernel must be a positive odd integer, got {self.temporal_kernel}")
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")

    def to_json(self) -> dict:
        d = asdict(self)
        d["gcn_channels"] = list(self.gcn_channels)
        return d

    @classmethod
    def from_json(cls, obj: dict) -> "ModelConfig":
        return cls(**_strict_kwargs(cls, obj, "model"))

    def feature_dim(self, kind: str, topology: SkeletonTopology) -> int:
        if kind == "transformer":
            return self.transformer.model_dim
        joints = topology.joint_count if self.stages == 1 else topology.pooled_count
        return self.gcn_channels[-1] * joints


# ---------------------------------------------------------------------------
# parameter helpers


class Initializer:
    """Uniform(+-1/sqrt(fan_in)) weights from a SplitMix64 stream."""

    def __init__(self, seed: int, stream: int):
        self.rng = SplitMix64.derive(seed, 0x1417, stream)

    def weight(self, params: ParamSet, name: str, shape, fan_in: int) -> Tensor:
        bound = 1.0 / np.sqrt(fan_in)
        return params.add(name, self.rng.uniform(-bound, bound, shape))

    def zeros(self, params: ParamSet, name: str, shape) -> Tensor:
        return params.add(name, np.zeros(shape))

    def ones(self, params: ParamSet, name: str, shape) -> Tensor:
        return params.add(name, np.ones(shape))


def stgcn_block_params(init: Initializer, params: ParamSet, prefix: str, c_in: int, c_out: int, k: int):
    init.weight(params, f"{prefix}.gcn.w", (c_out, c_in), c_in)
    init.zeros(params, f"{prefix}.gcn.b", (c_out,))
    init.weight(params, f"{prefix}.tcn.w", (c_out, c_out, k), c_out * k)
    init.zeros(params, f"{prefix}.tcn.b", (c_out,))


def stgcn_block(x: Tensor, adj: NormalizedAdjacency, params: ParamSet, prefix: str) -> Tensor:
    """Graph conv, ReLU, temporal conv, ReLU; identity residual if widths match.

    ``x`` is (C_in, T, J); the output is (C_out, T, J).
    """
    w = params[f"{prefix}.gcn.w"]
    if x.ndim != 3 or x.shape[0] != w.shape[1]:
        raise ShapeError(f"{prefix}: input {x.shape} does not match graph weight {w.shape}")
    c_out = w.shape[0]
    h = graph_conv(x, adj, w)
    h = ad.relu(ad.add(h, ad.reshape(params[f"{prefix}.gcn.b"], (c_out, 1, 1))))
    h = ad.temporal_conv1d(h, params[f"{prefix}.tcn.w"], params[f"{prefix}.tcn.b"])
    if x.shape[0] == c_out:
        h = ad.add(h, x)
    return ad.relu(h)


def _frames_by_features(h: Tensor) -> Tensor:
    """(C, T, J) -> (T, C*J), row-major over (C, J) within a frame."""
    C, T, J = h.shape
    return ad.reshape(ad.transpose(h, (1, 0, 2)), (T, C * J))


# ---------------------------------------------------------------------------
# multi-stage graph convolutional network


class POGCN:
    """Multi-stage GCN producing per-stage, per-frame class logits.

    Stage 1 runs one ST-GCN block on the full skeleton.  Its hidden map
    is mean-pooled onto the coarse graph once; every later stage gets,
    per pooled joint, the previous stage's class probabilities stacked
    on the pooled stage-1 features, and runs one ST-GCN block on the
    pooled graph.  Each stage maps its flattened hidden frame to logits.
    """

    kind = "pogcn"

    def __init__(self, config: ModelConfig, topology: SkeletonTopology | None = None, seed: int = 0):
        self.config = config
        self.topology = topology or default_topology()
        self.adj = build_adjacency(self.topology)
        self.pool = PoolingMap.from_topology(self.topology)
        self.pooled_adj = self.pool.pooled_adjacency()
        self.params = ParamSet()
        self.buffers: dict[str, np.ndarray] = {}
        init = Initializer(seed, 1)
        K, k = config.num_classes, config.temporal_kernel
        J, Jp = self.topology.joint_count, self.pool.pooled_count
        ch = config.gcn_channels
        for s in range(config.stages):
            c_in = config.in_channels if s == 0 else K + ch[0]
            stgcn_block_params(init, self.params, f"stage{s}.block", c_in, ch[s], k)
            joints = J if s == 0 else Jp
            init.weight(self.params, f"stage{s}.head.w", (ch[s] * joints, K), ch[s] * joints)
            init.zeros(self.params, f"stage{s}.head.b", (K,))

    @property
    def feature_dim(self) -> int:
        return self.config.feature_dim(self.kind, self.topology)

    def forward(self, frames: np.ndarray, training: bool = False) -> tuple[list[Tensor], Tensor]:
        """Returns per-stage (T, K) logits and the (T, F) last hidden features."""
        frames = np.asarray(frames)
        T, J, C = frames.shape
        if J != self.topology.joint_count or C != self.config.in_channels:
            raise ShapeError(f"frames {frames.shape} do not match {self.topology.joint_count} joints x {self.config.in_channels} channels")
        if T < self.config.temporal_kernel:
            raise SequenceTooShortError(f"sequence of {T} frames is shorter than the temporal kernel {self.config.temporal_kernel}")
        p = self.params
        x = Tensor(frames.transpose(2, 0, 1))  # (C, T, J)
        h = stgcn_block(x, self.adj, p, "stage0.block")
        logits = ad.linear(_frames_by_features(h), p["stage0.head.w"], p["stage0.head.b"])
        stage_logits = [logits]
        pooled = graph_pool(h, self.pool) if self.config.stages > 1 else None
        K, Jp = self.config.num_classes, self.pool.pooled_count
        for s in range(1, self.config.stages):
            probs = ad.softmax(logits, axis=1)  # (T, K)
            per_joint = ad.broadcast_to(ad.reshape(ad.transpose(probs), (K, T, 1)), (K, T, Jp))
            h = stgcn_block(ad.concat([per_joint, pooled], axis=0), self.pooled_adj, p, f"stage{s}.block")
            logits = ad.linear(_frames_by_features(h), p[f"stage{s}.head.w"], p[f"stage{s}.head.b"])
            stage_logits.append(logits)
        return stage_logits, _frames_by_features(h)

    def stage_inputs(self, frames: np.ndarray) -> list[np.ndarray]:
        """Probability inputs (T, K) fed to stages 2..S, for inspection."""
        with ad.no_grad():
            logits, _ = self.forward(frames)
        return [ad.softmax(lg, axis=1).data for lg in logits[:-1]]


# ---------------------------------------------------------------------------
# transformer encoder


def positional_encoding(T: int, d: int) -> np.ndarray:
    """Sinusoidal table: sin on even columns, cos on odd columns."""
    pos = np.arange(T)[:, None]
    i = np.arange(0, d, 2)[None, :]
    angle = pos / np.power(10000.0, i / d)
    pe = np.zeros((T, d))
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle[:, : d // 2])
    return pe.astype(np.float32)


def attention(q: Tensor, k: Tensor, v: Tensor) -> Tensor:
    """Unmasked scaled dot-product attention over (..., T, d_h) inputs."""
    if q.shape != k.shape or q.shape[:-1] != v.shape[:-1]:
        raise ShapeError(f"attention shapes q={q.shape} k={k.shape} v={v.shape}")
    scores = ad.scale(ad.matmul(q, ad.swapaxes_last(k)), 1.0 / np.sqrt(q.shape[-1]))
    return ad.matmul(ad.softmax(scores, axis=-1), v)


def transformer_block_params(init: Initializer, params: ParamSet, prefix: str, d: int, ff: int):
    for name in ("q", "k", "v", "o"):
        init.weight(params, f"{prefix}.attn.{name}.w", (d, d), d)
        init.zeros(params, f"{prefix}.attn.{name}.b", (d,))
    init.ones(params, f"{prefix}.ln1.g", (d,))
    init.zeros(params, f"{prefix}.ln1.b", (d,))
    init.weight(params, f"{prefix}.ff1.w", (d, ff), d)
    init.zeros(params, f"{prefix}.ff1.b", (ff,))
    init.weight(params, f"{prefix}.ff2.w", (ff, d), ff)
    init.zeros(params, f"{prefix}.ff2.b", (d,))
    init.ones(params, f"{prefix}.ln2.g", (d,))
    init.zeros(params, f"{prefix}.ln2.b", (d,))


def transformer_block(x: Tensor, params: ParamSet, prefix: str, heads: int) -> Tensor:
    """Post-norm encoder block on (T, d)."""
    T, d = x.shape
    dh = d // heads
    p = params

    def split_heads(t):
        return ad.transpose(ad.reshape(t, (T, heads, dh)), (1, 0, 2))

    q = split_heads(ad.linear(x, p[f"{prefix}.attn.q.w"], p[f"{prefix}.attn.q.b"]))
    k = split_heads(ad.linear(x, p[f"{prefix}.attn.k.w"], p[f"{prefix}.attn.k.b"]))
    v = split_heads(ad.linear(x, p[f"{prefix}.attn.v.w"], p[f"{prefix}.attn.v.b"]))
    ctx = ad.reshape(ad.transpose(attention(q, k, v), (1, 0, 2)), (T, d))
    a = ad.linear(ctx, p[f"{prefix}.attn.o.w"], p[f"{prefix}.attn.o.b"])
    x = ad.layer_norm(ad.add(x, a), p[f"{prefix}.ln1.g"], p[f"{prefix}.ln1.b"])
    f = ad.relu(ad.linear(x, p[f"{prefix}.ff1.w"], p[f"{prefix}.ff1.b"]))
    f = ad.linear(f, p[f"{prefix}.ff2.w"], p[f"{prefix}.ff2.b"])
    return ad.layer_norm(ad.add(x, f), p[f"{prefix}.ln2.g"], p[f"{prefix}.ln2.b"])


class TransformerSegmentationModel:
    """Per-frame Transformer encoder over flattened joint coordinates."""

    kind = "transformer"

    def __init__(self, config: ModelConfig, topology: SkeletonTopology | None = None, seed: int = 0):
        self.config = config
        self.topology = topology or default_topology()
        tc = config.transformer
        self.params = ParamSet()
        self.buffers: dict[str, np.ndarray] = {}
        init = Initializer(seed, 2)
        n_in = self.topology.joint_count * config.in_channels
        init.weight(self.params, "embed.w", (n_in, tc.model_dim), n_in)
        init.zeros(self.params, "embed.b", (tc.model_dim,))
        for layer in range(tc.depth):
            transformer_block_params(init, self.params, f"layer{layer}", tc.model_dim, tc.ff_dim)
        init.weight(self.params, "head.w", (tc.model_dim, config.num_classes), tc.model_dim)
        init.zeros(self.params, "head.b", (config.num_classes,))

    @property
    def feature_dim(self) -> int:
        return self.config.transformer.model_dim

    def forward(self, frames: np.ndarray, training: bool = False) -> tuple[list[Tensor], Tensor]:
        """Returns a one-element logits list (T, K) and (T, d) features."""
        frames = np.asarray(frames)
        T, J, C = frames.shape
        tc = self.config.transformer
        if J != self.topology.joint_count or C != self.config.in_channels:
            raise ShapeError(f"frames {frames.shape} do not match {self.topology.joint_count} joints x {self.config.in_channels} channels")
        if T > tc.max_T:
            raise SequenceTooLongError(f"sequence of {T} frames exceeds max_T={tc.max_T}")
        p = self.params
        x = ad.linear(Tensor(frames.reshape(T, J * C)), p["embed.w"], p["embed.b"])
        x = ad.add(x, Tensor(positional_encoding(T, tc.model_dim)))
        for layer in range(tc.depth):
            x = transformer_block(x, p, f"layer{layer}", tc.heads)
        return [ad.linear(x, p["head.w"], p["head.b"])], x


# ---------------------------------------------------------------------------
# fusion


@dataclass
class FeatureBundle:
    model_id: str
    features: np.ndarray  # (T, F)

    @property
    def T(self) -> int:
        return self.features.shape[0]


def extract_features(model, frames_list: Sequence[np.ndarray]) -> list[FeatureBundle]:
    """Eval-mode last-layer features; nothing is recorded for gradients."""
    out = []
    with ad.no_grad():
        for frames in frames_list:
            _, feats = model.forward(frames, training=False)
            out.append(FeatureBundle(model.kind, feats.data.copy()))
    return out


def fuse(a: FeatureBundle, b: FeatureBundle) -> np.ndarray:
    """Per-frame concatenation ``[a | b]``."""
    if a.T != b.T:
        raise AlignmentError(f"cannot fuse features of {a.T} and {b.T} frames")
    return np.concatenate([a.features, b.features], axis=1)


class FusionHead:
    """Batch norm, dense + ReLU, dense over fused per-frame features."""

    kind = "fusion"

    def __init__(self, in_features: int, hidden: int, num_classes: int, seed: int = 0, momentum: float = 0.1):
        self.in_features, self.hidden, self.num_classes = in_features, hidden, num_classes
        self.momentum = momentum
        self.params = ParamSet()
        init = Initializer(seed, 3)
        init.ones(self.params, "bn.gamma", (in_features,))
        init.zeros(self.params, "bn.beta", (in_features,))
        init.weight(self.params, "fc1.w", (in_features, hidden), in_features)
        init.zeros(self.params, "fc1.b", (hidden,))
        init.weight(self.params, "fc2.w", (hidden, num_classes), hidden)
        init.zeros(self.params, "fc2.b", (num_classes,))
        self.bn_state = BatchNormState.fresh(in_features)

    @property
    def buffers(self) -> dict[str, np.ndarray]:
        return {"bn.running_mean": self.bn_state.mean, "bn.running_var": self.bn_state.var}

    def load_buffers(self, buffers: dict[str, np.ndarray]) -> None:
        self.bn_state = BatchNormState(
            np.asarray(buffers["bn.running_mean"], dtype=np.float32).copy(),
            np.asarray(buffers["bn.running_var"], dtype=np.float32).copy(),
        )

    def forward(self, x, training: bool = False) -> Tensor:
        """(B, F) fused rows -> (B, K) logits; rows form the batch-norm batch."""
        x = ad.as_tensor(x)
        if x.ndim != 2 or x.shape[1] != self.in_features:
            raise ShapeError(f"fusion head expects (B, {self.in_features}) input, got {x.shape}")
        p = self.params
        h = ad.batch_norm(x, p["bn.gamma"], p["bn.beta"], self.bn_state, training, self.momentum)
        h = ad.relu(ad.linear(h, p["fc1.w"], p["fc1.b"]))
        return ad.linear(h, p["fc2.w"], p["fc2.b"])


def build_model(kind: str, config: ModelConfig, topology: SkeletonTopology | None = None, seed: int = 0):
    if kind == "pogcn":
        return POGCN(config, topology, seed)
    if kind == "transformer":
        return TransformerSegmentationModel(config, topology, seed)
    raise ValueError(f"unknown model kind {kind!r}; valid kinds: {', '.join(MODEL_KINDS)}")
