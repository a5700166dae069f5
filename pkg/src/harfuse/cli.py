"""Command-line interface: gen, train, fuse, eval, metrics.

Exit codes: 0 success, 2 usage or configuration error, 3 data or
artifact error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .checkpoint import CheckpointError, atomic_write_bytes
from .data import (
    DataValidationError,
    LabelCatalog,
    SkeletonTopology,
    SyntheticSpec,
    default_topology,
    generate_synthetic,
    load_catalog,
    load_jsonl,
    load_topology,
    write_catalog,
    write_jsonl,
    write_topology,
)
from .metrics import DEFAULT_THRESHOLDS, evaluate_streams
from .models import MODEL_KINDS, AlignmentError, ModelConfig
from .training import (
    FusionModel,
    TrainConfig,
    evaluate,
    load_base_model,
    load_fusion_head,
    save_model,
    train_fusion,
    train_model,
)

CONFIG_VERSION = 1
EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 2, 3

log = logging.getLogger("harfuse")


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


# ---------------------------------------------------------------------------
# run configuration


class RunConfig:
    """Parsed run config; relative paths resolve against the config file."""

    KEYS = {"version", "model", "train", "data", "topology", "output_dir"}

    def __init__(self, obj: dict, base: Path):
        if not isinstance(obj, dict):
            raise UsageError("config must be a JSON object")
        unknown = set(obj) - self.KEYS
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        if obj.get("version") != CONFIG_VERSION:
            raise UsageError(f"config version must be {CONFIG_VERSION}, got {obj.get('version')!r}")
        self.base = base
        data = obj.get("data")
        if not isinstance(data, dict):
            raise UsageError("config needs a data section")
        has_paths = bool({"train", "test", "catalog"} & set(data))
        if has_paths == ("synthetic" in data):
            raise UsageError("data section needs exactly one of {train, test, catalog} paths or a synthetic spec")
        if has_paths:
            extra = set(data) - {"train", "test", "catalog"}
            if extra or "catalog" not in data:
                raise UsageError(f"data paths need 'catalog' plus 'train'/'test'; unexpected {sorted(extra)}")
            self.data_paths = {k: self._path(v) for k, v in data.items()}
            self.synthetic = None
        else:
            if set(data) != {"synthetic"}:
                raise UsageError(f"unexpected data keys {sorted(set(data) - {'synthetic'})}")
            try:
                self.synthetic = SyntheticSpec.from_json(data["synthetic"])
            except (TypeError, DataValidationError) as exc:
                raise UsageError(f"synthetic spec: {exc}") from None
            self.data_paths = None
        self.topology_path = self._path(obj["topology"]) if obj.get("topology") else None
        self.output_dir = self._path(obj["output_dir"]) if obj.get("output_dir") else None
        try:
            self.train = TrainConfig.from_json(obj.get("train", {}))
        except TypeError as exc:
            raise UsageError(f"train section: {exc}") from None
        except ValueError as exc:
            raise UsageError(f"train section: {exc}") from None
        self.model_obj = dict(obj.get("model", {}))
        try:
            ModelConfig.from_json({k: v for k, v in self.model_obj.items() if k != "num_classes"})
        except (TypeError, ValueError) as exc:
            raise UsageError(f"model section: {exc}") from None

    def _path(self, p) -> Path:
        path = Path(p)
        path = path if path.is_absolute() else self.base / path
        if not path.exists():
            raise UsageError(f"referenced file does not exist: {path}")
        return path

    def topology(self) -> SkeletonTopology:
        if self.topology_path is None:
            return default_topology()
        try:
            return load_topology(self.topology_path)
        except (DataValidationError, json.JSONDecodeError, KeyError) as exc:
            raise DataError(f"topology {self.topology_path}: {exc}") from None

    def catalog(self) -> LabelCatalog:
        if self.synthetic is not None:
            return generate_synthetic(self.synthetic)[1]
        try:
            return load_catalog(self.data_paths["catalog"])
        except (DataValidationError, json.JSONDecodeError) as exc:
            raise DataError(f"catalog: {exc}") from None

    def model_config(self, catalog: LabelCatalog, channels: int) -> ModelConfig:
        obj = dict(self.model_obj)
        obj.setdefault("num_classes", len(catalog))
        obj.setdefault("in_channels", channels)
        if obj["num_classes"] != len(catalog):
            raise UsageError(f"model.num_classes={obj['num_classes']} but the catalog has {len(catalog)} classes")
        try:
            return ModelConfig.from_json(obj)
        except (TypeError, ValueError) as exc:
            raise UsageError(f"model section: {exc}") from None

    def split(self):
        from .data import DatasetSplit

        if self.synthetic is not None:
            return generate_synthetic(self.synthetic, None)
        catalog = self.catalog()
        try:
            train = load_jsonl(self.data_paths["train"], catalog) if "train" in self.data_paths else []
            test = load_jsonl(self.data_paths["test"], catalog) if "test" in self.data_paths else []
            return DatasetSplit(train, test), catalog
        except DataValidationError as exc:
            raise DataError(str(exc)) from None


def load_run_config(path: str, seed: int | None) -> RunConfig:
    p = Path(path)
    if not p.exists():
        raise UsageError(f"config file not found: {p}")
    try:
        obj = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise UsageError(f"config is not valid JSON: {exc}") from None
    cfg = RunConfig(obj, p.parent)
    if seed is not None:
        cfg.train = replace(cfg.train, seed=seed)
        if cfg.synthetic is not None:
            cfg.synthetic = replace(cfg.synthetic, seed=seed)
    return cfg


def _out_dir(arg: str | None, cfg: RunConfig | None = None) -> Path:
    out = Path(arg) if arg else (cfg.output_dir if cfg is not None else None)
    if out is None:
        raise UsageError("an output directory is required (--out or output_dir)")
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise UsageError(f"cannot create output directory {out}: {exc}") from None
    return out


def _write_text(path: Path, text: str) -> None:
    try:
        atomic_write_bytes(path, text.encode("utf-8"))
    except OSError as exc:
        raise UsageError(f"cannot write {path}: {exc}") from None


def _jsonl(rows) -> str:
    return "".join(json.dumps(r, sort_keys=True) + "\n" for r in rows)


def _say(args, *parts) -> None:
    if not args.quiet:
        print(*parts)


# ---------------------------------------------------------------------------
# commands


def cmd_gen(args) -> int:
    obj = {}
    if args.spec:
        try:
            obj = json.loads(Path(args.spec).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise UsageError(f"spec file not found: {args.spec}") from None
        except json.JSONDecodeError as exc:
            raise UsageError(f"spec is not valid JSON: {exc}") from None
    if args.seed is not None:
        obj["seed"] = args.seed
    try:
        spec = SyntheticSpec.from_json(obj)
    except (TypeError, DataValidationError) as exc:
        raise UsageError(f"invalid synthetic spec: {exc}") from None
    topology = default_topology() if spec.J == 8 else chain_topology(spec.J)
    split, catalog = generate_synthetic(spec, topology)
    out = _out_dir(args.out)
    try:
        write_jsonl(out / "train.jsonl", split.train, catalog)
        write_jsonl(out / "test.jsonl", split.test, catalog)
        write_catalog(out / "catalog.json", catalog)
        write_topology(out / "topology.json", topology)
    except OSError as exc:
        raise UsageError(f"cannot write to {out}: {exc}") from None
    _say(args, f"wrote {len(split.train)} train / {len(split.test)} test sequences to {out}")
    return EXIT_OK


def chain_topology(J: int) -> SkeletonTopology:
    """Joints in a chain, pooled pairwise (used when J != 8)."""
    if J == 1:
        return SkeletonTopology(1, (), (0,))
    return SkeletonTopology(J, tuple((i, i + 1) for i in range(J - 1)), tuple(i // 2 for i in range(J)))


def _train_split(cfg: RunConfig):
    split, catalog = cfg.split()
    if not split.train:
        raise DataError("training split is empty")
    return split, catalog


def cmd_train(args) -> int:
    cfg = load_run_config(args.config, args.seed)
    out = _out_dir(args.out, cfg)
    split, catalog = _train_split(cfg)
    topology = cfg.topology()
    model_config = cfg.model_config(catalog, split.train[0].channels)
    _check_geometry(split.train, topology, model_config)
    model, tlog = train_model(args.model, split, cfg.train, model_config, topology)
    save_model(model, out / "model.ckpt", {"train": cfg.train.to_json(), "classes": list(catalog.names)})
    _write_text(out / "train_log.jsonl", _jsonl(tlog.epochs))
    last = tlog.epochs[-1]
    _say(args, f"{args.model}: epoch {last['epoch']} loss {last['loss']:.6f} train_acc {last['train_acc']:.4f}"
               f" ({tlog.steps} steps, {tlog.skipped} skipped)")
    return EXIT_OK


def _check_geometry(seqs, topology: SkeletonTopology, model_config: ModelConfig) -> None:
    for s in seqs:
        if s.joints != topology.joint_count or s.channels != model_config.in_channels:
            raise DataError(
                f"sequence {s.id} has {s.joints} joints x {s.channels} channels; "
                f"topology/model expect {topology.joint_count} x {model_config.in_channels}"
            )


def _load_bases(cfg: RunConfig, pogcn_path: str, transformer_path: str, catalog, channels):
    topology = cfg.topology()
    model_config = cfg.model_config(catalog, channels)
    for p in (pogcn_path, transformer_path):
        if not Path(p).exists():
            raise UsageError(f"checkpoint not found: {p}")
    try:
        pogcn = load_base_model(pogcn_path, "pogcn", model_config, topology)
        transformer = load_base_model(transformer_path, "transformer", model_config, topology)
    except CheckpointError as exc:
        raise DataError(str(exc)) from None
    return pogcn, transformer, model_config, topology


def cmd_fuse(args) -> int:
    cfg = load_run_config(args.config, args.seed)
    out = _out_dir(args.out, cfg)
    split, catalog = _train_split(cfg)
    pogcn, transformer, model_config, topology = _load_bases(
        cfg, args.pogcn, args.transformer, catalog, split.train[0].channels
    )
    _check_geometry(split.train, topology, model_config)
    try:
        fusion, tlog = train_fusion(pogcn, transformer, split, cfg.train)
    except AlignmentError as exc:
        raise DataError(str(exc)) from None
    save_model(fusion.head, out / "fusion.ckpt", {"train": cfg.train.to_json(), "classes": list(catalog.names)})
    _write_text(out / "fusion_log.jsonl", _jsonl(tlog.epochs))
    last = tlog.epochs[-1]
    _say(args, f"fusion: epoch {last['epoch']} loss {last['loss']:.6f} train_acc {last['train_acc']:.4f}")
    return EXIT_OK


def _print_report(args, report_json: dict) -> None:
    f1 = "  ".join(f"F1@{k} {v:.4f}" for k, v in report_json["f1"].items())
    _say(args, f"accuracy {report_json['accuracy']:.4f}  {f1}")


def _emit_report(args, report_json: dict) -> None:
    text = json.dumps(report_json, indent=2, sort_keys=True) + "\n"
    if args.report:
        _write_text(Path(args.report), text)
        _print_report(args, report_json)
    else:
        sys.stdout.write(text)


def cmd_eval(args) -> int:
    cfg = load_run_config(args.config, args.seed)
    if bool(args.ckpt) == bool(args.fusion):
        raise UsageError("give exactly one of --ckpt or --fusion POGCN TRANSFORMER HEAD")
    if not Path(args.data).exists():
        raise UsageError(f"data file not found: {args.data}")
    catalog = cfg.catalog()
    try:
        seqs = load_jsonl(args.data, catalog)
    except DataValidationError as exc:
        raise DataError(str(exc)) from None
    if not seqs:
        raise DataError(f"{args.data} holds no sequences")
    topology = cfg.topology()
    model_config = cfg.model_config(catalog, seqs[0].channels)
    _check_geometry(seqs, topology, model_config)
    if args.ckpt:
        if not Path(args.ckpt).exists():
            raise UsageError(f"checkpoint not found: {args.ckpt}")
        from .checkpoint import load_checkpoint

        try:
            kind = load_checkpoint(args.ckpt)[1].get("kind")
            if kind not in MODEL_KINDS:
                raise DataError(f"{args.ckpt} holds a {kind!r} checkpoint, not a base model")
            model = load_base_model(args.ckpt, kind, model_config, topology)
        except CheckpointError as exc:
            raise DataError(str(exc)) from None
    else:
        p_path, t_path, h_path = args.fusion
        pogcn, transformer, model_config, topology = _load_bases(cfg, p_path, t_path, catalog, seqs[0].channels)
        if not Path(h_path).exists():
            raise UsageError(f"checkpoint not found: {h_path}")
        in_features = pogcn.feature_dim + transformer.feature_dim
        try:
            head = load_fusion_head(h_path, in_features, model_config.fusion_hidden, model_config.num_classes)
        except CheckpointError as exc:
            raise DataError(str(exc)) from None
        model = FusionModel(pogcn, transformer, head)
    report = evaluate(model, seqs, cfg.train.target_hz)
    _emit_report(args, report.to_json())
    return EXIT_OK


def _read_label_file(path: str) -> dict[str, list]:
    p = Path(path)
    if not p.exists():
        raise UsageError(f"file not found: {path}")
    out = {}
    with open(p, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}: line {lineno}: invalid JSON ({exc.msg})") from None
            if not isinstance(obj, dict) or set(obj) != {"id", "labels"} or not isinstance(obj["labels"], list):
                raise DataError(f'{path}: line {lineno}: expected {{"id", "labels"}}')
            if obj["id"] in out:
                raise DataError(f"{path}: line {lineno}: duplicate id {obj['id']!r}")
            out[obj["id"]] = obj["labels"]
    return out


def cmd_metrics(args) -> int:
    pred, gt = _read_label_file(args.pred), _read_label_file(args.gt)
    only_pred, only_gt = sorted(set(pred) - set(gt)), sorted(set(gt) - set(pred))
    if only_pred or only_gt:
        raise DataError(f"id sets differ: only in predictions {only_pred}, only in ground truth {only_gt}")
    vocab: dict = {}
    pairs = []
    for key in sorted(gt):
        if len(pred[key]) != len(gt[key]):
            raise DataError(f"id {key!r}: {len(pred[key])} predicted labels vs {len(gt[key])} ground-truth labels")
        if not gt[key]:
            raise DataError(f"id {key!r}: empty label stream")
        p = [vocab.setdefault(json.dumps(v), len(vocab)) for v in pred[key]]
        g = [vocab.setdefault(json.dumps(v), len(vocab)) for v in gt[key]]
        pairs.append((p, g))
    report = evaluate_streams(pairs, DEFAULT_THRESHOLDS)
    _emit_report(args, report.to_json())
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="override the configured seed")
    common.add_argument("--quiet", action="store_true", default=argparse.SUPPRESS, help="print nothing on success")

    parser = argparse.ArgumentParser(prog="harfuse", description=__doc__.splitlines()[0], parents=[common])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", parents=[common], help="write a synthetic dataset")
    p.add_argument("--spec", help="synthetic spec JSON (defaults for missing keys)")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", parents=[common], help="train one base model")
    p.add_argument("--config", required=True, help="run config JSON")
    p.add_argument("--model", required=True, choices=MODEL_KINDS)
    p.add_argument("--out", help="output directory (default: config output_dir)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("fuse", parents=[common], help="train the fusion head on two base checkpoints")
    p.add_argument("--config", required=True, help="run config JSON")
    p.add_argument("--pogcn", required=True, help="PO-GCN checkpoint")
    p.add_argument("--transformer", required=True, help="Transformer checkpoint")
    p.add_argument("--out", help="output directory (default: config output_dir)")
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("eval", parents=[common], help="evaluate a model or fusion on labeled data")
    p.add_argument("--config", required=True, help="run config JSON")
    p.add_argument("--ckpt", help="base model checkpoint")
    p.add_argument("--fusion", nargs=3, metavar=("POGCN", "TRANSFORMER", "HEAD"), help="three checkpoints of a fusion")
    p.add_argument("--data", required=True, help="labeled JSONL")
    p.add_argument("--report", help="write the metrics JSON here instead of stdout")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("metrics", parents=[common], help="score externally produced label streams")
    p.add_argument("--pred", required=True, help='JSONL of {"id", "labels"} predictions')
    p.add_argument("--gt", required=True, help="JSONL ground truth in the same format")
    p.add_argument("--report", help="write the metrics JSON here instead of stdout")
    p.set_defaults(func=cmd_metrics)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    args.seed = getattr(args, "seed", None)
    args.quiet = getattr(args, "quiet", False)
    logging.basicConfig(level=logging.ERROR if args.quiet else logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"harfuse {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"harfuse {args.command}: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
