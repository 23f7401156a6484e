"""Experiment command line: train, eval, predict, ablate, sweep,
export-report.

Every run writes three artifacts under the output directory: a checkpoint,
one JSON record per run in ``report.jsonl`` (deterministic bytes: the full
resolved config and seed are embedded, wall time is not), and a
human-readable ``summary.txt``. Sweeps additionally write a plot-ready
``sweep.tsv``. ``KLCBL_THREADS`` caps parallel variant execution.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from copy import deepcopy
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import (
    embed_examples,
    read_dataset,
    read_embedding_file,
    split_dataset,
)
from .kan import param_count
from .metrics import evaluate_model, format_metrics_table
from .model import (
    ModelConfig,
    TrainConfig,
    fit,
    init_model,
    load_checkpoint,
    predict,
    save_checkpoint,
)
from .tensor import set_default_dtype

DEFAULT_LR_GRID = (1e-5, 1e-6, 1e-7)
DEFAULT_BATCH_GRID = (2, 4, 8, 16)


class SpecError(ValueError):
    """The experiment spec file or flags are inconsistent."""


@dataclass
class ExperimentSpec:
    name: str = "experiment"
    dataset: str = ""
    embedding_source: str = "hash_embedder"  # hash_embedder | interchange_file
    embeddings_path: str | None = None
    max_tokens: int = 128
    out_dir: str = "runs/experiment"
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    sweep: dict = field(default_factory=dict)

    def validate(self) -> None:
        if self.embedding_source not in ("hash_embedder", "interchange_file"):
            raise SpecError(f"embedding_source must be hash_embedder or interchange_file, "
                            f"got {self.embedding_source!r}")
        if self.embedding_source == "interchange_file" and not self.embeddings_path:
            raise SpecError("embedding_source=interchange_file needs embeddings_path")
        if self.embedding_source == "hash_embedder" and not self.dataset:
            raise SpecError("hash_embedder needs a dataset path")
        self.model.validate()

    def embedding_meta(self) -> dict:
        return {
            "source": self.embedding_source,
            "dim": self.model.embedding_dim,
            "max_tokens": self.max_tokens,
        }

    def config_snapshot(self) -> dict:
        return {
            "name": self.name,
            "embedding": self.embedding_meta(),
            "model": self.model.to_dict(),
            "train": self.train.to_dict(),
        }


def load_spec(path) -> ExperimentSpec:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise SpecError(f"cannot read experiment spec {path}: {exc}") from exc
    known = {"name", "dataset", "embedding_source", "embeddings_path", "max_tokens",
             "out_dir", "model", "train", "sweep"}
    unknown = set(data) - known
    if unknown:
        raise SpecError(f"unknown spec fields: {sorted(unknown)}")
    spec = ExperimentSpec()
    for key in ("name", "dataset", "embedding_source", "embeddings_path", "max_tokens", "out_dir"):
        if key in data:
            setattr(spec, key, data[key])
    if "model" in data:
        spec.model = ModelConfig.from_dict(data["model"])
    if "train" in data:
        spec.train = TrainConfig.from_dict(data["train"])
    spec.sweep = data.get("sweep", {})
    return spec


def apply_flag_overrides(spec: ExperimentSpec, args) -> None:
    if getattr(args, "seed", None) is not None:
        spec.train.seed = args.seed
    if getattr(args, "out_dir", None):
        spec.out_dir = args.out_dir
    if getattr(args, "embeddings", None):
        spec.embeddings_path = args.embeddings
        spec.embedding_source = "interchange_file"
    if getattr(args, "hash_embed", False):
        spec.embedding_source = "hash_embedder"
    if getattr(args, "precision", None):
        set_default_dtype(np.float32 if args.precision == "f32" else np.float64)


def config_hash(snapshot: dict) -> str:
    blob = json.dumps(snapshot, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()[:16]


def load_examples(spec: ExperimentSpec):
    if spec.embedding_source == "interchange_file":
        examples = read_embedding_file(spec.embeddings_path)
        if examples and examples[0].tokens.shape[1] != spec.model.embedding_dim:
            raise SpecError(
                f"embedding file dim {examples[0].tokens.shape[1]} does not match "
                f"model embedding_dim {spec.model.embedding_dim}"
            )
        return examples
    raws = read_dataset(spec.dataset)
    return embed_examples(raws, dim=spec.model.embedding_dim, max_tokens=spec.max_tokens)


def _worker_count() -> int:
    value = os.environ.get("KLCBL_THREADS", "1")
    try:
        return max(1, int(value))
    except ValueError:
        return 1


def _run_jobs(jobs):
    """Run closures, possibly in parallel, preserving declaration order."""
    workers = _worker_count()
    if workers == 1 or len(jobs) <= 1:
        return [job() for job in jobs]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(job) for job in jobs]
        return [f.result() for f in futures]


def train_once(spec: ExperimentSpec, examples, variant: str = "full"):
    """Split, train, and evaluate one configuration. Returns a record dict
    plus the trained model."""
    split = split_dataset(examples, spec.train.seed)
    by_id = {ex.id: ex for ex in examples}
    train_set = [by_id[i] for i in split.train]
    valid_set = [by_id[i] for i in split.valid]
    test_set = [by_id[i] for i in split.test]

    model = init_model(spec.model, spec.train.seed)
    report = fit(train_set, valid_set, model, spec.train)
    report.test_metrics = evaluate_model(model, test_set)

    snapshot = spec.config_snapshot()
    digest = config_hash(snapshot)
    test = report.test_metrics
    record = {
        "run_id": f"{spec.name}-{variant}-{digest}",
        "variant": variant,
        "acc": test.accuracy,
        "p": test.weighted_precision,
        "r": test.weighted_recall,
        "f1": test.weighted_f1,
        "avg_loss": test.average_loss,
        "per_class": test.to_record()["per_class"],
        "confusion": test.counts_as_lists(),
        "config_hash": digest,
        "seed": spec.train.seed,
        "config": snapshot,
        "train_losses": report.train_losses,
        "valid_accuracy": [m.accuracy if m else None for m in report.valid_metrics],
        "head_param_count": param_count(model.head),
        "split_sizes": [len(train_set), len(valid_set), len(test_set)],
    }
    return record, model, report


def _write_records(out_dir: Path, records) -> None:
    with open(out_dir / "report.jsonl", "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record, sort_keys=True, separators=(",", ":")) + "\n")


def _summary_header(spec: ExperimentSpec, record) -> list:
    return [
        f"experiment: {spec.name}",
        f"seed: {spec.train.seed}",
        f"config_hash: {record['config_hash']}",
        f"split sizes (train/valid/test): {record['split_sizes']}",
        f"fusion layout: {spec.model.fusion_layout()} -> dim {spec.model.fusion_dim}",
        f"head: {spec.model.head.kind} ({record['head_param_count']} parameters)",
    ]


def cmd_train(args) -> int:
    spec = load_spec(args.config)
    apply_flag_overrides(spec, args)
    spec.validate()  # configuration conflicts surface before any training
    examples = load_examples(spec)
    record, model, report = train_once(spec, examples)

    out_dir = Path(spec.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_checkpoint(model, out_dir / "checkpoint.bin", spec.embedding_meta())
    _write_records(out_dir, [record])

    lines = _summary_header(spec, record)
    lines.append(f"train losses per epoch: {[round(v, 6) for v in report.train_losses]}")
    lines.append(f"wall time: {report.wall_time_s:.2f}s")
    lines.append("")
    lines.append(format_metrics_table([("test", (record["acc"], record["p"], record["r"], record["f1"]))]))
    lines.append(f"test average loss: {record['avg_loss']:.7f}")
    (out_dir / "summary.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    print("\n".join(lines))
    return 0


def cmd_eval(args) -> int:
    model, meta = load_checkpoint(args.checkpoint)
    examples = _examples_for_checkpoint(args, model, meta)
    report = evaluate_model(model, examples)
    table = format_metrics_table([("eval", report.summary_row())])
    print(table)
    print(f"average loss: {report.average_loss:.7f}")
    if args.out_dir:
        out_dir = Path(args.out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        record = report.to_record()
        record["run_id"] = f"eval-{Path(args.checkpoint).stem}"
        record["config_hash"] = config_hash({"model": model.config.to_dict()})
        _write_records(out_dir, [record])
        (out_dir / "summary.txt").write_text(table + "\n", encoding="utf-8")
    return 0


def _examples_for_checkpoint(args, model, meta):
    """Load input consistently with the checkpoint's embedding metadata."""
    dim = int(meta.get("dim", model.config.embedding_dim))
    if getattr(args, "embeddings", None):
        examples = read_embedding_file(args.embeddings)
        if examples and examples[0].tokens.shape[1] != dim:
            raise SpecError(
                f"embedding file dim {examples[0].tokens.shape[1]} does not match "
                f"checkpoint dim {dim}"
            )
        return examples
    if meta.get("source") == "interchange_file":
        raise SpecError(
            "checkpoint was trained on an interchange file; pass --embeddings <path>"
        )
    if not getattr(args, "data", None):
        raise SpecError("no input: pass --data (raw text) or --embeddings (interchange file)")
    raws = read_dataset(args.data)
    return embed_examples(raws, dim=dim, max_tokens=int(meta.get("max_tokens", 128)))


def cmd_predict(args) -> int:
    model, meta = load_checkpoint(args.checkpoint)
    examples = _examples_for_checkpoint(args, model, meta)
    out_lines = []
    for ex in examples:
        cls, probs = predict(ex, model)
        out_lines.append(json.dumps(
            {"id": ex.id, "class": cls, "probs": [float(p) for p in probs]},
            sort_keys=True, separators=(",", ":"),
        ))
    text = "\n".join(out_lines) + ("\n" if out_lines else "")
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


def ablation_variants(base: ModelConfig):
    """The five comparison rows, in emission order. Channel ablations drop
    one channel (the head shrinks to match); the head pair pins dense vs
    edge-table classification on the full channel set."""
    def with_changes(**changes):
        cfg = ModelConfig.from_dict(deepcopy(base.to_dict()))
        for key, value in changes.items():
            if key == "head_kind":
                cfg.head.kind = value
            else:
                setattr(cfg, key, value)
        cfg.head.in_dim = cfg.fusion_dim
        return cfg

    full_label = "LERT-CNN-BiLSTM (+KAN)" if base.head.kind == "kan" else "LERT-CNN-BiLSTM"
    return [
        ("full", full_label, with_changes()),
        ("no_cnn", "LERT-BiLSTM", with_changes(use_cnn=False)),
        ("no_bilstm", "LERT-CNN", with_changes(use_bilstm=False)),
        ("dense_head", "LERT-CNN-BiLSTM", with_changes(head_kind="dense")),
        ("kan_head", "LERT-CNN-BiLSTM (+KAN)", with_changes(head_kind="kan")),
    ]


def cmd_ablate(args) -> int:
    spec = load_spec(args.config)
    apply_flag_overrides(spec, args)
    spec.validate()
    examples = load_examples(spec)
    variants = ablation_variants(spec.model)

    def job(variant):
        key, label, cfg = variant
        vspec = deepcopy(spec)
        vspec.model = cfg
        try:
            record, _, _ = train_once(vspec, examples, variant=key)
            record["label"] = label
            return record
        except Exception as exc:  # noqa: BLE001 - fold into the failure record
            return {"variant": key, "label": label, "error": str(exc)}

    records = _run_jobs([lambda v=v: job(v) for v in variants])

    out_dir = Path(spec.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_records(out_dir, records)

    rows = [(r["label"], (r["acc"], r["p"], r["r"], r["f1"])) for r in records if "error" not in r]
    lines = [f"ablation: {spec.name} (seed {spec.train.seed}, shared split)"]
    lines.append(format_metrics_table(rows))
    by_variant = {r["variant"]: r for r in records if "error" not in r}
    if "kan_head" in by_variant and "dense_head" in by_variant:
        delta = by_variant["kan_head"]["acc"] - by_variant["dense_head"]["acc"]
        lines.append(f"kan minus dense accuracy delta: {delta:+.7f}")
    failures = [r for r in records if "error" in r]
    for r in failures:
        lines.append(f"FAILED {r['variant']}: {r['error']}")
    (out_dir / "summary.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    print("\n".join(lines))
    return 1 if failures else 0


def cmd_sweep(args) -> int:
    spec = load_spec(args.config)
    apply_flag_overrides(spec, args)
    spec.validate()
    axis = args.axis or spec.sweep.get("axis")
    if axis not in ("lr", "batch"):
        raise SpecError(f"sweep axis must be 'lr' or 'batch', got {axis!r}")
    values = args.values or spec.sweep.get("values")
    if not values:
        values = list(DEFAULT_LR_GRID if axis == "lr" else DEFAULT_BATCH_GRID)
    values = [float(v) if axis == "lr" else int(v) for v in values]
    if len(values) < 2:
        raise SpecError(f"a sweep needs at least 2 values, got {values}")

    examples = load_examples(spec)

    def job(value):
        vspec = deepcopy(spec)
        if axis == "lr":
            vspec.train.learning_rate = value
        else:
            vspec.train.batch_size = value
        try:
            record, _, _ = train_once(vspec, examples, variant=f"{axis}={value}")
            record["sweep_axis"] = axis
            record["sweep_value"] = value
            return record
        except Exception as exc:  # noqa: BLE001
            return {"variant": f"{axis}={value}", "sweep_axis": axis,
                    "sweep_value": value, "error": str(exc)}

    records = _run_jobs([lambda v=v: job(v) for v in values])

    out_dir = Path(spec.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_records(out_dir, records)

    tsv = ["\t".join((axis, "acc", "p", "r", "f1", "avg_loss"))]
    rows = []
    for r in records:
        if "error" in r:
            continue
        tsv.append("\t".join([repr(r["sweep_value"])] + [f"{r[k]:.7f}" for k in ("acc", "p", "r", "f1", "avg_loss")]))
        rows.append((f"{axis}={r['sweep_value']}", (r["acc"], r["p"], r["r"], r["f1"])))
    (out_dir / "sweep.tsv").write_text("\n".join(tsv) + "\n", encoding="utf-8")

    lines = [f"sweep over {axis}: {values}", format_metrics_table(rows)]
    failures = [r for r in records if "error" in r]
    for r in failures:
        lines.append(f"FAILED {r['variant']}: {r['error']}")
    (out_dir / "summary.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    print("\n".join(lines))
    return 1 if failures else 0


def cmd_export_report(args) -> int:
    rows = []
    with open(args.records, "r", encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            r = json.loads(line)
            if "error" in r:
                rows.append((f"{r.get('label', r.get('variant', '?'))} [FAILED]", (0.0, 0.0, 0.0, 0.0)))
            else:
                rows.append((r.get("label", r.get("variant", r.get("run_id", "?"))),
                             (r["acc"], r["p"], r["r"], r["f1"])))
    print(format_metrics_table(rows))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="klcbl", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", required=True, help="experiment spec file (JSON)")
        p.add_argument("--seed", type=int, help="override the training/split seed")
        p.add_argument("--out-dir", help="override the output directory")
        p.add_argument("--embeddings", help="embedding interchange file")
        p.add_argument("--hash-embed", action="store_true",
                       help="embed raw text with the deterministic hash embedder")
        p.add_argument("--precision", choices=("f32", "f64"), help="numeric profile")

    p_train = sub.add_parser("train", help="split, train, evaluate, write artifacts")
    add_common(p_train)
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--data", help="raw dataset file")
    p_eval.add_argument("--embeddings", help="embedding interchange file")
    p_eval.add_argument("--out-dir", help="also write report records here")
    p_eval.set_defaults(func=cmd_eval)

    p_pred = sub.add_parser("predict", help="classify inputs with a checkpoint")
    p_pred.add_argument("--checkpoint", required=True)
    p_pred.add_argument("--data", help="raw dataset file")
    p_pred.add_argument("--embeddings", help="embedding interchange file")
    p_pred.add_argument("--out", help="write records here instead of stdout")
    p_pred.set_defaults(func=cmd_predict)

    p_abl = sub.add_parser("ablate", help="five-variant channel/head comparison")
    add_common(p_abl)
    p_abl.set_defaults(func=cmd_ablate)

    p_sweep = sub.add_parser("sweep", help="one training run per hyperparameter value")
    add_common(p_sweep)
    p_sweep.add_argument("--axis", choices=("lr", "batch"))
    p_sweep.add_argument("--values", nargs="*", help="sweep points (defaults per axis)")
    p_sweep.set_defaults(func=cmd_sweep)

    p_exp = sub.add_parser("export-report", help="render report records as a table")
    p_exp.add_argument("--records", required=True, help="path to report.jsonl")
    p_exp.set_defaults(func=cmd_export_report)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # noqa: BLE001 - single reporting point for the CLI
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
