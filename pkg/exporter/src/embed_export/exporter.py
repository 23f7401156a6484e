"""Run a pretrained BERT-family encoder over a dataset file and write
token-level plus pooled embeddings in the interchange format.

The encoder runs in inference mode only; all training lives downstream.
The pooled row defaults to the first-token (classification-marker) hidden
state, with mean pooling available.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field

import numpy as np

from .interchange import write_interchange

POOLING_MODES = ("first_token", "mean")


class ExportError(ValueError):
    pass


@dataclass
class ExportSpec:
    encoder: str  # checkpoint name or local path
    dataset: str
    output: str
    max_length: int = 512
    pooled: str = "first_token"

    def __post_init__(self):
        if self.max_length < 2:
            raise ExportError(f"max_length must be >= 2, got {self.max_length}")
        if self.pooled not in POOLING_MODES:
            raise ExportError(f"pooled must be one of {POOLING_MODES}, got {self.pooled!r}")


@dataclass
class ExportReport:
    count: int
    dim: int
    truncated_ids: list = field(default_factory=list)


def read_dataset(path):
    """Parse ``id<TAB>label<TAB>text`` lines; same contract as the consumer."""
    examples = []
    seen = set()
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.rstrip("\r\n")
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t", 2)
            if len(parts) != 3:
                raise ExportError(f"{path}: line {lineno}: expected id<TAB>label<TAB>text")
            ex_id, label_s, text = parts
            if label_s not in ("0", "1", "2"):
                raise ExportError(
                    f"{path}: line {lineno}: example {ex_id!r} has label {label_s!r}, valid are {{0,1,2}}"
                )
            if ex_id in seen:
                raise ExportError(f"{path}: line {lineno}: duplicate example id {ex_id!r}")
            seen.add(ex_id)
            examples.append((ex_id, int(label_s), text))
    return examples


def export(spec: ExportSpec, log=sys.stderr) -> ExportReport:
    """Encode every example, in file order, into ``spec.output``.

    Sequences longer than max_length are truncated and the example id is
    recorded (and warned about). The interchange header dim equals the
    encoder's hidden size.
    """
    import torch
    from transformers import AutoModel, AutoTokenizer

    try:
        tokenizer = AutoTokenizer.from_pretrained(spec.encoder)
        model = AutoModel.from_pretrained(spec.encoder)
    except Exception as exc:
        raise ExportError(f"cannot load encoder {spec.encoder!r}: {exc}") from exc
    model.eval()
    dim = int(model.config.hidden_size)

    examples = read_dataset(spec.dataset)
    truncated = []
    records = []
    with torch.no_grad():
        for ex_id, label, text in examples:
            full_len = len(tokenizer(text)["input_ids"])
            if full_len > spec.max_length:
                truncated.append(ex_id)
                print(f"warning: example {ex_id!r} truncated from {full_len} to "
                      f"{spec.max_length} tokens", file=log)
            enc = tokenizer(text, return_tensors="pt", truncation=True, max_length=spec.max_length)
            hidden = model(**enc).last_hidden_state[0]  # (T, dim)
            if spec.pooled == "first_token":
                pooled = hidden[0]
            else:
                pooled = hidden.mean(dim=0)
            records.append((
                ex_id,
                label,
                hidden.numpy().astype(np.float32),
                pooled.numpy().astype(np.float32),
            ))
    write_interchange(spec.output, records, dim)
    return ExportReport(count=len(records), dim=dim, truncated_ids=truncated)
