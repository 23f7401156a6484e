"""The embedding interchange format, written and verified standalone.

Layout (shared contract with the classifier package, which reads it):
a JSON header line {format_version: 1, dim, count, dtype: "f32le"}, then
per example one JSON metadata line {id, label, T} followed by exactly
(T + 1) * dim little-endian float32 values as raw bytes: T token rows,
then one pooled row. The float payload is bit-exact.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

VALID_LABELS = (0, 1, 2)


class FormatError(ValueError):
    """The file violates the interchange contract."""


def _meta_line(obj) -> bytes:
    return (json.dumps(obj, sort_keys=True, separators=(",", ":")) + "\n").encode("utf-8")


def write_interchange(path, records, dim: int) -> None:
    """records: iterable of (id, label, tokens (T, dim) f32, pooled (dim,) f32)."""
    records = list(records)
    with open(path, "wb") as fh:
        fh.write(_meta_line({"format_version": 1, "dim": int(dim), "count": len(records), "dtype": "f32le"}))
        for ex_id, label, tokens, pooled in records:
            tokens = np.ascontiguousarray(tokens, dtype="<f4")
            pooled = np.ascontiguousarray(pooled, dtype="<f4")
            if tokens.ndim != 2 or tokens.shape[1] != dim or pooled.shape != (dim,):
                raise FormatError(
                    f"example {ex_id!r}: rows are {tokens.shape}/{pooled.shape}, header dim is {dim}"
                )
            fh.write(_meta_line({"id": str(ex_id), "label": int(label), "T": int(tokens.shape[0])}))
            fh.write(tokens.tobytes())
            fh.write(pooled.tobytes())


@dataclass
class VerifySummary:
    count: int
    dim: int
    support: dict  # label -> example count
    finite: bool
    nan_ids: list = field(default_factory=list)

    def lines(self):
        yield f"count: {self.count}"
        yield f"dim: {self.dim}"
        for label in sorted(self.support):
            yield f"label {label}: {self.support[label]} examples"
        if self.finite:
            yield "finiteness: all values finite"
        else:
            yield f"finiteness: NON-FINITE rows in examples {self.nan_ids}"


def verify_interchange(path) -> VerifySummary:
    """Structural parse plus finiteness scan.

    Format violations raise FormatError carrying the byte offset of the
    first violation; non-finite payloads are flagged per example id in the
    returned summary.
    """
    support: dict = {}
    nan_ids: list = []
    with open(path, "rb") as fh:
        header_line = fh.readline()
        if not header_line:
            raise FormatError(f"{path}: offset 0: empty file, missing header")
        try:
            header = json.loads(header_line.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise FormatError(f"{path}: offset 0: unparseable header: {exc}") from exc
        for key in ("format_version", "dim", "count", "dtype"):
            if key not in header:
                raise FormatError(f"{path}: offset 0: header missing field {key!r}")
        if header["format_version"] != 1:
            raise FormatError(f"{path}: offset 0: unknown format version {header['format_version']!r}")
        if header["dtype"] != "f32le":
            raise FormatError(f"{path}: offset 0: unsupported dtype {header['dtype']!r}")
        dim, count = int(header["dim"]), int(header["count"])
        if dim < 1 or count < 0:
            raise FormatError(f"{path}: offset 0: invalid dim={dim} count={count}")

        for i in range(count):
            offset = fh.tell()
            meta_line = fh.readline()
            if not meta_line:
                raise FormatError(f"{path}: offset {offset}: record {i}: missing metadata line")
            try:
                meta = json.loads(meta_line.decode("utf-8"))
                ex_id, label, t = str(meta["id"]), int(meta["label"]), int(meta["T"])
            except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise FormatError(f"{path}: offset {offset}: record {i}: bad metadata: {exc}") from exc
            if t < 1:
                raise FormatError(f"{path}: offset {offset}: record {i} (id={ex_id!r}): T={t} < 1")
            if label not in VALID_LABELS:
                raise FormatError(
                    f"{path}: offset {offset}: record {i} (id={ex_id!r}): label {label} not in {VALID_LABELS}"
                )
            payload_offset = fh.tell()
            nbytes = (t + 1) * dim * 4
            payload = fh.read(nbytes)
            if len(payload) != nbytes:
                raise FormatError(
                    f"{path}: offset {payload_offset}: record {i} (id={ex_id!r}): "
                    f"expected {nbytes} payload bytes, got {len(payload)}"
                )
            values = np.frombuffer(payload, dtype="<f4")
            if not np.all(np.isfinite(values)):
                nan_ids.append(ex_id)
            support[label] = support.get(label, 0) + 1
        offset = fh.tell()
        if fh.read(1):
            raise FormatError(f"{path}: offset {offset}: trailing bytes after {count} records")
    return VerifySummary(count=count, dim=dim, support=support, finite=not nan_ids, nan_ids=nan_ids)
