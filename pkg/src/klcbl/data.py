"""Dataset handling: records, the seeded 8:1:1 split, the deterministic
hash embedder, and the binary embedding interchange format.

The interchange format is the boundary between this package and any
external encoder: a JSON header line, then per example one JSON metadata
line followed by the raw little-endian float32 payload (T token rows plus
one pooled row). The float payload round-trips bit-exactly.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field

import numpy as np

from .rng import SplitMix64, fnv1a64, u64_stream
from .tensor import Tensor, get_default_dtype

VALID_LABELS = (0, 1, 2)
CLASS_NAMES = ("telecom fraud", "non-telecom fraud", "other incident")

EMPTY_TOKEN = "<empty>"

_TOKEN_RE = re.compile(r"[A-Za-z0-9]+|[^\sA-Za-z0-9]")


class DatasetError(ValueError):
    """A dataset file or split request violates the format contract."""


class InterchangeError(ValueError):
    """An embedding interchange file violates the format contract."""


@dataclass
class RawExample:
    id: str
    text: str
    label: int


@dataclass
class EmbeddedExample:
    id: str
    tokens: Tensor  # (T, dim) token-level vectors
    pooled: Tensor  # (dim,) sentence vector
    label: int


@dataclass
class DatasetSplit:
    train: list = field(default_factory=list)
    valid: list = field(default_factory=list)
    test: list = field(default_factory=list)
    seed: int = 0

    def all_ids(self):
        return self.train + self.valid + self.test


def split_dataset(examples, seed: int) -> DatasetSplit:
    """Shuffle ids with SplitMix64 Fisher-Yates and cut 8:1:1.

    Sizes are floor(0.8 N) / floor(0.1 N) / remainder, so the test split is
    never empty. The shuffle consumes the generator exactly as documented in
    rng.SplitMix64.shuffle; the result is byte-identical across runs and
    platforms.
    """
    ids = [ex.id for ex in examples]
    if len(ids) < 3:
        raise DatasetError(f"need at least 3 examples to split, got {len(ids)}")
    if len(set(ids)) != len(ids):
        raise DatasetError("duplicate example ids; split would not partition")
    SplitMix64(seed).shuffle(ids)
    n = len(ids)
    n_train = (8 * n) // 10
    n_valid = n // 10
    return DatasetSplit(
        train=ids[:n_train],
        valid=ids[n_train : n_train + n_valid],
        test=ids[n_train + n_valid :],
        seed=seed,
    )


def tokenize(text: str) -> list[str]:
    """Split into ASCII alphanumeric runs and single other characters.

    CJK text therefore tokenizes per character, Latin text per word; both
    are stable under re-runs, which is all the hash embedder needs.
    """
    return _TOKEN_RE.findall(text)


def _token_vector(token: str, dim: int) -> np.ndarray:
    seed = fnv1a64(token.encode("utf-8"))
    u = (u64_stream(seed, dim) >> np.uint64(11)).astype(np.float64) * 2.0**-53
    v = 2.0 * u - 1.0
    norm = float(np.sqrt(v @ v))
    if norm == 0.0:
        v[0] = 1.0
        norm = 1.0
    return v / norm


def hash_embed(text: str, dim: int = 768, max_tokens: int = 128):
    """Deterministic embedding substitute for an external encoder.

    Each token maps to a unit-norm vector drawn from a SplitMix64 stream
    seeded by the token's 64-bit FNV-1a hash; the pooled vector is the
    unit-normalized mean of the token vectors. Pure function of
    (text, dim, max_tokens). Empty text uses one designated empty-token
    vector.

    Returns (tokens, pooled) as Tensors in the active precision profile.
    """
    if dim < 1:
        raise ValueError(f"dim must be >= 1, got {dim}")
    if max_tokens < 1:
        raise ValueError(f"max_tokens must be >= 1, got {max_tokens}")
    toks = tokenize(text)[:max_tokens] or [EMPTY_TOKEN]
    mat = np.stack([_token_vector(t, dim) for t in toks])
    pooled = mat.mean(axis=0)
    norm = float(np.sqrt(pooled @ pooled))
    if norm == 0.0:
        pooled = mat[0].copy()
    else:
        pooled = pooled / norm
    dtype = get_default_dtype()
    return Tensor(mat.astype(dtype)), Tensor(pooled.astype(dtype))


def embed_examples(raws, dim: int = 768, max_tokens: int = 128) -> list[EmbeddedExample]:
    out = []
    for ex in raws:
        tokens, pooled = hash_embed(ex.text, dim, max_tokens)
        out.append(EmbeddedExample(id=ex.id, tokens=tokens, pooled=pooled, label=ex.label))
    return out


def read_dataset(path) -> list[RawExample]:
    """Parse a tab-separated dataset file: ``id<TAB>label<TAB>text``.

    Lines starting with ``#`` and blank lines are skipped. Labels must be
    the ASCII digits 0/1/2; ids must be unique.
    """
    examples: list[RawExample] = []
    seen: set[str] = set()
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.rstrip("\r\n")
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t", 2)
            if len(parts) != 3:
                raise DatasetError(f"{path}: line {lineno}: expected id<TAB>label<TAB>text")
            ex_id, label_s, text = parts
            if label_s not in ("0", "1", "2"):
                raise DatasetError(
                    f"{path}: line {lineno}: example {ex_id!r} has label {label_s!r}, "
                    f"valid labels are {{0,1,2}}"
                )
            if ex_id in seen:
                raise DatasetError(f"{path}: line {lineno}: duplicate example id {ex_id!r}")
            seen.add(ex_id)
            examples.append(RawExample(id=ex_id, text=text, label=int(label_s)))
    return examples


def _meta_line(obj) -> bytes:
    return (json.dumps(obj, sort_keys=True, separators=(",", ":")) + "\n").encode("utf-8")


def write_embedding_file(path, examples, dim: int | None = None) -> None:
    """Write examples in the interchange format; payload is f32le, bit-exact."""
    if dim is None:
        if not examples:
            raise InterchangeError("cannot infer dim from an empty example list")
        dim = examples[0].tokens.shape[1]
    with open(path, "wb") as fh:
        fh.write(_meta_line({"format_version": 1, "dim": int(dim), "count": len(examples), "dtype": "f32le"}))
        for ex in examples:
            t, width = ex.tokens.shape
            if width != dim or ex.pooled.shape != (dim,):
                raise InterchangeError(
                    f"example {ex.id!r} has width {width}, header dim is {dim}"
                )
            fh.write(_meta_line({"id": ex.id, "label": int(ex.label), "T": int(t)}))
            fh.write(np.ascontiguousarray(ex.tokens.data, dtype="<f4").tobytes())
            fh.write(np.ascontiguousarray(ex.pooled.data, dtype="<f4").tobytes())


def read_embedding_file(path) -> list[EmbeddedExample]:
    """Read an interchange file back into EmbeddedExamples.

    Raises InterchangeError with the record index and byte counts on any
    truncation or header violation.
    """
    dtype = get_default_dtype()
    with open(path, "rb") as fh:
        header_line = fh.readline()
        if not header_line:
            raise InterchangeError(f"{path}: empty file, missing header")
        try:
            header = json.loads(header_line.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise InterchangeError(f"{path}: unparseable header line: {exc}") from exc
        for key in ("format_version", "dim", "count", "dtype"):
            if key not in header:
                raise InterchangeError(f"{path}: header missing field {key!r}")
        if header["format_version"] != 1:
            raise InterchangeError(f"{path}: unknown format version {header['format_version']!r}")
        if header["dtype"] != "f32le":
            raise InterchangeError(f"{path}: unsupported dtype {header['dtype']!r}")
        dim, count = int(header["dim"]), int(header["count"])
        if dim < 1 or count < 0:
            raise InterchangeError(f"{path}: invalid header dim={dim} count={count}")

        examples = []
        for i in range(count):
            meta_line = fh.readline()
            if not meta_line:
                raise InterchangeError(f"{path}: record {i}: expected metadata line, hit end of file")
            try:
                meta = json.loads(meta_line.decode("utf-8"))
                ex_id, label, t = meta["id"], int(meta["label"]), int(meta["T"])
            except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise InterchangeError(f"{path}: record {i}: bad metadata line: {exc}") from exc
            if t < 1:
                raise InterchangeError(f"{path}: record {i} (id={ex_id!r}): T must be >= 1, got {t}")
            if label not in VALID_LABELS:
                raise InterchangeError(
                    f"{path}: record {i} (id={ex_id!r}): label {label} not in {VALID_LABELS}"
                )
            nbytes = (t + 1) * dim * 4
            payload = fh.read(nbytes)
            if len(payload) != nbytes:
                raise InterchangeError(
                    f"{path}: record {i} (id={ex_id!r}): payload length mismatch, "
                    f"expected {nbytes} bytes, got {len(payload)}"
                )
            rows = np.frombuffer(payload, dtype="<f4").reshape(t + 1, dim)
            examples.append(
                EmbeddedExample(
                    id=ex_id,
                    tokens=Tensor(rows[:t].astype(dtype)),
                    pooled=Tensor(rows[t].astype(dtype)),
                    label=label,
                )
            )
        trailing = fh.read(1)
        if trailing:
            raise InterchangeError(f"{path}: trailing bytes after the declared {count} records")
    return examples
