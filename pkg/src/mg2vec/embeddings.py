"""Dense per-token embedding tables and their on-disk format.

One table holds |vocab| rows (specials included) of D float64 values. The
binary file is a single JSON header line followed by the raw row-major
payload, which round-trips bit-exactly; a TSV export exists for inspection.
"""

import json
from dataclasses import dataclass, replace

import numpy as np

from mg2vec.errors import ArtifactFormatError, ValidationError

EMBEDDING_FORMAT_VERSION = 1


@dataclass
class EmbeddingTable:
    vectors: np.ndarray  # (rows, dim) float64
    vocab_hash: str = ""
    normalized: bool = False

    def __post_init__(self):
        self.vectors = np.ascontiguousarray(self.vectors, dtype=np.float64)
        if self.vectors.ndim != 2 or self.vectors.shape[1] < 1:
            raise ValidationError("embedding table must be 2-D with dim >= 1")
        if not np.all(np.isfinite(self.vectors)):
            raise ValidationError("embedding table contains non-finite values")

    @property
    def rows(self):
        return self.vectors.shape[0]

    @property
    def dim(self):
        return self.vectors.shape[1]

    def l2_normalized(self):
        """Copy with unit-norm rows (all-zero rows are left as zeros)."""
        norms = np.linalg.norm(self.vectors, axis=1, keepdims=True)
        safe = np.where(norms == 0, 1.0, norms)
        return replace(self, vectors=self.vectors / safe, normalized=True)


def concat_tables(first, second):
    if first.rows != second.rows:
        raise ValidationError(
            f"cannot concatenate tables with {first.rows} and {second.rows} rows"
        )
    if first.vocab_hash and second.vocab_hash and first.vocab_hash != second.vocab_hash:
        raise ValidationError("cannot concatenate tables from different vocabularies")
    return EmbeddingTable(
        vectors=np.hstack([first.vectors, second.vectors]),
        vocab_hash=first.vocab_hash or second.vocab_hash,
    )


def save_embeddings(path, table):
    header = {
        "format": "mg2vec-embedding",
        "version": EMBEDDING_FORMAT_VERSION,
        "rows": table.rows,
        "dim": table.dim,
        "vocab_hash": table.vocab_hash,
        "normalized": table.normalized,
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("ascii") + b"\n")
        fh.write(np.ascontiguousarray(table.vectors).tobytes())


def load_embeddings(path, expected_vocab_hash=None):
    with open(path, "rb") as fh:
        header_line = fh.readline()
        try:
            header = json.loads(header_line)
        except ValueError:
            raise ArtifactFormatError(f"{path}: missing embedding header") from None
        if header.get("format") != "mg2vec-embedding":
            raise ArtifactFormatError(f"{path}: not an embedding file")
        if header.get("version") != EMBEDDING_FORMAT_VERSION:
            raise ArtifactFormatError(
                f"{path}: embedding format version {header.get('version')} "
                f"is not supported (expected {EMBEDDING_FORMAT_VERSION})"
            )
        rows, dim = int(header["rows"]), int(header["dim"])
        payload = fh.read(rows * dim * 8)
        if len(payload) != rows * dim * 8:
            raise ArtifactFormatError(f"{path}: truncated embedding payload")
        vectors = np.frombuffer(payload, dtype=np.float64).reshape(rows, dim).copy()
    table = EmbeddingTable(
        vectors=vectors,
        vocab_hash=header.get("vocab_hash", ""),
        normalized=bool(header.get("normalized", False)),
    )
    if expected_vocab_hash and table.vocab_hash != expected_vocab_hash:
        raise ValidationError(
            f"{path}: embedding built for vocabulary {table.vocab_hash}, "
            f"expected {expected_vocab_hash}"
        )
    return table


def export_table_tsv(path, table, vocab):
    """Human-readable dump: token, then its vector components."""
    if table.rows != vocab.size:
        raise ValidationError(
            f"table has {table.rows} rows but vocabulary has {vocab.size} tokens"
        )
    with open(path, "w") as fh:
        for token_id in range(table.rows):
            values = "\t".join(repr(v) for v in table.vectors[token_id])
            fh.write(f"{vocab.id_to_token(token_id)}\t{values}\n")
