"""Per-k-mer vectors in four flavors, pooled into per-read features.

GLOBAL uses the structural (graph) table, CONTEXTUAL the transformer's
trained embedding layer, CONCAT their concatenation, and ENCODER the final
hidden states of a forward pass. Read vectors are the arithmetic mean of
the per-k-mer vectors with UNK tokens excluded; pooling is therefore
permutation-invariant over the token multiset.
"""

import enum
import json
from dataclasses import dataclass

import numpy as np

from mg2vec.errors import ConfigError, UnembeddableReadError
from mg2vec.kmer import tokenize
from mg2vec.mlm import windows_from_reads


class RepresentationMode(enum.Enum):
    GLOBAL = "global"
    CONTEXTUAL = "contextual"
    ENCODER = "encoder"
    CONCAT = "concat"

    @classmethod
    def parse(cls, text):
        try:
            return cls(text.strip().lower())
        except ValueError:
            options = ", ".join(m.value for m in cls)
            raise ConfigError(
                f"unknown representation mode {text!r} (choose from {options})"
            ) from None


@dataclass
class Artifacts:
    """Whatever a representation mode needs; validated per mode."""

    vocab: object
    global_table: object = None
    contextual_table: object = None
    model: object = None

    def require(self, mode):
        missing = []
        if mode in (RepresentationMode.GLOBAL, RepresentationMode.CONCAT):
            if self.global_table is None:
                missing.append("structural embedding table")
        if mode in (RepresentationMode.CONTEXTUAL, RepresentationMode.CONCAT):
            if self.contextual_table is None:
                missing.append("contextual embedding table")
        if mode is RepresentationMode.ENCODER:
            if self.model is None:
                missing.append("trained transformer checkpoint")
        if missing:
            raise ConfigError(
                f"representation mode {mode.value} needs: {', '.join(missing)}"
            )


def _token_table(mode, artifacts):
    if mode is RepresentationMode.GLOBAL:
        return artifacts.global_table.vectors
    if mode is RepresentationMode.CONTEXTUAL:
        return artifacts.contextual_table.vectors
    if mode is RepresentationMode.CONCAT:
        return np.hstack([
            artifacts.global_table.vectors, artifacts.contextual_table.vectors,
        ])
    raise ConfigError(f"mode {mode} has no per-token table")


def kmer_vector(token_id, mode, artifacts, window_ids=None, position=None):
    """Vector of one k-mer under a representation mode.

    ENCODER mode needs the surrounding window (token ids) and the k-mer's
    position in it; the other modes are position-independent table rows.
    """
    artifacts.require(mode)
    if mode is RepresentationMode.ENCODER:
        if window_ids is None or position is None:
            raise ConfigError("encoder mode needs the surrounding window and position")
        hidden, _, _ = artifacts.model.forward(np.asarray(window_ids)[None, :])
        return hidden[0, position].copy()
    return _token_table(mode, artifacts)[token_id].copy()


def feature_dim(mode, artifacts):
    artifacts.require(mode)
    if mode is RepresentationMode.ENCODER:
        return artifacts.model.config.model_dim
    return _token_table(mode, artifacts).shape[1]


def embed_read(read, mode, artifacts):
    """Mean per-k-mer vector of a read (UNK excluded).

    Raises UnembeddableReadError when the read is shorter than k or every
    token is UNK.
    """
    artifacts.require(mode)
    vocab = artifacts.vocab
    ids = tokenize(read, vocab)
    kept = ids[ids != vocab.unk_id]
    if kept.size == 0:
        read_id = getattr(read, "id", "<sequence>")
        raise UnembeddableReadError(f"read {read_id!r} has no embeddable k-mers")
    if mode is RepresentationMode.ENCODER:
        model = artifacts.model
        total = np.zeros(model.config.model_dim)
        count = 0
        for window in _split_windows(ids, model.config.max_tokens):
            hidden, _, _ = model.forward(window[None, :])
            keep = window != vocab.unk_id
            total += hidden[0][keep].sum(axis=0)
            count += int(keep.sum())
        return total / count
    table = _token_table(mode, artifacts)
    counts = np.bincount(kept, minlength=table.shape[0]).astype(np.float64)
    return (counts @ table) / kept.size


def _split_windows(ids, max_tokens):
    for start in range(0, len(ids), max_tokens):
        chunk = ids[start:start + max_tokens]
        if chunk.size:
            yield chunk


def embed_reads(reads, mode, artifacts, on_skip=None):
    """(ids, labels, matrix) over the embeddable reads of a dataset.

    Unembeddable reads are skipped; on_skip(read, error) observes them.
    """
    ids, labels, rows = [], [], []
    for read in reads:
        try:
            rows.append(embed_read(read, mode, artifacts))
        except UnembeddableReadError as err:
            if on_skip is not None:
                on_skip(read, err)
            continue
        ids.append(read.id)
        labels.append(read.label)
    matrix = np.vstack(rows) if rows else np.empty((0, feature_dim(mode, artifacts)))
    return ids, labels, matrix


def export_embeddings_tsv(path, ids, labels, matrix):
    """read_id, optional label, then the vector components, one read per row."""
    with open(path, "w") as fh:
        for read_id, label, row in zip(ids, labels, matrix):
            values = "\t".join(repr(v) for v in row)
            fh.write(f"{read_id}\t{label if label is not None else ''}\t{values}\n")


FEATURES_FORMAT_VERSION = 1


def save_features(path, ids, labels, matrix):
    """Compact binary equivalent of the TSV export (bit-exact round trip)."""
    matrix = np.ascontiguousarray(matrix, dtype=np.float64)
    header = {
        "format": "mg2vec-features",
        "version": FEATURES_FORMAT_VERSION,
        "rows": matrix.shape[0],
        "dim": matrix.shape[1],
        "ids": list(ids),
        "labels": [lab if lab is not None else "" for lab in labels],
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("ascii") + b"\n")
        fh.write(matrix.tobytes())


def load_features(path):
    from mg2vec.errors import ArtifactFormatError

    with open(path, "rb") as fh:
        try:
            header = json.loads(fh.readline())
        except ValueError:
            raise ArtifactFormatError(f"{path}: missing features header") from None
        if header.get("format") != "mg2vec-features":
            raise ArtifactFormatError(f"{path}: not a feature matrix file")
        if header.get("version") != FEATURES_FORMAT_VERSION:
            raise ArtifactFormatError(f"{path}: unsupported features version")
        rows, dim = int(header["rows"]), int(header["dim"])
        payload = fh.read(rows * dim * 8)
        if len(payload) != rows * dim * 8:
            raise ArtifactFormatError(f"{path}: truncated feature payload")
        matrix = np.frombuffer(payload, dtype=np.float64).reshape(rows, dim).copy()
    labels = [lab if lab else None for lab in header["labels"]]
    return list(header["ids"]), labels, matrix
