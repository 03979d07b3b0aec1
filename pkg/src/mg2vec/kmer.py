"""K-mer tokenization and the shared token vocabulary.

The vocabulary covers all |alphabet|^k k-mers plus three specials (PAD,
MASK, UNK) at the highest ids, so the co-occurrence graph, the embedding
tables, and the transformer share one id space. K-mer ids are positional
base-|alphabet| codes in alphabet order ("AAAA" -> 0, "TTTT" -> 255 for
the default 4-letter alphabet at k=4). The alphabet is configurable; a
6-symbol alphabet (e.g. ACGTN-) gives a 6^k k-mer space when wanted.
"""

import hashlib
import json
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from mg2vec.errors import DomainError, ValidationError
from mg2vec.seqio import ReadRecord

SPECIAL_TOKENS = ("PAD", "MASK", "UNK")


@dataclass(frozen=True)
class KmerVocabulary:
    k: int
    alphabet: str = "ACGT"

    def __post_init__(self):
        if self.k < 1:
            raise DomainError("k must be >= 1")
        if len(set(self.alphabet)) != len(self.alphabet) or not self.alphabet:
            raise DomainError(f"alphabet {self.alphabet!r} has repeated or no symbols")
        if not self.alphabet.isascii():
            raise DomainError("alphabet must be ASCII")

    @property
    def base(self):
        return len(self.alphabet)

    @property
    def num_kmers(self):
        return self.base ** self.k

    @property
    def size(self):
        return self.num_kmers + len(SPECIAL_TOKENS)

    @property
    def pad_id(self):
        return self.num_kmers

    @property
    def mask_id(self):
        return self.num_kmers + 1

    @property
    def unk_id(self):
        return self.num_kmers + 2

    @cached_property
    def _char_codes(self):
        lut = np.full(256, -1, dtype=np.int64)
        for i, ch in enumerate(self.alphabet):
            lut[ord(ch)] = i
        return lut

    @cached_property
    def _powers(self):
        return self.base ** np.arange(self.k - 1, -1, -1, dtype=np.int64)

    def token_to_id(self, token):
        """Id of a k-mer or special token; anything unknown maps to UNK."""
        if token in SPECIAL_TOKENS:
            return self.num_kmers + SPECIAL_TOKENS.index(token)
        if len(token) != self.k:
            return self.unk_id
        code = 0
        for ch in token:
            digit = self._char_codes[ord(ch)] if ch.isascii() else -1
            if digit < 0:
                return self.unk_id
            code = code * self.base + int(digit)
        return code

    def id_to_token(self, token_id):
        if self.num_kmers <= token_id < self.size:
            return SPECIAL_TOKENS[token_id - self.num_kmers]
        if not 0 <= token_id < self.num_kmers:
            raise DomainError(f"token id {token_id} out of range for |V|={self.size}")
        digits = []
        code = int(token_id)
        for _ in range(self.k):
            digits.append(self.alphabet[code % self.base])
            code //= self.base
        return "".join(reversed(digits))

    def content_hash(self):
        """Short stable hash identifying this vocabulary in artifact headers."""
        key = f"k={self.k};alphabet={self.alphabet};specials={','.join(SPECIAL_TOKENS)}"
        return hashlib.sha256(key.encode()).hexdigest()[:16]

    def save_manifest(self, path):
        payload = {
            "format": "mg2vec-vocabulary",
            "version": 1,
            "k": self.k,
            "alphabet": self.alphabet,
            "specials": list(SPECIAL_TOKENS),
            "size": self.size,
            "hash": self.content_hash(),
        }
        with open(path, "w") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load_manifest(cls, path):
        with open(path) as fh:
            payload = json.load(fh)
        if payload.get("format") != "mg2vec-vocabulary" or payload.get("version") != 1:
            raise ValidationError(f"{path}: not a version-1 vocabulary manifest")
        if tuple(payload.get("specials", ())) != SPECIAL_TOKENS:
            raise ValidationError(f"{path}: unexpected special tokens")
        return cls(k=int(payload["k"]), alphabet=str(payload["alphabet"]))


def tokenize(read, vocab, stride=1):
    """Ids of the overlapping k-mers of a read (window start every `stride`).

    Windows containing a symbol outside the vocabulary alphabet map to UNK.
    Reads shorter than k give an empty array (callers decide what to drop).
    """
    if stride < 1:
        raise DomainError("stride must be >= 1")
    seq = read.sequence if isinstance(read, ReadRecord) else read
    if len(seq) < vocab.k:
        return np.empty(0, dtype=np.int64)
    chars = np.frombuffer(seq.encode("ascii"), dtype=np.uint8)
    digits = vocab._char_codes[chars]
    windows = sliding_window_view(digits, vocab.k)
    ids = np.where(digits < 0, 0, digits)  # placeholder digits for UNK windows
    ids = sliding_window_view(ids, vocab.k) @ vocab._powers
    ids[(windows < 0).any(axis=1)] = vocab.unk_id
    return ids[::stride]
