"""FASTA/FASTQ parsing, quality filtering, and synthetic metagenome generation.

Input normalization: sequences are uppercased and every base outside the
read alphabet (A, C, G, T) is mapped to 'N' and kept; reads consisting only
of 'N' are dropped and counted. Truth labels travel in a sidecar TSV
(read_id<TAB>label) rather than in FASTA/FASTQ headers.
"""

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from mg2vec.errors import DomainError, ParseError, ValidationError

READ_ALPHABET = "ACGT"
PHRED_OFFSET = 33

_BASES = np.frombuffer(b"ACGT", dtype=np.uint8)

# uppercase, then anything outside ACGT -> 'N'
_NORMALIZE = bytearray(ord("N") for _ in range(256))
for _c in READ_ALPHABET.encode():
    _NORMALIZE[_c] = _c
    _NORMALIZE[_c + 32] = _c  # lowercase
_NORMALIZE = bytes(_NORMALIZE)


@dataclass
class ReadRecord:
    """One sequence read with optional per-base qualities and truth label."""

    id: str
    sequence: str
    qualities: list[int] | None = None
    label: str | None = None

    def __post_init__(self):
        if not self.sequence:
            raise ValidationError(f"read {self.id!r} has an empty sequence")
        if self.qualities is not None and len(self.qualities) != len(self.sequence):
            raise ValidationError(
                f"read {self.id!r}: {len(self.qualities)} quality scores for "
                f"{len(self.sequence)} bases"
            )

    def mean_quality(self):
        if not self.qualities:
            return None
        return sum(self.qualities) / len(self.qualities)


@dataclass
class ParseStats:
    """Counters updated by the parsers (all reads seen, not yielded)."""

    records: int = 0
    dropped_quality: int = 0
    dropped_ambiguous: int = 0


def _open_binary(source):
    if isinstance(source, (str, Path)):
        return open(source, "rb"), True
    return source, False


def _normalize_sequence(raw, read_id, offset):
    seq = raw.translate(_NORMALIZE)
    if not seq:
        raise ParseError(f"record {read_id!r} has an empty sequence", offset)
    return seq


def parse_fasta(source, stats=None):
    """Stream ReadRecords from FASTA bytes (path or binary file object).

    Record ids are the header up to the first whitespace; multi-line bodies
    are joined. Raises ParseError (with byte offset) for sequence data
    before the first header or for a header with no body. All-'N' reads
    are dropped and counted in stats.
    """
    stats = stats if stats is not None else ParseStats()
    handle, owned = _open_binary(source)
    try:
        offset = 0
        header_offset = 0
        read_id = None
        chunks = []
        for line in handle:
            stripped = line.strip()
            if stripped:
                if stripped.startswith(b">"):
                    if read_id is not None:
                        rec = _finish_fasta_record(read_id, chunks, header_offset, stats)
                        if rec is not None:
                            yield rec
                    fields = stripped[1:].split(None, 1)
                    read_id = fields[0].decode("ascii", "replace") if fields else ""
                    header_offset = offset
                    chunks = []
                elif read_id is None:
                    raise ParseError("sequence data before first '>' header", offset)
                else:
                    chunks.append(stripped)
            offset += len(line)
        if read_id is not None:
            rec = _finish_fasta_record(read_id, chunks, header_offset, stats)
            if rec is not None:
                yield rec
    finally:
        if owned:
            handle.close()


def _finish_fasta_record(read_id, chunks, offset, stats):
    stats.records += 1
    raw = b"".join(chunks)
    seq = _normalize_sequence(raw, read_id, offset)
    if seq.count(b"N") == len(seq):
        stats.dropped_ambiguous += 1
        return None
    return ReadRecord(id=read_id, sequence=seq.decode("ascii"))


def parse_fastq(source, min_avg_q=7.0, stats=None):
    """Stream ReadRecords from 4-line FASTQ (Phred+33), quality filtered.

    A record is kept only when the arithmetic mean of its Phred scores is
    strictly greater than min_avg_q; dropped records are counted in stats.
    """
    stats = stats if stats is not None else ParseStats()
    handle, owned = _open_binary(source)
    try:
        offset = 0
        while True:
            record_offset = offset
            lines = []
            for _ in range(4):
                line = handle.readline()
                if not line:
                    break
                lines.append(line)
                offset += len(line)
            if not lines:
                break
            if len(lines) < 4:
                raise ParseError("truncated FASTQ record", record_offset)
            header, seq_line, plus, qual_line = (ln.strip() for ln in lines)
            if not header.startswith(b"@"):
                raise ParseError("FASTQ header must start with '@'", record_offset)
            if not plus.startswith(b"+"):
                raise ParseError("FASTQ separator must start with '+'", record_offset)
            read_id = header[1:].split(None, 1)[0].decode("ascii", "replace")
            if len(seq_line) != len(qual_line):
                raise ParseError(
                    f"record {read_id!r}: sequence length {len(seq_line)} != "
                    f"quality length {len(qual_line)}",
                    record_offset,
                )
            for b in qual_line:
                if b < PHRED_OFFSET or b > 126:
                    raise ParseError(
                        f"record {read_id!r}: invalid quality byte {b}", record_offset
                    )
            stats.records += 1
            quals = [b - PHRED_OFFSET for b in qual_line]
            if not quals:
                raise ParseError(f"record {read_id!r} has an empty sequence", record_offset)
            if sum(quals) / len(quals) <= min_avg_q:
                stats.dropped_quality += 1
                continue
            seq = _normalize_sequence(seq_line, read_id, record_offset)
            if seq.count(b"N") == len(seq):
                stats.dropped_ambiguous += 1
                continue
            yield ReadRecord(
                id=read_id, sequence=seq.decode("ascii"), qualities=quals
            )
    finally:
        if owned:
            handle.close()


def write_fasta(path, records):
    with open(path, "wb") as fh:
        for rec in records:
            fh.write(f">{rec.id}\n{rec.sequence}\n".encode("ascii"))


def write_fastq(path, records):
    with open(path, "wb") as fh:
        for rec in records:
            if rec.qualities is None:
                raise ValidationError(f"read {rec.id!r} has no qualities; cannot write FASTQ")
            qual = bytes(q + PHRED_OFFSET for q in rec.qualities)
            fh.write(f"@{rec.id}\n{rec.sequence}\n+\n".encode("ascii") + qual + b"\n")


def read_labels(path):
    """Load the sidecar label TSV into {read_id: label}."""
    labels = {}
    with open(path, "rb") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip(b"\n")
            if not line:
                continue
            parts = line.split(b"\t")
            if len(parts) != 2:
                raise ParseError(f"labels line {lineno}: expected 2 tab-separated fields")
            labels[parts[0].decode("ascii")] = parts[1].decode("ascii")
    return labels


def write_labels(path, pairs):
    with open(path, "wb") as fh:
        for read_id, label in pairs:
            fh.write(f"{read_id}\t{label}\n".encode("ascii"))


@dataclass
class SyntheticSpec:
    """Parameters for a simulated metagenome.

    Species genomes descend from one random ancestor by independent
    per-base substitution (each species at its own rate), which sets the
    pairwise identity between species; the host genome is an independent
    random sequence. Genomes are drawn from random first-order Markov
    chains rather than uniform iid bases, and each species substitutes
    toward its own random base preference, so genomes carry the k-mer
    composition signatures real organisms have (composition_alpha is the
    Dirichlet concentration: smaller = stronger signatures). abundance
    lists the host class first, then one entry per species. Reads can be
    split across num_samples independently drawn samples (read ids carry
    the sample index) so downstream splits can partition by sample.
    """

    num_species: int
    ancestor_length: int
    mutation_rates: list[float]
    abundance: list[float]
    host_length: int
    num_reads: int
    read_length_mean: float
    read_length_stddev: float
    read_error_rate: float
    seed: int
    read_length_min: int = 30
    num_samples: int = 1
    composition_alpha: float = 1.0

    def class_names(self):
        return ["host"] + [f"sp{i + 1:02d}" for i in range(self.num_species)]

    def validate(self):
        if self.num_species < 1:
            raise DomainError("num_species must be >= 1")
        if len(self.mutation_rates) != self.num_species:
            raise DomainError(
                f"{len(self.mutation_rates)} mutation rates for {self.num_species} species"
            )
        if len(self.abundance) != self.num_species + 1:
            raise DomainError(
                f"abundance needs {self.num_species + 1} entries (host first), "
                f"got {len(self.abundance)}"
            )
        if abs(sum(self.abundance) - 1.0) > 1e-9:
            raise DomainError(f"abundance sums to {sum(self.abundance)!r}, not 1")
        if any(a < 0 for a in self.abundance):
            raise DomainError("abundance entries must be non-negative")
        for rate in list(self.mutation_rates) + [self.read_error_rate]:
            if not 0.0 <= rate <= 1.0:
                raise DomainError(f"rate {rate!r} outside [0, 1]")
        if self.ancestor_length < self.read_length_mean:
            raise DomainError("ancestor_length must be >= read_length_mean")
        if min(self.ancestor_length, self.host_length) < self.read_length_min:
            raise DomainError("read_length_min exceeds a genome length")
        if self.num_reads < 1 or self.num_samples < 1:
            raise DomainError("num_reads and num_samples must be >= 1")
        if self.read_length_min < 1 or self.read_length_stddev < 0:
            raise DomainError("bad read length parameters")
        if self.composition_alpha <= 0:
            raise DomainError("composition_alpha must be positive")


@dataclass
class SimulatedMetagenome:
    reads: list[ReadRecord] = field(default_factory=list)
    references: dict[str, str] = field(default_factory=dict)


def _random_markov_codes(rng, length, alpha):
    """Genome from a random first-order Markov chain over bases.

    Each draw gets its own transition matrix (rows ~ Dirichlet(alpha)), so
    independent genomes differ in base and k-mer composition the way real
    organisms do.
    """
    transitions = rng.dirichlet([alpha] * 4, size=4)
    cumulative = transitions.cumsum(axis=1)
    cumulative[:, -1] = 1.0
    uniforms = rng.random(length)
    codes = np.empty(length, dtype=np.uint8)
    state = int(rng.integers(0, 4))
    rows = cumulative.tolist()
    for i, u in enumerate(uniforms.tolist()):
        row = rows[state]
        state = 0 if u < row[0] else 1 if u < row[1] else 2 if u < row[2] else 3
        codes[i] = state
    return codes


def _substitution_table(rng, alpha):
    """Per-original-base replacement distribution over the 3 alternatives."""
    preference = rng.dirichlet([alpha] * 4)
    table = np.zeros((4, 3))
    for base in range(4):
        alternatives = [b for b in range(4) if b != base]
        probs = preference[alternatives]
        table[base] = probs / probs.sum()
    return table.cumsum(axis=1), np.array(
        [[b for b in range(4) if b != base] for base in range(4)], dtype=np.uint8
    )


def _mutate_codes(rng, codes, rate, substitution=None):
    """Independent per-base substitution.

    Without a substitution table the replacement is uniform over the 3
    other bases (used for sequencing errors); with one, replacements follow
    a genome-specific preference (species divergence).
    """
    out = codes.copy()
    hit = np.flatnonzero(rng.random(codes.shape[0]) < rate)
    if hit.size == 0:
        return out
    if substitution is None:
        shift = rng.integers(1, 4, size=hit.size, dtype=np.uint8)
        out[hit] = (out[hit] + shift) % 4
        return out
    cumulative, alternatives = substitution
    originals = out[hit]
    choice = (rng.random(hit.size)[:, None] > cumulative[originals]).sum(axis=1)
    out[hit] = alternatives[originals, np.minimum(choice, 2)]
    return out


def _codes_to_str(codes):
    return _BASES[codes].tobytes().decode("ascii")


def _draw_length(rng, mean, stddev, lo, hi):
    # truncated normal by rejection; degenerate stddev short-circuits
    if stddev == 0:
        return int(min(max(round(mean), lo), hi))
    for _ in range(1000):
        length = int(round(rng.normal(mean, stddev)))
        if lo <= length <= hi:
            return length
    raise DomainError(
        f"could not draw a read length in [{lo}, {hi}] from "
        f"normal({mean}, {stddev})"
    )


def simulate_metagenome(spec):
    """Generate labeled reads and the reference genomes they came from.

    Deterministic for a fixed spec (seed included): same spec, same bytes.
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    names = spec.class_names()

    ancestor = _random_markov_codes(rng, spec.ancestor_length, spec.composition_alpha)
    genomes = [_random_markov_codes(rng, spec.host_length, spec.composition_alpha)]
    for rate in spec.mutation_rates:
        table = _substitution_table(rng, spec.composition_alpha)
        genomes.append(_mutate_codes(rng, ancestor, rate, substitution=table))

    quality = int(min(40, max(2, round(-10 * math.log10(max(spec.read_error_rate, 1e-4))))))
    abundance = np.asarray(spec.abundance, dtype=np.float64)
    abundance = abundance / abundance.sum()

    per_sample = [spec.num_reads // spec.num_samples] * spec.num_samples
    for i in range(spec.num_reads % spec.num_samples):
        per_sample[i] += 1

    reads = []
    for sample, n_reads in enumerate(per_sample):
        classes = rng.choice(len(names), size=n_reads, p=abundance)
        for ri in range(n_reads):
            cls = int(classes[ri])
            genome = genomes[cls]
            length = _draw_length(
                rng, spec.read_length_mean, spec.read_length_stddev,
                spec.read_length_min, genome.shape[0],
            )
            start = int(rng.integers(0, genome.shape[0] - length + 1))
            codes = genome[start:start + length]
            if spec.read_error_rate > 0:
                codes = _mutate_codes(rng, codes, spec.read_error_rate)
            reads.append(ReadRecord(
                id=f"s{sample:02d}_r{ri:06d}",
                sequence=_codes_to_str(codes),
                qualities=[quality] * length,
                label=names[cls],
            ))
    references = {name: _codes_to_str(g) for name, g in zip(names, genomes)}
    return SimulatedMetagenome(reads=reads, references=references)


def write_simulated(out_dir, sim):
    """Write reads.fastq, labels.tsv, and refs.fasta under out_dir."""
    out_dir = Path(out_dir)
    write_fastq(out_dir / "reads.fastq", sim.reads)
    write_labels(out_dir / "labels.tsv", ((r.id, r.label) for r in sim.reads))
    refs = [ReadRecord(id=name, sequence=seq) for name, seq in sim.references.items()]
    write_fasta(out_dir / "refs.fasta", refs)
