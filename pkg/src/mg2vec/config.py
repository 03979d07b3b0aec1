"""Sectioned key=value configuration for the pipeline.

INI-style files parsed against a fixed schema: unknown sections or keys are
errors (with a closest-match suggestion), values are type-checked, and every
default is documented (the CLI --help prints this schema). One global seed
fans out to per-stage seeds through a documented hash so stages can be
re-run independently yet reproducibly.
"""

import configparser
import difflib
import hashlib
import json
from dataclasses import dataclass

from mg2vec.errors import ConfigError
from mg2vec.graph import WeightParams
from mg2vec.kmer import KmerVocabulary
from mg2vec.mlm import MaskingConfig, PretrainSchedule
from mg2vec.node2vec import WalkConfig
from mg2vec.seqio import SyntheticSpec
from mg2vec.transformer import TransformerConfig


def _float_list(text):
    return [float(part) for part in text.split(",") if part.strip() != ""]


def _str_list(text):
    return [part.strip() for part in text.split(",") if part.strip() != ""]


def _bool(text):
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


# section -> key -> (parser, default, help)
SCHEMA = {
    "paths": {
        "reads": (str, "", "input reads file; empty means <out>/reads.fastq"),
        "labels": (str, "", "truth label TSV; empty means <out>/labels.tsv"),
        "min_avg_q": (float, 7.0, "FASTQ mean-quality filter (strictly greater)"),
    },
    "simulate": {
        "num_species": (int, 4, "species besides the host"),
        "ancestor_length": (int, 50000, "shared ancestor genome length"),
        "host_length": (int, 100000, "host genome length"),
        "mutation_rates": (_float_list, [0.03, 0.05, 0.08, 0.10],
                           "per-species substitution rate from the ancestor"),
        "abundance": (_float_list, [0.50, 0.30, 0.12, 0.06, 0.02],
                      "read fractions: host first, then each species"),
        "num_reads": (int, 20000, "total simulated reads"),
        "read_length_mean": (float, 100.0, "mean read length"),
        "read_length_stddev": (float, 10.0, "read length standard deviation"),
        "read_length_min": (int, 30, "lower truncation for read lengths"),
        "read_error_rate": (float, 0.02, "per-base sequencing error rate"),
        "num_samples": (int, 13, "independent samples the reads split into"),
        "composition_alpha": (float, 1.0,
                              "Dirichlet concentration of genome composition "
                              "(smaller = stronger k-mer signatures)"),
    },
    "kmer": {
        "k": (int, 4, "k-mer length"),
        "alphabet": (str, "ACGT", "ordered token alphabet"),
    },
    "graph": {
        "lambda_max": (float, 2.0, "weight update scale"),
        "lambda_min": (float, 2.0, "weight update damping bound"),
        "denom_floor": (float, 1.0, "floor for the update denominator"),
    },
    "walks": {
        "walks_per_node": (int, 10, "random walks started per node"),
        "walk_length": (int, 80, "nodes per walk"),
        "p": (float, 1.0, "return bias (1/p on revisiting the previous node)"),
        "q": (float, 1.0, "exploration bias (1/q on distance-2 moves)"),
    },
    "skipgram": {
        "dim": (int, 64, "structural embedding dimension"),
        "window": (int, 5, "context window"),
        "negatives": (int, 5, "negative samples per pair"),
        "epochs": (int, 5, "passes over the walk corpus"),
        "learning_rate": (float, 0.025, "start rate, linearly decayed"),
    },
    "transformer": {
        "num_layers": (int, 4, "encoder layers"),
        "num_heads": (int, 8, "attention heads"),
        "model_dim": (int, 64, "hidden width (paper-scale profile: 512)"),
        "ff_dim": (int, 256, "feed-forward width (paper-scale profile: 2048)"),
        "dropout": (float, 0.1, "dropout rate during pretraining"),
        "max_tokens": (int, 512, "window size for long reads"),
    },
    "masking": {
        "mask_ratio": (float, 0.15, "per-token masking probability"),
    },
    "pretrain": {
        "epochs": (int, 10, "masked-token training epochs"),
        "batch_size": (int, 16, "windows per step"),
        "warmup_steps": (int, 400, "warmup of the learning-rate schedule "
                                   "(paper-scale profile: 4000)"),
        "max_reads": (int, 0, "cap on pretraining reads (0 = all, seeded sample)"),
        "exclude_labels": (_str_list, [], "truth labels held out of pretraining"),
    },
    "embed": {
        "representation_mode": (str, "concat", "global | contextual | encoder | concat"),
    },
    "classifier": {
        "kind": (str, "logreg", "logreg | mlp | deep"),
        "l2_penalty": (float, 0.1, "logreg L2 strength"),
        "max_iters": (int, 10000, "logreg iteration cap"),
        "mlp_epochs": (int, 200, "MLP training epochs"),
        "mlp_batch_size": (int, 32, "MLP minibatch size"),
        "mlp_learning_rate": (float, 4e-5, "MLP Adam learning rate"),
        "mlp_l2": (float, 1e-5, "MLP L2 penalty"),
        "deep_epochs": (int, 10, "deep net epochs (alt profile: 15)"),
        "deep_batch_size": (int, 64, "deep net batch size (alt profile: 512)"),
        "deep_warmup_steps": (int, 400, "deep net schedule warmup"),
        "weighted": (_bool, True, "weight classes by inverse frequency"),
    },
    "cluster": {
        "clusters": (int, 0, "cluster count; 0 means the number of truth classes"),
        "normalize": (_bool, True, "L2-normalize features before k-means"),
        "max_iters": (int, 300, "Lloyd iteration cap"),
        "label_groups": (_str_list, [],
                         "optional label=group pairs coarsening truth classes"),
    },
    "split": {
        "mode": (str, "sample", "sample (by simulated sample) | read (by id hash)"),
        "train_samples": (int, 7, "samples assigned to training"),
        "val_samples": (int, 1, "samples assigned to validation"),
        "train_frac": (float, 0.7, "read-mode training fraction"),
        "val_frac": (float, 0.1, "read-mode validation fraction"),
    },
    "ablation": {
        "no_global_prior": (_bool, False,
                            "pretrain with a random embedding layer instead of "
                            "the structural table"),
        "raw_count_weights": (_bool, False,
                              "use raw co-occurrence counts as edge weights"),
        "unidirectional_attention": (_bool, False,
                                     "causal attention instead of bidirectional"),
    },
    "pipeline": {
        "seed": (int, 0, "global seed; per-stage seeds derive from it"),
        "out": (str, "", "artifact directory (CLI --out overrides)"),
    },
}


def describe_defaults():
    lines = []
    for section, keys in SCHEMA.items():
        lines.append(f"[{section}]")
        for key, (_, default, help_text) in keys.items():
            shown = ",".join(str(v) for v in default) if isinstance(default, list) else default
            lines.append(f"  {key} = {shown!r:<22} {help_text}")
    return "\n".join(lines)


def stage_seed(global_seed, stage_name):
    """Per-stage 63-bit seed: sha256 over '<seed>:<stage>'."""
    digest = hashlib.sha256(f"{global_seed}:{stage_name}".encode()).digest()
    return int.from_bytes(digest[:8], "big") >> 1


@dataclass
class PipelineConfig:
    values: dict  # section -> key -> parsed value

    def get(self, section, key):
        return self.values[section][key]

    def config_hash(self):
        canon = json.dumps(self.values, sort_keys=True, default=str)
        return hashlib.sha256(canon.encode()).hexdigest()[:16]

    @property
    def seed(self):
        return self.get("pipeline", "seed")

    def vocabulary(self):
        return KmerVocabulary(k=self.get("kmer", "k"), alphabet=self.get("kmer", "alphabet"))

    def weight_params(self):
        return WeightParams(
            lambda_max=self.get("graph", "lambda_max"),
            lambda_min=self.get("graph", "lambda_min"),
            denom_floor=self.get("graph", "denom_floor"),
            raw_counts=self.get("ablation", "raw_count_weights"),
        )

    def walk_config(self):
        return WalkConfig(
            walks_per_node=self.get("walks", "walks_per_node"),
            walk_length=self.get("walks", "walk_length"),
            p=self.get("walks", "p"),
            q=self.get("walks", "q"),
            seed=stage_seed(self.seed, "walks"),
        )

    def transformer_config(self, vocab):
        return TransformerConfig(
            vocab_size=vocab.size,
            pad_id=vocab.pad_id,
            num_layers=self.get("transformer", "num_layers"),
            num_heads=self.get("transformer", "num_heads"),
            model_dim=self.get("transformer", "model_dim"),
            ff_dim=self.get("transformer", "ff_dim"),
            dropout=self.get("transformer", "dropout"),
            max_tokens=self.get("transformer", "max_tokens"),
            bidirectional=not self.get("ablation", "unidirectional_attention"),
            seed=stage_seed(self.seed, "transformer"),
        )

    def masking_config(self):
        return MaskingConfig(
            mask_ratio=self.get("masking", "mask_ratio"),
            seed=stage_seed(self.seed, "masking"),
        )

    def pretrain_schedule(self):
        return PretrainSchedule(
            epochs=self.get("pretrain", "epochs"),
            batch_size=self.get("pretrain", "batch_size"),
            warmup_steps=self.get("pretrain", "warmup_steps"),
        )

    def synthetic_spec(self):
        return SyntheticSpec(
            num_species=self.get("simulate", "num_species"),
            ancestor_length=self.get("simulate", "ancestor_length"),
            mutation_rates=self.get("simulate", "mutation_rates"),
            abundance=self.get("simulate", "abundance"),
            host_length=self.get("simulate", "host_length"),
            num_reads=self.get("simulate", "num_reads"),
            read_length_mean=self.get("simulate", "read_length_mean"),
            read_length_stddev=self.get("simulate", "read_length_stddev"),
            read_error_rate=self.get("simulate", "read_error_rate"),
            read_length_min=self.get("simulate", "read_length_min"),
            num_samples=self.get("simulate", "num_samples"),
            composition_alpha=self.get("simulate", "composition_alpha"),
            seed=stage_seed(self.seed, "simulate"),
        )


def default_config():
    values = {
        section: {key: spec[1] for key, spec in keys.items()}
        for section, keys in SCHEMA.items()
    }
    return PipelineConfig(values=values)


def _suggest(name, candidates):
    close = difflib.get_close_matches(name, candidates, n=1)
    return f"; did you mean {close[0]!r}?" if close else ""


def load_config(path, overrides=None):
    """Parse an INI file against the schema; unknown keys are errors.

    overrides is an optional {(section, key): value} map applied last
    (used by the CLI for --seed/--out).
    """
    parser = configparser.ConfigParser(interpolation=None)
    read = parser.read(path)
    if not read:
        raise ConfigError(f"cannot read config file {path}")
    config = default_config()
    for section in parser.sections():
        if section not in SCHEMA:
            raise ConfigError(
                f"{path}: unknown section [{section}]"
                + _suggest(section, list(SCHEMA))
            )
        for key, raw in parser[section].items():
            if key not in SCHEMA[section]:
                raise ConfigError(
                    f"{path}: unknown key {key!r} in [{section}]"
                    + _suggest(key, list(SCHEMA[section]))
                )
            parse = SCHEMA[section][key][0]
            try:
                config.values[section][key] = parse(raw)
            except ValueError as err:
                raise ConfigError(f"{path}: bad value for {section}.{key}: {err}") from None
    if overrides:
        for (section, key), value in overrides.items():
            config.values[section][key] = value
    _validate(config, path)
    return config


def _validate(config, path):
    mode = config.get("embed", "representation_mode").lower()
    if mode not in ("global", "contextual", "encoder", "concat"):
        raise ConfigError(f"{path}: bad embed.representation_mode {mode!r}")
    kind = config.get("classifier", "kind").lower()
    if kind not in ("logreg", "mlp", "deep"):
        raise ConfigError(f"{path}: bad classifier.kind {kind!r}")
    split_mode = config.get("split", "mode").lower()
    if split_mode not in ("sample", "read"):
        raise ConfigError(f"{path}: bad split.mode {split_mode!r}")
    for entry in config.get("cluster", "label_groups"):
        if "=" not in entry:
            raise ConfigError(
                f"{path}: cluster.label_groups entries must look like label=group"
            )
    fracs = config.get("split", "train_frac"), config.get("split", "val_frac")
    if min(fracs) < 0 or sum(fracs) > 1:
        raise ConfigError(f"{path}: split fractions must be >= 0 and sum to <= 1")
