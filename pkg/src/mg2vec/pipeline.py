"""Stage orchestration: artifacts, manifests, and the eight pipeline stages.

Every stage reads its inputs from the artifact directory (or the configured
input paths), writes its outputs plus a manifest (config hash, seed, input
and output hashes), and is idempotent: re-running with the same config and
seed reproduces the artifacts byte for byte. A lock file serializes stages
per artifact directory. Artifacts are flat files; deleting downstream ones
never invalidates upstream ones.
"""

import hashlib
import json
import os
import re
import sys
from pathlib import Path

import numpy as np

from mg2vec import classify, cluster, embed, graph, metrics, mlm, node2vec, seqio
from mg2vec.config import stage_seed
from mg2vec.embeddings import load_embeddings, save_embeddings, export_table_tsv
from mg2vec.errors import ConfigError, MissingArtifactError, Mg2vecError
from mg2vec.kmer import KmerVocabulary
from mg2vec.transformer import load_model, save_model

STAGES = (
    "simulate", "build-graph", "train-structural", "pretrain",
    "embed", "train", "evaluate", "cluster",
)

# stage -> (artifact filenames it needs, stage that makes them)
_NEEDS = {
    "build-graph": (),
    "train-structural": (("vocab.json", "build-graph"), ("graph.tsv", "build-graph")),
    "pretrain": (("vocab.json", "build-graph"),),
    "embed": (("vocab.json", "build-graph"),),
    "train": (("features.bin", "embed"),),
    "evaluate": (("features.bin", "embed"), ("classifier.ckpt", "train")),
    "cluster": (("features.bin", "embed"),),
}


def log(message):
    print(f"mg2vec: {message}", file=sys.stderr)


def _sha256(path):
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


class _StageLock:
    def __init__(self, out_dir):
        self.path = Path(out_dir) / ".mg2vec.lock"

    def __enter__(self):
        try:
            fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise Mg2vecError(
                f"{self.path} exists: another stage is running in this artifact "
                "directory (or crashed; delete the lock file to proceed)"
            ) from None
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        return self

    def __exit__(self, *exc_info):
        self.path.unlink(missing_ok=True)


def _out_dir(config, out_override):
    out = out_override or config.get("pipeline", "out")
    if not out:
        raise ConfigError("no artifact directory: set pipeline.out or pass --out")
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _reads_path(config, out_dir):
    configured = config.get("paths", "reads")
    path = Path(configured) if configured else out_dir / "reads.fastq"
    if not path.exists():
        raise MissingArtifactError(
            f"reads file {path} not found; run the simulate stage first or set "
            "paths.reads"
        )
    return path


def _labels_path(config, out_dir, required=False):
    configured = config.get("paths", "labels")
    path = Path(configured) if configured else out_dir / "labels.tsv"
    if not path.exists():
        if required:
            raise MissingArtifactError(
                f"labels file {path} not found; run the simulate stage first or "
                "set paths.labels"
            )
        return None
    return path


def _check_upstream(stage, out_dir):
    for filename, producer in _NEEDS.get(stage, ()):
        if not (out_dir / filename).exists():
            raise MissingArtifactError(
                f"stage {stage!r} needs {filename}; run the {producer!r} stage first"
            )


def _load_reads(config, out_dir):
    path = _reads_path(config, out_dir)
    stats = seqio.ParseStats()
    if path.suffix.lower() in (".fastq", ".fq"):
        reads = list(seqio.parse_fastq(
            path, min_avg_q=config.get("paths", "min_avg_q"), stats=stats,
        ))
    else:
        reads = list(seqio.parse_fasta(path, stats=stats))
    log(f"parsed {stats.records} records from {path.name}: kept {len(reads)}, "
        f"dropped {stats.dropped_quality} low-quality, "
        f"{stats.dropped_ambiguous} all-ambiguous")
    labels_file = _labels_path(config, out_dir)
    if labels_file is not None:
        labels = seqio.read_labels(labels_file)
        for read in reads:
            read.label = labels.get(read.id)
    return reads, path


def _vocab_from_artifacts(out_dir):
    return KmerVocabulary.load_manifest(out_dir / "vocab.json")


_SAMPLE_PATTERN = re.compile(r"^(s\d+)_")


def split_reads(ids, config):
    """'train' / 'val' / 'test' per read id, per the configured split mode."""
    mode = config.get("split", "mode").lower()
    assignment = {}
    if mode == "sample":
        samples = sorted({
            (_SAMPLE_PATTERN.match(rid).group(1) if _SAMPLE_PATTERN.match(rid) else "s00")
            for rid in ids
        })
        n_train = config.get("split", "train_samples")
        n_val = config.get("split", "val_samples")
        if len(samples) < n_train + n_val + 1:
            raise ConfigError(
                f"sample split needs more than {n_train + n_val} samples, found "
                f"{len(samples)}; lower split counts or use split.mode=read"
            )
        role_of = {}
        for i, sample in enumerate(samples):
            role_of[sample] = ("train" if i < n_train
                               else "val" if i < n_train + n_val else "test")
        for rid in ids:
            match = _SAMPLE_PATTERN.match(rid)
            assignment[rid] = role_of[match.group(1) if match else "s00"]
    else:
        train_frac = config.get("split", "train_frac")
        val_frac = config.get("split", "val_frac")
        salt = str(config.seed)
        for rid in ids:
            digest = hashlib.sha256(f"{salt}:{rid}".encode()).digest()
            u = int.from_bytes(digest[:8], "big") / 2 ** 64
            assignment[rid] = ("train" if u < train_frac
                               else "val" if u < train_frac + val_frac else "test")
    return assignment


def _write_manifest(out_dir, stage, config, inputs, outputs):
    manifest = {
        "stage": stage,
        "config_hash": config.config_hash(),
        "seed": config.seed,
        "inputs": {str(p.name): _sha256(p) for p in inputs},
        "outputs": {str(p.name): _sha256(p) for p in outputs},
    }
    path = out_dir / f"manifest-{stage.replace('-', '_')}.json"
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest


def run_stage(stage, config, out=None):
    """Execute one pipeline stage; returns its manifest dict."""
    if stage not in STAGES:
        raise ConfigError(f"unknown stage {stage!r}; choose from {', '.join(STAGES)}")
    out_dir = _out_dir(config, out)
    with _StageLock(out_dir):
        _check_upstream(stage, out_dir)
        runner = {
            "simulate": _stage_simulate,
            "build-graph": _stage_build_graph,
            "train-structural": _stage_train_structural,
            "pretrain": _stage_pretrain,
            "embed": _stage_embed,
            "train": _stage_train,
            "evaluate": _stage_evaluate,
            "cluster": _stage_cluster,
        }[stage]
        inputs, outputs = runner(config, out_dir)
        manifest = _write_manifest(out_dir, stage, config, inputs, outputs)
    log(f"stage {stage} done: {', '.join(p.name for p in outputs)}")
    return manifest


def _stage_simulate(config, out_dir):
    sim = seqio.simulate_metagenome(config.synthetic_spec())
    seqio.write_simulated(out_dir, sim)
    log(f"simulated {len(sim.reads)} reads over {len(sim.references)} genomes")
    return [], [out_dir / "reads.fastq", out_dir / "labels.tsv", out_dir / "refs.fasta"]


def _stage_build_graph(config, out_dir):
    reads, reads_path = _load_reads(config, out_dir)
    vocab = config.vocabulary()
    built = graph.build_graph(
        [r.sequence for r in reads], vocab, params=config.weight_params(),
    )
    vocab.save_manifest(out_dir / "vocab.json")
    graph.save_graph(out_dir / "graph.tsv", built)
    log(f"graph: {built.num_nodes} nodes, {built.num_edges} edges")
    return [reads_path], [out_dir / "vocab.json", out_dir / "graph.tsv"]


def _stage_train_structural(config, out_dir):
    vocab = _vocab_from_artifacts(out_dir)
    built = graph.load_graph(out_dir / "graph.tsv", vocab)
    walks = node2vec.generate_walks(built, config.walk_config())
    node2vec.save_walks(out_dir / "walks.txt", walks)
    table = node2vec.train_skipgram(
        walks,
        vocab_size=vocab.size,
        dim=config.get("skipgram", "dim"),
        window=config.get("skipgram", "window"),
        negatives=config.get("skipgram", "negatives"),
        epochs=config.get("skipgram", "epochs"),
        learning_rate=config.get("skipgram", "learning_rate"),
        seed=stage_seed(config.seed, "skipgram"),
        vocab_hash=vocab.content_hash(),
        on_epoch=lambda e, loss: log(f"skip-gram epoch {e}: loss {loss:.4f}"),
    )
    save_embeddings(out_dir / "global.emb", table)
    export_table_tsv(out_dir / "global.tsv", table, vocab)
    return (
        [out_dir / "graph.tsv"],
        [out_dir / "walks.txt", out_dir / "global.emb", out_dir / "global.tsv"],
    )


def _pretrain_corpus(config, out_dir):
    reads, reads_path = _load_reads(config, out_dir)
    excluded = set(config.get("pretrain", "exclude_labels"))
    if excluded:
        before = len(reads)
        reads = [r for r in reads if r.label not in excluded]
        log(f"pretraining corpus: held out {before - len(reads)} reads "
            f"({', '.join(sorted(excluded))})")
    cap = config.get("pretrain", "max_reads")
    if cap and len(reads) > cap:
        rng = np.random.default_rng(stage_seed(config.seed, "pretrain-sample"))
        keep = rng.choice(len(reads), size=cap, replace=False)
        reads = [reads[i] for i in sorted(keep)]
        log(f"pretraining corpus: sampled down to {cap} reads")
    return reads, reads_path


def _stage_pretrain(config, out_dir):
    vocab = _vocab_from_artifacts(out_dir)
    reads, reads_path = _pretrain_corpus(config, out_dir)
    inputs = [reads_path]
    global_table = None
    if not config.get("ablation", "no_global_prior"):
        emb_path = out_dir / "global.emb"
        if not emb_path.exists():
            raise MissingArtifactError(
                "pretrain needs global.emb; run the 'train-structural' stage "
                "first (or set ablation.no_global_prior = true)"
            )
        global_table = load_embeddings(emb_path, expected_vocab_hash=vocab.content_hash())
        inputs.append(emb_path)
    result = mlm.pretrain(
        reads, vocab, config.transformer_config(vocab),
        masking=config.masking_config(),
        schedule=config.pretrain_schedule(),
        global_embeddings=global_table,
        on_epoch=lambda e, loss: log(f"masked-token epoch {e}: loss {loss:.4f}"),
    )
    save_model(out_dir / "model.ckpt", result.model)
    save_embeddings(out_dir / "contextual.emb", result.contextual)
    return inputs, [out_dir / "model.ckpt", out_dir / "contextual.emb"]


def _artifacts_for_mode(config, out_dir, vocab, mode):
    def load_table(name, producer):
        path = out_dir / name
        if not path.exists():
            raise MissingArtifactError(
                f"representation mode {mode.value!r} needs {name}; run the "
                f"{producer!r} stage first"
            )
        return load_embeddings(path, expected_vocab_hash=vocab.content_hash()), path

    arts = embed.Artifacts(vocab=vocab)
    inputs = []
    Mode = embed.RepresentationMode
    if mode in (Mode.GLOBAL, Mode.CONCAT):
        arts.global_table, path = load_table("global.emb", "train-structural")
        inputs.append(path)
    if mode in (Mode.CONTEXTUAL, Mode.CONCAT):
        arts.contextual_table, path = load_table("contextual.emb", "pretrain")
        inputs.append(path)
    if mode is Mode.ENCODER:
        path = out_dir / "model.ckpt"
        if not path.exists():
            raise MissingArtifactError(
                "representation mode 'encoder' needs model.ckpt; run the "
                "'pretrain' stage first"
            )
        arts.model = load_model(path)
        inputs.append(path)
    return arts, inputs


def _stage_embed(config, out_dir):
    vocab = _vocab_from_artifacts(out_dir)
    mode = embed.RepresentationMode.parse(config.get("embed", "representation_mode"))
    arts, inputs = _artifacts_for_mode(config, out_dir, vocab, mode)
    reads, reads_path = _load_reads(config, out_dir)
    skipped = []
    ids, labels, matrix = embed.embed_reads(
        reads, mode, arts, on_skip=lambda read, err: skipped.append(read.id),
    )
    if skipped:
        log(f"skipped {len(skipped)} unembeddable reads")
    embed.save_features(out_dir / "features.bin", ids, labels, matrix)
    embed.export_embeddings_tsv(out_dir / "features.tsv", ids, labels, matrix)
    log(f"embedded {len(ids)} reads into {matrix.shape[1]} dimensions ({mode.value})")
    return (
        inputs + [reads_path],
        [out_dir / "features.bin", out_dir / "features.tsv"],
    )


def _labeled_features(config, out_dir, roles):
    ids, labels, matrix = embed.load_features(out_dir / "features.bin")
    if any(label is None for label in labels):
        raise MissingArtifactError(
            "features.bin lacks labels for some reads; supply paths.labels and "
            "re-run the embed stage"
        )
    assignment = split_reads(ids, config)
    keep = [i for i, rid in enumerate(ids) if assignment[rid] in roles]
    return (
        [ids[i] for i in keep],
        [labels[i] for i in keep],
        matrix[keep],
    )


def _stage_train(config, out_dir):
    train_ids, train_labels, train_matrix = _labeled_features(config, out_dir, ("train",))
    classes = sorted(set(train_labels))
    dataset = classify.LabeledDataset.from_names(train_matrix, train_labels, classes)
    kind = config.get("classifier", "kind").lower()
    seed = stage_seed(config.seed, "classifier")
    if kind == "logreg":
        model = classify.train_logreg(
            dataset,
            l2_penalty=config.get("classifier", "l2_penalty"),
            max_iters=config.get("classifier", "max_iters"),
        )
        if not model.converged:
            log("logreg did not converge; keeping the best iterate")
    elif kind == "mlp":
        model = classify.train_mlp(
            dataset, seed=seed,
            epochs=config.get("classifier", "mlp_epochs"),
            batch_size=config.get("classifier", "mlp_batch_size"),
            learning_rate=config.get("classifier", "mlp_learning_rate"),
            l2_penalty=config.get("classifier", "mlp_l2"),
        )
    else:
        weights = None
        if not config.get("classifier", "weighted"):
            weights = np.ones(len(classes))
        model = classify.train_deep(
            dataset, class_weights=weights, seed=seed,
            epochs=config.get("classifier", "deep_epochs"),
            batch_size=config.get("classifier", "deep_batch_size"),
            warmup_steps=config.get("classifier", "deep_warmup_steps"),
        )
    classify.save_classifier(out_dir / "classifier.ckpt", model)
    log(f"trained {kind} on {len(train_ids)} reads / {len(classes)} classes")
    return [out_dir / "features.bin"], [out_dir / "classifier.ckpt"]


def _stage_evaluate(config, out_dir):
    model = classify.load_classifier(out_dir / "classifier.ckpt")
    test_ids, test_labels, test_matrix = _labeled_features(config, out_dir, ("test",))
    index = {name: i for i, name in enumerate(model.classes)}
    unknown = sorted(set(test_labels) - set(model.classes))
    if unknown:
        raise ConfigError(
            f"test split contains classes the classifier never saw: {unknown}"
        )
    truth = np.array([index[name] for name in test_labels])
    scores = model.scores(test_matrix)
    report = metrics.evaluate(
        scores.argmax(axis=1), truth, classes=model.classes, scores=scores,
    )
    (out_dir / "eval_report.json").write_text(report.to_json())
    (out_dir / "eval_report.txt").write_text(report.to_table())
    outputs = [out_dir / "eval_report.json", out_dir / "eval_report.txt"]
    for name, curve in report.pr_curves.items():
        path = out_dir / f"pr_{name}.csv"
        metrics.save_pr_csv(path, curve["thresholds"], curve["precision"], curve["recall"])
        outputs.append(path)
    log(f"evaluated {len(test_ids)} reads: macro-F1 {report.macro_f1:.4f}")
    return [out_dir / "features.bin", out_dir / "classifier.ckpt"], outputs


def _apply_label_groups(labels, pairs):
    mapping = dict(pair.split("=", 1) for pair in pairs)
    return [mapping.get(label, label) for label in labels]


def _stage_cluster(config, out_dir):
    ids, labels, matrix = embed.load_features(out_dir / "features.bin")
    if any(label is None for label in labels):
        raise MissingArtifactError(
            "clustering needs truth labels to score against; supply paths.labels "
            "and re-run the embed stage"
        )
    labels = _apply_label_groups(labels, config.get("cluster", "label_groups"))
    classes = sorted(set(labels))
    truth = np.array([classes.index(name) for name in labels])
    k = config.get("cluster", "clusters") or len(classes)
    points = matrix
    if config.get("cluster", "normalize"):
        norms = np.linalg.norm(points, axis=1, keepdims=True)
        points = points / np.where(norms == 0, 1.0, norms)
    result = cluster.kmeans(
        points, k, seed=stage_seed(config.seed, "kmeans"),
        max_iters=config.get("cluster", "max_iters"),
    )
    table = cluster.build_contingency(result.assignments, truth, k, len(classes))
    mapping = cluster.hungarian_map(table)
    mapped = cluster.mapped_predictions(result.assignments, mapping)
    report = metrics.evaluate(
        mapped, truth, classes=classes, cluster_mapping=mapping.cluster_to_class,
    )
    accuracy = mapping.agreement / len(ids)
    (out_dir / "cluster_report.json").write_text(report.to_json())
    (out_dir / "cluster_report.txt").write_text(
        report.to_table() + f"mapped accuracy: {accuracy:.4f}\n"
    )
    log(f"clustered {len(ids)} reads into {k} groups: mapped accuracy {accuracy:.4f}")
    return (
        [out_dir / "features.bin"],
        [out_dir / "cluster_report.json", out_dir / "cluster_report.txt"],
    )
