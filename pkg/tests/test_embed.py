import numpy as np
import pytest

from mg2vec.embed import (
    Artifacts,
    RepresentationMode,
    embed_read,
    embed_reads,
    export_embeddings_tsv,
    feature_dim,
    kmer_vector,
    load_features,
    save_features,
)
from mg2vec.embeddings import EmbeddingTable
from mg2vec.errors import ConfigError, UnembeddableReadError
from mg2vec.kmer import KmerVocabulary
from mg2vec.mlm import PretrainSchedule, pretrain
from mg2vec.seqio import ReadRecord
from mg2vec.transformer import TransformerConfig, TransformerModel


@pytest.fixture
def vocab():
    return KmerVocabulary(k=2)


@pytest.fixture
def artifacts(vocab):
    rng = np.random.default_rng(3)
    return Artifacts(
        vocab=vocab,
        global_table=EmbeddingTable(rng.normal(size=(vocab.size, 6))),
        contextual_table=EmbeddingTable(rng.normal(size=(vocab.size, 4))),
        model=TransformerModel(TransformerConfig(
            vocab_size=vocab.size, pad_id=vocab.pad_id, num_layers=1,
            num_heads=2, model_dim=8, ff_dim=16, dropout=0.0, max_tokens=16,
        )),
    )


class TestKmerVector:
    def test_concat_layout(self, artifacts):
        token = artifacts.vocab.token_to_id("AC")
        global_vec = kmer_vector(token, RepresentationMode.GLOBAL, artifacts)
        ctx_vec = kmer_vector(token, RepresentationMode.CONTEXTUAL, artifacts)
        concat = kmer_vector(token, RepresentationMode.CONCAT, artifacts)
        assert concat.shape[0] == global_vec.shape[0] + ctx_vec.shape[0]
        np.testing.assert_array_equal(concat[: global_vec.shape[0]], global_vec)
        np.testing.assert_array_equal(concat[global_vec.shape[0]:], ctx_vec)

    def test_missing_artifact_rejected(self, vocab):
        bare = Artifacts(vocab=vocab)
        with pytest.raises(ConfigError):
            kmer_vector(0, RepresentationMode.GLOBAL, bare)

    def test_encoder_mode_needs_window(self, artifacts):
        with pytest.raises(ConfigError):
            kmer_vector(0, RepresentationMode.ENCODER, artifacts)
        window = np.array([1, 2, 3])
        vec = kmer_vector(2, RepresentationMode.ENCODER, artifacts,
                          window_ids=window, position=1)
        assert vec.shape == (8,)

    def test_contextual_equals_global_without_pretraining(self, vocab):
        table = EmbeddingTable(
            np.random.default_rng(0).normal(size=(vocab.size, 8)),
            vocab_hash=vocab.content_hash(),
        )
        config = TransformerConfig(
            vocab_size=vocab.size, pad_id=vocab.pad_id, num_layers=1,
            num_heads=2, model_dim=8, ff_dim=16, max_tokens=16,
        )
        result = pretrain(["ACGTACGT"], vocab, config,
                          schedule=PretrainSchedule(epochs=0),
                          global_embeddings=table)
        arts = Artifacts(vocab=vocab, global_table=table,
                         contextual_table=result.contextual)
        for token in (0, 5, vocab.token_to_id("GT")):
            np.testing.assert_array_equal(
                kmer_vector(token, RepresentationMode.GLOBAL, arts),
                kmer_vector(token, RepresentationMode.CONTEXTUAL, arts),
            )


class TestEmbedRead:
    def test_repeated_kmer_read_equals_that_vector(self, artifacts):
        token = artifacts.vocab.token_to_id("AA")
        vec = embed_read("AAAA", RepresentationMode.GLOBAL, artifacts)
        np.testing.assert_allclose(
            vec, artifacts.global_table.vectors[token], atol=1e-12
        )

    def test_two_token_mean(self, artifacts):
        vocab = artifacts.vocab
        u = artifacts.global_table.vectors[vocab.token_to_id("AC")]
        v = artifacts.global_table.vectors[vocab.token_to_id("CG")]
        vec = embed_read("ACG", RepresentationMode.GLOBAL, artifacts)
        np.testing.assert_allclose(vec, (u + v) / 2, atol=1e-12)

    def test_short_read_unembeddable(self, artifacts):
        with pytest.raises(UnembeddableReadError):
            embed_read("A", RepresentationMode.GLOBAL, artifacts)

    def test_all_unk_read_unembeddable(self, artifacts):
        with pytest.raises(UnembeddableReadError):
            embed_read("NNNNN", RepresentationMode.GLOBAL, artifacts)

    def test_unk_excluded_from_mean(self, artifacts):
        clean = embed_read("ACG", RepresentationMode.GLOBAL, artifacts)
        noisy = embed_read("ACGN", RepresentationMode.GLOBAL, artifacts)
        np.testing.assert_allclose(clean, noisy, atol=1e-12)

    def test_permutation_invariance(self, artifacts):
        # both reads tokenize to the multiset {AC, AC, CA, CA}
        a = embed_read("ACACA", RepresentationMode.CONCAT, artifacts)
        b = embed_read("CACAC", RepresentationMode.CONCAT, artifacts)
        np.testing.assert_allclose(a, b, atol=1e-12)
        vocab = artifacts.vocab
        table = np.hstack([artifacts.global_table.vectors,
                           artifacts.contextual_table.vectors])
        mean = np.mean([table[vocab.token_to_id(t)] for t in ("AC", "CA")], axis=0)
        np.testing.assert_allclose(a, mean, atol=1e-12)

    def test_encoder_mode_pools_hidden_states(self, artifacts):
        vec = embed_read("ACGTAC", RepresentationMode.ENCODER, artifacts)
        assert vec.shape == (artifacts.model.config.model_dim,)

    def test_concat_cosine_blends_part_dot_products(self, artifacts):
        r1 = "ACGTAC"
        r2 = "GGTTAA"
        g1 = embed_read(r1, RepresentationMode.GLOBAL, artifacts)
        g2 = embed_read(r2, RepresentationMode.GLOBAL, artifacts)
        c1 = embed_read(r1, RepresentationMode.CONTEXTUAL, artifacts)
        c2 = embed_read(r2, RepresentationMode.CONTEXTUAL, artifacts)
        m1 = embed_read(r1, RepresentationMode.CONCAT, artifacts)
        m2 = embed_read(r2, RepresentationMode.CONCAT, artifacts)
        expected = (g1 @ g2 + c1 @ c2) / (np.linalg.norm(m1) * np.linalg.norm(m2))
        assert m1 @ m2 / (np.linalg.norm(m1) * np.linalg.norm(m2)) == pytest.approx(expected)


class TestExport:
    def make_reads(self):
        return [
            ReadRecord(id="r1", sequence="ACGTAC", label="host"),
            ReadRecord(id="r2", sequence="A", label="sp01"),  # unembeddable
            ReadRecord(id="r3", sequence="GGTTAA", label=None),
        ]

    def test_row_count_equals_embeddable_reads(self, artifacts, tmp_path):
        skipped = []
        ids, labels, matrix = embed_reads(
            self.make_reads(), RepresentationMode.GLOBAL, artifacts,
            on_skip=lambda read, err: skipped.append(read.id),
        )
        assert ids == ["r1", "r3"]
        assert skipped == ["r2"]
        assert matrix.shape == (2, feature_dim(RepresentationMode.GLOBAL, artifacts))
        path = tmp_path / "features.tsv"
        export_embeddings_tsv(path, ids, labels, matrix)
        assert len(path.read_text().splitlines()) == 2

    def test_modes_share_ids_but_not_dims(self, artifacts):
        reads = self.make_reads()
        ids_g, _, mat_g = embed_reads(reads, RepresentationMode.GLOBAL, artifacts)
        ids_m, _, mat_m = embed_reads(reads, RepresentationMode.CONCAT, artifacts)
        assert ids_g == ids_m
        assert mat_m.shape[1] == mat_g.shape[1] + artifacts.contextual_table.dim

    def test_reexport_byte_identical(self, artifacts, tmp_path):
        reads = self.make_reads()
        ids, labels, matrix = embed_reads(reads, RepresentationMode.CONCAT, artifacts)
        p1, p2 = tmp_path / "a.tsv", tmp_path / "b.tsv"
        export_embeddings_tsv(p1, ids, labels, matrix)
        export_embeddings_tsv(p2, ids, labels, matrix)
        assert p1.read_bytes() == p2.read_bytes()

    def test_binary_features_roundtrip(self, artifacts, tmp_path):
        reads = self.make_reads()
        ids, labels, matrix = embed_reads(reads, RepresentationMode.CONCAT, artifacts)
        path = tmp_path / "features.bin"
        save_features(path, ids, labels, matrix)
        ids2, labels2, matrix2 = load_features(path)
        assert ids2 == ids and labels2 == labels
        np.testing.assert_array_equal(matrix, matrix2)


def test_mode_parsing():
    assert RepresentationMode.parse("CONCAT") is RepresentationMode.CONCAT
    with pytest.raises(ConfigError):
        RepresentationMode.parse("bogus")
