import math

import numpy as np
import pytest

from oracles import brute_edge_weight, brute_kmer_pairs

from mg2vec.errors import DeadEndError, DomainError, EmptyGraphError, ValidationError
from mg2vec.graph import (
    KmerGraph,
    WeightParams,
    build_graph,
    count_transitions,
    from_counts,
    load_graph,
    merge_counts,
    save_graph,
    transition_distribution,
    update_weight,
    weight_from_count,
)
from mg2vec.kmer import KmerVocabulary


class TestUpdateWeight:
    def test_first_repeat_observation(self):
        assert update_weight(1.0, 1.0) == pytest.approx(3.0)

    def test_moderate_ratio(self):
        assert update_weight(3.0, 1.0) == pytest.approx(3.5)

    def test_large_ratio_engages_sqrt(self):
        assert update_weight(4.0, 3.0) == pytest.approx(2 * math.sqrt(3) + 4)

    def test_rejects_non_positive(self):
        with pytest.raises(DomainError):
            update_weight(0.0, 1.0)
        with pytest.raises(DomainError):
            update_weight(1.0, -2.0)


class TestWeightFromCount:
    def test_first_three_counts(self):
        assert weight_from_count(1) == 1.0
        assert weight_from_count(2) == pytest.approx(3.0)
        assert weight_from_count(3) == pytest.approx(3.5)

    def test_converges_to_fixed_point(self):
        assert abs(weight_from_count(50) - (2 + math.sqrt(2))) < 1e-4

    def test_monotone_then_saturating(self):
        values = [weight_from_count(n) for n in range(1, 30)]
        assert values[0] < values[1] < values[2]
        assert max(values) <= 2 + math.sqrt(2) + 0.1

    def test_raw_count_mode(self):
        params = WeightParams(raw_counts=True)
        assert [weight_from_count(n, params) for n in (1, 2, 7)] == [1.0, 2.0, 7.0]

    def test_rejects_zero(self):
        with pytest.raises(DomainError):
            weight_from_count(0)


@pytest.fixture
def vocab2():
    return KmerVocabulary(k=2)


class TestBuildGraph:
    def test_single_read_unit_edges(self, vocab2):
        g = build_graph(["ACGT"], vocab2)
        ids = {vocab2.id_to_token(int(t)) for t in g.node_ids}
        assert ids == {"AC", "CG", "GT"}
        assert g.num_edges == 2
        assert g.edge_count(vocab2.token_to_id("AC"), vocab2.token_to_id("CG")) == 1
        np.testing.assert_allclose(g.weights, [1.0, 1.0])

    def test_repeat_read_weight(self, vocab2):
        g = build_graph(["ACGT", "ACGT"], vocab2)
        assert g.num_edges == 2
        assert set(g.counts.tolist()) == {2}
        np.testing.assert_allclose(g.weights, [3.0, 3.0])

    def test_degenerate_corpus_errors(self):
        with pytest.raises(EmptyGraphError):
            build_graph(["AC"], KmerVocabulary(k=4))

    def test_unk_severs_adjacency(self, vocab2):
        # read 1 tokens: AC, UNK, UNK, GT, TC -> only edge GT->TC survives
        g = build_graph(["ACNGTC", "ACAC"], vocab2)
        assert vocab2.unk_id not in g.node_ids
        assert g.edge_count(vocab2.token_to_id("AC"), vocab2.token_to_id("GT")) == 0
        assert g.edge_count(vocab2.token_to_id("GT"), vocab2.token_to_id("TC")) == 1

    def test_order_invariance(self, vocab2):
        rng = np.random.default_rng(0)
        reads = ["".join(rng.choice(list("ACGT"), size=12)) for _ in range(20)]
        g1 = build_graph(reads, vocab2)
        g2 = build_graph(reads[::-1], vocab2)
        np.testing.assert_array_equal(g1.node_ids, g2.node_ids)
        np.testing.assert_array_equal(g1.counts, g2.counts)
        np.testing.assert_array_equal(g1.weights, g2.weights)

    def test_shard_merge_equivalence(self, vocab2):
        rng = np.random.default_rng(1)
        reads = ["".join(rng.choice(list("ACGT"), size=15)) for _ in range(30)]
        whole = build_graph(reads, vocab2)
        shards = [count_transitions(reads[:10], vocab2),
                  count_transitions(reads[10:25], vocab2),
                  count_transitions(reads[25:], vocab2)]
        merged = from_counts(*merge_counts(*shards), vocab2)
        np.testing.assert_array_equal(whole.node_ids, merged.node_ids)
        np.testing.assert_array_equal(whole.nbrs, merged.nbrs)
        np.testing.assert_array_equal(whole.counts, merged.counts)
        np.testing.assert_array_equal(whole.weights, merged.weights)

    def test_matches_bruteforce_oracle(self, vocab2):
        rng = np.random.default_rng(2)
        for trial in range(20):
            k = int(rng.integers(2, 5))
            vocab = KmerVocabulary(k=k)
            n_reads = int(rng.integers(1, 11))
            reads = [
                "".join(rng.choice(list("ACGTN"), size=rng.integers(k + 1, 21),
                                   p=[0.23, 0.23, 0.23, 0.23, 0.08]))
                for _ in range(n_reads)
            ]
            expected = brute_kmer_pairs(reads, k)
            if not expected:
                continue
            g = build_graph(reads, vocab)
            got = {}
            for i in range(g.num_nodes):
                src = vocab.id_to_token(int(g.node_ids[i]))
                for e in range(g.indptr[i], g.indptr[i + 1]):
                    dst = vocab.id_to_token(int(g.node_ids[g.nbrs[e]]))
                    got[(src, dst)] = int(g.counts[e])
            assert got == expected
            for i in range(g.num_nodes):
                for e in range(g.indptr[i], g.indptr[i + 1]):
                    assert g.weights[e] == brute_edge_weight(int(g.counts[e]))

    def test_no_isolated_nodes(self, vocab2):
        g = build_graph(["ACGTAC", "GGGG"], vocab2)
        degree = np.zeros(g.num_nodes, dtype=int)
        degree += np.diff(g.indptr)
        np.add.at(degree, g.nbrs, 1)
        assert (degree >= 1).all()


class TestTransitionDistribution:
    def test_normalization(self, vocab2):
        g = build_graph(["ACA", "ACG", "ACG", "ACG"], vocab2)
        dst, probs = transition_distribution(g, vocab2.token_to_id("AC"))
        assert probs.sum() == pytest.approx(1.0, abs=1e-9)
        by_token = {vocab2.id_to_token(int(t)): p for t, p in zip(dst, probs)}
        # CG seen 3 times (weight 3.5), CA once (weight 1.0)
        assert by_token["CG"] == pytest.approx(3.5 / 4.5)
        assert by_token["CA"] == pytest.approx(1.0 / 4.5)

    def test_singleton(self, vocab2):
        g = build_graph(["ACG"], vocab2)
        _, probs = transition_distribution(g, vocab2.token_to_id("AC"))
        assert probs.tolist() == [1.0]

    def test_uniform_on_equal_weights(self, vocab2):
        g = build_graph(["ACA", "ACC", "ACG", "ACT"], vocab2)
        _, probs = transition_distribution(g, vocab2.token_to_id("AC"))
        np.testing.assert_allclose(probs, 0.25)

    def test_dead_end_signalled(self, vocab2):
        g = build_graph(["ACG"], vocab2)
        with pytest.raises(DeadEndError):
            transition_distribution(g, vocab2.token_to_id("CG"))


class TestGraphIO:
    def test_roundtrip_counts_and_weights(self, tmp_path, vocab2):
        g = build_graph(["ACGTACGT", "ACGT"], vocab2)
        path = tmp_path / "graph.tsv"
        save_graph(path, g)
        g2 = load_graph(path, vocab2)
        np.testing.assert_array_equal(g.node_ids, g2.node_ids)
        np.testing.assert_array_equal(g.counts, g2.counts)
        np.testing.assert_array_equal(g.weights, g2.weights)

    def test_save_is_deterministic(self, tmp_path, vocab2):
        g = build_graph(["ACGTACGT", "ACGT"], vocab2)
        p1, p2 = tmp_path / "a.tsv", tmp_path / "b.tsv"
        save_graph(p1, g)
        save_graph(p2, load_graph(p1, vocab2))
        assert p1.read_bytes() == p2.read_bytes()

    def test_wrong_vocabulary_rejected(self, tmp_path, vocab2):
        g = build_graph(["ACGT"], vocab2)
        path = tmp_path / "graph.tsv"
        save_graph(path, g)
        with pytest.raises(ValidationError):
            load_graph(path, KmerVocabulary(k=3))
