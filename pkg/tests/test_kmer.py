import numpy as np
import pytest

from mg2vec.errors import DomainError
from mg2vec.kmer import KmerVocabulary, tokenize


@pytest.fixture
def vocab4():
    return KmerVocabulary(k=4)


class TestVocabulary:
    def test_sizes(self, vocab4):
        assert vocab4.num_kmers == 256
        assert vocab4.size == 259

    def test_six_symbol_alphabet_size(self):
        vocab = KmerVocabulary(k=4, alphabet="ACGTN-")
        assert vocab.num_kmers == 1296
        assert vocab.size == 1299

    def test_first_and_last_kmer_ids(self, vocab4):
        assert vocab4.token_to_id("AAAA") == 0
        assert vocab4.token_to_id("TTTT") == 255  # 3 * (64 + 16 + 4 + 1)
        assert vocab4.id_to_token(0) == "AAAA"
        assert vocab4.id_to_token(255) == "TTTT"

    def test_special_ids(self, vocab4):
        assert vocab4.pad_id == 256
        assert vocab4.mask_id == 257
        assert vocab4.unk_id == 258
        assert [vocab4.id_to_token(i) for i in (256, 257, 258)] == ["PAD", "MASK", "UNK"]

    def test_roundtrip_every_token(self):
        vocab = KmerVocabulary(k=3)
        for token_id in range(vocab.size):
            token = vocab.id_to_token(token_id)
            assert vocab.token_to_id(token) == token_id

    def test_unknown_token_maps_to_unk(self, vocab4):
        assert vocab4.token_to_id("ACGN") == vocab4.unk_id
        assert vocab4.token_to_id("AC") == vocab4.unk_id

    def test_out_of_range_id_rejected(self, vocab4):
        with pytest.raises(DomainError):
            vocab4.id_to_token(259)
        with pytest.raises(DomainError):
            vocab4.id_to_token(-1)

    def test_manifest_roundtrip(self, tmp_path, vocab4):
        path = tmp_path / "vocab.json"
        vocab4.save_manifest(path)
        again = KmerVocabulary.load_manifest(path)
        assert again == vocab4
        assert again.content_hash() == vocab4.content_hash()

    def test_hash_distinguishes_k_and_alphabet(self):
        hashes = {
            KmerVocabulary(k=3).content_hash(),
            KmerVocabulary(k=4).content_hash(),
            KmerVocabulary(k=4, alphabet="ACGTN-").content_hash(),
        }
        assert len(hashes) == 3


class TestTokenize:
    def test_windowing(self, vocab4):
        ids = tokenize("ACGTA", vocab4)
        assert [vocab4.id_to_token(i) for i in ids] == ["ACGT", "CGTA"]

    def test_short_read_empty(self, vocab4):
        assert tokenize("ACG", vocab4).size == 0

    def test_unknown_symbols_become_unk(self):
        vocab = KmerVocabulary(k=2)
        ids = tokenize("ACNT", vocab).tolist()
        assert ids == [vocab.token_to_id("AC"), vocab.unk_id, vocab.unk_id]

    def test_token_count_formula(self, vocab4):
        rng = np.random.default_rng(0)
        for n in [0, 1, 3, 4, 5, 17, 100]:
            seq = "".join(rng.choice(list("ACGT"), size=n)) if n else ""
            assert tokenize(seq, vocab4).size == max(0, n - 4 + 1)

    def test_stride(self, vocab4):
        seq = "ACGTACGTACGT"
        assert tokenize(seq, vocab4, stride=4).size == 3
        np.testing.assert_array_equal(
            tokenize(seq, vocab4, stride=2), tokenize(seq, vocab4)[::2]
        )

    def test_stride_domain(self, vocab4):
        with pytest.raises(DomainError):
            tokenize("ACGTACGT", vocab4, stride=0)

    def test_matches_scalar_encoding(self, vocab4):
        rng = np.random.default_rng(1)
        seq = "".join(rng.choice(list("ACGTN"), size=64))
        ids = tokenize(seq, vocab4)
        for j, token_id in enumerate(ids):
            assert token_id == vocab4.token_to_id(seq[j:j + 4])
