import pytest

from mg2vec.config import default_config, describe_defaults, load_config, stage_seed
from mg2vec.errors import ConfigError


def write_config(tmp_path, text):
    path = tmp_path / "run.ini"
    path.write_text(text)
    return path


class TestLoadConfig:
    def test_minimal_config_gets_documented_defaults(self, tmp_path):
        path = write_config(tmp_path, "[pipeline]\nout = artifacts\n")
        config = load_config(path)
        assert config.get("kmer", "k") == 4
        assert config.get("walks", "walks_per_node") == 10
        assert config.get("walks", "walk_length") == 80
        assert config.get("transformer", "num_layers") == 4
        assert config.get("transformer", "num_heads") == 8
        assert config.get("transformer", "dropout") == 0.1
        assert config.get("masking", "mask_ratio") == 0.15

    def test_unknown_key_suggests_correction(self, tmp_path):
        path = write_config(tmp_path, "[walks]\nwalklen = 40\n")
        with pytest.raises(ConfigError, match="walk_length"):
            load_config(path)

    def test_unknown_section_rejected(self, tmp_path):
        path = write_config(tmp_path, "[walkz]\np = 1\n")
        with pytest.raises(ConfigError, match=r"unknown section"):
            load_config(path)

    def test_alternate_k_values_accepted(self, tmp_path):
        for k in (3, 6):
            path = write_config(tmp_path, f"[kmer]\nk = {k}\n")
            assert load_config(path).get("kmer", "k") == k

    def test_type_errors_reported(self, tmp_path):
        path = write_config(tmp_path, "[kmer]\nk = four\n")
        with pytest.raises(ConfigError, match="bad value"):
            load_config(path)

    def test_bool_and_list_parsing(self, tmp_path):
        path = write_config(
            tmp_path,
            "[ablation]\nraw_count_weights = true\n"
            "[simulate]\nmutation_rates = 0.1, 0.2\nabundance = 0.5,0.3,0.2\n"
            "num_species = 2\n",
        )
        config = load_config(path)
        assert config.get("ablation", "raw_count_weights") is True
        assert config.get("simulate", "mutation_rates") == [0.1, 0.2]

    def test_overrides_win(self, tmp_path):
        path = write_config(tmp_path, "[pipeline]\nseed = 5\n")
        config = load_config(path, overrides={("pipeline", "seed"): 9})
        assert config.seed == 9

    def test_missing_file_rejected(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(tmp_path / "absent.ini")

    def test_bad_mode_rejected(self, tmp_path):
        path = write_config(tmp_path, "[embed]\nrepresentation_mode = fancy\n")
        with pytest.raises(ConfigError):
            load_config(path)

    def test_config_hash_tracks_values(self, tmp_path):
        a = load_config(write_config(tmp_path, "[kmer]\nk = 4\n"))
        b = load_config(write_config(tmp_path, "[kmer]\nk = 3\n"))
        assert a.config_hash() != b.config_hash()
        assert a.config_hash() == default_config().config_hash()


class TestSeeds:
    def test_stage_seeds_differ_and_are_stable(self):
        seeds = {stage_seed(7, name) for name in ("walks", "skipgram", "masking")}
        assert len(seeds) == 3
        assert stage_seed(7, "walks") == stage_seed(7, "walks")
        assert stage_seed(7, "walks") != stage_seed(8, "walks")


def test_describe_defaults_covers_schema():
    text = describe_defaults()
    for section in ("paths", "kmer", "walks", "transformer", "ablation"):
        assert f"[{section}]" in text
    assert "walk_length" in text
