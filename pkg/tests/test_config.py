"""Config parsing, canonical formatting, and hashing."""

import pytest

from manifoldnorm.config import (
    DEFAULTS,
    config_hash,
    format_config,
    load_config,
    parse_config,
)
from manifoldnorm.errors import ConfigError
from manifoldnorm.geometry import ManifoldKind
from manifoldnorm.normalization import Algorithm, NormKind


class TestParsing:
    def test_empty_text_gives_the_documented_defaults(self):
        cfg = parse_config("")
        assert cfg.manifold_kind is ManifoldKind.SPD_AFFINE
        assert cfg.n == 3
        assert cfg.norm is NormKind.BATCH
        assert cfg.algorithm is Algorithm.HOMOGENEOUS
        assert cfg.dims == (4, 4, 1)
        assert cfg.channels == 4
        assert (cfg.separation, cfg.dispersion) == (2.0, 0.3)
        assert cfg.momentum == 0.1

    def test_comments_blanks_and_spacing_are_ignored(self):
        cfg = parse_config("# a comment\n\n  seed =  9  # trailing\n")
        assert cfg.seed == 9

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError, match="unknown config keys"):
            parse_config("bogus = 1\n")

    def test_duplicate_key_rejected(self):
        with pytest.raises(ConfigError, match="duplicate"):
            parse_config("seed = 1\nseed = 2\n")

    def test_missing_equals_rejected(self):
        with pytest.raises(ConfigError, match="key = value"):
            parse_config("seed 5\n")

    def test_momentum_none_selects_the_counting_schedule(self):
        cfg = parse_config("momentum = none\n")
        assert cfg.momentum is None

    @pytest.mark.parametrize(
        "line",
        [
            "momentum = 1.5",
            "separation = 0",
            "dispersion = -0.1",
            "classes = 1",
            "batch_size = 0",
            "norm = magic",
            "manifold = torus",
            "mean_estimator = fancy",
            "dims = 4x4",
            "arch = conv:2x2x1:s:1x1x1:c:2, trelu",
        ],
    )
    def test_out_of_range_values_rejected(self, line):
        with pytest.raises(ConfigError):
            parse_config(line + "\n")

    def test_lie_algorithm_requires_a_lie_group(self):
        with pytest.raises(ConfigError, match="[Ll]ie"):
            parse_config("manifold = sphere\nalgorithm = lie\n")
        cfg = parse_config("manifold = spd_log_euclidean\nalgorithm = lie\n")
        assert cfg.algorithm is Algorithm.LIE

    def test_group_size_must_divide_the_norm_channels(self):
        with pytest.raises(ConfigError):
            parse_config("norm = group\ngroup_size = 3\n")  # default 4 channels

    def test_overrides_win_over_file_text(self):
        cfg = parse_config("seed = 1\n", overrides={"seed": "42"})
        assert cfg.seed == 42
        with pytest.raises(ConfigError, match="unknown config keys"):
            parse_config("", overrides={"nope": "1"})


class TestArch:
    def test_conv_layer_fields(self):
        cfg = parse_config("arch = conv:3x3x1:s:2x2x1:c:7, fc\n")
        conv = cfg.layers[0]
        assert conv.window == (3, 3, 1)
        assert conv.stride == (2, 2, 1)
        assert conv.channels == 7

    @pytest.mark.parametrize(
        "text",
        [
            "fc, fc",
            "conv:2x2x1:s:1x1x1:c:2",
            "trelu:3, fc",
            "conv:2x2x1:c:2:s:1x1x1, fc",
            "pool, fc",
        ],
    )
    def test_malformed_arch_rejected(self, text):
        with pytest.raises(ConfigError):
            parse_config(f"arch = {text}\n")


class TestCanonicalForm:
    def test_format_parse_roundtrip_is_identity(self):
        cfg = parse_config("norm = group\nseed = 3\nspsa_a = 1.0\n")
        assert parse_config(format_config(cfg)) == cfg

    def test_hash_ignores_presentation(self):
        a = parse_config("seed = 5\nepochs = 2\n")
        b = parse_config("# comment\nepochs  =   2\n\nseed=5\n")
        assert config_hash(a) == config_hash(b)

    def test_hash_distinguishes_settings(self):
        a = parse_config("seed = 5\n")
        b = parse_config("seed = 6\n")
        assert config_hash(a) != config_hash(b)

    def test_every_default_key_appears_in_canonical_text(self):
        text = format_config(parse_config(""))
        keys = {ln.split(" = ")[0] for ln in text.strip().splitlines()}
        assert keys == set(DEFAULTS)

    def test_variant_names(self):
        assert parse_config("norm = none\n").variant_name() == "none"
        assert parse_config("norm = batch\n").variant_name() == "batch"
        assert parse_config("norm = group\ngroup_size = 2\n").variant_name() == "group2"


class TestLoad:
    def test_load_reads_a_file(self, tmp_path):
        p = tmp_path / "exp.cfg"
        p.write_text("seed = 11\n", encoding="utf-8")
        assert load_config(p).seed == 11

    def test_load_applies_overrides(self, tmp_path):
        p = tmp_path / "exp.cfg"
        p.write_text("seed = 11\n", encoding="utf-8")
        assert load_config(p, {"seed": "12"}).seed == 12
