import pytest
from hypothesis import given
from hypothesis import strategies as st

from sirstlab import config as C
from sirstlab.errors import ConfigError


class TestParse:
    @pytest.mark.parametrize("text, value", [
        ("true", True), ("False", False), ("none", None), ("", None),
        ("7", 7), ("-2", -2), ("0.05", 0.05), ("1e-3", 1e-3), ("instance", "instance"),
        ("8,16,32", (8, 16, 32)), ("3,", (3,)), ("0.2, 0.5", (0.2, 0.5)),
        ("1:0.5,2:0.5", {1: 0.5, 2: 0.5}), ("/data/run:1", "/data/run:1"),
    ])
    def test_values(self, text, value):
        assert C.parse_value(text) == value

    @given(st.one_of(st.booleans(), st.none(), st.integers(-10 ** 6, 10 ** 6),
                     st.floats(allow_nan=False, allow_infinity=False),
                     st.lists(st.integers(0, 999), min_size=1, max_size=5).map(tuple),
                     st.dictionaries(st.integers(1, 9), st.floats(0, 1), min_size=1, max_size=4)))
    def test_format_round_trip(self, v):
        assert C.parse_value(C.format_value(v)) == v

    def test_override(self):
        assert C.parse_override("net.variant = no_dnim") == ("net.variant", "no_dnim")
        with pytest.raises(ConfigError):
            C.parse_override("net.variant")

    def test_load_kv(self, tmp_path):
        p = tmp_path / "c.txt"
        p.write_text("# comment\nseed = 4\nnet.channels = 4,8,16  # trailing\n\n")
        assert C.load_kv(p) == {"seed": 4, "net.channels": (4, 8, 16)}
        p.write_text("seed 4\n")
        with pytest.raises(ConfigError):
            C.load_kv(p)


class TestRunConfig:
    def test_defaults(self):
        cfg = C.RunConfig.resolve()
        assert cfg.seed == 0
        assert cfg.network_spec().depth == 4 and cfg.synth_config().image_size == 256
        assert cfg.metric("d_thresh") == 3.0 and cfg.metric("threshold") == 0.5

    def test_toy_preset(self):
        cfg = C.RunConfig.resolve(overrides={"preset": "toy"})
        spec, tc, sc = cfg.network_spec(), cfg.train_config(), cfg.synth_config()
        assert spec.depth == 3 and spec.channels == (8, 16, 32, 64)
        assert spec.fpfm_layers == (0, 1, 2, 3)
        assert (tc.learning_rate, tc.batch_size, tc.max_steps) == (0.05, 8, 500)
        assert sc.image_size == 64 and sc.scr_values == (3.0, 5.0)
        assert cfg.synth_settings() == {"n": 250, "n_test": 50}

    def test_seed_propagates(self):
        cfg = C.RunConfig.resolve(overrides={"seed": 9})
        assert cfg.network_spec().seed == cfg.train_config().seed == cfg.synth_config().seed == 9

    def test_section_seed_wins(self):
        cfg = C.RunConfig.resolve(overrides={"seed": 9, "train.seed": 2})
        assert cfg.train_config().seed == 2 and cfg.network_spec().seed == 9

    def test_depth_only_derives_channels(self):
        spec = C.RunConfig.resolve(overrides={"net.depth": 2}).network_spec()
        assert spec.channels == (16, 32, 64) and spec.fpfm_layers == (0, 1, 2)

    def test_fpfm_preset(self):
        spec = C.RunConfig.resolve(overrides={"net.fpfm_preset": "no_fpfm"}).network_spec()
        assert spec.fpfm_layers == (0,)

    def test_scalar_to_tuple(self):
        assert C.RunConfig.resolve(overrides={"synth.scr_values": 3}).synth_config().scr_values == (3.0,)

    def test_file_then_override(self, tmp_path):
        p = tmp_path / "c.txt"
        p.write_text("preset = toy\nseed = 3\nnet.variant = no_dnim\n")
        cfg = C.RunConfig.resolve(p, {"net.variant": "left_to_right"})
        assert cfg.seed == 3 and cfg.network_spec().variant == "left_to_right"
        assert cfg.synth_config().image_size == 64

    def test_to_kv_round_trip(self, tmp_path):
        cfg = C.RunConfig.resolve(overrides={"preset": "toy", "seed": 5, "synth.scr_values": (3, 5)})
        p = tmp_path / "c.txt"
        p.write_text(cfg.to_kv())
        again = C.RunConfig.resolve(p)
        assert again.values == cfg.values
        assert again.network_spec() == cfg.network_spec()
        assert again.synth_config() == cfg.synth_config()

    @pytest.mark.parametrize("over", [
        {"preset": "huge"}, {"bogus": 1}, {"net.colour": 1}, {"net.variant": "tiny"},
        {"train.learning_rate": -1}, {"synth.image_size": 0}, {"metrics.nope": 1},
        {"baseline.tophat_structure": 4},
    ])
    def test_invalid(self, over):
        with pytest.raises(ConfigError):
            cfg = C.RunConfig.resolve(overrides=over)
            cfg.metric("d_thresh")
