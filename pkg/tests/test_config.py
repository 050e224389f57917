"""Config grammar and builder tests."""

import pytest

from ctkd import config as cf


class TestParsing:
    def test_basic_lines(self):
        items = cf.parse_config_text("a.b = 1\nc.d = hello\n")
        assert items == {"a.b": "1", "c.d": "hello"}

    def test_comments_and_blanks(self):
        items = cf.parse_config_text("# top\n\na.b = 1  # trailing\n   \n")
        assert items == {"a.b": "1"}

    def test_later_key_wins(self):
        items = cf.parse_config_text("x = 1\nx = 2\n")
        assert items == {"x": "2"}

    def test_missing_equals_rejected(self):
        with pytest.raises(cf.ConfigError, match="line 2"):
            cf.parse_config_text("a = 1\nnot a pair\n")

    def test_empty_key_rejected(self):
        with pytest.raises(cf.ConfigError, match="empty key"):
            cf.parse_config_text(" = 3\n")


class TestConfigDict:
    def test_typed_takes(self):
        cfg = cf.ConfigDict({"i": "7", "f": "0.5", "b": "true", "l": "1,2,3"})
        assert cfg.take_int("i") == 7
        assert cfg.take_float("f") == 0.5
        assert cfg.take_bool("b") is True
        assert cfg.take_int_list("l") == [1, 2, 3]
        cfg.ensure_consumed()

    def test_defaults(self):
        cfg = cf.ConfigDict({})
        assert cfg.take_int("missing", 4) == 4
        assert cfg.take_bool("missing2", True) is True

    def test_bad_int(self):
        with pytest.raises(cf.ConfigError, match="key i"):
            cf.ConfigDict({"i": "seven"}).take_int("i")

    def test_bad_bool(self):
        with pytest.raises(cf.ConfigError, match="boolean"):
            cf.ConfigDict({"b": "maybe"}).take_bool("b")

    def test_unknown_key_named(self):
        cfg = cf.ConfigDict({"model.vocab_size": "8", "model.vocab_sizee": "9"})
        cfg.take("model.vocab_size")
        with pytest.raises(cf.ConfigError, match="model.vocab_sizee"):
            cfg.ensure_consumed()

    def test_ensure_consumed_scoped_by_prefix(self):
        cfg = cf.ConfigDict({"a.x": "1", "b.y": "2"})
        cfg.take("a.x")
        cfg.ensure_consumed("a.")  # b.y untouched is fine in this namespace
        with pytest.raises(cf.ConfigError, match="b.y"):
            cfg.ensure_consumed()


class TestBuilders:
    def test_model_config_from_keys(self):
        cfg = cf.ConfigDict(
            {
                "model.vocab_size": "12",
                "model.input_dim": "20",
                "model.encoder.num_layers": "3",
                "model.encoder.model_dim": "24",
                "model.encoder.pooling_layers": "1",
            }
        )
        mc = cf.build_model_config(cfg)
        assert mc.vocab_size == 12
        assert mc.encoder.num_layers == 3
        assert mc.encoder.model_dim == 24

    def test_model_config_typo_rejected(self):
        cfg = cf.ConfigDict({"model.encoder.num_layer": "3"})
        with pytest.raises(cf.ConfigError, match="model.encoder.num_layer"):
            cf.build_model_config(cfg)

    def test_invalid_model_value_rejected(self):
        cfg = cf.ConfigDict({"model.encoder.conv_kernel": "4"})
        with pytest.raises(cf.ConfigError, match="conv_kernel"):
            cf.build_model_config(cfg)

    def test_train_config_defaults_and_overrides(self):
        cfg = cf.ConfigDict({"train.epochs": "3", "train.schedule.base_lr": "0.01"})
        tc = cf.build_train_config(cfg)
        assert tc.epochs == 3
        assert tc.schedule.base_lr == 0.01
        assert tc.schedule.warmup == 500
        assert tc.mode == "scratch"

    def test_train_distill_requires_teacher(self):
        cfg = cf.ConfigDict({"train.mode": "distill"})
        with pytest.raises(cf.ConfigError, match="teacher"):
            cf.build_train_config(cfg)

    def test_toy_corpus_spec(self):
        cfg = cf.ConfigDict({"corpus.vocab_size": "6", "corpus.num_utterances": "11", "corpus.test_utterances": "5"})
        spec = cf.build_toy_corpus_spec(cfg)
        assert spec.vocab_size == 6
        assert spec.num_utterances == 11
        cfg.ensure_consumed()

    def test_overrides_beat_file(self, tmp_path):
        path = tmp_path / "c.cfg"
        path.write_text("train.epochs = 2\n")
        cfg = cf.load_config(str(path), ["train.epochs=9"])
        assert cfg.take_int("train.epochs") == 9

    def test_bad_override(self):
        with pytest.raises(cf.ConfigError, match="key=value"):
            cf.load_config(None, ["no_equals_sign"])

    def test_missing_file(self):
        with pytest.raises(cf.ConfigError, match="cannot read"):
            cf.load_config("/nonexistent/path.cfg")


class TestMergedView:
    def test_override_prefix_wins(self):
        cfg = cf.ConfigDict(
            {"train.epochs": "4", "train.seed": "1", "stage.2.train.epochs": "9"}
        )
        merged = cf.merged_view(cfg, "train.", "stage.2.train.", "train.")
        assert merged.take_int("train.epochs") == 9
        assert merged.take_int("train.seed") == 1
        cfg.ensure_consumed()
