import pytest

from specimpute.config import ConfigError, parse_config


def minimal():
    return {
        "dataset": {"synth": {"features": 2, "length": 200},
                    "window_length": 32, "window_stride": 32},
        "model": {"channels": 8, "blocks": 1, "heads": 2},
        "training": {"epochs": 1, "batch_size": 4},
    }


class TestParsing:
    def test_defaults_fill_in(self):
        cfg = parse_config({})
        assert cfg.schedule.steps == 50
        assert cfg.schedule.beta_start == 1e-4
        assert cfg.schedule.beta_end == 0.5
        assert cfg.training.epochs == 200
        assert cfg.training.batch_size == 16
        assert cfg.model.channels == 64
        assert cfg.model.blocks == 4

    def test_unknown_top_key_rejected(self):
        with pytest.raises(ConfigError, match="unknown keys"):
            parse_config({"modle": {}})

    def test_unknown_nested_key_rejected(self):
        raw = minimal()
        raw["model"]["chanels"] = 9
        with pytest.raises(ConfigError, match="chanels"):
            parse_config(raw)

    def test_invalid_backbone(self):
        raw = minimal()
        raw["model"]["backbone"] = "mlp"
        with pytest.raises(ConfigError):
            parse_config(raw)

    def test_invalid_mask_rate(self):
        raw = minimal()
        raw["mask"] = {"rate": 0.0}
        with pytest.raises(ConfigError):
            parse_config(raw)

    def test_invalid_schedule(self):
        raw = minimal()
        raw["schedule"] = {"beta_start": 0.9, "beta_end": 0.5}
        with pytest.raises(ConfigError):
            parse_config(raw)

    def test_heads_must_divide_channels(self):
        raw = minimal()
        raw["model"].update(channels=10, heads=4)
        with pytest.raises(ConfigError):
            parse_config(raw)

    def test_split_must_leave_test_windows(self):
        raw = minimal()
        raw["dataset"].update(train_fraction=0.9, val_fraction=0.2)
        with pytest.raises(ConfigError):
            parse_config(raw)

    def test_echo_roundtrip(self):
        cfg = parse_config(minimal())
        echo = cfg.to_dict()
        cfg2 = parse_config(echo)
        assert cfg2.to_dict() == echo

    def test_seed_override_touches_all_components(self):
        cfg = parse_config(minimal())
        cfg.override_seed(99)
        assert cfg.training.seed == 99
        assert cfg.mask.seed == 99
        assert cfg.dataset.synth.seed == 99
