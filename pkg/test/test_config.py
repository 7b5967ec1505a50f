"""Tests for configuration files, the operator cache and run logs."""

import numpy as np
import pytest

import cache
from errors import ConfigError, DatasetError
from fields import DESCRIPTION, defaults, help_text
from parse_config import parse_config, parse_config_text, serialize_config
from run_log import EvalLogger, TrainLogger


class TestParseConfig:
    def test_defaults_filled_in(self):
        values = parse_config_text("# only a comment\n\nhorizon = 32  # short windows\n")
        assert values["horizon"] == 32
        assert values["wavelet"] == "haar"
        assert set(values) == set(DESCRIPTION)

    @pytest.mark.parametrize(
        "text, value",
        [("clamp_first_state = False", False), ("clamp_first_state = yes", True), ("literal_update = 1", True)],
    )
    def test_booleans(self, text, value):
        key = text.split("=")[0].strip()
        assert parse_config_text(text)[key] is value

    @pytest.mark.parametrize(
        "text, line",
        [
            ("horizon = 8\nbogus = 1\n", 2),
            ("horizon 8\n", 1),
            ("\n\nhorizon = eight\n", 3),
            ("horizon = 8\nhorizon = 16\n", 2),
            ("literal_update = maybe\n", 1),
        ],
    )
    def test_errors_carry_line(self, text, line):
        with pytest.raises(ConfigError) as info:
            parse_config_text(text)
        assert info.value.line == line
        assert str(info.value).startswith("line %d:" % line)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            parse_config(str(tmp_path / "none.cfg"))

    def test_serialize_is_canonical(self):
        values = defaults()
        text = serialize_config(dict(reversed(list(values.items())), extra="ignored"))
        assert text == serialize_config(values)
        assert "extra" not in text
        assert parse_config_text(text) == values

    def test_help_lists_every_key(self):
        text = help_text()
        assert all(key in text for key in DESCRIPTION)


class TestCache:
    def test_builds_once(self):
        calls = []

        def build(n):
            calls.append(n)
            return np.eye(n)

        first = cache.cached("test-eye", build, 3)
        second = cache.cached("test-eye", build, 3)
        assert first is second
        assert calls == [3]
        with pytest.raises(ValueError):
            first[0, 0] = 2.0

    def test_signature_and_clear(self):
        assert cache.get_signature("shift", 2, 8, -1) == "shift:2:8:-1"
        cache.store("test-value", np.zeros(2))
        assert cache.get("test-value") is not None
        cache.clear()
        assert cache.get("test-value") is None
        assert cache.get("") is None


class TestRunLog:
    def test_train_logger(self, tmp_path):
        progress, errors = str(tmp_path / "train.log"), str(tmp_path / "errors.log")
        with TrainLogger(progress, errors, timestamps=False) as run_logger:
            run_logger.log({"epoch": 1, "model_loss": 0.123456789, "model_ratio": None})
            run_logger.log("train", error="boom")
        with open(progress, encoding="utf-8") as f_log:
            assert f_log.read() == "OK  epoch=1 model_loss=0.123457 model_ratio=None\n"
        with open(errors, encoding="utf-8") as f_log:
            assert f_log.read() == "ERR train boom\n"

    def test_eval_logger(self, tmp_path):
        progress, errors = str(tmp_path / "eval.log"), str(tmp_path / "errors.log")
        with EvalLogger(progress, errors, timestamps=False) as eval_logger:
            eval_logger.log({"seed": 3, "returns": [-1.5, -2.0], "ignored": True})
        with open(progress, encoding="utf-8") as f_log:
            assert f_log.read() == "OK  seed=3 returns=-1.5,-2\n"


def test_error_without_line():
    assert str(DatasetError("broken")) == "broken"
    assert str(DatasetError("broken", line=4)) == "line 4: broken"
