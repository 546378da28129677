import configparser

import pytest

from rdaudit import config


def test_defaults():
    assert config.load() == config.DEFAULTS
    assert config.DEFAULTS["lambda_bits"] == 40 and config.DEFAULTS["challenge_size"] == 10


def test_parse_and_precedence(tmp_path):
    (tmp_path / config.CONFIG_NAME).write_text('# tuned\nsectors = 4\nsuite = "transparent-mersenne61"\n'
                                               "challenge_size=25\n")
    cfg = config.load(store=tmp_path)
    assert cfg["sectors"] == 4 and cfg["challenge_size"] == 25 and cfg["lambda_bits"] == 40
    assert config.resolve(cfg, sectors=2, lambda_bits=None)["sectors"] == 2
    other = tmp_path / "other.conf"
    other.write_text("sectors=3\n")
    assert config.load(other, tmp_path)["sectors"] == 3


def test_bad_config():
    with pytest.raises(ValueError):
        config.parse("colour=blue\n")
    with pytest.raises(ValueError):
        config.parse("sectors=four\n")
    with pytest.raises(configparser.Error):
        config.parse("just a line\n")
