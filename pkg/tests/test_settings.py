import pytest

import settings
from errors import SettingError


def test_default_when_unset(monkeypatch):
    monkeypatch.delenv("KKM_TOLERANCE", raising=False)
    assert settings.get_float_setting("KKM_TOLERANCE", 1e-7) == 1e-7


def test_env_override(monkeypatch):
    monkeypatch.setenv("KKM_BUDGET", "12")
    monkeypatch.setenv("KKM_TOLERANCE", "1e-9")
    assert settings.get_int_setting("KKM_BUDGET", 40) == 12
    assert settings.get_float_setting("KKM_TOLERANCE", 1e-7) == 1e-9


@pytest.mark.parametrize("raw", ["abc", "-1", "0"])
def test_bad_values(monkeypatch, raw):
    monkeypatch.setenv("KKM_BUDGET", raw)
    with pytest.raises(SettingError):
        settings.get_int_setting("KKM_BUDGET", 40)
    monkeypatch.setenv("KKM_TOLERANCE", raw)
    with pytest.raises(SettingError):
        settings.get_float_setting("KKM_TOLERANCE", 1e-7)


def test_log_level(monkeypatch):
    monkeypatch.setenv("LOG_LEVEL", "debug")
    assert settings.get_log_level() == "DEBUG"


def test_templates():
    assert "{command}" in settings.load_template("summary")
    with pytest.raises(FileNotFoundError):
        settings.load_template("no_such_template")
