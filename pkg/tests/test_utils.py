import pytest

from fchc.utils import utils


@pytest.mark.parametrize("raw, expected", [("4", 4), ("0", 1), ("-3", 1), ("many", 1)])
def test_worker_count_from_environment(monkeypatch, raw, expected):
    monkeypatch.setenv("FCHC_THREADS", raw)
    assert utils.get_worker_count() == expected


def test_worker_count_defaults_to_one(monkeypatch):
    monkeypatch.delenv("FCHC_THREADS", raising=False)
    assert utils.get_worker_count() == 1


def test_module_exposes_only_logging_and_worker_helpers():
    public = {name for name in vars(utils) if callable(getattr(utils, name)) and not name.startswith("_")}
    assert public >= {"log", "log_verbose", "set_verbose", "get_worker_count"}
    assert "print_iterable_verbose" not in public
