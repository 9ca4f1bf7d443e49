import pytest


def pytest_addoption(parser):
    parser.addoption("--long", action="store_true", default=False,
                     help="run the hours-long variance scaling study")


def pytest_configure(config):
    config.addinivalue_line(
        "markers", "long: hours-long scaling runs, enabled with --long")
    config.addinivalue_line(
        "markers", "slow: minutes-long checks; run by default, deselect "
                   "with -m 'not slow'")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--long"):
        return
    skip = pytest.mark.skip(reason="pass --long to run the scaling study")
    for item in items:
        if "long" in item.keywords:
            item.add_marker(skip)
