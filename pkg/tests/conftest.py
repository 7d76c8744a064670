from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from gzsl.fonts import FontsConfig, generate_dataset, plan_split, save_split

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

SMALL_FONTS = FontsConfig(letters="ABCD", font_colors=("red", "green", "blue"),
                          background_colors=("green", "yellow", "blue"))


@pytest.fixture(scope="session")
def small_fonts(tmp_path_factory):
    """252-image Fonts set (4 letters, 3 sizes, 3x3 colors, 3 styles) with a holdout split."""
    out = tmp_path_factory.mktemp("small_fonts")
    ds = generate_dataset(SMALL_FONTS, out)
    train, test = plan_split(ds, "holdout-combinations", 0)
    save_split(out / "split.json", out / "manifest.jsonl", "holdout-combinations", 0, train, test)
    return ds, train, test, Path(out)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def mini_fonts(tmp_path_factory):
    """The 1080-image mini-Fonts set with its seed-0 holdout split."""
    out = tmp_path_factory.mktemp("mini_fonts")
    ds = generate_dataset(FontsConfig.mini(), out)
    train, test = plan_split(ds, "holdout-combinations", 0)
    save_split(out / "split.json", out / "manifest.jsonl", "holdout-combinations", 0, train, test)
    return ds, train, test, Path(out)


CRITERIA: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in CRITERIA:
            terminalreporter.write_line(line)
