import shutil
from pathlib import Path

import numpy as np
import pytest
from PIL import Image

DATA = Path(__file__).resolve().parent / "data"
FONT_CANDIDATES = [
    Path("/usr/share/fonts/truetype/dejavu/DejaVuSans.ttf"),
    Path("/usr/share/fonts/truetype/dejavu/DejaVuSerif-Bold.ttf"),
    Path("/usr/share/fonts/dejavu/DejaVuSans.ttf"),
]


def _make_backgrounds(directory: Path, n=3, seed=0):
    directory.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    for i in range(n):
        yy, xx = np.mgrid[0:300, 0:400]
        base = 60 + 120 * (xx / 400.0) + 40 * np.sin(yy / (15.0 + 10 * i))
        noise = rng.normal(0, 12, (300, 400, 3))
        img = np.clip(base[..., None] + noise + rng.integers(-40, 40, 3), 0, 255).astype(np.uint8)
        Image.fromarray(img).save(directory / f"bg{i}.png")
    return directory


@pytest.fixture(scope="session")
def corpus_path():
    return DATA / "corpus.txt"


@pytest.fixture(scope="session")
def backgrounds_dir(tmp_path_factory):
    return _make_backgrounds(tmp_path_factory.mktemp("backgrounds"))


@pytest.fixture(scope="session")
def fonts_dir(tmp_path_factory):
    found = [p for p in FONT_CANDIDATES if p.is_file()]
    if not found:
        pytest.skip("no TrueType font available on this system")
    d = tmp_path_factory.mktemp("fonts")
    for p in found:
        shutil.copy(p, d / p.name)
    return d


@pytest.fixture(scope="session")
def empty_fonts_dir(tmp_path_factory):
    # block glyphs never open a font, but the CLI still wants a directory
    return tmp_path_factory.mktemp("no_fonts")


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
