import numpy as np
import pytest

from twostage_denoise.data import save_image


def smooth_image(h=64, w=64):
    """Piecewise-smooth grayscale test image in [0, 1] with one sharp edge."""
    yy, xx = np.mgrid[0:h, 0:w] / max(h - 1, 1)
    img = 0.2 + 0.3 * xx
    img = img + 0.3 * np.exp(-((xx - 0.35) ** 2 + (yy - 0.4) ** 2) / 0.05)
    img = img + 0.2 * np.exp(-((xx - 0.75) ** 2 + (yy - 0.7) ** 2) / 0.02)
    img[(yy > 0.7) & (xx < 0.3)] += 0.15
    return np.clip(img, 0, 1)[None].astype(np.float32)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def clean_patch():
    return smooth_image()


@pytest.fixture
def image_dir(tmp_path):
    """Three small 8-bit training images: two grayscale PNG/PGM, one RGB PPM."""
    d = tmp_path / "images"
    r = np.random.default_rng(7)
    save_image(smooth_image(40, 48), d / "a.png")
    save_image(np.clip(smooth_image(36, 36) + 0.05 * r.standard_normal((1, 36, 36)), 0, 1), d / "b.pgm")
    save_image(np.concatenate([smooth_image(44, 40)] * 3) * np.array([1.0, 0.8, 0.6])[:, None, None], d / "sub" / "c.ppm")
    return d


# acceptance reporting: one PASS/FAIL line per criterion in the terminal summary

ACCEPTANCE = pytest.StashKey[list]()


class _Criterion:
    def __init__(self, lines, name):
        self.lines, self.name, self.detail = lines, name, ""

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc_type is None:
            self.lines.append(f"PASS  {self.name}: {self.detail}")
        else:
            msg = str(exc).strip().splitlines()[0] if str(exc).strip() else exc_type.__name__
            self.lines.append(f"FAIL  {self.name}: {self.detail} [{msg}]")
        print(self.lines[-1])
        return False


@pytest.fixture
def criterion(request):
    lines = request.config.stash.setdefault(ACCEPTANCE, [])
    return lambda name: _Criterion(lines, name)


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
