"""Image I/O, noise synthesis and deterministic patch streaming."""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image as PILImage
from PIL import UnidentifiedImageError

from .tensor import Tensor

log = logging.getLogger(__name__)

SUPPORTED_SUFFIXES = (".png", ".pgm", ".ppm", ".pnm")
_MAGIC = {b"\x89PNG": "png", b"P5": "pnm", b"P6": "pnm", b"P2": "pnm", b"P3": "pnm"}
LUMA_WEIGHTS = (0.299, 0.587, 0.114)


class ImageError(Exception):
    pass


class ImageNotFoundError(ImageError, FileNotFoundError):
    pass


class UnsupportedFormatError(ImageError):
    pass


class CorruptImageError(ImageError):
    pass


class EmptyDatasetError(ImageError):
    pass


@dataclass
class Image:
    pixels: np.ndarray  # (C, H, W) in [0, 1] for clean data
    source_path: str | None = None

    @property
    def channels(self) -> int:
        return self.pixels.shape[0]

    @property
    def shape(self):
        return self.pixels.shape


@dataclass(frozen=True)
class NoiseSpec:
    """Noise level range on the 0-255 intensity scale."""

    sigma_min: float = 0.0
    sigma_max: float = 50.0

    def __post_init__(self):
        if not 0 <= self.sigma_min <= self.sigma_max <= 100:
            raise ValueError(f"need 0 <= sigma_min <= sigma_max <= 100, got ({self.sigma_min}, {self.sigma_max})")


class Rng:
    """Seeded generator that hands out one independent stream per item index.

    Deriving each item's generator from (seed, index) rather than advancing a
    shared state makes any item reproducible on its own, so resumed or
    prefetched runs see exactly the same sequence.
    """

    def __init__(self, seed: int):
        self.seed = int(seed)

    def for_item(self, *index: int) -> np.random.Generator:
        return np.random.default_rng([self.seed, *(int(i) for i in index)])

    def state(self) -> dict:
        return {"seed": self.seed}


def _sniff(path: Path) -> str:
    with open(path, "rb") as f:
        head = f.read(8)
    for magic, kind in _MAGIC.items():
        if head.startswith(magic):
            return kind
    raise UnsupportedFormatError(f"{path}: not a PNG/PGM/PPM file")


def load_image(path) -> Image:
    path = Path(path)
    if not path.is_file():
        raise ImageNotFoundError(f"no such image file: {path}")
    _sniff(path)
    try:
        with PILImage.open(path) as im:
            im.load()
            mode = im.mode
            if mode in ("P", "RGBA", "LA"):
                im = im.convert("RGB" if mode != "LA" else "L")
                mode = im.mode
            if mode not in ("L", "RGB", "1"):
                raise UnsupportedFormatError(f"{path}: unsupported pixel mode {mode!r} (8-bit L/RGB only)")
            arr = np.asarray(im.convert("L") if mode == "1" else im, dtype=np.uint8)
    except (UnidentifiedImageError, OSError, SyntaxError, ValueError) as exc:
        if isinstance(exc, ImageError):
            raise
        raise CorruptImageError(f"{path}: {exc}") from exc
    pixels = arr[None] if arr.ndim == 2 else arr.transpose(2, 0, 1)
    return Image(pixels.astype(np.float32) / 255.0, str(path))


def to_uint8(pixels: np.ndarray) -> np.ndarray:
    return np.round(np.clip(pixels, 0.0, 1.0) * 255.0).astype(np.uint8)


def save_image(img: Image | np.ndarray, path) -> None:
    """Clamp to [0,1], quantise to 8 bits and write PNG/PGM/PPM by suffix."""
    path = Path(path)
    pixels = img.pixels if isinstance(img, Image) else np.asarray(img)
    if pixels.ndim == 2:
        pixels = pixels[None]
    suffix = path.suffix.lower()
    if suffix not in SUPPORTED_SUFFIXES:
        raise UnsupportedFormatError(f"cannot write {path}: use one of {SUPPORTED_SUFFIXES}")
    c = pixels.shape[0]
    if suffix == ".pgm" and c != 1 or suffix == ".ppm" and c != 3:
        raise UnsupportedFormatError(f"cannot write a {c}-channel image as {suffix}")
    q = to_uint8(pixels)
    im = PILImage.fromarray(q[0] if c == 1 else q.transpose(1, 2, 0), mode="L" if c == 1 else "RGB")
    path.parent.mkdir(parents=True, exist_ok=True)
    im.save(path, format="PNG" if suffix == ".png" else "PPM")


def to_grayscale(img: Image) -> Image:
    if img.channels != 3:
        raise ValueError(f"to_grayscale expects a 3-channel image, got {img.channels}")
    r, g, b = img.pixels.astype(np.float64)
    y = LUMA_WEIGHTS[0] * r + LUMA_WEIGHTS[1] * g + LUMA_WEIGHTS[2] * b
    return Image(y[None].astype(img.pixels.dtype), img.source_path)


def add_awgn(img: Image, sigma: float, rng: np.random.Generator) -> Image:
    """Add N(0, (sigma/255)^2) noise per element; no clipping."""
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    if sigma == 0:
        return Image(img.pixels.copy(), img.source_path)
    noise = rng.standard_normal(img.pixels.shape) * (sigma / 255.0)
    return Image((img.pixels + noise).astype(img.pixels.dtype), img.source_path)


def extract_patches(img: Image, size: int, count: int, rng: np.random.Generator) -> list:
    _, h, w = img.shape
    if h < size or w < size:
        raise ValueError(f"image {img.source_path or ''} of size {h}x{w} is smaller than patch size {size}")
    patches = []
    for _ in range(count):
        top = int(rng.integers(0, h - size + 1))
        left = int(rng.integers(0, w - size + 1))
        patches.append(Image(img.pixels[:, top:top + size, left:left + size].copy(), img.source_path))
    return patches


def list_images(root) -> list:
    root = Path(root)
    if not root.is_dir():
        raise ImageNotFoundError(f"not a directory: {root}")
    files = []
    for dirpath, _, names in os.walk(root):
        files += [Path(dirpath) / n for n in names if n.lower().endswith(SUPPORTED_SUFFIXES)]
    return sorted(files)


def load_dataset(root, grayscale: bool = True, min_size: int = 1) -> list:
    """Load every readable image under ``root`` converted to the working channel count."""
    files = list_images(root)
    if not files:
        raise EmptyDatasetError(f"no PNG/PGM/PPM images under {root}")
    images = []
    for f in files:
        try:
            img = load_image(f)
        except ImageError as exc:
            log.warning("skipping %s: %s", f, exc)
            continue
        if grayscale and img.channels == 3:
            img = to_grayscale(img)
        elif not grayscale and img.channels == 1:
            img = Image(np.repeat(img.pixels, 3, axis=0), img.source_path)
        if min(img.shape[1:]) < min_size:
            log.warning("skipping %s: smaller than %d pixels", f, min_size)
            continue
        images.append(img)
    if not images:
        raise EmptyDatasetError(f"none of the {len(files)} files under {root} could be used")
    return images


def make_pair(images: list, item: int, patch: int, noise: NoiseSpec, rng: Rng):
    """The (noisy, clean) patch for global item index ``item``."""
    n = len(images)
    epoch, pos = divmod(item, n)
    order = rng.for_item(0, epoch).permutation(n)
    r = rng.for_item(1, item)
    clean = extract_patches(images[order[pos]], patch, 1, r)[0]
    sigma = float(r.uniform(noise.sigma_min, noise.sigma_max)) if noise.sigma_max > noise.sigma_min else noise.sigma_min
    noisy = add_awgn(clean, sigma, r)
    return noisy.pixels, clean.pixels


def make_batch(images, iteration: int, patch: int, batch: int, noise: NoiseSpec, rng: Rng):
    pairs = [make_pair(images, iteration * batch + b, patch, noise, rng) for b in range(batch)]
    noisy = np.stack([p[0] for p in pairs]).astype(np.float32)
    clean = np.stack([p[1] for p in pairs]).astype(np.float32)
    return Tensor(noisy), Tensor(clean)


def training_stream(source, patch: int = 128, batch: int = 4, noise: NoiseSpec = NoiseSpec(),
                    rng: Rng | int = 0, grayscale: bool = True, start: int = 0):
    """Endless iterator of (noisy, clean) batches, each (batch, C, patch, patch).

    ``source`` is a directory or a preloaded list of :class:`Image`.  Batch
    ``i`` depends only on (images, settings, seed, i), so ``start`` resumes a
    stream exactly.
    """
    rng = rng if isinstance(rng, Rng) else Rng(rng)
    images = source if isinstance(source, list) else load_dataset(source, grayscale, min_size=patch)
    it = start
    while True:
        yield make_batch(images, it, patch, batch, noise, rng)
        it += 1
