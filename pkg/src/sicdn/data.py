"""Datasets: directory loading, a synthetic stripes generator, and batching.

Directory layout is ``root/{train,val,test}/{class_name}/*.png`` with class
indices assigned lexicographically by directory name. Images are decoded,
nearest-neighbor resized to the expected shape, and scaled to [0, 1].

The synthetic task is two-class stripe orientation: class 0 is horizontal
bands, class 1 vertical, both with seeded additive Gaussian noise clamped
back to [0, 1]. It is linearly separable from simple row/column statistics,
which the tests exploit as an independent oracle.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterator

import numpy as np
from PIL import Image

from .errors import ConfigError, DataError, DecodeError, LayoutError

SPLITS = ("train", "val", "test")


@dataclass(frozen=True)
class SynthConfig:
    image_size: tuple[int, int] = (32, 32)  # (height, width), single channel
    train_per_class: int = 200
    val_per_class: int = 40
    test_per_class: int = 40
    stripe_period: int = 4
    foreground: float = 0.8
    background: float = 0.2
    noise_std: float = 0.1
    seed: int = 0

    def validate(self) -> None:
        if self.stripe_period < 1:
            raise ConfigError(f"stripe_period must be >= 1, got {self.stripe_period}")
        for name in ("foreground", "background"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ConfigError(f"{name} intensity must lie in [0, 1], got {value}")
        if self.noise_std < 0:
            raise ConfigError(f"noise_std must be >= 0, got {self.noise_std}")
        if min(self.image_size) < 1:
            raise ConfigError(f"image_size must be positive, got {self.image_size}")
        for name in ("train_per_class", "val_per_class", "test_per_class"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")


@dataclass
class Dataset:
    splits: dict[str, list[tuple[np.ndarray, int]]]
    class_names: list[str]
    image_shape: tuple[int, int, int]

    @property
    def num_classes(self) -> int:
        return len(self.class_names)


def _stripe_base(cfg: SynthConfig, vertical: bool) -> np.ndarray:
    h, w = cfg.image_size
    axis = np.arange(w if vertical else h)
    band = np.where((axis // cfg.stripe_period) % 2 == 0, cfg.foreground, cfg.background)
    img = np.tile(band[None, :], (h, 1)) if vertical else np.tile(band[:, None], (1, w))
    return img.astype(np.float64)[None, :, :]  # (1, h, w)


def synth_generate(cfg: SynthConfig) -> Dataset:
    """Deterministic two-class stripes dataset; noise is the only randomness."""
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    bases = [_stripe_base(cfg, vertical=False), _stripe_base(cfg, vertical=True)]
    counts = {"train": cfg.train_per_class, "val": cfg.val_per_class, "test": cfg.test_per_class}
    splits: dict[str, list[tuple[np.ndarray, int]]] = {}
    for split in SPLITS:
        samples = []
        for label, base in enumerate(bases):
            for _ in range(counts[split]):
                noise = rng.normal(0.0, cfg.noise_std, size=base.shape)
                img = np.clip(base + noise, 0.0, 1.0).astype(np.float32)
                samples.append((img, label))
        splits[split] = samples
    h, w = cfg.image_size
    return Dataset(splits=splits, class_names=["horizontal", "vertical"], image_shape=(1, h, w))


def load_dir(root, expected_shape: tuple[int, int, int]) -> Dataset:
    """Load a ``train/val/test`` PNG directory tree.

    Class names come from the train split's subdirectories, sorted; every
    split must provide at least one image for every class.
    """
    root = Path(root)
    if not root.is_dir():
        raise LayoutError(f"dataset root {root} is not a directory")
    for split in SPLITS:
        if not (root / split).is_dir():
            raise LayoutError(f"missing split directory {root / split}")
    class_names = sorted(p.name for p in (root / "train").iterdir() if p.is_dir())
    if len(class_names) < 2:
        raise LayoutError(f"{root / 'train'} must contain at least two class directories")

    c, h, w = expected_shape
    if c not in (1, 3):
        raise ConfigError(f"expected_shape channels must be 1 or 3, got {c}")
    splits: dict[str, list[tuple[np.ndarray, int]]] = {}
    for split in SPLITS:
        samples = []
        for index, name in enumerate(class_names):
            class_dir = root / split / name
            if not class_dir.is_dir():
                raise LayoutError(f"missing class directory {class_dir}")
            files = sorted(class_dir.glob("*.png"))
            if not files:
                raise LayoutError(f"no PNG images under {class_dir}")
            for path in files:
                samples.append((_decode_png(path, c, h, w), index))
        splits[split] = samples
    return Dataset(splits=splits, class_names=class_names, image_shape=expected_shape)


def _decode_png(path: Path, c: int, h: int, w: int) -> np.ndarray:
    try:
        with Image.open(path) as img:
            img = img.convert("L" if c == 1 else "RGB")
            if img.size != (w, h):
                img = img.resize((w, h), resample=Image.NEAREST)
            raw = np.asarray(img, dtype=np.uint8)
    except (OSError, SyntaxError, ValueError) as exc:
        raise DecodeError(f"cannot decode {path}: {exc}") from None
    if c == 1:
        raw = raw[None, :, :]
    else:
        raw = raw.transpose(2, 0, 1)
    return (raw.astype(np.float32) / 255.0).astype(np.float32)


def save_dataset(dataset: Dataset, out_dir, generator_config: SynthConfig | None = None) -> None:
    """Write the PNG directory layout plus ``manifest.json``."""
    out = Path(out_dir)
    counts: dict[str, dict[str, int]] = {}
    for split, samples in dataset.splits.items():
        counts[split] = {name: 0 for name in dataset.class_names}
        for img, label in samples:
            name = dataset.class_names[label]
            class_dir = out / split / name
            class_dir.mkdir(parents=True, exist_ok=True)
            index = counts[split][name]
            counts[split][name] += 1
            pixels = np.clip(np.round(img * 255.0), 0, 255).astype(np.uint8)
            if img.shape[0] == 1:
                pil = Image.fromarray(pixels[0], mode="L")
            else:
                pil = Image.fromarray(pixels.transpose(1, 2, 0), mode="RGB")
            pil.save(class_dir / f"{index:05d}.png")
    manifest = {
        "class_names": dataset.class_names,
        "image_shape": list(dataset.image_shape),
        "counts": counts,
    }
    if generator_config is not None:
        manifest["generator"] = asdict(generator_config)
        manifest["seed"] = generator_config.seed
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def batches(
    samples: list[tuple[np.ndarray, int]],
    batch_size: int,
    seed: int,
    num_classes: int,
) -> Iterator[tuple[np.ndarray, np.ndarray]]:
    """Seeded shuffle, then (images, one-hot labels) chunks; the final
    partial chunk is kept."""
    if batch_size < 1:
        raise ConfigError(f"batch_size must be >= 1, got {batch_size}")
    if not samples:
        raise DataError("cannot batch an empty split")
    order = np.random.default_rng(seed).permutation(len(samples))
    for start in range(0, len(samples), batch_size):
        chunk = order[start : start + batch_size]
        images = np.stack([samples[i][0] for i in chunk])
        labels = np.zeros((len(chunk), num_classes), dtype=np.float32)
        for row, i in enumerate(chunk):
            labels[row, samples[i][1]] = 1.0
        yield images, labels
