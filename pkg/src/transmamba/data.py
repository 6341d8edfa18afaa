"""Synthetic rain generation, paired-folder loading, patching, flips.

Streaks are anti-aliased line segments with a Gaussian cross profile;
long smooth streaks concentrate their spectral energy in the
low-frequency bands, which is what makes the band-swap demonstration
work.  All randomness flows through the package Rng, so a recipe with a
fixed seed reproduces bit-identically everywhere.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .imageio import read_image, write_image
from .rng import Rng
from .tensor import Tensor


class DataError(RuntimeError):
    pass


@dataclass
class RainPair:
    rainy: Tensor
    clean: Tensor
    id: str = ""

    def __post_init__(self):
        if self.rainy.shape != self.clean.shape:
            raise DataError(f"pair {self.id!r}: rainy {self.rainy.shape} != clean {self.clean.shape}")


@dataclass(frozen=True)
class RainRecipe:
    streak_count: tuple = (45, 75)
    length: tuple = (14.0, 34.0)      # pixels
    angle: tuple = (-25.0, 25.0)      # degrees from vertical
    width: tuple = (1.6, 3.0)         # Gaussian profile width (~2 sigma), pixels
    intensity: tuple = (0.10, 0.32)
    seed: int = 0

    def __post_init__(self):
        for name in ("streak_count", "length", "angle", "width", "intensity"):
            lo, hi = getattr(self, name)
            if hi < lo:
                raise ValueError(f"recipe range {name} is empty: {lo}..{hi}")
        lo, hi = self.intensity
        if not (0.0 < lo <= 1.0 and 0.0 < hi <= 1.0):
            raise ValueError(f"intensity must lie in (0, 1], got {lo}..{hi}")


def _draw_streak(field: np.ndarray, cx: float, cy: float, angle_deg: float,
                 length: float, width: float, intensity: float):
    H, W = field.shape
    theta = math.radians(angle_deg)
    dy, dx = math.cos(theta), math.sin(theta)   # unit direction, near-vertical at 0 deg
    ax, ay = cx - dx * length / 2, cy - dy * length / 2
    sigma = max(width / 2.0, 0.3)
    margin = 3.0 * sigma
    x0 = max(int(math.floor(min(ax, ax + dx * length) - margin)), 0)
    x1 = min(int(math.ceil(max(ax, ax + dx * length) + margin)) + 1, W)
    y0 = max(int(math.floor(min(ay, ay + dy * length) - margin)), 0)
    y1 = min(int(math.ceil(max(ay, ay + dy * length) + margin)) + 1, H)
    if x0 >= x1 or y0 >= y1:
        return
    ys, xs = np.mgrid[y0:y1, x0:x1]
    px, py = xs - ax, ys - ay
    t = np.clip(px * dx + py * dy, 0.0, length)
    d2 = (px - t * dx) ** 2 + (py - t * dy) ** 2
    field[y0:y1, x0:x1] += intensity * np.exp(-d2 / (2.0 * sigma * sigma))


def synthesize_rain(clean, recipe: RainRecipe, pair_id: str = "") -> RainPair:
    """Overlay seeded streaks: rainy = clamp(clean + S, 0, 1) with S >= 0."""
    clean = clean if isinstance(clean, Tensor) else Tensor(clean)
    _, H, W = clean.shape
    rng = Rng(recipe.seed)
    n = rng.randint(recipe.streak_count[0], recipe.streak_count[1] + 1)
    field = np.zeros((H, W))
    for _ in range(n):
        cx = rng.uniform((), 0.0, W)
        cy = rng.uniform((), 0.0, H)
        ang = rng.uniform((), *recipe.angle)
        length = rng.uniform((), *recipe.length)
        width = rng.uniform((), *recipe.width)
        inten = rng.uniform((), *recipe.intensity)
        _draw_streak(field, cx, cy, ang, length, width, inten)
    rainy = np.clip(clean.data + field[None], 0.0, 1.0)
    return RainPair(Tensor(rainy), Tensor(clean.data.copy()), pair_id)


def make_clean_image(size: int, rng: Rng) -> Tensor:
    """Procedural clean background: gradient + soft shapes + waves + noise."""
    H = W = size
    ys, xs = np.mgrid[0:H, 0:W] / max(size - 1, 1)
    img = np.empty((3, H, W))
    for c in range(3):
        gx = rng.uniform((), -1.0, 1.0)
        gy = rng.uniform((), -1.0, 1.0)
        base = rng.uniform((), 0.25, 0.7)
        img[c] = base + 0.25 * (gx * xs + gy * ys)
    for _ in range(rng.randint(3, 7)):
        cx = rng.uniform((), 0.0, 1.0)
        cy = rng.uniform((), 0.0, 1.0)
        radius = rng.uniform((), 0.08, 0.3)
        color = rng.uniform((3,), 0.1, 0.9)
        softness = rng.uniform((), 8.0, 40.0)
        d = np.hypot(xs - cx, ys - cy)
        mask = 1.0 / (1.0 + np.exp(softness * (d - radius)))
        img += (color[:, None, None] - img) * mask * 0.8
    for _ in range(2):
        fx = rng.randint(1, 4)
        fy = rng.randint(1, 4)
        phase = rng.uniform((), 0.0, 2 * np.pi)
        amp = rng.uniform((), 0.02, 0.06)
        img += amp * np.cos(2 * np.pi * (fx * xs + fy * ys) + phase)[None]
    img += rng.normal((3, H, W), std=0.015)
    return Tensor(np.clip(img, 0.0, 1.0))


def random_patch(pair: RainPair, size: int, rng: Rng) -> RainPair:
    """Aligned square crop of both images."""
    _, H, W = pair.rainy.shape
    if size > min(H, W):
        raise DataError(f"patch size {size} exceeds image {H}x{W}")
    y = rng.randint(0, H - size + 1)
    x = rng.randint(0, W - size + 1)
    return RainPair(
        Tensor(pair.rainy.data[:, y:y + size, x:x + size].copy()),
        Tensor(pair.clean.data[:, y:y + size, x:x + size].copy()),
        pair.id,
    )


def flip_augment(pair: RainPair, rng: Rng) -> RainPair:
    """Random horizontal/vertical flips applied identically to both images."""
    rainy, clean = pair.rainy.data, pair.clean.data
    if rng.uniform() < 0.5:
        rainy, clean = rainy[:, :, ::-1], clean[:, :, ::-1]
    if rng.uniform() < 0.5:
        rainy, clean = rainy[:, ::-1, :], clean[:, ::-1, :]
    return RainPair(Tensor(rainy.copy()), Tensor(clean.copy()), pair.id)


def load_paired_folder(rain_dir, clean_dir) -> list[RainPair]:
    """Decode matching files from two folders, sorted by filename."""
    rain_dir, clean_dir = Path(rain_dir), Path(clean_dir)
    exts = (".png", ".ppm", ".pnm")
    rain_names = sorted(p.name for p in rain_dir.iterdir() if p.suffix.lower() in exts) \
        if rain_dir.is_dir() else []
    clean_names = sorted(p.name for p in clean_dir.iterdir() if p.suffix.lower() in exts) \
        if clean_dir.is_dir() else []
    only_rain = sorted(set(rain_names) - set(clean_names))
    only_clean = sorted(set(clean_names) - set(rain_names))
    if only_rain:
        raise DataError(f"missing clean counterpart for {only_rain[0]!r} in {clean_dir}")
    if only_clean:
        raise DataError(f"missing rainy counterpart for {only_clean[0]!r} in {rain_dir}")
    return [
        RainPair(read_image(rain_dir / name), read_image(clean_dir / name), Path(name).stem)
        for name in rain_names
    ]


def load_dataset(root) -> list[RainPair]:
    """Paired dataset stored as root/rain/NNNN.png + root/clean/NNNN.png."""
    root = Path(root)
    return load_paired_folder(root / "rain", root / "clean")


def generate_dataset(out_dir, count: int, recipe: RainRecipe, seed: int = 0,
                     size: int = 64) -> list[RainPair]:
    """Write `count` synthetic pairs under out_dir/{rain,clean}/NNNN.png."""
    out_dir = Path(out_dir)
    (out_dir / "rain").mkdir(parents=True, exist_ok=True)
    (out_dir / "clean").mkdir(parents=True, exist_ok=True)
    master = Rng(seed)
    pairs = []
    for i in range(count):
        item_rng = master.spawn(i)
        clean = make_clean_image(size, item_rng)
        item_recipe = replace(recipe, seed=item_rng.randint(0, 2 ** 31))
        pair = synthesize_rain(clean, item_recipe, f"{i:04d}")
        write_image(out_dir / "rain" / f"{i:04d}.png", pair.rainy)
        write_image(out_dir / "clean" / f"{i:04d}.png", pair.clean)
        pairs.append(pair)
    return pairs
