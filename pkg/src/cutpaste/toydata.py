"""Procedural lesion-segmentation benchmark.

Backgrounds are tinted multi-octave value noise (the tint palette gives the
color matcher a real signal); lesions are perturbed bright ellipses with
exact masks, kept small so positive pixels stay scarce. Ground truth for the
unlabeled split is written under a sealed/ directory that training code
refuses to read.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from .arrays import ValidationError, clamp01
from .pngio import save_mask_png, save_png
from .rng import TOY, make_rng, stream_id

SEALED_DIR = "sealed"

# multiplicative RGB tints; pairwise mean-Lab distance comfortably above 2.
# wide enough that a handful of labeled images cannot cover every tint, which
# is what gives unlabeled backgrounds their value
PALETTE = (
    (1.20, 0.90, 0.85),
    (0.88, 1.15, 0.90),
    (0.88, 0.95, 1.25),
    (1.10, 1.05, 0.80),
    (1.18, 1.00, 1.00),
    (0.92, 1.02, 1.12),
    (1.05, 0.88, 1.05),
    (0.82, 1.05, 1.05),
)

# worst-case lesion extent: max aspect 1.3 times max boundary perturbation 1.36
_EXTENT = 1.3 * 1.36


@dataclass
class ToyConfig:
    size: int = 64
    labeled: int = 8
    unlabeled: int = 64
    test: int = 32
    lesions_min: int = 1
    lesions_max: int = 3
    radius_min: float = 3.0
    radius_max: float = 7.0
    offset_min: float = 0.25
    offset_max: float = 0.45
    octaves: int = 5
    aperture: bool = False
    # canonical benchmark realization: its labeled split visibly
    # undersamples the background modes, the regime pasting targets
    seed: int = 2

    def validate(self) -> "ToyConfig":
        if self.size < 8 or self.size % 4:
            raise ValidationError("toy: size must be >= 8 and divisible by 4")
        if self.labeled < 1 or self.unlabeled < 0 or self.test < 0:
            raise ValidationError("toy: need labeled >= 1 and non-negative counts")
        if not 1 <= self.lesions_min <= self.lesions_max:
            raise ValidationError("toy: lesion count range invalid")
        if not 0 < self.radius_min <= self.radius_max:
            raise ValidationError("toy: radius range invalid")
        if self.radius_max >= self.size / 4:
            raise ValidationError("toy: radius_max must stay below size/4")
        if not 0 <= self.offset_min <= self.offset_max:
            raise ValidationError("toy: intensity offset range invalid")
        if self.octaves < 1:
            raise ValidationError("toy: octaves must be >= 1")
        return self


def _bilerp_grid(grid: np.ndarray, size: int) -> np.ndarray:
    res = grid.shape[0] - 1
    u = (np.arange(size) + 0.5) / size * res
    i0 = np.clip(np.floor(u).astype(int), 0, res - 1)
    f = u - i0
    a = grid[np.ix_(i0, i0)]
    b = grid[np.ix_(i0 + 1, i0)]
    c = grid[np.ix_(i0, i0 + 1)]
    d = grid[np.ix_(i0 + 1, i0 + 1)]
    fy, fx = f[:, None], f[None, :]
    return a * (1 - fy) * (1 - fx) + b * fy * (1 - fx) + c * (1 - fy) * fx + d * fy * fx


def gen_background(cfg: ToyConfig, rng: np.random.Generator) -> np.ndarray:
    """Tinted value-noise texture in [0.1, 0.75], optional black aperture.

    Each image draws its own spectral profile (persistence) and contrast
    gain, so backgrounds range from smooth washes to dense bright speckle:
    a small labeled set undersamples these modes while the unlabeled pool
    covers them, which is the regime pasting is meant to exploit. Amplitude
    is concentrated in the higher octaves, keeping local statistics stable
    enough that a cut patch keeps its contrast on a tint-matched background.
    """
    persistence = rng.uniform(0.4, 1.0)
    gain = rng.uniform(0.65, 1.45)
    total = np.zeros((cfg.size, cfg.size))
    amp_sum = 0.0
    for octave in range(cfg.octaves):
        res = min(4 * (2**octave), cfg.size // 2)
        grid = rng.random((res + 1, res + 1))
        amp = persistence ** (cfg.octaves - 1 - octave)
        total += amp * _bilerp_grid(grid, cfg.size)
        amp_sum += amp
    gray = np.clip(0.35 + gain * 0.5 * (total / amp_sum - 0.5), 0.1, 0.6)
    tint = np.array(PALETTE[int(rng.integers(len(PALETTE)))])
    image = clamp01(gray[:, :, None] * tint[None, None, :])
    if cfg.aperture:
        yy, xx = np.mgrid[0 : cfg.size, 0 : cfg.size]
        center = (cfg.size - 1) / 2.0
        outside = (yy - center) ** 2 + (xx - center) ** 2 > (0.48 * cfg.size) ** 2
        image[outside] = 0.0
    return image


def gen_lesion(cfg: ToyConfig, rng: np.random.Generator):
    """One perturbed-ellipse lesion: (mask, intensity offset).

    The center placement margin guarantees the mask stays fully inside the
    image bounds for any drawn aspect/perturbation.
    """
    r = rng.uniform(cfg.radius_min, cfg.radius_max)
    margin = _EXTENT * r + 1.0
    cy = rng.uniform(margin, cfg.size - margin)
    cx = rng.uniform(margin, cfg.size - margin)
    aspect = rng.uniform(0.75, 1.3)
    angle = rng.uniform(0.0, np.pi)
    coeffs = rng.uniform(-0.12, 0.12, size=3)  # boundary harmonics k = 2, 3, 4
    phases = rng.uniform(0.0, 2.0 * np.pi, size=3)
    offset = rng.uniform(cfg.offset_min, cfg.offset_max)

    yy, xx = np.mgrid[0 : cfg.size, 0 : cfg.size]
    dy, dx = yy - cy, xx - cx
    ex = np.cos(angle) * dx + np.sin(angle) * dy
    ey = -np.sin(angle) * dx + np.cos(angle) * dy
    rho = np.sqrt((ex / (r * aspect)) ** 2 + (ey / (r / aspect)) ** 2)
    theta = np.arctan2(ey, ex)
    boundary = np.ones_like(rho)
    for k in range(3):
        boundary += coeffs[k] * np.cos((k + 2) * theta + phases[k])
    mask = (rho <= boundary).astype(np.uint8)
    return mask, offset


def gen_image(cfg: ToyConfig, rng: np.random.Generator):
    """(image, mask) with 1..n bright lesions over a textured background."""
    image = gen_background(cfg, rng)
    mask = np.zeros((cfg.size, cfg.size), dtype=np.uint8)
    n_lesions = int(rng.integers(cfg.lesions_min, cfg.lesions_max + 1))
    for _ in range(n_lesions):
        lesion, offset = gen_lesion(cfg, rng)
        image = clamp01(image + offset * lesion[:, :, None])
        mask |= lesion
    return image, mask


def gen_dataset(cfg: ToyConfig, out_dir) -> dict:
    """Write PNGs plus labeled/unlabeled/test manifests; returns their paths.

    Unlabeled ground truth goes under sealed/ for analysis only; manifests
    reference it nowhere and the trainer rejects any path that points there.
    """
    cfg.validate()
    os.makedirs(os.path.join(out_dir, "images"), exist_ok=True)
    os.makedirs(os.path.join(out_dir, "masks"), exist_ok=True)
    os.makedirs(os.path.join(out_dir, SEALED_DIR, "masks"), exist_ok=True)

    manifests = {}
    index = 0
    sealed_rows = []
    for split, prefix, count, with_mask in (
        ("labeled", "l", cfg.labeled, True),
        ("unlabeled", "u", cfg.unlabeled, False),
        ("test", "t", cfg.test, True),
    ):
        rows = []
        for i in range(count):
            rng = make_rng(cfg.seed, stream_id(TOY, index))
            index += 1
            image, mask = gen_image(cfg, rng)
            image_id = f"{prefix}{i:04d}"
            image_rel = f"images/{image_id}.png"
            save_png(image, os.path.join(out_dir, image_rel))
            if with_mask:
                mask_rel = f"masks/{image_id}.png"
                save_mask_png(mask, os.path.join(out_dir, mask_rel))
                rows.append({"image": image_rel, "mask": mask_rel, "id": image_id})
            else:
                sealed_rel = f"{SEALED_DIR}/masks/{image_id}.png"
                save_mask_png(mask, os.path.join(out_dir, sealed_rel))
                sealed_rows.append({"image": image_rel, "mask": sealed_rel, "id": image_id})
                rows.append({"image": image_rel, "mask": None, "id": image_id})
        manifest_path = os.path.join(out_dir, f"{split}.jsonl")
        with open(manifest_path, "w") as fh:
            for row in rows:
                fh.write(json.dumps(row) + "\n")
        manifests[split] = manifest_path

    with open(os.path.join(out_dir, SEALED_DIR, "unlabeled_truth.jsonl"), "w") as fh:
        for row in sealed_rows:
            fh.write(json.dumps(row) + "\n")
    return manifests
