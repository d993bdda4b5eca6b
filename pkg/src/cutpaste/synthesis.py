"""On-the-fly synthesis of partially labeled samples.

A labeled foreground (lesion pixels under their mask) is jittered
geometrically and photometrically, feathered with a Gaussian alpha, and
composited onto a noised unlabeled background. Pastes landing on out-of-bound
regions (e.g. the black border outside a scan aperture) are clipped away; a
paste whose mask is fully clipped signals rejection so the caller can retry
with a different labeled partner.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .arrays import ValidationError, channel_mean, clamp01, ensure_image, ensure_mask, ensure_same_hw

LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])


class NoForegroundError(Exception):
    """Foreground mask is (or became) empty; the sample cannot be used."""


@dataclass
class SynthConfig:
    rotation_deg: float = 15.0
    translate_frac: float = 0.10
    scale_min: float = 0.9
    scale_max: float = 1.1
    color_jitter: float = 0.10
    feather_sigma: float = 1.5
    noise_sigma: float = 0.01
    background_blur_sigma: float = 1.0
    oob_tau: float = 10.0 / 255.0
    # ablation toggles
    mask_blur: bool = True
    background_noise: bool = True
    background_blur: bool = False
    color_matching: bool = True
    match_k: int = 5

    def validate(self) -> "SynthConfig":
        if self.rotation_deg < 0 or self.translate_frac < 0 or self.color_jitter < 0:
            raise ValidationError("synth: jitter ranges must be >= 0")
        if self.feather_sigma < 0 or self.noise_sigma < 0 or self.background_blur_sigma < 0:
            raise ValidationError("synth: sigmas must be >= 0")
        if not 0 < self.scale_min <= self.scale_max:
            raise ValidationError("synth: scale range must be positive and ordered")
        if not 0 <= self.oob_tau < 1:
            raise ValidationError("synth: oob_tau must be in [0, 1)")
        if self.match_k < 1:
            raise ValidationError("synth: match_k must be >= 1")
        return self


@dataclass
class Foreground:
    patch: np.ndarray  # (H, W, C), zero outside mask
    mask: np.ndarray  # (H, W) uint8
    provenance: int = -1


@dataclass
class SyntheticSample:
    original: np.ndarray  # clean unlabeled image
    blended: np.ndarray
    mask: np.ndarray
    provenance: tuple = (-1, -1, -1)  # (unlabeled index, labeled index, seed)


def extract_foreground(image: np.ndarray, mask: np.ndarray, provenance: int = -1) -> Foreground:
    """Cut the masked pixels out of a labeled image; empty masks reject."""
    image = ensure_image(image)
    mask = ensure_mask(mask)
    ensure_same_hw(image, mask, "extract_foreground")
    if mask.sum() == 0:
        raise NoForegroundError("labeled mask is empty")
    return Foreground(patch=image * mask[:, :, None], mask=mask.copy(), provenance=provenance)


def _bilinear_sample(src: np.ndarray, sy: np.ndarray, sx: np.ndarray) -> np.ndarray:
    """Bilinear gather at float coords; zero outside the source canvas."""
    h, w = src.shape[:2]
    y0 = np.floor(sy).astype(np.int64)
    x0 = np.floor(sx).astype(np.int64)
    fy = sy - y0
    fx = sx - x0
    out = np.zeros(sy.shape + src.shape[2:], dtype=np.float64)
    for dy in (0, 1):
        wy = fy if dy else 1.0 - fy
        yy = y0 + dy
        ok_y = (yy >= 0) & (yy < h)
        for dx in (0, 1):
            wx = fx if dx else 1.0 - fx
            xx = x0 + dx
            weight = wy * wx * (ok_y & (xx >= 0) & (xx < w))
            vals = src[np.clip(yy, 0, h - 1), np.clip(xx, 0, w - 1)]
            out += weight[..., None] * vals if src.ndim == 3 else weight * vals
    return out


def apply_affine(fg: Foreground, angle_deg: float, scale: float, tx: float, ty: float) -> Foreground:
    """Rotate/scale about the mask centroid then translate by (tx, ty) px.

    Patch and mask move together; the mask re-binarizes at 0.5 and content
    leaving the canvas is dropped. Raises if nothing survives.
    """
    if angle_deg == 0.0 and scale == 1.0:
        if tx == 0.0 and ty == 0.0:
            return replace(fg, patch=fg.patch.copy(), mask=fg.mask.copy())
        if tx == int(tx) and ty == int(ty):
            return _integer_shift(fg, int(tx), int(ty))
    h, w = fg.mask.shape
    ys, xs = np.nonzero(fg.mask)
    cy, cx = ys.mean(), xs.mean()
    theta = np.deg2rad(angle_deg)
    cos_t, sin_t = np.cos(theta), np.sin(theta)
    gy, gx = np.mgrid[0:h, 0:w].astype(np.float64)
    # invert: undo translation, rotate by -theta, unscale, re-center
    ry = (gy - cy - ty) / scale
    rx = (gx - cx - tx) / scale
    sy = sin_t * rx + cos_t * ry + cy
    sx = cos_t * rx - sin_t * ry + cx
    new_mask = (_bilinear_sample(fg.mask.astype(np.float64), sy, sx) >= 0.5).astype(np.uint8)
    if new_mask.sum() == 0:
        raise NoForegroundError("geometric transform emptied the mask")
    new_patch = _bilinear_sample(fg.patch, sy, sx) * new_mask[:, :, None]
    return replace(fg, patch=clamp01(new_patch), mask=new_mask)


def _integer_shift(fg: Foreground, tx: int, ty: int) -> Foreground:
    h, w = fg.mask.shape
    patch = np.zeros_like(fg.patch)
    mask = np.zeros_like(fg.mask)
    sy0, sy1 = max(0, -ty), min(h, h - ty)
    sx0, sx1 = max(0, -tx), min(w, w - tx)
    if sy0 < sy1 and sx0 < sx1:
        patch[sy0 + ty : sy1 + ty, sx0 + tx : sx1 + tx] = fg.patch[sy0:sy1, sx0:sx1]
        mask[sy0 + ty : sy1 + ty, sx0 + tx : sx1 + tx] = fg.mask[sy0:sy1, sx0:sx1]
    if mask.sum() == 0:
        raise NoForegroundError("translation pushed the mask off the canvas")
    return replace(fg, patch=patch, mask=mask)


def geometric_jitter(fg: Foreground, cfg: SynthConfig, rng: np.random.Generator) -> Foreground:
    """Random rotation, resize and translation within the config ranges."""
    h, w = fg.mask.shape
    angle = rng.uniform(-cfg.rotation_deg, cfg.rotation_deg)
    scale = rng.uniform(cfg.scale_min, cfg.scale_max)
    tx = rng.uniform(-cfg.translate_frac, cfg.translate_frac) * w
    ty = rng.uniform(-cfg.translate_frac, cfg.translate_frac) * h
    return apply_affine(fg, angle, scale, tx, ty)


def apply_color(fg: Foreground, brightness: float, contrast: float, saturation: float) -> Foreground:
    """Photometric adjustment of the masked pixels; mask unchanged."""
    patch = fg.patch.copy()
    if brightness != 1.0:
        patch = patch * brightness
    if contrast != 1.0:
        mean = patch[fg.mask.astype(bool)].mean()
        patch = (patch - mean) * contrast + mean
    if saturation != 1.0 and patch.shape[2] == 3:
        luma = patch @ LUMA_WEIGHTS
        patch = luma[:, :, None] + (patch - luma[:, :, None]) * saturation
    patch = clamp01(patch) * fg.mask[:, :, None]
    return replace(fg, patch=patch)


def color_jitter(fg: Foreground, cfg: SynthConfig, rng: np.random.Generator) -> Foreground:
    j = cfg.color_jitter
    brightness = rng.uniform(1.0 - j, 1.0 + j)
    contrast = rng.uniform(1.0 - j, 1.0 + j)
    saturation = rng.uniform(1.0 - j, 1.0 + j)
    return apply_color(fg, brightness, contrast, saturation)


def gaussian_kernel(sigma: float) -> np.ndarray:
    """Normalized 1-D Gaussian taps with radius ceil(3*sigma)."""
    if sigma <= 0:
        raise ValidationError(f"gaussian_kernel: sigma must be > 0, got {sigma}")
    radius = int(np.ceil(3.0 * sigma))
    i = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-(i * i) / (2.0 * sigma * sigma))
    return k / k.sum()


def gaussian_blur(arr: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian blur over the first two axes, replicate padding."""
    kernel = gaussian_kernel(sigma)
    radius = len(kernel) // 2
    out = np.asarray(arr, dtype=np.float64)
    for axis in (0, 1):
        pad = [(0, 0)] * out.ndim
        pad[axis] = (radius, radius)
        padded = np.pad(out, pad, mode="edge")
        acc = np.zeros_like(out)
        index = [slice(None)] * out.ndim
        for k, weight in enumerate(kernel):
            index[axis] = slice(k, k + out.shape[axis])
            acc += weight * padded[tuple(index)]
        out = acc
    return out


def feather_mask(mask: np.ndarray, sigma: float) -> np.ndarray:
    """Soft paste alpha in [0, 1]: Gaussian blur of the 0/1 mask (identity at sigma 0)."""
    mask = ensure_mask(mask)
    if sigma == 0:
        return mask.astype(np.float64)
    return np.clip(gaussian_blur(mask.astype(np.float64), sigma), 0.0, 1.0)


def add_background_noise(image: np.ndarray, sigma: float, rng: np.random.Generator) -> np.ndarray:
    """Per-element i.i.d. Gaussian noise, clamped to [0, 1]; identity at sigma 0."""
    if sigma < 0:
        raise ValidationError(f"noise sigma must be >= 0, got {sigma}")
    if sigma == 0:
        return image.copy()
    return clamp01(image + rng.normal(0.0, sigma, size=image.shape))


def valid_region_mask(image: np.ndarray, tau: float) -> np.ndarray:
    """1 where the channel-mean intensity exceeds the out-of-bound level tau."""
    image = ensure_image(image)
    return (channel_mean(image) > tau).astype(np.uint8)


def paste(background: np.ndarray, fg: Foreground, alpha: np.ndarray, valid: np.ndarray):
    """Composite the foreground over the background inside the valid region.

    Returns (blended image, pasted mask); raises NoForegroundError when the
    clipped mask is empty so the caller can retry with another match.
    """
    ensure_same_hw(background, fg.mask, "paste")
    ensure_same_hw(background, alpha, "paste alpha")
    ensure_same_hw(background, valid, "paste valid")
    if background.shape[2] != fg.patch.shape[2]:
        raise ValidationError("paste: channel count mismatch between background and patch")
    out_mask = (fg.mask * valid).astype(np.uint8)
    if out_mask.sum() == 0:
        raise NoForegroundError("paste fell entirely on out-of-bound region")
    eff = (alpha * valid)[:, :, None]
    blended = clamp01(eff * fg.patch + (1.0 - eff) * background)
    return blended, out_mask


def synthesize(
    unlabeled: np.ndarray,
    labeled: tuple,
    cfg: SynthConfig,
    rng: np.random.Generator,
    provenance: tuple = (-1, -1, -1),
) -> SyntheticSample:
    """Full pipeline: extract, jitter, feather, noise the background, clip, paste."""
    unlabeled = ensure_image(unlabeled)
    labeled_image, labeled_mask = labeled
    fg = extract_foreground(labeled_image, labeled_mask)
    fg = geometric_jitter(fg, cfg, rng)
    fg = color_jitter(fg, cfg, rng)
    if cfg.mask_blur:
        # feather only the mask interior: outside it the patch is zero, so a
        # halo of alpha would composite a dark rim around every paste
        alpha = feather_mask(fg.mask, cfg.feather_sigma) * fg.mask
    else:
        alpha = fg.mask.astype(np.float64)
    background = unlabeled
    if cfg.background_blur:
        background = gaussian_blur(background, cfg.background_blur_sigma)
    if cfg.background_noise:
        background = add_background_noise(background, cfg.noise_sigma, rng)
    valid = valid_region_mask(unlabeled, cfg.oob_tau)
    blended, out_mask = paste(background, fg, alpha, valid)
    return SyntheticSample(original=unlabeled, blended=blended, mask=out_mask, provenance=provenance)


def synthesize_with_retry(
    unlabeled: np.ndarray,
    pick_labeled,
    cfg: SynthConfig,
    rng: np.random.Generator,
    max_retries: int = 5,
    provenance_base: tuple = (-1, -1),
):
    """Retry rejected pastes with fresh labeled partners.

    pick_labeled(attempt, rng) -> (image, mask, labeled index). Returns
    (sample or None, rejection count); None means the unlabeled image is
    skipped for this step.
    """
    rejections = 0
    for attempt in range(max_retries + 1):
        image, mask, labeled_idx = pick_labeled(attempt, rng)
        try:
            prov = (provenance_base[0], labeled_idx, provenance_base[1])
            return synthesize(unlabeled, (image, mask), cfg, rng, provenance=prov), rejections
        except NoForegroundError:
            rejections += 1
    return None, rejections
