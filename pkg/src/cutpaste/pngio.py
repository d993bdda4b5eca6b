"""8-bit PNG input/output.

Pixels map to floats as p/255 so that 255 becomes exactly 1.0; saving
quantizes with round-half-up so a save/load round trip moves any value by at
most 1/510. Masks binarize at the 127/128 boundary to tolerate anti-aliased
sources.
"""

from __future__ import annotations

import os

import numpy as np
from PIL import Image as PILImage

from .arrays import ValidationError, ensure_image


class FormatError(ValidationError):
    """PNG does not meet the 8-bit gray/RGB no-alpha contract."""


def _open_checked(path) -> PILImage.Image:
    if not os.path.exists(path):
        raise FileNotFoundError(f"no such file: {path}")
    img = PILImage.open(path)
    if img.format != "PNG":
        raise FormatError(f"{path}: expected PNG, got format {img.format!r}")
    return img


def load_png(path) -> np.ndarray:
    """Load an 8-bit grayscale or RGB PNG as (H, W, C) float64 in [0, 1]."""
    img = _open_checked(path)
    if img.mode == "L":
        arr = np.asarray(img, dtype=np.float64)[:, :, None]
    elif img.mode == "RGB":
        arr = np.asarray(img, dtype=np.float64)
    else:
        raise FormatError(f"{path}: unsupported mode {img.mode!r} (need 8-bit L or RGB, no alpha)")
    return arr / 255.0


def load_mask_png(path) -> np.ndarray:
    """Load an 8-bit grayscale PNG as a {0, 1} mask; pixels > 127 become 1."""
    img = _open_checked(path)
    if img.mode != "L":
        raise FormatError(f"{path}: mask must be 8-bit grayscale, got mode {img.mode!r}")
    arr = np.asarray(img)
    return (arr > 127).astype(np.uint8)


def save_png(image: np.ndarray, path) -> None:
    """Save an (H, W, C) float image in [0, 1] as 8-bit PNG (round-half-up)."""
    image = ensure_image(image)
    data = np.floor(image * 255.0 + 0.5).astype(np.uint8)
    if image.shape[2] == 1:
        PILImage.fromarray(data[:, :, 0], mode="L").save(path, format="PNG")
    else:
        PILImage.fromarray(data, mode="RGB").save(path, format="PNG")


def save_mask_png(mask: np.ndarray, path) -> None:
    """Save a {0, 1} mask as an 8-bit grayscale PNG with values {0, 255}."""
    data = (np.asarray(mask) > 0).astype(np.uint8) * 255
    PILImage.fromarray(data, mode="L").save(path, format="PNG")
