"""Array conventions and validators shared across modules.

Images are float64 arrays of shape (H, W, C) with C in {1, 3} and values in
[0, 1]. Binary masks are (H, W) arrays over {0, 1}. Probability maps are
(H, W) float arrays strictly inside (0, 1).
"""

from __future__ import annotations

import numpy as np

PROB_EPS = 1e-7  # clamp bound keeping log() and its gradient finite


class ValidationError(ValueError):
    """Bad input data or configuration; maps to CLI exit code 1."""


def ensure_image(arr: np.ndarray, name: str = "image") -> np.ndarray:
    arr = np.asarray(arr, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[2] not in (1, 3):
        raise ValidationError(f"{name}: expected (H, W, C) with C in {{1, 3}}, got shape {arr.shape}")
    if arr.size == 0:
        raise ValidationError(f"{name}: empty array")
    if np.min(arr) < 0.0 or np.max(arr) > 1.0:
        raise ValidationError(f"{name}: values outside [0, 1]")
    return arr


def ensure_mask(arr: np.ndarray, name: str = "mask") -> np.ndarray:
    arr = np.asarray(arr)
    if arr.ndim != 2:
        raise ValidationError(f"{name}: expected (H, W), got shape {arr.shape}")
    vals = np.unique(arr)
    if not np.all(np.isin(vals, (0, 1))):
        raise ValidationError(f"{name}: values must be exactly 0 or 1")
    return arr.astype(np.uint8)


def ensure_same_hw(a: np.ndarray, b: np.ndarray, what: str = "arrays") -> None:
    if a.shape[:2] != b.shape[:2]:
        raise ValidationError(f"{what}: spatial dims differ, {a.shape[:2]} vs {b.shape[:2]}")


def channel_mean(image: np.ndarray) -> np.ndarray:
    """Per-pixel mean over channels, (H, W, C) -> (H, W)."""
    return image.mean(axis=2)


def clamp01(arr: np.ndarray) -> np.ndarray:
    return np.clip(arr, 0.0, 1.0)


def clamp_prob(p: np.ndarray) -> np.ndarray:
    """Clamp probabilities into [PROB_EPS, 1 - PROB_EPS]."""
    return np.clip(p, PROB_EPS, 1.0 - PROB_EPS)
