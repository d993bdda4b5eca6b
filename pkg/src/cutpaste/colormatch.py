"""Pairing unlabeled backgrounds with visually similar labeled samples.

RGB images are compared by the CIE76 Delta E between their mean CIELAB
colors; grayscale images by pixelwise L2 distance between 32x32 box-filtered
thumbnails. Each unlabeled image keeps its k nearest labeled candidates and
one is drawn uniformly per synthesis.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .arrays import ValidationError, ensure_image

KIND_COLOR = "color-mean-lab"
KIND_GRAY = "gray-thumbnail"

THUMB_SIZE = 32

# linear sRGB -> XYZ, D65 observer; white point taken from the row sums so
# that (1,1,1) maps to exactly (100, 0, 0)
_RGB_TO_XYZ = np.array(
    [
        [0.412453, 0.357580, 0.180423],
        [0.212671, 0.715160, 0.072169],
        [0.019334, 0.119193, 0.950227],
    ]
)
_WHITE = _RGB_TO_XYZ.sum(axis=1)
_DELTA = 6.0 / 29.0


def srgb_to_lab(rgb: np.ndarray) -> np.ndarray:
    """Convert sRGB values in [0, 1] (shape (..., 3)) to CIELAB."""
    rgb = np.clip(np.asarray(rgb, dtype=np.float64), 0.0, 1.0)
    linear = np.where(rgb > 0.04045, ((rgb + 0.055) / 1.055) ** 2.4, rgb / 12.92)
    xyz = linear @ _RGB_TO_XYZ.T
    t = xyz / _WHITE
    f = np.where(t > _DELTA**3, np.cbrt(t), t / (3.0 * _DELTA**2) + 4.0 / 29.0)
    lab = np.empty_like(f)
    lab[..., 0] = 116.0 * f[..., 1] - 16.0
    lab[..., 1] = 500.0 * (f[..., 0] - f[..., 1])
    lab[..., 2] = 200.0 * (f[..., 1] - f[..., 2])
    return lab


def delta_e(lab1: np.ndarray, lab2: np.ndarray) -> float:
    """CIE76 color difference: Euclidean distance in Lab."""
    d = np.asarray(lab1, dtype=np.float64) - np.asarray(lab2, dtype=np.float64)
    return float(np.sqrt(np.sum(d * d, axis=-1)))


@dataclass
class Descriptor:
    kind: str
    values: np.ndarray


@dataclass
class MatchTable:
    kind: str
    # one row per unlabeled image: [(labeled index, distance), ...] ascending
    rows: list = field(default_factory=list)


def _box_weights(n_in: int, n_out: int) -> np.ndarray:
    """Exact area-overlap weights mapping n_in samples onto n_out cells."""
    w = np.zeros((n_out, n_in))
    cell = n_in / n_out
    for i in range(n_out):
        lo, hi = i * cell, (i + 1) * cell
        c0, c1 = int(np.floor(lo)), min(int(np.ceil(hi)), n_in)
        for c in range(c0, c1):
            w[i, c] = min(hi, c + 1) - max(lo, c)
    return w / cell


def image_descriptor(image: np.ndarray) -> Descriptor:
    """Mean-Lab triple for RGB images, 32x32 box thumbnail for grayscale."""
    image = ensure_image(image)
    if image.shape[2] == 3:
        lab = srgb_to_lab(image)
        return Descriptor(KIND_COLOR, lab.reshape(-1, 3).mean(axis=0))
    h, w = image.shape[:2]
    wr = _box_weights(h, THUMB_SIZE)
    wc = _box_weights(w, THUMB_SIZE)
    thumb = wr @ image[:, :, 0] @ wc.T
    return Descriptor(KIND_GRAY, thumb.reshape(-1))


def match_top_k(unlabeled: list, labeled: list, k: int) -> MatchTable:
    """k nearest labeled descriptors per unlabeled row, ties to lower index."""
    if not labeled:
        raise ValidationError("match_top_k: labeled descriptor set is empty")
    kinds = {d.kind for d in unlabeled} | {d.kind for d in labeled}
    if len(kinds) != 1:
        raise ValidationError(f"match_top_k: mixed descriptor kinds {sorted(kinds)}")
    if k < 1:
        raise ValidationError(f"match_top_k: k must be >= 1, got {k}")
    k = min(k, len(labeled))
    lab = np.stack([d.values for d in labeled])
    table = MatchTable(kind=kinds.pop())
    for d in unlabeled:
        diff = lab - d.values[None, :]
        dist = np.sqrt(np.sum(diff * diff, axis=1))
        order = np.argsort(dist, kind="stable")[:k]
        table.rows.append([(int(i), float(dist[i])) for i in order])
    return table


def sample_match(table: MatchTable, row: int, rng: np.random.Generator) -> int:
    """Uniform draw of a labeled index from one match-table row."""
    if not 0 <= row < len(table.rows):
        raise ValidationError(f"sample_match: row {row} out of range")
    entries = table.rows[row]
    return entries[int(rng.integers(len(entries)))][0]
