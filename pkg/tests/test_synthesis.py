import numpy as np
import pytest

from cutpaste.arrays import ValidationError
from cutpaste.rng import make_rng
from cutpaste.synthesis import (
    Foreground,
    NoForegroundError,
    SynthConfig,
    add_background_noise,
    apply_affine,
    apply_color,
    color_jitter,
    extract_foreground,
    feather_mask,
    gaussian_kernel,
    geometric_jitter,
    paste,
    synthesize,
    synthesize_with_retry,
    valid_region_mask,
)


def _image(h=16, w=16, c=3, seed=0):
    return make_rng(seed, 900).random((h, w, c))


def _zero_cfg(**kw):
    base = dict(
        rotation_deg=0.0,
        translate_frac=0.0,
        scale_min=1.0,
        scale_max=1.0,
        color_jitter=0.0,
        mask_blur=False,
        background_noise=False,
    )
    base.update(kw)
    return SynthConfig(**base)


# --- extract ------------------------------------------------------------


def test_extract_full_mask_is_identity():
    img = _image()
    fg = extract_foreground(img, np.ones((16, 16), dtype=np.uint8))
    assert np.array_equal(fg.patch, img)


def test_extract_empty_mask_rejects():
    with pytest.raises(NoForegroundError):
        extract_foreground(_image(), np.zeros((16, 16), dtype=np.uint8))


def test_extract_checkerboard_zero_off_mask():
    img = _image()
    mask = np.indices((16, 16)).sum(axis=0) % 2
    fg = extract_foreground(img, mask.astype(np.uint8))
    off = mask == 0
    assert np.all(fg.patch[off] == 0.0)
    assert np.array_equal(fg.patch[~off], img[~off])


# --- geometric ----------------------------------------------------------


def test_affine_identity_is_bit_exact():
    img = _image()
    mask = np.zeros((16, 16), dtype=np.uint8)
    mask[5:9, 6:11] = 1
    fg = extract_foreground(img, mask)
    out = apply_affine(fg, 0.0, 1.0, 0.0, 0.0)
    assert np.array_equal(out.patch, fg.patch)
    assert np.array_equal(out.mask, fg.mask)


def test_affine_integer_translation_moves_exactly():
    img = np.zeros((16, 16, 1))
    mask = np.zeros((16, 16), dtype=np.uint8)
    img[8, 4, 0] = 0.7
    mask[8, 4] = 1
    fg = extract_foreground(img, mask)
    out = apply_affine(fg, 0.0, 1.0, 3.0, 0.0)
    assert out.mask[8, 7] == 1 and out.mask.sum() == 1
    assert out.patch[8, 7, 0] == 0.7


def test_affine_rotation_preserves_area_within_10pct():
    mask = np.zeros((64, 64), dtype=np.uint8)
    mask[30:34, 12:52] = 1  # axis-aligned bar
    img = np.ones((64, 64, 1)) * mask[:, :, None]
    fg = extract_foreground(img, mask)
    out = apply_affine(fg, 90.0, 1.0, 0.0, 0.0)
    assert abs(int(out.mask.sum()) - int(mask.sum())) <= 0.1 * mask.sum()


def test_affine_drops_content_leaving_canvas():
    mask = np.zeros((16, 16), dtype=np.uint8)
    mask[7:9, 0:4] = 1
    img = np.ones((16, 16, 1)) * mask[:, :, None]
    fg = extract_foreground(img, mask)
    out = apply_affine(fg, 0.0, 1.0, -2.0, 0.0)
    assert out.mask.sum() == 2 * 2  # half the bar slid off


def test_affine_empty_after_transform_rejects():
    mask = np.zeros((16, 16), dtype=np.uint8)
    mask[8, 8] = 1
    fg = extract_foreground(np.ones((16, 16, 1)), mask)
    with pytest.raises(NoForegroundError):
        apply_affine(fg, 0.0, 1.0, 40.0, 0.0)


def test_geometric_jitter_zero_ranges_identity():
    img = _image()
    mask = (make_rng(1, 901).random((16, 16)) < 0.3).astype(np.uint8)
    fg = extract_foreground(img, mask)
    out = geometric_jitter(fg, _zero_cfg(), make_rng(5, 0))
    assert np.array_equal(out.patch, fg.patch)
    assert np.array_equal(out.mask, fg.mask)


def test_geometric_jitter_deterministic():
    img = _image()
    mask = np.zeros((16, 16), dtype=np.uint8)
    mask[4:10, 4:10] = 1
    fg = extract_foreground(img, mask)
    cfg = SynthConfig()
    a = geometric_jitter(fg, cfg, make_rng(3, 44))
    b = geometric_jitter(fg, cfg, make_rng(3, 44))
    assert np.array_equal(a.patch, b.patch) and np.array_equal(a.mask, b.mask)


# --- color --------------------------------------------------------------


def test_color_identity_factors():
    img = _image()
    mask = np.ones((16, 16), dtype=np.uint8)
    fg = extract_foreground(img, mask)
    out = apply_color(fg, 1.0, 1.0, 1.0)
    assert np.array_equal(out.patch, fg.patch)


def test_color_zero_brightness():
    fg = extract_foreground(_image(), np.ones((16, 16), dtype=np.uint8))
    out = apply_color(fg, 0.0, 1.0, 1.0)
    assert np.all(out.patch == 0.0)


def test_color_contrast_closed_form():
    # two-valued patch: recompute (v - mean) * c + mean by hand
    img = np.zeros((4, 4, 1))
    img[:2] = 0.2
    img[2:] = 0.6
    mask = np.ones((4, 4), dtype=np.uint8)
    fg = extract_foreground(img, mask)
    out = apply_color(fg, 1.0, 1.1, 1.0)
    mean = 0.4
    assert np.allclose(out.patch[:2], (0.2 - mean) * 1.1 + mean, atol=1e-12)
    assert np.allclose(out.patch[2:], (0.6 - mean) * 1.1 + mean, atol=1e-12)


def test_color_contrast_clamps():
    img = np.full((2, 2, 1), 0.5)
    img[0, 0, 0] = 1.0
    fg = extract_foreground(img, np.ones((2, 2), dtype=np.uint8))
    out = apply_color(fg, 1.0, 3.0, 1.0)
    assert out.patch.max() <= 1.0 and out.patch.min() >= 0.0


def test_color_saturation_blends_with_luma():
    img = np.zeros((1, 1, 3))
    img[0, 0] = [0.8, 0.2, 0.4]
    fg = Foreground(patch=img, mask=np.ones((1, 1), dtype=np.uint8))
    out = apply_color(fg, 1.0, 1.0, 0.0)  # full desaturation -> luma
    luma = 0.299 * 0.8 + 0.587 * 0.2 + 0.114 * 0.4
    assert np.allclose(out.patch[0, 0], luma, atol=1e-12)


def test_color_jitter_mask_unchanged_and_off_mask_zero():
    img = _image()
    mask = (make_rng(2, 902).random((16, 16)) < 0.4).astype(np.uint8)
    fg = extract_foreground(img, mask)
    out = color_jitter(fg, SynthConfig(), make_rng(0, 7))
    assert np.array_equal(out.mask, mask)
    assert np.all(out.patch[mask == 0] == 0.0)


# --- kernels & blurring ---------------------------------------------------


def test_gaussian_kernel_normalized_and_symmetric():
    for sigma in (0.5, 1.0, 1.5, 3.0):
        k = gaussian_kernel(sigma)
        assert abs(k.sum() - 1.0) <= 1e-12
        assert np.allclose(k, k[::-1], atol=0)
        assert len(k) == 2 * int(np.ceil(3 * sigma)) + 1


def test_gaussian_kernel_center_weight_oracle():
    # direct summation of raw weights for sigma = 1
    raw = [np.exp(-(i**2) / 2.0) for i in range(-3, 4)]
    expected_center = 1.0 / sum(raw)
    k = gaussian_kernel(1.0)
    assert k[3] == pytest.approx(expected_center, abs=1e-12)


def test_gaussian_kernel_rejects_nonpositive():
    with pytest.raises(ValidationError):
        gaussian_kernel(0.0)


def test_feather_constant_masks():
    ones = np.ones((10, 10), dtype=np.uint8)
    zeros = np.zeros((10, 10), dtype=np.uint8)
    assert np.allclose(feather_mask(ones, 1.5), 1.0, atol=1e-12)
    assert np.allclose(feather_mask(zeros, 1.5), 0.0, atol=0)


def test_feather_single_pixel_outer_product():
    # a centered single pixel far from edges: blur = 2-D kernel outer product
    mask = np.zeros((21, 21), dtype=np.uint8)
    mask[10, 10] = 1
    sigma = 1.5
    k = gaussian_kernel(sigma)
    direct = np.outer(k, k)
    alpha = feather_mask(mask, sigma)
    r = len(k) // 2
    assert np.allclose(alpha[10 - r : 10 + r + 1, 10 - r : 10 + r + 1], direct, atol=1e-12)
    assert alpha[0, 0] == 0.0


def test_feather_2d_direct_convolution_oracle():
    rng = np.random.default_rng(4)
    mask = (rng.random((12, 12)) < 0.3).astype(np.uint8)
    sigma = 1.0
    k = gaussian_kernel(sigma)
    r = len(k) // 2
    padded = np.pad(mask.astype(float), r, mode="edge")
    oracle = np.zeros((12, 12))
    for i in range(12):
        for j in range(12):
            acc = 0.0
            for di in range(-r, r + 1):
                for dj in range(-r, r + 1):
                    acc += k[di + r] * k[dj + r] * padded[i + di + r, j + dj + r]
            oracle[i, j] = acc
    assert np.allclose(feather_mask(mask, sigma), np.clip(oracle, 0, 1), atol=1e-12)


def test_feather_sigma_zero_identity():
    mask = (np.random.default_rng(0).random((8, 8)) < 0.5).astype(np.uint8)
    assert np.array_equal(feather_mask(mask, 0.0), mask.astype(float))


# --- noise ----------------------------------------------------------------


def test_noise_zero_sigma_identity():
    img = _image()
    out = add_background_noise(img, 0.0, make_rng(0, 1))
    assert np.array_equal(out, img)
    assert out is not img


def test_noise_moment_check():
    img = np.full((500, 500, 3), 0.5)  # mid-gray: clamping inactive
    out = add_background_noise(img, 0.01, make_rng(10, 2))
    delta = out - img
    assert 0.0095 <= delta.std() <= 0.0105
    assert abs(delta.mean()) <= 1e-4


def test_noise_deterministic():
    img = _image()
    a = add_background_noise(img, 0.05, make_rng(3, 3))
    b = add_background_noise(img, 0.05, make_rng(3, 3))
    assert np.array_equal(a, b)


# --- valid region -----------------------------------------------------------


def test_valid_region_black_and_white():
    tau = 10.0 / 255.0
    assert valid_region_mask(np.zeros((4, 4, 3)), tau).sum() == 0
    assert valid_region_mask(np.ones((4, 4, 3)), tau).sum() == 16


def test_valid_region_aperture_exact_count():
    tau = 10.0 / 255.0
    yy, xx = np.mgrid[0:32, 0:32]
    disc = ((yy - 15.5) ** 2 + (xx - 15.5) ** 2 <= 12**2)
    img = np.where(disc[:, :, None], 0.8, 0.0) * np.ones((32, 32, 3))
    valid = valid_region_mask(img, tau)
    assert int(valid.sum()) == int(disc.sum())
    assert np.array_equal(valid.astype(bool), disc)


# --- paste -------------------------------------------------------------------


def test_paste_empty_mask_rejects():
    bg = _image()
    fg = Foreground(patch=np.zeros((16, 16, 3)), mask=np.zeros((16, 16), dtype=np.uint8))
    with pytest.raises(NoForegroundError):
        paste(bg, fg, np.zeros((16, 16)), np.ones((16, 16), dtype=np.uint8))


def test_paste_hard_composite_exact():
    bg = _image(seed=1)
    img = _image(seed=2)
    mask = np.zeros((16, 16), dtype=np.uint8)
    mask[3:8, 3:8] = 1
    fg = extract_foreground(img, mask)
    out, out_mask = paste(bg, fg, mask.astype(float), np.ones((16, 16), dtype=np.uint8))
    on = mask.astype(bool)
    assert np.array_equal(out[on], img[on])
    assert np.array_equal(out[~on], bg[~on])
    assert np.array_equal(out_mask, mask)


def test_paste_convex_blend_single_pixel():
    bg = np.zeros((4, 4, 1))
    patch = np.zeros((4, 4, 1))
    patch[1, 1, 0] = 1.0
    mask = np.zeros((4, 4), dtype=np.uint8)
    mask[1, 1] = 1
    fg = Foreground(patch=patch, mask=mask)
    alpha = np.zeros((4, 4))
    alpha[1, 1] = 0.5
    out, _ = paste(bg, fg, alpha, np.ones((4, 4), dtype=np.uint8))
    assert out[1, 1, 0] == 0.5


def test_paste_clips_mask_to_valid_region():
    bg = _image(seed=3)
    mask = np.zeros((16, 16), dtype=np.uint8)
    mask[6:10, 6:10] = 1
    fg = extract_foreground(_image(seed=4), mask)
    valid = np.zeros((16, 16), dtype=np.uint8)
    valid[:, :8] = 1
    out, out_mask = paste(bg, fg, mask.astype(float), valid)
    assert np.array_equal(out_mask, mask * valid)
    # invalid region shows pure background
    assert np.array_equal(out[:, 8:], bg[:, 8:])


# --- synthesize ----------------------------------------------------------------


def _labeled_pair(seed=5):
    img = make_rng(seed, 903).random((16, 16, 3)) * 0.5 + 0.3
    mask = np.zeros((16, 16), dtype=np.uint8)
    mask[4:9, 5:10] = 1
    return img, mask


def test_synthesize_degenerate_pipeline_exact():
    unlabeled = make_rng(6, 904).random((16, 16, 3)) * 0.5 + 0.3
    img, mask = _labeled_pair()
    sample = synthesize(unlabeled, (img, mask), _zero_cfg(), make_rng(0, 5))
    on = mask.astype(bool)
    assert np.array_equal(sample.mask, mask)
    assert np.array_equal(sample.blended[on], img[on])
    assert np.array_equal(sample.blended[~on], unlabeled[~on])
    assert np.array_equal(sample.original, unlabeled)


def test_synthesize_same_seed_bit_identical():
    unlabeled = make_rng(6, 904).random((16, 16, 3)) * 0.5 + 0.3
    pair = _labeled_pair()
    cfg = SynthConfig()
    a = synthesize(unlabeled, pair, cfg, make_rng(42, 6))
    b = synthesize(unlabeled, pair, cfg, make_rng(42, 6))
    assert np.array_equal(a.blended, b.blended)
    assert np.array_equal(a.mask, b.mask)


def test_synthesize_rejects_paste_on_dead_region():
    # valid only on the left half; lesion on the right; no jitter
    unlabeled = np.zeros((16, 16, 3))
    unlabeled[:, :8] = 0.5
    img, mask = _labeled_pair()  # mask columns 5..9 -> clipped to 5..7 stays
    mask_right = np.zeros_like(mask)
    mask_right[4:9, 10:14] = 1  # fully in the dead half
    with pytest.raises(NoForegroundError):
        synthesize(unlabeled, (img, mask_right), _zero_cfg(), make_rng(0, 7))


def test_synthesize_mask_stays_binary_with_feathering():
    unlabeled = make_rng(6, 904).random((16, 16, 3)) * 0.5 + 0.3
    sample = synthesize(unlabeled, _labeled_pair(), SynthConfig(), make_rng(1, 8))
    assert set(np.unique(sample.mask)) <= {0, 1}


def test_synthesize_blend_convexity():
    unlabeled = make_rng(8, 905).random((16, 16, 3))
    cfg = SynthConfig(background_noise=False)
    sample = synthesize(unlabeled, _labeled_pair(), cfg, make_rng(2, 9))
    assert sample.blended.min() >= 0.0 and sample.blended.max() <= 1.0


def test_synthesize_clipping_invariant():
    unlabeled = np.zeros((16, 16, 3))
    unlabeled[:, :8] = 0.5
    img, mask = _labeled_pair()
    cfg = SynthConfig()
    valid = valid_region_mask(unlabeled, cfg.oob_tau)
    for i in range(20):
        try:
            sample = synthesize(unlabeled, (img, mask), cfg, make_rng(3, 100 + i))
        except NoForegroundError:
            continue
        assert np.all(sample.mask * (1 - valid) == 0)


def test_synthesize_with_retry_counts_rejections():
    unlabeled = np.zeros((16, 16, 3))  # everything out of bounds -> always reject
    img, mask = _labeled_pair()

    def pick(attempt, rng):
        return img, mask, 0

    sample, rejections = synthesize_with_retry(unlabeled, pick, _zero_cfg(), make_rng(0, 10), max_retries=3)
    assert sample is None
    assert rejections == 4


def test_synth_config_validation():
    with pytest.raises(ValidationError):
        SynthConfig(scale_min=0.0).validate()
    with pytest.raises(ValidationError):
        SynthConfig(oob_tau=1.0).validate()
    with pytest.raises(ValidationError):
        SynthConfig(feather_sigma=-1.0).validate()
