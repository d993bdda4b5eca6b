"""Finite-difference verification of the hand-written gradients.

For each loss variant the full-network analytic gradient is compared against
central differences of the scalar loss at randomly sampled parameters. This
is the independent second route for every gradient in the package: it never
calls backward().
"""

from __future__ import annotations

import numpy as np

from .losses import total_loss
from .network import SegNet
from .rng import make_rng

VARIANTS = ("labeled", "mse", "ce", "whole-image")
REL_FLOOR = 1e-6  # gradients below this (loss is O(1)) are pure noise


def _random_mask(rng, shape):
    return (rng.random(shape) < 0.3).astype(np.float64)


def run_gradcheck(
    size: int = 8,
    channels: int = 3,
    n_samples: int = 60,
    h: float = 1e-5,
    seed: int = 0,
    lambda_u: float = 0.7,
    w_pos: float = 2.0,
    corrupt_scale: float = 1.0,
) -> dict:
    """Max relative analytic-vs-numeric gradient error per loss variant.

    corrupt_scale != 1 deliberately mis-scales the analytic gradients; the
    sensitivity of the checker itself is tested through it.
    """
    net = SegNet(in_channels=channels)
    params = net.init(make_rng(seed, 101))
    teacher = net.init(make_rng(seed, 102))
    data_rng = make_rng(seed, 103)

    x_l = data_rng.random((1, size, size, channels))
    y_l = _random_mask(data_rng, (1, size, size))
    x_orig = data_rng.random((1, size, size, channels))
    x_blend = data_rng.random((1, size, size, channels))
    y_s = _random_mask(data_rng, (1, size, size))
    labeled_batch = (x_l, y_l)
    synth_batch = (x_orig, x_blend, y_s)

    def loss_of(variant, p):
        if variant == "labeled":
            return total_loss(net, p, teacher, labeled_batch, None, 0.0, w_pos, "none")
        return total_loss(net, p, teacher, labeled_batch, synth_batch, lambda_u, w_pos, variant)

    flat_index = []
    for name, arr in params.items():
        flat_index.extend((name, i) for i in range(arr.size))

    report = {"h": h, "n_samples": n_samples, "variants": {}}
    worst = 0.0
    for variant in VARIANTS:
        analytic = loss_of(variant, params).grads
        if corrupt_scale != 1.0:
            analytic = {k: v * corrupt_scale for k, v in analytic.items()}
        sample_rng = make_rng(seed, 104)
        picks = sample_rng.choice(len(flat_index), size=n_samples, replace=False)
        max_rel = 0.0
        for pick in picks:
            name, idx = flat_index[int(pick)]
            original = params[name].flat[idx]
            params[name].flat[idx] = original + h
            plus = loss_of(variant, params).value
            params[name].flat[idx] = original - h
            minus = loss_of(variant, params).value
            params[name].flat[idx] = original
            numeric = (plus - minus) / (2.0 * h)
            a = analytic[name].flat[idx]
            rel = abs(a - numeric) / max(abs(a), abs(numeric), REL_FLOOR)
            max_rel = max(max_rel, rel)
        report["variants"][variant] = {"max_rel_error": max_rel, "n_checked": int(n_samples)}
        worst = max(worst, max_rel)
    report["max_rel_error"] = worst
    return report
