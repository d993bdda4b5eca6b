"""Training objective kernels with analytic gradients.

Every kernel returns its scalar value together with the exact gradient with
respect to the student prediction logits, so the network backward pass can be
driven without any autodiff framework. Values are means over all pixels,
which keeps the unlabeled weighting independent of image resolution. Teacher
predictions enter all consistency terms as constants (stop-gradient):
gradients are simply never propagated through them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .arrays import ValidationError, clamp_prob

CONSISTENCY_VARIANTS = ("mse", "ce", "whole-image", "none")


class UndefinedWeightError(ValidationError):
    """Positive-class weight is undefined (no positive pixels)."""


@dataclass
class LossResult:
    value: float
    grad: np.ndarray  # d value / d logit, same shape as the prediction


def stable_sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z, dtype=np.float64)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _softplus(z: np.ndarray) -> np.ndarray:
    # log(1 + e^z) without overflow
    return np.log1p(np.exp(-np.abs(z))) + np.maximum(z, 0.0)


def positive_weight(p_total: int, p_pos: int) -> float:
    """Class-imbalance weight ln(total pixels / positive pixels)."""
    if p_pos < 1:
        raise UndefinedWeightError("positive_weight: no positive pixels, weight undefined")
    if p_total < p_pos:
        raise ValidationError(f"positive_weight: total {p_total} < positive {p_pos}")
    return math.log(p_total / p_pos)


def _check_shapes(a: np.ndarray, b: np.ndarray, what: str) -> None:
    if a.shape != b.shape:
        raise ValidationError(f"{what}: shape mismatch {a.shape} vs {b.shape}")


def weighted_bce(logits: np.ndarray, target: np.ndarray, w_pos: float = 1.0) -> LossResult:
    """Binary cross entropy on logits with extra weight on positive pixels.

    Fused log-sigmoid form: loss_i = w*y*softplus(-z) + (1-y)*softplus(z),
    mean over all pixels.
    """
    logits = np.asarray(logits, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    _check_shapes(logits, target, "weighted_bce")
    n = logits.size
    per_pixel = w_pos * target * _softplus(-logits) + (1.0 - target) * _softplus(logits)
    p = stable_sigmoid(logits)
    grad = (-w_pos * target * (1.0 - p) + (1.0 - target) * p) / n
    return LossResult(value=float(per_pixel.mean()), grad=grad)


def background_consistency_mse(
    student_pred: np.ndarray, teacher_pred: np.ndarray, mask: np.ndarray
) -> LossResult:
    """Mean squared student/teacher disagreement outside the pasted mask.

    value = mean_i [(s_i - t_i) * (1 - y_i)]^2; the gradient flows only
    through the student and is exactly zero wherever y_i = 1.
    """
    s = np.asarray(student_pred, dtype=np.float64)
    t = np.asarray(teacher_pred, dtype=np.float64)
    y = np.asarray(mask, dtype=np.float64)
    _check_shapes(s, t, "background_consistency_mse")
    _check_shapes(s, y, "background_consistency_mse mask")
    n = s.size
    d = (s - t) * (1.0 - y)
    grad = 2.0 * d * (1.0 - y) / n * (s * (1.0 - s))
    return LossResult(value=float(np.mean(d * d)), grad=grad)


def background_consistency_ce(
    student_pred: np.ndarray, teacher_pred: np.ndarray, mask: np.ndarray
) -> LossResult:
    """Cross entropy of the student against the teacher as a soft target,
    masked to the background (1 - y), mean over all pixels."""
    s = np.asarray(student_pred, dtype=np.float64)
    t = np.asarray(teacher_pred, dtype=np.float64)
    y = np.asarray(mask, dtype=np.float64)
    _check_shapes(s, t, "background_consistency_ce")
    _check_shapes(s, y, "background_consistency_ce mask")
    n = s.size
    sc = clamp_prob(s)
    per_pixel = -(t * np.log(sc) + (1.0 - t) * np.log(1.0 - sc)) * (1.0 - y)
    grad = (s - t) * (1.0 - y) / n
    return LossResult(value=float(per_pixel.mean()), grad=grad)


def whole_image_consistency(student_pred: np.ndarray, teacher_pred: np.ndarray) -> LossResult:
    """Unmasked MSE between student and teacher predictions on the same input."""
    s = np.asarray(student_pred, dtype=np.float64)
    t = np.asarray(teacher_pred, dtype=np.float64)
    _check_shapes(s, t, "whole_image_consistency")
    n = s.size
    d = s - t
    grad = 2.0 * d / n * (s * (1.0 - s))
    return LossResult(value=float(np.mean(d * d)), grad=grad)


@dataclass
class TotalLoss:
    value: float
    labeled_bce: float
    synth_bce: float
    consistency: float
    grads: dict = field(default_factory=dict)


def total_loss(
    net,
    params: dict,
    teacher_params: dict,
    labeled_batch: tuple,
    synth_batch,
    lambda_u: float,
    w_pos: float,
    variant: str,
) -> TotalLoss:
    """Combined objective and its parameter gradients.

    L = L_labeled + lambda_u * (L_synth_bce + L_consistency), all terms batch
    means. labeled_batch is (images (B,H,W,C), masks (B,H,W)); synth_batch is
    (originals, blendeds, masks) or None. The teacher network consumes the
    clean originals for the background variants and the blended images for
    the whole-image variant; its outputs are constants.
    """
    if lambda_u < 0:
        raise ValidationError(f"lambda_u must be >= 0, got {lambda_u}")
    if variant not in CONSISTENCY_VARIANTS:
        raise ValidationError(f"unknown consistency variant {variant!r}")

    x_l, y_l = labeled_batch
    logits_l, cache_l = net.forward(params, x_l)
    bce_l = weighted_bce(logits_l, y_l, w_pos)
    grads = net.backward(params, cache_l, bce_l.grad)

    synth_bce_val = 0.0
    consistency_val = 0.0
    has_synth = synth_batch is not None and len(synth_batch[0]) > 0
    if lambda_u > 0 and has_synth:
        x_orig, x_blend, y_s = synth_batch
        logits_s, cache_s = net.forward(params, x_blend)
        bce_s = weighted_bce(logits_s, y_s, w_pos)
        synth_bce_val = bce_s.value
        dlogits = bce_s.grad
        if variant != "none":
            student_p = clamp_prob(stable_sigmoid(logits_s))
            teacher_in = x_blend if variant == "whole-image" else x_orig
            teacher_logits, _ = net.forward(teacher_params, teacher_in, want_cache=False)
            teacher_p = clamp_prob(stable_sigmoid(teacher_logits))
            if variant == "mse":
                cons = background_consistency_mse(student_p, teacher_p, y_s)
            elif variant == "ce":
                cons = background_consistency_ce(student_p, teacher_p, y_s)
            else:
                cons = whole_image_consistency(student_p, teacher_p)
            consistency_val = cons.value
            dlogits = dlogits + cons.grad
        grads_u = net.backward(params, cache_s, dlogits)
        for name in grads:
            grads[name] += lambda_u * grads_u[name]

    value = bce_l.value + lambda_u * (synth_bce_val + consistency_val)
    return TotalLoss(
        value=value,
        labeled_bce=bce_l.value,
        synth_bce=synth_bce_val,
        consistency=consistency_val,
        grads=grads,
    )
