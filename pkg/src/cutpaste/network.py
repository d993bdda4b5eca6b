"""Small encoder-decoder segmentation network with hand-written backprop.

Two downsampling levels with channel widths (8, 16, 32), double 3x3 convs
per level, ELU activations, 2x2 average pooling, nearest-neighbor 2x
upsampling, skip connections by channel concatenation and a final 1x1 conv
producing one logit channel (~30k parameters at 3 input channels). ELU and
average pooling keep the network C1-smooth, so analytic gradients agree with
central finite differences to high precision.

Arrays are channels-last: images (B, H, W, C), logits (B, H, W).
"""

from __future__ import annotations

import json
import math

import numpy as np

from .arrays import ValidationError, clamp_prob
from .tensorio import read_tensor, write_tensor

DEFAULT_WIDTHS = (8, 16, 32)


def conv_specs(in_channels: int, widths=DEFAULT_WIDTHS):
    """Ordered (name, kernel size, cin, cout) table defining the topology."""
    w0, w1, w2 = widths
    return [
        ("enc1a", 3, in_channels, w0),
        ("enc1b", 3, w0, w0),
        ("enc2a", 3, w0, w1),
        ("enc2b", 3, w1, w1),
        ("bot_a", 3, w1, w2),
        ("bot_b", 3, w2, w2),
        ("dec2a", 3, w2 + w1, w1),
        ("dec2b", 3, w1, w1),
        ("dec1a", 3, w1 + w0, w0),
        ("dec1b", 3, w0, w0),
        ("out", 1, w0, 1),
    ]


def param_order(in_channels: int, widths=DEFAULT_WIDTHS):
    names = []
    for name, _, _, _ in conv_specs(in_channels, widths):
        names.extend([f"{name}_w", f"{name}_b"])
    return names


def init_params(in_channels: int, rng: np.random.Generator, widths=DEFAULT_WIDTHS) -> dict:
    """Fan-in-scaled uniform kernels, zero biases."""
    params = {}
    for name, k, cin, cout in conv_specs(in_channels, widths):
        fan_in = k * k * cin
        bound = 1.0 / math.sqrt(fan_in)
        shape = (cin, cout) if k == 1 else (k, k, cin, cout)
        params[f"{name}_w"] = rng.uniform(-bound, bound, size=shape)
        params[f"{name}_b"] = np.zeros(cout)
    return params


def count_params(params: dict) -> int:
    return sum(int(p.size) for p in params.values())


# --- layer primitives -------------------------------------------------------


def _conv3_forward(x, w, b):
    bsz, h, wd, cin = x.shape
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    cols = np.empty((bsz, h, wd, 9, cin))
    k = 0
    for dy in range(3):
        for dx in range(3):
            cols[:, :, :, k, :] = xp[:, dy : dy + h, dx : dx + wd, :]
            k += 1
    y = cols.reshape(bsz * h * wd, 9 * cin) @ w.reshape(9 * cin, -1)
    return y.reshape(bsz, h, wd, -1) + b


def _conv3_backward(x, w, dy):
    bsz, h, wd, cin = x.shape
    cout = dy.shape[3]
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    cols = np.empty((bsz, h, wd, 9, cin))
    k = 0
    for dyy in range(3):
        for dxx in range(3):
            cols[:, :, :, k, :] = xp[:, dyy : dyy + h, dxx : dxx + wd, :]
            k += 1
    dy_flat = dy.reshape(bsz * h * wd, cout)
    dw = (cols.reshape(bsz * h * wd, 9 * cin).T @ dy_flat).reshape(3, 3, cin, cout)
    db = dy_flat.sum(axis=0)
    dcols = (dy_flat @ w.reshape(9 * cin, cout).T).reshape(bsz, h, wd, 9, cin)
    dxp = np.zeros_like(xp)
    k = 0
    for dyy in range(3):
        for dxx in range(3):
            dxp[:, dyy : dyy + h, dxx : dxx + wd, :] += dcols[:, :, :, k, :]
            k += 1
    return dxp[:, 1:-1, 1:-1, :], dw, db


def _conv1_forward(x, w, b):
    return x @ w + b


def _conv1_backward(x, w, dy):
    dw = np.tensordot(x, dy, axes=([0, 1, 2], [0, 1, 2]))
    db = dy.sum(axis=(0, 1, 2))
    return dy @ w.T, dw, db


def _elu_forward(z):
    return np.where(z > 0, z, np.expm1(np.minimum(z, 0.0)))


def _elu_backward(z, dy):
    return dy * np.where(z > 0, 1.0, np.exp(np.minimum(z, 0.0)))


def _avgpool(x):
    bsz, h, w, c = x.shape
    return x.reshape(bsz, h // 2, 2, w // 2, 2, c).mean(axis=(2, 4))


def _avgpool_backward(dy):
    return np.repeat(np.repeat(dy, 2, axis=1), 2, axis=2) / 4.0


def _upsample(x):
    return np.repeat(np.repeat(x, 2, axis=1), 2, axis=2)


def _upsample_backward(dy):
    bsz, h, w, c = dy.shape
    return dy.reshape(bsz, h // 2, 2, w // 2, 2, c).sum(axis=(2, 4))


# --- network ----------------------------------------------------------------


class SegNet:
    """Fixed-topology forward/backward over a named parameter dict."""

    def __init__(self, in_channels: int, widths=DEFAULT_WIDTHS):
        self.in_channels = in_channels
        self.widths = tuple(widths)

    def init(self, rng: np.random.Generator) -> dict:
        return init_params(self.in_channels, rng, self.widths)

    def forward(self, params: dict, x: np.ndarray, want_cache: bool = True):
        """Logits (B, H, W) for images (B, H, W, C); cache feeds backward."""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 4 or x.shape[3] != self.in_channels:
            raise ValidationError(f"forward: expected (B, H, W, {self.in_channels}), got {x.shape}")
        if x.shape[1] % 4 or x.shape[2] % 4:
            raise ValidationError(f"forward: spatial dims must be divisible by 4, got {x.shape[1:3]}")

        cache = {} if want_cache else None

        def conv_elu(name, inp):
            z = _conv3_forward(inp, params[f"{name}_w"], params[f"{name}_b"])
            if cache is not None:
                cache[f"{name}_x"] = inp
                cache[f"{name}_z"] = z
            return _elu_forward(z)

        e1 = conv_elu("enc1b", conv_elu("enc1a", x))
        p1 = _avgpool(e1)
        e2 = conv_elu("enc2b", conv_elu("enc2a", p1))
        p2 = _avgpool(e2)
        bt = conv_elu("bot_b", conv_elu("bot_a", p2))
        c2 = np.concatenate([_upsample(bt), e2], axis=3)
        d2 = conv_elu("dec2b", conv_elu("dec2a", c2))
        c1 = np.concatenate([_upsample(d2), e1], axis=3)
        d1 = conv_elu("dec1b", conv_elu("dec1a", c1))
        logits = _conv1_forward(d1, params["out_w"], params["out_b"])
        if cache is not None:
            cache["out_x"] = d1
        return logits[:, :, :, 0], cache

    def backward(self, params: dict, cache: dict, dlogits: np.ndarray) -> dict:
        """Exact parameter gradients for upstream d loss / d logits."""
        if cache is None:
            raise ValidationError("backward: forward was run without a cache")
        if dlogits.shape != cache["out_x"].shape[:3]:
            raise ValidationError(
                f"backward: dlogits shape {dlogits.shape} does not match cache {cache['out_x'].shape[:3]}"
            )
        grads = {}

        dd1, grads["out_w"], grads["out_b"] = _conv1_backward(
            cache["out_x"], params["out_w"], dlogits[:, :, :, None]
        )

        def conv_elu_back(name, dout):
            dz = _elu_backward(cache[f"{name}_z"], dout)
            dx, grads[f"{name}_w"], grads[f"{name}_b"] = _conv3_backward(
                cache[f"{name}_x"], params[f"{name}_w"], dz
            )
            return dx

        w1, w2 = self.widths[1], self.widths[2]
        dc1 = conv_elu_back("dec1a", conv_elu_back("dec1b", dd1))
        dd2 = _upsample_backward(dc1[:, :, :, :w1])
        de1_skip = dc1[:, :, :, w1:]
        dc2 = conv_elu_back("dec2a", conv_elu_back("dec2b", dd2))
        dbt = _upsample_backward(dc2[:, :, :, :w2])
        de2_skip = dc2[:, :, :, w2:]
        dp2 = conv_elu_back("bot_a", conv_elu_back("bot_b", dbt))
        de2 = _avgpool_backward(dp2) + de2_skip
        dp1 = conv_elu_back("enc2a", conv_elu_back("enc2b", de2))
        de1 = _avgpool_backward(dp1) + de1_skip
        conv_elu_back("enc1a", conv_elu_back("enc1b", de1))
        return grads

    def predict(self, params: dict, x: np.ndarray) -> np.ndarray:
        """Positive-class probability map: clamped sigmoid of the logits."""
        from .losses import stable_sigmoid

        logits, _ = self.forward(params, x, want_cache=False)
        return clamp_prob(stable_sigmoid(logits))


# --- parameter persistence ---------------------------------------------------


def save_params(params: dict, in_channels: int, widths, cpt_path, index_path) -> None:
    """Flat float32 tensor (.cpt) plus a JSON shape index."""
    order = param_order(in_channels, widths)
    flat = np.concatenate([np.asarray(params[name], dtype=np.float64).reshape(-1) for name in order])
    write_tensor(flat, cpt_path)
    index = {
        "in_channels": in_channels,
        "widths": list(widths),
        "order": order,
        "shapes": {name: list(params[name].shape) for name in order},
    }
    with open(index_path, "w") as fh:
        json.dump(index, fh, indent=1)


def load_params(cpt_path, index_path=None):
    """Returns (params dict, in_channels, widths)."""
    if index_path is None:
        index_path = str(cpt_path).rsplit(".", 1)[0] + ".index.json"
    with open(index_path) as fh:
        index = json.load(fh)
    flat = read_tensor(cpt_path).astype(np.float64)
    params = {}
    offset = 0
    for name in index["order"]:
        shape = tuple(index["shapes"][name])
        size = int(np.prod(shape)) if shape else 1
        params[name] = flat[offset : offset + size].reshape(shape)
        offset += size
    if offset != flat.size:
        raise ValidationError(f"{cpt_path}: parameter payload size mismatch")
    return params, index["in_channels"], tuple(index["widths"])
