"""Minimal bias-free conv/fc network with exact backprop, in plain numpy.

Just enough machinery to train the synthetic-corpus networks: valid stride-1
convolution, average pooling, rectifier activations, inverted dropout on fc
hidden layers, and softmax cross-entropy.  The activation convention is
fixed: relu after every conv layer and every fc layer except the last.

Parameters are a list of float64 arrays matching
``ArchitectureSpec.weight_shapes()`` exactly (no biases), so an epoch's
parameters are literally the checkpoint tensors.
"""

from __future__ import annotations

import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .checkpoints import ArchitectureSpec


def init_params(arch: ArchitectureSpec, rng: np.random.Generator) -> list[np.ndarray]:
    """Uniform +/- 1/sqrt(fan_in) init per learnable layer."""
    params = []
    for shape in arch.weight_shapes():
        fan_in = math.prod(shape[1:]) if len(shape) == 4 else shape[0]
        bound = 1.0 / math.sqrt(fan_in)
        params.append(rng.uniform(-bound, bound, size=shape))
    return params


def _conv_forward(x: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    # x: (B, c, h, w), kernel: (f, c, kh, kw) -> (B, f, oh, ow)
    windows = sliding_window_view(x, kernel.shape[2:], axis=(2, 3))
    return np.einsum("bcyxuv,fcuv->bfyx", windows, kernel, optimize=True)


def _conv_backward(x: np.ndarray, kernel: np.ndarray, d_out: np.ndarray):
    kh, kw = kernel.shape[2:]
    windows = sliding_window_view(x, (kh, kw), axis=(2, 3))
    d_kernel = np.einsum("bfyx,bcyxuv->fcuv", d_out, windows, optimize=True)
    padded = np.pad(d_out, ((0, 0), (0, 0), (kh - 1, kh - 1), (kw - 1, kw - 1)))
    pad_windows = sliding_window_view(padded, (kh, kw), axis=(2, 3))
    d_x = np.einsum("bfyxuv,fcuv->bcyx", pad_windows, kernel[:, :, ::-1, ::-1],
                    optimize=True)
    return d_x, d_kernel


def forward(arch: ArchitectureSpec, params: list[np.ndarray], x: np.ndarray,
            train: bool = False, rng: np.random.Generator | None = None):
    """Logits plus the cache needed by :func:`backward`.

    Dropout fires only when ``train`` is true and a layer carries a nonzero
    rate; masks come from ``rng`` and are replayed exactly by backward.
    """
    cache = []
    p_idx = 0
    n_fc = sum(1 for l in arch.layers if l.kind == "fc")
    fc_seen = 0
    for layer in arch.layers:
        entry = {"layer": layer, "input": x}
        if layer.kind == "conv":
            kernel = params[p_idx]
            p_idx += 1
            pre = _conv_forward(x, kernel)
            x = np.maximum(pre, 0.0)
            entry["pre"] = pre
        elif layer.kind == "pool":
            b, c, h, w = x.shape
            p = layer.window
            x = x.reshape(b, c, h // p, p, w // p, p).mean(axis=(3, 5))
        else:
            fc_seen += 1
            if x.ndim > 2:
                entry["spatial_shape"] = x.shape
                x = x.reshape(x.shape[0], -1)
                entry["input"] = x
            w_mat = params[p_idx]
            p_idx += 1
            pre = x @ w_mat
            if fc_seen < n_fc:
                x = np.maximum(pre, 0.0)
                entry["pre"] = pre
                if train and layer.dropout_rate > 0.0:
                    keep = 1.0 - layer.dropout_rate
                    mask = (rng.random(x.shape) < keep) / keep
                    x = x * mask
                    entry["dropout_mask"] = mask
            else:
                x = pre  # final layer emits logits
        cache.append(entry)
    return x, cache


def backward(arch: ArchitectureSpec, params: list[np.ndarray], cache: list,
             d_logits: np.ndarray) -> list[np.ndarray]:
    """Gradients w.r.t. every parameter tensor, same order as ``params``."""
    grads = [None] * len(params)
    p_idx = len(params)
    d_x = d_logits
    for entry in reversed(cache):
        layer = entry["layer"]
        if layer.kind == "conv":
            p_idx -= 1
            d_x = np.where(entry["pre"] > 0.0, d_x, 0.0)
            d_x, grads[p_idx] = _conv_backward(entry["input"], params[p_idx], d_x)
        elif layer.kind == "pool":
            b, c, h, w = entry["input"].shape
            p = layer.window
            d_x = np.repeat(np.repeat(d_x, p, axis=2), p, axis=3) / (p * p)
        else:
            p_idx -= 1
            if "dropout_mask" in entry:
                d_x = d_x * entry["dropout_mask"]
            if "pre" in entry:
                d_x = np.where(entry["pre"] > 0.0, d_x, 0.0)
            grads[p_idx] = entry["input"].T @ d_x
            d_x = d_x @ params[p_idx].T
            if "spatial_shape" in entry:
                d_x = d_x.reshape(entry["spatial_shape"])
    return grads


def softmax_cross_entropy(logits: np.ndarray, y: np.ndarray):
    """Mean loss and d_loss/d_logits for integer class targets."""
    n = logits.shape[0]
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    probs = exp / exp.sum(axis=1, keepdims=True)
    loss = float(np.mean(-np.log(probs[np.arange(n), y] + 1e-300)))
    d_logits = probs
    d_logits[np.arange(n), y] -= 1.0
    d_logits /= n
    return loss, d_logits


def loss_and_grads(arch: ArchitectureSpec, params: list[np.ndarray], x: np.ndarray,
                   y: np.ndarray, train: bool = False,
                   rng: np.random.Generator | None = None):
    """One forward/backward pass; pure when ``train`` is false."""
    logits, cache = forward(arch, params, x, train=train, rng=rng)
    loss, d_logits = softmax_cross_entropy(logits, y)
    grads = backward(arch, params, cache, d_logits)
    return loss, grads


def predict(arch: ArchitectureSpec, params: list[np.ndarray], x: np.ndarray) -> np.ndarray:
    logits, _ = forward(arch, params, x, train=False)
    return logits.argmax(axis=1)


def accuracy(arch: ArchitectureSpec, params: list[np.ndarray], x: np.ndarray,
             y: np.ndarray, batch_size: int = 256) -> float:
    hits = 0
    for start in range(0, x.shape[0], batch_size):
        xb = x[start:start + batch_size]
        yb = y[start:start + batch_size]
        hits += int((predict(arch, params, xb) == yb).sum())
    return hits / x.shape[0]
