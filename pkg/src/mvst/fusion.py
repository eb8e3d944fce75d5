"""Sigmoid-gated fusion of per-view feature maps and the classifier head.

Two gate modes ship. "per_view" gates each view by its own transform,
G_i = sigmoid(F_i W_i^T); "shared_sum" follows the summed form
G = sigmoid(sum_i F_i W_i^T), which makes every view's gate identical.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor
from .rng import stream, truncated_normal
from .tensor import ShapeError, Tensor

N_CLASSES = 4


@dataclass
class ClassifierParams:
    """Two-layer MLP d -> d (GELU) -> 4."""

    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor


def init_classifier(d: int, seed: int) -> ClassifierParams:
    def init(name, shape):
        return tensor.parameter(truncated_normal(stream(seed, "init." + name), shape), name)

    return ClassifierParams(
        w1=init("classifier.w1", (d, d)),
        b1=tensor.parameter(np.zeros(d), "classifier.b1"),
        w2=init("classifier.w2", (d, N_CLASSES)),
        b2=tensor.parameter(np.zeros(N_CLASSES), "classifier.b2"))


def _check_aligned(features: list[Tensor], weights: list[Tensor]) -> None:
    if not features:
        raise ShapeError("gate_coefficients: no features")
    if len(features) != len(weights):
        raise ShapeError(f"{len(features)} features vs {len(weights)} gate matrices")
    nt, d = features[0].shape
    for f in features:
        if f.shape != (nt, d):
            raise ShapeError(f"feature shape {f.shape} != {(nt, d)}")
    for w in weights:
        if w.shape != (d, d):
            raise ShapeError(f"gate matrix shape {w.shape} != {(d, d)}")


def gate_coefficients(features: list[Tensor], gate_weights: list[Tensor],
                      mode: str = "per_view") -> list[Tensor]:
    """One gate matrix in (0, 1) per view; see module docstring for modes."""
    _check_aligned(features, gate_weights)
    if mode == "per_view":
        return [tensor.sigmoid(tensor.matmul(f, tensor.transpose(w)))
                for f, w in zip(features, gate_weights)]
    if mode == "shared_sum":
        total = tensor.matmul(features[0], tensor.transpose(gate_weights[0]))
        for f, w in zip(features[1:], gate_weights[1:]):
            total = tensor.add(total, tensor.matmul(f, tensor.transpose(w)))
        shared = tensor.sigmoid(total)
        return [shared] * len(features)
    raise ValueError(f"unknown gate mode {mode!r}")


def fuse(features: list[Tensor], gates: list[Tensor]) -> Tensor:
    """Element-wise gated sum over views: sum_i G_i * F_i."""
    if len(features) != len(gates) or not features:
        raise ShapeError(f"fuse: {len(features)} features vs {len(gates)} gates")
    for f, g in zip(features, gates):
        if f.shape != features[0].shape or g.shape != features[0].shape:
            raise ShapeError("fuse: mismatched shapes across views")
    out = tensor.hadamard(gates[0], features[0])
    for f, g in zip(features[1:], gates[1:]):
        out = tensor.add(out, tensor.hadamard(g, f))
    return out


def classify(fused: Tensor, head: ClassifierParams) -> Tensor:
    """Mean-pool the tokens, then the two-layer MLP; returns [1, 4] logits."""
    pooled = tensor.mean_pool_rows(fused)
    row = tensor.reshape(pooled, (1, pooled.size))
    hidden = tensor.gelu(tensor.affine(row, head.w1, head.b1))
    return tensor.affine(hidden, head.w2, head.b2)
