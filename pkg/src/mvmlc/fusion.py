"""Prototype/feature interaction, manifold-weighted view fusion and losses.

Per-category label embeddings gate each sample's representation elementwise,
giving label-specific features that per-class affine heads turn into
pseudo-predictions. A pairwise manifold loss scores how well a view's
feature similarities agree with its predicted-label similarities; the
reciprocal of that loss weights the view in fusion, so structurally
consistent views dominate. The fused shared stream is gated by the private
stream before the final prediction, and supervision flows through a
cross-entropy masked by the label-observation matrix.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, RngStream, Tensor, constant

PROB_EPS = 1e-7
LOG_FLOOR = 1e-12
LOSS_FLOOR = 1e-8
MANIFOLD_SCALE = 0.05


@dataclass
class LossWeights:
    alpha: float
    lambda1: float
    lambda2: float

    def __post_init__(self):
        if min(self.alpha, self.lambda1, self.lambda2) < 0:
            raise ValueError("loss weights must be nonnegative")


@dataclass
class ClassHeads:
    """C independent affine heads d -> 1, stored as one (C, d) weight block."""
    w: Parameter
    b: Parameter  # (1, C)


def build_class_heads(rng: RngStream, c: int, d: int, name: str) -> ClassHeads:
    return ClassHeads(
        w=ad.init_uniform(rng, d, (c, d), f"{name}.w"),
        b=ad.init_uniform(rng, d, (1, c), f"{name}.b"),
    )


def label_specific_features(embeddings: Tensor, z: Tensor) -> Tensor:
    """feature[i, c, :] = sigmoid(l_c) * z_i, shape (N, C, d)."""
    n, d = z.shape
    c = embeddings.shape[0]
    gate = ad.reshape(ad.sigmoid(embeddings), (1, c, d))
    return ad.mul(gate, ad.reshape(z, (n, 1, d)))


def pseudo_predict(features: Tensor, heads: ClassHeads) -> Tensor:
    """Per-class affine heads over label-specific features, then sigmoid."""
    n, c, d = features.shape
    if heads.w.shape != (c, d):
        raise ad.ShapeError(f"heads shaped {heads.w.shape} cannot score "
                            f"features shaped {features.shape}")
    logits = ad.add(ad.tsum(ad.mul(features, ad.reshape(heads.w, (1, c, d))),
                            axis=2), heads.b)
    return ad.clip(ad.sigmoid(logits), PROB_EPS, 1.0 - PROB_EPS)


def manifold_loss(z_norm: Tensor, p_norm: Tensor) -> Tensor:
    """Pairwise cross-entropy between feature and prediction similarities.

    Expects row-normalised inputs: S = (1 + cos)/2 stays in [0, 1] and
    T = p_i . p_j is naturally in [0, 1] for nonnegative predictions; both
    are clamped against numerical drift and the diagonal is excluded.
    """
    n = z_norm.shape[0]
    if n < 2:
        return constant(np.zeros(()))
    s = ad.clip(ad.scale_shift(ad.matmul(z_norm, ad.transpose(z_norm)),
                               0.5, 0.5), LOG_FLOOR, 1.0)
    t = ad.clip(ad.matmul(p_norm, ad.transpose(p_norm)), 0.0, 1.0)
    log_s = ad.log(s, floor=LOG_FLOOR)
    log_1ms = ad.log(ad.clip(ad.scale_shift(s, -1.0, 1.0), LOG_FLOOR, 1.0),
                     floor=LOG_FLOOR)
    pair = ad.add(ad.mul(t, log_s),
                  ad.mul(ad.scale_shift(t, -1.0, 1.0), log_1ms))
    off_diag = constant(1.0 - np.eye(n))
    return ad.scale_shift(ad.tsum(ad.mul(pair, off_diag)),
                          -1.0 / (n * (n - 1)))


def fusion_weights(losses: list[float]) -> np.ndarray:
    """Reciprocal-loss weights, floored and normalised to sum to 1.

    These are treated as constants: no gradient flows into them, otherwise
    inflating a manifold loss would be rewarded.
    """
    inv = 1.0 / np.maximum(np.asarray(losses, dtype=np.float64), LOSS_FLOOR)
    return inv / inv.sum()


def fuse_channel(reps: list[Tensor], losses: list[float]) -> tuple[Tensor, np.ndarray]:
    """Convex combination of per-view representations by reciprocal loss."""
    w = fusion_weights(losses)
    out = None
    for weight, rep in zip(w, reps):
        term = ad.scale_shift(rep, float(weight))
        out = term if out is None else ad.add(out, term)
    return out, w


def gate_fuse(z_s: Tensor, z_p: Tensor) -> Tensor:
    """Private stream opens/closes the shared stream elementwise."""
    return ad.mul(ad.sigmoid(z_p), z_s)


def masked_ce(p: Tensor, y: np.ndarray, g: np.ndarray) -> Tensor:
    """Binary cross-entropy averaged over observed label entries only."""
    total = float(g.sum())
    if total == 0:
        return constant(np.zeros(()))
    y_t = constant(y)
    ll = ad.add(ad.mul(y_t, ad.log(p, floor=LOG_FLOOR)),
                ad.mul(constant(1.0 - y),
                       ad.log(ad.scale_shift(p, -1.0, 1.0), floor=LOG_FLOOR)))
    return ad.scale_shift(ad.tsum(ad.mul(ll, constant(g))), -1.0 / total)


def total_loss(l_mce: Tensor, l_re: Tensor, l_pmce: Tensor, l_gc: Tensor,
               l_dis: Tensor, weights: LossWeights) -> Tensor:
    out = ad.scale_shift(l_mce, weights.alpha)
    out = ad.add(out, ad.scale_shift(l_re, weights.lambda1))
    out = ad.add(out, ad.scale_shift(l_pmce, weights.lambda2))
    out = ad.add(out, l_gc)
    return ad.add(out, l_dis)
