"""Label-correlation modelling with graph-attention prototype refinement.

Each category owns a learnable seed vector (one-hot initialised) that two
encoders map to the mean and variance of a Gaussian prototype. Co-occurrence
frequencies of observed training labels define a directed graph over which a
multi-head attention pass aggregates the distribution parameters, so related
labels end up with related prototypes. Embeddings are drawn from the refined
distributions with the reparameterisation trick.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, RngStream, Tensor, constant
from .layers import Affine, affine

VARIANCE_FLOOR = 1e-6
LEAKY_SLOPE = 0.2


def cooccurrence(labels: np.ndarray, label_mask: np.ndarray) -> np.ndarray:
    """Q[i, j] = P(label j observed-present | label i observed-present).

    Both occurrences must be observed (mask 1) to count. Labels never
    observed-positive give an all-zero row; Q[i, i] = 1 for any label
    observed at least once.
    """
    yg = labels * label_mask
    counts = yg.T @ yg
    diag = np.diag(counts).copy()
    safe = np.where(diag > 0, diag, 1.0)
    q = counts / safe[:, None]
    q[diag == 0] = 0.0
    return q


@dataclass
class GraphAttention:
    attn: Parameter            # (1, 2d) scoring vector
    mix: Parameter             # (d, d) shared pre-attention transform
    heads: list[Parameter]     # K x (d, d) per-head aggregation weights
    slope: float = LEAKY_SLOPE


@dataclass
class LabelPrototypes:
    seeds: Parameter           # (C, C), one-hot initialised
    mean_enc: Affine           # C -> d
    var_enc: Affine            # C -> d
    gat: GraphAttention


def build_gat(rng: RngStream, d: int, heads: int, name: str) -> GraphAttention:
    return GraphAttention(
        attn=ad.init_uniform(rng, 2 * d, (1, 2 * d), f"{name}.attn"),
        mix=ad.init_uniform(rng, d, (d, d), f"{name}.mix"),
        heads=[ad.init_uniform(rng, d, (d, d), f"{name}.head{k}")
               for k in range(heads)],
    )


def build_label_prototypes(rng: RngStream, c: int, d: int, heads: int,
                           name: str = "labels") -> LabelPrototypes:
    return LabelPrototypes(
        seeds=Parameter(np.eye(c), f"{name}.seeds"),
        mean_enc=affine(rng, c, d, f"{name}.mean"),
        var_enc=affine(rng, c, d, f"{name}.var"),
        gat=build_gat(rng, d, heads, f"{name}.gat"),
    )


def neighbourhoods(q: np.ndarray) -> np.ndarray:
    """Boolean adjacency Q > 0; unobserved labels get a forced self-loop."""
    mask = q > 0
    empty = ~mask.any(axis=1)
    if empty.any():
        idx = np.flatnonzero(empty)
        mask[idx, idx] = True
    return mask


def gat_refine(z: Tensor, mask: np.ndarray, gat: GraphAttention
               ) -> tuple[Tensor, Tensor]:
    """One multi-head attention pass over the label graph.

    Logits come from the shared transform and scoring vector, so every head
    sees the same coefficients; the heads differ in their aggregation
    weights and are averaged before the output activation. Returns the
    refined parameters and the attention matrix.
    """
    c, d = z.shape
    mixed = ad.matmul(z, ad.transpose(gat.mix))                 # rows W-bar z_i
    a_left = ad.matmul(mixed, ad.transpose(ad.slice_cols(gat.attn, 0, d)))
    a_right = ad.matmul(mixed, ad.transpose(ad.slice_cols(gat.attn, d, 2 * d)))
    logits = ad.leaky_relu(ad.add(a_left, ad.transpose(a_right)), gat.slope)
    alpha = ad.masked_softmax(logits, mask)
    agg = None
    for head in gat.heads:
        term = ad.matmul(alpha, ad.matmul(z, ad.transpose(head)))
        agg = term if agg is None else ad.add(agg, term)
    out = ad.leaky_relu(ad.scale_shift(agg, 1.0 / len(gat.heads)), gat.slope)
    return out, alpha


@dataclass
class RefinedPrototypes:
    mu: Tensor        # (C, d)
    var: Tensor       # (C, d), strictly positive
    alpha_mu: Tensor  # attention coefficients of the mean pass
    alpha_var: Tensor


def refine_label_distribution(proto: LabelPrototypes,
                              q: np.ndarray) -> RefinedPrototypes:
    """Encode seeds to Gaussian parameters and refine both through the GAT.

    Mean and variance matrices take independent passes through the same
    attention machinery (coefficients are recomputed per pass); refined
    variances are re-positivised because the output activation can go
    negative.
    """
    mask = neighbourhoods(q)
    mu0 = proto.mean_enc(proto.seeds)
    var0 = ad.scale_shift(ad.softplus(proto.var_enc(proto.seeds)), 1.0,
                          VARIANCE_FLOOR)
    mu, alpha_mu = gat_refine(mu0, mask, proto.gat)
    var_raw, alpha_var = gat_refine(var0, mask, proto.gat)
    var = ad.scale_shift(ad.softplus(var_raw), 1.0, VARIANCE_FLOOR)
    return RefinedPrototypes(mu=mu, var=var, alpha_mu=alpha_mu,
                             alpha_var=alpha_var)


def sample_label_embeddings(mu: Tensor, var: Tensor,
                            eps: np.ndarray | None) -> Tensor:
    """mu + eps * sqrt(var) during training; exactly mu at evaluation."""
    if eps is None:
        return mu
    return ad.add(mu, ad.mul(constant(eps), ad.sqrt(var)))
