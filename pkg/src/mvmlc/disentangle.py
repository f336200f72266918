"""Dual-channel shared/private representation learning.

Each view gets two parallel channels with identical architectures and
independent weights: an initial two-layer encoder plus Gaussian mean and
variance encoders whose reparameterised samples are fused with the initial
representation, weighting each dimension by min(1, 1/variance) so that
low-variance (confident) samples dominate. Consistency across views is
trained through a contrastive JSD lower bound on mutual information between
shared representations; redundancy between private representations is
suppressed through a variational upper-bound surrogate against a standard
normal proxy marginal. Decoders bound the representation/input mutual
information from below via reconstruction.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import RngStream, Tensor, constant
from .layers import Affine, TwoLayer, affine, two_layer

log = logging.getLogger(__name__)

VARIANCE_FLOOR = 1e-6
LOG_FLOOR = 1e-12


@dataclass
class ChannelEncoders:
    """Per-view encoder/decoder stack; both channels share the architecture."""
    shared_init: TwoLayer      # d_v -> d
    private_init: TwoLayer
    shared_mean: Affine        # d_v -> d
    shared_var: Affine         # d_v -> d, softplus + floor applied on top
    private_mean: Affine
    private_var: Affine
    shared_decoder: TwoLayer   # d -> d_v
    private_decoder: TwoLayer


@dataclass
class ViewRepresentation:
    z_s1: Tensor
    z_p1: Tensor
    mu_s: Tensor
    var_s: Tensor
    mu_p: Tensor
    var_p: Tensor
    z_s2: Tensor
    z_p2: Tensor
    z_s: Tensor
    z_p: Tensor


def build_view_encoders(rng: RngStream, d_in: int, hidden: int, d: int,
                        name: str) -> ChannelEncoders:
    return ChannelEncoders(
        shared_init=two_layer(rng, d_in, hidden, d, f"{name}.shared_init"),
        private_init=two_layer(rng, d_in, hidden, d, f"{name}.private_init"),
        shared_mean=affine(rng, d_in, d, f"{name}.shared_mean"),
        shared_var=affine(rng, d_in, d, f"{name}.shared_var"),
        private_mean=affine(rng, d_in, d, f"{name}.private_mean"),
        private_var=affine(rng, d_in, d, f"{name}.private_var"),
        shared_decoder=two_layer(rng, d, hidden, d_in, f"{name}.shared_dec"),
        private_decoder=two_layer(rng, d, hidden, d_in, f"{name}.private_dec"),
    )


def build_scorer(rng: RngStream, d: int, hidden: int) -> TwoLayer:
    """Pair scorer for the JSD bound: concat(2d) -> hidden -> 1."""
    return two_layer(rng, 2 * d, hidden, 1, "scorer")


def _positive_variance(raw: Tensor) -> Tensor:
    return ad.scale_shift(ad.softplus(raw), 1.0, VARIANCE_FLOOR)


def reparameterize(mu: Tensor, var: Tensor, eps: np.ndarray | None) -> Tensor:
    """mu + eps * sqrt(var) during training; exactly mu at evaluation."""
    if eps is None:
        return mu
    return ad.add(mu, ad.mul(constant(eps), ad.sqrt(var)))


def precision_fuse(z2: Tensor, z1: Tensor, var: Tensor) -> Tensor:
    """Per-dimension convex blend w*z2 + (1-w)*z1 with w = min(1, 1/var)."""
    w = ad.reciprocal(ad.maximum_scalar(var, 1.0))
    return ad.add(ad.mul(w, z2), ad.mul(ad.scale_shift(w, -1.0, 1.0), z1))


def encode_channels(enc: ChannelEncoders, z_view: Tensor,
                    eps_shared: np.ndarray | None,
                    eps_private: np.ndarray | None) -> ViewRepresentation:
    z_s1 = enc.shared_init(z_view)
    z_p1 = enc.private_init(z_view)
    mu_s = enc.shared_mean(z_view)
    var_s = _positive_variance(enc.shared_var(z_view))
    mu_p = enc.private_mean(z_view)
    var_p = _positive_variance(enc.private_var(z_view))
    z_s2 = reparameterize(mu_s, var_s, eps_shared)
    z_p2 = reparameterize(mu_p, var_p, eps_private)
    return ViewRepresentation(
        z_s1=z_s1, z_p1=z_p1, mu_s=mu_s, var_s=var_s, mu_p=mu_p, var_p=var_p,
        z_s2=z_s2, z_p2=z_p2,
        z_s=precision_fuse(z_s2, z_s1, var_s),
        z_p=precision_fuse(z_p2, z_p1, var_p),
    )


def draw_shift_offset(rng: RngStream, n: int) -> int:
    """Offset of the cyclic shift used to build negative pairs: no fixed points."""
    if n < 2:
        raise ValueError("need at least two samples to form a negative pair")
    return rng.integer(1, n - 1)


def jsd_mi_estimate(z_a: Tensor, z_b: Tensor, scorer, offset: int) -> Tensor:
    """Contrastive JSD lower bound on mutual information between two streams.

    Positive pairs align rows; negatives shift z_a cyclically by `offset`.
    The softplus form keeps both terms finite for any score, and the value
    is strictly negative for finite scores, approaching 0 only for a perfect
    discriminator.
    """
    n = z_a.shape[0]
    if n < 2:
        raise ValueError("need at least two samples to form a negative pair")
    if not 1 <= offset <= n - 1:
        raise ValueError(f"offset {offset} out of range for n={n}")
    pos = scorer(ad.concat([z_a, z_b], axis=1))
    shifted = ad.permute_rows(z_a, (np.arange(n) + offset) % n)
    negs = scorer(ad.concat([shifted, z_b], axis=1))
    term = ad.add(ad.neg(ad.softplus(ad.neg(pos))), ad.neg(ad.softplus(negs)))
    return ad.tmean(term)


def private_overlap_bound(z_p_u: Tensor, mu_p_u: Tensor, var_p_u: Tensor,
                          z_p_v: Tensor) -> Tensor:
    """Variational upper-bound surrogate for cross-view private overlap.

    Mean over samples and dimensions of
    log N(z_p_u; mu_p_u, var_p_u) - log N(z_p_v; 0, 1); the shared -0.5
    log(2*pi) constants cancel.
    """
    diff = ad.sub(z_p_u, mu_p_u)
    quad = ad.mul(ad.mul(diff, diff),
                  ad.reciprocal(ad.maximum_scalar(var_p_u, LOG_FLOOR)))
    own_density = ad.scale_shift(
        ad.add(ad.log(var_p_u, floor=LOG_FLOOR), quad), -0.5)
    proxy = ad.scale_shift(ad.mul(z_p_v, z_p_v), 0.5)
    return ad.tmean(ad.add(own_density, proxy))


@dataclass
class DisentangleTerms:
    loss: Tensor
    jsd_values: list[float]       # per ordered pair, diagnostics
    overlap_values: list[float]


def disentangle_loss(reps: list[ViewRepresentation], scorer, gamma: float,
                     beta: float, offsets: dict[tuple[int, int], int]) -> DisentangleTerms:
    """Pairwise MI objective over all ordered view pairs.

    The JSD bound is estimated on fused shared representations and entered
    negatively (maximised); the private overlap surrogate on the sampled
    private representations is minimised. Both are normalised by the pair
    count V*(V-1).
    """
    v = len(reps)
    if v == 1:
        log.warning("single view: disentanglement loss is identically zero")
        return DisentangleTerms(constant(np.zeros(())), [], [])
    norm = 1.0 / (v * (v - 1))
    total = None
    jsd_vals, overlap_vals = [], []
    for a in range(v):
        for b in range(v):
            if a == b:
                continue
            # ordered pair (v=a, u=b) of the outer/inner sums
            jsd = jsd_mi_estimate(reps[b].z_s, reps[a].z_s, scorer,
                                  offsets[(a, b)])
            overlap = private_overlap_bound(reps[b].z_p2, reps[b].mu_p,
                                            reps[b].var_p, reps[a].z_p2)
            jsd_vals.append(jsd.item())
            overlap_vals.append(overlap.item())
            contrib = ad.add(ad.scale_shift(jsd, -gamma * norm),
                             ad.scale_shift(overlap, beta * norm))
            total = contrib if total is None else ad.add(total, contrib)
    return DisentangleTerms(total, jsd_vals, overlap_vals)


def mse_rows(a: Tensor, b: Tensor) -> Tensor:
    """Mean over samples of the squared row distance (unit-variance NLL shape)."""
    diff = ad.sub(a, b)
    return ad.tmean(ad.tsum(ad.mul(diff, diff), axis=1))


def reconstruction_loss(reps: list[ViewRepresentation],
                        encoders: list[ChannelEncoders],
                        z_views: list[Tensor]) -> Tensor:
    """Average reconstruction of each view from both fused representations."""
    total = None
    for rep, enc, z in zip(reps, encoders, z_views):
        term = ad.add(mse_rows(enc.shared_decoder(rep.z_s), z),
                      mse_rows(enc.private_decoder(rep.z_p), z))
        total = term if total is None else ad.add(total, term)
    return ad.scale_shift(total, 1.0 / len(reps))
