"""Attention-guided completion of missing views and random fragment masking.

The completion pipeline is free of trainable parameters: cosine-attention
scores per view, per-row percentile thresholding, cross-view affinity
aggregation over the views two samples share, top-k neighbour selection
restricted to samples that actually have the target view, and a weighted
average of the selected neighbours' feature rows. Fragment masking zeroes a
random contiguous span of each row during training forward passes only.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import RngStream


class ImputationError(RuntimeError):
    """A view cannot be completed (e.g. no available row at all)."""


@dataclass
class ImputationArtifacts:
    attention: list[np.ndarray]       # A per view, (N, N)
    filtered: list[np.ndarray]        # thresholded A per view
    affinity: list[np.ndarray]        # B per view, aggregated from other views
    transfer: list[np.ndarray]        # K per view, binary top-k graph
    completed: list[np.ndarray]       # views with missing rows filled in
    tau: float
    percentile: float
    k: int


def attention_scores(x: np.ndarray, tau: float) -> np.ndarray:
    """Pairwise exp(cosine / tau); zero rows normalise to zero vectors."""
    if tau <= 0:
        raise ValueError("tau must be positive")
    norms = np.sqrt((x * x).sum(axis=1, keepdims=True))
    h = x / np.where(norms > 0, norms, 1.0)
    return np.exp((h @ h.T) / tau)


def threshold_filter(a: np.ndarray, percentile: float) -> np.ndarray:
    """Keep entries strictly above the per-row percentile of off-diagonal scores.

    percentile 0 disables filtering (only the diagonal is zeroed); otherwise
    the tie case — a constant row — filters everything, since no entry
    strictly exceeds the threshold.
    """
    if not 0.0 <= percentile < 100.0:
        raise ValueError("percentile must be in [0, 100)")
    n = a.shape[0]
    out = a.copy()
    np.fill_diagonal(out, 0.0)
    if n < 2:
        return np.zeros_like(a)
    if percentile == 0.0:
        return out
    off = a[~np.eye(n, dtype=bool)].reshape(n, n - 1)
    cuts = np.percentile(off, percentile, axis=1)
    out[out <= cuts[:, None]] = 0.0
    np.fill_diagonal(out, 0.0)
    return out


def cross_view_affinity(filtered: list[np.ndarray], view_mask: np.ndarray,
                        target: int) -> np.ndarray:
    """Average the filtered scores of every other view both samples carry."""
    if len(filtered) < 2:
        raise ValueError("cross-view affinity needs at least two views")
    n = filtered[0].shape[0]
    num = np.zeros((n, n))
    den = np.zeros((n, n))
    for k, fk in enumerate(filtered):
        if k == target:
            continue
        both = np.outer(view_mask[:, k], view_mask[:, k])
        num += both * fk
        den += both
    with np.errstate(invalid="ignore"):
        b = np.where(den > 0, num / np.where(den > 0, den, 1.0), 0.0)
    return b


def transfer_graph(affinity: np.ndarray, w_col: np.ndarray, k: int) -> np.ndarray:
    """Top-k positive-affinity neighbours among rows that have this view.

    Ties break toward the smaller column index. Rows that have the view get
    a row too, but it is never consumed downstream.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    n = affinity.shape[0]
    out = np.zeros_like(affinity)
    available = w_col == 1
    for i in range(n):
        cand = np.flatnonzero(available & (affinity[i] > 0))
        if cand.size == 0:
            continue
        if cand.size > k:
            order = np.lexsort((cand, -affinity[i, cand]))
            cand = cand[order[:k]]
        out[i, cand] = 1.0
    return out


def impute_view(x: np.ndarray, transfer: np.ndarray, affinity: np.ndarray,
                w_col: np.ndarray) -> np.ndarray:
    """Affinity-weighted average of selected neighbours, row by row.

    Weights are normalised over the selected neighbours so the imputed row is
    a convex combination of their features. A row with no selected neighbour
    falls back to the mean of the view's available rows.
    """
    available = np.flatnonzero(w_col == 1)
    if available.size == 0:
        raise ImputationError("view has no available row to impute from")
    weights = transfer * affinity
    den = weights.sum(axis=1, keepdims=True)
    fallback = x[available].mean(axis=0)
    safe = np.where(den > 0, den, 1.0)
    out = (weights @ x) / safe
    out[den.reshape(-1) == 0] = fallback
    return out


def merge_views(imputed: np.ndarray, x: np.ndarray, w_col: np.ndarray) -> np.ndarray:
    """Available rows pass through bit-exactly; missing rows come from x-hat."""
    out = imputed.copy()
    keep = w_col == 1
    out[keep] = x[keep]
    return out


def complete_views(views: list[np.ndarray], view_mask: np.ndarray, tau: float = 0.5,
                   percentile: float = 90.0, k: int = 10) -> ImputationArtifacts:
    """Run the full completion pipeline once over a dataset's views."""
    v = len(views)
    attn = [attention_scores(x, tau) for x in views]
    filt = [threshold_filter(a, percentile) for a in attn]
    completed, affinities, transfers = [], [], []
    for target in range(v):
        w_col = view_mask[:, target]
        if v >= 2:
            b = cross_view_affinity(filt, view_mask, target)
        else:
            b = np.zeros_like(attn[0])
        tg = transfer_graph(b, w_col, k) if (w_col == 0).any() else np.zeros_like(b)
        if (w_col == 0).any():
            xhat = impute_view(views[target], tg, b, w_col)
            completed.append(merge_views(xhat, views[target], w_col))
        else:
            completed.append(views[target].copy())
        affinities.append(b)
        transfers.append(tg)
    return ImputationArtifacts(attn, filt, affinities, transfers, completed,
                               tau, percentile, k)


def mean_complete_views(views: list[np.ndarray], view_mask: np.ndarray) -> list[np.ndarray]:
    """Baseline completion: missing rows take the view's available-row mean."""
    out = []
    for target, x in enumerate(views):
        w_col = view_mask[:, target]
        available = np.flatnonzero(w_col == 1)
        if available.size == 0:
            raise ImputationError("view has no available row to impute from")
        z = x.copy()
        z[w_col == 0] = x[available].mean(axis=0)
        out.append(z)
    return out


def fragment_mask(z: np.ndarray, length: int, rng: RngStream) -> tuple[np.ndarray, np.ndarray]:
    """Zero a random contiguous span of `length` features in every row.

    The 1-based start index is uniform on [1, d - length], so the span never
    covers the final column. length 0 is the identity and draws nothing.
    """
    n, d = z.shape
    if not 0 <= length <= d - 1:
        raise ValueError(f"fragment length {length} out of range for d={d}")
    mask = np.ones_like(z)
    if length == 0:
        return z.copy(), mask
    for i in range(n):
        start = rng.integer(0, d - length - 1)
        mask[i, start:start + length] = 0.0
    return z * mask, mask


def default_fragment_length(d: int, fraction: float = 0.1) -> int:
    return min(max(int(np.floor(fraction * d)), 0), d - 1)
