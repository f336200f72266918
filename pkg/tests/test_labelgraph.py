import numpy as np
import pytest

from mvmlc import autodiff as ad
from mvmlc.autodiff import Parameter, RngStream, constant, grad_check
from mvmlc.labelgraph import (
    GraphAttention, build_gat, build_label_prototypes, cooccurrence,
    gat_refine, neighbourhoods, refine_label_distribution,
    sample_label_embeddings,
)
from mvmlc.layers import collect_parameters


def brute_force_cooccurrence(y, g):
    n, c = y.shape
    q = np.zeros((c, c))
    for i in range(c):
        denom = sum(y[k, i] * g[k, i] for k in range(n))
        for j in range(c):
            num = sum(y[k, i] * g[k, i] * y[k, j] * g[k, j] for k in range(n))
            q[i, j] = num / denom if denom > 0 else 0.0
    return q


def test_cooccurrence_perfect_pair():
    y = np.array([[1.0, 1.0], [1.0, 1.0], [0.0, 1.0]])
    g = np.ones_like(y)
    q = cooccurrence(y, g)
    assert q[0, 1] == 1.0          # label 0 only ever occurs alongside label 1
    assert q[1, 0] == pytest.approx(2 / 3)


def test_cooccurrence_self_is_one_when_observed():
    rng = RngStream(1, 0)
    y = (rng.uniform(0, 1, (10, 4)) > 0.5).astype(np.float64)
    y[:, 2] = 1.0
    g = np.ones_like(y)
    q = cooccurrence(y, g)
    for i in range(4):
        if (y[:, i] * g[:, i]).sum() > 0:
            assert q[i, i] == 1.0


def test_cooccurrence_unobserved_label_row_is_zero():
    y = np.array([[1.0, 0.0], [1.0, 0.0]])
    g = np.ones_like(y)
    q = cooccurrence(y, g)
    np.testing.assert_array_equal(q[1], np.zeros(2))


def test_cooccurrence_masked_entries_do_not_count():
    y = np.array([[1.0, 1.0], [1.0, 1.0]])
    g = np.array([[1.0, 0.0], [1.0, 1.0]])
    q = cooccurrence(y, g)
    assert q[0, 1] == 0.5          # first row's label-1 occurrence is hidden


def test_cooccurrence_matches_counting_oracle():
    rng = RngStream(2, 0)
    y = (rng.uniform(0, 1, (8, 4)) > 0.45).astype(np.float64)
    g = (rng.uniform(0, 1, (8, 4)) > 0.3).astype(np.float64)
    np.testing.assert_allclose(cooccurrence(y, g),
                               brute_force_cooccurrence(y, g), atol=1e-12)


def test_cooccurrence_invariant_to_row_permutation():
    rng = RngStream(3, 0)
    y = (rng.uniform(0, 1, (12, 5)) > 0.5).astype(np.float64)
    g = (rng.uniform(0, 1, (12, 5)) > 0.2).astype(np.float64)
    perm = RngStream(4, 0).permutation(12)
    np.testing.assert_array_equal(cooccurrence(y, g),
                                  cooccurrence(y[perm], g[perm]))


# -- GAT ----------------------------------------------------------------------

def test_neighbourhood_forces_self_loop_for_isolated_labels():
    q = np.array([[1.0, 0.5], [0.0, 0.0]])
    mask = neighbourhoods(q)
    assert mask[0, 0] and mask[0, 1]
    assert mask[1, 1] and not mask[1, 0]


def test_gat_singleton_neighbourhood_gives_unit_attention():
    rng = RngStream(5, 0)
    gat = build_gat(rng, 3, 2, "g")
    z = constant(rng.normal((4, 3)))
    mask = np.eye(4, dtype=bool)
    _, alpha = gat_refine(z, mask, gat)
    np.testing.assert_allclose(alpha.value, np.eye(4), atol=1e-12)


def test_gat_uniform_attention_identity_weights():
    # K=1, W = I, mix = I, a = 0, neighbourhood {i, j} -> output mean of rows
    d = 3
    gat = GraphAttention(
        attn=Parameter(np.zeros((1, 2 * d)), "a"),
        mix=Parameter(np.eye(d), "m"),
        heads=[Parameter(np.eye(d), "h0")],
    )
    z_val = RngStream(6, 0).normal((2, d))
    mask = np.ones((2, 2), dtype=bool)
    out, alpha = gat_refine(constant(z_val), mask, gat)
    np.testing.assert_allclose(alpha.value, np.full((2, 2), 0.5), atol=1e-12)
    expect = np.where(z_val.mean(axis=0) > 0, z_val.mean(axis=0),
                      0.2 * z_val.mean(axis=0))
    np.testing.assert_allclose(out.value, np.tile(expect, (2, 1)), atol=1e-12)


def brute_force_gat(z, mask, attn, mix, heads, slope):
    c, d = z.shape
    a_l, a_r = attn[0, :d], attn[0, d:]
    logits = np.zeros((c, c))
    for i in range(c):
        for j in range(c):
            e = a_l @ (mix @ z[i]) + a_r @ (mix @ z[j])
            logits[i, j] = e if e > 0 else slope * e
    alpha = np.zeros((c, c))
    for i in range(c):
        nbr = np.flatnonzero(mask[i])
        ex = np.exp(logits[i, nbr] - logits[i, nbr].max())
        alpha[i, nbr] = ex / ex.sum()
    out = np.zeros((c, d))
    for i in range(c):
        acc = np.zeros(d)
        for head in heads:
            for j in np.flatnonzero(mask[i]):
                acc += alpha[i, j] * (head @ z[j])
        acc /= len(heads)
        out[i] = np.where(acc > 0, acc, slope * acc)
    return out, alpha


def test_gat_matches_step_by_step_oracle():
    rng = RngStream(7, 0)
    c, d, k = 5, 4, 2
    gat = build_gat(rng, d, k, "g")
    z = rng.normal((c, d))
    q = np.abs(rng.normal((c, c)))
    q[q < 0.8] = 0.0
    np.fill_diagonal(q, 1.0)
    mask = neighbourhoods(q)
    out, alpha = gat_refine(constant(z), mask, gat)
    expect_out, expect_alpha = brute_force_gat(
        z, mask, gat.attn.value, gat.mix.value,
        [h.value for h in gat.heads], gat.slope)
    np.testing.assert_allclose(alpha.value, expect_alpha, atol=1e-12)
    np.testing.assert_allclose(out.value, expect_out, atol=1e-12)


def test_gat_attention_rows_sum_to_one():
    rng = RngStream(8, 0)
    c, d = 6, 3
    gat = build_gat(rng, d, 3, "g")
    q = np.abs(rng.normal((c, c)))
    q[q < 0.5] = 0.0
    mask = neighbourhoods(q)
    _, alpha = gat_refine(constant(rng.normal((c, d)) * 3), mask, gat)
    np.testing.assert_allclose(alpha.value.sum(axis=1), np.ones(c), atol=1e-12)
    assert (alpha.value >= 0).all()


def test_gat_differentiable_end_to_end():
    rng = RngStream(9, 0)
    c, d, k = 4, 3, 2
    proto = build_label_prototypes(rng, c, d, k)
    q = np.abs(RngStream(10, 0).normal((c, c)))
    q[q < 0.6] = 0.0
    np.fill_diagonal(q, 1.0)
    params = collect_parameters(proto)
    wv = RngStream(11, 0).uniform(-1, 1, (c, d))
    eps = RngStream(12, 0).normal((c, d))

    def graph():
        refined = refine_label_distribution(proto, q)
        emb = sample_label_embeddings(refined.mu, refined.var, eps)
        return ad.tsum(ad.mul(emb, constant(wv)))

    report = grad_check(graph, params, step=1e-5, tolerance=1e-4)
    assert report.passed, report.format()


def test_refined_variance_positive():
    rng = RngStream(13, 0)
    proto = build_label_prototypes(rng, 5, 4, 2)
    q = np.eye(5)
    refined = refine_label_distribution(proto, q)
    assert (refined.var.value > 0).all()


def test_sample_label_embeddings_modes():
    rng = RngStream(14, 0)
    mu = constant(rng.normal((4, 3)))
    var = constant(np.full((4, 3), 1e-6))
    assert sample_label_embeddings(mu, var, None) is mu
    eps = RngStream(15, 0).normal((4, 3))
    drawn = sample_label_embeddings(mu, var, eps)
    np.testing.assert_allclose(drawn.value, mu.value, atol=1e-2)
    again = sample_label_embeddings(mu, var, RngStream(15, 0).normal((4, 3)))
    np.testing.assert_array_equal(drawn.value, again.value)


def test_seeds_are_one_hot_initialised():
    proto = build_label_prototypes(RngStream(16, 0), 6, 4, 2)
    np.testing.assert_array_equal(proto.seeds.value, np.eye(6))
