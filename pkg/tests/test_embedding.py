"""Loss families: margin ranking (dot and comparator scored), the two
contrastive losses, and the total-objective evaluators."""

import math

import numpy as np
import pytest

import oracles
from gzslkit.data import SemanticTable
from gzslkit.embedding import (
    LossParams, build_comparator, build_embedder, build_projector,
    class_contrastive_loss, comparator_scores_tape, contrastive_losses_backward,
    draw_positive_indices, hinge_pair, infonce_from_logits,
    instance_contrastive_loss, instance_loss_masked, rank_comp_backward,
    ranking_loss_real, ranking_loss_sync, softmax_nll_scores, total_loss_basic,
    total_loss_ce,
)
from gzslkit.errors import DomainError, ShapeError, SplitViolation
from gzslkit.generation import build_generator, draw_noise
from gzslkit.neural import concat_cols
from gzslkit.rng import Stream, stream
from gzslkit.trainer import Batch, NetBundle, TrainConfig

D_X, D_A, HID = 6, 3, 8


def gen_at(seed):
    return build_generator(D_A, D_X, D_A, HID, stream(seed, Stream.INIT, 0))


def embedder_at(seed, d_h=D_A):
    return build_embedder(D_X, d_h, stream(seed, Stream.INIT, 2))


def rank_batch(seed, n=4):
    rng = stream(seed, Stream.GENERIC, 70)
    x = np.abs(rng.normal(size=(n, D_X))).astype(np.float32)
    a_pos = rng.uniform(size=(n, D_A)).astype(np.float32)
    a_neg = rng.uniform(size=(n, D_A)).astype(np.float32)
    return x, a_pos, a_neg


def zero_net(wrapper):
    for p in wrapper.net.params:
        p.value[...] = 0.0
    return wrapper


# ---------------------------------------------------------------------------
# hinge ranking

def test_satisfied_margin_is_exactly_zero():
    delta = 1.0
    e = embedder_at(0)
    e.net.params[0].value[...] = 0.0
    e.net.params[1].value[...] = np.array([[1.0, 0.0, 0.0]], dtype=np.float32)
    x = np.ones((4, D_X), dtype=np.float32)   # E(x) = e1 for every row
    a_pos = np.tile(np.array([[delta + 1.3, 0, 0]], dtype=np.float32), (4, 1))
    a_neg = np.tile(np.array([[0.3, 0, 0]], dtype=np.float32), (4, 1))
    # score gap is exactly delta + 1 per row, so every hinge is dead
    assert ranking_loss_real(e, x, a_pos, a_neg, delta) == 0.0


def test_zero_embedder_gives_delta():
    e = zero_net(embedder_at(1))
    x, a_pos, a_neg = rank_batch(1)
    assert ranking_loss_real(e, x, a_pos, a_neg, 0.7) == pytest.approx(0.7, abs=1e-7)


def test_rank_real_matches_scalar_oracle():
    for seed in range(5):
        e = embedder_at(seed)
        x, a_pos, a_neg = rank_batch(seed)
        got = ranking_loss_real(e, x, a_pos, a_neg, 1.0)
        want = oracles.rank_dot(e.net, x, a_pos, a_neg, 1.0)
        assert got == pytest.approx(want, abs=1e-5)


def test_rank_real_rejects_width_mismatch():
    e = embedder_at(2, d_h=4)  # embedding width != descriptor width
    x, a_pos, a_neg = rank_batch(2)
    with pytest.raises(ShapeError):
        ranking_loss_real(e, x, a_pos, a_neg, 1.0)


def test_zero_generator_and_embedder_give_delta():
    g = zero_net(gen_at(3))
    e = zero_net(embedder_at(3))
    _, a_pos, a_neg = rank_batch(3)
    got = ranking_loss_sync(g, e, a_pos, a_neg, 0.9, stream(3, Stream.NOISE_G, 0))
    assert got == pytest.approx(0.9, abs=1e-7)


def test_rank_sync_rejects_unseen_descriptor():
    g, e = gen_at(4), embedder_at(4)
    rng = stream(4, Stream.GENERIC, 71)
    sem = SemanticTable(rng.uniform(size=(5, D_A)).astype(np.float32), 3, 2)
    a_seen = sem.seen_descriptors()[:2]
    a_unseen = sem.unseen_descriptors()[:2]
    with pytest.raises(SplitViolation):
        ranking_loss_sync(g, e, a_unseen, a_seen, 1.0,
                          stream(4, Stream.NOISE_G, 0), semantic=sem)
    # the seen rows alone are fine
    ranking_loss_sync(g, e, a_seen, a_seen[::-1].copy(), 1.0,
                      stream(4, Stream.NOISE_G, 0), semantic=sem)


def test_rank_sync_matches_scalar_oracle():
    g, e = gen_at(5), embedder_at(5)
    _, a_pos, a_neg = rank_batch(5)
    eps = draw_noise(g, 4, stream(5, Stream.NOISE_G, 0))
    from gzslkit.embedding import rank_dot_sync_backward
    got = rank_dot_sync_backward(g, e, eps, a_pos, a_neg, 1.0, with_grads=False)
    want = oracles.rank_dot_sync(g.net, e.net, eps, a_pos, a_neg, 1.0)
    assert got == pytest.approx(want, abs=1e-5)


def test_rank_comparator_matches_scalar_oracle():
    e = embedder_at(6, d_h=4)
    f = build_comparator(4, D_A, HID, stream(6, Stream.INIT, 4))
    x, a_pos, a_neg = rank_batch(6)
    got = rank_comp_backward(f, e, x, a_pos, a_neg, 1.0, with_grads=False)
    want = oracles.rank_comp(f.net, e.net, x, a_pos, a_neg, 1.0)
    assert got == pytest.approx(want, abs=1e-5)


def test_hinge_pair_values_and_grads():
    loss, dpos, dneg, active = hinge_pair([2.0, 0.0], [0.0, 0.5], 1.0)
    # margins: 1-2+0=-1 (dead), 1-0+0.5=1.5 (active)
    assert loss == pytest.approx(0.75)
    np.testing.assert_array_equal(active, [False, True])
    np.testing.assert_allclose(dpos, [0.0, -0.5])
    np.testing.assert_allclose(dneg, [0.0, 0.5])
    with pytest.raises(ShapeError):
        hinge_pair([1.0], [1.0, 2.0], 1.0)


# ---------------------------------------------------------------------------
# instance-level contrastive loss

def test_uniform_logits_give_ln_k_plus_one():
    for k in (1, 3, 5, 50):
        z_i = np.array([1.0, 0.0, 0.0])
        z_pos = np.array([0.0, 1.0, 0.0])
        z_negs = np.tile(z_pos, (k, 1))  # every similarity equals 0
        for tau in (0.07, 0.5, 1.0):
            got = instance_contrastive_loss(z_i, z_pos, z_negs, tau)
            assert got == pytest.approx(math.log(k + 1), abs=1e-6)


def test_separable_limit_drives_loss_to_zero():
    z_i = np.array([1.0, 0.0])
    z_negs = np.array([[0.0, 1.0], [0.0, -1.0]])
    loss = instance_contrastive_loss(z_i, z_i, z_negs, 0.01)
    assert 0 <= loss < 1e-6


def test_instance_loss_matches_high_precision_oracle():
    rng = stream(0, Stream.GENERIC, 72)
    for trial in range(20):
        z = rng.normal(size=(7, 4))
        z /= np.linalg.norm(z, axis=1, keepdims=True)
        z_i, z_pos, z_negs = z[0], z[1], z[2:]
        got = instance_contrastive_loss(z_i, z_pos, z_negs, 0.1)
        want = oracles.infonce(float(z_i @ z_pos), (z_negs @ z_i).tolist(), 0.1)
        assert got == pytest.approx(want, abs=1e-5)


def test_temperature_scale_invariance():
    rng = stream(0, Stream.GENERIC, 73)
    pos = float(rng.normal())
    negs = rng.normal(size=6)
    base = infonce_from_logits(pos, negs, 0.1)
    for c in (0.5, 3.0, 17.0):
        scaled = infonce_from_logits(pos * c, negs * c, 0.1 * c)
        assert scaled == pytest.approx(base, abs=1e-6)


def test_negative_order_invariance():
    rng = stream(0, Stream.GENERIC, 74)
    negs = rng.normal(size=8)
    base = infonce_from_logits(0.3, negs, 0.2)
    assert infonce_from_logits(0.3, negs[::-1].copy(), 0.2) == pytest.approx(base, abs=1e-6)


def test_loss_positive_and_monotone_in_positive_logit():
    negs = [0.1, -0.4, 0.7]
    lo = infonce_from_logits(0.2, negs, 0.1)
    hi = infonce_from_logits(0.9, negs, 0.1)
    assert lo > 0 and hi > 0
    assert hi < lo


def test_logsumexp_stability_at_extreme_logits():
    for tau in (1.0, 0.1, 0.01):
        big = 1e4 / tau
        v = infonce_from_logits(big, [-big, 0.0], tau)
        assert math.isfinite(v)
        v = infonce_from_logits(-big, [big], tau)
        assert math.isfinite(v)


def test_instance_loss_rejects_degenerate_inputs():
    z = np.array([1.0, 0.0])
    with pytest.raises(DomainError):
        instance_contrastive_loss(z, z, np.zeros((0, 2)), 0.1)
    with pytest.raises(DomainError):
        infonce_from_logits(0.0, [0.0], 0.0)
    with pytest.raises(ShapeError):
        instance_contrastive_loss(z, np.array([1.0, 0.0, 0.0]), np.zeros((1, 2)), 0.1)


def test_instance_loss_masked_matches_per_anchor_oracle():
    rng = stream(0, Stream.GENERIC, 75)
    z = rng.normal(size=(6, 3))
    z /= np.linalg.norm(z, axis=1, keepdims=True)
    labels = np.array([1, 1, 2, 2, 3, 3])
    anchors = np.array([0, 2, 4])
    pos_rows = np.array([1, 3, 5])
    neg_mask = labels[None, :] != labels[anchors, None]
    got, dz = instance_loss_masked(z, anchors, pos_rows, neg_mask, 0.5)
    zl = oracles.to_rows(z)
    neg_lists = [[j for j in range(6) if labels[j] != labels[i]] for i in anchors]
    want = oracles.instance_loss(zl, anchors.tolist(), pos_rows.tolist(), neg_lists, 0.5)
    assert got == pytest.approx(want, abs=1e-9)
    assert dz.shape == z.shape


def test_instance_loss_masked_empty_anchor_set():
    z = np.ones((2, 2))
    loss, dz = instance_loss_masked(z, np.zeros(0, dtype=np.int64),
                                    np.zeros(0, dtype=np.int64),
                                    np.zeros((0, 2), dtype=bool), 0.1)
    assert loss == 0.0
    assert not dz.any()


# ---------------------------------------------------------------------------
# class-level contrastive loss

def test_constant_comparator_gives_ln_s():
    for s in (2, 7, 40):
        f = zero_net(build_comparator(4, D_A, HID, stream(0, Stream.INIT, 4)))
        desc = stream(0, Stream.GENERIC, 76).uniform(size=(s, D_A)).astype(np.float32)
        h = stream(0, Stream.GENERIC, 77).normal(size=(4,)).astype(np.float32)
        got = class_contrastive_loss(f, h, desc, 1, 0.1)
        assert got == pytest.approx(math.log(s), abs=1e-6)


def test_dominant_positive_score_drives_class_loss_to_zero():
    scores = np.array([[100.0, 0.0, 0.0]])
    loss, _ = softmax_nll_scores(scores, np.array([0]), 1.0)
    assert 0 <= loss < 1e-6


def test_class_loss_matches_direct_evaluation():
    f = build_comparator(4, D_A, HID, stream(1, Stream.INIT, 4))
    rng = stream(1, Stream.GENERIC, 78)
    desc = rng.uniform(size=(7, D_A)).astype(np.float32)
    h = rng.normal(size=(4,)).astype(np.float32)
    got = class_contrastive_loss(f, h, desc, 3, 0.1)
    score_row = oracles.comparator_scores(f.net, [list(map(float, h))], desc)[0]
    assert got == pytest.approx(oracles.softmax_nll(score_row, 2, 0.1), abs=1e-5)


def test_class_loss_validates_pos_index():
    f = build_comparator(4, D_A, HID, stream(0, Stream.INIT, 4))
    desc = np.eye(3, D_A, dtype=np.float32) + 0.1
    h = np.ones(4, dtype=np.float32)
    with pytest.raises(DomainError):
        class_contrastive_loss(f, h, desc, 0, 0.1)
    with pytest.raises(DomainError):
        class_contrastive_loss(f, h, desc, 4, 0.1)


def test_softmax_nll_uniform_rows_and_grad_rows_sum_to_zero():
    scores = np.zeros((3, 5), dtype=np.float32)
    loss, dscores = softmax_nll_scores(scores, np.array([0, 2, 4]), 0.3)
    assert loss == pytest.approx(math.log(5), abs=1e-6)
    np.testing.assert_allclose(dscores.sum(axis=1), 0.0, atol=1e-7)


def test_softmax_nll_matches_oracle():
    rng = stream(0, Stream.GENERIC, 79)
    scores = rng.normal(size=(4, 7))
    cols = rng.integers(0, 7, size=4)
    got, _ = softmax_nll_scores(scores, cols, 0.1)
    want = oracles.softmax_nll_mean(scores, cols.tolist(), 0.1)
    assert got == pytest.approx(want, abs=1e-9)


def test_comparator_scores_tape_layout():
    f = build_comparator(2, 2, 4, stream(2, Stream.INIT, 4))
    h = np.array([[1.0, 0.0], [0.0, 1.0]], dtype=np.float32)
    desc = np.array([[0.5, 0.5], [0.2, 0.8], [0.9, 0.1]], dtype=np.float32)
    scores, tape = comparator_scores_tape(f, h, desc)
    assert scores.shape == (2, 3)
    # row-major pairing: tape row i*n_a + j is [h_i, a_j]
    one = f.net.forward(concat_cols(h[1:2], desc[2:3]))
    assert scores[1, 2] == pytest.approx(float(one[0, 0]), abs=1e-7)


def test_draw_positive_indices_rules():
    rng = stream(0, Stream.GENERIC, 80)
    labels = np.array([1, 1, 2, 3, 3, 3])
    idx = draw_positive_indices(labels, rng)
    assert idx[2] == -1  # lone class has no partner
    for i in (0, 1, 3, 4, 5):
        assert idx[i] != i and labels[idx[i]] == labels[i]


# ---------------------------------------------------------------------------
# pooled contrastive pair

def ce_parts(seed, batch_size=6, s=4, u=2):
    cfg = TrainConfig(mode="ce_full", d_h=4, d_z=3, hidden=HID, seed=seed)
    bundle = NetBundle.build(cfg, D_X, D_A)
    rng = stream(seed, Stream.GENERIC, 81)
    desc = rng.uniform(size=(s + u, D_A)).astype(np.float32)
    y = rng.integers(1, s + 1, size=batch_size)
    y[0], y[1] = 1, 1  # guarantee one class with a partner
    x = np.abs(rng.normal(size=(batch_size, D_X))).astype(np.float32)
    a_pos = desc[y - 1]
    eps = draw_noise(bundle.generator, batch_size, stream(seed, Stream.NOISE_G, 0))
    return bundle, x, y, a_pos, eps, desc[:s]


def test_contrastive_pair_matches_oracle():
    for seed in range(3):
        bundle, x, y, a_pos, eps, seen = ce_parts(seed)
        lp = LossParams(tau_e=0.5, tau_s=0.5)
        pairing = stream(seed, Stream.PAIRING, 0)
        ins, cls = contrastive_losses_backward(
            bundle.generator, bundle.embedder, bundle.projector, bundle.comparator,
            x, y, eps, a_pos, seen, lp, rng_pairs=pairing, with_grads=False)
        # replay the same pairing draw, then apply the package's skip rules
        labels = np.concatenate([y, y])
        pos_idx = draw_positive_indices(labels, stream(seed, Stream.PAIRING, 0))
        counts = np.bincount(y, minlength=int(y.max()) + 1)
        pos_idx[counts[labels] < 2] = -1
        if np.unique(labels).size < 2:
            pos_idx[:] = -1
        want_ins, want_cls = oracles.contrastive_pair(
            bundle.generator.net, bundle.embedder.net, bundle.projector.net,
            bundle.comparator.net, x, y, eps, a_pos, seen, 0.5, 0.5,
            pos_idx.tolist())
        assert ins == pytest.approx(want_ins, abs=1e-5)
        assert cls == pytest.approx(want_cls, abs=1e-5)


def test_single_class_batch_skips_instance_but_not_class_loss():
    bundle, x, y, a_pos, eps, seen = ce_parts(9)
    y[:] = 2
    a_pos = np.tile(seen[1][None, :], (y.size, 1))
    ins, cls = contrastive_losses_backward(
        bundle.generator, bundle.embedder, bundle.projector, bundle.comparator,
        x, y, eps, a_pos, seen, LossParams(), rng_pairs=stream(9, Stream.PAIRING, 0),
        with_grads=False)
    assert ins == 0.0
    assert math.isfinite(cls) and cls > 0


def test_singleton_class_anchors_sit_out():
    # class 3 appears once in the batch; its real and generated rows must be
    # skipped as anchors even though the generated twin would pair with it
    bundle, x, y, a_pos, eps, seen = ce_parts(10)
    y[:] = np.array([1, 1, 1, 1, 1, 3])
    a_pos = seen[y - 1]
    lp = LossParams(tau_e=0.5, tau_s=0.5)
    ins, _ = contrastive_losses_backward(
        bundle.generator, bundle.embedder, bundle.projector, bundle.comparator,
        x, y, eps, a_pos, seen, lp, rng_pairs=stream(10, Stream.PAIRING, 0),
        with_grads=False)
    labels = np.concatenate([y, y])
    pos_idx = draw_positive_indices(labels, stream(10, Stream.PAIRING, 0))
    counts = np.bincount(y, minlength=int(y.max()) + 1)
    pos_idx[counts[labels] < 2] = -1
    assert (pos_idx[labels == 3] == -1).all()
    want_ins, _ = oracles.contrastive_pair(
        bundle.generator.net, bundle.embedder.net, bundle.projector.net,
        bundle.comparator.net, x, y, eps, a_pos, seen, 0.5, 0.5, pos_idx.tolist())
    assert ins == pytest.approx(want_ins, abs=1e-5)


def test_pk_anchor_structure_matches_oracle():
    bundle, x, y, a_pos, eps, seen = ce_parts(11)
    rng = stream(11, Stream.GENERIC, 82)
    b, p_count, k_count = x.shape[0], 2, 3
    pos_x = np.abs(rng.normal(size=(b * p_count, D_X))).astype(np.float32)
    neg_x = np.abs(rng.normal(size=(b * k_count, D_X))).astype(np.float32)
    lp = LossParams(tau_e=0.5, tau_s=0.5)
    ins, _ = contrastive_losses_backward(
        bundle.generator, bundle.embedder, bundle.projector, bundle.comparator,
        x, y, eps, a_pos, seen, lp, rng_pairs=stream(11, Stream.PAIRING, 0),
        pk=(pos_x, neg_x, p_count, k_count), include_cls=False, with_grads=False)
    # oracle over the explicit anchor blocks
    fake = oracles.net_forward(bundle.generator.net, oracles.concat_rows(eps, a_pos))
    pool = oracles.to_rows(x) + fake + oracles.to_rows(pos_x) + oracles.to_rows(neg_x)
    h = oracles.net_forward(bundle.embedder.net, pool)
    z = oracles.net_forward(bundle.projector.net, h)
    anchors, pos_rows, neg_lists = [], [], []
    neg_base = 2 * b + b * p_count
    for i in range(b):
        for p in range(p_count):
            anchors.append(i)
            pos_rows.append(2 * b + i * p_count + p)
            neg_lists.append([neg_base + i * k_count + k for k in range(k_count)])
    want = oracles.instance_loss(z, anchors, pos_rows, neg_lists, 0.5)
    assert ins == pytest.approx(want, abs=1e-5)


# ---------------------------------------------------------------------------
# totals

def se_setup(seed):
    cfg = TrainConfig(mode="se_basic", seed=seed, hidden=HID)
    bundle = NetBundle.build(cfg, D_X, D_A)
    rng = stream(seed, Stream.GENERIC, 83)
    x = np.abs(rng.normal(size=(5, D_X))).astype(np.float32)
    y = rng.integers(1, 4, size=5)
    a_pos = rng.uniform(size=(5, D_A)).astype(np.float32)
    a_neg = rng.uniform(size=(5, D_A)).astype(np.float32)
    return bundle, Batch(x=x, y=y, a_pos=a_pos, a_neg=a_neg)


def test_total_basic_is_sum_of_parts():
    from gzslkit.embedding import rank_dot_backward, rank_dot_sync_backward
    from gzslkit.generation import adversarial_value
    bundle, batch = se_setup(0)
    lp = LossParams(margin_delta=1.0)
    total = total_loss_basic(bundle, batch, lp, stream(0, Stream.GENERIC, 84))
    eps = draw_noise(bundle.generator, 5, stream(0, Stream.GENERIC, 84))
    fake = bundle.generator.net.forward(concat_cols(eps, batch.a_pos))
    v = adversarial_value(bundle.discriminator, batch.x, batch.a_pos, fake, batch.a_pos)
    se_r = rank_dot_backward(bundle.embedder, batch.x, batch.a_pos, batch.a_neg,
                             1.0, with_grads=False)
    se_s = rank_dot_sync_backward(bundle.generator, bundle.embedder, eps,
                                  batch.a_pos, batch.a_neg, 1.0, with_grads=False)
    assert total == pytest.approx(v + se_r + se_s, abs=1e-6)


def test_total_basic_degenerates_to_adversarial_value():
    from gzslkit.generation import adversarial_value
    bundle, batch = se_setup(1)
    zero_net(bundle.embedder)  # all ranking scores 0, margin 0 -> hinge dead
    lp = LossParams(margin_delta=0.0)
    total = total_loss_basic(bundle, batch, lp, stream(1, Stream.GENERIC, 85))
    eps = draw_noise(bundle.generator, 5, stream(1, Stream.GENERIC, 85))
    fake = bundle.generator.net.forward(concat_cols(eps, batch.a_pos))
    v = adversarial_value(bundle.discriminator, batch.x, batch.a_pos, fake, batch.a_pos)
    assert total == pytest.approx(v, abs=1e-9)


def test_total_basic_matches_oracle():
    bundle, batch = se_setup(2)
    lp = LossParams(margin_delta=1.0)
    total = total_loss_basic(bundle, batch, lp, stream(2, Stream.GENERIC, 86))
    eps = draw_noise(bundle.generator, 5, stream(2, Stream.GENERIC, 86))
    fake = oracles.net_forward(bundle.generator.net, oracles.concat_rows(eps, batch.a_pos))
    v = oracles.adversarial_value_from_nets(
        bundle.discriminator.net, oracles.to_rows(batch.x), oracles.to_rows(batch.a_pos),
        fake, oracles.to_rows(batch.a_pos))
    se_r = oracles.rank_dot(bundle.embedder.net, batch.x, batch.a_pos, batch.a_neg, 1.0)
    se_s = oracles.rank_dot_sync(bundle.generator.net, bundle.embedder.net, eps,
                                 batch.a_pos, batch.a_neg, 1.0)
    assert total == pytest.approx(v + se_r + se_s, abs=1e-5)


def ce_setup(seed):
    cfg = TrainConfig(mode="ce_full", d_h=4, d_z=3, hidden=HID, seed=seed)
    bundle = NetBundle.build(cfg, D_X, D_A)
    rng = stream(seed, Stream.GENERIC, 87)
    desc = rng.uniform(size=(6, D_A)).astype(np.float32)
    y = rng.integers(1, 5, size=6)
    y[:2] = 2
    x = np.abs(rng.normal(size=(6, D_X))).astype(np.float32)
    return bundle, Batch(x=x, y=y, a_pos=desc[y - 1], a_neg=None), desc[:4]


def ce_components(bundle, batch, seen, lp, rng):
    """V / ins / cls recomputed with the exact same stream consumption."""
    from gzslkit.generation import adversarial_value
    eps = draw_noise(bundle.generator, batch.x.shape[0], rng)
    fake = bundle.generator.net.forward(concat_cols(eps, batch.a_pos))
    v = adversarial_value(bundle.discriminator, batch.x, batch.a_pos, fake, batch.a_pos)
    ins, cls = contrastive_losses_backward(
        bundle.generator, bundle.embedder, bundle.projector, bundle.comparator,
        batch.x, batch.y, eps, batch.a_pos, seen, lp, rng_pairs=rng,
        with_grads=False)
    return v, ins, cls


def test_total_ce_flag_semantics_are_exact():
    bundle, batch, seen = ce_setup(3)
    lp = LossParams(tau_e=0.5, tau_s=0.5)
    v, ins, cls = ce_components(bundle, batch, seen, lp, stream(3, Stream.GENERIC, 88))
    full = total_loss_ce(bundle, batch, lp, stream(3, Stream.GENERIC, 88), seen)
    ins_only = total_loss_ce(bundle, batch, lp, stream(3, Stream.GENERIC, 88), seen,
                             include_cls=False)
    cls_only = total_loss_ce(bundle, batch, lp, stream(3, Stream.GENERIC, 88), seen,
                             include_ins=False)
    assert full == pytest.approx(v + ins + cls, abs=1e-9)
    assert ins_only == v + ins
    assert cls_only == v + cls


def test_total_ce_matches_oracle():
    bundle, batch, seen = ce_setup(4)
    lp = LossParams(tau_e=0.5, tau_s=0.5)
    total = total_loss_ce(bundle, batch, lp, stream(4, Stream.GENERIC, 89), seen)
    rng = stream(4, Stream.GENERIC, 89)
    eps = draw_noise(bundle.generator, 6, rng)
    fake = oracles.net_forward(bundle.generator.net, oracles.concat_rows(eps, batch.a_pos))
    v = oracles.adversarial_value_from_nets(
        bundle.discriminator.net, oracles.to_rows(batch.x),
        oracles.to_rows(batch.a_pos), fake, oracles.to_rows(batch.a_pos))
    labels = np.concatenate([batch.y, batch.y])
    pos_idx = draw_positive_indices(labels, rng)
    counts = np.bincount(batch.y, minlength=int(batch.y.max()) + 1)
    pos_idx[counts[labels] < 2] = -1
    if np.unique(labels).size < 2:
        pos_idx[:] = -1
    ins, cls = oracles.contrastive_pair(
        bundle.generator.net, bundle.embedder.net, bundle.projector.net,
        bundle.comparator.net, batch.x, batch.y, eps, batch.a_pos, seen,
        0.5, 0.5, pos_idx.tolist())
    assert total == pytest.approx(v + ins + cls, abs=1e-5)


def test_loss_params_validation():
    with pytest.raises(DomainError):
        LossParams(tau_e=0.0).validate()
    with pytest.raises(DomainError):
        LossParams(tau_s=-1.0).validate()
    with pytest.raises(DomainError):
        LossParams(margin_delta=-0.1).validate()
