"""Embedding nets and the loss families that train them.

Two flavors of class-wise supervision: margin ranking against semantic
descriptors (dot-product scores in descriptor space, or comparator scores in
a free embedding space) and softmax-style contrastive losses (instance level
over projected embeddings, class level over comparator scores against every
seen descriptor).

Each family comes as a *_backward routine that computes the scalar value and,
when asked, accumulates gradients into the participating nets.  A training
step is a sum of family calls followed by one optimizer step; the total_loss_*
evaluators reuse the same routines with gradients off, so logged terms, test
values, and optimized objectives can never drift apart.

All *_backward routines accept a `sig` list; when given, every forward tape's
kink signature and every hinge/clamp activity pattern is appended, which lets
the finite-difference audit discard perturbations that cross a kink.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DomainError, ShapeError, SplitViolation
from .generation import (
    GeneratorNet, adversarial_value, draw_noise, generator_adv_term,
)
from .neural import (
    Mlp, affine, concat_cols, l2_normalize_rows, leaky_relu, split_cols,
)


@dataclass(frozen=True)
class LossParams:
    """Temperatures for the contrastive losses and the ranking margin."""

    tau_e: float = 0.1
    tau_s: float = 0.1
    margin_delta: float = 1.0

    def validate(self) -> "LossParams":
        if self.tau_e <= 0 or self.tau_s <= 0:
            raise DomainError("temperatures must be positive")
        if self.margin_delta < 0:
            raise DomainError("margin must be nonnegative")
        return self


@dataclass
class EmbedNet:
    """Feature-to-embedding map E."""

    net: Mlp

    @property
    def d_h(self) -> int:
        return self.net.out_dim

    def clone(self, dtype=None) -> "EmbedNet":
        return EmbedNet(self.net.clone(dtype))


@dataclass
class ProjectionHead:
    """Nonlinear projection H onto the unit sphere, for the instance loss."""

    net: Mlp

    @property
    def d_z(self) -> int:
        return self.net.out_dim

    def clone(self, dtype=None) -> "ProjectionHead":
        return ProjectionHead(self.net.clone(dtype))


@dataclass
class ComparatorNet:
    """Scores (embedding, descriptor) compatibility with a scalar output."""

    net: Mlp

    def clone(self, dtype=None) -> "ComparatorNet":
        return ComparatorNet(self.net.clone(dtype))


def build_embedder(d_x: int, d_h: int, rng) -> EmbedNet:
    return EmbedNet(Mlp([affine(d_x, d_h), leaky_relu(d_h)], rng=rng))


def build_projector(d_h: int, d_z: int, rng) -> ProjectionHead:
    return ProjectionHead(Mlp(
        [affine(d_h, d_h), leaky_relu(d_h), affine(d_h, d_z), l2_normalize_rows(d_z)],
        rng=rng,
    ))


def build_comparator(d_h: int, d_a: int, hidden: int, rng) -> ComparatorNet:
    return ComparatorNet(Mlp(
        [affine(d_h + d_a, hidden), leaky_relu(hidden), affine(hidden, 1)],
        rng=rng,
    ))


# ---------------------------------------------------------------------------
# loss math

def hinge_pair(pos_scores, neg_scores, delta: float):
    """mean(max(0, delta - pos + neg)) with gradients w.r.t. both score vectors."""
    pos = np.asarray(pos_scores, dtype=np.float64).reshape(-1)
    neg = np.asarray(neg_scores, dtype=np.float64).reshape(-1)
    if pos.shape != neg.shape or pos.size == 0:
        raise ShapeError("hinge needs matching nonempty score vectors")
    margins = delta - pos + neg
    active = margins > 0
    loss = float(np.mean(np.maximum(margins, 0.0)))
    scale = active.astype(np.float64) / pos.size
    return loss, -scale, scale, active


def infonce_from_logits(pos_logit: float, neg_logits, tau: float) -> float:
    """-log softmax of the positive among {positive} + negatives, at 1/tau scale.

    Stable for logits up to 1e4/tau in magnitude (log-sum-exp with max shift).
    """
    if tau <= 0:
        raise DomainError("tau must be positive")
    negs = np.asarray(neg_logits, dtype=np.float64).reshape(-1)
    if negs.size == 0:
        raise DomainError("instance loss needs at least one negative")
    logits = np.concatenate([[float(pos_logit)], negs]) / tau
    m = logits.max()
    lse = m + np.log(np.sum(np.exp(logits - m)))
    return float(lse - logits[0])


def instance_loss_masked(z, anchor_rows, pos_rows, neg_mask, tau: float):
    """Mean instance-level contrastive loss over explicit anchor structure.

    z: (P, d) unit rows for the whole pool; anchor_rows/pos_rows: (A,) row
    indices; neg_mask: (A, P) marks each anchor's negatives.  Returns the
    loss and dloss/dz for the pool.
    """
    z64 = np.asarray(z, dtype=np.float64)
    anchor_rows = np.asarray(anchor_rows, dtype=np.int64)
    pos_rows = np.asarray(pos_rows, dtype=np.int64)
    a = anchor_rows.size
    if a == 0:
        return 0.0, np.zeros_like(np.asarray(z))
    za = z64[anchor_rows]
    logits = (za @ z64.T) / tau                      # (A, P)
    include = neg_mask.copy()
    include[np.arange(a), pos_rows] = True
    neg_inf = -np.inf
    masked = np.where(include, logits, neg_inf)
    m = masked.max(axis=1, keepdims=True)
    expd = np.exp(masked - m)
    denom = expd.sum(axis=1, keepdims=True)
    lse = (m + np.log(denom)).reshape(-1)
    pos_logit = logits[np.arange(a), pos_rows]
    loss = float(np.mean(lse - pos_logit))
    soft = expd / denom
    soft[np.arange(a), pos_rows] -= 1.0
    dlogits = soft / a
    dz = dlogits.T @ za
    np.add.at(dz, anchor_rows, dlogits @ z64)
    dz /= tau
    return loss, dz.astype(np.asarray(z).dtype)


def softmax_nll_scores(scores, pos_cols, tau: float):
    """Mean -log softmax(scores/tau)[pos] per row, with dloss/dscores."""
    s64 = np.asarray(scores, dtype=np.float64)
    n = s64.shape[0]
    pos_cols = np.asarray(pos_cols, dtype=np.int64)
    logits = s64 / tau
    m = logits.max(axis=1, keepdims=True)
    expd = np.exp(logits - m)
    denom = expd.sum(axis=1, keepdims=True)
    lse = (m + np.log(denom)).reshape(-1)
    loss = float(np.mean(lse - logits[np.arange(n), pos_cols]))
    soft = expd / denom
    soft[np.arange(n), pos_cols] -= 1.0
    dscores = soft / (n * tau)
    return loss, dscores.astype(np.asarray(scores).dtype)


def draw_positive_indices(labels, rng) -> np.ndarray:
    """Pick one same-class partner (not itself) per row; -1 where none exists."""
    labels = np.asarray(labels)
    n = labels.shape[0]
    out = np.full(n, -1, dtype=np.int64)
    for i in range(n):
        candidates = np.flatnonzero(labels == labels[i])
        candidates = candidates[candidates != i]
        if candidates.size:
            out[i] = int(candidates[rng.integers(0, candidates.size)])
    return out


def comparator_scores_tape(f: ComparatorNet, h, a_rows):
    """Comparator scores for every (h row, descriptor row) pair.

    Returns (scores (n_h, n_a), tape); row i*n_a + j of the tape input is
    [h_i, a_j].
    """
    h = np.asarray(h)
    a_rows = np.asarray(a_rows, dtype=h.dtype)
    n_h, n_a = h.shape[0], a_rows.shape[0]
    big_h = np.repeat(h, n_a, axis=0)
    big_a = np.tile(a_rows, (n_h, 1))
    tape = f.net.forward_tape(concat_cols(big_h, big_a))
    return tape.output.reshape(n_h, n_a), tape


def _sig_push(sig, *parts):
    if sig is not None:
        for part in parts:
            sig.append(part)


def _sig_mask(mask) -> bytes:
    return np.packbits(np.asarray(mask, dtype=bool)).tobytes()


# ---------------------------------------------------------------------------
# family backward routines

def rank_dot_backward(e: EmbedNet, x, a_pos, a_neg, delta: float,
                      with_grads: bool = True, sig=None) -> float:
    """Margin ranking on dot-product scores in descriptor space (real rows)."""
    a_pos = np.asarray(a_pos)
    if e.net.out_dim != a_pos.shape[1]:
        raise ShapeError(
            f"dot-product ranking needs embedding width {a_pos.shape[1]}, "
            f"net produces {e.net.out_dim}"
        )
    tape = e.net.forward_tape(x)
    h = tape.output
    ap = a_pos.astype(h.dtype)
    an = np.asarray(a_neg, dtype=h.dtype)
    pos = np.einsum("ij,ij->i", h, ap)
    neg = np.einsum("ij,ij->i", h, an)
    loss, dpos, dneg, active = hinge_pair(pos, neg, delta)
    _sig_push(sig, tape.kink_signature(), _sig_mask(active))
    if with_grads:
        dh = (dpos[:, None] * ap.astype(np.float64)
              + dneg[:, None] * an.astype(np.float64)).astype(h.dtype)
        e.net.backward_tape(tape, dh)
    return loss


def rank_dot_sync_backward(g: GeneratorNet, e: EmbedNet, eps, a_pos, a_neg,
                           delta: float, with_grads: bool = True, sig=None) -> float:
    """Margin ranking on embedded *generated* rows; gradients reach G and E."""
    g_tape = g.net.forward_tape(concat_cols(eps, a_pos))
    fake = g_tape.output
    tape = e.net.forward_tape(fake)
    h = tape.output
    ap = np.asarray(a_pos, dtype=h.dtype)
    an = np.asarray(a_neg, dtype=h.dtype)
    if e.net.out_dim != ap.shape[1]:
        raise ShapeError("dot-product ranking needs embedding width equal to d_a")
    pos = np.einsum("ij,ij->i", h, ap)
    neg = np.einsum("ij,ij->i", h, an)
    loss, dpos, dneg, active = hinge_pair(pos, neg, delta)
    _sig_push(sig, g_tape.kink_signature(), tape.kink_signature(), _sig_mask(active))
    if with_grads:
        dh = (dpos[:, None] * ap.astype(np.float64)
              + dneg[:, None] * an.astype(np.float64)).astype(h.dtype)
        dfake = e.net.backward_tape(tape, dh)
        g.net.backward_tape(g_tape, dfake)
    return loss


def _rank_comp_on_h(f: ComparatorNet, h, a_pos, a_neg, delta, with_grads, sig):
    """Shared comparator-scored hinge; returns (loss, dh or None)."""
    a_pos = np.asarray(a_pos, dtype=h.dtype)
    a_neg = np.asarray(a_neg, dtype=h.dtype)
    tape_p = f.net.forward_tape(concat_cols(h, a_pos))
    tape_n = f.net.forward_tape(concat_cols(h, a_neg))
    loss, dpos, dneg, active = hinge_pair(tape_p.output, tape_n.output, delta)
    _sig_push(sig, tape_p.kink_signature(), tape_n.kink_signature(), _sig_mask(active))
    if not with_grads:
        return loss, None
    din_p = f.net.backward_tape(tape_p, dpos[:, None].astype(h.dtype))
    din_n = f.net.backward_tape(tape_n, dneg[:, None].astype(h.dtype))
    dh_p, _ = split_cols(din_p, h.shape[1])
    dh_n, _ = split_cols(din_n, h.shape[1])
    return loss, dh_p + dh_n


def rank_comp_backward(f: ComparatorNet, e: EmbedNet, x, a_pos, a_neg, delta: float,
                       with_grads: bool = True, sig=None) -> float:
    """Margin ranking on comparator scores for real rows; trains F and E."""
    tape = e.net.forward_tape(x)
    _sig_push(sig, tape.kink_signature())
    loss, dh = _rank_comp_on_h(f, tape.output, a_pos, a_neg, delta, with_grads, sig)
    if with_grads:
        e.net.backward_tape(tape, dh)
    return loss


def rank_comp_sync_backward(g: GeneratorNet, f: ComparatorNet, e: EmbedNet, eps,
                            a_pos, a_neg, delta: float,
                            with_grads: bool = True, sig=None) -> float:
    """Comparator-scored ranking on generated rows; trains G, F and E."""
    g_tape = g.net.forward_tape(concat_cols(eps, a_pos))
    tape = e.net.forward_tape(g_tape.output)
    _sig_push(sig, g_tape.kink_signature(), tape.kink_signature())
    loss, dh = _rank_comp_on_h(f, tape.output, a_pos, a_neg, delta, with_grads, sig)
    if with_grads:
        dfake = e.net.backward_tape(tape, dh)
        g.net.backward_tape(g_tape, dfake)
    return loss


def contrastive_losses_backward(g: GeneratorNet, e: EmbedNet, proj: ProjectionHead,
                                f: ComparatorNet, x, y, eps, a_pos, seen_descriptors,
                                lp: LossParams, rng_pairs,
                                pk: tuple | None = None,
                                include_ins: bool = True, include_cls: bool = True,
                                with_grads: bool = True, sig=None):
    """Instance and class contrastive losses over real plus generated rows.

    The pool embeds the batch rows and one generated row per batch descriptor.
    With pk=(pos_x, neg_x, P, K), instance-loss anchors are the real batch
    rows with their drawn positives/negatives; otherwise anchors are all pool
    rows, positives are drawn in-pool, and negatives are every pool row of a
    different class.  Returns (ce_ins, ce_cls).
    """
    lp.validate()
    x = np.asarray(x)
    y = np.asarray(y)
    b = x.shape[0]
    g_tape = g.net.forward_tape(concat_cols(eps, a_pos))
    fake = g_tape.output
    _sig_push(sig, g_tape.kink_signature())

    segments = [x.astype(fake.dtype), fake]
    pool_labels = [y, y]
    if pk is not None:
        pos_x, neg_x, p_count, k_count = pk
        segments += [np.asarray(pos_x, dtype=fake.dtype), np.asarray(neg_x, dtype=fake.dtype)]
        pool_labels += [np.repeat(y, p_count), np.zeros(neg_x.shape[0], dtype=y.dtype)]
    pool_x = np.concatenate(segments)
    labels = np.concatenate(pool_labels)
    e_tape = e.net.forward_tape(pool_x)
    h = e_tape.output
    _sig_push(sig, e_tape.kink_signature())
    dh = np.zeros_like(h)
    n_pool = h.shape[0]

    ce_ins = 0.0
    if include_ins:
        if pk is None:
            pos_idx = draw_positive_indices(labels[: 2 * b], rng_pairs)
            # anchors whose class has a single real row in the batch sit out,
            # as does everyone when the batch has no second class at all
            counts = np.bincount(y, minlength=int(y.max()) + 1)
            pos_idx[counts[labels[: 2 * b]] < 2] = -1
            if np.unique(labels).size < 2:
                pos_idx[:] = -1
            anchors = np.flatnonzero(pos_idx >= 0)
            pos_rows = pos_idx[anchors]
            neg_mask = labels[None, : n_pool] != labels[anchors, None]
        else:
            anchors = np.repeat(np.arange(b, dtype=np.int64), p_count)
            pos_rows = 2 * b + np.arange(b * p_count, dtype=np.int64)
            neg_mask = np.zeros((b * p_count, n_pool), dtype=bool)
            neg_base = 2 * b + b * p_count
            for i in range(b):
                cols = neg_base + i * k_count + np.arange(k_count)
                neg_mask[i * p_count:(i + 1) * p_count, cols] = True
        z_tape = proj.net.forward_tape(h)
        _sig_push(sig, z_tape.kink_signature())
        if anchors.size:
            ce_ins, dz = instance_loss_masked(z_tape.output, anchors, pos_rows,
                                              neg_mask, lp.tau_e)
            if with_grads:
                dh += proj.net.backward_tape(z_tape, dz)

    ce_cls = 0.0
    if include_cls:
        scores, f_tape = comparator_scores_tape(f, h[: 2 * b], seen_descriptors)
        _sig_push(sig, f_tape.kink_signature())
        ce_cls, dscores = softmax_nll_scores(scores, labels[: 2 * b] - 1, lp.tau_s)
        if with_grads:
            din = f.net.backward_tape(f_tape, dscores.reshape(-1, 1))
            dh_part, _ = split_cols(din, h.shape[1])
            dh[: 2 * b] += dh_part.reshape(2 * b, seen_descriptors.shape[0], h.shape[1]).sum(axis=1)

    if with_grads:
        dpool = e.net.backward_tape(e_tape, dh)
        g.net.backward_tape(g_tape, dpool[b: 2 * b])
    return ce_ins, ce_cls


# ---------------------------------------------------------------------------
# spec-facing evaluators

def ranking_loss_real(e: EmbedNet, x, a_pos, a_neg, delta: float) -> float:
    """Ranking loss on real rows against (positive, negative) descriptors."""
    return rank_dot_backward(e, x, a_pos, a_neg, delta, with_grads=False)


def _check_seen_rows(a, semantic, name: str):
    seen = semantic.seen_descriptors()
    arr = np.asarray(a, dtype=seen.dtype)
    hits = (arr[:, None, :] == seen[None, :, :]).all(axis=2).any(axis=1)
    if not bool(hits.all()):
        raise SplitViolation(f"{name} contains a descriptor that is not a seen-class row")


def ranking_loss_sync(g: GeneratorNet, e: EmbedNet, a_pos, a_neg, delta: float,
                      rng, semantic=None) -> float:
    """Ranking loss on generated rows.  Defined for seen-class descriptors
    only; membership is enforced when a semantic table is supplied."""
    if semantic is not None:
        _check_seen_rows(a_pos, semantic, "a_pos")
        _check_seen_rows(a_neg, semantic, "a_neg")
    a_pos = np.asarray(a_pos, dtype=np.float32)
    eps = draw_noise(g, a_pos.shape[0], rng)
    return rank_dot_sync_backward(g, e, eps, a_pos, a_neg, delta, with_grads=False)


def instance_contrastive_loss(z_i, z_pos, z_negs, tau_e: float) -> float:
    """Single-anchor instance loss from unit-norm embedding rows."""
    z_i = np.asarray(z_i, dtype=np.float64).reshape(-1)
    z_pos = np.asarray(z_pos, dtype=np.float64).reshape(-1)
    z_negs = np.asarray(z_negs, dtype=np.float64)
    if z_negs.ndim != 2 or z_negs.shape[0] == 0:
        raise DomainError("z_negs must be a nonempty matrix of negative rows")
    if z_pos.shape[0] != z_i.shape[0] or z_negs.shape[1] != z_i.shape[0]:
        raise ShapeError("embedding widths disagree in instance loss")
    return infonce_from_logits(float(z_i @ z_pos), z_negs @ z_i, tau_e)


def class_contrastive_loss(f: ComparatorNet, h_i, a_all_seen, pos_index: int,
                           tau_s: float) -> float:
    """Single-anchor class loss: S-way softmax over comparator scores."""
    a_all_seen = np.asarray(a_all_seen)
    s = a_all_seen.shape[0]
    if not (1 <= pos_index <= s):
        raise DomainError(f"pos_index must be in 1..{s}, got {pos_index}")
    h = np.asarray(h_i, dtype=np.float32).reshape(1, -1)
    scores, _ = comparator_scores_tape(f, h, a_all_seen)
    loss, _ = softmax_nll_scores(scores, np.array([pos_index - 1]), tau_s)
    return loss


def total_loss_basic(nets, batch, lp: LossParams, rng) -> float:
    """Full batch objective of the basic hybrid: V + ranking real + ranking sync."""
    lp.validate()
    g, d, e = nets.generator, nets.discriminator, nets.embedder
    eps = draw_noise(g, np.asarray(batch.x).shape[0], rng)
    fake = g.net.forward_tape(concat_cols(eps, batch.a_pos)).output
    v = adversarial_value(d, batch.x, batch.a_pos, fake, batch.a_pos)
    se_real = rank_dot_backward(e, batch.x, batch.a_pos, batch.a_neg,
                                lp.margin_delta, with_grads=False)
    se_sync = rank_dot_sync_backward(g, e, eps, batch.a_pos, batch.a_neg,
                                     lp.margin_delta, with_grads=False)
    return v + se_real + se_sync


def total_loss_ce(nets, batch, lp: LossParams, rng, seen_descriptors,
                  include_ins: bool = True, include_cls: bool = True) -> float:
    """Full batch objective of the contrastive hybrid: V + instance + class.

    The ins/cls flags zero their terms exactly (the term is simply skipped).
    """
    lp.validate()
    g, d, e = nets.generator, nets.discriminator, nets.embedder
    proj, f = nets.projector, nets.comparator
    eps = draw_noise(g, np.asarray(batch.x).shape[0], rng)
    fake = g.net.forward_tape(concat_cols(eps, batch.a_pos)).output
    v = adversarial_value(d, batch.x, batch.a_pos, fake, batch.a_pos)
    ce_ins, ce_cls = contrastive_losses_backward(
        g, e, proj, f, batch.x, batch.y, eps, batch.a_pos, seen_descriptors, lp,
        rng_pairs=rng, pk=getattr(batch, "pk", None),
        include_ins=include_ins, include_cls=include_cls, with_grads=False,
    )
    return v + ce_ins + ce_cls
