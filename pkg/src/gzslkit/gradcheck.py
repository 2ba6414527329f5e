"""Finite-difference audits of every hand-written backward pass.

Each family check rebuilds a tiny world, clones the relevant nets to
float64, computes the analytic gradient once, then compares it against
central differences entry by entry.  Entries whose +/- probes land on
different sides of an activation kink, hinge boundary, or log clamp are
excluded via the signature mechanism, so a clean implementation scores
relative errors near machine precision rather than near the tolerance.
"""

from dataclasses import dataclass

import numpy as np

from .data import SyntheticWorldSpec, make_synthetic_world
from .embedding import (
    LossParams, build_comparator, build_embedder, build_projector,
    contrastive_losses_backward, rank_comp_backward, rank_comp_sync_backward,
    rank_dot_backward, rank_dot_sync_backward,
)
from .errors import DomainError
from .generation import (
    adversarial_value, adversarial_value_grads, build_discriminator,
    build_generator, draw_noise, generator_adv_backward,
)
from .neural import GradCheckReport, concat_cols, fd_audit
from .rng import Stream, stream

FAMILY_NAMES = (
    "adv_d",
    "adv_g",
    "rank_real",
    "rank_sync",
    "rank_comp_real",
    "rank_comp_sync",
    "instance",
    "instance_pk",
    "class",
    "total_basic",
    "total_ce",
)

# deliberately small so perturbing every entry stays fast
_WORLD = dict(seen_count=4, unseen_count=2, d_x=6, d_a=3, n_per_class=6,
              noise_sigma=0.3)
_HIDDEN = 8
_D_H = 4
_D_Z = 4
_BATCH = 4
_PK = (2, 3)  # P, K


@dataclass
class Fixture:
    """Float64 nets plus one fixed batch for a family audit."""

    g: object
    d: object
    e: object       # embedder into the projection space (d_h)
    e_sem: object   # embedder straight into descriptor space (d_h = d_a)
    proj: object
    f: object
    x: np.ndarray
    y: np.ndarray
    a_pos: np.ndarray
    a_neg: np.ndarray
    eps: np.ndarray
    pk: tuple
    seen_desc: np.ndarray
    lp: LossParams
    seed: int


def build_fixture(seed: int = 0) -> Fixture:
    spec = SyntheticWorldSpec(seed=seed, **_WORLD)
    ds = make_synthetic_world(spec)
    d_x, d_a = spec.d_x, spec.d_a
    g = build_generator(d_a, d_x, d_a, _HIDDEN, stream(seed, Stream.INIT, 0)).clone(np.float64)
    d = build_discriminator(d_x, d_a, _HIDDEN, stream(seed, Stream.INIT, 1)).clone(np.float64)
    e = build_embedder(d_x, _D_H, stream(seed, Stream.INIT, 2)).clone(np.float64)
    e_sem = build_embedder(d_x, d_a, stream(seed, Stream.INIT, 2)).clone(np.float64)
    proj = build_projector(_D_H, _D_Z, stream(seed, Stream.INIT, 3)).clone(np.float64)
    f = build_comparator(_D_H, d_a, _HIDDEN, stream(seed, Stream.INIT, 4)).clone(np.float64)

    rng = stream(seed, Stream.BATCH, 0)
    idx = rng.choice(ds.n_train, size=_BATCH, replace=False)
    y = ds.train_y[idx]
    if np.unique(y).size < 2:  # tiny worlds can collide; nudge one label
        alt = np.flatnonzero(ds.train_y != y[0])[0]
        idx[-1] = alt
        y = ds.train_y[idx]
    x = ds.train_x[idx].astype(np.float64)
    a_pos = ds.semantic.rows_for(y).astype(np.float64)
    r = rng.integers(0, spec.seen_count - 1, size=_BATCH)
    neg_cls = r + 1 + (r + 1 >= y)
    a_neg = ds.semantic.rows_for(neg_cls).astype(np.float64)
    eps = draw_noise(g, _BATCH, stream(seed, Stream.NOISE_G, 0)).astype(np.float64)

    p_count, k_count = _PK
    pos_rows = np.empty(_BATCH * p_count, dtype=np.int64)
    neg_rows = np.empty(_BATCH * k_count, dtype=np.int64)
    for i, (row, cls) in enumerate(zip(idx, y)):
        same = np.flatnonzero(ds.train_y == cls)
        same = same[same != row]
        other = np.flatnonzero(ds.train_y != cls)
        pos_rows[i * p_count:(i + 1) * p_count] = same[
            rng.integers(0, same.size, size=p_count)]
        neg_rows[i * k_count:(i + 1) * k_count] = other[
            rng.integers(0, other.size, size=k_count)]
    pk = (ds.train_x[pos_rows].astype(np.float64),
          ds.train_x[neg_rows].astype(np.float64), p_count, k_count)

    # tau != 1 so a dropped 1/tau factor cannot hide, but soft enough that
    # finite-difference truncation stays orders below the tolerance
    return Fixture(g=g, d=d, e=e, e_sem=e_sem, proj=proj, f=f, x=x, y=y,
                   a_pos=a_pos, a_neg=a_neg, eps=eps, pk=pk,
                   seen_desc=ds.semantic.seen_descriptors().astype(np.float64),
                   lp=LossParams(tau_e=0.5, tau_s=0.5), seed=seed)


def _params(*nets):
    return [p for net in nets for p in net.net.params]


def _zero(*nets):
    for net in nets:
        net.net.zero_grads()


_NET_TAGS = {
    "GeneratorNet": "G", "DiscriminatorNet": "D", "EmbedNet": "E",
    "ProjectionHead": "H", "ComparatorNet": "F",
}


def _labels(nets) -> list:
    """One name per parameter block, matching _params order."""
    out = []
    for net in nets:
        tag = _NET_TAGS[type(net).__name__]
        for i in range(0, len(net.net.params), 2):
            out.append(f"{tag}.w{i // 2}")
            out.append(f"{tag}.b{i // 2}")
    return out


def family_param_labels(name: str, seed: int = 0) -> list:
    """Block names in audit order, for pointing at a failing entry."""
    fx = build_fixture(seed)
    nets, _, _ = _family_case(fx, name)
    return _labels(nets)


def _family_case(fx: Fixture, name: str):
    """Returns (nets, value_fn, grad_fn) for one family."""
    lp = fx.lp
    delta = lp.margin_delta

    if name == "adv_d":
        fake = fx.g.net.forward(concat_cols(fx.eps, fx.a_pos))

        def value_fn():
            sig = []
            v = adversarial_value(fx.d, fx.x, fx.a_pos, fake, fx.a_pos, sig=sig)
            return v, b"".join(sig)

        def grad_fn():
            _zero(fx.d)
            return adversarial_value_grads(fx.d, fx.x, fx.a_pos, fake, fx.a_pos,
                                           scale=1.0)

        return (fx.d,), value_fn, grad_fn

    if name == "adv_g":
        def value_fn():
            sig = []
            v = generator_adv_backward(fx.g, fx.d, fx.eps, fx.a_pos,
                                       with_grads=False, sig=sig)
            return v, b"".join(sig)

        def grad_fn():
            _zero(fx.g)
            return generator_adv_backward(fx.g, fx.d, fx.eps, fx.a_pos)

        return (fx.g,), value_fn, grad_fn

    if name == "rank_real":
        def value_fn():
            sig = []
            v = rank_dot_backward(fx.e_sem, fx.x, fx.a_pos, fx.a_neg, delta,
                                  with_grads=False, sig=sig)
            return v, b"".join(sig)

        def grad_fn():
            _zero(fx.e_sem)
            return rank_dot_backward(fx.e_sem, fx.x, fx.a_pos, fx.a_neg, delta)

        return (fx.e_sem,), value_fn, grad_fn

    if name == "rank_sync":
        def value_fn():
            sig = []
            v = rank_dot_sync_backward(fx.g, fx.e_sem, fx.eps, fx.a_pos, fx.a_neg,
                                       delta, with_grads=False, sig=sig)
            return v, b"".join(sig)

        def grad_fn():
            _zero(fx.g, fx.e_sem)
            return rank_dot_sync_backward(fx.g, fx.e_sem, fx.eps, fx.a_pos,
                                          fx.a_neg, delta)

        return (fx.g, fx.e_sem), value_fn, grad_fn

    if name == "rank_comp_real":
        def value_fn():
            sig = []
            v = rank_comp_backward(fx.f, fx.e, fx.x, fx.a_pos, fx.a_neg, delta,
                                   with_grads=False, sig=sig)
            return v, b"".join(sig)

        def grad_fn():
            _zero(fx.f, fx.e)
            return rank_comp_backward(fx.f, fx.e, fx.x, fx.a_pos, fx.a_neg, delta)

        return (fx.e, fx.f), value_fn, grad_fn

    if name == "rank_comp_sync":
        def value_fn():
            sig = []
            v = rank_comp_sync_backward(fx.g, fx.f, fx.e, fx.eps, fx.a_pos,
                                        fx.a_neg, delta, with_grads=False, sig=sig)
            return v, b"".join(sig)

        def grad_fn():
            _zero(fx.g, fx.f, fx.e)
            return rank_comp_sync_backward(fx.g, fx.f, fx.e, fx.eps, fx.a_pos,
                                           fx.a_neg, delta)

        return (fx.g, fx.e, fx.f), value_fn, grad_fn

    if name in ("instance", "instance_pk", "class"):
        include_ins = name != "class"
        include_cls = name == "class"
        pk = fx.pk if name == "instance_pk" else None
        nets = {
            "instance": (fx.g, fx.e, fx.proj),
            "instance_pk": (fx.g, fx.e, fx.proj),
            "class": (fx.g, fx.e, fx.f),
        }[name]

        def run(with_grads, sig=None):
            ins, cls = contrastive_losses_backward(
                fx.g, fx.e, fx.proj, fx.f, fx.x, fx.y, fx.eps, fx.a_pos,
                fx.seen_desc, lp, rng_pairs=stream(fx.seed, Stream.PAIRING, 0),
                pk=pk, include_ins=include_ins, include_cls=include_cls,
                with_grads=with_grads, sig=sig)
            return ins + cls

        def value_fn():
            sig = []
            v = run(False, sig)
            return v, b"".join(sig)

        def grad_fn():
            _zero(*nets)
            return run(True)

        return nets, value_fn, grad_fn

    if name == "total_basic":
        def pieces(with_grads, sig=None):
            g_out = fx.g.net.forward(concat_cols(fx.eps, fx.a_pos))
            v = adversarial_value(fx.d, fx.x, fx.a_pos, g_out, fx.a_pos, sig=sig)
            if with_grads:
                generator_adv_backward(fx.g, fx.d, fx.eps, fx.a_pos)
            se_r = rank_dot_backward(fx.e_sem, fx.x, fx.a_pos, fx.a_neg, delta,
                                     with_grads=with_grads, sig=sig)
            se_s = rank_dot_sync_backward(fx.g, fx.e_sem, fx.eps, fx.a_pos,
                                          fx.a_neg, delta,
                                          with_grads=with_grads, sig=sig)
            return v + se_r + se_s

        def value_fn():
            sig = []
            v = pieces(False, sig)
            return v, b"".join(sig)

        def grad_fn():
            _zero(fx.g, fx.e_sem)
            return pieces(True)

        return (fx.g, fx.e_sem), value_fn, grad_fn

    if name == "total_ce":
        def pieces(with_grads, sig=None):
            g_out = fx.g.net.forward(concat_cols(fx.eps, fx.a_pos))
            v = adversarial_value(fx.d, fx.x, fx.a_pos, g_out, fx.a_pos, sig=sig)
            if with_grads:
                generator_adv_backward(fx.g, fx.d, fx.eps, fx.a_pos)
            ins, cls = contrastive_losses_backward(
                fx.g, fx.e, fx.proj, fx.f, fx.x, fx.y, fx.eps, fx.a_pos,
                fx.seen_desc, lp, rng_pairs=stream(fx.seed, Stream.PAIRING, 0),
                pk=None, include_ins=True, include_cls=True,
                with_grads=with_grads, sig=sig)
            return v + ins + cls

        def value_fn():
            sig = []
            v = pieces(False, sig)
            return v, b"".join(sig)

        def grad_fn():
            _zero(fx.g, fx.e, fx.proj, fx.f)
            return pieces(True)

        return (fx.g, fx.e, fx.proj, fx.f), value_fn, grad_fn

    raise DomainError(f"unknown gradient-check family {name!r}")


def run_family(name: str, seed: int = 0, eps: float = 1e-4,
               fx: Fixture | None = None) -> GradCheckReport:
    """Audit one family; returns the finite-difference report."""
    if fx is None:
        fx = build_fixture(seed)
    nets, value_fn, grad_fn = _family_case(fx, name)
    return fd_audit(_params(*nets), value_fn, grad_fn, eps=eps, refine_above=1e-6)


def run_all(names=None, seed: int = 0, eps: float = 1e-4):
    """Audit the named families (all by default); returns [(name, report)]."""
    if names is None:
        names = FAMILY_NAMES
    fx = build_fixture(seed)
    return [(name, run_family(name, seed=seed, eps=eps, fx=fx)) for name in names]
