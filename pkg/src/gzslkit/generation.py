"""Conditional feature generation: a generator that maps (noise, descriptor)
to a feature vector and a discriminator that scores (feature, descriptor)
pairs.  The value function is the vanilla minimax form; a flag switches the
generator side to the non-saturating variant.
"""

from dataclasses import dataclass

import numpy as np

from .errors import NumericsError, ShapeError
from .neural import (
    Mlp, adam_step, affine, concat_cols, leaky_relu, relu, sigmoid, split_cols,
)

LOG_CLAMP = 1e-12


@dataclass
class GeneratorNet:
    """Feature generator.  Input is concat(noise, descriptor); the output
    passes a final nonnegativity clamp to match post-ReLU upstream features."""

    net: Mlp
    noise_dim: int

    @property
    def d_a(self) -> int:
        return self.net.in_dim - self.noise_dim

    @property
    def d_x(self) -> int:
        return self.net.out_dim

    def clone(self, dtype=None) -> "GeneratorNet":
        return GeneratorNet(self.net.clone(dtype), self.noise_dim)


@dataclass
class DiscriminatorNet:
    """Conditional discriminator over concat(feature, descriptor), sigmoid output."""

    net: Mlp

    @property
    def d_in(self) -> int:
        return self.net.in_dim

    def clone(self, dtype=None) -> "DiscriminatorNet":
        return DiscriminatorNet(self.net.clone(dtype))


def build_generator(d_a: int, d_x: int, noise_dim: int, hidden: int, rng) -> GeneratorNet:
    net = Mlp(
        [affine(noise_dim + d_a, hidden), leaky_relu(hidden), affine(hidden, d_x), relu(d_x)],
        rng=rng,
    )
    return GeneratorNet(net=net, noise_dim=noise_dim)


def build_discriminator(d_x: int, d_a: int, hidden: int, rng) -> DiscriminatorNet:
    net = Mlp(
        [affine(d_x + d_a, hidden), leaky_relu(hidden), affine(hidden, 1), sigmoid(1)],
        rng=rng,
    )
    return DiscriminatorNet(net=net)


def draw_noise(g: GeneratorNet, n_rows: int, rng) -> np.ndarray:
    return rng.standard_normal((n_rows, g.noise_dim), dtype=np.float32)


def generate(g: GeneratorNet, a, rng) -> np.ndarray:
    """Generate one feature row per descriptor row; entries are >= 0."""
    a = np.asarray(a, dtype=np.float32)
    if a.ndim != 2 or a.shape[1] != g.d_a:
        raise ShapeError(f"descriptors must be (n, {g.d_a})")
    eps = draw_noise(g, a.shape[0], rng)
    return g.net.forward(concat_cols(eps, a))


def _clamped_log(p: np.ndarray) -> np.ndarray:
    return np.log(np.maximum(p.astype(np.float64), LOG_CLAMP))


def _inv_where_unclamped(p: np.ndarray) -> np.ndarray:
    """d/dp of the clamped log: 1/p where p > clamp, else 0."""
    p64 = p.astype(np.float64)
    return np.where(p64 > LOG_CLAMP, 1.0 / np.maximum(p64, LOG_CLAMP), 0.0)


def adversarial_value(d: DiscriminatorNet, real_x, real_a, fake_x, fake_a,
                      sig=None) -> float:
    """V = mean log D(x,a) + mean log(1 - D(x~,a)), logs clamped for stability."""
    tape_r = d.net.forward_tape(concat_cols(real_x, real_a))
    tape_f = d.net.forward_tape(concat_cols(fake_x, fake_a))
    p_real, p_fake = tape_r.output, tape_f.output
    if sig is not None:
        sig.append(tape_r.kink_signature())
        sig.append(tape_f.kink_signature())
        sig.append(np.packbits(p_real.astype(np.float64) > LOG_CLAMP).tobytes())
        sig.append(np.packbits((1.0 - p_fake.astype(np.float64)) > LOG_CLAMP).tobytes())
    v = float(np.mean(_clamped_log(p_real)) + np.mean(_clamped_log(1.0 - p_fake)))
    if not np.isfinite(v):
        raise NumericsError("adversarial value is not finite")
    return v


def adversarial_value_grads(d: DiscriminatorNet, real_x, real_a, fake_x, fake_a,
                            scale: float = 1.0, sig=None) -> float:
    """V on fixed inputs, accumulating scale * dV/dtheta on the discriminator.

    scale=+1 audits the ascent direction; scale=-1 is what a minimizing
    optimizer consumes when the discriminator maximizes V.
    """
    tape_r = d.net.forward_tape(concat_cols(real_x, real_a))
    tape_f = d.net.forward_tape(concat_cols(fake_x, fake_a))
    p_r, p_f = tape_r.output, tape_f.output
    v = float(np.mean(_clamped_log(p_r)) + np.mean(_clamped_log(1.0 - p_f)))
    if sig is not None:
        sig.append(tape_r.kink_signature())
        sig.append(tape_f.kink_signature())
        sig.append(np.packbits(p_r.astype(np.float64) > LOG_CLAMP).tobytes())
        sig.append(np.packbits((1.0 - p_f.astype(np.float64)) > LOG_CLAMP).tobytes())
    if not np.isfinite(v):
        raise NumericsError("adversarial value is not finite")
    up_r = (scale * _inv_where_unclamped(p_r) / p_r.shape[0]).astype(p_r.dtype)
    up_f = (-scale * _inv_where_unclamped(1.0 - p_f) / p_f.shape[0]).astype(p_f.dtype)
    d.net.backward_tape(tape_r, up_r)
    d.net.backward_tape(tape_f, up_f)
    return v


def discriminator_step(g: GeneratorNet, d: DiscriminatorNet, x, a, rng,
                       lr: float = 1e-4, beta1: float = 0.5, beta2: float = 0.999) -> float:
    """One ascent step on V for the discriminator (generator frozen).

    Returns the pre-step value of V on this batch.
    """
    fake = generate(g, a, rng)
    d.net.zero_grads()
    v = adversarial_value_grads(d, x, a, fake, a, scale=-1.0)
    adam_step(d.net.params, lr=lr, beta1=beta1, beta2=beta2)
    return v


def generator_adv_term(g: GeneratorNet, d: DiscriminatorNet, fake: np.ndarray, a,
                       nonsaturating: bool = False, with_grads: bool = True, sig=None):
    """Generator-side adversarial term and its gradient w.r.t. the fake rows.

    Minimax: minimize mean log(1 - D(x~,a)).  Non-saturating: minimize
    -mean log D(x~,a).  The discriminator is read-only here; any gradients it
    accumulates while routing are discarded.
    """
    tape = d.net.forward_tape(concat_cols(fake, a))
    p_f = tape.output
    n = p_f.shape[0]
    if nonsaturating:
        value = float(-np.mean(_clamped_log(p_f)))
        up = -_inv_where_unclamped(p_f) / n
        unclamped = p_f.astype(np.float64) > LOG_CLAMP
    else:
        value = float(np.mean(_clamped_log(1.0 - p_f)))
        up = -_inv_where_unclamped(1.0 - p_f) / n
        unclamped = (1.0 - p_f.astype(np.float64)) > LOG_CLAMP
    if sig is not None:
        sig.append(tape.kink_signature())
        sig.append(np.packbits(unclamped).tobytes())
    if not np.isfinite(value):
        raise NumericsError("generator adversarial term is not finite")
    if not with_grads:
        return value, None
    saved = [p.grad.copy() for p in d.net.params]
    dinput = d.net.backward_tape(tape, up.astype(p_f.dtype))
    for p, s in zip(d.net.params, saved):
        p.grad[...] = s
    dfake, _ = split_cols(dinput, fake.shape[1])
    return value, dfake


def generator_adv_backward(g: GeneratorNet, d: DiscriminatorNet, eps, a,
                           nonsaturating: bool = False, with_grads: bool = True,
                           sig=None) -> float:
    """Generator-side adversarial term from fixed noise; accumulates G grads."""
    g_tape = g.net.forward_tape(concat_cols(eps, a))
    if sig is not None:
        sig.append(g_tape.kink_signature())
    value, dfake = generator_adv_term(g, d, g_tape.output, a,
                                      nonsaturating=nonsaturating,
                                      with_grads=with_grads, sig=sig)
    if with_grads:
        g.net.backward_tape(g_tape, dfake)
    return value


def generator_step(g: GeneratorNet, d: DiscriminatorNet, a, rng,
                   lr: float = 1e-4, beta1: float = 0.5, beta2: float = 0.999,
                   nonsaturating: bool = False) -> float:
    """One descent step on the generator-side adversarial objective alone."""
    a = np.asarray(a, dtype=np.float32)
    g.net.zero_grads()
    eps = draw_noise(g, a.shape[0], rng)
    g_tape = g.net.forward_tape(concat_cols(eps, a))
    value, dfake = generator_adv_term(g, d, g_tape.output, a, nonsaturating=nonsaturating)
    g.net.backward_tape(g_tape, dfake)
    adam_step(g.net.params, lr=lr, beta1=beta1, beta2=beta2)
    return value


def synthesize_unseen_features(g: GeneratorNet, semantic, n_per_class: int, rng):
    """Raw generated features for every unseen class, n_per_class rows each."""
    xs, ys = [], []
    for cid in semantic.unseen_ids:
        a = np.tile(semantic.descriptors[cid - 1][None, :], (n_per_class, 1))
        xs.append(generate(g, a, rng))
        ys.append(np.full(n_per_class, cid, dtype=np.int64))
    if not xs:
        return np.zeros((0, g.d_x), dtype=np.float32), np.zeros((0,), dtype=np.int64)
    return np.concatenate(xs), np.concatenate(ys)


def synthesize_unseen_embeddings(g: GeneratorNet, e, semantic, n_per_class: int, rng):
    """Embedded synthetic unseen examples: E(G(a_u, eps)) with labels."""
    x, y = synthesize_unseen_features(g, semantic, n_per_class, rng)
    return e.net.forward(x), y
