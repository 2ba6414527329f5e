"""Minimal neural substrate: float32 matrices, a fixed layer zoo, reverse-mode
gradients, an adaptive-moment optimizer, and a finite-difference gradient audit.

Matrices are plain 2-D numpy arrays.  Networks are straight-line stacks of
layers (no branching inside a net); composition across nets is done by the
callers, which concatenate inputs and route gradients through the returned
input-gradient matrices.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, NumericsError, ShapeError, StateError

AFFINE = "affine"
LEAKY_RELU = "leaky_relu"
RELU = "relu"
SIGMOID = "sigmoid"
L2_NORMALIZE_ROWS = "l2_normalize_rows"

_ACTIVATIONS = (LEAKY_RELU, RELU, SIGMOID, L2_NORMALIZE_ROWS)
_NORM_FLOOR = 1e-12


def as_matrix(x, name: str = "matrix", dtype=np.float32) -> np.ndarray:
    """Validate a 2-D array and coerce dtype."""
    arr = np.asarray(x)
    if arr.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got ndim={arr.ndim}")
    return np.ascontiguousarray(arr, dtype=dtype)


@dataclass
class Param:
    """A trainable matrix plus its gradient and optimizer moments."""

    value: np.ndarray
    grad: np.ndarray = None
    moment1: np.ndarray = None
    moment2: np.ndarray = None
    step_count: int = 0

    def __post_init__(self):
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        if self.moment1 is None:
            self.moment1 = np.zeros_like(self.value)
        if self.moment2 is None:
            self.moment2 = np.zeros_like(self.value)

    def zero_grad(self):
        self.grad[...] = 0

    def clone(self, dtype=None) -> "Param":
        dt = dtype or self.value.dtype
        return Param(
            value=self.value.astype(dt),
            grad=self.grad.astype(dt),
            moment1=self.moment1.astype(dt),
            moment2=self.moment2.astype(dt),
            step_count=self.step_count,
        )


@dataclass(frozen=True)
class LayerSpec:
    """One layer of a net.  Activations must keep in_dim == out_dim."""

    kind: str
    in_dim: int
    out_dim: int
    slope: float = 0.0

    def validate(self):
        if self.kind not in (AFFINE,) + _ACTIVATIONS:
            raise ShapeError(f"unknown layer kind {self.kind!r}")
        if self.in_dim < 1 or self.out_dim < 1:
            raise ShapeError(f"layer dims must be positive, got {self.in_dim}x{self.out_dim}")
        if self.kind in _ACTIVATIONS and self.in_dim != self.out_dim:
            raise ShapeError(f"{self.kind} must preserve width, got {self.in_dim}->{self.out_dim}")
        if self.kind == LEAKY_RELU and not (0.0 < self.slope < 1.0):
            raise ShapeError(f"leaky_relu slope must be in (0, 1), got {self.slope}")


def affine(in_dim: int, out_dim: int) -> LayerSpec:
    return LayerSpec(AFFINE, in_dim, out_dim)


def leaky_relu(dim: int, slope: float = 0.2) -> LayerSpec:
    return LayerSpec(LEAKY_RELU, dim, dim, slope)


def relu(dim: int) -> LayerSpec:
    return LayerSpec(RELU, dim, dim)


def sigmoid(dim: int) -> LayerSpec:
    return LayerSpec(SIGMOID, dim, dim)


def l2_normalize_rows(dim: int) -> LayerSpec:
    return LayerSpec(L2_NORMALIZE_ROWS, dim, dim)


@dataclass
class Tape:
    """Saved intermediates from one forward pass, consumed by backward."""

    records: list
    output: np.ndarray
    n_rows: int

    def kink_signature(self) -> bytes:
        """Regime pattern at every non-smooth layer: activation input signs
        plus row-normalize clamp flags.

        Two evaluations whose signatures differ straddle a kink, so a finite
        difference across them is not trustworthy.
        """
        parts = []
        for kind, saved in self.records:
            if kind in (LEAKY_RELU, RELU):
                parts.append(np.packbits(saved >= 0).tobytes())
            elif kind == L2_NORMALIZE_ROWS:
                parts.append(np.packbits(saved[2]).tobytes())
        return b"".join(parts)


class Mlp:
    """A straight-line stack of layers over 2-D inputs.

    Affine layers own two Params (weight in_dim x out_dim, bias 1 x out_dim).
    forward keeps a tape for the simple forward/backward pairing; concurrent
    passes through the same net should use forward_tape/backward_tape.
    """

    def __init__(self, layers, rng=None, dtype=np.float32, params=None):
        layers = list(layers)
        if not layers:
            raise ShapeError("net needs at least one layer")
        for spec in layers:
            spec.validate()
        for prev, nxt in zip(layers, layers[1:]):
            if prev.out_dim != nxt.in_dim:
                raise ShapeError(
                    f"layer dims do not chain: {prev.out_dim} -> {nxt.in_dim}"
                )
        self.layers = layers
        self.dtype = dtype
        self._tape = None
        if params is not None:
            expected = 2 * sum(1 for s in layers if s.kind == AFFINE)
            if len(params) != expected:
                raise ShapeError(f"expected {expected} params for this layer stack, got {len(params)}")
            self.params = params
        else:
            if rng is None:
                raise StateError("an rng is required to initialize parameters")
            self.params = []
            for spec in layers:
                if spec.kind == AFFINE:
                    limit = np.sqrt(6.0 / (spec.in_dim + spec.out_dim))
                    w = rng.uniform(-limit, limit, size=(spec.in_dim, spec.out_dim))
                    self.params.append(Param(np.ascontiguousarray(w, dtype=dtype)))
                    self.params.append(Param(np.zeros((1, spec.out_dim), dtype=dtype)))

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim

    def zero_grads(self):
        for p in self.params:
            p.zero_grad()

    def clone(self, dtype=None) -> "Mlp":
        dt = dtype or self.dtype
        return Mlp(self.layers, dtype=dt, params=[p.clone(dt) for p in self.params])

    def copy_values_from(self, other: "Mlp"):
        for mine, theirs in zip(self.params, other.params):
            mine.value[...] = theirs.value
            mine.moment1[...] = theirs.moment1
            mine.moment2[...] = theirs.moment2
            mine.step_count = theirs.step_count

    def forward_tape(self, x) -> Tape:
        """Run the net, returning a tape whose .output is the result."""
        h = as_matrix(x, "input", dtype=self.dtype)
        if h.shape[1] != self.in_dim:
            raise ShapeError(f"input has {h.shape[1]} columns, net expects {self.in_dim}")
        records = []
        p = 0
        for spec in self.layers:
            if spec.kind == AFFINE:
                w, b = self.params[p].value, self.params[p + 1].value
                records.append((AFFINE, h))
                h = h @ w + b
                p += 2
            elif spec.kind == LEAKY_RELU:
                records.append((LEAKY_RELU, h))
                h = np.where(h >= 0, h, spec.slope * h)
            elif spec.kind == RELU:
                records.append((RELU, h))
                h = np.maximum(h, 0)
            elif spec.kind == SIGMOID:
                # split form avoids overflow in exp for large |h|
                h_neg = h < 0
                e = np.exp(np.where(h_neg, h, -h))
                y = np.where(h_neg, e / (1 + e), 1 / (1 + e))
                records.append((SIGMOID, y))
                h = y
            else:  # L2_NORMALIZE_ROWS
                norms = np.sqrt(np.sum(h * h, axis=1, keepdims=True))
                clamped = norms < _NORM_FLOOR
                norms = np.maximum(norms, np.asarray(_NORM_FLOOR, dtype=h.dtype))
                y = h / norms
                records.append((L2_NORMALIZE_ROWS, (y, norms, clamped)))
                h = y
        if not np.all(np.isfinite(h)):
            raise NumericsError("non-finite values in forward output")
        return Tape(records=records, output=h, n_rows=h.shape[0])

    def forward(self, x) -> np.ndarray:
        """Run the net and retain the tape for a following backward call."""
        tape = self.forward_tape(x)
        self._tape = tape
        return tape.output

    def backward_tape(self, tape: Tape, upstream) -> np.ndarray:
        """Accumulate parameter gradients from one tape; returns dL/dinput."""
        g = as_matrix(upstream, "upstream", dtype=self.dtype)
        if g.shape != tape.output.shape:
            raise ShapeError(
                f"upstream shape {g.shape} does not match output shape {tape.output.shape}"
            )
        p = len(self.params)
        for spec, (kind, saved) in zip(reversed(self.layers), reversed(tape.records)):
            if kind == AFFINE:
                p -= 2
                w = self.params[p].value
                x_in = saved
                self.params[p].grad += x_in.T @ g
                self.params[p + 1].grad += g.sum(axis=0, keepdims=True)
                g = g @ w.T
            elif kind == LEAKY_RELU:
                # gradient at exactly 0 takes the positive-side slope of 1
                g = g * np.where(saved >= 0, 1.0, spec.slope).astype(g.dtype)
            elif kind == RELU:
                g = g * (saved >= 0).astype(g.dtype)
            elif kind == SIGMOID:
                y = saved
                g = g * y * (1 - y)
            else:  # L2_NORMALIZE_ROWS
                # a clamped row sits at the projection's singular point; the
                # only sane subgradient there is zero
                y, norms, clamped = saved
                g = (g - y * np.sum(y * g, axis=1, keepdims=True)) / norms
                g = np.where(clamped, 0.0, g).astype(y.dtype)
        return g

    def backward(self, upstream) -> np.ndarray:
        """Backward through the tape retained by the last forward call."""
        if self._tape is None:
            raise StateError("backward called without a retained tape; call forward first")
        return self.backward_tape(self._tape, upstream)


def forward(net: Mlp, x) -> np.ndarray:
    return net.forward(x)


def backward(net: Mlp, upstream) -> np.ndarray:
    return net.backward(upstream)


def adam_step(params, lr: float = 1e-4, beta1: float = 0.5, beta2: float = 0.999,
              eps: float = 1e-8):
    """One adaptive-moment update on each param; gradients are consumed (zeroed)."""
    for p in params:
        if not np.all(np.isfinite(p.grad)):
            raise NumericsError("non-finite gradient in adam_step")
        dt = p.value.dtype
        p.step_count += 1
        t = p.step_count
        b1 = dt.type(beta1)
        b2 = dt.type(beta2)
        p.moment1[...] = b1 * p.moment1 + (1 - b1) * p.grad
        p.moment2[...] = b2 * p.moment2 + (1 - b2) * (p.grad * p.grad)
        m_hat = p.moment1 / dt.type(1 - beta1**t)
        v_hat = p.moment2 / dt.type(1 - beta2**t)
        p.value -= dt.type(lr) * m_hat / (np.sqrt(v_hat) + dt.type(eps))
        p.zero_grad()


def row_softmax(logits) -> np.ndarray:
    """Row-wise softmax with max subtraction, safe for large logits."""
    z = as_matrix(logits, "logits", dtype=np.asarray(logits).dtype)
    if z.shape[1] < 1:
        raise ShapeError("softmax needs at least one column")
    shifted = z - z.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def concat_cols(a, b) -> np.ndarray:
    """Column-wise concatenation of two row-aligned matrices."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError("concat_cols needs 2-D inputs")
    if a.shape[0] != b.shape[0]:
        raise ShapeError(f"row mismatch in concat_cols: {a.shape[0]} vs {b.shape[0]}")
    return np.concatenate([a, b], axis=1)


def split_cols(g, n_first: int):
    """Split a gradient of a concatenated input back into the two blocks."""
    g = np.asarray(g)
    if g.ndim != 2 or not (0 < n_first < g.shape[1]):
        raise ShapeError("bad split point for split_cols")
    return g[:, :n_first], g[:, n_first:]


@dataclass
class GradCheckReport:
    """Outcome of one finite-difference audit."""

    max_rel_error: float
    n_checked: int
    n_excluded: int
    worst_param: int = -1
    worst_entry: int = -1

    def passed(self, tol: float) -> bool:
        return self.n_checked > 0 and self.max_rel_error <= tol


def fd_audit(params, value_fn, grad_fn, eps: float = 1e-3,
             denom_floor: float = 1e-8, refine_above: float | None = None,
             refine_scales=(0.1, 0.01, 10.0)) -> GradCheckReport:
    """Compare analytic gradients against central finite differences.

    value_fn() -> (scalar, signature bytes) evaluates the loss at the current
    parameter values; grad_fn() -> scalar zeroes grads, runs forward+backward
    and leaves gradients on the params.  Entries whose +/- probes land in a
    different regime than the base point (activation kink, hinge boundary,
    log or norm clamp) are excluded from the comparison.

    With refine_above set, entries whose relative error exceeds it are
    re-probed at eps times each refine scale and the best agreement wins:
    truncation error vanishes at smaller steps, roundoff at larger ones, and
    a wrong formula survives every step size.
    """
    grad_fn()
    analytic = [p.grad.copy() for p in params]
    _, sig_base = value_fn()

    def probe(flat, ei, orig, step):
        flat[ei] = orig + step
        v_plus, sig_plus = value_fn()
        flat[ei] = orig - step
        v_minus, sig_minus = value_fn()
        flat[ei] = orig
        if sig_plus != sig_base or sig_minus != sig_base:
            return None
        return (v_plus - v_minus) / (2 * step)

    def rel_error(a, numeric):
        denom = max(abs(a), abs(numeric))
        if denom < denom_floor:
            return 0.0
        return abs(a - numeric) / denom

    max_rel = 0.0
    n_checked = 0
    n_excluded = 0
    worst = (-1, -1)
    for pi, p in enumerate(params):
        flat = p.value.reshape(-1)
        for ei in range(flat.size):
            orig = flat[ei]
            numeric = probe(flat, ei, orig, eps)
            if numeric is None:
                n_excluded += 1
                continue
            a = float(analytic[pi].reshape(-1)[ei])
            rel = rel_error(a, numeric)
            if refine_above is not None and rel > refine_above:
                for scale in refine_scales:
                    alt = probe(flat, ei, orig, eps * scale)
                    if alt is not None:
                        rel = min(rel, rel_error(a, alt))
                    if rel <= refine_above:
                        break
            n_checked += 1
            if rel > max_rel:
                max_rel = rel
                worst = (pi, ei)
    for p, g in zip(params, analytic):
        p.grad[...] = g
    return GradCheckReport(max_rel_error=max_rel, n_checked=n_checked,
                           n_excluded=n_excluded, worst_param=worst[0], worst_entry=worst[1])


def grad_check(net: Mlp, loss_fn, x, tol: float = 1e-4, eps: float = 1e-3) -> float:
    """Audit one net's backward pass against central finite differences.

    loss_fn maps the net output to (scalar loss, dloss/doutput).  The whole
    check runs on a float64 shadow copy of the net so the comparison isolates
    formula errors from float32 roundoff.  Returns the max relative error
    over all checked parameter entries; compare it against tol at the caller.
    """
    shadow = net.clone(dtype=np.float64)
    x64 = as_matrix(x, "input", dtype=np.float64)

    def value_fn():
        tape = shadow.forward_tape(x64)
        value, _ = loss_fn(tape.output)
        return float(value), tape.kink_signature()

    def grad_fn():
        shadow.zero_grads()
        tape = shadow.forward_tape(x64)
        value, upstream = loss_fn(tape.output)
        if upstream is None:
            raise DomainError("loss_fn must return (value, grad_wrt_output)")
        shadow.backward_tape(tape, upstream)
        return float(value)

    report = fd_audit(shadow.params, value_fn, grad_fn, eps=eps)
    return report.max_rel_error
