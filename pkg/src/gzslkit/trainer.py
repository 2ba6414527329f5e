"""Training orchestration: alternating minimax loop, final classifier fitting,
generalized zero-shot evaluation, and checkpoint persistence.

A run is fully determined by (config, seed, dataset).  Every random draw
comes from a counter-based stream keyed by purpose and global step, so a run
can be stopped at any step, checkpointed, and continued bit-exactly.
"""

import hashlib
import io
import json
import math
import struct
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .data import FeatureDataset, per_class_top1
from .embedding import (
    ComparatorNet, EmbedNet, LossParams, ProjectionHead, build_comparator,
    build_embedder, build_projector, contrastive_losses_backward,
    rank_comp_backward, rank_comp_sync_backward, rank_dot_backward,
    rank_dot_sync_backward, softmax_nll_scores,
)
from .errors import (
    DomainError, HashMismatch, MagicMismatch, NumericsError, SamplerError, ShapeError,
)
from .fileio import atomic_write_bytes
from .generation import (
    DiscriminatorNet, GeneratorNet, adversarial_value, build_discriminator,
    build_generator, discriminator_step, draw_noise, generator_adv_backward,
    synthesize_unseen_embeddings, synthesize_unseen_features,
)
from .neural import LayerSpec, Mlp, Param, adam_step, affine, concat_cols, row_softmax
from .rng import Stream, stream

MODES = ("ce_full", "ce_ins_only", "ce_cls_only", "se_basic", "se_embed", "se_only", "gen_only")
SAMPLERS = ("random", "pk")

# modes whose embedding space is the descriptor space itself
SEMANTIC_SPACE_MODES = ("se_basic", "se_only")

FINAL_CLASSIFIER_EPOCHS = 50
FINAL_CLASSIFIER_LR = 1e-3
FINAL_CLASSIFIER_BATCH = 128

CHECKPOINT_MAGIC = b"CEGZ"
CHECKPOINT_VERSION = 1

NET_NAMES = ("generator", "discriminator", "embedder", "projector", "comparator")


@dataclass(frozen=True)
class TrainConfig:
    """Every knob of a training run.  Defaults follow the reference working
    points; desk-scale runs should shrink the widths and batch size."""

    mode: str = "ce_full"
    batch_size: int = 256
    epochs: int = 50
    d_h: int = 2048
    d_z: int = 512
    d_noise: int | None = None  # None resolves to d_a
    hidden: int = 4096
    tau_e: float = 0.1
    tau_s: float = 0.1
    margin_delta: float = 1.0
    n_syn_per_unseen: int = 100
    d_steps_per_g_step: int = 1
    lr: float = 1e-4
    beta1: float = 0.5
    beta2: float = 0.999
    seed: int = 0
    sampler: str = "random"
    P: int = 1
    K: int = 50
    nonsaturating: bool = False

    def validate(self) -> "TrainConfig":
        if self.mode not in MODES:
            raise DomainError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.sampler not in SAMPLERS:
            raise DomainError(f"sampler must be one of {SAMPLERS}, got {self.sampler!r}")
        if self.batch_size < 2:
            raise DomainError("batch_size must be at least 2")
        if self.epochs < 0 or self.n_syn_per_unseen < 0:
            raise DomainError("epochs and n_syn_per_unseen must be nonnegative")
        if min(self.d_h, self.d_z, self.hidden) < 1:
            raise DomainError("net widths must be positive")
        if self.d_noise is not None and self.d_noise < 1:
            raise DomainError("d_noise must be positive when given")
        if self.d_steps_per_g_step < 1:
            raise DomainError("d_steps_per_g_step must be at least 1")
        if self.lr <= 0 or not (0 <= self.beta1 < 1) or not (0 <= self.beta2 < 1):
            raise DomainError("bad optimizer settings")
        if self.P < 1 or self.K < 1:
            raise DomainError("P and K must be at least 1")
        self.loss_params()
        return self

    def loss_params(self) -> LossParams:
        return LossParams(self.tau_e, self.tau_s, self.margin_delta).validate()

    def resolved(self, d_x: int, d_a: int) -> dict:
        """Config dict with derived values filled in, for reports and hashing."""
        out = asdict(self)
        out["d_x"] = d_x
        out["d_a"] = d_a
        out["d_noise"] = self.d_noise if self.d_noise is not None else d_a
        if self.mode in SEMANTIC_SPACE_MODES:
            out["d_h"] = d_a
        return out

    @staticmethod
    def from_dict(d: dict) -> "TrainConfig":
        names = {f for f in TrainConfig.__dataclass_fields__}
        unknown = set(d) - names
        if unknown:
            raise DomainError(f"unknown config keys: {sorted(unknown)}")
        return TrainConfig(**d)


def embedding_space(mode: str) -> str:
    """Which space the final classifier operates in for a mode."""
    if mode == "gen_only":
        return "feature"
    if mode in SEMANTIC_SPACE_MODES:
        return "semantic"
    return "embedding"


@dataclass
class NetBundle:
    """The five learnable networks; optimizer state lives on their params."""

    generator: GeneratorNet
    discriminator: DiscriminatorNet
    embedder: EmbedNet
    projector: ProjectionHead
    comparator: ComparatorNet

    @staticmethod
    def build(cfg: TrainConfig, d_x: int, d_a: int) -> "NetBundle":
        res = cfg.resolved(d_x, d_a)
        d_h, d_noise = res["d_h"], res["d_noise"]
        return NetBundle(
            generator=build_generator(d_a, d_x, d_noise, cfg.hidden,
                                      stream(cfg.seed, Stream.INIT, 0)),
            discriminator=build_discriminator(d_x, d_a, cfg.hidden,
                                              stream(cfg.seed, Stream.INIT, 1)),
            embedder=build_embedder(d_x, d_h, stream(cfg.seed, Stream.INIT, 2)),
            projector=build_projector(d_h, cfg.d_z, stream(cfg.seed, Stream.INIT, 3)),
            comparator=build_comparator(d_h, d_a, cfg.hidden,
                                        stream(cfg.seed, Stream.INIT, 4)),
        )

    def named(self) -> dict:
        return {name: getattr(self, name) for name in NET_NAMES}

    def clone(self) -> "NetBundle":
        return NetBundle(**{k: v.clone() for k, v in self.named().items()})

    def copy_values_from(self, other: "NetBundle"):
        for name in NET_NAMES:
            getattr(self, name).net.copy_values_from(getattr(other, name).net)

    def joint_nets(self, mode: str) -> list:
        """Nets updated by the joint descent step of a mode."""
        table = {
            "gen_only": ["generator"],
            "se_only": ["embedder"],
            "se_basic": ["generator", "embedder"],
            "se_embed": ["generator", "embedder", "comparator"],
            "ce_full": ["generator", "embedder", "projector", "comparator"],
            "ce_ins_only": ["generator", "embedder", "projector"],
            "ce_cls_only": ["generator", "embedder", "comparator"],
        }
        return [getattr(self, n).net for n in table[mode]]


@dataclass
class Batch:
    """One training batch.  pk, when set, is (pos_x, neg_x, P, K) with anchor
    i's positives at rows [i*P, (i+1)*P) and negatives at [i*K, (i+1)*K)."""

    x: np.ndarray
    y: np.ndarray
    a_pos: np.ndarray
    a_neg: np.ndarray
    pk: tuple | None = None


def _draw_other_class(y_idx: np.ndarray, n_classes: int, rng) -> np.ndarray:
    """Uniform class ids different from y_idx (1-based both ways)."""
    r = rng.integers(0, n_classes - 1, size=y_idx.shape[0])
    return r + 1 + (r + 1 >= y_idx)


def sample_batch(ds: FeatureDataset, cfg: TrainConfig, rng, rng_neg=None) -> Batch:
    """Draw one batch; resamples up to 10 times if it lacks two distinct
    classes (or, under pk, if an anchor's class has no same-class partner).

    rng_neg, when given, supplies the mismatched-class draws for the ranking
    negatives so they live on their own stream.
    """
    if rng_neg is None:
        rng_neg = rng
    n = ds.n_train
    s = ds.semantic.seen_count
    size = cfg.batch_size
    for _ in range(10):
        if size <= n:
            idx = rng.choice(n, size=size, replace=False)
        else:
            idx = rng.integers(0, n, size=size)
        y = ds.train_y[idx]
        if np.unique(y).size < 2:
            continue
        if cfg.sampler == "pk":
            counts = np.bincount(ds.train_y, minlength=s + 1)
            if np.any(counts[y] < 2):
                continue  # an anchor's class has no partner row anywhere
            pos_rows = np.empty(size * cfg.P, dtype=np.int64)
            neg_rows = np.empty(size * cfg.K, dtype=np.int64)
            for i, (row, cls) in enumerate(zip(idx, y)):
                same = np.flatnonzero(ds.train_y == cls)
                same = same[same != row]
                other = np.flatnonzero(ds.train_y != cls)
                pos_rows[i * cfg.P:(i + 1) * cfg.P] = same[
                    rng.integers(0, same.size, size=cfg.P)]
                neg_rows[i * cfg.K:(i + 1) * cfg.K] = other[
                    rng.integers(0, other.size, size=cfg.K)]
            pk = (ds.train_x[pos_rows], ds.train_x[neg_rows], cfg.P, cfg.K)
        else:
            pk = None
        a_pos = ds.semantic.rows_for(y)
        neg_cls = _draw_other_class(y, s, rng_neg)
        a_neg = ds.semantic.rows_for(neg_cls)
        return Batch(x=ds.train_x[idx], y=y, a_pos=a_pos, a_neg=a_neg, pk=pk)
    raise SamplerError("could not draw a batch with two distinct classes in 10 attempts")


def steps_per_epoch(ds: FeatureDataset, cfg: TrainConfig) -> int:
    return max(1, math.ceil(ds.n_train / cfg.batch_size))


def _joint_step(bundle: NetBundle, batch: Batch, ds: FeatureDataset,
                cfg: TrainConfig, gstep: int) -> dict:
    """One joint descent step on the mode's generator-side objective.

    Returns the logged loss terms (zeros for families a mode does not use).
    """
    mode = cfg.mode
    lp = cfg.loss_params()
    nets = bundle.joint_nets(mode)
    for net in nets:
        net.zero_grads()
    g, d, e = bundle.generator, bundle.discriminator, bundle.embedder
    terms = {"V": 0.0, "L_ins": 0.0, "L_cls": 0.0, "L_se_real": 0.0, "L_se_sync": 0.0}

    if mode == "se_only":
        terms["L_se_real"] = rank_dot_backward(e, batch.x, batch.a_pos, batch.a_neg,
                                               lp.margin_delta)
    else:
        eps = draw_noise(g, batch.x.shape[0], stream(cfg.seed, Stream.NOISE_G, gstep))
        generator_adv_backward(g, d, eps, batch.a_pos, nonsaturating=cfg.nonsaturating)
        fake = g.net.forward_tape(concat_cols(eps, batch.a_pos)).output
        terms["V"] = adversarial_value(d, batch.x, batch.a_pos, fake, batch.a_pos)
        if mode == "se_basic":
            terms["L_se_real"] = rank_dot_backward(e, batch.x, batch.a_pos,
                                                   batch.a_neg, lp.margin_delta)
            terms["L_se_sync"] = rank_dot_sync_backward(g, e, eps, batch.a_pos,
                                                        batch.a_neg, lp.margin_delta)
        elif mode == "se_embed":
            f = bundle.comparator
            terms["L_se_real"] = rank_comp_backward(f, e, batch.x, batch.a_pos,
                                                    batch.a_neg, lp.margin_delta)
            terms["L_se_sync"] = rank_comp_sync_backward(g, f, e, eps, batch.a_pos,
                                                         batch.a_neg, lp.margin_delta)
        elif mode.startswith("ce_"):
            ins, cls = contrastive_losses_backward(
                g, e, bundle.projector, bundle.comparator,
                batch.x, batch.y, eps, batch.a_pos,
                ds.semantic.seen_descriptors(), lp,
                rng_pairs=stream(cfg.seed, Stream.PAIRING, gstep),
                pk=batch.pk,
                include_ins=(mode != "ce_cls_only"),
                include_cls=(mode != "ce_ins_only"),
            )
            terms["L_ins"], terms["L_cls"] = ins, cls

    for value in terms.values():
        if not np.isfinite(value):
            raise NumericsError(f"non-finite loss term at step {gstep}")
    params = [p for net in nets for p in net.params]
    adam_step(params, lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2)
    return terms


def train(ds: FeatureDataset, cfg: TrainConfig, *, bundle: NetBundle | None = None,
          start_step: int = 0, stop_step: int | None = None):
    """Run the alternating loop; returns (bundle, log).

    bundle/start_step resume a checkpointed run; the step counter indexes the
    random streams, so a resumed run retraces the uninterrupted one exactly.
    On a numerics failure the bundle is rolled back to the last epoch
    boundary and the raised error carries it as .last_good.
    """
    cfg.validate()
    ds.validate()
    if bundle is None:
        bundle = NetBundle.build(cfg, ds.d_x, ds.semantic.d_a)
    spe = steps_per_epoch(ds, cfg)
    total = cfg.epochs * spe if stop_step is None else stop_step
    log = []
    snapshot = bundle.clone()
    snapshot_step = start_step
    for gstep in range(start_step, total):
        if (gstep - start_step) % spe == 0:
            snapshot = bundle.clone()
            snapshot_step = gstep
        t0 = time.perf_counter()
        try:
            batch = sample_batch(ds, cfg, stream(cfg.seed, Stream.BATCH, gstep),
                                 rng_neg=stream(cfg.seed, Stream.RANK_NEG, gstep))
            if cfg.mode != "se_only":
                for i in range(cfg.d_steps_per_g_step):
                    discriminator_step(
                        bundle.generator, bundle.discriminator, batch.x, batch.a_pos,
                        stream(cfg.seed, Stream.NOISE_D,
                               gstep * cfg.d_steps_per_g_step + i),
                        lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2)
            terms = _joint_step(bundle, batch, ds, cfg, gstep)
        except NumericsError as err:
            bundle.copy_values_from(snapshot)
            wrapped = NumericsError(f"aborted at step {gstep}: {err}")
            wrapped.last_good = bundle
            wrapped.last_good_step = snapshot_step
            wrapped.log = log
            raise wrapped from err
        record = {"step": gstep}
        record.update({k: float(v) for k, v in terms.items()})
        record["wall_ms"] = (time.perf_counter() - t0) * 1000.0
        log.append(record)
    return bundle, log


# ---------------------------------------------------------------------------
# final classifier

@dataclass
class SoftmaxClassifier:
    """Linear scorer over all S+U classes in a chosen input space."""

    weights: np.ndarray  # (d_in, n_classes)
    bias: np.ndarray     # (1, n_classes)
    space: str           # feature | semantic | embedding
    n_classes: int

    def scores(self, inputs) -> np.ndarray:
        inputs = np.asarray(inputs, dtype=np.float32)
        if inputs.ndim != 2 or inputs.shape[1] != self.weights.shape[0]:
            raise ShapeError(
                f"classifier expects (n, {self.weights.shape[0]}) inputs, "
                f"got {inputs.shape}")
        return inputs @ self.weights + self.bias

    def predict(self, inputs) -> np.ndarray:
        return np.argmax(self.scores(inputs), axis=1).astype(np.int64) + 1

    def predict_proba(self, inputs) -> np.ndarray:
        return row_softmax(self.scores(inputs))


def classifier_inputs(bundle: NetBundle, x, space: str) -> np.ndarray:
    """Map raw features into the space a classifier was fit in."""
    if space == "feature":
        return np.asarray(x, dtype=np.float32)
    return bundle.embedder.net.forward(x)


def fit_final_classifier(bundle: NetBundle, ds: FeatureDataset, cfg: TrainConfig,
                         rng=None) -> SoftmaxClassifier:
    """Fit the final classifier over all S+U classes.

    Real seen rows plus synthetic unseen rows, mapped into the mode's space;
    synthetic seen rows are never used.  se_only has no generator worth
    sampling from, so it classifies by descriptor compatibility instead.
    """
    cfg.validate()
    space = embedding_space(cfg.mode)
    semantic = ds.semantic
    n_classes = semantic.n_classes
    if cfg.mode == "se_only":
        return SoftmaxClassifier(
            weights=semantic.descriptors.T.copy(),
            bias=np.zeros((1, n_classes), dtype=np.float32),
            space=space, n_classes=n_classes)
    if rng is None:
        rng = stream(cfg.seed, Stream.CLASSIFIER, 0)
    seen_inputs = classifier_inputs(bundle, ds.train_x, space)
    labels = [ds.train_y]
    inputs = [seen_inputs]
    if cfg.n_syn_per_unseen > 0:
        if space == "feature":
            syn_x, syn_y = synthesize_unseen_features(
                bundle.generator, semantic, cfg.n_syn_per_unseen, rng)
        else:
            syn_x, syn_y = synthesize_unseen_embeddings(
                bundle.generator, bundle.embedder, semantic,
                cfg.n_syn_per_unseen, rng)
        inputs.append(syn_x)
        labels.append(syn_y)
    x_all = np.concatenate(inputs).astype(np.float32)
    y_all = np.concatenate(labels)
    net = Mlp([affine(x_all.shape[1], n_classes)], rng=rng)
    n = x_all.shape[0]
    bs = min(FINAL_CLASSIFIER_BATCH, n)
    for _ in range(FINAL_CLASSIFIER_EPOCHS):
        order = rng.permutation(n)
        for lo in range(0, n, bs):
            sel = order[lo:lo + bs]
            net.zero_grads()
            tape = net.forward_tape(x_all[sel])
            _, dscores = softmax_nll_scores(tape.output, y_all[sel] - 1, 1.0)
            net.backward_tape(tape, dscores)
            adam_step(net.params, lr=FINAL_CLASSIFIER_LR, beta1=cfg.beta1, beta2=cfg.beta2)
    return SoftmaxClassifier(
        weights=net.params[0].value.copy(),
        bias=net.params[1].value.copy(),
        space=space, n_classes=n_classes)


# ---------------------------------------------------------------------------
# evaluation

def harmonic_mean(seen_acc: float, unseen_acc: float) -> float:
    """H = 2*S*U/(S+U); zero if either side is zero."""
    if seen_acc + unseen_acc <= 0:
        return 0.0
    return 2.0 * seen_acc * unseen_acc / (seen_acc + unseen_acc)


@dataclass
class EvalReport:
    """Generalized zero-shot scores for one trained model."""

    mode: str
    seed: int
    U: float
    S: float
    H: float
    czsl_top1: float
    per_class_acc: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "seed": self.seed,
            "U": self.U,
            "S": self.S,
            "H": self.H,
            "czsl_top1": self.czsl_top1,
            "per_class_acc": {str(k): v for k, v in sorted(self.per_class_acc.items())},
        }


def _per_class_breakdown(pred: np.ndarray, truth: np.ndarray) -> dict:
    out = {}
    for c in np.unique(truth):
        mask = truth == c
        out[int(c)] = float(np.mean(pred[mask] == c))
    return out


def evaluate(classifier: SoftmaxClassifier, bundle: NetBundle,
             ds: FeatureDataset, cfg: TrainConfig) -> EvalReport:
    """Per-class top-1 over the full label space for both test partitions,
    plus the unseen-only conventional score."""
    ds.validate()
    if ds.test_seen_x.shape[0] == 0 or ds.test_unseen_x.shape[0] == 0:
        raise DomainError("evaluation needs nonempty test_seen and test_unseen")
    semantic = ds.semantic
    seen_in = classifier_inputs(bundle, ds.test_seen_x, classifier.space)
    unseen_in = classifier_inputs(bundle, ds.test_unseen_x, classifier.space)
    pred_seen = classifier.predict(seen_in)
    unseen_scores = classifier.scores(unseen_in)
    pred_unseen = np.argmax(unseen_scores, axis=1).astype(np.int64) + 1
    s_acc = per_class_top1(pred_seen, ds.test_seen_y, semantic.seen_ids)
    u_acc = per_class_top1(pred_unseen, ds.test_unseen_y, semantic.unseen_ids)
    restricted = unseen_scores[:, semantic.seen_count:]
    czsl_pred = np.argmax(restricted, axis=1).astype(np.int64) + semantic.seen_count + 1
    czsl = per_class_top1(czsl_pred, ds.test_unseen_y, semantic.unseen_ids)
    per_class = _per_class_breakdown(pred_seen, ds.test_seen_y)
    per_class.update(_per_class_breakdown(pred_unseen, ds.test_unseen_y))
    return EvalReport(mode=cfg.mode, seed=cfg.seed, U=u_acc, S=s_acc,
                      H=harmonic_mean(s_acc, u_acc), czsl_top1=czsl,
                      per_class_acc=per_class)


def run_pipeline(ds: FeatureDataset, cfg: TrainConfig):
    """train + fit classifier + evaluate; returns (bundle, log, report)."""
    bundle, log = train(ds, cfg)
    classifier = fit_final_classifier(bundle, ds, cfg)
    report = evaluate(classifier, bundle, ds, cfg)
    return bundle, log, report


# ---------------------------------------------------------------------------
# checkpoints

def _canonical_json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


def _net_meta(net: Mlp) -> dict:
    return {
        "layers": [
            {"kind": s.kind, "in": s.in_dim, "out": s.out_dim, "slope": s.slope}
            for s in net.layers
        ],
        "params": [
            {"rows": int(p.value.shape[0]), "cols": int(p.value.shape[1]),
             "step_count": int(p.step_count)}
            for p in net.params
        ],
    }


def save_checkpoint(path, bundle: NetBundle, cfg: TrainConfig, d_x: int, d_a: int,
                    global_step: int):
    """Write the bundle with optimizer state; layout is header json + raw
    little-endian float32 matrices, hashed so tampering is detectable."""
    payload = io.BytesIO()
    nets_meta = {}
    for name, wrapper in bundle.named().items():
        net = wrapper.net
        nets_meta[name] = _net_meta(net)
        for p in net.params:
            for mat in (p.value, p.moment1, p.moment2):
                payload.write(struct.pack("<II", mat.shape[0], mat.shape[1]))
                payload.write(np.ascontiguousarray(mat, dtype="<f4").tobytes())
    payload_bytes = payload.getvalue()
    config = cfg.resolved(d_x, d_a)
    header = {
        "config": config,
        "cfg_hash": hashlib.sha256(_canonical_json(config)).hexdigest(),
        "payload_hash": hashlib.sha256(payload_bytes).hexdigest(),
        "global_step": int(global_step),
        "noise_dim": bundle.generator.noise_dim,
        "nets": nets_meta,
    }
    header_bytes = _canonical_json(header)
    blob = io.BytesIO()
    blob.write(CHECKPOINT_MAGIC)
    blob.write(struct.pack("<II", CHECKPOINT_VERSION, len(header_bytes)))
    blob.write(header_bytes)
    blob.write(payload_bytes)
    atomic_write_bytes(path, blob.getvalue())


def load_checkpoint(path, expected_cfg: TrainConfig | None = None):
    """Read a checkpoint; returns (bundle, cfg, header dict).

    Raises MagicMismatch for a foreign file, HashMismatch for tampering or,
    when expected_cfg is given, a config that differs from the stored one.
    """
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 12 or data[:4] != CHECKPOINT_MAGIC:
        raise MagicMismatch("not a checkpoint file")
    version, header_len = struct.unpack_from("<II", data, 4)
    if version != CHECKPOINT_VERSION:
        raise MagicMismatch(f"unsupported checkpoint version {version}")
    header_end = 12 + header_len
    if header_end > len(data):
        raise MagicMismatch("truncated checkpoint header")
    header = json.loads(data[12:header_end].decode("utf-8"))
    payload = data[header_end:]
    if hashlib.sha256(payload).hexdigest() != header["payload_hash"]:
        raise HashMismatch("checkpoint payload hash mismatch")
    stored = dict(header["config"])
    check = dict(stored)
    d_x, d_a = check.pop("d_x"), check.pop("d_a")
    if hashlib.sha256(_canonical_json(stored)).hexdigest() != header["cfg_hash"]:
        raise HashMismatch("checkpoint config hash mismatch")
    cfg = TrainConfig.from_dict(check)
    if expected_cfg is not None:
        expected = expected_cfg.resolved(d_x, d_a)
        if _canonical_json(expected) != _canonical_json(stored):
            raise HashMismatch("checkpoint was written with a different config")

    off = 0

    def take(rows, cols):
        nonlocal off
        r, c = struct.unpack_from("<II", payload, off)
        if (r, c) != (rows, cols):
            raise ShapeError(f"checkpoint matrix is {r}x{c}, expected {rows}x{cols}")
        off += 8
        n = rows * cols * 4
        arr = np.frombuffer(payload, dtype="<f4", count=rows * cols, offset=off)
        off += n
        # frombuffer views are read-only; training resumes in place, so copy
        return arr.reshape(rows, cols).astype(np.float32, copy=True)

    nets = {}
    for name in NET_NAMES:
        meta = header["nets"][name]
        layers = [LayerSpec(l["kind"], l["in"], l["out"], l["slope"])
                  for l in meta["layers"]]
        params = []
        for pmeta in meta["params"]:
            value = take(pmeta["rows"], pmeta["cols"])
            m1 = take(pmeta["rows"], pmeta["cols"])
            m2 = take(pmeta["rows"], pmeta["cols"])
            params.append(Param(value=value, moment1=m1, moment2=m2,
                                step_count=pmeta["step_count"]))
        nets[name] = Mlp(layers, params=params)
    if off != len(payload):
        raise ShapeError("checkpoint payload has trailing bytes")
    bundle = NetBundle(
        generator=GeneratorNet(nets["generator"], header["noise_dim"]),
        discriminator=DiscriminatorNet(nets["discriminator"]),
        embedder=EmbedNet(nets["embedder"]),
        projector=ProjectionHead(nets["projector"]),
        comparator=ComparatorNet(nets["comparator"]),
    )
    return bundle, cfg, header
