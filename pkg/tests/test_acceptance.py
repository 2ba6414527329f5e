"""The eight acceptance checks, one test and one printed verdict line each.

Run with `pytest tests/test_acceptance.py -s` to see the verdict lines on a
passing run.  The desk-scale checks (5-7) share one tuned configuration and
the default synthetic world (7 seen / 3 unseen classes, 32-d features, 8-d
descriptors, 100 rows per class).
"""

import json
import math
import time

import numpy as np
import pytest

import gzslkit.cli as cli
import oracles
from gzslkit.data import SyntheticWorldSpec, make_synthetic_world
from gzslkit.embedding import (
    LossParams, build_comparator, build_embedder, build_projector,
    contrastive_losses_backward, draw_positive_indices, infonce_from_logits,
    instance_loss_masked, rank_comp_backward, rank_comp_sync_backward,
    rank_dot_backward, rank_dot_sync_backward, ranking_loss_real,
    softmax_nll_scores,
)
from gzslkit.generation import (
    adversarial_value, build_discriminator, build_generator, draw_noise,
    generator_adv_term,
)
from gzslkit.gradcheck import FAMILY_NAMES, run_all
from gzslkit.neural import concat_cols
from gzslkit.rng import Stream, stream
from gzslkit.trainer import (
    TrainConfig, evaluate, fit_final_classifier, harmonic_mean,
    load_checkpoint, run_pipeline, save_checkpoint,
)

SEEDS = (0, 1, 2, 3, 4)

# tuned desk-scale recipe; the nonsaturating generator objective matters here
# because the minimax form stalls long before the conditional map is learned
DESK = dict(mode="ce_full", epochs=250, batch_size=128, hidden=64, d_h=32,
            d_z=16, lr=1e-3, tau_e=0.1, tau_s=0.1, d_steps_per_g_step=3,
            nonsaturating=True)

DESK_FLAGS = ["--epochs", "250", "--batch", "128", "--hidden", "64",
              "--dh", "32", "--dz", "16", "--lr", "1e-3", "--d-steps", "3",
              "--nonsaturating", "--tau-e", "0.1", "--tau-s", "0.1"]


def desk_cfg(seed, **kw):
    return TrainConfig(seed=seed, **{**DESK, **kw})


@pytest.fixture(scope="module")
def ce_runs():
    """One ce_full n_syn=200 pipeline per seed; reused by checks 5, 6, 8."""
    out = {}
    for seed in SEEDS:
        ds = make_synthetic_world(SyntheticWorldSpec(seed=seed))
        t0 = time.perf_counter()
        bundle, _, rep = run_pipeline(ds, desk_cfg(seed, n_syn_per_unseen=200))
        out[seed] = {"ds": ds, "bundle": bundle, "report": rep,
                     "wall": time.perf_counter() - t0}
    return out


def verdict(num, name, ok, detail):
    print(f"ACCEPTANCE {num} ({name}): {'PASS' if ok else 'FAIL'} [{detail}]")
    assert ok, f"acceptance {num} failed: {detail}"


# ---------------------------------------------------------------------------

def test_acceptance_1_gradient_audit():
    t0 = time.perf_counter()
    worst = 0.0
    for seed in range(10):
        for name, rep in run_all(seed=seed, eps=1e-4):
            worst = max(worst, rep.max_rel_error)
            assert rep.max_rel_error <= 1e-4, f"{name} at seed {seed}"
    wall = time.perf_counter() - t0
    assert cli.main(["gradcheck", "--seed", "0"]) == 0
    verdict(1, "gradient audit", worst <= 1e-4 and wall < 30.0,
            f"{len(FAMILY_NAMES)} families x 10 instances, "
            f"worst={worst:.3e}, {wall:.1f}s")


def test_acceptance_2_loss_identities():
    devs = []
    for k in (1, 5, 50):
        got = infonce_from_logits(0.0, [0.0] * k, 0.5)
        devs.append(abs(got - math.log(k + 1)))
    for s in (2, 7, 40):
        got, _ = softmax_nll_scores(np.zeros((1, s)), np.array([0]), 0.5)
        devs.append(abs(got - math.log(s)))
    d = build_discriminator(6, 3, 8, stream(0, Stream.INIT, 1))
    for p in d.net.params:
        p.value[...] = 0.0  # forces D == 0.5 everywhere
    rng = stream(0, Stream.GENERIC, 50)
    x = rng.normal(size=(8, 6)).astype(np.float32)
    a = rng.uniform(size=(8, 3)).astype(np.float32)
    v = adversarial_value(d, x, a, x + 1, a)
    devs.append(abs(v - (-2.0 * math.log(2.0))))
    e = build_embedder(4, 3, stream(0, Stream.INIT, 2))
    e.net.params[0].value[...] = 0.0
    e.net.params[1].value[...] = np.array([[1.0, 0.0, 0.0]], dtype=np.float32)
    a_pos = np.tile(np.array([[2.5, 0, 0]], dtype=np.float32), (4, 1))
    a_neg = np.tile(np.array([[0.5, 0, 0]], dtype=np.float32), (4, 1))
    satisfied = ranking_loss_real(e, np.ones((4, 4), dtype=np.float32),
                                  a_pos, a_neg, 1.0)
    ok = max(devs) <= 1e-6 and satisfied == 0.0
    verdict(2, "loss identities", ok,
            f"worst closed-form dev={max(devs):.2e}, satisfied margin={satisfied}")


def test_acceptance_3_harmonic_protocol():
    dev = abs(harmonic_mean(0.786, 0.631) - 0.700)
    idents = [abs(harmonic_mean(x, x) - x) for x in (0.0, 0.3, 1.0)]
    idents += [harmonic_mean(0.0, s) for s in (0.2, 0.9)]
    ok = dev <= 5e-4 and max(idents) == 0.0
    verdict(3, "harmonic-mean protocol", ok,
            f"H(0.631,0.786)=0.700 dev={dev:.2e}")


def test_acceptance_4_oracle_equivalence():
    d_x, d_a, hid, n = 6, 3, 8, 8
    worst = 0.0
    t0 = time.perf_counter()
    for trial in range(100):
        init = stream(trial, Stream.INIT, 0)
        g = build_generator(d_a, d_x, d_a, hid, stream(trial, Stream.INIT, 0))
        d = build_discriminator(d_x, d_a, hid, stream(trial, Stream.INIT, 1))
        e = build_embedder(d_x, 4, stream(trial, Stream.INIT, 2))
        e_sem = build_embedder(d_x, d_a, stream(trial, Stream.INIT, 2))
        proj = build_projector(4, 4, stream(trial, Stream.INIT, 3))
        f = build_comparator(4, d_a, hid, stream(trial, Stream.INIT, 4))
        rng = stream(trial, Stream.GENERIC, 51)
        x = np.abs(rng.normal(size=(n, d_x))).astype(np.float32)
        y = rng.integers(1, 5, size=n)
        y[:2] = y[0]  # at least one class with a partner
        desc = rng.uniform(size=(6, d_a)).astype(np.float32)
        a_pos, a_neg = desc[y - 1], desc[y % 6]
        eps = draw_noise(g, n, stream(trial, Stream.NOISE_G, 0))
        fake32 = g.net.forward(concat_cols(eps, a_pos))
        fake_or = oracles.net_forward(g.net, oracles.concat_rows(eps, a_pos))
        xl, al = oracles.to_rows(x), oracles.to_rows(a_pos)

        pairs = [
            (adversarial_value(d, x, a_pos, fake32, a_pos),
             oracles.adversarial_value_from_nets(d.net, xl, al, fake_or, al)),
            (ranking_loss_real(e_sem, x, a_pos, a_neg, 1.0),
             oracles.rank_dot(e_sem.net, x, a_pos, a_neg, 1.0)),
            (rank_dot_sync_backward(g, e_sem, eps, a_pos, a_neg, 1.0,
                                    with_grads=False),
             oracles.rank_dot_sync(g.net, e_sem.net, eps, a_pos, a_neg, 1.0)),
            (rank_comp_backward(f, e, x, a_pos, a_neg, 1.0, with_grads=False),
             oracles.rank_comp(f.net, e.net, x, a_pos, a_neg, 1.0)),
            (rank_comp_sync_backward(g, f, e, eps, a_pos, a_neg, 1.0,
                                     with_grads=False),
             oracles.rank_comp(f.net, e.net, np.asarray(fake_or, dtype=np.float32),
                               a_pos, a_neg, 1.0)),
            (generator_adv_term(g, d, fake32, a_pos, with_grads=False)[0],
             sum(math.log(max(1.0 - p, 1e-12)) for p in
                 (row[0] for row in oracles.net_forward(
                     d.net, oracles.concat_rows(fake_or, al)))) / n),
        ]

        z = rng.normal(size=(6, 4))
        z /= np.linalg.norm(z, axis=1, keepdims=True)
        zl = np.array([1, 1, 2, 2, 3, 3])
        anchors, pos_rows = np.array([0, 2, 4]), np.array([1, 3, 5])
        mask = zl[None, :] != zl[anchors, None]
        pairs.append((
            instance_loss_masked(z, anchors, pos_rows, mask, 0.5)[0],
            oracles.instance_loss(
                oracles.to_rows(z), anchors.tolist(), pos_rows.tolist(),
                [[j for j in range(6) if zl[j] != zl[i]] for i in anchors], 0.5)))
        scores = rng.normal(size=(n, 7))
        cols = rng.integers(0, 7, size=n)
        pairs.append((softmax_nll_scores(scores, cols, 0.3)[0],
                      oracles.softmax_nll_mean(scores, cols.tolist(), 0.3)))

        lp = LossParams(tau_e=0.5, tau_s=0.5)
        seen = desc[:4]
        ins, cls = contrastive_losses_backward(
            g, e, proj, f, x, y, eps, a_pos, seen, lp,
            rng_pairs=stream(trial, Stream.PAIRING, 0), with_grads=False)
        labels = np.concatenate([y, y])
        pos_idx = draw_positive_indices(labels, stream(trial, Stream.PAIRING, 0))
        counts = np.bincount(y, minlength=int(y.max()) + 1)
        pos_idx[counts[labels] < 2] = -1
        if np.unique(labels).size < 2:
            pos_idx[:] = -1
        o_ins, o_cls = oracles.contrastive_pair(
            g.net, e.net, proj.net, f.net, x, y, eps, a_pos, seen, 0.5, 0.5,
            pos_idx.tolist())
        pairs += [(ins, o_ins), (cls, o_cls)]

        for got, want in pairs:
            worst = max(worst, abs(got - want))
    ok = worst <= 1e-5
    verdict(4, "oracle equivalence", ok,
            f"10 ops x 100 trials, worst abs dev={worst:.2e}, "
            f"{time.perf_counter() - t0:.1f}s")


def test_acceptance_5_desk_scale_hybrid_effect(ce_runs):
    base_u = []
    for seed in SEEDS:
        ds = ce_runs[seed]["ds"]
        _, _, rep = run_pipeline(ds, desk_cfg(seed, n_syn_per_unseen=0))
        base_u.append(rep.U)
    wins = sum(ce_runs[s]["report"].U >= 0.50 and ce_runs[s]["report"].H >= 0.50
               for s in SEEDS)
    walls = [ce_runs[s]["wall"] for s in SEEDS]
    ok = max(base_u) <= 0.05 and wins >= 4 and max(walls) < 300.0
    hybrid = {s: (round(ce_runs[s]["report"].U, 3), round(ce_runs[s]["report"].H, 3))
              for s in SEEDS}
    verdict(5, "desk-scale hybrid effect", ok,
            f"baseline max U={max(base_u):.3f}, hybrid (U,H)={hybrid}, "
            f"wins={wins}/5, max {max(walls):.0f}s/seed")


def test_acceptance_6_mode_ordering(ce_runs):
    mean_h = {"ce_full": float(np.mean([ce_runs[s]["report"].H for s in SEEDS]))}
    for mode in ("se_embed", "se_basic"):
        hs = []
        for seed in SEEDS:
            cfg = desk_cfg(seed, mode=mode, n_syn_per_unseen=200)
            _, _, rep = run_pipeline(ce_runs[seed]["ds"], cfg)
            hs.append(rep.H)
        mean_h[mode] = float(np.mean(hs))
    ok = (mean_h["ce_full"] >= mean_h["se_embed"] >= mean_h["se_basic"]
          and mean_h["ce_full"] - mean_h["se_basic"] >= 0.03)
    verdict(6, "embedding-model ordering", ok,
            "mean H " + " >= ".join(f"{m}={mean_h[m]:.3f}"
                                    for m in ("ce_full", "se_embed", "se_basic")))


def test_acceptance_7_nsyn_sweep_shape(tmp_path):
    data = tmp_path / "desk.gzb"
    assert cli.main(["synth-data", "-o", str(data), "--seed", "0"]) == 0
    out = tmp_path / "sweep"
    assert cli.main(["ablate", "--dataset", str(data), "--table", "nsyn",
                     "--out", str(out), "--seed", "0"] + DESK_FLAGS) == 0
    rows = (out / "nsyn.csv").read_text().splitlines()[1:]
    u = [float(r.split(",")[1]) for r in rows]
    peak = int(np.argmax(u))
    after_ok = all(u[i + 1] >= u[i] - 0.05 for i in range(peak, len(u) - 1))
    rises = u[peak] > u[0]
    ok = after_ok and rises and (out / "nsyn.svg").exists()
    verdict(7, "n_syn sweep shape", ok,
            f"U over {{0,10,50,200,500}} = {[round(v, 3) for v in u]}")


def test_acceptance_8_determinism_and_persistence(tmp_path, ce_runs):
    data = tmp_path / "tiny.gzb"
    assert cli.main(["synth-data", "-o", str(data), "--S", "4", "--U", "2",
                     "--dx", "6", "--da", "3", "--n", "12", "--seed", "0"]) == 0
    knobs = ["--batch", "8", "--epochs", "2", "--dh", "4", "--dz", "3",
             "--hidden", "8", "--seed", "0"]
    out_a, out_b = tmp_path / "a", tmp_path / "b"
    for out in (out_a, out_b):
        assert cli.main(["train", "--dataset", str(data), "--out", str(out)]
                        + knobs) == 0
    identical = ((out_a / "report.json").read_bytes()
                 == (out_b / "report.json").read_bytes())

    seed = 0
    ds, bundle = ce_runs[seed]["ds"], ce_runs[seed]["bundle"]
    cfg = desk_cfg(seed, n_syn_per_unseen=200)
    before = evaluate(fit_final_classifier(bundle, ds, cfg), bundle, ds, cfg).to_dict()
    path = tmp_path / "desk.cegz"
    save_checkpoint(path, bundle, cfg, ds.d_x, ds.semantic.d_a, 1000)
    loaded, cfg2, _ = load_checkpoint(path)
    after = evaluate(fit_final_classifier(loaded, ds, cfg2),
                     loaded, ds, cfg2).to_dict()
    ok = identical and before == after
    verdict(8, "determinism and persistence", ok,
            f"reports byte-identical={identical}, "
            f"round-trip H {before['H']:.6f} == {after['H']:.6f}")
