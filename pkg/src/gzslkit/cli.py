"""Command line front end.

Subcommands: synth-data, train, eval, ablate, gradcheck.  Exit codes:
0 success, 1 a verification failed (gradient audit, oracle check, hash or
magic mismatch), 2 bad usage or bad inputs, 3 a numeric failure at runtime.

Config precedence for training knobs: command line flags beat the --config
JSON file, which beats built-in defaults.
"""

import argparse
import json
import os
import sys
import time
from dataclasses import asdict, replace

import numpy as np

from . import gradcheck as gradcheck_mod
from .data import (
    SyntheticWorldSpec, load_dataset, make_synthetic_world, nearest_mean_top1,
    per_class_top1, save_dataset, true_class_means,
)
from .errors import GzslError, HashMismatch, MagicMismatch, NumericsError, ShapeError
from .fileio import atomic_write_text
from .plots import heatmap_svg, line_plot_svg, save_svg
from .trainer import (
    MODES, TrainConfig, classifier_inputs, evaluate, fit_final_classifier,
    load_checkpoint, run_pipeline, save_checkpoint, steps_per_epoch, train,
)

N_SYN_SWEEP = (0, 10, 50, 200, 500)
TAU_GRID = (0.01, 0.1, 1.0, 10.0)

LOGGED_TERMS = ("V", "L_ins", "L_cls", "L_se_real", "L_se_sync")


def _note(msg: str):
    print(f"note: {msg}", file=sys.stderr)


def _add_train_flags(p: argparse.ArgumentParser, mode_list: bool = False):
    """Training knobs, all defaulting to None so absence is detectable."""
    p.add_argument("--config", help="JSON file with training knobs")
    if mode_list:
        p.add_argument("--mode", choices=MODES, action="append",
                       help="repeatable; selects the table rows")
    else:
        p.add_argument("--mode", choices=MODES)
    p.add_argument("--batch", type=int, dest="batch_size")
    p.add_argument("--epochs", type=int)
    p.add_argument("--dh", type=int, dest="d_h")
    p.add_argument("--dz", type=int, dest="d_z")
    p.add_argument("--d-noise", type=int, dest="d_noise")
    p.add_argument("--hidden", type=int)
    p.add_argument("--tau-e", type=float, dest="tau_e")
    p.add_argument("--tau-s", type=float, dest="tau_s")
    p.add_argument("--delta", type=float, dest="margin_delta")
    p.add_argument("--n-syn", type=int, dest="n_syn_per_unseen",
                   help="synthetic rows per unseen class for the final classifier")
    p.add_argument("--d-steps", type=int, dest="d_steps_per_g_step")
    p.add_argument("--lr", type=float)
    p.add_argument("--beta1", type=float)
    p.add_argument("--beta2", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--sampler", choices=("random", "pk"))
    p.add_argument("--P", type=int, dest="P")
    p.add_argument("--K", type=int, dest="K")
    p.add_argument("--nonsaturating", action="store_const", const=True, default=None)


def _merge_config(args) -> TrainConfig:
    """flags > config file > defaults; warns on stderr when seed is left
    to its default."""
    merged = asdict(TrainConfig())
    seed_given = False
    if args.config:
        with open(args.config) as fh:
            file_cfg = json.load(fh)
        if not isinstance(file_cfg, dict):
            raise GzslError("config file must hold a JSON object")
        unknown = set(file_cfg) - set(merged)
        if unknown:
            raise GzslError(f"unknown config keys: {sorted(unknown)}")
        merged.update(file_cfg)
        seed_given = "seed" in file_cfg
    for key in merged:
        val = getattr(args, key, None)
        if val is not None:
            merged[key] = val
            if key == "seed":
                seed_given = True
    if not seed_given:
        _note(f"--seed not given; runs use the default seed {merged['seed']}")
    return TrainConfig.from_dict(merged).validate()


# ---------------------------------------------------------------------------
# subcommands

def cmd_synth_data(args) -> int:
    if args.seed is None:
        _note("--seed not given; the world uses the default seed 0")
    spec = SyntheticWorldSpec(
        seen_count=args.S, unseen_count=args.U, d_x=args.dx,
        d_a=args.da, n_per_class=args.n,
        noise_sigma=args.noise_sigma, seed=args.seed or 0,
    ).validate()
    if spec.noise_sigma == 0:
        print("warning: noise-sigma is 0; every class collapses to a single "
              "point and accuracies are degenerate", file=sys.stderr)
    ds = make_synthetic_world(spec)
    save_dataset(ds, args.out, format=args.format)
    print(f"wrote {args.out}: {spec.seen_count} seen + {spec.unseen_count} unseen "
          f"classes, d_x={spec.d_x}, d_a={spec.d_a}, "
          f"{ds.n_train} train rows")
    means = true_class_means(spec)
    ids = np.arange(1, spec.seen_count + spec.unseen_count + 1)
    acc_seen = nearest_mean_top1(ds.test_seen_x, ds.test_seen_y, means, ids)
    acc_unseen = nearest_mean_top1(ds.test_unseen_x, ds.test_unseen_y, means, ids)
    print(f"oracle nearest-mean per-class top1: seen={acc_seen:.4f} "
          f"unseen={acc_unseen:.4f}")
    if args.check_oracle and acc_unseen < 0.95:
        print("oracle check FAILED (unseen < 0.95); the world is too noisy to "
              "support pipeline claims", file=sys.stderr)
        return 1
    return 0


def _write_jsonl(path, records, append=False):
    text = "".join(json.dumps(r) + "\n" for r in records)
    if append and os.path.exists(path):
        with open(path) as fh:
            text = fh.read() + text
    atomic_write_text(path, text)


def _loss_curve(log, out_path):
    xs = [r["step"] for r in log]
    series = {t: [r[t] for r in log] for t in LOGGED_TERMS
              if any(r[t] != 0.0 for r in log)}
    if not series:
        series = {"V": [r["V"] for r in log]}
    save_svg(out_path, line_plot_svg(xs, series, "training loss terms"))


def cmd_train(args) -> int:
    ds = load_dataset(args.dataset)
    os.makedirs(args.out, exist_ok=True)
    if args.resume:
        bundle, cfg, header = load_checkpoint(args.resume)
        if args.epochs is not None:
            cfg = replace(cfg, epochs=args.epochs)
        start = header["global_step"]
    else:
        cfg = _merge_config(args)
        bundle, start = None, 0
    total = cfg.epochs * steps_per_epoch(ds, cfg)
    if start > total:
        raise GzslError(
            f"checkpoint is at step {start}, past the requested {total} steps; "
            "raise --epochs to continue")
    t0 = time.perf_counter()
    bundle, log = train(ds, cfg, bundle=bundle, start_step=start)
    _note(f"trained {total - start} steps in {time.perf_counter() - t0:.1f}s")
    ckpt_path = os.path.join(args.out, "model.cegz")
    save_checkpoint(ckpt_path, bundle, cfg, ds.d_x, ds.semantic.d_a, total)
    log_path = os.path.join(args.out, "log.jsonl")
    _write_jsonl(log_path, log, append=args.resume is not None)
    if log and not args.no_plot:
        _loss_curve(log, os.path.join(args.out, "loss_curve.svg"))
    metrics = None
    if not args.no_eval:
        classifier = fit_final_classifier(bundle, ds, cfg)
        metrics = evaluate(classifier, bundle, ds, cfg).to_dict()
        print(f"U={metrics['U']:.4f} S={metrics['S']:.4f} H={metrics['H']:.4f} "
              f"czsl_top1={metrics['czsl_top1']:.4f}")
    report = {
        "config": cfg.resolved(ds.d_x, ds.semantic.d_a),
        "global_step": total,
        "metrics": metrics,
    }
    atomic_write_text(os.path.join(args.out, "report.json"),
                      json.dumps(report, indent=2) + "\n")
    print(f"artifacts in {args.out}: model.cegz, log.jsonl, report.json")
    return 0


def cmd_eval(args) -> int:
    bundle, cfg, header = load_checkpoint(args.checkpoint)
    ds = load_dataset(args.dataset)
    if ds.d_x != bundle.generator.d_x or ds.semantic.d_a != bundle.generator.d_a:
        raise ShapeError(
            f"dataset is d_x={ds.d_x}, d_a={ds.semantic.d_a} but the checkpoint "
            f"was trained with d_x={bundle.generator.d_x}, d_a={bundle.generator.d_a}")
    classifier = fit_final_classifier(bundle, ds, cfg)
    if args.czsl_only:
        if ds.test_unseen_x.shape[0] == 0:
            raise GzslError("dataset has no unseen test rows")
        inputs = classifier_inputs(bundle, ds.test_unseen_x, classifier.space)
        s = ds.semantic.seen_count
        scores = classifier.scores(inputs)[:, s:]
        pred = np.argmax(scores, axis=1).astype(np.int64) + s + 1
        out = {"czsl_top1": per_class_top1(pred, ds.test_unseen_y,
                                           ds.semantic.unseen_ids)}
    else:
        out = evaluate(classifier, bundle, ds, cfg).to_dict()
    text = json.dumps(out, indent=2)
    print(text)
    if args.out:
        atomic_write_text(args.out, text + "\n")
    return 0


def _csv_row(values) -> str:
    return ",".join(str(v) for v in values) + "\n"


def _run_cell(ds, cfg):
    """Run one ablation cell; returns (U, S, H, status)."""
    try:
        _, _, report = run_pipeline(ds, cfg)
        return f"{report.U:.6f}", f"{report.S:.6f}", f"{report.H:.6f}", "ok"
    except GzslError as err:
        return "", "", "", f"failed:{type(err).__name__}"


TABLE_MODES_DEFAULT = ("gen_only", "se_only", "se_basic", "se_embed", "ce_full")


def cmd_ablate(args) -> int:
    ds = load_dataset(args.dataset)
    modes = args.mode or list(TABLE_MODES_DEFAULT)
    args.mode = None
    base = _merge_config(args)
    os.makedirs(args.out, exist_ok=True)
    if args.table == "modes":
        lines = ["mode,U,S,H,status\n"]
        for mode in modes:
            u, s, h, status = _run_cell(ds, replace(base, mode=mode))
            lines.append(_csv_row([mode, u, s, h, status]))
            print(f"{mode}: U={u or 'nan'} S={s or 'nan'} H={h or 'nan'} [{status}]")
        path = os.path.join(args.out, "modes.csv")
        atomic_write_text(path, "".join(lines))
    elif args.table == "nsyn":
        lines = ["n_syn,U,S,H,status\n"]
        curves = {"U": [], "S": [], "H": []}
        for n in N_SYN_SWEEP:
            u, s, h, status = _run_cell(ds, replace(base, n_syn_per_unseen=n))
            lines.append(_csv_row([n, u, s, h, status]))
            print(f"n_syn={n}: U={u or 'nan'} S={s or 'nan'} H={h or 'nan'} [{status}]")
            for key, val in zip(("U", "S", "H"), (u, s, h)):
                curves[key].append(float(val) if val else float("nan"))
        path = os.path.join(args.out, "nsyn.csv")
        atomic_write_text(path, "".join(lines))
        save_svg(os.path.join(args.out, "nsyn.svg"),
                 line_plot_svg(N_SYN_SWEEP, curves,
                               "scores vs synthetic rows per unseen class"))
    else:  # tau
        lines = ["tau_e,tau_s,U,S,H,status\n"]
        grid = np.full((len(TAU_GRID), len(TAU_GRID)), np.nan)
        for i, te in enumerate(TAU_GRID):
            for j, ts in enumerate(TAU_GRID):
                u, s, h, status = _run_cell(
                    ds, replace(base, tau_e=te, tau_s=ts))
                lines.append(_csv_row([te, ts, u, s, h, status]))
                print(f"tau_e={te} tau_s={ts}: H={h or 'nan'} [{status}]")
                if h:
                    grid[i, j] = float(h)
        path = os.path.join(args.out, "tau.csv")
        atomic_write_text(path, "".join(lines))
        labels = [str(t) for t in TAU_GRID]
        save_svg(os.path.join(args.out, "tau.svg"),
                 heatmap_svg(grid, labels, labels, "H over temperature grid",
                             row_name="tau_e", col_name="tau_s"))
    print(f"wrote {path}")
    return 0


def cmd_gradcheck(args) -> int:
    names = args.family or list(gradcheck_mod.FAMILY_NAMES)
    for name in names:
        if name not in gradcheck_mod.FAMILY_NAMES:
            raise GzslError(f"unknown family {name!r}; choose from "
                            f"{', '.join(gradcheck_mod.FAMILY_NAMES)}")
    if args.seed is None:
        _note("--seed not given; the audit world uses the default seed 0")
    results = gradcheck_mod.run_all(names, seed=args.seed or 0, eps=args.eps)
    failed = []
    for name, rep in results:
        ok = rep.passed(args.tol)
        print(f"{name:15s} max_rel_err={rep.max_rel_error:.3e} "
              f"checked={rep.n_checked} excluded={rep.n_excluded} "
              f"{'PASS' if ok else 'FAIL'}")
        if not ok:
            labels = gradcheck_mod.family_param_labels(name, seed=args.seed or 0)
            block = (labels[rep.worst_param]
                     if 0 <= rep.worst_param < len(labels) else "none")
            failed.append((name, block, rep.worst_entry))
    if args.out:
        payload = {name: {"max_rel_error": rep.max_rel_error,
                          "n_checked": rep.n_checked,
                          "n_excluded": rep.n_excluded,
                          "passed": rep.passed(args.tol)}
                   for name, rep in results}
        atomic_write_text(args.out, json.dumps(payload, indent=2) + "\n")
    if failed:
        detail = ", ".join(f"{n} (block {b}, entry {e})" for n, b, e in failed)
        print(f"gradient audit FAILED for: {detail}", file=sys.stderr)
        return 1
    print(f"all {len(results)} families within tol={args.tol:g}")
    return 0


# ---------------------------------------------------------------------------
# parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gzslkit",
        description="Generalized zero-shot learning on precomputed features: "
                    "synthetic benchmarks, hybrid training, ablations, and "
                    "gradient audits.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-data", help="write a synthetic benchmark dataset")
    p.add_argument("-o", "--out", required=True, help="output path (.gzb file "
                   "or directory for a csv bundle)")
    p.add_argument("--format", choices=("gzb", "csv-bundle"))
    p.add_argument("--S", type=int, default=7, help="seen class count")
    p.add_argument("--U", type=int, default=3, help="unseen class count")
    p.add_argument("--dx", type=int, default=32, help="feature width")
    p.add_argument("--da", type=int, default=8, help="descriptor width")
    p.add_argument("--n", type=int, default=100, help="rows per class")
    p.add_argument("--noise-sigma", type=float, default=0.25)
    p.add_argument("--seed", type=int)
    p.add_argument("--check-oracle", action="store_true",
                   help="verify a nearest-mean oracle scores at least 0.95")
    p.set_defaults(func=cmd_synth_data)

    p = sub.add_parser("train", help="train a model and write run artifacts")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", default="run")
    p.add_argument("--resume", help="checkpoint to continue from; the stored "
                   "config applies, with --epochs allowed to extend the run")
    p.add_argument("--no-eval", action="store_true")
    p.add_argument("--no-plot", action="store_true")
    _add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint on a dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", help="also write the report JSON here")
    p.add_argument("--czsl-only", action="store_true",
                   help="restrict the label space to unseen classes")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="sweep modes, synthetic counts, or temperatures")
    p.add_argument("--dataset", required=True)
    p.add_argument("--table", required=True, choices=("modes", "nsyn", "tau"))
    p.add_argument("--out", default="ablate")
    _add_train_flags(p, mode_list=True)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("gradcheck",
                       help="audit analytic gradients against finite differences")
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--eps", type=float, default=1e-4)
    p.add_argument("--seed", type=int)
    p.add_argument("--family", action="append",
                   help="repeatable; default is every family")
    p.add_argument("--out", help="write a JSON report here")
    p.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 2
    try:
        return args.func(args)
    except (MagicMismatch, HashMismatch) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except NumericsError as err:
        print(f"numeric failure: {err}", file=sys.stderr)
        return 3
    except (GzslError, OSError, json.JSONDecodeError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


def entry():
    sys.exit(main())


if __name__ == "__main__":
    entry()
