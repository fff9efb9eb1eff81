"""Command-line entry point.

Subcommands cover the full workflow: simulate a corpus, preprocess it into
window arrays, train, assess a single trace, evaluate a labeled corpus,
tune the cutoff, verify gradients, export pseudo-labels, and serve the
annotation API. Exit codes: 0 success, 2 usage, 3 data/file problems,
4 numeric failures during optimization or checking.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


def _add_model_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--mode", choices=("point", "cycle"), default="cycle",
                   help="window unit: raw samples or embedded cycles (default %(default)s)")
    p.add_argument("--r", type=int, default=None,
                   help="input length; defaults to 200 samples (point) or 2 cycles (cycle)")
    p.add_argument("--p", type=int, default=None,
                   help="future length; defaults to match --r's default, 0 disables the arm")
    p.add_argument("--dim", type=int, default=150,
                   help="per-cycle embedding size, cycle mode only (default %(default)s)")
    p.add_argument("--variant", choices=("cell", "standard"), default="cell",
                   help="recurrence wiring of the LSTM gates (default %(default)s)")


def _train_config(args) -> "TrainConfig":
    from .training import default_train_config

    overrides = {}
    if args.r is not None:
        overrides["n_input"] = args.r
    if args.p is not None:
        overrides["n_future"] = args.p
    if args.mode == "cycle":
        overrides["data_dim"] = args.dim
    overrides["variant"] = args.variant
    for name in ("batch_size", "lr_max", "weight_decay", "epochs", "seed",
                 "norm", "train_filter"):
        val = getattr(args, name, None)
        if val is not None:
            overrides[name] = val
    return default_train_config(args.mode, **overrides)


def _load_traces(path: str):
    from .traces import load_corpus, load_trace

    p = Path(path)
    if p.is_dir():
        return load_corpus(p)
    return [load_trace(p)]


# --------------------------------------------------------------------------
# Subcommands
# --------------------------------------------------------------------------


def _cmd_simulate(args) -> int:
    from .simulate import (
        benchmark_configs, load_sim_configs, synthesize_corpus, write_default_config,
    )
    from .traces import write_corpus

    if args.write_config:
        write_default_config(args.write_config)
        print(f"wrote template config to {args.write_config}")
        return EXIT_OK
    if not args.out:
        raise SystemExit("simulate needs --out")
    if args.benchmark:
        seed = 0 if args.seed is None else args.seed
        configs = benchmark_configs(seed=seed, n_traces=args.n_traces)
    elif args.config:
        configs = load_sim_configs(args.config)
        if args.seed is not None:
            configs = [replace(c, seed=args.seed) for c in configs]
    else:
        raise SystemExit("simulate needs --config, --benchmark, or --write-config")
    traces = synthesize_corpus(configs, prefix=args.prefix)
    paths = write_corpus(traces, args.out)
    print(f"wrote {len(paths)} traces to {args.out}")
    return EXIT_OK


def _cmd_preprocess(args) -> int:
    from .pipeline import corpus_windows
    from .traces import fit_norm

    traces = _load_traces(args.data)
    config = _train_config(args)
    stats = fit_norm(traces)
    inputs, futures, labels = corpus_windows(traces, config, args.stride, stats)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    tmp = out.with_name(out.name + ".tmp")
    np.savez(
        tmp, inputs=inputs, futures=futures, labels=labels,
        meta=json.dumps({
            "config": asdict(config), "stride": args.stride,
            "norm_mean": stats.mean, "norm_std": stats.std,
            "trace_ids": [t.trace_id for t in traces],
        }),
    )
    os.replace(str(tmp) + ".npz", out)
    print(f"wrote {inputs.shape[0]} windows to {out}")
    return EXIT_OK


def _cmd_train(args) -> int:
    from .pipeline import train_corpus
    from .traces import NormStats
    from .training import TrainConfig, save_checkpoint, train

    def progress(epoch, loss):
        if args.quiet:
            return
        print(f"epoch {epoch + 1}: mean loss {loss:.6f}", flush=True)

    data = Path(args.data)
    if data.suffix == ".npz":
        bundle = np.load(data, allow_pickle=False)
        meta = json.loads(str(bundle["meta"]))
        config = TrainConfig(**meta["config"])
        # window geometry is baked into the arrays, but training
        # hyperparameters stay overridable from the command line
        overrides = {
            name: getattr(args, name)
            for name in ("batch_size", "lr_max", "weight_decay", "epochs",
                         "seed", "norm", "train_filter")
            if getattr(args, name, None) is not None
        }
        if overrides:
            config = replace(config, **overrides)
        stats = NormStats(meta["norm_mean"], meta["norm_std"])
        ckpt = train(
            bundle["inputs"], bundle["futures"], bundle["labels"], config,
            norm_stats=stats, n_workers=args.workers, progress=progress,
        )
    else:
        config = _train_config(args)
        ckpt = train_corpus(
            _load_traces(args.data), config, stride=args.stride,
            n_workers=args.workers, progress=progress,
        )
    save_checkpoint(ckpt, args.out)
    print(f"checkpoint written to {args.out} (cutoff {ckpt.tau:.6g})")
    return EXIT_OK


def _cmd_assess(args) -> int:
    from .assess import assess_trace
    from .traces import atomic_write_text, load_trace
    from .training import load_checkpoint

    ckpt = load_checkpoint(args.checkpoint)
    trace = load_trace(args.trace)
    result = assess_trace(ckpt, trace, tau=args.tau)
    lines = ["sample,prediction"]
    lines += [f"{k},{int(v)}" for k, v in enumerate(result.track)]
    atomic_write_text(args.out, "\n".join(lines) + "\n")
    n_flagged = int(np.sum(result.preds == 0)) if len(result.preds) else 0
    print(f"{trace.trace_id}: {len(result.anchors)} windows, "
          f"{n_flagged} flagged at cutoff {result.tau:.6g}")
    if result.warning:
        print(f"warning: {result.warning}", file=sys.stderr)
    return EXIT_OK


def _cmd_evaluate(args) -> int:
    from .assess import evaluate, write_report, write_roc_csv
    from .pipeline import corpus_residuals
    from .training import load_checkpoint

    ckpt = load_checkpoint(args.checkpoint)
    traces = _load_traces(args.data)
    unlabeled = [t.trace_id for t in traces if t.labels is None]
    if unlabeled:
        raise SystemExit(f"evaluate needs labeled traces; missing labels: {unlabeled}")
    tau = args.tau if args.tau is not None else ckpt.tau
    if tau is None:
        raise SystemExit("no cutoff: pass --tau or train one into the checkpoint")
    res, labels = corpus_residuals(ckpt, traces, stride=args.stride,
                                   n_workers=args.workers)
    report = evaluate(res, labels, tau)
    write_report(report, args.out)
    if args.roc_out and report.roc is not None:
        write_roc_csv(report.roc, args.roc_out)
    acc = report.predictive["acc"]
    acc_s = "undefined" if acc is None else f"{acc:.4f}"
    auc_s = "undefined" if report.auc is None else f"{report.auc:.4f}"
    print(f"windows {len(res)}  accuracy {acc_s}  auc {auc_s}")
    print(f"report written to {args.out}")
    return EXIT_OK


def _cmd_tune_cutoff(args) -> int:
    from .assess import fit_two_sigma, youden_max
    from .pipeline import corpus_residuals
    from .training import load_checkpoint, save_checkpoint

    ckpt = load_checkpoint(args.checkpoint)
    traces = _load_traces(args.data)
    res, labels = corpus_residuals(ckpt, traces, stride=args.stride,
                                   n_workers=args.workers)
    if args.policy == "two_sigma":
        tau = float(fit_two_sigma(res))
    else:
        if any(t.labels is None for t in traces):
            raise SystemExit("youden_max needs labeled traces")
        tau = float(youden_max(res, labels))
    print(f"{args.policy} cutoff over {len(res)} windows: {tau!r}")
    if args.update_checkpoint:
        ckpt.tau = tau
        save_checkpoint(ckpt, args.checkpoint)
        print(f"checkpoint {args.checkpoint} updated")
    return EXIT_OK


def _cmd_gradcheck(args) -> int:
    from .model import ModelConfig, init_params
    from .training import gradient_check

    rng = np.random.default_rng(args.seed)
    worst = 0.0
    failed = False
    variants = ("cell", "standard") if args.variant == "both" else (args.variant,)
    for variant in variants:
        for label, cfg in (
            ("point", ModelConfig(mode="point", data_dim=1, n_input=4, n_future=2,
                                  hidden_dim=3, latent_dim=3, variant=variant)),
            ("cycle", ModelConfig(mode="cycle", data_dim=6, n_input=2, n_future=1,
                                  hidden_dim=3, latent_dim=3, variant=variant)),
        ):
            params = init_params(cfg, seed=args.seed)
            x = rng.normal(size=(2, cfg.n_input, cfg.data_dim))
            fut = rng.normal(size=(2, cfg.n_future, cfg.data_dim))
            eps = rng.normal(size=(2, cfg.latent_dim))
            rep = gradient_check(params, x, fut, eps)
            ok = rep.passed(args.tol)
            failed |= not ok
            worst = max(worst, rep.max_rel_err)
            print(f"{variant}/{label}: max rel err {rep.max_rel_err:.3e} "
                  f"(worst {rep.worst_name}) [{'ok' if ok else 'FAIL'}]")
    print(f"overall max rel err {worst:.3e}, tolerance {args.tol:g}")
    if failed:
        from .training import NumericError

        raise NumericError("gradient check failed")
    return EXIT_OK


def _cmd_export(args) -> int:
    from .service import LOW_MARGIN_FRAC
    import math

    from .assess import assess_trace
    from .traces import SignalTrace, atomic_write_text, save_trace
    from .training import load_checkpoint

    ckpt = load_checkpoint(args.checkpoint)
    traces = _load_traces(args.data)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    tau = args.tau if args.tau is not None else ckpt.tau
    review = ["trace_id,anchor,residual"]
    n_files = 0
    for trace in traces:
        result = assess_trace(ckpt, trace, tau=tau)
        track = result.track.copy()
        track[track < 0] = 1  # positions no window reaches default to normal
        labeled = SignalTrace(trace_id=trace.trace_id, fs=trace.fs, t0=trace.t0,
                              cvs=trace.cvs, ecg=trace.ecg, labels=track)
        save_trace(labeled, out_dir / f"{trace.trace_id}.csv")
        n_files += 1
        if math.isfinite(result.tau) and result.tau > 0:
            margin = np.abs(result.residuals - result.tau) / result.tau
            for k in np.flatnonzero(margin < LOW_MARGIN_FRAC):
                review.append(f"{trace.trace_id},{int(result.anchors[k])},"
                              f"{float(result.residuals[k])!r}")
    atomic_write_text(out_dir / "review.csv", "\n".join(review) + "\n")
    print(f"exported {n_files} pseudo-labeled traces to {out_dir} "
          f"({len(review) - 1} low-margin windows listed for review)")
    return EXIT_OK


def _cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    app = create_app(args.data_dir, checkpoint_path=args.checkpoint, ui_dir=args.ui)
    port = int(os.environ.get("CVSQA_PORT", args.port))
    uvicorn.run(app, host=args.host, port=port, log_level="warning")
    return EXIT_OK


# --------------------------------------------------------------------------
# Parser
# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cvsqa",
        description="Unsupervised anomaly screening for cardiac volume signals.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a synthetic labeled corpus")
    p.add_argument("--out", help="output directory for trace CSVs")
    p.add_argument("--config", help="YAML corpus description")
    p.add_argument("--benchmark", action="store_true",
                   help="use the built-in 20-trace benchmark recipe")
    p.add_argument("--write-config", metavar="PATH",
                   help="write a commented template config and exit")
    p.add_argument("--seed", type=int, default=None, help="override the corpus seed")
    p.add_argument("--n-traces", type=int, default=20,
                   help="trace count for --benchmark (default %(default)s)")
    p.add_argument("--prefix", default="trace", help="trace id prefix (default %(default)s)")
    p.set_defaults(fn=_cmd_simulate)

    p = sub.add_parser("preprocess", help="window a corpus into model-ready arrays")
    p.add_argument("--data", required=True, help="trace directory or single CSV")
    p.add_argument("--out", required=True, help="output .npz path")
    p.add_argument("--stride", type=int, default=1, help="window stride (default %(default)s)")
    _add_model_args(p)
    p.set_defaults(fn=_cmd_preprocess)

    p = sub.add_parser("train", help="train a model and fit its cutoff")
    p.add_argument("--data", required=True,
                   help="trace directory, single CSV, or preprocessed .npz")
    p.add_argument("--out", required=True, help="checkpoint output path")
    p.add_argument("--stride", type=int, default=1, help="window stride (default %(default)s)")
    p.add_argument("--batch-size", type=int, default=None, dest="batch_size",
                   help="default 1024 (point) or 128 (cycle)")
    p.add_argument("--lr", type=float, default=None, dest="lr_max",
                   help="peak learning rate; default 0.01 (point) or 0.001 (cycle)")
    p.add_argument("--weight-decay", type=float, default=None, dest="weight_decay",
                   help="decoupled weight decay (default 0.01)")
    p.add_argument("--epochs", type=int, default=None, help="default 100")
    p.add_argument("--seed", type=int, default=None, help="default 0")
    p.add_argument("--norm", choices=("l1", "l2"), default=None,
                   help="residual norm recorded for assessment (default l2)")
    p.add_argument("--train-filter", choices=("all", "positive_only"), default=None,
                   dest="train_filter",
                   help="'all' ignores labels entirely (default); "
                        "'positive_only' keeps clean windows only")
    p.add_argument("--workers", type=int, default=1, help="gradient worker threads")
    p.add_argument("--quiet", action="store_true", help="suppress per-epoch loss lines")
    _add_model_args(p)
    p.set_defaults(fn=_cmd_train)

    p = sub.add_parser("assess", help="write the per-sample prediction track of one trace")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--trace", required=True, help="trace CSV path")
    p.add_argument("--out", required=True, help="output CSV (sample,prediction)")
    p.add_argument("--tau", type=float, default=None,
                   help="cutoff override; default is the checkpoint's fitted value")
    p.set_defaults(fn=_cmd_assess)

    p = sub.add_parser("evaluate", help="metrics report + ROC CSV on a labeled corpus")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="metrics report path")
    p.add_argument("--roc-out", default=None, help="optional ROC curve CSV path")
    p.add_argument("--tau", type=float, default=None)
    p.add_argument("--stride", type=int, default=1)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(fn=_cmd_evaluate)

    p = sub.add_parser("tune-cutoff", help="fit a cutoff on a corpus")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--policy", choices=("two_sigma", "youden_max"), default="two_sigma")
    p.add_argument("--stride", type=int, default=1)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--update-checkpoint", action="store_true",
                   help="write the fitted cutoff back into the checkpoint")
    p.set_defaults(fn=_cmd_tune_cutoff)

    p = sub.add_parser("gradcheck", help="finite-difference verification of the gradients")
    p.add_argument("--variant", choices=("cell", "standard", "both"), default="both")
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--seed", type=int, default=5)
    p.set_defaults(fn=_cmd_gradcheck)

    p = sub.add_parser("export", help="write machine labels + low-margin review list")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--tau", type=float, default=None)
    p.set_defaults(fn=_cmd_export)

    p = sub.add_parser("serve", help="run the annotation HTTP API")
    p.add_argument("--data-dir", required=True, dest="data_dir")
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--port", type=int, default=8787,
                   help="listen port; env CVSQA_PORT overrides (default %(default)s)")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--ui", default=None,
                   help="directory with the built browser client, mounted at /ui")
    p.set_defaults(fn=_cmd_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    from .traces import DataError
    from .training import NumericError

    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    try:
        return args.fn(args)
    except SystemExit as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"file error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
