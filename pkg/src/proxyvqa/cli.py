"""Command-line entry point: ``proxyvqa <subcommand> ...``.

Exit status: 0 on success, 2 for validation errors (bad flags, missing or
malformed artifacts, detected before computing), 3 for runtime failures.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from proxyvqa import __version__, pipeline
from proxyvqa.config import PipelineConfig, parse_int_list, parse_size
from proxyvqa.errors import PipelineError, ValidationError

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_RUNTIME = 3

log = logging.getLogger("proxyvqa")


def _require(*paths):
    for p in paths:
        if p is not None and not Path(p).exists():
            raise ValidationError(f"input not found: {p}")


def _opt_float(v):
    return None if v in (None, "") else float(v)


def _content_range(text):
    """'0-29' or '7' -> range of content ids; None passes through."""
    if not text:
        return None
    lo, _, hi = text.partition("-")
    try:
        r = range(int(lo), int(hi or lo) + 1)
    except ValueError:
        raise ValidationError(f"bad content range {text!r}; use A-B") from None
    if not r:
        raise ValidationError(f"empty content range {text!r}")
    return r


def _config(args, section):
    cfg = PipelineConfig.load(args.config, default_section=section) if args.config else PipelineConfig()
    return cfg


def cmd_generate(args):
    cfg = _config(args, "data")
    cfg.update("data", dict(seed=args.seed, contents=args.contents, frames=args.frames, size=args.size,
                            domain=args.domain, first_content=args.first_content))
    d = cfg["data"]
    w, h = parse_size(d["size"])
    path = pipeline.generate(args.out, d["seed"], d["contents"], d["frames"], w, h, d["domain"],
                             d["first_content"])
    print(path)


def cmd_compute_fr(args):
    _require(args.manifest)
    cfg = _config(args, "fr")
    cfg.update("fr", dict(tasks=args.tasks))
    pipeline.compute_fr(args.manifest, cfg["fr"]["tasks"], args.out, args.labels_out, dict(cfg["fr"]))
    print(args.out)


def cmd_pretrain(args):
    _require(args.manifest, args.targets)
    cfg = _config(args, "train")
    cfg.update("train", dict(tasks=args.tasks, epochs=args.epochs, learning_rate=args.learning_rate,
                             seed=args.seed))
    tc = cfg.train_config()
    _, tlog, paths = pipeline.run_pretrain(args.manifest, args.targets, tc, args.out,
                                           _content_range(args.contents))
    means = tlog.epoch_means()
    log.info("joint loss: first epoch %.6g, last epoch %.6g", means[0], means[-1])
    print(paths[-1])


def cmd_extract(args):
    _require(args.checkpoint, args.manifest)
    cfg = _config(args, "features")
    cfg.update("features", dict(stride=args.stride))
    contents = _content_range(args.contents)
    pipeline.extract_features(args.checkpoint, args.manifest, args.out, cfg["features"]["stride"],
                              args.include_reference, set(contents) if contents else None)
    print(args.out)


def cmd_fit_head(args):
    _require(args.features, args.labels)
    cfg = _config(args, "head")
    cfg.update("head", dict(model=args.model, ridge_lambda=args.ridge_lambda, svr_c=args.C,
                            svr_gamma=args.gamma, svr_epsilon=args.epsilon))
    h = cfg["head"]
    m = pipeline.fit_head(args.features, args.labels, h["model"], args.out, h["ridge_lambda"],
                          _opt_float(h["svr_c"]), _opt_float(h["svr_gamma"]), _opt_float(h["svr_epsilon"]),
                          h["cv_folds"])
    print(f"{m.kind} model -> {args.out}")


def cmd_evaluate(args):
    _require(args.features, args.labels, args.source_features, args.source_labels)
    cfg = _config(args, "eval")
    cfg.update("eval", dict(protocol=args.protocol, runs=args.runs, k=args.k, samplings=args.samplings,
                            regressor=args.regressor, seed=args.seed))
    e = cfg["eval"]
    summary = pipeline.evaluate(
        e["protocol"], args.features, args.labels, args.out, runs=e["runs"], ks=parse_int_list(e["k"]),
        samplings=e["samplings"], regressor=e["regressor"], seed=e["seed"],
        source_features=args.source_features, source_labels=args.source_labels,
        zeroshot_epochs=e["zeroshot_epochs"], scatter=args.scatter, settings=dict(e))
    for r in summary:
        k = f"K={r['K']} " if r.get("K") not in (None, "") else ""
        print(f"{k}SRCC={r['srcc']:.4f} KRCC={r['krcc']:.4f} PLCC={r['plcc']:.4f} RMSE={r['rmse']:.4f}")


def cmd_report(args):
    _require(*args.inputs)
    print(pipeline.report(args.inputs, args.out_dir))


def cmd_ablate(args):
    cfg = _config(args, "ablate")
    if args.seed is not None:
        cfg.update("data", dict(seed=args.seed))
    if args.runs is not None:
        cfg.update("ablate", dict(runs=args.runs))
    rows = pipeline.ablate(cfg, args.out, progress=lambda m, r: log.info("%s done: SRCC %.4f", m, r["srcc"]))
    print(f"{'method':<6} {'SRCC':>8} {'KRCC':>8} {'PLCC':>8} {'RMSE':>8}")
    for r in rows:
        print(f"{r['method']:<6} {r['srcc']:8.4f} {r['krcc']:8.4f} {r['plcc']:8.4f} {r['rmse']:8.4f}")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="proxyvqa", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("--config", help="key=value config file (sections or bare keys)")
    p.add_argument("--threads", type=int, default=None, help="cap BLAS threads; 1 = reference path")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("generate", help="render pristine clips and the distortion ladder")
    s.add_argument("--seed", type=int)
    s.add_argument("--contents", type=int)
    s.add_argument("--frames", type=int)
    s.add_argument("--size", help="N or WxH (default 96x96)")
    s.add_argument("--domain", choices=["source", "target"])
    s.add_argument("--first-content", type=int)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_generate)

    s = sub.add_parser("compute-fr", help="per-frame and clip-mean FR proxy targets")
    s.add_argument("--manifest", required=True)
    s.add_argument("--tasks")
    s.add_argument("--out", required=True)
    s.add_argument("--labels-out", help="also write MS-SSIM surrogate labels (clip_id,label)")
    s.set_defaults(func=cmd_compute_fr)

    s = sub.add_parser("pretrain", help="two-pass MGDA multi-task pretraining")
    s.add_argument("--manifest", required=True)
    s.add_argument("--targets", required=True)
    s.add_argument("--tasks")
    s.add_argument("--epochs", type=int)
    s.add_argument("--learning-rate", type=float)
    s.add_argument("--seed", type=int)
    s.add_argument("--contents", help="content id range to train on, e.g. 0-29")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_pretrain)

    s = sub.add_parser("extract-features", help="mean-pooled frozen-encoder clip features")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--manifest", required=True)
    s.add_argument("--stride", type=int)
    s.add_argument("--include-reference", action="store_true")
    s.add_argument("--contents", help="content id range to embed, e.g. 30-39")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_extract)

    s = sub.add_parser("fit-head", help="fit a Ridge or SVR quality head on features")
    s.add_argument("--features", required=True)
    s.add_argument("--labels", required=True)
    s.add_argument("--model", choices=["ridge", "svr"])
    s.add_argument("--ridge-lambda", type=float)
    s.add_argument("--C", type=float)
    s.add_argument("--gamma", type=float)
    s.add_argument("--epsilon", type=float)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_fit_head)

    s = sub.add_parser("evaluate", help="standard / few-shot / zero-shot protocols")
    s.add_argument("--protocol", choices=["standard", "fewshot", "zeroshot"])
    s.add_argument("--features", required=True)
    s.add_argument("--labels", required=True)
    s.add_argument("--source-features")
    s.add_argument("--source-labels")
    s.add_argument("--runs", type=int)
    s.add_argument("--k", help="comma-separated K values for fewshot")
    s.add_argument("--samplings", type=int)
    s.add_argument("--regressor", choices=["ridge", "svr"])
    s.add_argument("--seed", type=int)
    s.add_argument("--scatter", help="optional SVG scatter of prediction vs label")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("report", help="render figures and a summary table from CSV outputs")
    s.add_argument("inputs", nargs="+")
    s.add_argument("--out-dir", required=True)
    s.set_defaults(func=cmd_report)

    s = sub.add_parser("ablate", help="single-task vs multi-task pretraining table")
    s.add_argument("--seed", type=int)
    s.add_argument("--runs", type=int)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_ablate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.threads is not None:
            from threadpoolctl import threadpool_limits
            with threadpool_limits(limits=max(1, args.threads)):
                args.func(args)
        else:
            args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (PipelineError, FloatingPointError, ArithmeticError, RuntimeError) as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
