"""Command-line entry point.

Every subcommand accepts ``--seed``, ``--out`` and ``--config FILE``; a JSON
config supplies defaults for the subcommand's options and explicit flags win.
Exit codes: 0 success, 2 configuration error, 3 data error.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from threadpoolctl import threadpool_limits

from . import CLASSES, __version__
from .active import STRATEGIES, ALConfig, run_al_experiment
from .dataset import (
    FLEET_DIR,
    TRACK_DIR,
    Corpus,
    annotate_corpus,
    load_annotated,
    read_corpus,
    save_annotated,
    synthetic_corpus,
    write_annotation_table,
    write_corpus,
)
from .errors import ConfigurationError, DataError
from .evaluation import (
    BENCH_MODELS,
    BENCH_WINDOWS_S,
    CURVE_COLUMNS,
    PASSIVE_COLUMNS,
    SUMMARY_COLUMNS,
    ExperimentConfig,
    aggregate_curves,
    bench_columns,
    curves_svg,
    input_shape,
    model_inputs,
    read_csv,
    run_passive_experiment,
    run_timing_bench,
    write_csv,
)
from .models import ARCHITECTURES, ModelSpec, TrainConfig, build_model, count_parameters, save_model, train
from .recurrence import channel_epsilons, joint_recurrence_plot, recurrence_plot, rp_to_image, write_pgm
from .signal import fit_scaler_array, read_trace_dir

STYLE_CODES = {"a": "aggressive", "n": "normal", "c": "cautious"}


def _log(message: str) -> None:
    print(message, file=sys.stderr, flush=True)


def _csv_list(text, convert=str) -> list:
    if isinstance(text, (list, tuple)):
        return [convert(t) for t in text]
    try:
        return [convert(t.strip()) for t in str(text).split(",") if t.strip()]
    except ValueError as exc:
        raise ConfigurationError(f"cannot parse list {text!r}") from exc


def _styles(text) -> list:
    out = []
    for s in _csv_list(text):
        name = STYLE_CODES.get(s, s)
        if name not in CLASSES:
            raise ConfigurationError(f"unknown style {s!r}")
        out.append(name)
    return out


def _windows(text) -> tuple:
    """``"10:0,5:0.5"`` or a JSON list of pairs into ``((10.0, 0.0), (5.0, 0.5))``."""
    if isinstance(text, (list, tuple)):
        pairs = [(float(a), float(b)) for a, b in text]
    else:
        pairs = []
        for item in _csv_list(text):
            seconds, _, overlap = item.partition(":")
            try:
                pairs.append((float(seconds), float(overlap or 0.0)))
            except ValueError as exc:
                raise ConfigurationError(f"cannot parse window {item!r}") from exc
    return tuple(pairs)


def _require(args, *names) -> None:
    missing = [n for n in names if getattr(args, n, None) is None]
    if missing:
        raise ConfigurationError(f"{args.command}: missing required option(s) {', '.join('--' + m.replace('_', '-') for m in missing)}")


def _train_config(args) -> TrainConfig:
    cfg = TrainConfig(**dict(args.train or {}))
    cfg.validate()
    return cfg


# ---------------------------------------------------------------------------
# subcommands


def cmd_generate(args) -> None:
    _require(args, "out")
    corpus = synthetic_corpus(args.per_style, args.duration, args.seed, args.track_per_style, _styles(args.styles))
    write_corpus(corpus, args.out)
    _log(f"wrote {len(corpus.track)} track and {len(corpus.fleet)} fleet traces to {args.out}")


def cmd_annotate(args) -> None:
    _require(args, "input", "out")
    root = Path(args.input)
    if not root.is_dir():
        raise DataError(f"no such directory {root}")
    if args.kde_train is not None:
        corpus = Corpus(read_trace_dir(args.kde_train), read_trace_dir(root))
    elif (root / TRACK_DIR).is_dir():
        corpus = read_corpus(root)
    else:
        raise ConfigurationError(f"--kde-train is required unless {root} holds {TRACK_DIR}/ and {FLEET_DIR}/")
    if (root / FLEET_DIR).is_dir() and args.kde_train is not None:
        corpus = Corpus(corpus.track, read_trace_dir(root / FLEET_DIR))
    data = annotate_corpus(corpus, args.window, args.overlap, args.max_windows, args.seed)
    out = Path(args.out)
    if out.suffix == ".csv":
        save_annotated(data, out.parent)
        write_annotation_table(data, out)
    else:
        save_annotated(data, out)
    counts = {c: data.labels.count(c) for c in CLASSES}
    _log(f"annotated {len(data)} windows: {counts}")


def cmd_train(args) -> None:
    _require(args, "data", "model", "out")
    data = load_annotated(args.data)
    x_train, _ = model_inputs(args.model, data.x, data.x[:1])
    spec = ModelSpec(args.model, input_shape(args.model, data.x), dropout=args.dropout, param_budget=args.budget)
    model = build_model(spec, seed=args.seed)
    cfg = replace(_train_config(args), seed=args.seed)
    model, history = train(model, x_train, data.y, cfg)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_model(model, out)
    scaler = fit_scaler_array(data.x, data.channels)
    Path(f"{out}.scaler.json").write_text(json.dumps(scaler.to_dict(), indent=2, sort_keys=True))
    rows = [{"epoch": e + 1, "train_loss": a, "train_accuracy": b, "val_loss": c, "val_accuracy": d}
            for e, (a, b, c, d) in enumerate(zip(history.train_loss, history.train_accuracy,
                                                 history.val_loss, history.val_accuracy))]
    write_csv(f"{out}.history.csv", rows, ("epoch", "train_loss", "train_accuracy", "val_loss", "val_accuracy"))
    _log(f"{args.model}: {count_parameters(model)} parameters, best epoch {history.best_epoch} "
         f"of {history.epochs}, validation accuracy {history.val_accuracy[history.best_epoch - 1]:.3f}")


def cmd_passive(args) -> None:
    config = ExperimentConfig(
        data_dir=args.data_dir, windows=_windows(args.windows), models=tuple(_csv_list(args.models)),
        folds=args.folds, seed=args.seed, out_dir=args.out or "results", max_windows=args.max_windows,
        per_style=args.per_style, track_per_style=args.track_per_style, duration_s=args.duration_s,
        train=dict(args.train or {}),
    )
    config.validate()
    if config.data_dir is not None:
        corpus = read_corpus(config.data_dir)
    else:
        corpus = synthetic_corpus(config.per_style, config.duration_s, config.seed, config.track_per_style)
    rows = run_passive_experiment(config, corpus, log=_log)
    path = write_csv(Path(config.out_dir) / "passive.csv", rows, PASSIVE_COLUMNS)
    _log(f"wrote {path}")


def cmd_active(args) -> None:
    _require(args, "data", "out")
    strategies = _csv_list(args.strategy)
    bad = [s for s in strategies if s not in STRATEGIES]
    if bad:
        raise ConfigurationError(f"unknown strategies {bad}; choose from {', '.join(STRATEGIES)}")
    seeds = _csv_list(args.seeds, int) if args.seeds is not None else [args.seed]
    data = load_annotated(args.data)
    x = fit_scaler_array(data.x, data.channels).transform(data.x)  # unsupervised, label-free
    cfg_train = _train_config(args)
    rows = []
    for strategy in strategies:
        for seed in seeds:
            config = ALConfig(strategy=strategy, architecture=args.model, seed=seed, dropout=args.dropout,
                              train=cfg_train)
            curve = run_al_experiment(x, data.y, config)
            _log(f"{strategy} seed {seed}: final accuracy {curve.test_accuracies[-1]:.3f}")
            rows.extend(curve.rows())
    path = write_csv(args.out, rows, CURVE_COLUMNS)
    _log(f"wrote {path}")


def cmd_bench(args) -> None:
    _require(args, "out")
    windows = _csv_list(args.windows, float)
    rows = run_timing_bench(_csv_list(args.models), windows, args.batch, args.repetitions, args.budget, args.seed)
    path = write_csv(args.out, rows, bench_columns(windows))
    _log(f"wrote {path}")


def cmd_rplot(args) -> None:
    _require(args, "data", "window", "out")
    data = load_annotated(args.data)
    if args.window not in data.window_ids:
        raise DataError(f"no window {args.window!r} in {args.data}")
    x = fit_scaler_array(data.x, data.channels).transform(data.x)
    eps = channel_epsilons(x, args.fraction)
    sample = x[data.window_ids.index(args.window)]
    if args.channel is None:
        plot = joint_recurrence_plot([recurrence_plot(sample[:, c], eps[c]) for c in range(sample.shape[1])])
    else:
        if args.channel not in data.channels:
            raise ConfigurationError(f"unknown channel {args.channel!r}; choose from {', '.join(data.channels)}")
        c = data.channels.index(args.channel)
        plot = recurrence_plot(sample[:, c], eps[c])
    image = rp_to_image(plot, args.side or plot.n)
    write_pgm(image, args.out)
    _log(f"wrote {args.out} ({image.shape[0]}x{image.shape[1]}, recurrence rate {plot.bits.mean():.3f})")


def cmd_curves(args) -> None:
    _require(args, "inputs", "out")
    rows = []
    for path in args.inputs:
        rows.extend(read_csv(path))
    missing = set(CURVE_COLUMNS) - set(rows[0]) if rows else set(CURVE_COLUMNS)
    if missing:
        raise DataError(f"curve files lack columns {sorted(missing)}")
    strategies = _csv_list(args.strategies) if args.strategies else None
    seeds = _csv_list(args.seeds, int) if args.seeds else None
    summary = aggregate_curves(rows, strategies, seeds)
    path = write_csv(args.out, summary, SUMMARY_COLUMNS)
    if args.plot:
        Path(args.plot).parent.mkdir(parents=True, exist_ok=True)
        Path(args.plot).write_text(curves_svg(summary))
    _log(f"wrote {path}")


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="master seed (default 0)")
    common.add_argument("--out", default=argparse.SUPPRESS, help="output file or directory")
    common.add_argument("--config", default=argparse.SUPPRESS, help="JSON file of option defaults")

    parser = argparse.ArgumentParser(prog="drivestyle", description=__doc__.splitlines()[0], parents=[common])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", parents=[common], help="synthesize track and fleet traces")
    p.add_argument("--styles", default="a,n,c")
    p.add_argument("--per-style", type=int, default=5, help="fleet traces per style")
    p.add_argument("--track-per-style", type=int, default=4, help="density-training traces per style")
    p.add_argument("--duration", type=float, default=670.0, help="seconds per trace")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("annotate", parents=[common], help="label fleet windows with rules and densities")
    p.add_argument("--in", dest="input", help="fleet trace directory or corpus root")
    p.add_argument("--kde-train", help="trace directory with a style column")
    p.add_argument("--window", type=float, default=10.0)
    p.add_argument("--overlap", type=float, default=0.0)
    p.add_argument("--max-windows", type=int)
    p.set_defaults(func=cmd_annotate)

    p = sub.add_parser("train", parents=[common], help="fit one classifier on an annotated dataset")
    p.add_argument("--data")
    p.add_argument("--model", choices=ARCHITECTURES)
    p.add_argument("--budget", type=int, help="target trainable parameter count")
    p.add_argument("--dropout", type=float, default=0.3)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("passive", parents=[common], help="cross-validated comparison of classifiers")
    p.add_argument("--data", dest="data_dir", help="corpus root; omitted means generate one")
    p.add_argument("--windows", default="5:0,10:0,5:0.5", help="seconds:overlap pairs")
    p.add_argument("--models", default="cnn1d,lstm,self_attention,jrp_cnn")
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--max-windows", type=int)
    p.add_argument("--per-style", type=int, default=5)
    p.add_argument("--track-per-style", type=int, default=4)
    p.add_argument("--duration", dest="duration_s", type=float, default=670.0)
    p.set_defaults(func=cmd_passive)

    p = sub.add_parser("active", parents=[common], help="pool-based active-learning curves")
    p.add_argument("--strategy", default="margin", help="one or more of " + ", ".join(STRATEGIES))
    p.add_argument("--model", default="cnn1d", choices=("cnn1d", "lstm", "self_attention", "cnn_lstm"))
    p.add_argument("--data")
    p.add_argument("--seeds", help="comma-separated seeds (default: --seed)")
    p.add_argument("--dropout", type=float, default=0.3)
    p.set_defaults(func=cmd_active)

    p = sub.add_parser("bench", parents=[common], help="forward-pass timing at a fixed parameter budget")
    p.add_argument("--models", default=",".join(BENCH_MODELS))
    p.add_argument("--windows", default=",".join(f"{s:g}" for s in BENCH_WINDOWS_S), help="window seconds")
    p.add_argument("--batch", type=int, default=5)
    p.add_argument("--repetitions", type=int, default=100)
    p.add_argument("--budget", type=int, default=4700)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("rplot", parents=[common], help="export one window's recurrence plot as PGM")
    p.add_argument("--data")
    p.add_argument("--window", help="window id")
    p.add_argument("--channel", help="single channel; default joins all channels")
    p.add_argument("--fraction", type=float, default=0.2, help="threshold as a fraction of channel std")
    p.add_argument("--side", type=int, help="output image side")
    p.set_defaults(func=cmd_rplot)

    p = sub.add_parser("curves", parents=[common], help="aggregate learning curves across seeds")
    p.add_argument("--inputs", nargs="+")
    p.add_argument("--strategies")
    p.add_argument("--seeds")
    p.add_argument("--plot", help="SVG output path")
    p.set_defaults(func=cmd_curves)
    return parser


def _apply_config(parser: argparse.ArgumentParser, args: argparse.Namespace, argv) -> argparse.Namespace:
    """Re-parse with the config file's entries as defaults."""
    path = Path(args.config)
    try:
        config = json.loads(path.read_text())
    except FileNotFoundError as exc:
        raise DataError(f"no such config file {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{path} is not valid JSON: {exc}") from exc
    if not isinstance(config, dict):
        raise ConfigurationError(f"{path} must hold a JSON object")
    config = {k.replace("-", "_"): v for k, v in config.items()}
    aliases = {"out_dir": "out", "data": "data_dir" if args.command == "passive" else "data"}
    config = {aliases.get(k, k): v for k, v in config.items()}
    known = set(vars(args)) | {"seed", "out", "train"}
    unknown = set(config) - known
    if unknown:
        raise ConfigurationError(f"unknown {args.command} options in {path}: {sorted(unknown)}")
    subparser = parser._subparsers._group_actions[0].choices[args.command]
    subparser.set_defaults(**config)
    reparsed = parser.parse_args(argv)
    for key, value in config.items():  # SUPPRESSed globals never pick up defaults
        if not hasattr(reparsed, key):
            setattr(reparsed, key, value)
    return reparsed


def main(argv=None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    args = parser.parse_args(argv)
    try:
        if hasattr(args, "config"):
            args = _apply_config(parser, args, argv)
        args.seed = getattr(args, "seed", 0)
        args.out = getattr(args, "out", None)
        args.train = getattr(args, "train", None)
        with threadpool_limits(limits=1):
            args.func(args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
