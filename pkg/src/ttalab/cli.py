"""Command-line entry points: source training, adaptation runs, the
batch-size sweep, the entropy-descent check, and feature-density export.

Exit codes: 0 success, 1 property violation, 2 training failure,
3 I/O or argument error. Every command is deterministic under --seed and
writes no timestamps, so reruns produce byte-identical outputs.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .adaptation import AdaptationConfig
from .benchmark import (CORRUPTION_KINDS, Corruption, StreamProtocol,
                        adapt_over_stream, apply_corruption, collect_features,
                        evaluate_accuracy, feature_histograms,
                        generate_dataset, histogram_overlap, stream_eval,
                        train_source)
from .errors import (InvalidInput, ParseError, SchemaError, TrainingDiverged,
                     TTALabError)
from .network import BNMode, load_checkpoint, save_checkpoint
from .numeric import simulate_entropy_descent, trajectory_csv

EXIT_OK = 0
EXIT_PROPERTY = 1
EXIT_TRAINING = 2
EXIT_SPEC = 3

STRATEGY_CHOICES = ("source", "norm", "tent", "tent-filtered", "ttc")
DEFAULT_TEST_M = 3000
DEFAULT_DATA_SEED = 777


class _SpecError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse that reports bad flags through our exit-code convention."""

    def error(self, message):
        raise _SpecError(message)


def _add_config_flags(p):
    p.add_argument("--strategy", choices=STRATEGY_CHOICES, default="ttc")
    p.add_argument("--lr", type=float, default=None,
                   help="adaptation learning rate (default: config default)")
    p.add_argument("--optimizer", choices=("sgd", "adam"), default="adam")
    p.add_argument("--tau", type=float, default=0.5)
    p.add_argument("--q", type=int, default=None,
                   help="gradient accumulation length (default: ~200/N)")
    p.add_argument("--no-rla", dest="rla", action="store_false")
    p.add_argument("--no-wa", dest="wa", action="store_false")
    p.add_argument("--no-ga", dest="ga", action="store_false")
    p.add_argument("--filter-threshold", type=float, default=None)


def _add_data_flags(p):
    p.add_argument("--corruption", choices=CORRUPTION_KINDS + ("none",),
                   default="gaussian_noise")
    p.add_argument("--severity", type=int, choices=range(1, 6), default=5)
    p.add_argument("--batch-size", type=int, default=100)
    p.add_argument("--test-m", type=int, default=DEFAULT_TEST_M)
    p.add_argument("--data-seed", type=int, default=DEFAULT_DATA_SEED,
                   help="seed of the held-out test set (shared across runs)")


def build_parser():
    parser = _Parser(prog="ttalab")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train-source", help="train and save a source checkpoint")
    p.add_argument("--out", default="out")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--m", type=int, default=3000)
    p.add_argument("--lr", type=float, default=1e-2)
    p.add_argument("--hidden", type=int, default=64)

    p = sub.add_parser("adapt", help="run one adaptation stream")
    p.add_argument("--checkpoint", default="out/source.json")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="out")
    _add_config_flags(p)
    _add_data_flags(p)

    p = sub.add_parser("sweep-batch-size",
                       help="tent/ttc with and without accumulation across batch sizes")
    p.add_argument("--checkpoint", default="out/source.json")
    p.add_argument("--batch-sizes", type=int, nargs="+",
                   default=[2, 10, 50, 100])
    p.add_argument("--seeds", type=int, default=5,
                   help="number of stream seeds to average over")
    p.add_argument("--out", default="out")
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--optimizer", choices=("sgd", "adam"), default="adam")
    p.add_argument("--tau", type=float, default=0.5)
    _add_data_flags(p)

    p = sub.add_parser("lemma-check",
                       help="single-sample entropy descent trajectories")
    p.add_argument("--k-list", type=int, nargs="+", default=[2, 10, 100])
    p.add_argument("--steps", type=int, default=5000)
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--random-starts", type=int, default=1000)
    p.add_argument("--random-steps", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="out")

    p = sub.add_parser("density",
                       help="per-channel feature histograms for two strategies")
    p.add_argument("--checkpoint", default="out/source.json")
    p.add_argument("--strategy-a", choices=STRATEGY_CHOICES, default="ttc")
    p.add_argument("--strategy-b", choices=STRATEGY_CHOICES, default="tent")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="out")
    p.add_argument("--bins", type=int, default=64)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--optimizer", choices=("sgd", "adam"), default="adam")
    p.add_argument("--tau", type=float, default=0.5)
    _add_data_flags(p)

    return parser


def _build_config(args, strategy=None):
    kwargs = {
        "strategy": strategy or args.strategy,
        "optimizer": args.optimizer,
        "tau": args.tau,
    }
    if args.lr is not None:
        kwargs["lr"] = args.lr
    if getattr(args, "q", None) is not None:
        kwargs["accumulation_q"] = args.q
    if getattr(args, "filter_threshold", None) is not None:
        kwargs["filter_threshold"] = args.filter_threshold
    for name, dest in (("rla_enabled", "rla"), ("wa_enabled", "wa"),
                       ("ga_enabled", "ga")):
        if hasattr(args, dest):
            kwargs[name] = getattr(args, dest)
    return AdaptationConfig(**kwargs)


def _load_checkpoint(path):
    p = Path(path)
    if not p.exists():
        raise _SpecError(f"checkpoint not found: {path}")
    return load_checkpoint(p)


def _corruption_of(args):
    if args.corruption == "none":
        return None
    return Corruption(kind=args.corruption, severity=args.severity)


def _outdir(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_train_source(args):
    out = _outdir(args)
    if args.epochs == 0:
        print("warning: --epochs 0, checkpoint will hold untrained weights",
              file=sys.stderr)
    dataset = generate_dataset(args.k, args.m, args.seed)
    net = train_source(dataset, epochs=args.epochs, seed=args.seed,
                       lr=args.lr, hidden=args.hidden)
    ckpt = out / "source.json"
    save_checkpoint(net, ckpt)
    train_acc = evaluate_accuracy(net, dataset)
    log = out / "train_log.txt"
    log.write_text(
        f"k={args.k} m={args.m} seed={args.seed} epochs={args.epochs} "
        f"lr={args.lr!r} hidden={args.hidden}\n"
        f"train_accuracy={train_acc!r}\n",
        encoding="utf-8")
    print(f"checkpoint written to {ckpt} (train accuracy {train_acc:.4f})")
    return EXIT_OK


def _report_stem(strategy, corruption, severity, seed):
    tag = f"{corruption}{severity}" if corruption != "none" else "none"
    return f"report_{strategy}_{tag}_seed{seed}"


def cmd_adapt(args):
    net = _load_checkpoint(args.checkpoint)
    out = _outdir(args)
    config = _build_config(args)
    corruption = _corruption_of(args)
    dataset = generate_dataset(net.k, args.test_m, args.data_seed)
    protocol = StreamProtocol(batch_size=args.batch_size, seed=args.seed)
    report = stream_eval(net, dataset, corruption, protocol, config)
    stem = _report_stem(config.strategy, report.corruption, report.severity,
                        args.seed)
    (out / f"{stem}.json").write_text(report.json_str(), encoding="utf-8")
    (out / f"{stem}_batches.csv").write_text(report.per_batch_csv(),
                                             encoding="utf-8")
    print(f"{config.strategy} on {report.corruption} severity "
          f"{report.severity}: accuracy {report.accuracy:.4f}")
    return EXIT_OK


def cmd_sweep_batch_size(args):
    for n in args.batch_sizes:
        if n < 2:
            raise _SpecError(
                f"--batch-sizes: {n} too small, per-batch statistics need >= 2")
    net = _load_checkpoint(args.checkpoint)
    out = _outdir(args)
    corruption = _corruption_of(args)
    dataset = generate_dataset(net.k, args.test_m, args.data_seed)

    def variant_config(strategy, ga):
        kwargs = {"optimizer": args.optimizer, "tau": args.tau}
        if args.lr is not None:
            kwargs["lr"] = args.lr
        if strategy == "tent" and ga:
            # tent plus accumulation is ttc with both other components off
            return AdaptationConfig(strategy="ttc", rla_enabled=False,
                                    wa_enabled=False, ga_enabled=True, **kwargs)
        if strategy == "tent":
            return AdaptationConfig(strategy="tent", **kwargs)
        return AdaptationConfig(strategy="ttc", ga_enabled=ga, **kwargs)

    lines = ["strategy,batch_size,ga,accuracy_mean,accuracy_std"]
    for strategy in ("tent", "ttc"):
        for ga in (False, True):
            config = variant_config(strategy, ga)
            for n in args.batch_sizes:
                accs = []
                for seed in range(args.seeds):
                    protocol = StreamProtocol(batch_size=n, seed=seed)
                    report = stream_eval(net, dataset, corruption, protocol,
                                         config)
                    accs.append(report.accuracy)
                mean = float(np.mean(accs))
                std = float(np.std(accs))
                lines.append(f"{strategy},{n},{str(ga).lower()},{mean!r},{std!r}")
                print(f"{strategy} ga={ga} N={n}: {mean:.4f} +- {std:.4f}")
    path = out / "sweep_batch_size.csv"
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"sweep written to {path}")
    return EXIT_OK


def _tilted_start(k):
    p = np.ones(k)
    p[0] = 1.5
    return p / p.sum()


def cmd_lemma_check(args):
    out = _outdir(args)
    failures = []
    summary = ["k,final_max_prob,monotone"]
    for k in args.k_list:
        traj = simulate_entropy_descent(_tilted_start(k), args.lr, args.steps)
        (out / f"lemma_k{k}.csv").write_text(trajectory_csv(traj),
                                             encoding="utf-8")
        top = traj[:, 0]  # class 0 starts largest
        monotone = bool(np.all(np.diff(top) >= 0.0))
        if not monotone:
            failures.append(f"k={k}: max probability decreased")
        summary.append(f"{k},{float(top[-1])!r},{str(monotone).lower()}")
        print(f"k={k}: final max prob {top[-1]:.6f} monotone={monotone}")

    rng = np.random.default_rng(args.seed)
    random_failures = 0
    for i in range(args.random_starts):
        k = int(args.k_list[i % len(args.k_list)])
        p0 = rng.dirichlet(np.ones(k))
        traj = simulate_entropy_descent(p0, args.lr, args.random_steps)
        top = traj[:, int(np.argmax(p0))]
        if not np.all(np.diff(top) >= 0.0):
            random_failures += 1
    if random_failures:
        failures.append(f"{random_failures}/{args.random_starts} random starts"
                        " broke monotonicity")
    summary.append(f"random_starts={args.random_starts},"
                   f"violations={random_failures},"
                   f"{'fail' if random_failures else 'pass'}")
    (out / "lemma_summary.csv").write_text("\n".join(summary) + "\n",
                                           encoding="utf-8")
    print(f"random starts: {args.random_starts - random_failures}/"
          f"{args.random_starts} monotone")
    if failures:
        for f in failures:
            print(f"FAIL: {f}", file=sys.stderr)
        return EXIT_PROPERTY
    print("lemma check passed")
    return EXIT_OK


def _strategy_features(net, dataset, corruption, args, strategy):
    """Adapt under one strategy, then collect penultimate features."""
    protocol = StreamProtocol(batch_size=args.batch_size, seed=args.seed)
    inputs = dataset.inputs
    if corruption is not None:
        inputs = apply_corruption(inputs, corruption, protocol.seed)
    config = _build_config(args, strategy=strategy)
    if strategy == "source":
        return collect_features(net, inputs, args.batch_size, BNMode.EVAL_STATS)
    _, adapted = adapt_over_stream(net, dataset, corruption, protocol, config)
    return collect_features(adapted, inputs, args.batch_size,
                            BNMode.TEST_BATCH_STATS)


def cmd_density(args):
    net = _load_checkpoint(args.checkpoint)
    out = _outdir(args)
    corruption = _corruption_of(args)
    dataset = generate_dataset(net.k, args.test_m, args.data_seed)

    # clean reference: the source checkpoint on the uncorrupted stream
    reference = collect_features(net, dataset.inputs, args.batch_size,
                                 BNMode.EVAL_STATS)
    feats_a = _strategy_features(net, dataset, corruption, args,
                                 args.strategy_a)
    feats_b = _strategy_features(net, dataset, corruption, args,
                                 args.strategy_b)
    edges, hists = feature_histograms(
        {"reference": reference, "a": feats_a, "b": feats_b}, bins=args.bins)

    channels = reference.shape[1]
    hist_lines = ["channel,bin_lo,bin_hi,reference,a,b"]
    for ch in range(channels):
        for b in range(args.bins):
            hist_lines.append(
                f"{ch},{float(edges[ch][b])!r},{float(edges[ch][b + 1])!r},"
                f"{float(hists['reference'][ch][b])!r},"
                f"{float(hists['a'][ch][b])!r},{float(hists['b'][ch][b])!r}")
    (out / "density_hist.csv").write_text("\n".join(hist_lines) + "\n",
                                          encoding="utf-8")

    overlap_lines = ["channel,a_vs_reference,b_vs_reference,a_vs_b"]
    a_ref, b_ref, a_b = [], [], []
    for ch in range(channels):
        oa = histogram_overlap(hists["a"][ch], hists["reference"][ch])
        ob = histogram_overlap(hists["b"][ch], hists["reference"][ch])
        oab = histogram_overlap(hists["a"][ch], hists["b"][ch])
        a_ref.append(oa)
        b_ref.append(ob)
        a_b.append(oab)
        overlap_lines.append(f"{ch},{oa!r},{ob!r},{oab!r}")
    (out / "density_overlap.csv").write_text("\n".join(overlap_lines) + "\n",
                                             encoding="utf-8")
    print(f"a={args.strategy_a} b={args.strategy_b} "
          f"corruption={args.corruption} severity={args.severity}")
    print(f"mean overlap vs reference: a={np.mean(a_ref):.4f} "
          f"b={np.mean(b_ref):.4f}; a vs b: {np.mean(a_b):.4f}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

_COMMANDS = {
    "train-source": cmd_train_source,
    "adapt": cmd_adapt,
    "sweep-batch-size": cmd_sweep_batch_size,
    "lemma-check": cmd_lemma_check,
    "density": cmd_density,
}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except _SpecError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_SPEC
    except TrainingDiverged as e:
        print(f"training failed: {e}", file=sys.stderr)
        return EXIT_TRAINING
    except (InvalidInput, ParseError, SchemaError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_SPEC
    except TTALabError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_SPEC


def entrypoint():
    raise SystemExit(main())
