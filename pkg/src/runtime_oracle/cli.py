"""Command line interface.

Every command accepts ``--config FILE``: an INI file whose ``[common]``
section and the section named after the command hold ``key = value``
defaults (keys are flag names without the leading dashes). Flags given on
the command line win over the file. The seed falls back to the
``RUNTIME_ORACLE_SEED`` environment variable, then to 0.

Exit codes: 0 on success, 2 on invalid input or configuration, 1 on I/O
or other runtime failures.
"""

import argparse
import configparser
import os
import sys
from dataclasses import asdict

import numpy as np

from . import __version__, serialization
from .baseline import fit_baseline, zero_baseline
from .conformal import DEFAULT_EPSILONS, CalibrationTable, build_calibration, \
    predict_bounds_batch
from .dataset import SyntheticConfig, generate_synthetic, load_dataset, \
    load_split, make_split, save_dataset, save_split
from .errors import InfeasibleError, ParseError, UnknownPoolError, ValidationError
from .evaluation import ExperimentSpec, MetricsReport, load_reports, \
    prepare_features, run_experiment, save_reports, score, summarize, \
    training_view, export_embeddings
from .model import DEFAULT_QUANTILES, NetworkConfig, RuntimeModel, forward_batch, \
    init_model
from .training import LossConfig, TrainConfig, train

SEED_ENV = "RUNTIME_ORACLE_SEED"
FORMATS = ("canonical_jsonl", "canonical_csv")


class UsageError(ValidationError):
    pass


def _float_list(text):
    try:
        return tuple(float(x) for x in str(text).replace(",", " ").split())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a list of numbers, got {text!r}")


def _int_list(text):
    try:
        return tuple(int(x) for x in str(text).replace(",", " ").split())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a list of integers, got {text!r}")


def _bool(text):
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def _default_seed():
    raw = os.environ.get(SEED_ENV)
    if raw is None or raw == "":
        return 0
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"{SEED_ENV} must be an integer, got {raw!r}")


# -- Parser ------------------------------------------------------------------

def _add_common(p, seed_default):
    p.add_argument("--config", help="INI file with defaults for this command")
    p.add_argument("--seed", type=int, default=seed_default,
                   help=f"random seed (falls back to ${SEED_ENV})")


def _add_network(p):
    net = NetworkConfig()
    g = p.add_argument_group("network")
    g.add_argument("--hidden-sizes", type=_int_list, default=net.hidden_sizes,
                   help="hidden layer widths of both embedding networks")
    g.add_argument("--embed-dim", type=int, default=net.embed_dim,
                   help="embedding dimension r")
    g.add_argument("--learned-features", type=int, default=net.learned_features,
                   help="learned features q appended to the side information")
    g.add_argument("--interference-types", type=int,
                   default=net.interference_types,
                   help="number s of interference types")
    g.add_argument("--quantiles", type=_float_list, default=DEFAULT_QUANTILES,
                   help="target quantiles of the quantile-mode heads")
    g.add_argument("--activation", choices=("leaky_relu", "identity"),
                   default=net.activation,
                   help="activation of the summed interference magnitude")
    g.add_argument("--leaky-slope", type=float, default=net.leaky_slope,
                   help="negative slope of the leaky ReLU")


def _add_training(p):
    tc, lc = TrainConfig(), LossConfig()
    g = p.add_argument_group("training")
    g.add_argument("--steps", type=int, default=tc.steps, help="optimizer steps")
    g.add_argument("--batch-per-mode", type=int, default=tc.batch_per_mode,
                   help="samples per interference degree in each batch")
    g.add_argument("--eval-every", type=int, default=tc.eval_every,
                   help="steps between checkpoint evaluations")
    g.add_argument("--learning-rate", type=float, default=tc.learning_rate,
                   help="AdaMax learning rate")
    g.add_argument("--beta1", type=float, default=tc.beta1, help="AdaMax beta1")
    g.add_argument("--beta2", type=float, default=tc.beta2, help="AdaMax beta2")
    g.add_argument("--interference-weight", type=float,
                   default=lc.interference_weight,
                   help="total objective weight of observations with interference")
    g.add_argument("--objective", choices=("log_residual", "log", "proportional"),
                   default=lc.objective, help="training objective")
    g.add_argument("--interference", choices=("model", "discard", "ignore"),
                   default="model", help="how interference sets are used")
    g.add_argument("--workload-features", type=_bool, default=True,
                   help="use workload side information (off: one-hot ids)")
    g.add_argument("--platform-features", type=_bool, default=True,
                   help="use platform side information (off: one-hot ids)")


def _add_data(p, required=True):
    p.add_argument("--data", required=required, help="dataset directory")
    p.add_argument("--format", choices=FORMATS, default="canonical_jsonl",
                   help="dataset file format")


def build_parser():
    seed_default = _default_seed()
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = argparse.ArgumentParser(
        prog="runtime-oracle", formatter_class=fmt,
        description="Interference-aware runtime prediction with conformal bounds.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    syn = SyntheticConfig()
    p = sub.add_parser("synth", formatter_class=fmt,
                       help="generate a synthetic dataset with a planted model")
    _add_common(p, seed_default)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--format", choices=FORMATS, default="canonical_jsonl",
                   help="dataset file format")
    for name in ("n_workloads", "n_platforms", "d_w", "d_p", "rank",
                 "interference_types", "obs_per_mode"):
        p.add_argument("--" + name.replace("_", "-"), type=int,
                       default=getattr(syn, name), help=name.replace("_", " "))
    p.add_argument("--noise-sigma", type=float, default=syn.noise_sigma,
                   help="std-dev of the additive log-space noise")
    p.add_argument("--interference-scale", type=float,
                   default=syn.interference_scale,
                   help="relative size of the planted interference factors")
    p.add_argument("--modes", type=_int_list, default=syn.modes,
                   help="interference degrees to sample")
    p.add_argument("--leaky-slope", type=float, default=syn.leaky_slope,
                   help="negative slope of the planted activation")
    p.add_argument("--feature-noise", type=float, default=syn.feature_noise,
                   help="noise added to the synthetic side information")

    p = sub.add_parser("split", formatter_class=fmt,
                       help="write a train/calval/test split")
    _add_common(p, seed_default)
    _add_data(p)
    p.add_argument("--fraction", type=float, default=0.5,
                   help="fraction of observations used for train plus calval")
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("train", formatter_class=fmt,
                       help="fit the baseline and train a model")
    _add_common(p, seed_default)
    _add_data(p)
    p.add_argument("--split", help="split file (default: make one from --fraction)")
    p.add_argument("--fraction", type=float, default=0.5,
                   help="train fraction when no split file is given")
    p.add_argument("--mode", choices=("mean", "quantile"), default="quantile",
                   help="single squared-loss head or pinball quantile heads")
    p.add_argument("--out", required=True, help="output directory")
    _add_network(p)
    _add_training(p)

    p = sub.add_parser("calibrate", formatter_class=fmt,
                       help="conformal calibration of a quantile-mode model")
    _add_common(p, seed_default)
    _add_data(p)
    p.add_argument("--model", required=True, help="model checkpoint")
    p.add_argument("--split", required=True, help="split file")
    p.add_argument("--epsilons", type=_float_list, default=DEFAULT_EPSILONS,
                   help="miscoverage rates to calibrate")
    p.add_argument("--fallback", type=_bool, default=False,
                   help="map unseen interference degrees to the largest pool")
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser(
        "evaluate", formatter_class=fmt,
        help="test metrics of a trained model, or a full experiment grid")
    _add_common(p, seed_default)
    _add_data(p)
    p.add_argument("--model", help="evaluate this checkpoint instead of a grid")
    p.add_argument("--calibration", help="calibration table for --model")
    p.add_argument("--split", help="split file for --model")
    p.add_argument("--epsilon", type=float, action="append",
                   help="miscoverage rate to report (repeatable; default all)")
    p.add_argument("--fractions", type=_float_list,
                   default=ExperimentSpec().train_fractions,
                   help="train fractions of the experiment grid")
    p.add_argument("--replicates", type=int, default=5,
                   help="replicates per fraction")
    p.add_argument("--quantile", type=_bool, default=True,
                   help="also train quantile heads and report bounds")
    p.add_argument("--jobs", type=int, default=1, help="parallel runs")
    p.add_argument("--out", required=True, help="output directory")
    _add_network(p)
    _add_training(p)

    p = sub.add_parser("summarize", formatter_class=fmt,
                       help="plot-ready CSVs from evaluation outputs")
    _add_common(p, seed_default)
    p.add_argument("inputs", nargs="+",
                   help="evaluation output directories or reports.json files")
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("export-embeddings", formatter_class=fmt,
                       help="write workload and platform embeddings as CSV")
    _add_common(p, seed_default)
    p.add_argument("--model", required=True, help="model checkpoint")
    p.add_argument("--out", required=True, help="output directory")
    return parser


# -- Config files ------------------------------------------------------------

def _subparser(parser, command):
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            return action.choices[command]
    raise KeyError(command)


def apply_config(parser, command, path):
    """Load INI defaults for ``command``; unknown keys raise UsageError."""
    sp = _subparser(parser, command)
    cp = configparser.ConfigParser(interpolation=None)
    try:
        with open(path, encoding="utf-8") as f:
            cp.read_file(f)
    except configparser.Error as exc:
        raise ParseError(str(exc), path=path)
    actions = {a.dest: a for a in sp._actions
               if a.dest not in ("help", "config") and a.option_strings}
    known_sections = {"common", command}
    defaults = {}
    for section in cp.sections():
        if section not in known_sections:
            if section.replace("-", "_") in ("synth", "split", "train", "calibrate",
                                             "evaluate", "summarize",
                                             "export_embeddings"):
                continue
            raise UsageError(f"{path}: unknown section [{section}]")
        for key, raw in cp.items(section):
            dest = key.replace("-", "_")
            action = actions.get(dest)
            if action is None:
                if section == "common":
                    continue
                raise UsageError(f"{path}: unknown key {key!r} in [{section}]")
            try:
                value = action.type(raw) if action.type else raw
            except (argparse.ArgumentTypeError, ValueError) as exc:
                raise UsageError(f"{path}: bad value for {key}: {exc}")
            if action.choices is not None and value not in action.choices:
                raise UsageError(f"{path}: {key} must be one of {list(action.choices)}")
            if section == command or dest not in defaults:
                defaults[dest] = value
    sp.set_defaults(**defaults)


def parse_args(argv):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        apply_config(parser, args.command, args.config)
        args = parser.parse_args(argv)
    if args.seed < 0:
        raise UsageError("--seed must be non-negative")
    return args


# -- Helpers -----------------------------------------------------------------

def _resolved(args):
    return {k: (list(v) if isinstance(v, tuple) else v)
            for k, v in sorted(vars(args).items())}


def _manifest(out, args, **extra):
    path = os.path.join(out, "manifest.json")
    serialization.dump({"tool": "runtime_oracle", "version": __version__,
                        "command": args.command, "config": _resolved(args),
                        **extra}, path)


def _require_file(path, flag):
    if not path or not os.path.exists(path):
        raise UsageError(f"{flag}: no such file or directory: {path!r}")


def _load_data(args):
    _require_file(args.data, "--data")
    return load_dataset(args.data, args.format)


def _spec_from_args(args, **overrides):
    net = NetworkConfig(hidden_sizes=args.hidden_sizes, embed_dim=args.embed_dim,
                        learned_features=args.learned_features,
                        interference_types=args.interference_types,
                        quantiles=args.quantiles, leaky_slope=args.leaky_slope,
                        activation=args.activation)
    tc = TrainConfig(steps=args.steps, batch_per_mode=args.batch_per_mode,
                     eval_every=args.eval_every, learning_rate=args.learning_rate,
                     beta1=args.beta1, beta2=args.beta2, seed=args.seed)
    lc = LossConfig(interference_weight=args.interference_weight,
                    objective=args.objective)
    spec = ExperimentSpec(objective=args.objective,
                          use_workload_features=args.workload_features,
                          use_platform_features=args.platform_features,
                          interference=args.interference,
                          activation=args.activation, network=net,
                          train_config=tc, loss=lc, seed=args.seed, **overrides)
    return spec


# -- Commands ----------------------------------------------------------------

def cmd_synth(args):
    cfg = SyntheticConfig(
        n_workloads=args.n_workloads, n_platforms=args.n_platforms, d_w=args.d_w,
        d_p=args.d_p, rank=args.rank, interference_types=args.interference_types,
        noise_sigma=args.noise_sigma, obs_per_mode=args.obs_per_mode,
        modes=tuple(args.modes), interference_scale=args.interference_scale,
        leaky_slope=args.leaky_slope, feature_noise=args.feature_noise)
    try:
        cfg.validate()
    except ValidationError as exc:
        flag = str(exc).split()[0].replace("_", "-")
        raise UsageError(f"--{flag}: {exc}")
    dataset, oracle = generate_synthetic(cfg, args.seed)
    os.makedirs(args.out, exist_ok=True)
    save_dataset(dataset, args.out, args.format)
    serialization.dump(oracle.to_json(), os.path.join(args.out, "oracle.json"))
    _manifest(args.out, args, synthetic=asdict(cfg))
    print(f"wrote {len(dataset)} observations to {args.out}")


def cmd_split(args):
    dataset = _load_data(args)
    split = make_split(dataset, args.fraction, args.seed)
    path = save_split(split, args.out)
    _manifest(args.out, args)
    print(f"wrote {path}: {len(split.train_ids)} train, "
          f"{len(split.calval_ids)} calval, {len(split.test_ids)} test")


def _get_split(args, dataset):
    if args.split:
        _require_file(args.split, "--split")
        return load_split(args.split, len(dataset))
    return make_split(dataset, args.fraction, args.seed)


def cmd_train(args):
    _require_file(args.data, "--data")
    if args.split:
        _require_file(args.split, "--split")
    spec = _spec_from_args(args)
    spec.validate()
    dataset = _load_data(args)
    split = _get_split(args, dataset)
    ds = dataset.with_features(prepare_features(dataset, spec, split))
    if spec.objective == "log_residual":
        baseline = fit_baseline(ds, split.train_ids)
    else:
        baseline = zero_baseline(ds.n_workloads, ds.n_platforms)
    cfg = spec.network_config(mean_mode=args.mode == "mean")
    model = init_model(cfg, ds.features.workload_features.shape[1],
                       ds.features.platform_features.shape[1], ds.n_workloads,
                       ds.n_platforms, baseline, args.seed, ds.features)
    view, view_split = training_view(ds, spec, split)
    best, log = train(view, view_split, model, spec.train_config,
                      spec.loss_config())
    os.makedirs(args.out, exist_ok=True)
    best.save(os.path.join(args.out, "model_best.json"))
    log.final_model.save(os.path.join(args.out, "model_final.json"))
    log.save(os.path.join(args.out, "train_log.csv"))
    baseline.save(os.path.join(args.out, "baseline.json"))
    if not args.split:
        save_split(split, args.out)
    _manifest(args.out, args, network=cfg.to_json(),
              train=asdict(spec.train_config), loss=asdict(spec.loss_config()),
              best_step=log.best_step)
    print(f"best step {log.best_step}; wrote checkpoints to {args.out}")


def _load_model(path):
    _require_file(path, "--model")
    return RuntimeModel.load(path)


def cmd_calibrate(args):
    _require_file(args.data, "--data")
    model = _load_model(args.model)
    if model.config.mean_mode:
        raise UsageError("quantile-mode model required")
    dataset = _load_data(args)
    _require_file(args.split, "--split")
    split = load_split(args.split, len(dataset))
    table = build_calibration(model, dataset, split.calval_ids, args.epsilons,
                              fallback=args.fallback)
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "calibration.json")
    table.save(path)
    _manifest(args.out, args)
    print(f"wrote {path}; pools {table.pools}")


def evaluate_model(model, table, dataset, test_ids, epsilons):
    """Test metrics of a trained (and optionally calibrated) model.

    MAPE uses head 0 (the median head in quantile mode).
    """
    t = np.asarray(test_ids, dtype=np.int64)
    i, j, K = dataset.workload[t], dataset.platform[t], dataset.interference[t]
    pred = np.exp(forward_batch(model, i, j, K)[:, 0])
    bounds = {}
    if table is not None:
        bounds = {eps: predict_bounds_batch(model, table, i, j, K, eps)
                  for eps in epsilons}
    return score(MetricsReport(0.0, 0, 0), pred, bounds, dataset.runtime[t],
                 dataset.degree[t])


def cmd_evaluate(args):
    _require_file(args.data, "--data")
    if args.model:
        model = _load_model(args.model)
        dataset = _load_data(args)
        _require_file(args.split, "--split")
        split = load_split(args.split, len(dataset))
        table = None
        if args.calibration:
            _require_file(args.calibration, "--calibration")
            table = CalibrationTable.load(args.calibration)
        epsilons = args.epsilon or (table.epsilons if table else [])
        if table is not None:
            for eps in epsilons:
                if not any(abs(e - eps) < 1e-12 for e in table.epsilons):
                    raise UsageError(f"--epsilon {eps} was not calibrated")
        report = evaluate_model(model, table, dataset, split.test_ids, epsilons)
        report.fraction, report.seed = split.train_fraction, split.seed
        os.makedirs(args.out, exist_ok=True)
        save_reports([report], os.path.join(args.out, "reports.json"))
        _manifest(args.out, args)
        _print_report(report)
        return
    epsilons = tuple(args.epsilon) if args.epsilon else DEFAULT_EPSILONS
    spec = _spec_from_args(args, train_fractions=args.fractions,
                           replicates=args.replicates, quantile=args.quantile,
                           epsilons=epsilons)
    spec.validate()
    if args.jobs < 1:
        raise UsageError("--jobs must be >= 1")
    dataset = _load_data(args)
    outputs = run_experiment(dataset, spec, jobs=args.jobs)
    os.makedirs(args.out, exist_ok=True)
    save_reports(outputs, os.path.join(args.out, "reports.json"))
    summarize(outputs, args.out)
    _manifest(args.out, args, experiment=spec.to_json())
    for o in outputs:
        _print_report(o.report)


def _print_report(r):
    line = (f"fraction={r.fraction:g} replicate={r.replicate} status={r.status} "
            f"mape0={r.mape_no_interference:.4f} mapeK={r.mape_interference:.4f}")
    for eps in sorted(r.margin, reverse=True):
        line += f" margin@{eps:g}={r.margin[eps]:.4f} cov@{eps:g}={r.coverage[eps]:.3f}"
    if r.error:
        line += f" error={r.error}"
    print(line)


def cmd_summarize(args):
    reports = []
    for item in args.inputs:
        path = os.path.join(item, "reports.json") if os.path.isdir(item) else item
        _require_file(path, "inputs")
        reports.extend(load_reports(path))
    paths = summarize(reports, args.out)
    _manifest(args.out, args)
    for p in paths.values():
        print(f"wrote {p}")


def cmd_export_embeddings(args):
    model = _load_model(args.model)
    for p in export_embeddings(model, args.out):
        print(f"wrote {p}")


COMMANDS = {"synth": cmd_synth, "split": cmd_split, "train": cmd_train,
            "calibrate": cmd_calibrate, "evaluate": cmd_evaluate,
            "summarize": cmd_summarize, "export-embeddings": cmd_export_embeddings}


def main(argv=None):
    """Entry point; returns the process exit code."""
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = parse_args(argv)
        COMMANDS[args.command](args)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2
    except (ValidationError, ParseError, InfeasibleError, UnknownPoolError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"error: {msg}", file=sys.stderr)
        return 2
    except (OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
