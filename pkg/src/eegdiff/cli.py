"""``eegdiff`` command line.

Exit codes: 0 success, 1 usage error, 2 data error, 3 run failure.
Any flag can also come from a JSON file given with ``--config``; keys are the
flag names with dashes replaced by underscores, and explicit flags win.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .data import (
    ChecksumError,
    DataError,
    import_deap,
    import_sadt,
    normalize,
    save_dataset,
    split_subject_independent,
)

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_RUN = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _csv(cast):
    def parse(text):
        try:
            return tuple(cast(v) for v in str(text).split(",") if v.strip())
        except ValueError as exc:
            raise argparse.ArgumentTypeError(str(exc)) from exc

    return parse


def _add_split_args(p):
    p.add_argument("--ratios", type=_csv(float), default=(0.70, 0.15, 0.15),
                   help="train,val,test subject ratios")
    p.add_argument("--split-seed", type=int, default=0)


def _add_sweep_args(p):
    p.add_argument("--dataset", required=True)
    p.add_argument("--output-dir", required=True)
    p.add_argument("--checkpoint")
    p.add_argument("--mix-percents", type=_csv(int), default=None)
    p.add_argument("--classifiers", type=_csv(str), default=("svm_rbf", "eegnet", "tsception"))
    p.add_argument("--seeds", type=_csv(int), default=(0,))
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--metric", choices=("accuracy", "balanced_accuracy"), default="balanced_accuracy")
    p.add_argument("--classifier-params", type=json.loads, default={},
                   help='JSON object of per-classifier hyperparameters, e.g. {"eegnet": {"epochs": 50}}')


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="eegdiff", description="Diffusion-based EEG augmentation experiments")
    parser.add_argument("--config", help="JSON file with default values for the subcommand flags")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("import-deap", help="epoch, split and normalize the preprocessed DEAP files")
    p.add_argument("source")
    p.add_argument("--target", required=True, choices=("valence", "arousal", "dominance", "liking"))
    p.add_argument("--out", required=True)
    p.add_argument("--expected-subjects", type=int)
    _add_split_args(p)

    p = sub.add_parser("import-sadt", help="pad, split and normalize the SADT file")
    p.add_argument("source")
    p.add_argument("--out", required=True)
    p.add_argument("--epoch-length", type=int, default=128)
    _add_split_args(p)

    p = sub.add_parser("train-diffusion", help="train the conditional denoiser")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--steps", type=int, default=1_000_000)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--warmup-steps", type=int, default=10_000)
    p.add_argument("--loss-p", type=int, choices=(1, 2), default=2)
    p.add_argument("--train-delta", type=float, default=0.0)
    p.add_argument("--checkpoint-every", type=int, default=10_000)
    p.add_argument("--T", type=int, default=500)
    p.add_argument("--beta-start", type=float, default=1e-4)
    p.add_argument("--beta-end", type=float, default=0.02)
    p.add_argument("--base-width", type=int, default=32)
    p.add_argument("--channel-multipliers", type=_csv(int), default=(1, 2, 4, 8))
    p.add_argument("--blocks-per-stage", type=int, default=2)
    p.add_argument("--attention-resolution", type=int, default=16)
    p.add_argument("--dropout", type=float, default=0.2)
    p.add_argument("--gamma-embed-dim", type=int, default=128)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--resume", action="store_true")

    p = sub.add_parser("generate", help="write a synthetic corpus from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--delta", type=float, default=0.01)
    p.add_argument("--percent", type=float, default=100.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--inference-steps", type=int)
    p.add_argument("--out", required=True)

    p = sub.add_parser("mix-experiment", help="real+synthetic sweep over deltas and mix ratios")
    _add_sweep_args(p)
    p.add_argument("--deltas", type=_csv(float), default=(0.0, 0.01, 0.05, 0.1))
    p.add_argument("--inference-steps", type=int)
    p.add_argument("--synthetic", type=json.loads, default={},
                   help="JSON object mapping delta to an existing synthetic dataset")

    p = sub.add_parser("noise-control", help="real+Gaussian-noise sweep")
    _add_sweep_args(p)

    p = sub.add_parser("report", help="tables of mean, ci95 and gain")
    p.add_argument("results_dir")
    p.add_argument("--metric", choices=("accuracy", "balanced_accuracy"), default="balanced_accuracy")

    p = sub.add_parser("plot", help="t-SNE, overlay or sweep figure")
    p.add_argument("results_dir")
    p.add_argument("--kind", required=True, choices=("tsne", "overlay", "sweep"))
    p.add_argument("--dataset")
    p.add_argument("--synthetic", nargs="*", default=())
    p.add_argument("--out")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--delta", type=float, default=0.01)
    p.add_argument("--n", type=int, default=500)
    p.add_argument("--metric", choices=("accuracy", "balanced_accuracy"), default="balanced_accuracy")
    return parser


def _load_config(parser, argv):
    """Apply ``--config`` values as subcommand defaults, then parse ``argv``."""
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, rest = pre.parse_known_args(argv)
    if not known.config:
        return parser.parse_args(argv)
    try:
        with open(known.config) as fh:
            cfg = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read config {known.config}: {exc}") from exc
    if not isinstance(cfg, dict):
        raise UsageError("config file must hold a JSON object")
    choices = parser._subparsers._group_actions[0].choices
    command = next((a for a in rest if a in choices), None)
    if command is None:
        return parser.parse_args(argv)
    sub = choices[command]
    known_actions = {a.dest: a for a in sub._actions}
    defaults = {}
    for key, value in cfg.items():
        dest = key.replace("-", "_")
        if dest not in known_actions:
            raise UsageError(f"unknown config key {key!r} for {command}")
        action = known_actions[dest]
        if isinstance(value, list):
            value = tuple(value)
        elif isinstance(value, str) and action.type not in (None, str, json.loads):
            value = action.type(value)
        defaults[dest] = value
        action.required = False
    sub.set_defaults(**defaults)
    return parser.parse_args(argv)


def _import(ds, args):
    split = split_subject_independent(ds, tuple(args.ratios), seed=args.split_seed)
    ds = normalize(replace(ds, split=split))
    save_dataset(ds, args.out)
    print(f"{len(ds)} epochs, subjects train/val/test = "
          f"{len(split.train)}/{len(split.val)}/{len(split.test)} -> {args.out}")


def _sweep_config(args, **extra):
    from .classifiers import ClassifierSpec
    from .experiment import DEFAULT_MIX_PERCENTS, ExperimentConfig

    specs = [ClassifierSpec(k, dict(args.classifier_params.get(k, {}))) for k in args.classifiers]
    return ExperimentConfig(
        dataset=args.dataset,
        output_dir=args.output_dir,
        checkpoint=args.checkpoint,
        mix_percents=tuple(args.mix_percents or DEFAULT_MIX_PERCENTS),
        classifiers=specs,
        seeds=tuple(args.seeds),
        k=args.k,
        metric=args.metric,
        **extra,
    )


def run(args) -> int:
    cmd = args.command
    if cmd == "import-deap":
        _import(import_deap(args.source, args.target, args.expected_subjects), args)
    elif cmd == "import-sadt":
        _import(import_sadt(args.source, args.epoch_length), args)
    elif cmd == "train-diffusion":
        from .experiment import cmd_train_diffusion
        from .training import TrainOptions
        from .unet import DenoiserConfig

        opts = TrainOptions(steps=args.steps, batch_size=args.batch_size, lr=args.lr,
                            warmup_steps=args.warmup_steps, loss_p=args.loss_p,
                            delta=args.train_delta, checkpoint_every=args.checkpoint_every)
        config = DenoiserConfig(base_width=args.base_width,
                                channel_multipliers=tuple(args.channel_multipliers),
                                blocks_per_stage=args.blocks_per_stage,
                                attention_resolution=args.attention_resolution,
                                dropout=args.dropout, gamma_embed_dim=args.gamma_embed_dim)
        _, state = cmd_train_diffusion(args.dataset, args.out, opts, config, T=args.T,
                                       beta_start=args.beta_start, beta_end=args.beta_end,
                                       seed=args.seed, resume=args.resume)
        print(f"trained to step {state.step} -> {args.out}")
    elif cmd == "generate":
        from .experiment import cmd_generate_synthetic

        syn = cmd_generate_synthetic(args.checkpoint, args.dataset, args.delta, args.percent,
                                     seed=args.seed, output_dir=args.out,
                                     inference_steps=args.inference_steps)
        print(f"{len(syn)} synthetic epochs -> {args.out}")
    elif cmd == "mix-experiment":
        from .experiment import cmd_mix_experiment

        synthetic = {float(k): v for k, v in args.synthetic.items()}
        cfg = _sweep_config(args, deltas=tuple(args.deltas), inference_steps=args.inference_steps,
                            synthetic=synthetic)
        print(f"records -> {cmd_mix_experiment(cfg)}")
        return _failures(cfg.output_dir)
    elif cmd == "noise-control":
        from .experiment import cmd_noise_control

        cfg = _sweep_config(args)
        print(f"records -> {cmd_noise_control(cfg)}")
        return _failures(cfg.output_dir)
    elif cmd == "report":
        from .report import cmd_report

        cmd_report(args.results_dir, metric=args.metric)
    elif cmd == "plot":
        from .plots import cmd_plot

        path = cmd_plot(args.results_dir, args.kind, dataset=args.dataset, synthetic=args.synthetic,
                        out=args.out, seed=args.seed, metric=args.metric, delta=args.delta, n=args.n)
        print(f"figure -> {path}")
    return EXIT_OK


def _failures(output_dir) -> int:
    path = Path(output_dir) / "failures.jsonl"
    if path.exists() and path.stat().st_size:
        n = sum(1 for _ in open(path))
        print(f"{n} cell failure(s) logged in {path}", file=sys.stderr)
        return EXIT_RUN
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = _load_config(parser, argv)
    except UsageError as exc:
        print(f"eegdiff: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"eegdiff: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return run(args)
    except (DataError, ChecksumError, FileNotFoundError) as exc:
        print(f"eegdiff: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except UsageError as exc:
        print(f"eegdiff: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001
        logging.getLogger("eegdiff").debug("run failed", exc_info=True)
        print(f"eegdiff: run failed: {exc!r}", file=sys.stderr)
        return EXIT_RUN


if __name__ == "__main__":
    sys.exit(main())
