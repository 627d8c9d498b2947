"""
Command-line driver for advbench.

Subcommands:
    train    train a catalog model on MNIST and save it
    attack   craft adversarial examples against one model or an ensemble
    eval     score saved adversarial examples against target models
    matrix   attack x source x target success matrix
    sweep    beta grid, iteration or epsilon sweep
    inspect  top-k confidences of clean and adversarial examples

Every run logs the fully resolved configuration. Exit codes: 0 on
success, 1 on any advbench error, 2 on usage errors.
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from . import __version__
from .config import DEFAULT_SETTINGS, RunConfig
from .config.defaults import ATTACK_METHODS, REFERENCE_RATES
from .core import bench
from .core.attacks import ATTACKS, Ensemble, perturbation_stats
from .core.container import read_archive, write_archive
from .core.data import PRNG_ALGORITHM, Dataset, load_mnist_dir, select_candidates
from .core.models import (
    CATALOG,
    Model,
    ModelSpec,
    adversarial_train,
    build,
    load_all,
    predict_topk,
    save,
    train,
)
from .errors import AdvBenchError, ConfigError, FormatError, MissingFieldError
from .utils import RunValidator, setup_logging

logger = logging.getLogger(__name__)

REQUIRED = {
    "train": ["arch", "data", "out"],
    "attack": ["method", "sources", "data", "out"],
    "eval": ["adv", "targets", "out"],
    "matrix": ["sources", "targets", "data", "out"],
    "sweep": ["sources", "targets", "data", "out"],
    "inspect": ["adv", "model"],
}


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="flat HCL settings file; flags override its values")
    parser.add_argument("--seed", type=int, help="top-level seed")
    parser.add_argument("--jobs", type=int, help="worker threads for independent cells")
    parser.add_argument("--log-file", dest="log_file", help="also log to this file at DEBUG")
    parser.add_argument("--log-level", dest="log_level", help="console log level")
    parser.add_argument("--timestamp", help="pin the report timestamp")


def _add_attack_params(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--eps", type=float, help="L-infinity radius")
    parser.add_argument("--iters", type=int, help="iterations T")
    parser.add_argument("--mu", type=float, help="momentum decay")
    parser.add_argument("--beta1", type=float, help="AI-FGM first-moment decay")
    parser.add_argument("--beta2", type=float, help="AI-FGM second-moment decay")
    parser.add_argument("--delta", type=float, help="AI-FGM stability term")


def _add_models(parser: argparse.ArgumentParser, targets: bool = True) -> None:
    parser.add_argument("--source", dest="sources", action="append", help="source model (repeatable)")
    parser.add_argument(
        "--ensemble-weights", dest="ensemble_weights",
        help="comma-separated weights fusing several sources",
    )
    if targets:
        parser.add_argument("--target", dest="targets", action="append", help="target model (repeatable)")


def _add_data(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--data", help="directory with the MNIST IDX files")
    parser.add_argument("--n", type=int, help="number of attack candidates")


def _add_report(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--out", help="report path")
    parser.add_argument("--format", choices=["csv", "json"], help="report format")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="advbench",
        description="Gradient-based adversarial attacks and a transferability benchmark.",
    )
    parser.add_argument("--version", action="version", version=f"advbench {__version__}")
    commands = parser.add_subparsers(dest="command")

    p = commands.add_parser("train", help="train and save a model")
    _add_common(p)
    p.add_argument("--arch", help=f"one of {sorted(CATALOG)}")
    p.add_argument("--data", help="directory with the MNIST IDX files")
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch", type=int)
    p.add_argument("--adversarial", action="store_const", const=True, help="FGSM adversarial training")
    p.add_argument("--adv-eps", dest="adv_eps", type=float)
    p.add_argument("--adv-frac", dest="adv_frac", type=float)
    p.add_argument("--out", help="model file (.advw)")

    p = commands.add_parser("attack", help="generate and save adversarial examples")
    _add_common(p)
    p.add_argument("--method", help=f"one of {ATTACK_METHODS}")
    _add_models(p)
    _add_data(p)
    _add_attack_params(p)
    p.add_argument("--out", help="adversarial batch file (.advw)")

    p = commands.add_parser("eval", help="score saved adversarial examples")
    _add_common(p)
    p.add_argument("--adv", help="adversarial batch file")
    p.add_argument("--target", dest="targets", action="append", help="target model (repeatable)")
    _add_report(p)

    p = commands.add_parser("matrix", help="attack x source x target success matrix")
    _add_common(p)
    p.add_argument("--attacks", help="comma-separated attack methods")
    p.add_argument("--ensemble", action="store_const", const=True, help="fuse the sources into one ensemble")
    _add_models(p)
    _add_data(p)
    _add_attack_params(p)
    _add_report(p)

    p = commands.add_parser("sweep", help="beta, iteration or epsilon sweep")
    _add_common(p)
    p.add_argument("--kind", help="beta, iterations or epsilon")
    p.add_argument("--attacks", dest="sweep_attacks", help="comma-separated attacks (iteration/epsilon sweeps)")
    p.add_argument("--beta1-values", dest="beta1_values")
    p.add_argument("--beta2-values", dest="beta2_values")
    p.add_argument("--iteration-values", dest="iteration_values")
    p.add_argument("--epsilon-values", dest="epsilon_values")
    _add_models(p)
    _add_data(p)
    _add_attack_params(p)
    _add_report(p)

    p = commands.add_parser("inspect", help="top-k confidences of stored examples")
    _add_common(p)
    p.add_argument("--adv", help="adversarial batch file")
    p.add_argument("--model", help="model to inspect with")
    p.add_argument("--k", type=int, help="classes per example")
    p.add_argument("--count", type=int, help="examples to show")

    return parser


def _source(models: List[Model], weights: Sequence[float], fuse: bool = False):
    if len(models) == 1 and not weights and not fuse:
        return models[0]
    return Ensemble(models, weights or None)


def _candidates(config: RunConfig, models: Sequence[Model]) -> Dataset:
    data_dir = RunValidator.data_dir(config.get("data"))
    test_set = load_mnist_dir(data_dir, "test")
    return select_candidates(models, test_set, config.get("n"), config.seed_for("candidates"))


def _finish_report(config: RunConfig, report: bench.EvalReport, group: str) -> None:
    if config.get("timestamp"):
        report.metadata["timestamp"] = config.get("timestamp")
    report.metadata.update(config.echo())
    bench.emit_report(report, config.get("format"), config.get("out"))
    for row in bench.summarize(report):
        reference = REFERENCE_RATES[group].get(row.attack)
        white = "-" if row.white_box is None else f"{100 * row.white_box:5.1f}%"
        black = "-" if row.black_box is None else f"{100 * row.black_box:5.1f}%"
        published = "" if reference is None else f" (published black-box {reference:.1f}%)"
        logger.info(f"{row.attack:8s} {row.source_model}: white-box {white}, black-box {black}{published}")


def cmd_train(config: RunConfig) -> None:
    arch = RunValidator.choice(config.get("arch"), sorted(CATALOG), "arch")
    data_dir = RunValidator.data_dir(config.get("data"))
    out = RunValidator.output_path(config.get("out"))

    train_set = load_mnist_dir(data_dir, "train")
    try:
        holdout = load_mnist_dir(data_dir, "test")
    except ConfigError as e:
        logger.warning(f"No held-out split: {e}")
        holdout = None

    spec = ModelSpec(arch, input_shape=tuple(train_set.image_shape))
    model = build(spec, config.seed_for("model"), name=out.stem)
    args = dict(
        epochs=config.get("epochs"),
        learning_rate=config.get("lr"),
        batch_size=config.get("batch"),
        seed=config.seed_for("shuffle"),
        holdout=holdout,
    )
    if config.get("adversarial"):
        model, _ = adversarial_train(
            model, train_set, config.get("adv_eps"), config.get("adv_frac"), **args
        )
    else:
        model, _ = train(model, train_set, **args)

    digest = save(model, out, extra=config.echo())
    logger.info(f"Saved {model!r} to {out} (digest {digest})")


def cmd_attack(config: RunConfig) -> None:
    method = RunValidator.choice(config.get("method"), sorted(ATTACKS), "method")
    sources = load_all(RunValidator.existing_files(config.get("sources"), "sources"))
    targets = load_all(RunValidator.existing_files(config.get("targets"), "targets"))
    out = RunValidator.output_path(config.get("out"))
    attack_config = config.attack_config()

    source = _source(sources, config.get("ensemble_weights"))
    candidates = _candidates(config, sources + targets)
    attack_seed = config.seed_for("attack")
    adversarial = bench.generate(method, source, candidates, attack_config, attack_seed)

    stats = perturbation_stats(adversarial, candidates.images)
    logger.info(
        f"Perturbation L-inf mean {stats['linf_mean']:.4f} max {stats['linf_max']:.4f}, "
        f"L2 mean {stats['l2_mean']:.4f} max {stats['l2_max']:.4f}"
    )
    white_box = bench.success_rate(source, adversarial, candidates.labels)
    logger.info(f"White-box success against {source.name}: {white_box:.4f}")

    meta = {
        "kind": "adversarial",
        "attack": method,
        "source": source.name,
        "source_hash": ",".join(m.digest() for m in sources),
        "seed": config.get("seed"),
        "attack_seed": attack_seed,
        "prng": PRNG_ALGORITHM,
        "dataset_hash": candidates.digest(),
        "n_examples": len(candidates),
        **{key: repr(value) for key, value in attack_config.as_dict().items()},
        **{f"stats.{key}": repr(value) for key, value in stats.items()},
        **config.echo(),
    }
    tensors = {
        "images": adversarial,
        "labels": candidates.labels.astype(np.float64),
        "originals": candidates.images,
        "indices": candidates.indices.astype(np.float64),
    }
    digest = write_archive(out, tensors, meta)
    logger.info(f"Saved {len(candidates)} adversarial examples to {out} (digest {digest})")


def _read_adversarial(path: Path):
    tensors, meta, digest = read_archive(path)
    if meta.get("kind") != "adversarial" or not {"images", "labels", "originals"} <= set(tensors):
        raise FormatError(f"{path} does not hold an adversarial batch")
    return tensors, meta, digest


def cmd_eval(config: RunConfig) -> None:
    adv_path = RunValidator.existing_file(config.get("adv"), "adv")
    targets = load_all(RunValidator.existing_files(config.get("targets"), "targets"))
    RunValidator.output_path(config.get("out"))

    tensors, meta, digest = _read_adversarial(adv_path)
    images = tensors["images"]
    labels = tensors["labels"].astype(np.int64)
    try:
        settings = dict(
            epsilon=float(meta["epsilon"]),
            iterations=int(meta["iterations"]),
            beta1=float(meta["beta1"]),
            beta2=float(meta["beta2"]),
            mu=float(meta["momentum_decay"]),
            seed=int(meta["seed"]),
        )
    except (KeyError, ValueError) as e:
        raise FormatError(f"Invalid adversarial metadata in {adv_path}: {e}")

    rows = []
    for target in targets:
        rate = bench.success_rate(target, images, labels)
        rows.append(bench.ReportRow(
            attack=meta["attack"],
            source_model=meta["source"],
            target_model=target.name,
            n_examples=len(labels),
            success_rate=rate,
            **settings,
        ))
        logger.info(f"{meta['attack']} {meta['source']} -> {target.name}: {rate:.4f}")

    metadata = {
        "timestamp": bench.now(),
        "dataset_hash": meta.get("dataset_hash", ""),
        "implementation_version": __version__,
        "prng": meta.get("prng", PRNG_ALGORITHM),
        "seed": settings["seed"],
        "n_examples": len(labels),
        "adversarial_hash": digest,
        "kind": "eval",
    }
    group = "ensemble" if meta["source"].startswith("ens(") else "single-source"
    _finish_report(config, bench.EvalReport(rows, metadata), group)


def cmd_matrix(config: RunConfig) -> None:
    sources = load_all(RunValidator.existing_files(config.get("sources"), "sources"))
    targets = load_all(RunValidator.existing_files(config.get("targets"), "targets"))
    RunValidator.output_path(config.get("out"))
    attack_config = config.attack_config()
    seed = config.seed_for("attack")
    jobs = config.get("jobs")

    if config.get("ensemble"):
        ensemble = _source(sources, config.get("ensemble_weights"), fuse=True)
        candidates = _candidates(config, sources + targets)
        report = bench.run_ensemble(
            ensemble, targets, candidates, config.get("attacks"), attack_config, seed=seed, jobs=jobs
        )
        _finish_report(config, report, "ensemble")
        return

    candidates = _candidates(config, sources + targets)
    report = bench.run_matrix(
        config.get("attacks"), sources, targets, candidates, attack_config, seed=seed, jobs=jobs
    )
    _finish_report(config, report, "single-source")


def cmd_sweep(config: RunConfig) -> None:
    sources = load_all(RunValidator.existing_files(config.get("sources"), "sources"))
    targets = load_all(RunValidator.existing_files(config.get("targets"), "targets"))
    RunValidator.output_path(config.get("out"))
    attack_config = config.attack_config()
    source = _source(sources, config.get("ensemble_weights"))
    candidates = _candidates(config, sources + targets)
    common = dict(seed=config.seed_for("attack"), jobs=config.get("jobs"))

    kind = config.get("kind")
    if kind == "beta":
        report = bench.sweep_beta(
            source, targets, candidates,
            config.get("beta1_values"), config.get("beta2_values"), attack_config, **common,
        )
    elif kind == "iterations":
        report = bench.sweep_iterations(
            source, targets, candidates, config.get("iteration_values"), attack_config,
            attacks=config.get("sweep_attacks"), **common,
        )
    else:
        report = bench.sweep_epsilon(
            source, targets, candidates, config.get("epsilon_values"), attack_config,
            attacks=config.get("sweep_attacks"), **common,
        )
    group = "ensemble" if isinstance(source, Ensemble) else "single-source"
    _finish_report(config, report, group)


def cmd_inspect(config: RunConfig) -> None:
    adv_path = RunValidator.existing_file(config.get("adv"), "adv")
    (model,) = load_all([RunValidator.existing_file(config.get("model"), "model")])
    tensors, meta, _ = _read_adversarial(adv_path)

    count = min(config.get("count"), len(tensors["labels"]))
    k = config.get("k")
    clean_top = predict_topk(model, tensors["originals"][:count], k)
    adv_top = predict_topk(model, tensors["images"][:count], k)
    for i in range(count):
        logger.info(f"Example {i} (label {int(tensors['labels'][i])}), {meta['attack']} on {meta['source']}:")
        logger.info("  clean:       " + " ".join(f"{c}:{p:.4f}" for c, p in clean_top[i]))
        logger.info("  adversarial: " + " ".join(f"{c}:{p:.4f}" for c, p in adv_top[i]))


COMMANDS: Dict[str, Callable[[RunConfig], None]] = {
    "train": cmd_train,
    "attack": cmd_attack,
    "eval": cmd_eval,
    "matrix": cmd_matrix,
    "sweep": cmd_sweep,
    "inspect": cmd_inspect,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    """
    Run one subcommand.

    Args:
        argv: Arguments without the program name; defaults to sys.argv[1:]

    Returns:
        Process exit code
    """
    parser = build_parser()
    args = parser.parse_args(argv)
    if not args.command:
        parser.print_usage(sys.stderr)
        return 2

    overrides = {key: value for key, value in vars(args).items() if key in DEFAULT_SETTINGS}
    try:
        config = RunConfig.resolve(args.config, overrides)
    except AdvBenchError as e:
        setup_logging()
        logger.error(str(e))
        return 1

    setup_logging(config.get("log_level"), config.get("log_file") or None)
    logger.info("=" * 60)
    logger.info(f"advbench {__version__}: {args.command}")
    logger.info("=" * 60)
    for line in config.dump().splitlines():
        logger.info(f"  {line}")

    try:
        config.validate(REQUIRED[args.command])
        COMMANDS[args.command](config)
    except MissingFieldError as e:
        logger.error(f"{e}; pass it as a flag or in the --config file")
        parser.print_usage(sys.stderr)
        return 2
    except AdvBenchError as e:
        logger.error(str(e))
        return 1

    logger.info(f"advbench {args.command} finished")
    return 0


if __name__ == "__main__":
    sys.exit(main())
