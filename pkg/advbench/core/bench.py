"""
Benchmark harness.

Runs (attack, source, target) cells over a candidate set and collects one
report row per cell: success matrices with white-box diagonals and
black-box off-diagonals, beta / iteration / epsilon sweeps, and ensemble
sources. Cells are independent and may be evaluated concurrently; rows are
always assembled in cell order, so results do not depend on scheduling.
"""

import csv
import itertools
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .. import __version__
from ..errors import ConfigError, ReportError
from .attacks import AttackConfig, Ensemble, get_attack, run_attack
from .data import PRNG_ALGORITHM, Dataset, correctly_classified

logger = logging.getLogger(__name__)

CSV_FIELDS = [
    "attack",
    "source_model",
    "target_model",
    "epsilon",
    "iterations",
    "beta1",
    "beta2",
    "mu",
    "seed",
    "n_examples",
    "success_rate",
]

SWEEP_ATTACKS = ("i-fgsm", "mi-fgsm", "ai-fgm")

# Attacks are run over the candidate set in chunks of this many examples.
ATTACK_CHUNK = 250


@dataclass
class ReportRow:
    """One (attack, source, target) cell."""
    attack: str
    source_model: str
    target_model: str
    epsilon: float
    iterations: int
    beta1: float
    beta2: float
    mu: float
    seed: int
    n_examples: int
    success_rate: float

    @property
    def white_box(self) -> bool:
        return self.source_model == self.target_model


@dataclass
class EvalReport:
    """Rows plus run metadata (timestamp, dataset hash, version, ...)."""
    rows: List[ReportRow] = field(default_factory=list)
    metadata: Dict[str, Any] = field(default_factory=dict)

    def merge(self, other: "EvalReport") -> "EvalReport":
        metadata = {**self.metadata, **other.metadata}
        return EvalReport(self.rows + other.rows, metadata)

    def find(self, **criteria) -> List[ReportRow]:
        return [r for r in self.rows if all(getattr(r, k) == v for k, v in criteria.items())]


_SWEEP_DOMAINS = {
    "beta1": lambda v: 0.0 < v < 1.0,
    "beta2": lambda v: 0.0 < v < 1.0,
    "iterations": lambda v: int(v) == v and v >= 1,
    "epsilon": lambda v: v >= 0.0,
}


@dataclass(frozen=True)
class SweepGrid:
    """
    Named parameter axes; points() walks their cartesian product in order.

    Raises:
        ConfigError: For an unknown parameter, an empty axis or an
            out-of-domain value
    """
    axes: Tuple[Tuple[str, Tuple[float, ...]], ...]

    def __post_init__(self):
        for name, values in self.axes:
            if name not in _SWEEP_DOMAINS:
                raise ConfigError(f"Unknown sweep parameter '{name}'")
            if not values:
                raise ConfigError(f"Sweep over '{name}' has no values")
            bad = [v for v in values if not _SWEEP_DOMAINS[name](v)]
            if bad:
                raise ConfigError(f"Sweep values {bad} are outside the domain of '{name}'")

    @classmethod
    def of(cls, **axes: Sequence[float]) -> "SweepGrid":
        return cls(tuple((name, tuple(values)) for name, values in axes.items()))

    def points(self) -> List[Dict[str, float]]:
        names = [name for name, _ in self.axes]
        return [
            {name: int(v) if name == "iterations" else float(v) for name, v in zip(names, combo)}
            for combo in itertools.product(*(v for _, v in self.axes))
        ]


def success_rate(target, adversarial: np.ndarray, labels: Sequence[int], batch_size: int = 500) -> float:
    """
    Fraction of adversarial examples target does not label correctly.

    Raises:
        ConfigError: If the batch is empty or does not fit the target
    """
    labels = np.asarray(labels)
    if len(labels) == 0:
        raise ConfigError("Cannot score an empty adversarial batch")
    if len(adversarial) != len(labels):
        raise ConfigError(f"Got {len(adversarial)} examples but {len(labels)} labels")
    wrong = 0
    for start in range(0, len(labels), batch_size):
        logits = target.logits(adversarial[start:start + batch_size])
        wrong += int((logits.argmax(axis=1) != labels[start:start + batch_size]).sum())
    return wrong / len(labels)


def generate(method: str, source, dataset: Dataset, config: AttackConfig, seed: int) -> np.ndarray:
    """Adversarial versions of every candidate, crafted in fixed-size chunks."""
    chunks = []
    for index, start in enumerate(range(0, len(dataset), ATTACK_CHUNK)):
        stop = start + ATTACK_CHUNK
        chunks.append(
            run_attack(
                method, source, dataset.images[start:stop], dataset.labels[start:stop],
                config, seed=seed + index,
            )
        )
    return np.concatenate(chunks)


def _check_candidates(targets: Sequence, dataset: Dataset) -> None:
    if len(dataset) == 0:
        raise ConfigError("The candidate set is empty")
    for target in targets:
        missed = int((~correctly_classified(target, dataset)).sum())
        if missed:
            raise ConfigError(
                f"{missed} candidates are misclassified by target '{target.name}'; "
                "select candidates against every target first"
            )


def _identity(model) -> Any:
    content = getattr(model, "digest", None)
    return content() if callable(content) else id(model)


def _check_names(models: Sequence) -> None:
    """Report rows identify models by name, so one name must mean one model."""
    seen: Dict[str, Any] = {}
    for model in models:
        identity = _identity(model)
        if seen.setdefault(model.name, identity) != identity:
            raise ConfigError(f"Two different models are both named '{model.name}'; give them distinct names")


def now() -> str:
    """Current UTC time, as stamped into report metadata."""
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _metadata(dataset: Dataset, config: AttackConfig, seed: int, **extra) -> Dict[str, Any]:
    return {
        "timestamp": now(),
        "dataset_hash": dataset.digest(),
        "implementation_version": __version__,
        "prng": PRNG_ALGORITHM,
        "seed": seed,
        "n_examples": len(dataset),
        "attack_config": config.as_dict(),
        **extra,
    }


Cell = Tuple[str, Any, AttackConfig]


def _run_cells(
    cells: Sequence[Cell],
    targets: Sequence,
    dataset: Dataset,
    seed: int,
    jobs: int = 1,
) -> List[ReportRow]:
    for method, _, _ in cells:
        get_attack(method)
    _check_names([source for _, source, _ in cells] + list(targets))

    def evaluate(cell: Cell) -> List[ReportRow]:
        method, source, config = cell
        adversarial = generate(method, source, dataset, config, seed)
        rows = []
        for target in targets:
            rate = success_rate(target, adversarial, dataset.labels)
            rows.append(ReportRow(
                attack=method,
                source_model=source.name,
                target_model=target.name,
                epsilon=config.epsilon,
                iterations=config.iterations,
                beta1=config.beta1,
                beta2=config.beta2,
                mu=config.momentum_decay,
                seed=seed,
                n_examples=len(dataset),
                success_rate=rate,
            ))
            kind = "white-box" if rows[-1].white_box else "black-box"
            logger.info(
                f"{method:8s} {source.name} -> {target.name} ({kind}) "
                f"eps={config.epsilon:g} T={config.iterations}: {rate:.4f}"
            )
        return rows

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(evaluate, cells))
    else:
        results = [evaluate(cell) for cell in cells]
    return [row for rows in results for row in rows]


def run_matrix(
    attacks: Sequence[str],
    sources: Sequence,
    targets: Sequence,
    dataset: Dataset,
    config: AttackConfig,
    seed: int = 0,
    jobs: int = 1,
) -> EvalReport:
    """
    One row per (attack, source, target); rows whose source is the target
    are white-box, the rest black-box.

    Raises:
        ConfigError: If a method is unknown or a candidate is misclassified
            by a target
    """
    _check_candidates(targets, dataset)
    cells = [(method, source, config) for method in attacks for source in sources]
    rows = _run_cells(cells, targets, dataset, seed, jobs)
    return EvalReport(rows, _metadata(dataset, config, seed, kind="matrix"))


def sweep_beta(
    source,
    targets: Sequence,
    dataset: Dataset,
    beta1_values: Sequence[float],
    beta2_values: Sequence[float],
    config: AttackConfig,
    seed: int = 0,
    jobs: int = 1,
) -> EvalReport:
    """AI-FGM over the full (beta1, beta2) grid, one row per grid point and target."""
    grid = SweepGrid.of(beta1=beta1_values, beta2=beta2_values)
    for name, values in grid.axes:
        if min(values) > 0.1 or max(values) < 0.9:
            logger.warning(f"{name} grid {values} does not reach close to both 0 and 1")
    _check_candidates(targets, dataset)
    cells = [("ai-fgm", source, replace(config, **point)) for point in grid.points()]
    rows = _run_cells(cells, targets, dataset, seed, jobs)
    return EvalReport(rows, _metadata(dataset, config, seed, kind="sweep-beta"))


def _sweep_one(
    parameter: str,
    values: Sequence[float],
    source,
    targets: Sequence,
    dataset: Dataset,
    config: AttackConfig,
    attacks: Sequence[str],
    seed: int,
    jobs: int,
) -> EvalReport:
    grid = SweepGrid.of(**{parameter: values})
    _check_candidates(targets, dataset)
    cells = [
        (method, source, replace(config, **point))
        for point in grid.points()
        for method in attacks
    ]
    rows = _run_cells(cells, targets, dataset, seed, jobs)
    return EvalReport(rows, _metadata(dataset, config, seed, kind=f"sweep-{parameter}"))


def sweep_iterations(
    source,
    targets: Sequence,
    dataset: Dataset,
    iteration_values: Sequence[int],
    config: AttackConfig,
    attacks: Sequence[str] = SWEEP_ATTACKS,
    seed: int = 0,
    jobs: int = 1,
) -> EvalReport:
    """Rows per T value per (attack, target); I-FGSM, MI-FGSM and AI-FGM by default."""
    return _sweep_one("iterations", iteration_values, source, targets, dataset, config, attacks, seed, jobs)


def sweep_epsilon(
    source,
    targets: Sequence,
    dataset: Dataset,
    epsilon_values: Sequence[float],
    config: AttackConfig,
    attacks: Sequence[str] = SWEEP_ATTACKS,
    seed: int = 0,
    jobs: int = 1,
) -> EvalReport:
    """Rows per epsilon value per (attack, target)."""
    return _sweep_one("epsilon", epsilon_values, source, targets, dataset, config, attacks, seed, jobs)


def run_ensemble(
    ensemble: Ensemble,
    holdout_targets: Sequence,
    dataset: Dataset,
    attacks: Sequence[str],
    config: AttackConfig,
    seed: int = 0,
    jobs: int = 1,
) -> EvalReport:
    """
    Attack the fused ensemble and score held-out targets.

    Raises:
        ConfigError: If a target is one of the ensemble members
    """
    _check_names(list(ensemble.members) + list(holdout_targets))
    member_names = {getattr(m, "name", None) for m in ensemble.members}
    for target in holdout_targets:
        if target in ensemble or target.name in member_names:
            raise ConfigError(f"Target '{target.name}' is a member of the ensemble")
    _check_candidates(holdout_targets, dataset)
    cells = [(method, ensemble, config) for method in attacks]
    rows = _run_cells(cells, holdout_targets, dataset, seed, jobs)
    metadata = _metadata(
        dataset, config, seed,
        kind="ensemble",
        ensemble_members=[getattr(m, "name", "?") for m in ensemble.members],
        ensemble_weights=list(ensemble.weights),
    )
    return EvalReport(rows, metadata)


def _csv_value(name: str, value: Any) -> str:
    if name == "success_rate":
        return f"{value:.4f}"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def emit_report(report: EvalReport, fmt: str, path: Union[str, Path]) -> None:
    """
    Write report as CSV (fixed header, rates to 4 decimals) or JSON
    (metadata plus rows, fields verbatim).

    Raises:
        ConfigError: For an unknown format
        ReportError: If the path is not writable
    """
    if fmt not in ("csv", "json"):
        raise ConfigError(f"Unknown report format '{fmt}', expected csv or json")
    try:
        with open(path, "w", newline="", encoding="utf-8") as f:
            if fmt == "csv":
                writer = csv.writer(f, lineterminator="\n")
                writer.writerow(CSV_FIELDS)
                for row in report.rows:
                    record = asdict(row)
                    writer.writerow([_csv_value(name, record[name]) for name in CSV_FIELDS])
            else:
                json.dump(
                    {"metadata": report.metadata, "rows": [asdict(r) for r in report.rows]},
                    f, indent=2, sort_keys=True,
                )
                f.write("\n")
    except OSError as e:
        raise ReportError(f"Cannot write report to {path}: {e}")
    logger.info(f"Wrote {len(report.rows)} report rows to {path}")


_FIELD_TYPES = {f.name: f.type for f in fields(ReportRow)}


def _coerce_row(record: Dict[str, Any]) -> ReportRow:
    values = {}
    for name in CSV_FIELDS:
        values[name] = _FIELD_TYPES[name](record[name])
    return ReportRow(**values)


def parse_report(path: Union[str, Path], fmt: Optional[str] = None) -> EvalReport:
    """
    Read a report written by emit_report; the format defaults to the suffix.

    Raises:
        ReportError: If the file is unreadable or malformed
    """
    fmt = fmt or Path(path).suffix.lstrip(".").lower()
    try:
        with open(path, "r", newline="", encoding="utf-8") as f:
            if fmt == "csv":
                reader = csv.reader(f)
                header = next(reader, None)
                if header != CSV_FIELDS:
                    raise ReportError(f"Unexpected CSV header in {path}: {header}")
                rows = [_coerce_row(dict(zip(CSV_FIELDS, line))) for line in reader if line]
                return EvalReport(rows, {})
            if fmt == "json":
                document = json.load(f)
                rows = [_coerce_row(record) for record in document["rows"]]
                return EvalReport(rows, document.get("metadata", {}))
    except (OSError, KeyError, ValueError, TypeError) as e:
        raise ReportError(f"Cannot parse report {path}: {e}")
    raise ReportError(f"Unknown report format '{fmt}'")


@dataclass
class SummaryRow:
    """Mean white-box and black-box success of one attack setting."""
    attack: str
    source_model: str
    epsilon: float
    iterations: int
    beta1: float
    beta2: float
    mu: float
    white_box: Optional[float]
    black_box: Optional[float]
    black_box_targets: int


def summarize(report: EvalReport) -> List[SummaryRow]:
    """
    Group rows by (attack, source, hyperparameters) and average over
    targets; black_box is the average over every non-source target.
    """
    groups: Dict[tuple, List[ReportRow]] = {}
    for row in report.rows:
        key = (row.attack, row.source_model, row.epsilon, row.iterations, row.beta1, row.beta2, row.mu)
        groups.setdefault(key, []).append(row)

    summary = []
    for key, rows in groups.items():
        white = [r.success_rate for r in rows if r.white_box]
        black = [r.success_rate for r in rows if not r.white_box]
        summary.append(SummaryRow(
            *key,
            white_box=float(np.mean(white)) if white else None,
            black_box=float(np.mean(black)) if black else None,
            black_box_targets=len(black),
        ))
    return summary
