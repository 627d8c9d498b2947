"""
The classifier zoo.

Three catalog architectures stand in for a source / target / defense trio:
"mlp-a" (two dense layers), "cnn-a" and "cnn-b" (two convolutional
networks with different widths, kernels and strides). Models are trained
with plain minibatch SGD; adversarially trained variants swap part of each
minibatch for FGSM examples crafted against the current parameters.
"""

import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from ..errors import ConfigError, FormatError, TrainingError
from .attacks import AttackConfig, fgsm
from .autodiff import (
    Conv2D,
    Dense,
    Flatten,
    Layer,
    MaxPool2x2,
    Network,
    Params,
    ReLU,
    init_params,
    loss_cross_entropy,
    loss_gradient,
    softmax,
)
from .container import digest, encode_archive, read_archive, write_archive
from .data import Dataset, make_rng

logger = logging.getLogger(__name__)


def _mlp_a(num_classes: int) -> List[Layer]:
    return [
        Flatten("flatten"),
        Dense("fc1", 128),
        ReLU("relu1"),
        Dense("fc2", num_classes),
    ]


def _cnn_a(num_classes: int) -> List[Layer]:
    return [
        Conv2D("conv1", 16, 3, stride=1, padding="same"),
        ReLU("relu1"),
        MaxPool2x2("pool1"),
        Conv2D("conv2", 32, 3, stride=1, padding="same"),
        ReLU("relu2"),
        MaxPool2x2("pool2"),
        Flatten("flatten"),
        Dense("fc", num_classes),
    ]


def _cnn_b(num_classes: int) -> List[Layer]:
    return [
        Conv2D("conv1", 12, 5, stride=1, padding="same"),
        ReLU("relu1"),
        MaxPool2x2("pool1"),
        Conv2D("conv2", 24, 3, stride=2, padding="same"),
        ReLU("relu2"),
        Flatten("flatten"),
        Dense("fc1", 64),
        ReLU("relu3"),
        Dense("fc2", num_classes),
    ]


CATALOG: Dict[str, Callable[[int], List[Layer]]] = {
    "mlp-a": _mlp_a,
    "cnn-a": _cnn_a,
    "cnn-b": _cnn_b,
}


@dataclass(frozen=True)
class ModelSpec:
    """
    Architecture description.

    Attributes:
        architecture: Catalog identifier
        input_shape: (H, W, C)
        num_classes: Number of output logits
        loss: Training / attack loss J (only "cross-entropy")
    """
    architecture: str
    input_shape: Tuple[int, int, int] = (28, 28, 1)
    num_classes: int = 10
    loss: str = "cross-entropy"

    def layers(self) -> List[Layer]:
        """
        Instantiate the catalog layers.

        Raises:
            ConfigError: For an unknown architecture, loss or degenerate shape
        """
        if self.architecture not in CATALOG:
            raise ConfigError(
                f"Unknown architecture '{self.architecture}', expected one of {sorted(CATALOG)}"
            )
        if self.loss != "cross-entropy":
            raise ConfigError(f"Unsupported loss '{self.loss}'")
        if len(self.input_shape) != 3 or min(self.input_shape) < 1 or self.num_classes < 2:
            raise ConfigError(
                f"Invalid model shape: input {self.input_shape}, {self.num_classes} classes"
            )
        return CATALOG[self.architecture](self.num_classes)


@dataclass
class TrainingInfo:
    """Training metadata stored alongside the parameters."""
    seed: int = 0
    epochs: int = 0
    learning_rate: float = 0.0
    batch_size: int = 0
    clean_accuracy: Optional[float] = None
    adversarial: bool = False
    adv_epsilon: float = 0.0
    adv_fraction: float = 0.0


@dataclass
class ModelParams:
    """Named parameter tensors (theta) plus training metadata."""
    tensors: Params
    info: TrainingInfo = field(default_factory=TrainingInfo)


class Model(Network):
    """A catalog network with its spec, training metadata and a display name."""

    def __init__(self, spec: ModelSpec, params: ModelParams, name: Optional[str] = None):
        super().__init__(spec.layers(), spec.input_shape, params.tensors)
        self.spec = spec
        self.info = params.info
        self.name = name or spec.architecture

    @property
    def model_params(self) -> ModelParams:
        return ModelParams(dict(self.params), self.info)

    def with_params(self, tensors: Params, info: Optional[TrainingInfo] = None) -> "Model":
        return Model(self.spec, ModelParams(tensors, info or self.info), self.name)

    def digest(self) -> str:
        """Content hash of the serialized model."""
        return digest(encode_archive(self.params, _model_meta(self)))

    def __repr__(self) -> str:
        return f"Model(name='{self.name}', architecture='{self.spec.architecture}')"


def build(spec: ModelSpec, seed: int, name: Optional[str] = None) -> Model:
    """Initialize a catalog model from a seeded generator."""
    layers = spec.layers()
    tensors = init_params(layers, spec.input_shape, make_rng(seed))
    return Model(spec, ModelParams(tensors, TrainingInfo(seed=seed)), name)


@dataclass
class EpochStats:
    epoch: int
    mean_loss: float
    train_accuracy: float


@dataclass
class TrainingLog:
    """Per-epoch statistics and the final held-out accuracy, if a holdout was given."""
    epochs: List[EpochStats] = field(default_factory=list)
    holdout_accuracy: Optional[float] = None


def _check_training_args(dataset: Dataset, epochs: int, learning_rate: float, batch_size: int):
    if len(dataset) == 0:
        raise ConfigError("Training dataset is empty")
    if epochs < 0:
        raise ConfigError(f"epochs must be >= 0, got {epochs}")
    if not learning_rate > 0:
        raise ConfigError(f"learning_rate must be > 0, got {learning_rate}")
    if batch_size < 1:
        raise ConfigError(f"batch_size must be >= 1, got {batch_size}")


def _fit(
    model: Model,
    dataset: Dataset,
    epochs: int,
    learning_rate: float,
    batch_size: int,
    seed: int,
    adversary: Optional[Tuple[float, float]] = None,
) -> Tuple[Params, TrainingLog]:
    rng = make_rng(seed)
    params = {key: value.copy() for key, value in model.params.items()}
    log = TrainingLog()
    n = len(dataset)

    for epoch in range(1, epochs + 1):
        order = rng.permutation(n)
        loss_sum = 0.0
        correct = 0
        for start in range(0, n, batch_size):
            batch = order[start:start + batch_size]
            xb = dataset.images[batch]
            yb = dataset.labels[batch]
            network = Network(model.layers, model.input_shape, params)

            if adversary is not None:
                epsilon, fraction = adversary
                k = math.floor(fraction * len(batch))
                if k > 0 and epsilon > 0:
                    xb = xb.copy()
                    xb[:k] = fgsm(network, xb[:k], yb[:k], AttackConfig(epsilon=epsilon, iterations=1))

            logits, trace = network.trace(xb)
            losses, mean_loss = loss_cross_entropy(logits, yb)
            if not math.isfinite(mean_loss):
                raise TrainingError("Training loss became non-finite", epoch)
            _, grads = trace.backward(network.params, loss_gradient(logits, yb, "mean"))
            for key in params:
                params[key] = params[key] - learning_rate * grads[key]
                if not np.all(np.isfinite(params[key])):
                    raise TrainingError(f"Parameter '{key}' became non-finite", epoch)

            loss_sum += float(losses.sum())
            correct += int((logits.argmax(axis=1) == yb).sum())

        stats = EpochStats(epoch, loss_sum / n, correct / n)
        log.epochs.append(stats)
        logger.info(
            f"Epoch {epoch}/{epochs}: loss={stats.mean_loss:.4f} "
            f"train_acc={stats.train_accuracy:.4f}"
        )
    return params, log


def train(
    model: Model,
    dataset: Dataset,
    epochs: int,
    learning_rate: float,
    batch_size: int,
    seed: int,
    holdout: Optional[Dataset] = None,
) -> Tuple[Model, TrainingLog]:
    """
    Minibatch SGD on the mean cross-entropy.

    Deterministic given all arguments; epochs=0 returns the parameters
    unchanged.

    Raises:
        ConfigError: On invalid arguments
        TrainingError: If the loss or parameters become non-finite
    """
    _check_training_args(dataset, epochs, learning_rate, batch_size)
    params, log = _fit(model, dataset, epochs, learning_rate, batch_size, seed)
    info = replace(
        model.info,
        epochs=model.info.epochs + epochs,
        learning_rate=learning_rate,
        batch_size=batch_size,
    )
    return _finish(model.with_params(params, info), log, holdout)


def adversarial_train(
    model: Model,
    dataset: Dataset,
    epsilon: float,
    adv_fraction: float,
    epochs: int,
    learning_rate: float,
    batch_size: int,
    seed: int,
    holdout: Optional[Dataset] = None,
) -> Tuple[Model, TrainingLog]:
    """
    Basic FGSM adversarial training.

    Each minibatch has its first floor(adv_fraction * batch) examples
    replaced by FGSM examples against the current parameters. With
    adv_fraction = 0 or epsilon = 0 the trajectory equals train().
    """
    _check_training_args(dataset, epochs, learning_rate, batch_size)
    if not 0.0 <= adv_fraction <= 1.0:
        raise ConfigError(f"adv_fraction must be in [0, 1], got {adv_fraction}")
    if epsilon < 0:
        raise ConfigError(f"epsilon must be >= 0, got {epsilon}")

    params, log = _fit(
        model, dataset, epochs, learning_rate, batch_size, seed,
        adversary=(epsilon, adv_fraction),
    )
    info = replace(
        model.info,
        epochs=model.info.epochs + epochs,
        learning_rate=learning_rate,
        batch_size=batch_size,
        adversarial=True,
        adv_epsilon=epsilon,
        adv_fraction=adv_fraction,
    )
    return _finish(model.with_params(params, info), log, holdout)


def _finish(model: Model, log: TrainingLog, holdout: Optional[Dataset]) -> Tuple[Model, TrainingLog]:
    if holdout is not None and len(holdout):
        log.holdout_accuracy = evaluate(model, holdout)
        model.info.clean_accuracy = log.holdout_accuracy
        logger.info(f"Held-out accuracy of {model.name}: {log.holdout_accuracy:.4f}")
    return model, log


def evaluate(model, dataset: Dataset, batch_size: int = 500) -> float:
    """Clean accuracy of model on dataset."""
    correct = 0
    for start in range(0, len(dataset), batch_size):
        logits = model.logits(dataset.images[start:start + batch_size])
        correct += int((logits.argmax(axis=1) == dataset.labels[start:start + batch_size]).sum())
    return correct / len(dataset)


def _batched_logits(model, x: np.ndarray) -> Tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == len(model.input_shape)
    if single:
        x = x[None]
    return model.logits(x), single


def predict(model, x: np.ndarray):
    """
    Top-1 label and its softmax confidence.

    Ties break toward the lowest class index. Returns (int, float) for a
    single example or (labels, confidences) arrays for a batch.
    """
    logits, single = _batched_logits(model, x)
    probs = softmax(logits)
    labels = probs.argmax(axis=1)
    confidences = probs[np.arange(len(labels)), labels]
    if single:
        return int(labels[0]), float(confidences[0])
    return labels, confidences


def predict_topk(model, x: np.ndarray, k: int = 10) -> List[List[Tuple[int, float]]]:
    """The k most confident (label, confidence) pairs per example, ties by lowest index."""
    logits, _ = _batched_logits(model, x)
    probs = softmax(logits)
    k = min(k, probs.shape[1])
    ranked = np.argsort(-probs, axis=1, kind="stable")[:, :k]
    return [[(int(c), float(row[c])) for c in order] for row, order in zip(probs, ranked)]


def _model_meta(model: Model) -> Dict[str, object]:
    info = model.info
    return {
        "kind": "model",
        "architecture": model.spec.architecture,
        "input_shape": ",".join(str(d) for d in model.spec.input_shape),
        "num_classes": model.spec.num_classes,
        "loss": model.spec.loss,
        "seed": info.seed,
        "epochs": info.epochs,
        "learning_rate": repr(float(info.learning_rate)),
        "batch_size": info.batch_size,
        "clean_accuracy": "" if info.clean_accuracy is None else repr(float(info.clean_accuracy)),
        "adversarial": "true" if info.adversarial else "false",
        "adv_epsilon": repr(float(info.adv_epsilon)),
        "adv_fraction": repr(float(info.adv_fraction)),
    }


def save(
    model: Model, path: Union[str, Path], extra: Optional[Dict[str, object]] = None
) -> str:
    """
    Write model to an ADVW archive; returns the archive digest.

    extra adds metadata entries (such as the run configuration) that do
    not clash with the model's own keys.
    """
    meta = _model_meta(model)
    meta.update({key: value for key, value in (extra or {}).items() if key not in meta})
    return write_archive(path, model.params, meta)


def load(path: Union[str, Path], name: Optional[str] = None) -> Model:
    """
    Read a model archive. The model is named after the file stem unless
    name is given.

    Raises:
        FormatError: If the archive is malformed or does not describe a
            catalog model with matching parameter shapes
    """
    tensors, meta, _ = read_archive(path)
    try:
        if meta.get("kind") != "model":
            raise ValueError("archive does not hold a model")
        spec = ModelSpec(
            architecture=meta["architecture"],
            input_shape=tuple(int(d) for d in meta["input_shape"].split(",")),
            num_classes=int(meta["num_classes"]),
            loss=meta["loss"],
        )
        info = TrainingInfo(
            seed=int(meta["seed"]),
            epochs=int(meta["epochs"]),
            learning_rate=float(meta["learning_rate"]),
            batch_size=int(meta["batch_size"]),
            clean_accuracy=float(meta["clean_accuracy"]) if meta["clean_accuracy"] else None,
            adversarial=meta["adversarial"] == "true",
            adv_epsilon=float(meta["adv_epsilon"]),
            adv_fraction=float(meta["adv_fraction"]),
        )
    except (KeyError, ValueError) as e:
        raise FormatError(f"Invalid model metadata in {path}: {e}")

    try:
        model = Model(spec, ModelParams(tensors, info), name or Path(path).stem)
    except ConfigError as e:
        raise FormatError(f"Model archive {path} disagrees with its architecture: {e}")
    logger.info(f"Loaded {model!r} from {path}")
    return model


def load_all(paths: Sequence[Union[str, Path]]) -> List[Model]:
    return [load(p) for p in paths]
