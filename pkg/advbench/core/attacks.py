"""
Gradient-based L-infinity attacks.

Every attack maximizes the cross-entropy loss of a source model within the
epsilon ball around the clean input and the valid pixel range:

- fgsm:     one signed-gradient step of size epsilon
- i_fgsm:   T signed steps of epsilon / T, projected after each step
- pgd:      i_fgsm from a uniform random start inside the ball
- mi_fgsm:  signed steps along an accumulated, L1-normalized gradient
- ni_fgsm:  mi_fgsm with the gradient taken at a Nesterov lookahead point
- ai_fgm:   Adam-style first/second moments, a precomputed decaying step
            schedule that spends a total L2 budget of epsilon * sqrt(N),
            and L2-normalized update directions

Sources are anything with logits() and input_gradient(): a single model or
an Ensemble whose logits are a weighted sum of its members' logits.
All norms are taken per example over all of its pixels.
"""

import logging
import math
from dataclasses import asdict, dataclass, replace
from typing import Any, Callable, Dict, Optional, Sequence, Tuple

import numpy as np

from ..errors import ConfigError
from .autodiff import Network, as_tensor, check_labels, loss_gradient
from .data import make_rng

logger = logging.getLogger(__name__)

IterateCallback = Callable[[int, np.ndarray], None]


@dataclass(frozen=True)
class AttackConfig:
    """
    Attack hyperparameters.

    Attributes:
        epsilon: L-infinity radius, in pixel units of the [low, high] domain
        iterations: Number of iterations T
        momentum_decay: Momentum decay factor mu (MI-FGSM, NI-FGSM)
        beta1: First-moment decay (AI-FGM)
        beta2: Second-moment decay (AI-FGM)
        delta: Denominator stability term (AI-FGM)
        random_init: Start from a uniform random point in the ball
        pixel_bounds: (low, high) valid pixel range
    """
    epsilon: float = 0.3
    iterations: int = 10
    momentum_decay: float = 1.0
    beta1: float = 0.99
    beta2: float = 0.999
    delta: float = 1e-8
    random_init: bool = False
    pixel_bounds: Tuple[float, float] = (0.0, 1.0)

    def __post_init__(self):
        low, high = self.pixel_bounds
        if not low < high:
            raise ConfigError(f"pixel_bounds must satisfy low < high, got {self.pixel_bounds}")
        if not 0.0 <= self.epsilon <= high - low:
            raise ConfigError(f"epsilon must be in [0, {high - low}], got {self.epsilon}")
        if int(self.iterations) != self.iterations or self.iterations < 1:
            raise ConfigError(f"iterations must be a positive integer, got {self.iterations}")
        if self.momentum_decay < 0:
            raise ConfigError(f"momentum_decay must be >= 0, got {self.momentum_decay}")
        if not 0.0 < self.beta1 < 1.0:
            raise ConfigError(f"beta1 must be in (0, 1), got {self.beta1}")
        if not 0.0 < self.beta2 < 1.0:
            raise ConfigError(f"beta2 must be in (0, 1), got {self.beta2}")
        if not self.delta > 0:
            raise ConfigError(f"delta must be > 0, got {self.delta}")

    def as_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass
class MomentumState:
    """Accumulated L1-normalized gradient g."""
    g: np.ndarray

    @classmethod
    def zeros(cls, shape: Tuple[int, ...]) -> "MomentumState":
        return cls(np.zeros(shape))

    def accumulate(self, grad: np.ndarray, decay: float) -> np.ndarray:
        self.g = decay * self.g + l1_normalize(grad)
        return self.g


@dataclass
class AdamState:
    """
    Moments and schedule of one AI-FGM run.

    Attributes:
        m: First moment
        v: Second moment (elementwise, >= 0)
        s: Latest update direction m / (delta + sqrt(v))
        t: Number of updates applied
        alpha: Total L2 budget epsilon * sqrt(N)
        schedule: Step sizes alpha_0..alpha_{T-1}, summing to alpha
    """
    m: np.ndarray
    v: np.ndarray
    s: np.ndarray
    t: int
    alpha: float
    schedule: np.ndarray

    @classmethod
    def start(cls, shape: Tuple[int, ...], config: AttackConfig) -> "AdamState":
        n = int(np.prod(shape[1:]))
        alpha = config.epsilon * math.sqrt(n)
        return cls(
            m=np.zeros(shape),
            v=np.zeros(shape),
            s=np.zeros(shape),
            t=0,
            alpha=alpha,
            schedule=step_schedule(config.iterations, config.beta1, config.beta2, alpha),
        )

    def update(self, g: np.ndarray, beta1: float, beta2: float, delta: float) -> np.ndarray:
        self.m = beta1 * self.m + (1.0 - beta1) * g
        self.v = beta2 * self.v + (1.0 - beta2) * (g * g)
        self.s = self.m / (delta + np.sqrt(self.v))
        self.t += 1
        return self.s


def _example_sums(values: np.ndarray, ndim: int) -> np.ndarray:
    sums = values.reshape(values.shape[0], -1).sum(axis=1)
    return sums.reshape((values.shape[0],) + (1,) * (ndim - 1))


def l1_normalize(grad: np.ndarray) -> np.ndarray:
    """grad / ||grad||_1 per example; an all-zero example stays zero."""
    norms = _example_sums(np.abs(grad), grad.ndim)
    out = np.zeros_like(grad)
    np.divide(grad, norms, out=out, where=norms > 0)
    return out


def l2_normalize(values: np.ndarray) -> np.ndarray:
    """values / ||values||_2 per example; an all-zero example stays zero."""
    norms = np.sqrt(_example_sums(values * values, values.ndim))
    out = np.zeros_like(values)
    np.divide(values, norms, out=out, where=norms > 0)
    return out


def clip_to_ball(
    x_adv: np.ndarray,
    x: np.ndarray,
    epsilon: float,
    pixel_bounds: Tuple[float, float] = (0.0, 1.0),
) -> np.ndarray:
    """Elementwise min(max(x_adv, x - eps, low), x + eps, high)."""
    low, high = pixel_bounds
    lower = np.maximum(np.maximum(x_adv, x - epsilon), low)
    return np.minimum(np.minimum(lower, x + epsilon), high)


def step_schedule(iterations: int, beta1: float, beta2: float, alpha: float) -> np.ndarray:
    """
    Decaying step sizes alpha_t = alpha * w_t / sum(w), with
    w_t = sqrt(1 - beta2^(t+1)) / (1 - beta1^(t+1)) for t = 0..T-1.

    Raises:
        ConfigError: On invalid arguments
    """
    if iterations < 1:
        raise ConfigError(f"iterations must be >= 1, got {iterations}")
    if not (0.0 < beta1 < 1.0 and 0.0 < beta2 < 1.0):
        raise ConfigError(f"beta1, beta2 must be in (0, 1), got {beta1}, {beta2}")
    if alpha < 0:
        raise ConfigError(f"alpha must be >= 0, got {alpha}")
    powers = np.arange(1, iterations + 1, dtype=np.float64)
    weights = np.sqrt(1.0 - beta2 ** powers) / (1.0 - beta1 ** powers)
    return alpha * (weights / weights.sum())


def _prepare(source, images, labels) -> Tuple[np.ndarray, np.ndarray, bool]:
    x = as_tensor(images)
    single = x.ndim == len(source.input_shape)
    if single:
        x = x[None]
        labels = [labels]
    y = check_labels(np.asarray(labels).reshape(-1), source.num_classes, x.shape[0])
    return x, y, single


def _done(x_adv: np.ndarray, single: bool) -> np.ndarray:
    return x_adv[0] if single else x_adv


def _random_start(x: np.ndarray, config: AttackConfig, seed: int) -> np.ndarray:
    noise = make_rng(seed).uniform(-config.epsilon, config.epsilon, size=x.shape)
    return clip_to_ball(x + noise, x, config.epsilon, config.pixel_bounds)


def clean(source, images, labels, config: AttackConfig) -> np.ndarray:
    """Identity attack; the clean baseline."""
    x, _, single = _prepare(source, images, labels)
    return _done(x.copy(), single)


def fgsm(source, images, labels, config: AttackConfig) -> np.ndarray:
    """x* = clip(x + epsilon * sign(grad)), with sign(0) = 0."""
    x, y, single = _prepare(source, images, labels)
    grad = source.input_gradient(x, y, reduction="sum")
    x_adv = clip_to_ball(x + config.epsilon * np.sign(grad), x, config.epsilon, config.pixel_bounds)
    return _done(x_adv, single)


def i_fgsm(
    source,
    images,
    labels,
    config: AttackConfig,
    seed: int = 0,
    callback: Optional[IterateCallback] = None,
) -> np.ndarray:
    """T signed steps of epsilon / T; starts at a random point when config.random_init."""
    x, y, single = _prepare(source, images, labels)
    step = config.epsilon / config.iterations
    x_adv = _random_start(x, config, seed) if config.random_init else x.copy()
    for t in range(config.iterations):
        grad = source.input_gradient(x_adv, y, reduction="sum")
        x_adv = clip_to_ball(x_adv + step * np.sign(grad), x, config.epsilon, config.pixel_bounds)
        if callback is not None:
            callback(t, x_adv)
    return _done(x_adv, single)


def pgd(
    source,
    images,
    labels,
    config: AttackConfig,
    seed: int = 0,
    callback: Optional[IterateCallback] = None,
) -> np.ndarray:
    """I-FGSM from a uniform random start U(-epsilon, epsilon), deterministic given seed."""
    if not config.random_init:
        config = replace(config, random_init=True)
    return i_fgsm(source, images, labels, config, seed=seed, callback=callback)


def mi_fgsm(
    source,
    images,
    labels,
    config: AttackConfig,
    callback: Optional[IterateCallback] = None,
) -> np.ndarray:
    """Signed steps along g <- mu * g + grad / ||grad||_1."""
    x, y, single = _prepare(source, images, labels)
    step = config.epsilon / config.iterations
    momentum = MomentumState.zeros(x.shape)
    x_adv = x.copy()
    for t in range(config.iterations):
        grad = source.input_gradient(x_adv, y, reduction="sum")
        g = momentum.accumulate(grad, config.momentum_decay)
        x_adv = clip_to_ball(x_adv + step * np.sign(g), x, config.epsilon, config.pixel_bounds)
        if callback is not None:
            callback(t, x_adv)
    return _done(x_adv, single)


def ni_fgsm(
    source,
    images,
    labels,
    config: AttackConfig,
    callback: Optional[IterateCallback] = None,
) -> np.ndarray:
    """MI-FGSM with the gradient taken at the lookahead x + (epsilon / T) * mu * g."""
    x, y, single = _prepare(source, images, labels)
    step = config.epsilon / config.iterations
    momentum = MomentumState.zeros(x.shape)
    x_adv = x.copy()
    for t in range(config.iterations):
        lookahead = x_adv + step * config.momentum_decay * momentum.g
        grad = source.input_gradient(lookahead, y, reduction="sum")
        g = momentum.accumulate(grad, config.momentum_decay)
        x_adv = clip_to_ball(x_adv + step * np.sign(g), x, config.epsilon, config.pixel_bounds)
        if callback is not None:
            callback(t, x_adv)
    return _done(x_adv, single)


def ai_fgm(
    source,
    images,
    labels,
    config: AttackConfig,
    callback: Optional[IterateCallback] = None,
) -> np.ndarray:
    """
    Adam iterative fast gradient method.

    Per iteration t:
        g = grad / ||grad||_1
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        s = m / (delta + sqrt(v))
        x* = clip(x* + alpha_t * s / ||s||_2)

    A zero gradient gives g = 0 and a zero s skips the additive update;
    the projection is applied either way.
    """
    x, y, single = _prepare(source, images, labels)
    state = AdamState.start(x.shape, config)
    x_adv = x.copy()
    for t in range(config.iterations):
        grad = source.input_gradient(x_adv, y, reduction="sum")
        s = state.update(l1_normalize(grad), config.beta1, config.beta2, config.delta)
        x_adv = x_adv + state.schedule[t] * l2_normalize(s)
        x_adv = clip_to_ball(x_adv, x, config.epsilon, config.pixel_bounds)
        if callback is not None:
            callback(t, x_adv)
        logger.debug(f"ai-fgm step {t}: alpha_t={state.schedule[t]:.6g}")
    return _done(x_adv, single)


class Ensemble:
    """
    Logit fusion l(x) = sum_k w_k * l_k(x) over member models.

    Usable as an attack source anywhere a single model is: the input
    gradient is that of the cross-entropy of the fused logits.
    """

    def __init__(
        self,
        members: Sequence[Network],
        weights: Optional[Sequence[float]] = None,
        name: Optional[str] = None,
    ):
        if not members:
            raise ConfigError("An ensemble needs at least one member")
        members = list(members)
        if weights is None:
            weights = [1.0 / len(members)] * len(members)
        weights = [float(w) for w in weights]
        if len(weights) != len(members):
            raise ConfigError(f"Got {len(weights)} ensemble weights for {len(members)} members")
        if any(w < 0 for w in weights):
            raise ConfigError(f"Ensemble weights must be non-negative, got {weights}")
        if abs(math.fsum(weights) - 1.0) > 1e-12:
            raise ConfigError(f"Ensemble weights must sum to 1, got {math.fsum(weights)}")

        first = members[0]
        for member in members[1:]:
            if member.input_shape != first.input_shape or member.num_classes != first.num_classes:
                raise ConfigError(
                    f"Ensemble member '{getattr(member, 'name', member)}' has input "
                    f"{member.input_shape} / {member.num_classes} classes, expected "
                    f"{first.input_shape} / {first.num_classes}"
                )

        self.members = members
        self.weights = weights
        self.input_shape = first.input_shape
        self.num_classes = first.num_classes
        self.name = name or "ens(" + "+".join(getattr(m, "name", "?") for m in members) + ")"

    def __contains__(self, model) -> bool:
        return any(model is m for m in self.members)

    def logits(self, x: np.ndarray) -> np.ndarray:
        fused = self.weights[0] * self.members[0].logits(x)
        for weight, member in zip(self.weights[1:], self.members[1:]):
            fused = fused + weight * member.logits(x)
        return fused

    def input_gradient(self, x: np.ndarray, labels: Any, reduction: str = "sum") -> np.ndarray:
        traces = [member.trace(x) for member in self.members]
        fused = self.weights[0] * traces[0][0]
        for weight, (logits, _) in zip(self.weights[1:], traces[1:]):
            fused = fused + weight * logits
        dlogits = loss_gradient(fused, labels, reduction)

        grad = None
        for weight, member, (_, trace) in zip(self.weights, self.members, traces):
            dx, _ = trace.backward(member.params, weight * dlogits, need_params=False)
            grad = dx if grad is None else grad + dx
        return grad

    def __repr__(self) -> str:
        return f"Ensemble(name='{self.name}', weights={self.weights})"


def ensemble_fuse(ensemble: Ensemble, x: np.ndarray) -> np.ndarray:
    """Fused logits of the ensemble."""
    return ensemble.logits(as_tensor(x))


def ensemble_grad(ensemble: Ensemble, x: np.ndarray, labels: Any) -> np.ndarray:
    """Input gradient of the mean cross-entropy of the fused logits."""
    return ensemble.input_gradient(as_tensor(x), labels, reduction="mean")


ATTACKS: Dict[str, Callable[..., np.ndarray]] = {
    "clean": clean,
    "fgsm": fgsm,
    "i-fgsm": i_fgsm,
    "pgd": pgd,
    "mi-fgsm": mi_fgsm,
    "ni-fgsm": ni_fgsm,
    "ai-fgm": ai_fgm,
}

_SEEDED = {"i-fgsm", "pgd"}


def get_attack(method: str) -> Callable[..., np.ndarray]:
    """
    Raises:
        ConfigError: For an unknown method name
    """
    if method not in ATTACKS:
        raise ConfigError(f"Unknown attack method '{method}', expected one of {sorted(ATTACKS)}")
    return ATTACKS[method]


def run_attack(method: str, source, images, labels, config: AttackConfig, seed: int = 0) -> np.ndarray:
    """Dispatch by kebab-case method name; the seed only reaches randomized attacks."""
    attack = get_attack(method)
    if method in _SEEDED:
        return attack(source, images, labels, config, seed=seed)
    return attack(source, images, labels, config)


def perturbation_stats(x_adv: np.ndarray, x: np.ndarray) -> Dict[str, float]:
    """Mean and max per-example L-infinity and L2 perturbation norms; all zero for an empty batch."""
    if len(x) == 0:
        return {"linf_mean": 0.0, "linf_max": 0.0, "l2_mean": 0.0, "l2_max": 0.0}
    delta = (np.asarray(x_adv) - np.asarray(x)).reshape(len(x), -1)
    linf = np.abs(delta).max(axis=1) if delta.size else np.zeros(len(x))
    l2 = np.sqrt((delta * delta).sum(axis=1))
    return {
        "linf_mean": float(linf.mean()),
        "linf_max": float(linf.max()),
        "l2_mean": float(l2.mean()),
        "l2_max": float(l2.max()),
    }
