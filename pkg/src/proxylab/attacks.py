"""Projected gradient descent attacks on similarity classifiers.

pgd_attack maximizes summed cross entropy over an l-infinity ball of
radius epsilon around the clean batch, intersected with the valid pixel
range. The perturbation starts at zero, each step moves by
step_size * sign(grad), and every iterate (including the start and the
final projection) is scored; the returned batch keeps, per sample, the
iterate with the highest loss, later iterates winning ties. With
steps=1 and step_size=epsilon this reduces to FGSM.

adaptive_attack runs the same loop against the sum of target and proxy
cross entropies, so the gradient sees both models.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from . import losses
from .errors import ConfigError, DataError
from .tensor import Tensor, backward


@dataclass
class AttackConfig:
    epsilon: float
    steps: int
    step_size: float | None = None
    clamp_min: float = 0.0
    clamp_max: float = 1.0
    loss: str = "cross_entropy"
    restarts: int = 0
    restart_seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if not np.isfinite(self.epsilon):
            raise ConfigError("epsilon must be finite")
        if self.clamp_min >= self.clamp_max:
            raise ConfigError(f"clamp range [{self.clamp_min}, {self.clamp_max}] is empty")
        if not 0.0 <= self.epsilon <= self.clamp_max - self.clamp_min:
            raise ConfigError(f"epsilon must lie in [0, {self.clamp_max - self.clamp_min}], "
                              f"got {self.epsilon}")
        if int(self.steps) != self.steps or self.steps < 0:
            raise ConfigError(f"steps must be a nonnegative integer, got {self.steps}")
        if self.step_size is not None and not self.step_size > 0:
            raise ConfigError(f"step_size must be positive, got {self.step_size}")
        if self.loss != "cross_entropy":
            raise ConfigError(f"unsupported attack loss '{self.loss}'")
        if int(self.restarts) != self.restarts or self.restarts < 0:
            raise ConfigError(f"restarts must be a nonnegative integer, got {self.restarts}")

    @property
    def resolved_step_size(self) -> float:
        if self.step_size is not None:
            return float(self.step_size)
        if self.steps == 0:
            return 0.0
        return 2.5 * self.epsilon / self.steps

    def as_dict(self) -> dict:
        d = asdict(self)
        d["resolved_step_size"] = self.resolved_step_size
        return d


def _as_batch(images) -> np.ndarray:
    x = np.asarray(images.data if isinstance(images, Tensor) else images,
                   dtype=np.float64)
    if x.ndim != 2:
        raise DataError(f"attack inputs must be 2-d (batch, dim), got shape {x.shape}")
    if not np.isfinite(x).all():
        raise DataError("attack inputs must be finite")
    return x.copy()


class _BestIterate:
    """Per-sample argmax over candidate iterates; >= means later wins ties."""

    def __init__(self, n: int, dim: int):
        self.loss = np.full(n, -np.inf)
        self.x = np.zeros((n, dim))

    def consider(self, x: np.ndarray, loss: np.ndarray) -> None:
        better = loss >= self.loss
        self.loss[better] = loss[better]
        self.x[better] = x[better]


def _pgd_core(forward_backward, x0: np.ndarray, cfg: AttackConfig) -> np.ndarray:
    """Shared loop; forward_backward(x, need_grad) -> (per-sample loss, grad)."""
    eps = float(cfg.epsilon)
    if eps == 0.0:
        return x0.copy()
    lo = np.maximum(x0 - eps, cfg.clamp_min)
    hi = np.minimum(x0 + eps, cfg.clamp_max)
    alpha = cfg.resolved_step_size
    best = _BestIterate(*x0.shape)

    starts = [x0]
    for r in range(cfg.restarts):
        rng = np.random.default_rng([cfg.restart_seed, r])
        delta = rng.uniform(-eps, eps, size=x0.shape)
        starts.append(np.clip(x0 + delta, lo, hi))

    for start in starts:
        x = start
        for t in range(cfg.steps + 1):
            need_grad = t < cfg.steps
            loss, grad = forward_backward(x, need_grad)
            best.consider(x, loss)
            if not need_grad:
                break
            x = np.clip(x + alpha * np.sign(grad), lo, hi)
    return best.x


def _model_forward_backward(model, labels):
    def forward_backward(x: np.ndarray, need_grad: bool):
        xt = Tensor(x)
        logits = model.similarity_logits(xt)
        loss = losses.ce_per_sample(logits.data, labels)
        if not need_grad:
            return loss, None
        backward(losses.ce_sum(logits, labels))
        return loss, xt.grad
    return forward_backward


def pgd_attack(model, images, labels, cfg: AttackConfig) -> Tensor:
    """Adversarial batch for one model; same shape as images, inside the
    epsilon ball and the clamp range."""
    cfg.validate()
    x0 = _as_batch(images)
    y = losses._check_labels(labels, model.num_classes)
    if y.size != x0.shape[0]:
        raise DataError(f"{y.size} labels for batch of {x0.shape[0]}")
    return Tensor(_pgd_core(_model_forward_backward(model, y), x0, cfg))


def adaptive_attack(target, proxy, images, labels, cfg: AttackConfig) -> Tensor:
    """PGD against the summed cross entropy of both models, sharing one
    input leaf so the step direction mixes both gradients."""
    cfg.validate()
    if target.num_classes != proxy.num_classes:
        raise ConfigError(f"class counts differ: {target.num_classes} "
                          f"vs {proxy.num_classes}")
    if target.image_spec.input_dim != proxy.image_spec.input_dim:
        raise ConfigError(f"input dims differ: {target.image_spec.input_dim} "
                          f"vs {proxy.image_spec.input_dim}")
    x0 = _as_batch(images)
    y = losses._check_labels(labels, target.num_classes)
    if y.size != x0.shape[0]:
        raise DataError(f"{y.size} labels for batch of {x0.shape[0]}")

    def forward_backward(x: np.ndarray, need_grad: bool):
        xt = Tensor(x)
        lt = target.similarity_logits(xt)
        lp = proxy.similarity_logits(xt)
        loss = losses.ce_per_sample(lt.data, y) + losses.ce_per_sample(lp.data, y)
        if not need_grad:
            return loss, None
        total = losses.ce_sum(lt, y) + losses.ce_sum(lp, y)
        backward(total)
        return loss, xt.grad
    return Tensor(_pgd_core(forward_backward, x0, cfg))


def fgsm_attack(model, images, labels, epsilon: float,
                clamp_min: float = 0.0, clamp_max: float = 1.0) -> Tensor:
    """Single signed-gradient step; kept as an explicit reference point."""
    cfg = AttackConfig(epsilon=epsilon, steps=1, step_size=epsilon,
                       clamp_min=clamp_min, clamp_max=clamp_max)
    return pgd_attack(model, images, labels, cfg)
