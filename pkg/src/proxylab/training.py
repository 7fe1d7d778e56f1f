"""Two-stage fine-tuning schedule and baseline trainers.

The schedule decouples adversarial fine-tuning into:

  1. warm-up: low learning rate, loss pulls the target's adversarial
     predictions toward the frozen proxy's clean predictions; an
     epoch-level EMA of the parameters tracks the trajectory.
  2. high-rate transfer: each epoch starts from a convex blend of the
     previous epoch's parameters and the warm-up EMA (the first epoch
     restarts from the pretrained weights), then trains against the
     proxy's adversarial predictions at a high learning rate.

Baselines share the same loop: plain adversarial fine-tuning on cross
entropy, single-stage proxy transfer without the schedule, and
distillation on adversarial inputs.

All trainers are bit-reproducible for a fixed (seed, config): batch
order comes from a seeded permutation per epoch, attacks are
deterministic, and parameter arithmetic is pure.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from . import losses
from .attacks import AttackConfig, pgd_attack
from .datasets import Dataset
from .errors import ConfigError, ContractError, DataError, NumericalError
from .models import DualEncoderModel
from .tensor import Tensor, backward

logger = logging.getLogger(__name__)

# fixed stream ids so stages draw independent batch orders from one seed
_STREAM = {"pretrain": 0, "warmup": 1, "hpt": 2, "aft": 3, "naive_rt": 4, "ard": 5}


def _default_train_attack() -> AttackConfig:
    return AttackConfig(epsilon=1.0 / 255.0, steps=2)


def _default_eval_attack() -> AttackConfig:
    return AttackConfig(epsilon=1.0 / 255.0, steps=10)


@dataclass
class TrainConfig:
    warmup_lr: float = 5e-5
    hpt_lr: float = 5e-2
    warmup_epochs: int = 5
    hpt_epochs: int = 5
    batch_size: int = 64
    gamma: float = 0.9
    beta: float = 0.5
    train_attack: AttackConfig = field(default_factory=_default_train_attack)
    eval_attack: AttackConfig = field(default_factory=_default_eval_attack)
    seed: int = 0
    freeze_text: bool = False
    hpt_init: str = "vanilla"  # or "warmup_ema"
    ard_alpha: float = 1.0
    log_eval_samples: int = 256

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        # lr = 0 is allowed: the degenerate no-op trainer is a test fixture
        for name in ("warmup_lr", "hpt_lr"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise ConfigError(f"{name} must be finite and >= 0, got {v}")
        for name in ("warmup_epochs", "hpt_epochs"):
            v = getattr(self, name)
            if int(v) != v or v < 0:
                raise ConfigError(f"{name} must be a nonnegative integer, got {v}")
        if int(self.batch_size) != self.batch_size or self.batch_size < 1:
            raise ConfigError(f"batch_size must be a positive integer, got {self.batch_size}")
        if not 0.0 <= self.gamma <= 1.0:
            raise ConfigError(f"gamma must lie in [0, 1], got {self.gamma}")
        if not 0.0 <= self.beta <= 1.0:
            raise ConfigError(f"beta must lie in [0, 1], got {self.beta}")
        if self.hpt_init not in ("vanilla", "warmup_ema"):
            raise ConfigError(f"hpt_init must be 'vanilla' or 'warmup_ema', "
                              f"got '{self.hpt_init}'")
        if not 0.0 <= self.ard_alpha <= 1.0:
            raise ConfigError(f"ard_alpha must lie in [0, 1], got {self.ard_alpha}")
        if int(self.log_eval_samples) != self.log_eval_samples or self.log_eval_samples < 1:
            raise ConfigError(f"log_eval_samples must be a positive integer, "
                              f"got {self.log_eval_samples}")
        self.train_attack.validate()
        self.eval_attack.validate()

    @property
    def total_epochs(self) -> int:
        return self.warmup_epochs + self.hpt_epochs


@dataclass
class TrainLogRecord:
    epoch: int
    stage: str
    loss: float
    clean_acc: float
    adv_acc: float
    param_dist: float


@dataclass
class TrainLog:
    records: list[TrainLogRecord] = field(default_factory=list)

    CSV_HEADER = "epoch,stage,loss,clean_acc,adv_acc,param_dist"

    def append(self, record: TrainLogRecord) -> None:
        if self.records and record.epoch <= self.records[-1].epoch:
            raise ContractError(f"epoch {record.epoch} does not extend epoch "
                                f"{self.records[-1].epoch}")
        self.records.append(record)

    def extend_renumbered(self, other: "TrainLog") -> None:
        offset = self.records[-1].epoch + 1 if self.records else 0
        for rec in other.records:
            self.append(replace(rec, epoch=rec.epoch + offset))

    def to_csv_text(self) -> str:
        lines = [self.CSV_HEADER]
        for r in self.records:
            lines.append(f"{r.epoch},{r.stage},{r.loss!r},{r.clean_acc!r},"
                         f"{r.adv_acc!r},{r.param_dist!r}")
        return "\n".join(lines) + "\n"

    def save_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_csv_text())


@dataclass
class EmaState:
    """Epoch-level parameter average; index 0 is the pretrained snapshot."""

    params: list[np.ndarray]
    epoch_index: int = 0

    @classmethod
    def init(cls, vanilla_params: list[np.ndarray]) -> "EmaState":
        return cls(params=[np.array(p, dtype=np.float64) for p in vanilla_params],
                   epoch_index=0)


def sgd_step(params: list[np.ndarray], grads: list[np.ndarray], lr: float
             ) -> list[np.ndarray]:
    """p <- p - lr * g, elementwise, returning new arrays."""
    if not np.isfinite(lr) or lr < 0:
        raise ConfigError(f"learning rate must be finite and >= 0, got {lr}")
    if len(params) != len(grads):
        raise ContractError(f"{len(params)} params but {len(grads)} grads")
    out = []
    for p, g in zip(params, grads):
        p = np.asarray(p, dtype=np.float64)
        if g is None:
            out.append(p.copy())
            continue
        g = np.asarray(g, dtype=np.float64)
        if g.shape != p.shape:
            raise ContractError(f"grad shape {g.shape} does not match param "
                                f"shape {p.shape}")
        if not np.isfinite(g).all():
            raise NumericalError("non-finite gradient in sgd_step")
        out.append(p - lr * g)
    return out


def _check_param_lists(a: list[np.ndarray], b: list[np.ndarray], what: str) -> None:
    if len(a) != len(b):
        raise ContractError(f"{what}: {len(a)} vs {len(b)} parameter tensors")
    for x, y in zip(a, b):
        if np.shape(x) != np.shape(y):
            raise ContractError(f"{what}: shapes {np.shape(x)} vs {np.shape(y)}")


def ema_update(state: EmaState, current: list[np.ndarray], gamma: float) -> EmaState:
    """ema_k = gamma * ema_{k-1} + (1 - gamma) * current, k incremented."""
    if not 0.0 <= gamma <= 1.0:
        raise ConfigError(f"gamma must lie in [0, 1], got {gamma}")
    _check_param_lists(state.params, current, "ema_update")
    blended = [gamma * e + (1.0 - gamma) * np.asarray(c, dtype=np.float64)
               for e, c in zip(state.params, current)]
    return EmaState(params=blended, epoch_index=state.epoch_index + 1)


def generalization_pull(prev_epoch_end: list[np.ndarray], ema: list[np.ndarray],
                        beta: float, e: int, vanilla: list[np.ndarray]
                        ) -> list[np.ndarray]:
    """Epoch-start parameters: vanilla at e = 0, else
    beta * prev_epoch_end + (1 - beta) * ema."""
    if not 0.0 <= beta <= 1.0:
        raise ConfigError(f"beta must lie in [0, 1], got {beta}")
    if e < 0:
        raise ContractError(f"epoch index must be >= 0, got {e}")
    _check_param_lists(prev_epoch_end, ema, "generalization_pull")
    _check_param_lists(prev_epoch_end, vanilla, "generalization_pull")
    if e == 0:
        return [np.array(v, dtype=np.float64) for v in vanilla]
    # endpoints are exact identities, not arithmetic approximations
    if beta == 1.0:
        return [np.array(p, dtype=np.float64) for p in prev_epoch_end]
    if beta == 0.0:
        return [np.array(m, dtype=np.float64) for m in ema]
    return [beta * np.asarray(p, dtype=np.float64) + (1.0 - beta) * np.asarray(m, dtype=np.float64)
            for p, m in zip(prev_epoch_end, ema)]


def _eval_indices(n: int, limit: int) -> np.ndarray:
    """Evenly strided subset; generated sets are class-blocked, so a prefix
    would cover only the first classes."""
    m = min(n, limit)
    return (np.arange(m, dtype=np.int64) * n) // m


def _log_metrics(model: DualEncoderModel, data: Dataset, cfg: TrainConfig,
                 vanilla_arrays: list[np.ndarray]) -> tuple[float, float, float]:
    idx = _eval_indices(data.num_samples, cfg.log_eval_samples)
    x, y = data.features[idx], data.labels[idx]
    clean = float((model.predict(x) == y).mean())
    x_adv = pgd_attack(model, x, y, cfg.eval_attack).data
    adv = float((model.predict(x_adv) == y).mean())
    flat_m = np.concatenate([p.reshape(-1) for p in model.param_arrays()])
    flat_v = np.concatenate([p.reshape(-1) for p in vanilla_arrays])
    denom = float(np.linalg.norm(flat_v))
    dist = float(np.linalg.norm(flat_m - flat_v)) / denom if denom else 0.0
    return clean, adv, dist


def _apply_grads(model: DualEncoderModel, lr: float, freeze_text: bool) -> None:
    theta_arrays = [p.data for p in model.theta]
    theta_grads = [p.grad for p in model.theta]
    new_theta = sgd_step(theta_arrays, theta_grads, lr)
    if freeze_text:
        new_phi = [p.data.copy() for p in model.phi]
    else:
        new_phi = sgd_step([p.data for p in model.phi], [p.grad for p in model.phi], lr)
    model.set_param_arrays(new_theta + new_phi)


def _check_nonempty(data: Dataset) -> None:
    if data.num_samples == 0:
        raise DataError("training requires a nonempty dataset")


def _train_epochs(model: DualEncoderModel, data: Dataset, cfg: TrainConfig, *,
                  stage: str, epochs: int, lr: float, batch_loss,
                  vanilla_arrays: list[np.ndarray], on_epoch_start=None,
                  on_epoch_end=None) -> TrainLog:
    """Shared epoch/batch loop. batch_loss(model, xb, yb, x_adv) -> Tensor."""
    _check_nonempty(data)
    rng = np.random.default_rng([cfg.seed, _STREAM[stage]])
    log = TrainLog()
    n = data.num_samples
    for epoch in range(epochs):
        if on_epoch_start is not None:
            on_epoch_start(epoch)
        order = rng.permutation(n)
        loss_total = 0.0
        for b, start in enumerate(range(0, n, cfg.batch_size)):
            idx = order[start:start + cfg.batch_size]
            xb, yb = data.features[idx], data.labels[idx]
            x_adv = pgd_attack(model, xb, yb, cfg.train_attack).data
            loss = batch_loss(model, xb, yb, x_adv)
            val = float(loss)
            if not np.isfinite(val):
                raise NumericalError(f"non-finite loss in stage '{stage}' "
                                     f"epoch {epoch} batch {b}")
            backward(loss)
            _apply_grads(model, lr, cfg.freeze_text)
            loss_total += val * idx.size
        if on_epoch_end is not None:
            on_epoch_end(epoch)
        clean, adv, dist = _log_metrics(model, data, cfg, vanilla_arrays)
        log.append(TrainLogRecord(epoch=epoch, stage=stage, loss=loss_total / n,
                                  clean_acc=clean, adv_acc=adv, param_dist=dist))
    return log


def warmup_stage(target: DualEncoderModel, proxy: DualEncoderModel, data: Dataset,
                 cfg: TrainConfig) -> tuple[DualEncoderModel, EmaState, TrainLog]:
    """Low-rate stage anchored to the proxy's clean predictions.

    Trains the passed target in place; the EMA starts at the target's
    entry parameters (index 0) and absorbs one snapshot per epoch.
    """
    cfg.validate()
    vanilla_arrays = target.param_arrays()
    ema_box = {"state": EmaState.init(vanilla_arrays)}

    def batch_loss(model, xb, yb, x_adv):
        return losses.ga_loss(model, proxy, Tensor(x_adv), xb)

    def on_epoch_end(epoch):
        ema_box["state"] = ema_update(ema_box["state"], target.param_arrays(), cfg.gamma)

    log = _train_epochs(target, data, cfg, stage="warmup", epochs=cfg.warmup_epochs,
                        lr=cfg.warmup_lr, batch_loss=batch_loss,
                        vanilla_arrays=vanilla_arrays, on_epoch_end=on_epoch_end)
    return target, ema_box["state"], log


def hpt_stage(ema: EmaState, proxy: DualEncoderModel, vanilla: DualEncoderModel,
              data: Dataset, cfg: TrainConfig) -> tuple[DualEncoderModel, TrainLog]:
    """High-rate transfer stage with per-epoch generalization pulling.

    Epoch 0 starts from the pretrained parameters (or the warm-up EMA
    when cfg.hpt_init selects it); every later epoch starts from
    beta * previous + (1 - beta) * ema. No pull after the last epoch.
    """
    cfg.validate()
    if ema.epoch_index == 0:
        logger.warning("hpt_stage: EMA at index 0 (no warm-up ran); "
                       "pulling will anchor to the pretrained parameters")
    vanilla_arrays = vanilla.param_arrays()
    target = vanilla.clone()

    def on_epoch_start(epoch):
        if epoch == 0:
            start = ema.params if cfg.hpt_init == "warmup_ema" else vanilla_arrays
            arrays = [np.array(p, dtype=np.float64) for p in start]
        else:
            arrays = generalization_pull(target.param_arrays(), ema.params,
                                         cfg.beta, epoch, vanilla_arrays)
        target.set_param_arrays(arrays)

    def batch_loss(model, xb, yb, x_adv):
        return losses.rt_clip_loss(model, proxy, Tensor(x_adv))

    log = _train_epochs(target, data, cfg, stage="hpt", epochs=cfg.hpt_epochs,
                        lr=cfg.hpt_lr, batch_loss=batch_loss,
                        vanilla_arrays=vanilla_arrays, on_epoch_start=on_epoch_start)
    return target, log


def run_hpt_gpd(cfg: TrainConfig, vanilla: DualEncoderModel, proxy: DualEncoderModel,
                data: Dataset) -> tuple[DualEncoderModel, TrainLog]:
    """Warm-up stage followed by the pulled high-rate stage."""
    cfg.validate()
    target = vanilla.clone()
    target, ema, log = warmup_stage(target, proxy, data, cfg)
    final, hpt_log = hpt_stage(ema, proxy, vanilla, data, cfg)
    log.extend_renumbered(hpt_log)
    return final, log


def aft_baseline(vanilla: DualEncoderModel, data: Dataset, cfg: TrainConfig
                 ) -> tuple[DualEncoderModel, TrainLog]:
    """Single-stage adversarial fine-tuning on cross entropy (no proxy)."""
    cfg.validate()
    model = vanilla.clone()
    vanilla_arrays = vanilla.param_arrays()

    def batch_loss(m, xb, yb, x_adv):
        return losses.aft_ce_objective(m, Tensor(x_adv), yb)

    log = _train_epochs(model, data, cfg, stage="aft", epochs=cfg.total_epochs,
                        lr=cfg.hpt_lr, batch_loss=batch_loss,
                        vanilla_arrays=vanilla_arrays)
    return model, log


def naive_rt_baseline(vanilla: DualEncoderModel, proxy: DualEncoderModel,
                      data: Dataset, cfg: TrainConfig
                      ) -> tuple[DualEncoderModel, TrainLog]:
    """Single-stage proxy transfer at the high rate: no warm-up, no EMA,
    no pulling. The schedule-free failure mode the two-stage method fixes."""
    cfg.validate()
    model = vanilla.clone()
    vanilla_arrays = vanilla.param_arrays()

    def batch_loss(m, xb, yb, x_adv):
        return losses.rt_clip_loss(m, proxy, Tensor(x_adv))

    log = _train_epochs(model, data, cfg, stage="naive_rt", epochs=cfg.total_epochs,
                        lr=cfg.hpt_lr, batch_loss=batch_loss,
                        vanilla_arrays=vanilla_arrays)
    return model, log


def ard_baseline(vanilla: DualEncoderModel, proxy: DualEncoderModel, data: Dataset,
                 cfg: TrainConfig) -> tuple[DualEncoderModel, TrainLog]:
    """Adversarial distillation from the proxy as teacher, single stage."""
    cfg.validate()
    model = vanilla.clone()
    vanilla_arrays = vanilla.param_arrays()

    def batch_loss(m, xb, yb, x_adv):
        return losses.ard_loss(m, proxy, Tensor(x_adv), yb, alpha=cfg.ard_alpha)

    log = _train_epochs(model, data, cfg, stage="ard", epochs=cfg.total_epochs,
                        lr=cfg.hpt_lr, batch_loss=batch_loss,
                        vanilla_arrays=vanilla_arrays)
    return model, log


def pretrain_clean(model: DualEncoderModel, data: Dataset, *, epochs: int, lr: float,
                   batch_size: int, seed: int, eval_attack: AttackConfig | None = None,
                   log_eval_samples: int = 256) -> tuple[DualEncoderModel, TrainLog]:
    """Standard cross-entropy training; produces the pretrained stand-ins."""
    if int(epochs) != epochs or epochs < 0:
        raise ConfigError(f"epochs must be a nonnegative integer, got {epochs}")
    cfg = TrainConfig(warmup_epochs=0, hpt_epochs=int(epochs), hpt_lr=lr,
                      batch_size=batch_size, seed=seed,
                      train_attack=AttackConfig(epsilon=0.0, steps=1),
                      eval_attack=eval_attack or _default_eval_attack(),
                      log_eval_samples=log_eval_samples)
    vanilla_arrays = model.param_arrays()

    def batch_loss(m, xb, yb, x_adv):
        return losses.ce_loss(m.similarity_logits(Tensor(xb)), yb)

    log = _train_epochs(model, data, cfg, stage="pretrain", epochs=int(epochs), lr=lr,
                        batch_loss=batch_loss, vanilla_arrays=vanilla_arrays)
    return model, log
