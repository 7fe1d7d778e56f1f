"""Accuracy measurement, cross-model transfer matrices, parameter
distance, and empirical risk-bound checks.

bound_check estimates the risk decomposition around a frozen reference
model: the target's clean-plus-adversarial risk on one side, and
target-reference discrepancy terms plus reference risks on the other.
With the l1 distance between probability vectors (a metric), both
inequalities follow from the triangle inequality per sample and so must
hold; with KL they are reported as diagnostics only.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .attacks import AttackConfig, pgd_attack
from .datasets import Dataset
from .errors import ConfigError, ContractError, DataError
from .losses import EPS_PROB, softmax_distribution
from .models import DualEncoderModel

SCHEMA_VERSION = 1

BOUND_TOL = 1e-9


@dataclass
class EvalReport:
    dataset_id: str
    clean_acc: float
    adv_acc: float
    attack: dict
    num_samples: int

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "dataset_id": self.dataset_id,
            "clean_acc": self.clean_acc,
            "adv_acc": self.adv_acc,
            "attack": self.attack,
            "num_samples": self.num_samples,
        }


@dataclass
class TransferMatrix:
    model_ids: list[str]
    matrix: list[list[float]]  # matrix[i][j]: model i on examples forged against j
    clean_accs: list[float]
    dataset_id: str
    attack: dict

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "model_ids": self.model_ids,
            "matrix": self.matrix,
            "clean_accs": self.clean_accs,
            "dataset_id": self.dataset_id,
            "attack": self.attack,
        }


@dataclass
class BoundReport:
    loss_kind: str
    eps_adv_T: float
    eps_cln_T: float
    eps_adv_TP_cln: float  # L(target on x_adv, reference on x)
    eps_adv_TP_adv: float  # L(target on x_adv, reference on x_adv)
    eps_cln_TP: float
    eps_cln_P: float
    eps_adv_P: float
    lhs: float
    rhs_theorem1: float
    rhs_theorem2: float
    holds_1: bool
    holds_2: bool
    dataset_id: str
    num_samples: int
    attack: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"schema_version": SCHEMA_VERSION, **self.__dict__}


def clean_accuracy(model: DualEncoderModel, dataset: Dataset) -> float:
    if dataset.num_samples == 0:
        raise DataError("cannot evaluate on an empty dataset")
    return float((model.predict(dataset.features) == dataset.labels).mean())


def adv_accuracy(model: DualEncoderModel, dataset: Dataset,
                 attack_cfg: AttackConfig) -> float:
    if dataset.num_samples == 0:
        raise DataError("cannot evaluate on an empty dataset")
    x_adv = pgd_attack(model, dataset.features, dataset.labels, attack_cfg).data
    return float((model.predict(x_adv) == dataset.labels).mean())


def evaluate(model: DualEncoderModel, dataset: Dataset,
             attack_cfg: AttackConfig) -> EvalReport:
    return EvalReport(
        dataset_id=dataset.domain_id,
        clean_acc=clean_accuracy(model, dataset),
        adv_acc=adv_accuracy(model, dataset, attack_cfg),
        attack=attack_cfg.as_dict(),
        num_samples=dataset.num_samples,
    )


def transfer_matrix(models: list[DualEncoderModel], dataset: Dataset,
                    attack_cfg: AttackConfig,
                    model_ids: list[str] | None = None) -> TransferMatrix:
    """M[i][j]: accuracy of model i on adversarial examples generated once
    against model j (column j shares one attack batch)."""
    if len(models) < 2:
        raise ContractError(f"transfer matrix needs >= 2 models, got {len(models)}")
    dims = {(m.image_spec.input_dim, m.num_classes) for m in models}
    if len(dims) > 1:
        raise ConfigError(f"models must share input_dim and num_classes, got {sorted(dims)}")
    if model_ids is None:
        model_ids = [f"model_{i}" for i in range(len(models))]
    if len(model_ids) != len(models):
        raise ContractError(f"{len(model_ids)} ids for {len(models)} models")
    if dataset.num_samples == 0:
        raise DataError("cannot evaluate on an empty dataset")

    n = len(models)
    matrix = [[0.0] * n for _ in range(n)]
    for j, forger in enumerate(models):
        x_adv = pgd_attack(forger, dataset.features, dataset.labels, attack_cfg).data
        for i, scorer in enumerate(models):
            matrix[i][j] = float((scorer.predict(x_adv) == dataset.labels).mean())
    clean = [clean_accuracy(m, dataset) for m in models]
    return TransferMatrix(model_ids=list(model_ids), matrix=matrix, clean_accs=clean,
                          dataset_id=dataset.domain_id, attack=attack_cfg.as_dict())


def param_distance(model_a: DualEncoderModel, model_b: DualEncoderModel) -> float:
    """Relative l2 distance ||a - b|| / ||b|| over all parameters."""
    pa, pb = model_a.parameters(), model_b.parameters()
    if len(pa) != len(pb) or any(x.shape != y.shape for x, y in zip(pa, pb)):
        raise ContractError("models have incompatible parameter shapes")
    flat_a = np.concatenate([p.data.reshape(-1) for p in pa])
    flat_b = np.concatenate([p.data.reshape(-1) for p in pb])
    denom = float(np.linalg.norm(flat_b))
    if denom == 0.0:
        raise ContractError("reference model has all-zero parameters")
    return float(np.linalg.norm(flat_a - flat_b)) / denom


def _one_hot_rows(labels: np.ndarray, num_classes: int) -> np.ndarray:
    out = np.zeros((labels.size, num_classes))
    out[np.arange(labels.size), labels] = 1.0
    return out


def _pairwise_loss(a: np.ndarray, b: np.ndarray, loss_kind: str) -> np.ndarray:
    """Per-sample L(a_i, b_i) between rows of two distribution batches."""
    if loss_kind == "l1_prob":
        return np.abs(a - b).sum(axis=1)
    if loss_kind == "kl":
        log_ratio = np.zeros_like(a)
        pos = a > 0
        log_ratio[pos] = np.log(a[pos]) - np.log(np.maximum(b[pos], EPS_PROB))
        return (a * log_ratio).sum(axis=1)
    raise ConfigError(f"loss_kind must be 'l1_prob' or 'kl', got '{loss_kind}'")


def bound_check(target: DualEncoderModel, proxy: DualEncoderModel, dataset: Dataset,
                attack_cfg: AttackConfig, loss_kind: str = "l1_prob") -> BoundReport:
    """Empirical check of the two risk decompositions.

    Adversarial examples are generated once against the target and shared
    by every term that consumes x_adv, so all expectations run over the
    same batch.
    """
    if loss_kind not in ("l1_prob", "kl"):
        raise ConfigError(f"loss_kind must be 'l1_prob' or 'kl', got '{loss_kind}'")
    if dataset.num_samples == 0:
        raise DataError("cannot evaluate on an empty dataset")
    x = dataset.features
    y = _one_hot_rows(dataset.labels, target.num_classes)
    x_adv = pgd_attack(target, x, dataset.labels, attack_cfg).data

    t_cln = softmax_distribution(target.similarity_logits(x).data)
    t_adv = softmax_distribution(target.similarity_logits(x_adv).data)
    p_cln = softmax_distribution(proxy.similarity_logits(x).data)
    p_adv = softmax_distribution(proxy.similarity_logits(x_adv).data)

    def term(a, b):
        return float(_pairwise_loss(a, b, loss_kind).mean())

    eps_adv_T = term(t_adv, y)
    eps_cln_T = term(t_cln, y)
    eps_adv_TP_cln = term(t_adv, p_cln)
    eps_adv_TP_adv = term(t_adv, p_adv)
    eps_cln_TP = term(t_cln, p_cln)
    eps_cln_P = term(p_cln, y)
    eps_adv_P = term(p_adv, y)

    lhs = eps_adv_T + eps_cln_T
    rhs1 = eps_adv_TP_cln + eps_cln_TP + 2.0 * eps_cln_P
    rhs2 = eps_adv_TP_adv + eps_cln_TP + eps_adv_P + eps_cln_P
    return BoundReport(
        loss_kind=loss_kind,
        eps_adv_T=eps_adv_T,
        eps_cln_T=eps_cln_T,
        eps_adv_TP_cln=eps_adv_TP_cln,
        eps_adv_TP_adv=eps_adv_TP_adv,
        eps_cln_TP=eps_cln_TP,
        eps_cln_P=eps_cln_P,
        eps_adv_P=eps_adv_P,
        lhs=lhs,
        rhs_theorem1=rhs1,
        rhs_theorem2=rhs2,
        holds_1=bool(lhs <= rhs1 + BOUND_TOL),
        holds_2=bool(lhs <= rhs2 + BOUND_TOL),
        dataset_id=dataset.domain_id,
        num_samples=dataset.num_samples,
        attack=attack_cfg.as_dict(),
    )
