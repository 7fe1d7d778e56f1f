"""Classification and distillation objectives.

Cross entropy and the KL-based transfer objectives are built from the
autodiff ops so gradients flow to the differentiated model only. The
reference (proxy or teacher) side of every KL term enters as a plain
constant array: its parameters sit outside the graph, which makes the
frozen-reference contract structural rather than a runtime flag.

KL convention: kl(A, B) = sum_j A_j * log(A_j / B_j), with B floored at
EPS_PROB before the log and 0 * log 0 taken as 0.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .errors import ConfigError, ContractError, DataError
from .tensor import Tensor

EPS_PROB = 1e-12


def softmax_distribution(logits) -> np.ndarray:
    """Row-wise softmax of a logits array or tensor, as plain numpy."""
    z = logits.data if isinstance(logits, Tensor) else np.asarray(logits, dtype=np.float64)
    if z.ndim == 1:
        z = z.reshape(1, -1)
    if z.ndim != 2:
        raise ContractError(f"logits must be 1-d or 2-d, got shape {z.shape}")
    shifted = z - z.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def log_softmax_np(logits: np.ndarray) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    shifted = z - z.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def kl_div(a, b) -> float:
    """KL divergence between two probability vectors (or row-matched batches,
    averaged). Exactly 0.0 when a == b elementwise."""
    pa = np.asarray(a, dtype=np.float64)
    pb = np.asarray(b, dtype=np.float64)
    if pa.shape != pb.shape:
        raise ContractError(f"kl_div shapes differ: {pa.shape} vs {pb.shape}")
    if pa.ndim == 1:
        pa, pb = pa.reshape(1, -1), pb.reshape(1, -1)
    if pa.ndim != 2:
        raise ContractError(f"kl_div expects vectors or batches, got shape {pa.shape}")
    if (pa < 0).any() or (pb < 0).any():
        raise ContractError("kl_div requires nonnegative entries")
    log_ratio = np.zeros_like(pa)
    pos = pa > 0
    log_ratio[pos] = np.log(pa[pos]) - np.log(np.maximum(pb[pos], EPS_PROB))
    per_row = (pa * log_ratio).sum(axis=1)
    return float(per_row.mean())


def _check_labels(labels, num_classes: int) -> np.ndarray:
    y = np.asarray(labels)
    if y.ndim != 1:
        raise DataError(f"labels must be 1-d, got shape {y.shape}")
    if not np.issubdtype(y.dtype, np.integer):
        raise DataError(f"labels must be integers, got dtype {y.dtype}")
    if y.size and (y.min() < 0 or y.max() >= num_classes):
        raise DataError(f"labels must lie in [0, {num_classes}), "
                        f"got range [{y.min()}, {y.max()}]")
    return y.astype(np.int64)


def _one_hot(labels: np.ndarray, num_classes: int) -> np.ndarray:
    out = np.zeros((labels.size, num_classes))
    out[np.arange(labels.size), labels] = 1.0
    return out


def ce_sum(logits: Tensor, labels) -> Tensor:
    """Summed cross entropy as a graph node (for attacks)."""
    y = _check_labels(labels, logits.shape[1])
    if y.size != logits.shape[0]:
        raise DataError(f"{y.size} labels for {logits.shape[0]} logits rows")
    onehot = Tensor(_one_hot(y, logits.shape[1]))
    picked = T.mul(onehot, T.log_softmax_rows(logits))
    return T.neg(T.tsum(picked))


def ce_loss(logits: Tensor, labels) -> Tensor:
    """Mean cross entropy as a graph node."""
    return T.scale(ce_sum(logits, labels), 1.0 / logits.shape[0])


def ce_per_sample(logits: np.ndarray, labels) -> np.ndarray:
    """Per-sample cross entropy, plain numpy (no graph)."""
    z = np.asarray(logits, dtype=np.float64)
    y = _check_labels(labels, z.shape[1])
    lsm = log_softmax_np(z)
    return -lsm[np.arange(y.size), y]


def _mean_kl_to_reference(logits: Tensor, ref_probs: np.ndarray) -> Tensor:
    """mean_i kl(softmax(logits_i), ref_probs_i) with the reference constant."""
    if ref_probs.shape != logits.shape:
        raise ContractError(f"reference probs shape {ref_probs.shape} does not "
                            f"match logits shape {logits.shape}")
    log_ref = Tensor(np.log(np.maximum(ref_probs, EPS_PROB)))
    p = T.softmax_rows(logits)
    diff = T.sub(T.log_softmax_rows(logits), log_ref)
    return T.scale(T.tsum(T.mul(p, diff)), 1.0 / logits.shape[0])


def _check_pair(target, proxy) -> None:
    if target.num_classes != proxy.num_classes:
        raise ConfigError(f"class counts differ: target {target.num_classes} "
                          f"vs proxy {proxy.num_classes}")
    if target.image_spec.input_dim != proxy.image_spec.input_dim:
        raise ConfigError(f"input dims differ: target {target.image_spec.input_dim} "
                          f"vs proxy {proxy.image_spec.input_dim}")


def rt_clip_loss(target, proxy, x_adv) -> Tensor:
    """Robustness transfer: align target on adversarial inputs with the
    (frozen) proxy on the same adversarial inputs."""
    _check_pair(target, proxy)
    logits = target.similarity_logits(x_adv)
    x = x_adv.data if isinstance(x_adv, Tensor) else np.asarray(x_adv, dtype=np.float64)
    ref = softmax_distribution(proxy.similarity_logits(x).data)
    return _mean_kl_to_reference(logits, ref)


def ga_loss(target, proxy, x_adv, x_clean) -> Tensor:
    """Generalization anchor: align target on adversarial inputs with the
    (frozen) proxy on the matching clean inputs."""
    _check_pair(target, proxy)
    xa = x_adv.data if isinstance(x_adv, Tensor) else np.asarray(x_adv, dtype=np.float64)
    xc = np.asarray(x_clean.data if isinstance(x_clean, Tensor) else x_clean,
                    dtype=np.float64)
    if xa.shape[0] != xc.shape[0]:
        raise DataError(f"adversarial batch {xa.shape[0]} and clean batch "
                        f"{xc.shape[0]} differ in size")
    logits = target.similarity_logits(x_adv)
    ref = softmax_distribution(proxy.similarity_logits(xc).data)
    return _mean_kl_to_reference(logits, ref)


def ard_loss(student, teacher, x_adv, labels, alpha: float = 1.0) -> Tensor:
    """Distillation on adversarial inputs:
    alpha * mean KL(student_adv, teacher_adv) + (1 - alpha) * CE(student_adv)."""
    if not 0.0 <= alpha <= 1.0:
        raise ConfigError(f"alpha must lie in [0, 1], got {alpha}")
    _check_pair(student, teacher)
    logits = student.similarity_logits(x_adv)
    x = x_adv.data if isinstance(x_adv, Tensor) else np.asarray(x_adv, dtype=np.float64)
    ref = softmax_distribution(teacher.similarity_logits(x).data)
    kl_term = _mean_kl_to_reference(logits, ref)
    if alpha == 1.0:
        return kl_term
    ce_term = ce_loss(logits, labels)
    return T.add(T.scale(kl_term, alpha), T.scale(ce_term, 1.0 - alpha))


def aft_ce_objective(model, x_adv, labels) -> Tensor:
    """Plain adversarial fine-tuning objective: CE on adversarial inputs."""
    return ce_loss(model.similarity_logits(x_adv), labels)
