"""Desk-scale experiments on transferring adversarial robustness between
heterogeneous dual-encoder classifiers through a frozen proxy."""

__version__ = "0.1.0"

from .attacks import AttackConfig, adaptive_attack, fgsm_attack, pgd_attack
from .config import RunConfig, parse_config, parse_config_text, serialize_config
from .datasets import Dataset, DomainShift, SyntheticSpec, generate_synthetic
from .evaluation import (BoundReport, EvalReport, TransferMatrix, adv_accuracy,
                         bound_check, clean_accuracy, evaluate, param_distance,
                         transfer_matrix)
from .losses import (aft_ce_objective, ard_loss, ce_loss, ga_loss, kl_div,
                     rt_clip_loss, softmax_distribution)
from .models import DualEncoderModel, EncoderSpec, init_model
from .storage import load_checkpoint, load_dataset, save_checkpoint, save_dataset
from .tensor import ComputeGraph, Tensor, apply, backward, grad_check
from .training import (EmaState, TrainConfig, TrainLog, aft_baseline, ard_baseline,
                       ema_update, generalization_pull, hpt_stage,
                       naive_rt_baseline, pretrain_clean, run_hpt_gpd, sgd_step,
                       warmup_stage)

__all__ = [
    "AttackConfig", "BoundReport", "ComputeGraph", "Dataset", "DomainShift",
    "DualEncoderModel", "EmaState", "EncoderSpec", "EvalReport", "RunConfig",
    "SyntheticSpec", "Tensor", "TrainConfig", "TrainLog", "TransferMatrix",
    "adaptive_attack", "adv_accuracy", "aft_baseline", "aft_ce_objective",
    "apply", "ard_baseline", "ard_loss", "backward", "bound_check", "ce_loss",
    "clean_accuracy", "ema_update", "evaluate", "fgsm_attack", "ga_loss",
    "generalization_pull", "generate_synthetic", "grad_check", "hpt_stage",
    "init_model", "kl_div", "load_checkpoint", "load_dataset",
    "naive_rt_baseline", "param_distance", "parse_config", "parse_config_text",
    "pgd_attack", "pretrain_clean", "rt_clip_loss", "run_hpt_gpd",
    "save_checkpoint", "save_dataset", "serialize_config",
    "softmax_distribution", "transfer_matrix", "warmup_stage",
]
