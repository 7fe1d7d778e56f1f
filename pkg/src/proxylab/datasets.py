"""Synthetic multi-domain image datasets.

Each class has a fixed prototype vector; samples are the prototype plus
Gaussian pixel noise, clamped to [0,1]. Downstream domains reuse the same
prototypes under a distribution shift (shared jitter pattern, brightness
offset, or a fixed pixel permutation), so labels keep their meaning
across domains and zero-shot evaluation is well posed.

Prototypes come in pairs: each pair shares a well-separated center, and
the two classes in a pair differ by a small dense sign pattern of
per-pixel amplitude class_offset_scale. The coarse pair structure is easy
to learn, while the within-pair margin (about class_offset_scale * side
in units of noise_sigma) is what bounded-perturbation attacks contest.
Sign patterns sum to zero, so a global brightness offset moves samples
parallel to every pair boundary instead of across it.

Random streams are spawned per split and per domain from the run seed.
Shift magnitudes do not influence which stream a domain consumes, so two
generations that differ only in a shift magnitude draw identical noise;
tests rely on this pairing to verify shifts exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError


@dataclass(frozen=True)
class DomainShift:
    """One downstream domain, as a shift applied on top of the prototypes."""

    name: str
    prototype_jitter: float = 0.0
    brightness_offset: float = 0.0
    pixel_permutation_seed: int | None = None

    def __post_init__(self):
        if not np.isfinite(self.prototype_jitter) or self.prototype_jitter < 0:
            raise ConfigError(f"prototype_jitter must be finite and >= 0, "
                              f"got {self.prototype_jitter}")
        # offsets beyond the pixel range would saturate every pixel
        if not np.isfinite(self.brightness_offset) or abs(self.brightness_offset) >= 1.0:
            raise ConfigError(f"brightness_offset must lie in (-1, 1), "
                              f"got {self.brightness_offset}")


def default_shifts(jitter: float = 0.05, brightness: float = 0.1,
                   permutation_seed: int | None = 1234) -> tuple[DomainShift, ...]:
    return (
        DomainShift(name="jitter", prototype_jitter=jitter),
        DomainShift(name="brightness", brightness_offset=brightness),
        DomainShift(name="permuted", pixel_permutation_seed=permutation_seed),
    )


@dataclass(frozen=True)
class SyntheticSpec:
    num_classes: int = 10
    side: int = 16
    train_per_class: int = 200
    test_per_class: int = 100
    noise_sigma: float = 0.02
    class_offset_scale: float = 0.0045
    shifts: tuple[DomainShift, ...] = field(default_factory=default_shifts)

    def __post_init__(self):
        object.__setattr__(self, "shifts", tuple(self.shifts))
        if self.num_classes < 2:
            raise ConfigError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.side < 1:
            raise ConfigError(f"side must be >= 1, got {self.side}")
        if self.train_per_class < 1 or self.test_per_class < 1:
            raise ConfigError("need at least one sample per class per split")
        if not np.isfinite(self.noise_sigma) or self.noise_sigma < 0:
            raise ConfigError(f"noise_sigma must be finite and >= 0, got {self.noise_sigma}")
        if not np.isfinite(self.class_offset_scale) or self.class_offset_scale < 0:
            raise ConfigError(f"class_offset_scale must be finite and >= 0, "
                              f"got {self.class_offset_scale}")

    @property
    def input_dim(self) -> int:
        return self.side * self.side


@dataclass
class Dataset:
    domain_id: str
    features: np.ndarray
    labels: np.ndarray
    num_classes: int
    saturation: float = 0.0

    def __post_init__(self):
        self.features = np.ascontiguousarray(np.asarray(self.features, dtype=np.float64))
        self.labels = np.ascontiguousarray(np.asarray(self.labels))
        if self.features.ndim != 2:
            raise DataError(f"features must be 2-d, got shape {self.features.shape}")
        if self.labels.ndim != 1 or self.labels.shape[0] != self.features.shape[0]:
            raise DataError(f"labels shape {self.labels.shape} does not match "
                            f"{self.features.shape[0]} samples")
        if not np.issubdtype(self.labels.dtype, np.integer):
            raise DataError(f"labels must be integers, got dtype {self.labels.dtype}")
        self.labels = self.labels.astype(np.int64)
        if not np.isfinite(self.features).all():
            raise DataError("features must be finite")
        if self.features.size and (self.features.min() < 0.0 or self.features.max() > 1.0):
            raise DataError("features must lie in [0, 1]")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise DataError(f"labels must lie in [0, {self.num_classes})")

    @property
    def num_samples(self) -> int:
        return self.features.shape[0]

    @property
    def input_dim(self) -> int:
        return self.features.shape[1]

    def subset(self, n: int) -> "Dataset":
        n = min(n, self.num_samples)
        return Dataset(domain_id=self.domain_id, features=self.features[:n].copy(),
                       labels=self.labels[:n].copy(), num_classes=self.num_classes,
                       saturation=self.saturation)


def _make_prototypes(spec: SyntheticSpec, rng: np.random.Generator) -> np.ndarray:
    dim = spec.input_dim
    num_pairs, odd = divmod(spec.num_classes, 2)
    centers = rng.uniform(0.35, 0.65, size=(num_pairs + odd, dim))
    # zero-sum +-1 patterns keep brightness offsets parallel to pair boundaries
    signs = np.concatenate([np.ones(dim // 2), -np.ones(dim - dim // 2)])
    patterns = rng.permuted(np.tile(signs, (num_pairs, 1)), axis=1)

    protos = np.empty((spec.num_classes, dim))
    for k in range(num_pairs):
        protos[2 * k] = centers[k] + spec.class_offset_scale * patterns[k]
        protos[2 * k + 1] = centers[k] - spec.class_offset_scale * patterns[k]
    if odd:
        protos[-1] = centers[-1]
    return protos


def _sample_domain(domain_id: str, prototypes: np.ndarray, per_class: int,
                   sigma: float, rng: np.random.Generator,
                   shift: DomainShift | None = None) -> Dataset:
    num_classes, dim = prototypes.shape
    protos = prototypes
    brightness = 0.0
    if shift is not None:
        # jitter pattern drawn unconditionally so streams stay aligned
        # across generations that differ only in magnitudes
        pattern = rng.standard_normal(dim)
        protos = prototypes + shift.prototype_jitter * pattern
        brightness = shift.brightness_offset

    feats = np.empty((num_classes * per_class, dim))
    labels = np.empty(num_classes * per_class, dtype=np.int64)
    for c in range(num_classes):
        noise = rng.normal(0.0, sigma, size=(per_class, dim)) if sigma > 0 \
            else np.zeros((per_class, dim))
        block = slice(c * per_class, (c + 1) * per_class)
        feats[block] = protos[c] + noise + brightness
        labels[block] = c

    saturated = float(((feats < 0.0) | (feats > 1.0)).mean())
    if saturated > 0.5:
        raise ConfigError(f"domain '{domain_id}': {saturated:.0%} of pixels clamp; "
                          f"shift magnitudes are infeasible")
    feats = np.clip(feats, 0.0, 1.0)

    if shift is not None and shift.pixel_permutation_seed is not None:
        perm = np.random.default_rng(shift.pixel_permutation_seed).permutation(dim)
        feats = feats[:, perm]

    return Dataset(domain_id=domain_id, features=feats, labels=labels,
                   num_classes=num_classes, saturation=saturated)


def generate_synthetic(spec: SyntheticSpec, seed: int
                       ) -> tuple[Dataset, Dataset, list[Dataset]]:
    """(in-domain train, in-domain test, downstream test sets)."""
    root = np.random.SeedSequence(int(seed))
    proto_ss, train_ss, test_ss, *shift_ss = root.spawn(3 + len(spec.shifts))

    prototypes = _make_prototypes(spec, np.random.default_rng(proto_ss))
    train = _sample_domain("in_domain_train", prototypes, spec.train_per_class,
                           spec.noise_sigma, np.random.default_rng(train_ss))
    test = _sample_domain("in_domain_test", prototypes, spec.test_per_class,
                          spec.noise_sigma, np.random.default_rng(test_ss))
    downstream = [
        _sample_domain(shift.name, prototypes, spec.test_per_class, spec.noise_sigma,
                       np.random.default_rng(ss), shift=shift)
        for shift, ss in zip(spec.shifts, shift_ss)
    ]
    return train, test, downstream
