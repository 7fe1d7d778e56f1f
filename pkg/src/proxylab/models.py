"""Dual-encoder similarity classifiers.

A model holds two MLP encoders: an image encoder over flattened inputs
and a text encoder over one-hot class tokens. Both map into a shared
embedding space and are L2-normalized, so class scores are cosine
similarities scaled by a fixed temperature. Classification is argmax
over the per-class similarities.

The class token matrix is the identity: token for class c is e_c. It is
part of the architecture, not a learned parameter.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ConfigError, ContractError, ShapeError
from .tensor import Tensor

ACTIVATIONS = ("relu", "tanh")

DEFAULT_TEMPERATURE = 10.0


@dataclass(frozen=True)
class EncoderSpec:
    """Architecture of one MLP encoder."""

    input_dim: int
    hidden_dims: tuple[int, ...]
    embed_dim: int
    activation: str = "relu"

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(d) for d in self.hidden_dims))
        dims = (self.input_dim, *self.hidden_dims, self.embed_dim)
        if any(int(d) <= 0 for d in dims):
            raise ConfigError(f"encoder dimensions must be positive, got {dims}")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation '{self.activation}', "
                              f"expected one of {ACTIVATIONS}")

    def layer_dims(self) -> list[tuple[int, int]]:
        """(fan_in, fan_out) per layer, input to output."""
        dims = [self.input_dim, *self.hidden_dims, self.embed_dim]
        return list(zip(dims[:-1], dims[1:]))

    def param_count(self) -> int:
        return sum(fi * fo + fo for fi, fo in self.layer_dims())


def _init_params(spec: EncoderSpec, rng: np.random.Generator) -> list[Tensor]:
    """Glorot-uniform weights, zero biases; one (W, b) pair per layer."""
    params: list[Tensor] = []
    for fan_in, fan_out in spec.layer_dims():
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        w = rng.uniform(-bound, bound, size=(fan_in, fan_out))
        params.append(Tensor(w))
        params.append(Tensor(np.zeros(fan_out)))
    return params


def _check_params(name: str, spec: EncoderSpec, params: list[Tensor]) -> None:
    dims = spec.layer_dims()
    if len(params) != 2 * len(dims):
        raise ShapeError(f"{name} encoder expects {2 * len(dims)} parameter tensors, "
                         f"got {len(params)}")
    for i, (fan_in, fan_out) in enumerate(dims):
        w, b = params[2 * i], params[2 * i + 1]
        if w.shape != (fan_in, fan_out):
            raise ShapeError(f"{name} layer {i} weight shape {w.shape}, "
                             f"expected {(fan_in, fan_out)}")
        if b.shape != (fan_out,):
            raise ShapeError(f"{name} layer {i} bias shape {b.shape}, expected {(fan_out,)}")


def _as_image_tensor(images, input_dim: int) -> Tensor:
    x = images if isinstance(images, Tensor) else Tensor(np.asarray(images, dtype=np.float64))
    if x.data.ndim != 2 or x.shape[1] != input_dim:
        raise ShapeError(f"expected images of shape (batch, {input_dim}), got {x.shape}")
    return x


@dataclass
class DualEncoderModel:
    image_spec: EncoderSpec
    text_spec: EncoderSpec
    num_classes: int
    theta: list[Tensor] = field(repr=False)  # image encoder parameters
    phi: list[Tensor] = field(repr=False)    # text encoder parameters
    temperature: float = DEFAULT_TEMPERATURE

    def __post_init__(self):
        if self.num_classes < 2:
            raise ConfigError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.image_spec.embed_dim != self.text_spec.embed_dim:
            raise ConfigError(f"embed dims differ: image {self.image_spec.embed_dim} "
                              f"vs text {self.text_spec.embed_dim}")
        if self.text_spec.input_dim != self.num_classes:
            raise ConfigError(f"text encoder input_dim {self.text_spec.input_dim} "
                              f"must equal num_classes {self.num_classes}")
        if not (self.temperature > 0 and np.isfinite(self.temperature)):
            raise ConfigError(f"temperature must be finite and positive, "
                              f"got {self.temperature}")
        _check_params("image", self.image_spec, self.theta)
        _check_params("text", self.text_spec, self.phi)
        self.class_tokens = np.eye(self.num_classes)

    def parameters(self) -> list[Tensor]:
        """theta then phi, layer order; stable across calls."""
        return list(self.theta) + list(self.phi)

    def param_names(self) -> list[str]:
        names = []
        for group, params, spec in (("theta", self.theta, self.image_spec),
                                    ("phi", self.phi, self.text_spec)):
            for i in range(len(spec.layer_dims())):
                names.append(f"{group}.{i}.W")
                names.append(f"{group}.{i}.b")
        return names

    def param_arrays(self) -> list[np.ndarray]:
        return [p.data.copy() for p in self.parameters()]

    def set_param_arrays(self, arrays: list[np.ndarray]) -> None:
        params = self.parameters()
        if len(arrays) != len(params):
            raise ShapeError(f"expected {len(params)} parameter arrays, got {len(arrays)}")
        for p, arr in zip(params, arrays):
            arr = np.ascontiguousarray(np.asarray(arr, dtype=np.float64))
            if arr.shape != p.shape:
                raise ShapeError(f"parameter shape {arr.shape} does not match {p.shape}")
            p.data = arr.copy()

    def clone(self) -> "DualEncoderModel":
        return DualEncoderModel(
            image_spec=self.image_spec,
            text_spec=self.text_spec,
            num_classes=self.num_classes,
            theta=[Tensor(p.data) for p in self.theta],
            phi=[Tensor(p.data) for p in self.phi],
            temperature=self.temperature,
        )

    def _encode(self, x: Tensor, params: list[Tensor], spec: EncoderSpec) -> Tensor:
        n_layers = len(spec.layer_dims())
        h = x
        for i in range(n_layers):
            w, b = params[2 * i], params[2 * i + 1]
            h = T.add(T.matmul(h, w), b)
            if i < n_layers - 1:
                h = T.relu(h) if spec.activation == "relu" else T.tanh(h)
        return T.l2_normalize_rows(h)

    def encode_image(self, images) -> Tensor:
        x = _as_image_tensor(images, self.image_spec.input_dim)
        return self._encode(x, self.theta, self.image_spec)

    def encode_text(self) -> Tensor:
        tokens = Tensor(self.class_tokens)
        return self._encode(tokens, self.phi, self.text_spec)

    def similarity_logits(self, images) -> Tensor:
        img = self.encode_image(images)
        txt = self.encode_text()
        cos = T.matmul(img, txt, transpose_b=True)
        return T.scale(cos, self.temperature)

    def predict(self, images) -> np.ndarray:
        logits = self.similarity_logits(images)
        # ties resolve to the lowest class index
        return logits.data.argmax(axis=1)


def init_model(image_spec: EncoderSpec, text_spec: EncoderSpec, num_classes: int,
               seed: int, temperature: float = DEFAULT_TEMPERATURE) -> DualEncoderModel:
    """Build a model with seeded Glorot weights; same seed, same bits."""
    if not isinstance(seed, (int, np.integer)):
        raise ContractError(f"seed must be an int, got {type(seed).__name__}")
    rng = np.random.default_rng(int(seed))
    # draw order is fixed: image encoder layers first, then text encoder
    theta = _init_params(image_spec, rng)
    phi = _init_params(text_spec, rng)
    return DualEncoderModel(image_spec=image_spec, text_spec=text_spec,
                            num_classes=num_classes, theta=theta, phi=phi,
                            temperature=temperature)
