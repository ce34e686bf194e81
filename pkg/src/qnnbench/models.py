"""Model families behind one interface, plus per-family training defaults."""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .circuits import (
    ParameterSet,
    QccnnCircuitSpec,
    QnnArchitecture,
    ShapeError,
    architecture_from_dict,
    count_parameters,
    initial_parameters,
    is_untrainable_diagonal,
)
from .classical import BaselineDense, Cnn, CnnArchitecture, DenseNet, DenseNetArchitecture
from .datasets import DataSetVersion
from .engine import QnnEvaluator
from .quantum_conv import QccnnModel
from .training import LossKind, RunRecord, TrainConfig, loss_and_grad, train

FAMILIES = ("dense", "qnn", "cnn", "qccnn", "baseline")

# learning rate, loss, batch size (None = full batch)
FAMILY_DEFAULTS = {
    "dense": (0.005, LossKind.MSE, 32),
    "qnn": (0.05, LossKind.SE, None),
    "cnn": (0.01, LossKind.CE, 32),
    "qccnn": (0.01, LossKind.CE, 32),
    "baseline": (0.01, LossKind.CE, 32),
}


@dataclass(frozen=True)
class BaselineArchitecture:
    """The flatten-and-softmax reference model has no free hyperparameters."""

    def to_dict(self) -> dict:
        return {"schema_version": 1, "kind": "baseline"}


class QnnModel:
    """Randomized QNN with flat parameters ``[phi, theta, omega]`` and a scalar score output."""

    output_kind = "score"

    def __init__(self, arch: QnnArchitecture):
        self.arch = arch
        self.evaluator = QnnEvaluator(arch)
        self.counts = count_parameters(arch)
        self.n_params = self.counts.total

    def init_params(self, rng: np.random.Generator) -> np.ndarray:
        return initial_parameters(self.arch, rng).flat()

    def _check(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.arch.input_dim:
            raise ShapeError(f"expected inputs of dimension {self.arch.input_dim}, got {X.shape[1]}")
        return X

    def predict(self, X, flat) -> np.ndarray:
        return self.evaluator.predict(self._check(X), np.asarray(flat, dtype=float))

    def value_and_grad(self, X, flat, upstream_fn):
        return self.evaluator.value_and_grad(self._check(X), np.asarray(flat, dtype=float), upstream_fn)


def architecture_to_dict(arch) -> dict:
    return arch.to_dict()


def load_architecture(d: dict):
    kind = d.get("kind")
    if kind == "dense":
        return DenseNetArchitecture.from_dict(d)
    if kind == "cnn":
        return CnnArchitecture.from_dict(d)
    if kind == "baseline":
        return BaselineArchitecture()
    return architecture_from_dict(d)


def build_model(family: str, architecture, image_shape: tuple[int, int] | None = None):
    if family == "dense":
        return DenseNet(architecture)
    if family == "qnn":
        return QnnModel(architecture)
    if image_shape is None:
        raise ShapeError(f"family {family!r} needs the image shape")
    if family == "cnn":
        return Cnn(architecture, image_shape)
    if family == "qccnn":
        if not isinstance(architecture, QccnnCircuitSpec):
            raise TypeError("qccnn family takes a QccnnCircuitSpec")
        return QccnnModel(architecture, image_shape)
    if family == "baseline":
        return BaselineDense(image_shape)
    raise ValueError(f"unknown model family {family!r}; expected one of {FAMILIES}")


def default_train_config(family: str, seed: int, max_epochs: int = 100, **overrides) -> TrainConfig:
    lr, loss, batch = FAMILY_DEFAULTS[family]
    kwargs = {"learning_rate": lr, "loss": loss, "batch_size": batch, "max_epochs": max_epochs, "seed": seed}
    kwargs.update(overrides)
    return TrainConfig(**kwargs)


def train_model(family: str, architecture, data: DataSetVersion, config: TrainConfig,
                model_id: str = "") -> RunRecord:
    """Train one architecture on a data set version; the record carries family-specific flags."""
    model = build_model(family, architecture, data.image_shape)
    X_tr, y_tr = data.train()
    X_va, y_va = data.validation()
    record = train(model, X_tr, y_tr, X_va, y_va, config, model_id=model_id, family=family,
                   architecture=architecture.to_dict())
    record.metadata["data"] = data.name
    if family == "qnn":
        record.metadata["untrainable_diagonal"] = is_untrainable_diagonal(architecture)
    return record


def quantum_gradient(arch: QnnArchitecture, params: ParameterSet, x, y_true, loss: LossKind | str = "se",
                     ) -> ParameterSet:
    """Exact loss gradient split into the ``phi``, ``theta`` and ``omega`` groups."""
    model = QnnModel(arch)
    X = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.atleast_1d(y_true)
    _, _, g = model.value_and_grad(X, params.flat(), lambda pred: loss_and_grad(loss, pred, y))
    return ParameterSet.from_flat(arch, g)


# ----------------------------------------------------------------- checkpoints

CHECKPOINT_MAGIC = b"QNNBCKPT"


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, family: str, architecture, params, image_shape=None) -> None:
    """``magic | uint32 header length | JSON header | little-endian float64 parameters``."""
    params = np.asarray(params, dtype="<f8").ravel()
    header = json.dumps({"schema_version": 1, "family": family, "architecture": architecture.to_dict(),
                         "image_shape": list(image_shape) if image_shape else None,
                         "n_params": int(params.size)}, sort_keys=True).encode()
    Path(path).write_bytes(CHECKPOINT_MAGIC + struct.pack("<I", len(header)) + header + params.tobytes())


def load_checkpoint(path):
    """Returns ``(family, architecture, params, image_shape)``."""
    data = Path(path).read_bytes()
    m = len(CHECKPOINT_MAGIC)
    if data[:m] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: bad checkpoint magic at byte offset 0")
    if len(data) < m + 4:
        raise CheckpointError(f"{path}: truncated at byte offset {len(data)}")
    (hlen,) = struct.unpack("<I", data[m:m + 4])
    header = json.loads(data[m + 4:m + 4 + hlen])
    params = np.frombuffer(data[m + 4 + hlen:], dtype="<f8").astype(float)
    if params.size != header["n_params"]:
        raise CheckpointError(f"{path}: expected {header['n_params']} parameters, found {params.size}")
    shape = tuple(header["image_shape"]) if header["image_shape"] else None
    return header["family"], load_architecture(header["architecture"]), params, shape
