"""Losses, accuracy, Adam, and the single-run training loop shared by every model family."""
from __future__ import annotations

import enum
import time
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

from .circuits import ShapeError

PROB_FLOOR = 1e-12


class LossKind(str, enum.Enum):
    MSE = "mse"
    SE = "se"
    CE = "ce"


def _as_labels(labels) -> np.ndarray:
    return np.asarray(labels).astype(int).ravel()


def loss(kind: LossKind | str, predictions, labels) -> float:
    return loss_and_grad(kind, predictions, labels)[0]


def loss_and_grad(kind: LossKind | str, predictions, labels):
    """Loss value and its gradient with respect to ``predictions``.

    Cross-entropy takes rows of class probabilities; probabilities below
    ``PROB_FLOOR`` are clamped for the log and contribute zero gradient.
    """
    kind = LossKind(kind)
    y = _as_labels(labels)
    p = np.asarray(predictions, dtype=float)
    if kind is LossKind.CE:
        if p.ndim != 2 or p.shape != (y.shape[0], 2):
            raise ShapeError("cross-entropy needs one two-class probability row per label")
        if np.any(p < 0) or np.any(np.abs(p.sum(axis=1) - 1) > 1e-6):
            raise ValueError("cross-entropy rows must be probability distributions")
        pt = p[np.arange(len(y)), y]
        clamped = pt < PROB_FLOOR
        value = float(-np.sum(np.log(np.where(clamped, PROB_FLOOR, pt))))
        grad = np.zeros_like(p)
        grad[np.arange(len(y)), y] = np.where(clamped, 0.0, -1.0 / np.where(clamped, 1.0, pt))
        return value, grad
    p = p.ravel()
    if p.shape != y.shape:
        raise ShapeError(f"{p.shape[0]} predictions for {y.shape[0]} labels")
    r = p - y
    if kind is LossKind.SE:
        return float(np.sum(r**2)), 2.0 * r
    return float(np.mean(r**2)), 2.0 * r / len(y)


def count_floor_clamps(predictions, labels) -> int:
    p = np.asarray(predictions, dtype=float)
    y = _as_labels(labels)
    return int(np.sum(p[np.arange(len(y)), y] < PROB_FLOOR))


def predicted_classes(predictions) -> np.ndarray:
    p = np.asarray(predictions, dtype=float)
    if p.ndim == 2:
        return np.argmax(p, axis=1)  # first maximum wins, so ties go to class 0
    return (p >= 0.5).astype(int)


def accuracy(predictions, labels) -> float:
    y = _as_labels(labels)
    if y.size == 0:
        return 0.0
    return float(np.mean(predicted_classes(predictions) == y))


# ------------------------------------------------------------------------ Adam


@dataclass
class AdamState:
    learning_rate: float
    n_params: int
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    first_moment: np.ndarray = None
    second_moment: np.ndarray = None

    def __post_init__(self):
        if self.first_moment is None:
            self.first_moment = np.zeros(self.n_params)
        if self.second_moment is None:
            self.second_moment = np.zeros(self.n_params)


def adam_step(state: AdamState, params: np.ndarray, gradient: np.ndarray):
    """One bias-corrected Adam update. Returns ``(new_params, state)``; ``state`` is updated in place."""
    params = np.asarray(params, dtype=float)
    gradient = np.asarray(gradient, dtype=float)
    if params.shape != gradient.shape or params.shape != state.first_moment.shape:
        raise ShapeError(f"shape mismatch: params {params.shape}, gradient {gradient.shape}, "
                         f"state {state.first_moment.shape}")
    state.step_count += 1
    state.first_moment = state.beta1 * state.first_moment + (1 - state.beta1) * gradient
    state.second_moment = state.beta2 * state.second_moment + (1 - state.beta2) * gradient**2
    m_hat = state.first_moment / (1 - state.beta1**state.step_count)
    v_hat = state.second_moment / (1 - state.beta2**state.step_count)
    return params - state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon), state


# -------------------------------------------------------------------- training


@dataclass
class TrainConfig:
    learning_rate: float
    loss: LossKind
    max_epochs: int = 100
    batch_size: int | None = None  # None means full batch
    seed: int = 0
    early_stop_patience: int | None = None
    early_stop_tol: float = 1e-6

    def __post_init__(self):
        self.loss = LossKind(self.loss)
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be at least 1")


@dataclass
class RunRecord:
    model_id: str
    family: str
    architecture: dict
    seed: int
    train_losses: list[float]
    val_accuracies: list[float]
    initial_params: list[float]
    final_params: list[float]
    final_val_accuracy: float
    status: str = "ok"
    diagnostic: str = ""
    metadata: dict = field(default_factory=dict)
    duration_s: float = 0.0

    def to_dict(self, include_timing: bool = False) -> dict:
        d = {
            "schema_version": 1,
            "model_id": self.model_id,
            "family": self.family,
            "architecture": self.architecture,
            "seed": self.seed,
            "status": self.status,
            "diagnostic": self.diagnostic,
            "final_val_accuracy": self.final_val_accuracy,
            "train_losses": self.train_losses,
            "val_accuracies": self.val_accuracies,
            "initial_params": self.initial_params,
            "final_params": self.final_params,
            "metadata": self.metadata,
        }
        if include_timing:
            d["duration_s"] = self.duration_s
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunRecord":
        return cls(
            model_id=d["model_id"], family=d["family"], architecture=d["architecture"], seed=d["seed"],
            train_losses=d["train_losses"], val_accuracies=d["val_accuracies"],
            initial_params=d["initial_params"], final_params=d["final_params"],
            final_val_accuracy=d["final_val_accuracy"], status=d.get("status", "ok"),
            diagnostic=d.get("diagnostic", ""), metadata=d.get("metadata", {}),
            duration_s=d.get("duration_s", 0.0),
        )

    def csv_row(self) -> dict[str, Any]:
        return {
            "model_id": self.model_id,
            "family": self.family,
            "seed": self.seed,
            "status": self.status,
            "epochs": len(self.train_losses),
            "final_train_loss": self.train_losses[-1] if self.train_losses else float("nan"),
            "final_val_accuracy": self.final_val_accuracy,
            "n_params": len(self.final_params),
        }


def train(model, X_train, y_train, X_val, y_val, config: TrainConfig, model_id: str = "",
          family: str = "", architecture: dict | None = None,
          init_params: np.ndarray | None = None,
          callback: Callable[[int, float, float], None] | None = None) -> RunRecord:
    """Train ``model`` with Adam and return the run record.

    Deterministic given ``config.seed``: the same generator draws the initial
    parameters (unless given) and then the per-epoch mini-batch permutations.
    """
    start = time.perf_counter()
    rng = np.random.default_rng(config.seed)
    params = model.init_params(rng) if init_params is None else np.asarray(init_params, dtype=float).copy()
    if params.shape != (model.n_params,):
        raise ShapeError(f"expected {model.n_params} initial parameters, got {params.shape}")
    initial = params.copy()
    y_train = _as_labels(y_train)
    y_val = _as_labels(y_val)
    if len(X_train) != len(y_train) or len(X_val) != len(y_val):
        raise ShapeError("features and labels differ in length")
    state = AdamState(config.learning_rate, model.n_params)
    n = len(y_train)
    batch = n if config.batch_size is None else min(config.batch_size, n)

    losses: list[float] = []
    accs: list[float] = []
    clamps = 0
    status, diagnostic = "ok", ""
    best, stale = np.inf, 0
    # non-finite values are detected below and end the run as failed
    with np.errstate(all="ignore"):
        for epoch in range(config.max_epochs):
            order = np.arange(n) if batch == n else rng.permutation(n)
            epoch_loss = 0.0
            for start_i in range(0, n, batch):
                idx = order[start_i:start_i + batch]
                yb = y_train[idx]

                def upstream(pred, yb=yb):
                    nonlocal clamps
                    if config.loss is LossKind.CE:
                        clamps += count_floor_clamps(pred, yb)
                    return loss_and_grad(config.loss, pred, yb)

                value, _, grad = model.value_and_grad(X_train[idx], params, upstream)
                if not np.isfinite(value) or not np.all(np.isfinite(grad)):
                    status, diagnostic = "failed", f"non-finite loss or gradient at epoch {epoch}"
                    break
                epoch_loss += value
                params, state = adam_step(state, params, grad)
            if status != "ok":
                break
            losses.append(float(epoch_loss))
            acc = accuracy(model.predict(X_val, params), y_val)
            accs.append(acc)
            if callback is not None:
                callback(epoch, epoch_loss, acc)
            if config.early_stop_patience is not None:
                if epoch_loss < best - config.early_stop_tol:
                    best, stale = epoch_loss, 0
                else:
                    stale += 1
                    if stale >= config.early_stop_patience:
                        break

    final_acc = accs[-1] if accs else 0.0
    return RunRecord(
        model_id=model_id,
        family=family,
        architecture=architecture or {},
        seed=int(config.seed),
        train_losses=losses,
        val_accuracies=accs,
        initial_params=initial.tolist(),
        final_params=params.tolist(),
        final_val_accuracy=float(final_acc),
        status=status,
        diagnostic=diagnostic,
        metadata={
            "learning_rate": config.learning_rate,
            "loss": config.loss.value,
            "batch_size": "full" if config.batch_size is None else config.batch_size,
            "max_epochs": config.max_epochs,
            "early_stop_patience": config.early_stop_patience,
            "adam": {"beta1": state.beta1, "beta2": state.beta2, "epsilon": state.epsilon},
            "prob_floor_clamps": clamps,
        },
        duration_s=time.perf_counter() - start,
    )
