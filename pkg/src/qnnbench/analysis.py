"""Entanglement metrics, suite statistics, fits and transfer scoring."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .circuits import DomainError, QnnArchitecture, ParameterSet, QccnnCircuitSpec, count_parameters
from .statevector import ControlledRotation, gate_matrix

NOT_APPLICABLE = "not_applicable"
UNDEFINED = "undefined"
SUMMARY_COLUMNS = ("model_id", "n_seeds", "mean", "variance", "min", "max", "excluded")


class FitError(ValueError):
    pass


# ---------------------------------------------------------------- concurrence


def _reduce_angle(angle: float) -> float:
    """Fold into ``[0, 2pi]``: the closed form has period ``4pi`` and is even."""
    b = float(np.mod(abs(angle), 4 * np.pi))
    return 4 * np.pi - b if b > 2 * np.pi else b


def gate_concurrence(gate) -> float:
    """Concurrence of a controlled rotation, ``|sin(angle / 2)|``."""
    if not isinstance(gate, ControlledRotation):
        raise DomainError(f"concurrence is only defined here for controlled rotations, got {type(gate).__name__}")
    return float(abs(np.sin(_reduce_angle(gate.angle) / 2)))


def state_concurrence(psi: np.ndarray) -> float:
    """Pure two-qubit state concurrence ``2|a d - b c|`` (amplitude index = 2 q1 + q0)."""
    a, b, c, d = psi
    return float(2 * abs(a * d - b * c))


def _product_state(angles: np.ndarray) -> np.ndarray:
    t0, p0, t1, p1 = angles
    q0 = np.array([np.cos(t0 / 2), np.exp(1j * p0) * np.sin(t0 / 2)])
    q1 = np.array([np.cos(t1 / 2), np.exp(1j * p1) * np.sin(t1 / 2)])
    return np.kron(q1, q0)  # qubit 0 is the low bit


def brute_force_concurrence(gate, grid: int = 12, refine_steps: int = 60) -> float:
    """Maximum output concurrence over product input states (independent of the closed form).

    A coarse grid over the Bloch angles of both qubits seeds a coordinate-wise
    pattern search with a shrinking step.
    """
    U = gate_matrix(ControlledRotation(gate.axis, gate.angle, 0, 1), 2)

    def score(angles):
        return state_concurrence(U @ _product_state(angles))

    thetas = np.linspace(0, np.pi, grid)
    phis = np.linspace(0, 2 * np.pi, grid, endpoint=False)
    mesh = np.stack(np.meshgrid(thetas, phis, thetas, phis, indexing="ij"), axis=-1).reshape(-1, 4)
    t0, p0, t1, p1 = mesh.T
    q0 = np.stack([np.cos(t0 / 2), np.exp(1j * p0) * np.sin(t0 / 2)], axis=1)
    q1 = np.stack([np.cos(t1 / 2), np.exp(1j * p1) * np.sin(t1 / 2)], axis=1)
    out = np.einsum("bi,bj->bij", q1, q0).reshape(-1, 4) @ U.T
    conc = 2 * np.abs(out[:, 0] * out[:, 3] - out[:, 1] * out[:, 2])
    best_angles, best = mesh[int(np.argmax(conc))].copy(), float(conc.max())
    step = np.pi / grid
    for _ in range(refine_steps):
        improved = False
        for i in range(4):
            for sign in (1.0, -1.0):
                trial = best_angles.copy()
                trial[i] += sign * step
                c = score(trial)
                if c > best:
                    best, best_angles, improved = c, trial, True
        if not improved:
            step /= 2
    return float(best)


# ------------------------------------------------------------ entanglement report


@dataclass
class EntanglementReport:
    concurrences: list[float]
    initial_concurrences: list[float]
    mean_concurrence: float | str
    mean_change: float | str
    n_entangling: int

    @property
    def applicable(self) -> bool:
        return self.n_entangling > 0

    def to_dict(self) -> dict:
        return {"concurrences": self.concurrences, "initial_concurrences": self.initial_concurrences,
                "mean_concurrence": self.mean_concurrence, "mean_change": self.mean_change,
                "n_entangling": self.n_entangling}


def entangling_angles(arch, flat_params) -> np.ndarray:
    """Angles of every entangling gate, in circuit order, from a model's flat parameter vector."""
    flat = np.asarray(flat_params, dtype=float)
    if isinstance(arch, QnnArchitecture):
        counts = count_parameters(arch)
        theta = ParameterSet.from_flat(arch, flat[:counts.total]).theta
        out, pos = [], 0
        for _layer in range(arch.n_layers):
            for rep in arch.repetitions:
                pos += arch.n_qubits
                k = rep.entanglement.n_gates(arch.n_qubits)
                out.extend(theta[pos:pos + k])
                pos += k
        return np.array(out)
    if isinstance(arch, QccnnCircuitSpec):
        ppl = arch.params_per_layer
        k = arch.n_entangling_gates // arch.n_layers
        return np.concatenate([flat[l * ppl + 3 * arch.n_qubits: l * ppl + 3 * arch.n_qubits + k]
                               for l in range(arch.n_layers)])
    raise DomainError(f"no entangling gates in {type(arch).__name__}")


def entanglement_report(arch, initial_params, trained_params) -> EntanglementReport:
    axis = "X"
    if isinstance(arch, QnnArchitecture):
        axes = [rep.entanglement.axis for _ in range(arch.n_layers) for rep in arch.repetitions
                for _g in range(rep.entanglement.n_gates(arch.n_qubits))]
    else:
        axes = None
    before = entangling_angles(arch, initial_params)
    after = entangling_angles(arch, trained_params)
    if len(after) == 0:
        return EntanglementReport([], [], NOT_APPLICABLE, NOT_APPLICABLE, 0)
    axes = axes or [axis] * len(after)
    c_after = [gate_concurrence(ControlledRotation(a, t, 0, 1)) for a, t in zip(axes, after)]
    c_before = [gate_concurrence(ControlledRotation(a, t, 0, 1)) for a, t in zip(axes, before)]
    return EntanglementReport(c_after, c_before, float(np.mean(c_after)),
                              float(np.mean(np.subtract(c_after, c_before))), len(after))


# ------------------------------------------------------------------ summaries


@dataclass
class ModelSummary:
    model_id: str
    accuracies: list[float]
    excluded: bool = False

    @property
    def mean(self) -> float:
        return float(np.mean(self.accuracies))

    @property
    def variance(self) -> float:
        return float(np.var(self.accuracies))  # population variance

    def row(self) -> dict:
        return {"model_id": self.model_id, "n_seeds": len(self.accuracies), "mean": self.mean,
                "variance": self.variance, "min": float(np.min(self.accuracies)),
                "max": float(np.max(self.accuracies)), "excluded": int(self.excluded)}


@dataclass
class SuiteSummary:
    models: list[ModelSummary]
    excluded: list[str] = field(default_factory=list)
    n_failed: int = 0

    @property
    def means(self) -> np.ndarray:
        return np.array([m.mean for m in self.models])

    @property
    def best(self) -> float:
        return float(self.means.max())

    @property
    def average(self) -> float:
        return float(self.means.mean())

    @property
    def worst(self) -> float:
        return float(self.means.min())

    def ranked(self) -> list[ModelSummary]:
        """Models by descending mean accuracy; ties keep model-id order."""
        return sorted(self.models, key=lambda m: (-m.mean, m.model_id))

    def to_dict(self) -> dict:
        return {"schema_version": 1, "best": self.best, "average": self.average, "worst": self.worst,
                "excluded": self.excluded, "n_failed": self.n_failed,
                "models": [m.row() for m in self.models]}


def summarize(records: Iterable, excluded: Sequence[str] = ()) -> SuiteSummary:
    """Group run records by model id. Failed runs are counted, not averaged."""
    by_model: dict[str, list[float]] = {}
    failed = 0
    for r in records:
        if r.status != "ok":
            failed += 1
            continue
        by_model.setdefault(r.model_id, []).append(r.final_val_accuracy)
    if not by_model:
        raise ValueError("no successful runs to summarize")
    ex = sorted(set(excluded))
    models = [ModelSummary(mid, accs, mid in ex) for mid, accs in sorted(by_model.items())]
    return SuiteSummary(models, ex, failed)


# ----------------------------------------------------------------------- fits


def fit_hyperbola(points) -> tuple[float, float, float]:
    """Least-squares ``c = a / n + b`` via linear regression on ``u = 1/n``; returns ``(a, b, rms)``."""
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    if np.any(pts[:, 0] <= 0):
        raise FitError("entangling-gate counts must be positive")
    u = 1.0 / pts[:, 0]
    if np.unique(u).size < 2:
        raise FitError("need at least two distinct gate counts")
    A = np.stack([u, np.ones_like(u)], axis=1)
    (a, b), *_ = np.linalg.lstsq(A, pts[:, 1], rcond=None)
    resid = pts[:, 1] - A @ np.array([a, b])
    return float(a), float(b), float(np.sqrt(np.mean(resid**2)))


def trend_line(points, exclude_half: bool = True) -> tuple[float, float]:
    """Ordinary least squares ``accuracy = slope * metric + intercept``, dropping exact-0.5 accuracies."""
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    if exclude_half:
        pts = pts[pts[:, 1] != 0.5]
    if len(pts) < 2 or np.unique(pts[:, 0]).size < 2:
        raise FitError("need at least two distinct points after exclusion")
    x, y = pts[:, 0], pts[:, 1]
    xm, ym = x.mean(), y.mean()
    slope = float(np.sum((x - xm) * (y - ym)) / np.sum((x - xm) ** 2))
    return slope, float(ym - slope * xm)


def transfer_score(accuracy: float, best: float, average: float, worst: float) -> float | str:
    """Place an accuracy on ``[-1, 1]`` relative to a target suite's worst/average/best."""
    if best == average or average == worst:
        return UNDEFINED
    if accuracy >= average:
        return (accuracy - average) / (best - average)
    return (accuracy - average) / (average - worst)


def transfer_scores(retrained: dict[str, float], target: SuiteSummary) -> dict[str, float | str]:
    return {mid: transfer_score(acc, target.best, target.average, target.worst)
            for mid, acc in sorted(retrained.items())}


# ------------------------------------------------------------------------ CSV


def to_csv(rows: Sequence[dict], columns: Sequence[str] | None = None) -> str:
    """Deterministic CSV text (``\\n`` line endings, floats via ``repr``)."""
    if not rows:
        return ""
    columns = list(columns or rows[0].keys())
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=columns, lineterminator="\n", extrasaction="ignore")
    w.writeheader()
    for r in rows:
        w.writerow({k: (repr(float(v)) if isinstance(v, (float, np.floating)) else v) for k, v in r.items()})
    return buf.getvalue()
