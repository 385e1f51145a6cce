"""Counterfactual shift explanations: train a source-vs-target
classifier (optionally with group-DRO) and find minimal per-sample
perturbations that flip its prediction to "target"."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import LabeledDataset
from .errors import OptimizationError

ARCHITECTURES = ("logistic", "one-hidden")


@dataclass(frozen=True)
class TrainingConfig:
    architecture: str = "one-hidden"
    hidden_width: int = 16
    epochs: int = 100
    learning_rate: float = 0.05
    weight_decay: float = 1e-4
    seed: int = 0
    group_dro: bool = False
    dro_step: float = 0.01

    def __post_init__(self):
        if self.architecture not in ARCHITECTURES:
            raise ValueError(f"unknown architecture {self.architecture!r}")
        if self.epochs < 1 or self.learning_rate <= 0:
            raise ValueError("epochs must be >= 1 and learning_rate positive")
        if self.dro_step <= 0:
            raise ValueError("dro_step must be positive")


@dataclass
class Classifier:
    """Source-vs-target discriminator with a logistic output.

    weights holds 'w'/'b' for the logistic architecture and
    'W1'/'b1'/'w2'/'b2' for the one-hidden-layer one. loss_trace records
    the per-epoch training objective.
    """

    config: TrainingConfig
    weights: dict[str, np.ndarray]
    loss_trace: list[float] = field(default_factory=list)
    dro_trace: list[np.ndarray] = field(default_factory=list)

    def logits(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(X)
        if self.config.architecture == "logistic":
            return X @ self.weights["w"] + self.weights["b"]
        h = np.maximum(X @ self.weights["W1"] + self.weights["b1"], 0.0)
        return h @ self.weights["w2"] + self.weights["b2"]

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        return _sigmoid(self.logits(X))

    def input_gradient(self, X: np.ndarray) -> np.ndarray:
        """d logit / d x per row."""
        X = np.atleast_2d(X)
        if self.config.architecture == "logistic":
            return np.broadcast_to(self.weights["w"], X.shape).copy()
        pre = X @ self.weights["W1"] + self.weights["b1"]
        mask = (pre > 0).astype(np.float64)
        return (mask * self.weights["w2"][None, :]) @ self.weights["W1"].T

    def to_arrays(self) -> dict[str, np.ndarray]:
        return dict(self.weights)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z, dtype=np.float64)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _init_weights(cfg: TrainingConfig, dim: int) -> dict[str, np.ndarray]:
    rng = np.random.default_rng(cfg.seed)
    if cfg.architecture == "logistic":
        return {"w": rng.normal(0.0, 0.1, size=dim), "b": np.zeros(1)}
    w = cfg.hidden_width
    return {
        "W1": rng.normal(0.0, np.sqrt(2.0 / dim), size=(dim, w)),
        "b1": np.zeros(w),
        "w2": rng.normal(0.0, np.sqrt(1.0 / w), size=w),
        "b2": np.zeros(1),
    }


def train_classifier(
    source: LabeledDataset,
    target: LabeledDataset,
    cfg: TrainingConfig,
    init: Classifier | None = None,
) -> Classifier:
    """Full-batch gradient descent on cross-entropy with weight decay.

    Source rows are labeled 0 and target rows 1. With group_dro set, the
    per-group mean losses are reweighted each epoch by multiplicative
    weights q_g <- q_g * exp(dro_step * L_g), renormalized; the descent
    direction is the q-weighted mix of per-group gradients.
    """
    X = np.vstack([source.rows, target.rows])
    y = np.concatenate([np.zeros(source.n), np.ones(target.n)])
    if cfg.group_dro:
        if source.group_of is None or target.group_of is None:
            raise OptimizationError("group_dro requires group labels on both datasets")
        groups = np.concatenate([source.group_of, target.group_of])
        gids = np.unique(groups)
    else:
        groups = np.zeros(len(y), dtype=np.int64)
        gids = np.array([0])
    members = [np.flatnonzero(groups == g) for g in gids]
    q = np.full(len(gids), 1.0 / len(gids))

    if init is not None:
        weights = {k: v.copy() for k, v in init.weights.items()}
    else:
        weights = _init_weights(cfg, X.shape[1])
    clf = Classifier(config=cfg, weights=weights)

    for epoch in range(cfg.epochs):
        z = clf.logits(X)
        # stable BCE: softplus(z) - y*z
        losses = np.logaddexp(0.0, z) - y * z
        dz = _sigmoid(z) - y
        if cfg.group_dro and len(gids) > 1:
            group_losses = np.array([losses[m].mean() for m in members])
            q = q * np.exp(cfg.dro_step * group_losses)
            q = q / q.sum()
            clf.dro_trace.append(q.copy())
            sample_w = np.zeros(len(y))
            for qg, m in zip(q, members):
                sample_w[m] = qg / len(m)
            loss = float(np.dot(q, group_losses))
        else:
            sample_w = np.full(len(y), 1.0 / len(y))
            loss = float(losses.mean())
        if not np.isfinite(loss):
            raise OptimizationError(f"non-finite training loss at epoch {epoch}")
        clf.loss_trace.append(loss)
        _descend(clf, X, dz * sample_w, cfg)
    return clf


def _descend(clf: Classifier, X: np.ndarray, dz_weighted: np.ndarray, cfg: TrainingConfig) -> None:
    w = clf.weights
    lr = cfg.learning_rate
    wd = cfg.weight_decay
    if cfg.architecture == "logistic":
        gw = X.T @ dz_weighted + wd * w["w"]
        gb = dz_weighted.sum()
        w["w"] -= lr * gw
        w["b"] -= lr * gb
        return
    pre = X @ w["W1"] + w["b1"]
    h = np.maximum(pre, 0.0)
    g_w2 = h.T @ dz_weighted + wd * w["w2"]
    g_b2 = dz_weighted.sum()
    dh = np.outer(dz_weighted, w["w2"]) * (pre > 0)
    g_W1 = X.T @ dh + wd * w["W1"]
    g_b1 = dh.sum(axis=0)
    w["w2"] -= lr * g_w2
    w["b2"] -= lr * g_b2
    w["W1"] -= lr * g_W1
    w["b1"] -= lr * g_b1


@dataclass(frozen=True)
class CounterfactualConfig:
    proximity_weight: float = 0.5
    max_steps: int = 200
    step_size: float = 0.05
    flip_threshold: float = 0.5

    def __post_init__(self):
        if min(self.proximity_weight, self.step_size) <= 0 or self.max_steps < 1:
            raise ValueError("counterfactual config fields must be positive")


def counterfactual_delta(
    x: np.ndarray, clf: Classifier, cfg: CounterfactualConfig | None = None
) -> tuple[np.ndarray, bool]:
    """Minimal perturbation pushing the classifier's output above the
    flip threshold.

    Gradient descent on cross_entropy(h(x + d), 1) + proximity * ||d||^2
    with early stop at the first crossing. Returns the best delta seen
    (highest target probability; zero is the baseline candidate) and
    whether the flip succeeded.
    """
    cfg = cfg or CounterfactualConfig()
    x = np.asarray(x, dtype=np.float64)
    p0 = float(clf.predict_proba(x[None, :])[0])
    if p0 > cfg.flip_threshold:
        return np.zeros_like(x), True
    best_p = p0
    best_delta = np.zeros_like(x)
    delta = np.zeros_like(x)
    for _ in range(cfg.max_steps):
        z = float(clf.logits((x + delta)[None, :])[0])
        p = _sigmoid(np.array([z]))[0]
        grad = (p - 1.0) * clf.input_gradient((x + delta)[None, :])[0]
        grad = grad + 2.0 * cfg.proximity_weight * delta
        delta = delta - cfg.step_size * grad
        p_new = float(clf.predict_proba((x + delta)[None, :])[0])
        if p_new > best_p:
            best_p = p_new
            best_delta = delta.copy()
        if p_new > cfg.flip_threshold:
            return delta, True
    return best_delta, False


@dataclass
class DiceResult:
    mapped_rows: np.ndarray
    flipped: np.ndarray
    flip_rate: float


def apply_dice(
    source: LabeledDataset, clf: Classifier, cfg: CounterfactualConfig | None = None
) -> DiceResult:
    """Row-wise counterfactual mapping of the source dataset."""
    cfg = cfg or CounterfactualConfig()
    deltas = np.zeros_like(source.rows)
    flipped = np.zeros(source.n, dtype=bool)
    for i in range(source.n):
        deltas[i], flipped[i] = counterfactual_delta(source.rows[i], clf, cfg)
    return DiceResult(
        mapped_rows=source.rows + deltas,
        flipped=flipped,
        flip_rate=float(flipped.mean()),
    )
