"""PercentExplained, per-group and worst-group PE, the generalized
worst-group loss with aggregator F and regularizer lambda, and the
gradient-descent loop over mapping parameters.

The base loss for transport families is 1 - PE, i.e. the ratio of the
mapped-to-target divergence over the source-to-target one. Denominators
do not depend on the parameters and are solved once per run.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import LabeledDataset, paired_group_slices
from .errors import DegenerateShiftError, OptimizationError
from .maps import MappingFamily
from .wasserstein import PointCloud, SinkhornConfig, cost_and_grad, w2_squared

AGGREGATORS = ("group-dro", "max", "sum")
_DEGENERATE_DENOMINATOR = 1e-9


@dataclass(frozen=True)
class ObjectiveSpec:
    """Loss composition: base loss, aggregator F over per-group losses,
    regularization weight on the whole-distribution loss, and the
    group-aware switch (off = vanilla single-distribution objective)."""

    base_loss: str = "one-minus-pe"
    aggregator: str = "group-dro"
    dro_step: float = 0.01
    lam: float = 0.0
    group_aware: bool = True

    def __post_init__(self):
        if self.base_loss not in ("one-minus-pe", "cross-entropy"):
            raise ValueError(f"unknown base loss {self.base_loss!r}")
        if self.aggregator not in AGGREGATORS:
            raise ValueError(f"unknown aggregator {self.aggregator!r}")
        if self.lam < 0:
            raise ValueError("lambda must be nonnegative")
        if self.dro_step <= 0:
            raise ValueError("dro_step must be positive")
        if self.aggregator == "sum" and self.base_loss == "cross-entropy":
            # a group-additive loss makes sum + lambda collapse to
            # (1 + lambda) * whole-distribution loss, which is not group-aware
            raise ValueError("sum aggregator requires a non-group-additive base loss")


@dataclass(frozen=True)
class OptimizerConfig:
    learning_rate: float
    iterations: int
    seed: int = 0

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")


def percent_explained(
    mapped: PointCloud,
    source: PointCloud,
    target: PointCloud,
    cfg: SinkhornConfig | None = None,
) -> float:
    """PE as a percentage: 100 * (1 - W2^2(mapped, target) / W2^2(source, target))."""
    cfg = cfg or SinkhornConfig()
    denominator = w2_squared(source, target, cfg).cost
    if abs(denominator) < _DEGENERATE_DENOMINATOR:
        raise DegenerateShiftError(
            "source and target coincide (W2^2 ~ 0); PercentExplained is undefined"
        )
    numerator = w2_squared(mapped, target, cfg).cost
    return 100.0 * (1.0 - numerator / denominator)


def group_pe(
    mapped_rows: np.ndarray,
    source: LabeledDataset,
    target: LabeledDataset,
    groups: list[tuple[int, np.ndarray, np.ndarray]] | None = None,
    cfg: SinkhornConfig | None = None,
) -> dict[int, float]:
    """PE restricted to each matched (source group, target group) pair."""
    cfg = cfg or SinkhornConfig()
    groups = groups if groups is not None else paired_group_slices(source, target)
    out: dict[int, float] = {}
    for gid, src_idx, tgt_idx in groups:
        out[gid] = percent_explained(
            PointCloud.uniform(mapped_rows[src_idx]),
            PointCloud.uniform(source.rows[src_idx]),
            PointCloud.uniform(target.rows[tgt_idx]),
            cfg,
        )
    return out


def worst_group_pe(group_pes: dict[int, float]) -> float:
    """Minimum PE over groups."""
    if not group_pes:
        raise ValueError("need at least one group")
    return min(group_pes.values())


class _TransportObjective:
    """Stateful evaluator of the generalized worst-group loss for
    additive transport families; caches denominators and carries the
    group-DRO weights across iterations."""

    def __init__(
        self,
        family: MappingFamily,
        source: LabeledDataset,
        target: LabeledDataset,
        groups: list[tuple[int, np.ndarray, np.ndarray]],
        spec: ObjectiveSpec,
        sinkhorn: SinkhornConfig,
    ):
        self.family = family
        self.source = source
        self.target = target
        self.groups = groups
        self.spec = spec
        self.sinkhorn = sinkhorn
        self.all_idx = np.arange(source.n)
        self.target_cloud = PointCloud.uniform(target.rows)
        self.whole_den = self._denominator(source.rows, target.rows)
        self.group_den = {
            gid: self._denominator(source.rows[s], target.rows[t])
            for gid, s, t in groups
        }
        self.q = np.full(len(groups), 1.0 / len(groups))

    def _denominator(self, src_rows: np.ndarray, tgt_rows: np.ndarray) -> float:
        den = w2_squared(
            PointCloud.uniform(src_rows), PointCloud.uniform(tgt_rows), self.sinkhorn
        ).cost
        if abs(den) < _DEGENERATE_DENOMINATOR:
            raise DegenerateShiftError(
                "a source/target slice coincides; its PE loss is undefined"
            )
        return den

    def _whole_loss(self, theta: np.ndarray, want_grad: bool):
        mapped = self.family.apply(self.source.rows, theta, self.all_idx)
        cost, grad_rows = cost_and_grad(
            PointCloud.uniform(mapped), self.target_cloud, self.sinkhorn
        )
        loss = cost / self.whole_den
        if not want_grad:
            return loss, None
        grad = np.zeros_like(theta)
        self.family.project_grad(grad_rows / self.whole_den, self.all_idx, grad)
        return loss, grad

    def _group_losses(self, theta: np.ndarray):
        losses = []
        grads = []
        for gid, s_idx, t_idx in self.groups:
            mapped = self.family.apply(self.source.rows[s_idx], theta, s_idx)
            cost, grad_rows = cost_and_grad(
                PointCloud.uniform(mapped),
                PointCloud.uniform(self.target.rows[t_idx]),
                self.sinkhorn,
            )
            den = self.group_den[gid]
            losses.append(cost / den)
            grads.append(grad_rows / den)
        return losses, grads

    def evaluate(self, theta: np.ndarray):
        """One objective evaluation: (loss, grad, info) where info holds
        the whole-data loss and per-group losses for tracing."""
        spec = self.spec
        if not spec.group_aware:
            loss, grad = self._whole_loss(theta, want_grad=True)
            g_losses, _ = self._group_losses(theta)
            info = {"whole_loss": loss, "group_losses": g_losses, "q": None}
            return loss, grad, info

        g_losses, g_grads = self._group_losses(theta)
        grad = np.zeros_like(theta)
        if spec.aggregator == "max":
            worst = int(np.argmax(g_losses))
            loss = g_losses[worst]
            self.family.project_grad(g_grads[worst], self.groups[worst][1], grad)
        elif spec.aggregator == "sum":
            loss = float(np.sum(g_losses))
            for (gid, s_idx, _), g in zip(self.groups, g_grads):
                self.family.project_grad(g, s_idx, grad)
        else:  # group-dro
            self.q = self.q * np.exp(spec.dro_step * np.asarray(g_losses))
            self.q = self.q / self.q.sum()
            loss = float(np.dot(self.q, g_losses))
            for qg, (gid, s_idx, _), g in zip(self.q, self.groups, g_grads):
                self.family.project_grad(qg * g, s_idx, grad)

        if spec.lam > 0:
            whole_loss, whole_grad = self._whole_loss(theta, want_grad=True)
            loss = loss + spec.lam * whole_loss
            grad = grad + spec.lam * whole_grad
        else:
            whole_loss, _ = self._whole_loss(theta, want_grad=False)
        info = {"whole_loss": whole_loss, "group_losses": g_losses, "q": self.q.copy() if spec.aggregator == "group-dro" else None}
        return loss, grad, info


def wg_loss(
    theta: np.ndarray,
    family: MappingFamily,
    source: LabeledDataset,
    target: LabeledDataset,
    groups: list[tuple[int, np.ndarray, np.ndarray]] | None = None,
    spec: ObjectiveSpec | None = None,
    sinkhorn: SinkhornConfig | None = None,
) -> tuple[float, np.ndarray]:
    """Single evaluation of the generalized worst-group loss and its
    gradient w.r.t. theta (group-DRO weights start uniform)."""
    spec = spec or ObjectiveSpec()
    sinkhorn = sinkhorn or SinkhornConfig()
    groups = groups if groups is not None else paired_group_slices(source, target)
    objective = _TransportObjective(family, source, target, groups, spec, sinkhorn)
    loss, grad, _ = objective.evaluate(theta)
    return loss, grad


@dataclass
class TracePoint:
    iteration: int
    loss: float
    pe: float
    wg_pe: float


@dataclass
class OptimizeResult:
    theta: np.ndarray
    trace: list[TracePoint]
    pe: float
    group_pe: dict[int, float]
    wg_pe: float
    dro_weights: list[np.ndarray]


def optimize(
    family: MappingFamily,
    source: LabeledDataset,
    target: LabeledDataset,
    groups: list[tuple[int, np.ndarray, np.ndarray]] | None = None,
    spec: ObjectiveSpec | None = None,
    opt: OptimizerConfig | None = None,
    sinkhorn: SinkhornConfig | None = None,
    theta0: np.ndarray | None = None,
) -> OptimizeResult:
    """Full-batch gradient descent with a fixed learning rate and a fixed
    iteration count. theta starts at zero unless warm-started."""
    spec = spec or ObjectiveSpec()
    opt = opt or OptimizerConfig(learning_rate=1.0, iterations=100)
    sinkhorn = sinkhorn or SinkhornConfig()
    groups = groups if groups is not None else paired_group_slices(source, target)
    objective = _TransportObjective(family, source, target, groups, spec, sinkhorn)

    theta = family.init_params() if theta0 is None else np.array(theta0, dtype=np.float64)
    trace: list[TracePoint] = []
    dro_weights: list[np.ndarray] = []
    for it in range(opt.iterations):
        loss, grad, info = objective.evaluate(theta)
        if not np.isfinite(loss) or not np.all(np.isfinite(grad)):
            raise OptimizationError(
                f"non-finite loss or gradient at iteration {it} (loss={loss!r})"
            )
        trace.append(
            TracePoint(
                iteration=it,
                loss=float(loss),
                pe=100.0 * (1.0 - info["whole_loss"]),
                wg_pe=100.0 * (1.0 - max(info["group_losses"])),
            )
        )
        if info["q"] is not None:
            dro_weights.append(info["q"])
        theta = theta - opt.learning_rate * grad

    mapped = family.apply(source.rows, theta, np.arange(source.n))
    final_group_pe = group_pe(mapped, source, target, groups, sinkhorn)
    final_pe = percent_explained(
        PointCloud.uniform(mapped),
        PointCloud.uniform(source.rows),
        PointCloud.uniform(target.rows),
        sinkhorn,
    )
    return OptimizeResult(
        theta=theta,
        trace=trace,
        pe=final_pe,
        group_pe=final_group_pe,
        wg_pe=worst_group_pe(final_group_pe),
        dro_weights=dro_weights,
    )
