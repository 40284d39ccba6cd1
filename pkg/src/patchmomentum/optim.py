"""Full-batch gradient descent and heavy-ball momentum (GD+M)."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np

from . import model
from .distribution import TAG_INIT, Dataset, ExperimentConfig, make_rng

log = logging.getLogger(__name__)

GD = "gd"
GDM = "gdm"
OPTIMIZERS = (GD, GDM)

DIVERGENCE_LIMIT = 1e12


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class MomentumState:
    buffer: np.ndarray

    @classmethod
    def zeros_like(cls, W: np.ndarray) -> "MomentumState":
        return cls(np.zeros_like(W))


@dataclass(frozen=True)
class Schedule:
    kind: str
    eta0: float
    T: int

    def __call__(self, t: int) -> float:
        if self.kind == "constant":
            return self.eta0
        if self.kind == "linear-decay":
            return self.eta0 * (1.0 - t / self.T)
        raise ValueError(f"unknown schedule {self.kind!r}")


def _checked(grad: np.ndarray) -> np.ndarray:
    if not np.all(np.isfinite(grad)):
        raise TrainingDiverged("non-finite gradient")
    return grad


def gd_step(W: np.ndarray, dataset: Dataset, eta_t: float, lam: float = 0.0,
            grad: np.ndarray | None = None) -> np.ndarray:
    """W - eta_t * grad L(W). A precomputed ``grad`` at W may be supplied."""
    if grad is None:
        grad = model.gradient(W, dataset, lam)
    return W - eta_t * _checked(grad)


def gdm_step(W: np.ndarray, state: MomentumState, dataset: Dataset, eta_t: float,
             gamma: float, lam: float = 0.0,
             grad: np.ndarray | None = None) -> tuple[np.ndarray, MomentumState]:
    """g' = gamma g + (1 - gamma) grad L(W), then W' = W - eta_t g'."""
    if not 0.0 <= gamma < 1.0:
        raise ValueError(f"gamma must lie in [0, 1), got {gamma}")
    if grad is None:
        grad = model.gradient(W, dataset, lam)
    buffer = gamma * state.buffer + (1.0 - gamma) * _checked(grad)
    return W - eta_t * buffer, MomentumState(buffer)


@dataclass(frozen=True)
class StepContext:
    """Read-only view handed to hooks.

    At iteration ``t < T`` it describes the state *before* the update:
    weights W^(t), the momentum buffer g^(t) (GD+M only), the loss report and
    gradient at W^(t), and the step size about to be used. The final call has
    ``t == T`` and ``eta is None``.
    """

    t: int
    eta: float | None
    weights: np.ndarray
    momentum: np.ndarray | None
    report: model.LossReport
    grad: np.ndarray


Hook = Callable[[StepContext], None]


@dataclass
class StepRecord:
    t: int
    eta: float | None
    loss: float


@dataclass
class TrainingResult:
    weights: np.ndarray
    trace: list[StepRecord] = field(default_factory=list)
    status: str = "ok"
    message: str = ""
    momentum: np.ndarray | None = None

    @property
    def diverged(self) -> bool:
        return self.status == "diverged"


def initial_weights(cfg: ExperimentConfig) -> np.ndarray:
    return model.init_weights(cfg.m, cfg.d, cfg.sigma0, make_rng(cfg.seed, TAG_INIT))


def run_training(cfg: ExperimentConfig, dataset: Dataset, optimizer: str,
                 hooks: Iterable[Hook] = (), W0: np.ndarray | None = None,
                 eta0: float | None = None, gamma: float | None = None) -> TrainingResult:
    """Run ``cfg.T`` full-batch iterations of GD or GD+M.

    ``eta0`` defaults to the optimizer's configured step size and ``gamma`` to
    ``cfg.gamma``. On divergence the partial result is returned with
    ``status == "diverged"``.
    """
    if optimizer not in OPTIMIZERS:
        raise ValueError(f"optimizer must be one of {OPTIMIZERS}, got {optimizer!r}")
    hooks = list(hooks)
    if eta0 is None:
        eta0 = cfg.eta if optimizer == GD else cfg.eta_momentum
    gamma = cfg.gamma if gamma is None else gamma
    schedule = Schedule(cfg.lr_schedule, eta0, cfg.T)
    W = initial_weights(cfg) if W0 is None else np.array(W0, dtype=float)
    state = MomentumState.zeros_like(W) if optimizer == GDM else None
    result = TrainingResult(weights=W)

    for t in range(cfg.T + 1):
        report = model.loss(W, dataset, cfg.lam)
        if not np.isfinite(report.total) or abs(report.total) > DIVERGENCE_LIMIT \
                or np.max(np.abs(W)) > DIVERGENCE_LIMIT:
            result.status, result.message = "diverged", f"loss or weights blew up at t={t}"
            log.warning("%s diverged at t=%d", optimizer, t)
            break
        grad = model.gradient(W, dataset, cfg.lam, ell=report.per_sample_derivative)
        eta_t = schedule(t) if t < cfg.T else None
        ctx = StepContext(t, eta_t, W, None if state is None else state.buffer, report, grad)
        for hook in hooks:
            hook(ctx)
        result.trace.append(StepRecord(t, eta_t, report.total))
        if t == cfg.T:
            break
        try:
            if optimizer == GD:
                W = gd_step(W, dataset, eta_t, cfg.lam, grad=grad)
            else:
                W, state = gdm_step(W, state, dataset, eta_t, gamma, cfg.lam, grad=grad)
        except TrainingDiverged as exc:
            result.status, result.message = "diverged", f"{exc} at t={t}"
            break
        result.weights = W

    result.weights = W
    result.momentum = None if state is None else state.buffer
    return result
