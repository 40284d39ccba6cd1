"""Signal/noise decomposition of the weights and exact checks of the projected dynamics.

Every weight row splits into its feature component ``c_r = <w_r, w*>`` and its
correlations ``Xi[i, j, r] = <w_r, X_i[j]>`` with the noise patches. Since the
noise lives in the orthogonal complement of ``w*``, the projected gradient,
the GD update and the GD+M momentum update all have closed forms in terms of
``c`` and the class-wise derivative sums ``nu1``, ``nu2``. The ``check_*``
functions compare those closed forms with the measured quantities.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import model
from .distribution import Dataset, ExperimentConfig, make_rng, sample_dataset
from .model import InvalidInputError
from .optim import GD, GDM, StepContext


class InvalidUseError(ValueError):
    """A check was applied to a trace it does not describe (wrong optimizer, lam > 0)."""


def rel_err(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-300)


@dataclass(frozen=True)
class IdentityTolerance:
    rel_tol: float = 1e-10
    kappa: float | None = None

    def __post_init__(self):
        if not self.rel_tol > 0:
            raise ValueError("rel_tol must be > 0")

    def kappa_for(self, T: int) -> float:
        return self.kappa if self.kappa is not None else math.log(10 * max(T, 1))


# --- projections -----------------------------------------------------------

def project_signal(W: np.ndarray, wstar: np.ndarray) -> np.ndarray:
    if W.ndim != 2 or W.shape[1] != wstar.shape[0]:
        raise InvalidInputError(f"weights {W.shape} do not match w* of length {wstar.shape[0]}")
    return W @ wstar


@dataclass
class NoiseProjection:
    """``xi[i, j, r]`` on noise patches (zero on the signal patch) and the per-sample totals."""

    xi: np.ndarray
    mask: np.ndarray
    total: np.ndarray


def project_noise(W: np.ndarray, dataset: Dataset) -> NoiseProjection:
    mask = dataset.noise_mask
    xi = model.activations(W, dataset.X) * mask[:, :, None]
    total = dataset.y * (xi * xi * xi).sum(axis=(1, 2))
    return NoiseProjection(xi=xi, mask=mask, total=total)


def noise_momentum_projection(buffer: np.ndarray, dataset: Dataset) -> np.ndarray:
    """<g_r, X_i[j]> for every (i, j, r); zero on signal patches."""
    return model.activations(buffer, dataset.X) * dataset.noise_mask[:, :, None]


# --- gradient identities ---------------------------------------------------

def signal_gradient_closed_form(W: np.ndarray, dataset: Dataset) -> np.ndarray:
    """-(3/N) (alpha^3 sum_{Z1} ell_i + beta^3 sum_{Z2} ell_i) c_r^2, for lam = 0."""
    c = project_signal(W, dataset.wstar)
    ell = model.neg_sigmoid(model.margins(W, dataset))
    weight = dataset.alpha ** 3 * np.sum(ell[dataset.z1]) + dataset.beta ** 3 * np.sum(ell[dataset.z2])
    return -3.0 / dataset.N * weight * c * c


def check_signal_gradient_identity(W: np.ndarray, dataset: Dataset, lam: float = 0.0) -> float:
    """Max relative error over neurons between <grad_r, w*> (ridge part removed) and the closed form."""
    c = project_signal(W, dataset.wstar)
    measured = model.gradient(W, dataset, lam) @ dataset.wstar - lam * c
    return float(np.max(rel_err(measured, signal_gradient_closed_form(W, dataset))))


def noise_gradient_closed_form(W: np.ndarray, dataset: Dataset, i: int, j: int, r: int) -> float:
    """<grad_{w_r}, X_i[j]> assembled from its three groups of terms.

    The self term of patch (i, j), the other noise patches of sample i, and the
    noise patches of every other sample. Signal patches drop out because they
    are orthogonal to X_i[j].
    """
    _validate_noise_index(dataset, i, j)
    N, P, _ = dataset.X.shape
    ell = model.neg_sigmoid(model.margins(W, dataset))
    x = dataset.X[i, j]
    xi = dataset.X @ W[r]  # (N, P)
    weight = dataset.y * ell  # y_a * ell_a
    mask = dataset.noise_mask

    self_term = weight[i] * xi[i, j] ** 2 * float(x @ x)
    others_i = [k for k in range(P) if mask[i, k] and k != j]
    own_term = sum(weight[i] * xi[i, k] ** 2 * float(dataset.X[i, k] @ x) for k in others_i)
    cross = (dataset.X @ x) * xi ** 2 * mask  # (N, P)
    cross[i] = 0.0
    cross_term = float(np.sum(weight[:, None] * cross))
    return -3.0 / N * (self_term + own_term + cross_term)


def _validate_noise_index(dataset: Dataset, i: int, j: int) -> None:
    if dataset.P < 2:
        raise InvalidInputError("P = 1: there is no noise patch to project on")
    if not 0 <= i < dataset.N or not 0 <= j < dataset.P:
        raise InvalidInputError(f"index (i={i}, j={j}) out of range")
    if j == dataset.signal_index[i]:
        raise InvalidInputError(f"patch {j} of sample {i} is its signal patch")


def check_noise_gradient_identity(W: np.ndarray, dataset: Dataset, i: int, j: int, r: int,
                                  lam: float = 0.0) -> float:
    _validate_noise_index(dataset, i, j)
    x = dataset.X[i, j]
    measured = float((model.gradient(W, dataset, lam)[r] - lam * W[r]) @ x)
    return float(rel_err(measured, noise_gradient_closed_form(W, dataset, i, j, r)))


# --- per-iteration trace ---------------------------------------------------

CSV_COLUMNS = ("t", "eta_t", "loss", "nu1", "nu2", "c_max", "r_max", "xi_max",
               "xi_total_z2_max", "sig_grad_max", "mom_sig_max")


@dataclass
class TraceRow:
    """Diagnostics of W^(t).

    ``sig_grad`` is the measured <grad_r, w*>; ``mom_sig`` the projection
    <g_r^(t), w*> of the momentum buffer entering iteration t (GD+M only).
    ``xi_total_z2_max`` is NaN when the dataset has no Z2 sample.
    """

    t: int
    eta_t: float | None
    loss: float
    nu1: float
    nu2: float
    c: np.ndarray
    c_max: float
    r_max: int
    xi_max: float
    xi_total_z2_max: float
    sig_grad: np.ndarray
    mom_sig: np.ndarray | None = None

    def csv_fields(self) -> list[str]:
        def fmt(v):
            return "" if v is None else repr(float(v))
        return [
            str(self.t), fmt(self.eta_t), fmt(self.loss), fmt(self.nu1), fmt(self.nu2),
            fmt(self.c_max), str(self.r_max), fmt(self.xi_max), fmt(self.xi_total_z2_max),
            fmt(np.max(np.abs(self.sig_grad))),
            "" if self.mom_sig is None else fmt(np.max(np.abs(self.mom_sig))),
        ]


@dataclass
class Trace:
    optimizer: str
    gamma: float
    lam: float
    rows: list[TraceRow] = field(default_factory=list)
    noise: list[NoiseProjection] = field(default_factory=list)
    noise_momentum: list[np.ndarray] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.rows)

    @property
    def losses(self) -> np.ndarray:
        return np.array([row.loss for row in self.rows])

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(CSV_COLUMNS)
            for row in self.rows:
                writer.writerow(row.csv_fields())


def make_row(ctx: StepContext, dataset: Dataset) -> TraceRow:
    W = ctx.weights
    nu1, nu2, _ = model.per_sample_derivatives(W, dataset, ell=ctx.report.per_sample_derivative)
    c = project_signal(W, dataset.wstar)
    r_max = int(np.argmax(c))  # first maximum wins ties
    noise = project_noise(W, dataset)
    z2 = dataset.z2
    return TraceRow(
        t=ctx.t, eta_t=ctx.eta, loss=ctx.report.total, nu1=nu1, nu2=nu2,
        c=c, c_max=float(c[r_max]), r_max=r_max,
        xi_max=float(np.max(noise.xi * noise.xi)) if noise.xi.size else 0.0,
        xi_total_z2_max=float(np.max(noise.total[z2])) if np.any(z2) else float("nan"),
        sig_grad=ctx.grad @ dataset.wstar,
        mom_sig=None if ctx.momentum is None else ctx.momentum @ dataset.wstar,
    )


class TraceRecorder:
    """Training hook that appends one TraceRow per iteration.

    With ``full_noise`` the complete Xi map (and, for GD+M, the noise
    projection of the momentum buffer) is kept for every iteration; that is
    N*P*m floats per row.
    """

    def __init__(self, dataset: Dataset, optimizer: str, gamma: float = 0.0, lam: float = 0.0,
                 full_noise: bool = False):
        self.dataset = dataset
        self.full_noise = full_noise
        self.trace = Trace(optimizer=optimizer, gamma=gamma if optimizer == GDM else 0.0, lam=lam)

    def __call__(self, ctx: StepContext) -> None:
        self.trace.rows.append(make_row(ctx, self.dataset))
        if self.full_noise:
            self.trace.noise.append(project_noise(ctx.weights, self.dataset))
            if ctx.momentum is not None:
                self.trace.noise_momentum.append(noise_momentum_projection(ctx.momentum, self.dataset))


# --- recursion checks ------------------------------------------------------

def _require(trace: Trace, optimizer: str) -> None:
    if trace.optimizer != optimizer:
        raise InvalidUseError(f"trace was produced by {trace.optimizer!r}, check needs {optimizer!r}")
    if trace.lam != 0.0:
        raise InvalidUseError("the closed-form recursions hold for lam = 0 only")


def _drive(row: TraceRow, dataset: Dataset) -> float:
    # alpha^3 nu1 + beta^3 nu2
    return dataset.alpha ** 3 * row.nu1 + dataset.beta ** 3 * row.nu2


def gd_signal_step_error(row: TraceRow, nxt: TraceRow, dataset: Dataset) -> float:
    predicted = row.c + 3.0 * row.eta_t * _drive(row, dataset) * row.c * row.c
    return float(np.max(rel_err(nxt.c, predicted)))


def check_gd_signal_recursion(trace: Trace, dataset: Dataset) -> float:
    """Max over steps and neurons of the relative error of
    c^(t+1) = c^(t) + 3 eta_t (alpha^3 nu1 + beta^3 nu2) (c^(t))^2."""
    _require(trace, GD)
    rows = trace.rows
    return max((gd_signal_step_error(a, b, dataset) for a, b in zip(rows, rows[1:])), default=0.0)


def gdm_step_errors(row: TraceRow, nxt: TraceRow, dataset: Dataset, gamma: float) -> tuple[float, float]:
    """(momentum error, signal error) for one GD+M step."""
    mom = gamma * row.mom_sig - 3.0 * (1.0 - gamma) * _drive(row, dataset) * row.c * row.c
    sig = row.c - row.eta_t * nxt.mom_sig
    return float(np.max(rel_err(nxt.mom_sig, mom))), float(np.max(rel_err(nxt.c, sig)))


def check_gdm_signal_recursion(trace: Trace, dataset: Dataset) -> float:
    """Max relative error of the projected GD+M recursions
    G^(t+1) = gamma G^(t) - 3 (1 - gamma) (alpha^3 nu1 + beta^3 nu2) c^2 and
    c^(t+1) = c^(t) - eta_t G^(t+1)."""
    _require(trace, GDM)
    rows = trace.rows
    worst = 0.0
    for a, b in zip(rows, rows[1:]):
        worst = max(worst, *gdm_step_errors(a, b, dataset, trace.gamma))
    return worst


def check_momentum_projection_linearity(trace: Trace) -> float:
    """<g^(t+1), w*> against gamma <g^(t), w*> + (1 - gamma) <grad^(t), w*> (any lam)."""
    if trace.optimizer != GDM:
        raise InvalidUseError("momentum projection only exists for GD+M traces")
    g = trace.gamma
    rows = trace.rows
    return max((float(np.max(rel_err(b.mom_sig, g * a.mom_sig + (1 - g) * a.sig_grad)))
                for a, b in zip(rows, rows[1:])), default=0.0)


def non_decreasing_signal(trace: Trace) -> bool:
    cs = np.array([row.c for row in trace.rows])
    return bool(np.all(np.diff(cs, axis=0) >= 0)) if len(cs) > 1 else True


def empirical_rate_check(trace, t_start: int) -> float:
    """max_{t >= t_start} (t - t_start + 1) * loss(t).

    ``trace`` is a Trace or a plain sequence of per-iteration losses. A bounded
    value as the run grows certifies O(1/t) decay of the loss.
    """
    losses = trace.losses if isinstance(trace, Trace) else np.asarray(trace, dtype=float)
    if not 0 <= t_start < len(losses):
        raise ValueError(f"t_start={t_start} outside the trace of length {len(losses)}")
    tail = losses[t_start:]
    return float(np.max(np.arange(1, len(tail) + 1) * tail))


def regime_onsets(trace: Trace, dataset: Dataset, kappa: float) -> dict:
    """First iterations at which alpha*c_max and beta*c_max pass kappa^(1/3).

    Past those points the Z1 (resp. Z2) signal terms count as saturated; this
    is reporting only and never enters an identity.
    """
    level = kappa ** (1.0 / 3.0)
    out = {}
    for name, theta in (("z1_saturated_at", dataset.alpha), ("z2_saturated_at", dataset.beta)):
        hit = next((row.t for row in trace.rows if theta * row.c_max >= level), None)
        out[name] = hit
    return out


def sigmoid_loss_sandwich(x: np.ndarray) -> tuple[float, float]:
    """Extreme values of S(x) / log(1 + e^-x) over ``x``; the bound asks for [0.1, 10]."""
    ratio = model.neg_sigmoid(x) / model.log_loss(x)
    return float(np.min(ratio)), float(np.max(ratio))


# --- batch suite -----------------------------------------------------------

def random_small_instance(rng: np.random.Generator, d_max: int = 8, P_max: int = 3,
                          m_max: int = 3, N_max: int = 10) -> tuple[np.ndarray, Dataset]:
    """A random (W, dataset) pair with P >= 2 so that noise patches exist."""
    d = int(rng.integers(2, d_max + 1))
    cfg = ExperimentConfig(
        d=d, P=int(rng.integers(2, P_max + 1)), m=int(rng.integers(1, m_max + 1)),
        N=int(rng.integers(1, N_max + 1)), mu=float(rng.uniform(0.2, 0.8)),
        sigma=float(rng.uniform(0.3, 1.0)), T=0,
    )
    dataset = sample_dataset(cfg, rng)
    W = rng.normal(0.0, float(rng.uniform(0.2, 1.0)), size=(cfg.m, d))
    return W, dataset


def identity_suite(n_instances: int = 50, seed: int = 0) -> dict:
    """Signal and noise gradient identities on random small instances (lam = 0)."""
    rng = make_rng(seed, 100)
    signal_errs, noise_errs = [], []
    for _ in range(n_instances):
        W, ds = random_small_instance(rng)
        signal_errs.append(check_signal_gradient_identity(W, ds))
        i = int(rng.integers(ds.N))
        j = int(rng.choice(np.flatnonzero(ds.noise_mask[i])))
        r = int(rng.integers(W.shape[0]))
        noise_errs.append(check_noise_gradient_identity(W, ds, i, j, r))
    return {
        "n_instances": n_instances,
        "signal_gradient_max_rel_err": float(max(signal_errs)),
        "noise_gradient_max_rel_err": float(max(noise_errs)),
    }


def recursion_report(trace: Trace, dataset: Dataset) -> dict:
    """All exact recursion checks applicable to ``trace`` (empty when lam > 0)."""
    if trace.lam != 0.0:
        return {}
    if trace.optimizer == GD:
        return {"gd_signal_recursion": check_gd_signal_recursion(trace, dataset)}
    return {
        "gdm_signal_recursion": check_gdm_signal_recursion(trace, dataset),
        "gdm_momentum_linearity": check_momentum_projection_linearity(trace),
    }
