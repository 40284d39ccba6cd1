"""Cubic patch network f_W(X) = sum_r sum_j <w_r, X[j]>^3 and its logistic objective."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .distribution import Dataset


class InvalidInputError(ValueError):
    pass


def neg_sigmoid(x):
    """S(x) = 1 / (1 + e^x), evaluated without overflow."""
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    pos = x >= 0
    e = np.exp(-x[pos])
    out[pos] = e / (1.0 + e)
    out[~pos] = 1.0 / (1.0 + np.exp(x[~pos]))
    return out


def log_loss(x):
    """log(1 + e^-x), stable for large |x|."""
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = np.log1p(np.exp(-x[pos]))
    out[~pos] = -x[~pos] + np.log1p(np.exp(x[~pos]))
    return out


def _check(W: np.ndarray, X: np.ndarray) -> None:
    if W.ndim != 2 or X.shape[-1] != W.shape[1]:
        raise InvalidInputError(f"weights of shape {W.shape} do not match patches of shape {X.shape}")


def activations(W: np.ndarray, X: np.ndarray) -> np.ndarray:
    """Inner products <w_r, X[..., j, :]>; trailing axis indexes neurons."""
    _check(W, X)
    flat = X.reshape(-1, X.shape[-1]) @ W.T
    return flat.reshape(X.shape[:-1] + (W.shape[0],))


def forward(W: np.ndarray, X: np.ndarray) -> float | np.ndarray:
    """Network output for one (P, d) sample or a batch of shape (N, P, d)."""
    X = np.asarray(X, dtype=float)
    if X.ndim not in (2, 3):
        raise InvalidInputError(f"patches must have shape (P, d) or (N, P, d), got {X.shape}")
    inner = activations(W, X)
    out = (inner * inner * inner).sum(axis=(-2, -1))
    return float(out) if X.ndim == 2 else out


def margins(W: np.ndarray, dataset: Dataset) -> np.ndarray:
    return dataset.y * forward(W, dataset.X)


@dataclass
class LossReport:
    total: float
    data_term: float
    reg_term: float
    per_sample_margin: np.ndarray
    per_sample_derivative: np.ndarray


def loss(W: np.ndarray, dataset: Dataset, lam: float = 0.0) -> LossReport:
    if dataset.N == 0:
        raise InvalidInputError("empty dataset")
    if lam < 0:
        raise InvalidInputError("lam must be >= 0")
    margin = margins(W, dataset)
    data_term = float(np.mean(log_loss(margin)))
    reg_term = 0.5 * lam * float(np.sum(W * W))
    return LossReport(
        total=data_term + reg_term,
        data_term=data_term,
        reg_term=reg_term,
        per_sample_margin=margin,
        per_sample_derivative=neg_sigmoid(margin),
    )


def gradient(W: np.ndarray, dataset: Dataset, lam: float = 0.0,
             ell: np.ndarray | None = None) -> np.ndarray:
    """Analytic gradient of ``loss``, ridge term included.

    ``ell`` may pass precomputed derivatives S(y_i f(X_i)) to skip a forward pass.
    """
    N, P, d = dataset.X.shape
    inner = activations(W, dataset.X)  # (N, P, m)
    if ell is None:
        ell = neg_sigmoid(dataset.y * (inner * inner * inner).sum(axis=(1, 2)))
    coef = (ell * dataset.y)[:, None, None] * (inner * inner)
    grad = coef.reshape(N * P, -1).T @ dataset.X.reshape(N * P, d)
    grad *= -3.0 / N
    if lam:
        grad += lam * W
    return grad


def per_sample_derivatives(W: np.ndarray, dataset: Dataset,
                           ell: np.ndarray | None = None) -> tuple[float, float, np.ndarray]:
    """Class-wise derivative averages (nu1, nu2) and the per-sample ell vector."""
    if ell is None:
        ell = neg_sigmoid(margins(W, dataset))
    N = dataset.N
    nu1 = float(np.sum(ell[dataset.z1])) / N
    nu2 = float(np.sum(ell[dataset.z2])) / N
    return nu1, nu2, ell


def init_weights(m: int, d: int, sigma0: float, rng: np.random.Generator) -> np.ndarray:
    return rng.normal(0.0, sigma0, size=(m, d))


def save_weights(W: np.ndarray, path: str | Path) -> None:
    with open(path, "w") as fh:
        json.dump({"m": int(W.shape[0]), "d": int(W.shape[1]),
                   "entries": [float(v) for v in W.ravel()]}, fh)


def load_weights(path: str | Path) -> np.ndarray:
    with open(path) as fh:
        blob = json.load(fh)
    entries = np.asarray(blob["entries"], dtype=float)
    if entries.size != blob["m"] * blob["d"]:
        raise InvalidInputError("weight file entry count does not match m * d")
    return entries.reshape(blob["m"], blob["d"])
