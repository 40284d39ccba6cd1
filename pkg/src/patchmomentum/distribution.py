"""Synthetic patch data: one signal patch aligned with ``w*``, the rest orthogonal noise."""

from __future__ import annotations

import csv
import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

Z1 = 1  # large margin, signal strength alpha
Z2 = 2  # small margin, signal strength beta

# Sub-seed tags; each stream is derived from (seed, tag) so the training set,
# the test set and the weight initialization never share random draws.
TAG_TRAIN = 0
TAG_TEST = 1
TAG_INIT = 2

SCHEDULES = ("constant", "linear-decay")


class InvalidConfigError(ValueError):
    """Raised when an ExperimentConfig violates its invariants."""


def default_beta(d: int) -> float:
    return d ** -0.251


def default_sigma(d: int) -> float:
    return d ** -0.509


@dataclass
class ExperimentConfig:
    """Every knob of one experiment.

    ``alpha``, ``beta`` and ``sigma`` left as ``None`` are filled from ``d``:
    ``beta = d**-0.251``, ``sigma = d**-0.509`` and
    ``alpha = c_alpha * sqrt(d) * beta``. ``sigma0`` defaults to ``sqrt(log(d) / d)``.
    ``eta`` is the GD step size, ``eta_gdm`` the GD+M one (``None`` means
    reuse ``eta``).
    """

    d: int = 30
    P: int = 5
    m: int = 5
    alpha: float | None = None
    beta: float | None = None
    sigma: float | None = None
    sigma0: float | None = None
    c_alpha: float = 1.0
    mu: float = 0.05
    N: int = 20000
    n_test: int = 2000
    eta: float = 0.2
    eta_gdm: float | None = 0.2
    gamma: float = 0.9
    lam: float = 0.0
    T: int = 500
    seed: int = 0
    lr_schedule: str = "linear-decay"

    def __post_init__(self) -> None:
        if isinstance(self.d, int) and self.d >= 1:
            if self.beta is None:
                self.beta = default_beta(self.d)
            if self.sigma is None:
                self.sigma = default_sigma(self.d)
            if self.alpha is None:
                self.alpha = self.c_alpha * math.sqrt(self.d) * self.beta
            if self.sigma0 is None:
                self.sigma0 = math.sqrt(math.log(self.d) / self.d) if self.d > 1 else 1.0
        self.validate()

    def validate(self) -> None:
        for name in ("d", "P", "m", "N", "n_test"):
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)) or isinstance(value, bool) or value < 1:
                raise InvalidConfigError(f"{name} must be an integer >= 1, got {value!r}")
        if not isinstance(self.T, (int, np.integer)) or self.T < 0:
            raise InvalidConfigError(f"T must be an integer >= 0, got {self.T!r}")
        if not 0 < self.beta <= self.alpha:
            raise InvalidConfigError(f"need 0 < beta <= alpha, got beta={self.beta}, alpha={self.alpha}")
        if not self.sigma > 0 or not self.sigma0 > 0:
            raise InvalidConfigError("sigma and sigma0 must be > 0")
        if not 0.0 <= self.mu <= 1.0:
            raise InvalidConfigError(f"mu must lie in [0, 1], got {self.mu}")
        if not self.eta > 0 or (self.eta_gdm is not None and not self.eta_gdm > 0):
            raise InvalidConfigError("learning rates must be > 0")
        if not 0.0 <= self.gamma < 1.0:
            raise InvalidConfigError(f"gamma must lie in [0, 1), got {self.gamma}")
        if self.lam < 0:
            raise InvalidConfigError(f"lam must be >= 0, got {self.lam}")
        if self.lr_schedule not in SCHEDULES:
            raise InvalidConfigError(f"lr_schedule must be one of {SCHEDULES}, got {self.lr_schedule!r}")

    @property
    def eta_momentum(self) -> float:
        return self.eta if self.eta_gdm is None else self.eta_gdm

    def replace(self, **changes) -> "ExperimentConfig":
        """Copy with ``changes`` applied; derived fields are recomputed when ``d`` changes."""
        values = dataclasses.asdict(self)
        if "d" in changes or "c_alpha" in changes:
            for derived in ("alpha", "beta", "sigma", "sigma0"):
                if derived not in changes:
                    values[derived] = None
        values.update(changes)
        return ExperimentConfig(**values)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, values: dict) -> "ExperimentConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(values) - known
        if unknown:
            raise InvalidConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**values)

    @classmethod
    def from_json(cls, path: str | Path) -> "ExperimentConfig":
        with open(path) as fh:
            values = json.load(fh)
        if not isinstance(values, dict):
            raise InvalidConfigError("config file must hold a flat JSON object")
        return cls.from_dict(values)


def make_rng(seed: int, tag: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(tag,)))


def make_wstar(d: int) -> np.ndarray:
    """Feature direction, fixed to the first basis vector."""
    if d < 1:
        raise InvalidConfigError(f"d must be >= 1, got {d}")
    wstar = np.zeros(d)
    wstar[0] = 1.0
    return wstar


@dataclass(frozen=True, eq=False)
class Sample:
    patches: np.ndarray  # (P, d)
    label: int
    margin_class: int
    signal_index: int


@dataclass(eq=False)
class Dataset:
    """Column-oriented storage of N samples.

    ``X`` has shape (N, P, d); ``y`` holds labels in {-1, +1};
    ``margin_class`` holds Z1/Z2 codes; ``signal_index`` the signal patch.
    """

    X: np.ndarray
    y: np.ndarray
    margin_class: np.ndarray
    signal_index: np.ndarray
    wstar: np.ndarray
    alpha: float
    beta: float
    _noise_mask: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __len__(self) -> int:
        return self.X.shape[0]

    def __getitem__(self, i: int) -> Sample:
        return Sample(
            patches=self.X[i],
            label=int(self.y[i]),
            margin_class=int(self.margin_class[i]),
            signal_index=int(self.signal_index[i]),
        )

    def __iter__(self) -> Iterator[Sample]:
        for i in range(len(self)):
            yield self[i]

    @property
    def samples(self) -> list[Sample]:
        return list(self)

    @property
    def N(self) -> int:
        return self.X.shape[0]

    @property
    def P(self) -> int:
        return self.X.shape[1]

    @property
    def d(self) -> int:
        return self.X.shape[2]

    @property
    def z1(self) -> np.ndarray:
        return self.margin_class == Z1

    @property
    def z2(self) -> np.ndarray:
        return self.margin_class == Z2

    @property
    def z2_fraction(self) -> float:
        return float(np.count_nonzero(self.z2)) / self.N

    @property
    def theta(self) -> np.ndarray:
        """Per-sample signal strength (alpha for Z1, beta for Z2)."""
        return np.where(self.z1, self.alpha, self.beta)

    @property
    def noise_mask(self) -> np.ndarray:
        """Boolean (N, P) array, True on noise patches."""
        if self._noise_mask is None:
            mask = np.ones(self.X.shape[:2], dtype=bool)
            mask[np.arange(self.N), self.signal_index] = False
            self._noise_mask = mask
        return self._noise_mask

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(
            X=self.X[idx], y=self.y[idx], margin_class=self.margin_class[idx],
            signal_index=self.signal_index[idx], wstar=self.wstar,
            alpha=self.alpha, beta=self.beta,
        )

    def equals(self, other: "Dataset") -> bool:
        return (
            np.array_equal(self.X, other.X)
            and np.array_equal(self.y, other.y)
            and np.array_equal(self.margin_class, other.margin_class)
            and np.array_equal(self.signal_index, other.signal_index)
            and np.array_equal(self.wstar, other.wstar)
            and self.alpha == other.alpha
            and self.beta == other.beta
        )


def _project_out(g: np.ndarray, wstar: np.ndarray) -> np.ndarray:
    # g - <g, w*> w*; exact for w* = e1 since only coordinate 0 is touched.
    return g - np.multiply.outer(g @ wstar, wstar)


def _draw(cfg: ExperimentConfig, n: int, rng: np.random.Generator, wstar: np.ndarray) -> Dataset:
    P, d = cfg.P, cfg.d
    y = rng.choice(np.array([-1, 1]), size=n)
    small = rng.random(n) < cfg.mu
    margin_class = np.where(small, Z2, Z1)
    signal_index = rng.integers(0, P, size=n)
    X = _project_out(rng.normal(0.0, cfg.sigma, size=(n, P, d)), wstar)
    theta = np.where(small, cfg.beta, cfg.alpha)
    X[np.arange(n), signal_index] = (theta * y)[:, None] * wstar
    return Dataset(X=X, y=y, margin_class=margin_class, signal_index=signal_index,
                   wstar=wstar, alpha=float(cfg.alpha), beta=float(cfg.beta))


def sample_point(cfg: ExperimentConfig, rng: np.random.Generator) -> Sample:
    return _draw(cfg, 1, rng, make_wstar(cfg.d))[0]


def sample_dataset(cfg: ExperimentConfig, rng: np.random.Generator | None = None,
                   n: int | None = None) -> Dataset:
    """Draw ``n`` (default ``cfg.N``) i.i.d. samples.

    Without ``rng`` the training stream for ``cfg.seed`` is used, so the
    result is a pure function of ``cfg``.
    """
    if rng is None:
        rng = make_rng(cfg.seed, TAG_TRAIN)
    return _draw(cfg, cfg.N if n is None else n, rng, make_wstar(cfg.d))


def sample_test_dataset(cfg: ExperimentConfig) -> Dataset:
    return sample_dataset(cfg, make_rng(cfg.seed, TAG_TEST), n=cfg.n_test)


# --- debugging export: one row = y, margin_class, signal_index, P*d patch values

def write_dataset_csv(dataset: Dataset, path: str | Path) -> None:
    P, d = dataset.P, dataset.d
    header = ["y", "margin_class", "signal_index"] + [f"x_{j}_{k}" for j in range(P) for k in range(d)]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        flat = dataset.X.reshape(dataset.N, P * d)
        for i in range(dataset.N):
            writer.writerow([int(dataset.y[i]), int(dataset.margin_class[i]), int(dataset.signal_index[i])]
                            + [repr(float(v)) for v in flat[i]])


def read_dataset_csv(path: str | Path, alpha: float, beta: float) -> Dataset:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [row for row in reader]
    last = header[-1].split("_")
    P, d = int(last[1]) + 1, int(last[2]) + 1
    data = np.array(rows, dtype=float).reshape(len(rows), 3 + P * d)
    return Dataset(
        X=data[:, 3:].reshape(len(rows), P, d),
        y=data[:, 0].astype(int),
        margin_class=data[:, 1].astype(int),
        signal_index=data[:, 2].astype(int),
        wstar=make_wstar(d), alpha=alpha, beta=beta,
    )
