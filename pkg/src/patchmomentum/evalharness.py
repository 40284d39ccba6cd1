"""Test error, the GD vs GD+M experiment and its output files."""

from __future__ import annotations

import json
import math
import subprocess
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, diagnostics, model, optim
from .distribution import Dataset, ExperimentConfig, sample_dataset, sample_test_dataset

TRACE_FILES = {optim.GD: "gd_trace.csv", optim.GDM: "gdm_trace.csv"}
SUMMARY_FILE = "summary.json"


@dataclass
class TestError:
    __test__ = False  # not a pytest class

    overall: float
    z1: float | None
    z2: float | None
    n: int
    n_z1: int
    n_z2: int
    errors: int
    errors_z1: int
    errors_z2: int

    @property
    def z2_fraction(self) -> float:
        return self.n_z2 / self.n


def test_error(W: np.ndarray, dataset: Dataset) -> TestError:
    """Misclassification rate, counting y f(X) <= 0 as an error.

    A class with no test sample reports ``None``.
    """
    if dataset.N == 0:
        raise model.InvalidInputError("empty test set")
    wrong = model.margins(W, dataset) <= 0
    z1, z2 = dataset.z1, dataset.z2
    n1, n2 = int(z1.sum()), int(z2.sum())
    k1, k2 = int(wrong[z1].sum()), int(wrong[z2].sum())
    return TestError(
        overall=(k1 + k2) / dataset.N,
        z1=k1 / n1 if n1 else None,
        z2=k2 / n2 if n2 else None,
        n=dataset.N, n_z1=n1, n_z2=n2, errors=k1 + k2, errors_z1=k1, errors_z2=k2,
    )


@dataclass
class ArmSummary:
    status: str
    final_train_loss: float
    test_error: float
    test_error_z1: float | None
    test_error_z2: float | None
    c_max_final: float
    xi_total_max_final: float | None
    iterations: int
    loss_rate_constant: float | None
    z1_saturated_at: int | None
    z2_saturated_at: int | None
    message: str = ""


@dataclass
class ExperimentSummary:
    arms: dict[str, ArmSummary]
    identity_check_max_errors: dict[str, float]
    runtime_seconds: float
    config: dict
    build: str
    test_z2_fraction: float
    files: list[str] = field(default_factory=list)

    @property
    def diverged(self) -> bool:
        return any(arm.status == "diverged" for arm in self.arms.values())

    def to_dict(self) -> dict:
        return asdict(self)


def _json_safe(value):
    if isinstance(value, float) and not math.isfinite(value):
        return None
    if isinstance(value, dict):
        return {k: _json_safe(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_json_safe(v) for v in value]
    return value


def build_tag() -> str:
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"],
                             cwd=Path(__file__).resolve().parent, capture_output=True,
                             text=True, timeout=5)
        described = out.stdout.strip() if out.returncode == 0 else ""
    except (OSError, subprocess.SubprocessError):
        described = ""
    return f"{__version__}+{described}" if described else __version__


def _arm_summary(result: optim.TrainingResult, trace: diagnostics.Trace, train: Dataset,
                 test: Dataset, cfg: ExperimentConfig) -> ArmSummary:
    W = result.weights
    err = test_error(W, test)
    z2 = train.z2
    xi_total = diagnostics.project_noise(W, train).total
    onsets = diagnostics.regime_onsets(trace, train, diagnostics.IdentityTolerance().kappa_for(cfg.T))
    rate = None
    if len(trace) > 1 and result.status == "ok":
        rate = diagnostics.empirical_rate_check(trace, len(trace) // 2)
    return ArmSummary(
        status=result.status,
        final_train_loss=trace.rows[-1].loss if trace.rows else float("nan"),
        test_error=err.overall, test_error_z1=err.z1, test_error_z2=err.z2,
        c_max_final=float(np.max(diagnostics.project_signal(W, train.wstar))),
        xi_total_max_final=float(np.max(xi_total[z2])) if np.any(z2) else None,
        iterations=len(result.trace) - 1,
        loss_rate_constant=rate,
        message=result.message,
        **onsets,
    )


def run_arm(cfg: ExperimentConfig, train: Dataset, optimizer: str,
            full_noise: bool = False) -> tuple[optim.TrainingResult, diagnostics.Trace]:
    recorder = diagnostics.TraceRecorder(train, optimizer, cfg.gamma, cfg.lam, full_noise=full_noise)
    result = optim.run_training(cfg, train, optimizer, hooks=[recorder])
    return result, recorder.trace


def run_experiment(cfg: ExperimentConfig, out_dir: str | Path | None = None,
                   optimizers=(optim.GD, optim.GDM), check_identities: bool = True) -> ExperimentSummary:
    """Train every arm from the same initialization on the same data.

    Writes ``gd_trace.csv`` / ``gdm_trace.csv`` and ``summary.json`` into
    ``out_dir`` when given. With ``lam == 0`` the exact recursion checks run on
    the recorded traces and the gradient identities on the initial weights.
    """
    start = time.perf_counter()
    train = sample_dataset(cfg)
    test = sample_test_dataset(cfg)
    W0 = optim.initial_weights(cfg)
    arms, identities, files = {}, {}, []
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)

    if check_identities and cfg.lam == 0.0:
        identities["signal_gradient_identity_init"] = diagnostics.check_signal_gradient_identity(W0, train)

    for name in optimizers:
        result, trace = run_arm(cfg, train, name)
        arms[name] = _arm_summary(result, trace, train, test, cfg)
        if check_identities:
            identities.update({f"{name}:{k}": v for k, v in diagnostics.recursion_report(trace, train).items()})
        if out is not None:
            path = out / TRACE_FILES[name]
            trace.write_csv(path)
            files.append(path.name)

    summary = ExperimentSummary(
        arms=arms, identity_check_max_errors=identities,
        runtime_seconds=time.perf_counter() - start,
        config=cfg.to_dict(), build=build_tag(),
        test_z2_fraction=test.z2_fraction, files=files,
    )
    if out is not None:
        summary.files.append(SUMMARY_FILE)
        with open(out / SUMMARY_FILE, "w") as fh:
            json.dump(_json_safe(summary.to_dict()), fh, indent=2, sort_keys=True)
            fh.write("\n")
    return summary


test_error.__test__ = False
