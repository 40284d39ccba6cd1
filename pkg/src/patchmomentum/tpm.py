"""Hitting times of quadratic-growth recursions and their closed-form upper bounds.

Three families of sequences are simulated:

* two-sided: ``z_{t+1} = z_t + c_t z_t^2`` with ``c_t`` in ``[m_lo, M_hi]``;
* sum-form: ``z_t = z_0 + A * sum_{s<t} z_s^2 + e_t`` with ``|e_t| <= C``;
* momentum: ``G_{t+1} = gamma G_t - alpha3 c_t^2``, ``c_{t+1} = c_t - eta G_{t+1}``.

Each has a closed-form time after which the sequence exceeds ``upsilon``; the
checkers simulate and compare.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from .distribution import make_rng

STEP_CAP = 10_000_000
DELTA_GRID = tuple(round(0.1 * k, 1) for k in range(1, 10))
MODES = ("two-sided", "sum-form", "momentum")


class InvalidSpecError(ValueError):
    pass


class NonTermination(RuntimeError):
    """The simulated sequence did not reach its target within the step cap."""


@dataclass(frozen=True)
class QuadraticSequenceSpec:
    z0: float
    upsilon: float
    mode: str = "two-sided"
    m_lo: float = 1.0
    M_hi: float = 1.0
    A: float = 1.0
    C: float = 0.0
    eta: float = 1.0
    gamma: float = 0.9
    alpha3: float = 1.0

    def __post_init__(self):
        if self.mode not in MODES:
            raise InvalidSpecError(f"mode must be one of {MODES}, got {self.mode!r}")
        if not self.z0 > 0:
            raise InvalidSpecError("z0 must be > 0")
        if self.upsilon < self.z0:
            raise InvalidSpecError("upsilon must be >= z0")
        if self.mode == "two-sided" and not 0 < self.m_lo <= self.M_hi:
            raise InvalidSpecError("need 0 < m_lo <= M_hi")
        if self.mode == "sum-form":
            if not self.A > 0 or self.C < 0:
                raise InvalidSpecError("need A > 0 and C >= 0")
            if self.C > self.z0 / 2:
                raise InvalidSpecError("sum-form requires C <= z0 / 2")
        if self.mode == "momentum":
            if not 0 < self.gamma < 1:
                raise InvalidSpecError("momentum mode requires 0 < gamma < 1")
            if not self.eta > 0 or not self.alpha3 > 0:
                raise InvalidSpecError("momentum mode requires eta > 0 and alpha3 > 0")

    def to_dict(self) -> dict:
        return asdict(self)


def _log2_ceil(ratio: float) -> int:
    return math.ceil(math.log(ratio) / math.log(2.0))


# --- two-sided recursion ---------------------------------------------------

def _coefficient_rule(spec: QuadraticSequenceSpec, step_rule, rng) -> Callable[[int, float], float]:
    if callable(step_rule):
        return step_rule
    if step_rule == "lower":
        return lambda t, z: spec.m_lo
    if step_rule == "upper":
        return lambda t, z: spec.M_hi
    if step_rule == "random":
        rng = rng if rng is not None else np.random.default_rng(0)
        return lambda t, z: float(rng.uniform(spec.m_lo, spec.M_hi))
    raise ValueError(f"unknown step rule {step_rule!r}")


def simulate_hitting_time(spec: QuadraticSequenceSpec, step_rule="lower", target: float | None = None,
                          rng: np.random.Generator | None = None, cap: int = STEP_CAP) -> int:
    """First t with z_t >= target (default ``spec.upsilon``) under z <- z + c_t z^2.

    ``step_rule`` is ``"lower"``, ``"upper"``, ``"random"`` or a callable
    ``(t, z) -> c_t``; coefficients outside ``[m_lo, M_hi]`` are rejected.
    """
    target = spec.upsilon if target is None else target
    coef = _coefficient_rule(spec, step_rule, rng)
    z = spec.z0
    for t in range(cap + 1):
        if z >= target:
            return t
        c = coef(t, z)
        if not spec.m_lo <= c <= spec.M_hi:
            raise InvalidSpecError(f"coefficient {c} outside [{spec.m_lo}, {spec.M_hi}]")
        z = z + c * z * z
    raise NonTermination(f"z did not reach {target} within {cap} steps")


def bound_gd(spec: QuadraticSequenceSpec) -> float:
    """3 / (m z0) + (8 M / m) * ceil(log2(upsilon / z0))."""
    return 3.0 / (spec.m_lo * spec.z0) + 8.0 * spec.M_hi / spec.m_lo * _log2_ceil(spec.upsilon / spec.z0)


def bound_doubling(spec: QuadraticSequenceSpec) -> float:
    """Time bound for reaching 2 z0: 1 / (m z0) + 4 M / m."""
    return 1.0 / (spec.m_lo * spec.z0) + 4.0 * spec.M_hi / spec.m_lo


# --- sum-form recursion ----------------------------------------------------

def simulate_sum_form(spec: QuadraticSequenceSpec, perturbation="adversarial",
                      rng: np.random.Generator | None = None, cap: int = STEP_CAP) -> int:
    """Hitting time of z_t = z0 + A sum_{s<t} z_s^2 + e_t (t >= 1).

    ``"adversarial"`` takes e_t = -C at every step, the slowest trajectory the
    two-sided hypothesis allows; ``"random"`` draws e_t uniformly in [-C, C].
    """
    if perturbation == "random":
        rng = rng if rng is not None else np.random.default_rng(0)
    elif perturbation != "adversarial":
        raise ValueError(f"unknown perturbation {perturbation!r}")
    z, acc = spec.z0, 0.0
    for t in range(cap + 1):
        if z >= spec.upsilon:
            return t
        acc += z * z
        e = -spec.C if perturbation == "adversarial" else float(rng.uniform(-spec.C, spec.C))
        z = spec.z0 + spec.A * acc + e
    raise NonTermination(f"sum-form sequence did not reach {spec.upsilon} within {cap} steps")


def bound_sum(spec: QuadraticSequenceSpec) -> float:
    """8 * ceil(log2(upsilon / z0)) + 21 / (z0 A)."""
    return 8.0 * _log2_ceil(spec.upsilon / spec.z0) + 21.0 / (spec.z0 * spec.A)


# --- momentum recursion ----------------------------------------------------

def momentum_trajectory(spec: QuadraticSequenceSpec, steps: int, averaged: bool = False):
    """(c, G) arrays of length ``steps + 1`` starting from (z0, 0).

    ``averaged`` multiplies the quadratic drive by (1 - gamma), the
    normalization used by the GD+M buffer.
    """
    scale = (1.0 - spec.gamma) if averaged else 1.0
    c = np.empty(steps + 1)
    G = np.empty(steps + 1)
    c[0], G[0] = spec.z0, 0.0
    for t in range(steps):
        G[t + 1] = spec.gamma * G[t] - scale * spec.alpha3 * c[t] * c[t]
        c[t + 1] = c[t] - spec.eta * G[t + 1]
    return c, G


def simulate_momentum_tpm(spec: QuadraticSequenceSpec, averaged: bool = False, cap: int = STEP_CAP) -> int:
    scale = (1.0 - spec.gamma) if averaged else 1.0
    c, G = spec.z0, 0.0
    for t in range(cap + 1):
        if c >= spec.upsilon:
            return t
        G = spec.gamma * G - scale * spec.alpha3 * c * c
        c = c - spec.eta * G
    raise NonTermination(f"momentum sequence did not reach {spec.upsilon} within {cap} steps")


def bound_momentum(spec: QuadraticSequenceSpec, delta: float, relative: bool = False) -> float:
    """(1/(1-gamma)) ceil(log(upsilon) / log(1+delta)) + (1+delta) / (eta (1 - 1/e) alpha3 c0).

    With ``relative`` the logarithm is taken of ``upsilon / c0`` instead of
    ``upsilon``, mirroring the two-sided bound.
    """
    if not 0 < delta < 1:
        raise InvalidSpecError("delta must lie in (0, 1)")
    ratio = spec.upsilon / spec.z0 if relative else spec.upsilon
    steps = math.ceil(math.log(ratio) / math.log(1.0 + delta))
    return steps / (1.0 - spec.gamma) + (1.0 + delta) / (
        spec.eta * (1.0 - math.exp(-1.0)) * spec.alpha3 * spec.z0)


# --- sublinear decay -------------------------------------------------------

def check_sublinear(A: float, T_offset: int, x0: float, steps: int) -> bool:
    """Simulate x <- x - A x^2 from x(T_offset) = x0; test x(t) <= 1 / (A (t - T_offset))."""
    if not A > 0 or x0 < 0:
        raise InvalidSpecError("need A > 0 and x0 >= 0")
    if A * x0 > 1:
        raise InvalidSpecError("need A * x0 <= 1 for the sequence to stay non-negative")
    x = x0
    for k in range(1, steps + 1):
        x = x - A * x * x
        if x > 1.0 / (A * k):
            return False
    return True


# --- batch checking --------------------------------------------------------

def check_spec(spec: QuadraticSequenceSpec, rng: np.random.Generator | None = None) -> dict:
    """Simulate ``spec`` and compare with its bound.

    Momentum specs are checked against every delta in ``DELTA_GRID``; the
    report keeps the delta with the tightest passing bound. A momentum spec
    that fails the bound as printed (log of upsilon) but passes with the
    relative logarithm is marked ``flagged`` rather than failed.
    """
    report = {"spec": spec.to_dict()}
    try:
        if spec.mode == "two-sided":
            sims = [simulate_hitting_time(spec, rule, rng=rng) for rule in ("lower", "upper", "random")]
            report.update(simulated=max(sims), bound=bound_gd(spec))
            report["passed"] = report["simulated"] <= report["bound"]
        elif spec.mode == "sum-form":
            sims = [simulate_sum_form(spec, p, rng=rng) for p in ("adversarial", "random")]
            report.update(simulated=max(sims), bound=bound_sum(spec))
            report["passed"] = report["simulated"] <= report["bound"]
        else:
            hit = simulate_momentum_tpm(spec)
            printed = {dl: bound_momentum(spec, dl) for dl in DELTA_GRID}
            relative = {dl: bound_momentum(spec, dl, relative=True) for dl in DELTA_GRID}
            ok = [dl for dl in DELTA_GRID if hit <= printed[dl]]
            best = min(ok or DELTA_GRID, key=lambda dl: printed[dl])
            report.update(simulated=hit, bound=printed[best], best_delta=best,
                          bound_relative=relative[best])
            report["passed"] = len(ok) == len(DELTA_GRID)
            report["flagged"] = (not report["passed"]) and all(hit <= relative[dl] for dl in DELTA_GRID)
    except NonTermination as exc:
        report.update(simulated=None, passed=False, error=str(exc))
    return report


def random_spec(mode: str, rng: np.random.Generator) -> QuadraticSequenceSpec:
    """A random valid spec whose hitting time stays well below the step cap."""
    z0 = float(10 ** rng.uniform(-2, 0))
    upsilon = z0 * float(10 ** rng.uniform(0, 2))
    if mode == "two-sided":
        m_lo = float(10 ** rng.uniform(-1, 1))
        return QuadraticSequenceSpec(z0=z0, upsilon=upsilon, mode=mode,
                                     m_lo=m_lo, M_hi=m_lo * float(rng.uniform(1, 5)))
    if mode == "sum-form":
        return QuadraticSequenceSpec(z0=z0, upsilon=upsilon, mode=mode,
                                     A=float(10 ** rng.uniform(-1, 1)), C=float(rng.uniform(0, 0.5)) * z0)
    return QuadraticSequenceSpec(z0=z0, upsilon=upsilon, mode=mode, eta=float(10 ** rng.uniform(-1, 0.5)),
                                 gamma=float(rng.uniform(0.5, 0.99)), alpha3=float(10 ** rng.uniform(-1, 1)))


def tpm_suite(n_per_mode: int = 100, seed: int = 0) -> dict:
    """Random specs in every mode plus random sublinear instances; counts failures."""
    rng = make_rng(seed, 200)
    summary = {}
    for mode in MODES:
        reports = [check_spec(random_spec(mode, rng), rng) for _ in range(n_per_mode)]
        summary[mode] = {
            "n": n_per_mode,
            "failures": sum(1 for r in reports if not r["passed"] and not r.get("flagged", False)),
            "flagged": sum(1 for r in reports if r.get("flagged", False)),
        }
    sub_fail = 0
    for _ in range(n_per_mode):
        A = float(10 ** rng.uniform(-2, 1))
        x0 = float(rng.uniform(0, 1)) / A
        if not check_sublinear(A, int(rng.integers(0, 50)), x0, 2000):
            sub_fail += 1
    summary["sublinear"] = {"n": n_per_mode, "failures": sub_fail, "flagged": 0}
    summary["total_failures"] = sum(v["failures"] for v in summary.values() if isinstance(v, dict))
    return summary


def check_specs_file(in_path: str | Path, out_path: str | Path) -> list[dict]:
    """Read a JSON list of spec objects, write the per-spec report list."""
    with open(in_path) as fh:
        raw = json.load(fh)
    if not isinstance(raw, list):
        raise InvalidSpecError("spec file must contain a JSON list")
    reports = [check_spec(QuadraticSequenceSpec(**item)) for item in raw]
    with open(out_path, "w") as fh:
        json.dump(reports, fh, indent=2)
    return reports
