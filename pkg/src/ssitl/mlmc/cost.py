"""Per-step cost model of single and coupled steps and its calibration."""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass
from typing import Callable

import numpy as np

from ..coupling import SpeciesObservable
from ..errors import ConfigError
from ..kernels import DEFAULT_NEWTON, NewtonConfig
from ..model import ReactionNetwork
from .sampling import CALIBRATION, run_batch

COST_KINDS = ("single-explicit", "single-implicit", "imp-imp", "exp-imp", "exp-exp")


@dataclass(frozen=True)
class CostModel:
    """``C_i = C_P + C_N``, ``C_ii = gamma C_i``, ``C_ie = eta C_i``, ``C_ee = beta C_P``."""

    C_P: float
    C_N: float
    gamma: float
    eta: float
    beta: float
    source: str = "proxy"

    def __post_init__(self):
        for name in ("C_P", "C_N", "gamma", "eta", "beta"):
            v = getattr(self, name)
            if not (v > 0 and np.isfinite(v)):
                raise ConfigError(f"cost model field {name} must be positive, got {v}")

    def step_cost(self, kind: str) -> float:
        ci = self.C_P + self.C_N
        costs = {
            "single-explicit": self.C_P,
            "single-implicit": ci,
            "imp-imp": self.gamma * ci,
            "exp-imp": self.eta * ci,
            "exp-exp": self.beta * self.C_P,
        }
        if kind not in costs:
            raise ConfigError(f"unknown kind {kind!r}")
        return costs[kind]

    def as_dict(self) -> dict:
        return asdict(self)


def fixed_newton_model(J: int, iterations: int) -> CostModel:
    """Exact proxy model when every implicit solve takes ``iterations`` linear solves.

    A coupled step books ``3J`` draws; the coarse solve happens every other fine step.
    """
    C_P, C_N = float(J), float(iterations)
    ci = C_P + C_N
    return CostModel(C_P, C_N, (3 * J + 1.5 * iterations) / ci, (3 * J + 0.5 * iterations) / ci, 3.0, "proxy")


def fit_cost_model(measurements: dict[str, list[float]], source: str) -> CostModel:
    """Least-squares fit of the Table-style cost model to per-step measurements.

    Each model equation has a single unknown once ``C_P`` and ``C_P + C_N``
    are fixed, so the least-squares solution is the ratio of means.
    """
    missing = [k for k in COST_KINDS if not measurements.get(k)]
    if missing:
        raise ConfigError(f"missing cost measurements for {missing}")
    m = {k: float(np.mean(v)) for k, v in measurements.items()}
    C_P = m["single-explicit"]
    ci = m["single-implicit"]
    # keep C_N strictly positive when the Newton share is below measurement noise;
    # the multipliers stay relative to the measured implicit step cost
    C_N = max(ci - C_P, 1e-9 * C_P)
    return CostModel(C_P, C_N, m["imp-imp"] / ci, m["exp-imp"] / ci, m["exp-exp"] / C_P, source)


Runner = Callable[[str, int, int], tuple[float, float]]


def calibrate_cost_model(net: ReactionNetwork, levels: dict[str, list[int]] | None = None, n_paths: int = 64,
                         cfg: NewtonConfig = DEFAULT_NEWTON, seed: int = 0, mode: str = "proxy",
                         runner: Runner | None = None, min_steps: int = 1000) -> CostModel:
    """Measure per-step cost of every kind and fit the cost model.

    ``mode="proxy"`` counts Poisson draws plus Newton linear solves;
    ``mode="wall"`` uses elapsed time and falls back to the proxy when the
    timer resolution is too coarse for the measured intervals.  ``runner``
    replaces the built-in measurement: it is called as ``runner(kind, level,
    n_steps)`` and returns ``(seconds, proxy_units)`` for ``n_steps`` steps.
    """
    if mode not in ("proxy", "wall"):
        raise ConfigError(f"unknown calibration mode {mode!r}")
    if levels is None:
        from ..stability import coarsest_stable_level, stability_report

        lim = stability_report(net).tau_limit
        lc = coarsest_stable_level(lim, net.T) if np.isfinite(lim) else 0
        levels = {k: [max(lc, 0) + 1] for k in COST_KINDS}
    g = SpeciesObservable(0)

    def measure(kind, level):
        if runner is not None:
            secs, units = runner(kind, level, min_steps)
            return secs, units, min_steps
        per_path = 2**level
        n = max(n_paths, -(-min_steps // per_path))
        t0 = time.perf_counter()
        acc = run_batch(net, kind, level, g, n, seed, CALIBRATION, 0, cfg)
        return time.perf_counter() - t0, float(acc.work), n * per_path

    wall: dict[str, list[float]] = {k: [] for k in COST_KINDS}
    proxy: dict[str, list[float]] = {k: [] for k in COST_KINDS}
    elapsed = []
    for kind in COST_KINDS:
        for level in levels[kind]:
            secs, units, steps = measure(kind, level)
            wall[kind].append(secs / steps)
            proxy[kind].append(units / steps)
            elapsed.append(secs)
    if mode == "wall":
        resolution = time.get_clock_info("perf_counter").resolution
        if min(elapsed) > 1000 * resolution:
            return fit_cost_model(wall, "wall")
    return fit_cost_model(proxy, "proxy")
