"""Level statistics, log-linear extrapolation, finest-level selection and sample allocation."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from ..errors import ConfigError, FitError, LevelRangeError


@dataclass
class LevelStats:
    level: int
    coupling_kind: str
    mean_diff: float
    var_diff: float
    cost: float  # work-proxy units per sample per fine step
    n_samples: int
    bootstrap_cv: float = math.nan
    converged: bool = True
    kurtosis: float = math.nan
    work: int = 0
    negativity_events: int = 0
    values: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.var_diff < 0:
            raise ConfigError("variance must be non-negative")

    @property
    def std_error(self) -> float:
        return math.sqrt(self.var_diff / self.n_samples) if self.n_samples > 0 else math.inf

    def bias_bound(self, z: float = 2.0) -> float:
        """Upper confidence bound ``|mean| + z * SE`` for the level correction."""
        return abs(self.mean_diff) + z * self.std_error


@dataclass(frozen=True)
class Extrapolation:
    levels: tuple[int, ...]
    bias: tuple[float, ...]
    var: tuple[float, ...]
    bias_slope: float
    bias_intercept: float
    var_slope: float
    var_intercept: float

    def bias_at(self, level: int) -> float:
        return float(2.0 ** (self.bias_intercept + self.bias_slope * level))

    def var_at(self, level: int) -> float:
        return float(2.0 ** (self.var_intercept + self.var_slope * level))

    def as_dict(self) -> dict[int, tuple[float, float]]:
        return {lv: (b, v) for lv, b, v in zip(self.levels, self.bias, self.var)}


def _loglin(levels, values, what: str) -> tuple[float, float]:
    levels = np.asarray(levels, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    ok = np.isfinite(values) & (values > 0)
    if ok.sum() < 3:
        raise FitError(f"need at least 3 levels with positive {what}, got {int(ok.sum())}")
    slope, intercept = np.polyfit(levels[ok], np.log2(values[ok]), 1)
    return float(slope), float(intercept)


def fit_and_extrapolate(stats: Sequence[LevelStats], target_levels: Sequence[int]) -> Extrapolation:
    """Least-squares fit of ``log2|mean_diff|`` and ``log2 var_diff`` against level.

    Levels with non-positive entries are left out of the respective fit.
    """
    lv = [s.level for s in stats]
    bs, bi = _loglin(lv, [abs(s.mean_diff) for s in stats], "bias")
    vs, vi = _loglin(lv, [s.var_diff for s in stats], "variance")
    targets = tuple(int(t) for t in target_levels)
    return Extrapolation(
        levels=targets,
        bias=tuple(float(2.0 ** (bi + bs * t)) for t in targets),
        var=tuple(float(2.0 ** (vi + vs * t)) for t in targets),
        bias_slope=bs,
        bias_intercept=bi,
        var_slope=vs,
        var_intercept=vi,
    )


def select_finest_level(TOL: float, theta: float, bias: Mapping[int, float]) -> int:
    """Smallest level whose bias estimate satisfies ``|bias| < (1 - theta) TOL`` strictly."""
    if not TOL > 0:
        raise ConfigError("TOL must be positive")
    if not 0 < theta < 1:
        raise ConfigError("theta must lie in (0, 1)")
    bound = (1.0 - theta) * TOL
    for level in sorted(bias):
        if abs(bias[level]) < bound:
            return int(level)
    raise LevelRangeError(f"no candidate level has |bias| below {bound:g}")


def allocate_samples(V, C, h, TOL: float, theta: float = 0.5, C_alpha: float = 1.96) -> np.ndarray:
    """Sample counts minimising ``sum C N / h`` subject to ``C_alpha sqrt(sum V / N) <= theta TOL``.

    ``N_l = ceil((C_alpha / (theta TOL))^2 sqrt(V_l h_l / C_l) sum_k sqrt(V_k C_k / h_k))``,
    floored at 1.
    """
    V = np.asarray(V, dtype=np.float64)
    C = np.asarray(C, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64)
    if not (V.shape == C.shape == h.shape) or V.ndim != 1:
        raise ConfigError("V, C and h must be 1-d arrays of equal length")
    if np.any(V < 0) or np.any(C <= 0) or np.any(h <= 0):
        raise ConfigError("need V >= 0, C > 0 and h > 0")
    if not TOL > 0 or not 0 < theta < 1 or not C_alpha > 0:
        raise ConfigError("need TOL > 0, theta in (0, 1) and C_alpha > 0")
    scale = (C_alpha / (theta * TOL)) ** 2 * np.sqrt(V * C / h).sum()
    N = np.ceil(scale * np.sqrt(V * h / C))
    return np.maximum(N, 1).astype(np.int64)


def stat_error_bound(V, N, C_alpha: float = 1.96) -> float:
    V = np.asarray(V, dtype=np.float64)
    N = np.asarray(N, dtype=np.float64)
    return float(C_alpha * math.sqrt(float((V / N).sum())))


def work(C, N, h) -> float:
    return float((np.asarray(C, float) * np.asarray(N, float) / np.asarray(h, float)).sum())
