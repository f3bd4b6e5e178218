"""Deterministic batched sampling of single and coupled paths.

Every batch draws from its own stream keyed by ``(seed, purpose, kind, level,
batch)``.  Batches have a fixed size and are merged in batch order, so
results are bit-identical whatever the number of worker processes.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ..coupling import coupled_finals, evaluate
from ..errors import ConfigError
from ..kernels import DEFAULT_NEWTON, NewtonConfig, simulate_finals
from ..model import ReactionNetwork

KIND_IDS = {"single-implicit": 0, "imp-imp": 1, "exp-imp": 2, "exp-exp": 3, "single-explicit": 4}
SINGLE_METHOD = {"single-implicit": "ssi", "single-explicit": "explicit"}

# purpose tags keep pilot, production, calibration and bootstrap streams disjoint
PILOT, PRODUCTION, CALIBRATION, BOOTSTRAP, TOPUP = 1, 2, 3, 4, 5


def stream(seed: int, purpose: int, kind: str, level: int, batch: int) -> np.random.Generator:
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(purpose), KIND_IDS[kind], int(level), int(batch)))
    return np.random.Generator(np.random.PCG64(ss))


@dataclass
class Accumulator:
    """Count, mean, centred sum of squares, extremes and work counters of a sample."""

    n: int = 0
    mean: float = 0.0
    m2: float = 0.0
    min: float = math.inf
    max: float = -math.inf
    # steps, poisson draws, newton solves, negativity events (both legs)
    counters: np.ndarray = field(default_factory=lambda: np.zeros(4, np.int64))
    values: np.ndarray | None = None

    @classmethod
    def of(cls, values: np.ndarray, counters, keep: bool = False) -> "Accumulator":
        values = np.asarray(values, dtype=np.float64)
        n = values.size
        if n == 0:
            return cls(counters=np.asarray(counters, np.int64).copy())
        mean = float(values.mean())
        return cls(n, mean, float(((values - mean) ** 2).sum()), float(values.min()), float(values.max()),
                   np.asarray(counters, np.int64).copy(), values if keep else None)

    def merge(self, other: "Accumulator") -> "Accumulator":
        n = self.n + other.n
        if other.n == 0:
            out = Accumulator(self.n, self.mean, self.m2, self.min, self.max)
        elif self.n == 0:
            out = Accumulator(other.n, other.mean, other.m2, other.min, other.max)
        else:
            delta = other.mean - self.mean
            out = Accumulator(
                n,
                self.mean + delta * other.n / n,
                self.m2 + other.m2 + delta * delta * self.n * other.n / n,
                min(self.min, other.min),
                max(self.max, other.max),
            )
        out.counters = self.counters + other.counters
        if self.values is not None or other.values is not None:
            parts = [v for v in (self.values, other.values) if v is not None]
            out.values = np.concatenate(parts)
        return out

    @property
    def var(self) -> float:
        """Unbiased sample variance (0 for fewer than two samples)."""
        return self.m2 / (self.n - 1) if self.n > 1 else 0.0

    @property
    def work(self) -> int:
        """Work proxy: Poisson draws plus Newton linear solves."""
        return int(self.counters[1] + self.counters[2])


def check_level(kind: str, level: int) -> None:
    if kind not in KIND_IDS:
        raise ConfigError(f"unknown sample kind {kind!r}")
    if level < (0 if kind in SINGLE_METHOD else 1):
        raise ConfigError(f"level {level} invalid for {kind}")


def run_batch(net: ReactionNetwork, kind: str, level: int, g, n: int, seed: int, purpose: int, batch: int,
              cfg: NewtonConfig = DEFAULT_NEWTON, keep: bool = False) -> Accumulator:
    """``n`` samples of ``g`` (single kinds) or ``g(fine) - g(coarse)`` (coupled kinds)."""
    gen = stream(seed, purpose, kind, level, batch)
    h = net.T / 2.0**level
    if kind in SINGLE_METHOD:
        X, counters = simulate_finals(net, SINGLE_METHOD[kind], n, h, gen, cfg)
        values = evaluate(g, X)
    else:
        fine, coarse, fc, cc = coupled_finals(net, kind, n, h, gen, cfg)
        values = evaluate(g, fine) - evaluate(g, coarse)
        counters = fc + cc
    return Accumulator.of(values, counters, keep)


def _run_batch_args(args):
    return run_batch(*args)


def batch_sizes(n: int, batch: int) -> list[int]:
    full, rest = divmod(int(n), int(batch))
    return [batch] * full + ([rest] if rest else [])


def sample(net: ReactionNetwork, kind: str, level: int, g, n: int, seed: int, purpose: int = PRODUCTION,
           cfg: NewtonConfig = DEFAULT_NEWTON, batch: int = 10_000, first_batch: int = 0, workers: int = 1,
           keep: bool = False, executor=None) -> Accumulator:
    """Draw ``n`` samples in batches ``first_batch, first_batch + 1, ...`` and merge them in order."""
    check_level(kind, level)
    if n < 0 or batch < 1:
        raise ConfigError("sample count must be >= 0 and batch size >= 1")
    tasks = [(net, kind, level, g, m, seed, purpose, first_batch + i, cfg, keep)
             for i, m in enumerate(batch_sizes(n, batch))]
    acc = Accumulator(values=np.empty(0) if keep else None)
    if not tasks:
        return acc
    if executor is not None:
        results = executor.map(_run_batch_args, tasks)
    elif workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_batch_args, tasks))
    else:
        results = map(_run_batch_args, tasks)
    for r in results:
        acc = acc.merge(r)
    return acc
