"""Coupled fine/coarse leap paths sharing randomness through three-way rate splitting."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import _core
from .errors import ConfigError
from .kernels import DEFAULT_NEWTON, NewtonConfig, PathResult, as_generator, check_status
from .model import ReactionNetwork

KINDS = {"imp-imp": _core.IMP_IMP, "exp-imp": _core.EXP_IMP, "exp-exp": _core.EXP_EXP}


class SpeciesObservable:
    """g(x) = x_i for a fixed 0-based species index; vectorised over rows."""

    def __init__(self, index: int, name: str | None = None):
        self.index = int(index)
        self.name = name

    def __call__(self, x):
        x = np.asarray(x)
        return x[..., self.index].astype(np.float64)

    def __repr__(self):
        return f"SpeciesObservable({self.index}, {self.name!r})"

    def __eq__(self, other):
        return isinstance(other, SpeciesObservable) and other.index == self.index

    def __hash__(self):
        return hash(("species", self.index))


def observable(net: ReactionNetwork, spec=None) -> SpeciesObservable:
    """Resolve a species name or 1-based index into an observable.  Defaults to the last species."""
    if spec is None:
        return SpeciesObservable(net.d - 1, net.species[-1])
    if isinstance(spec, SpeciesObservable):
        return spec
    if isinstance(spec, str) and not spec.isdigit():
        i = net.index(spec)
        return SpeciesObservable(i, spec)
    i = int(spec) - 1
    if not 0 <= i < net.d:
        raise ConfigError(f"observable index {spec} outside 1..{net.d}")
    return SpeciesObservable(i, net.species[i])


def evaluate(g: Callable, X: np.ndarray) -> np.ndarray:
    """Apply ``g`` to each row of ``X``; observables that vectorise are called once."""
    if isinstance(g, SpeciesObservable):
        return g(X)
    return np.array([float(g(row)) for row in X], dtype=np.float64)


@dataclass(frozen=True)
class RateSplit:
    A1: np.ndarray
    A2: np.ndarray
    A3: np.ndarray


def split_rates(a_fine, a_coarse) -> RateSplit:
    """Common rate ``min(a_fine, a_coarse)`` plus the two non-negative residuals."""
    af = np.asarray(a_fine, dtype=np.float64)
    ac = np.asarray(a_coarse, dtype=np.float64)
    if np.any(af < 0) or np.any(ac < 0):
        raise ConfigError("rates must be non-negative")
    A1 = np.minimum(af, ac)
    return RateSplit(A1, af - A1, ac - A1)


@dataclass
class CoupledResult:
    fine: PathResult
    coarse: PathResult
    diff_g: float

    @property
    def fine_final(self) -> np.ndarray:
        return self.fine.final_state

    @property
    def coarse_final(self) -> np.ndarray:
        return self.coarse.final_state


def substeps(net: ReactionNetwork, h_fine: float) -> int:
    """Number of fine substeps; the fine mesh must nest in the coarse one."""
    if not h_fine > 0:
        raise ConfigError("h_fine must be positive")
    n = net.T / h_fine
    k = int(round(n))
    if k < 2 or k % 2 or abs(n - k) > 1e-9 * n:
        raise ConfigError(f"T/h_fine = {n:g} must be an even integer")
    return k


def coupled_finals(net: ReactionNetwork, kind: str, n: int, h_fine: float, rng,
                   cfg: NewtonConfig = DEFAULT_NEWTON):
    """Final states of ``n`` coupled pairs.

    Returns ``(fine, coarse, fine_counters, coarse_counters)`` where counters
    are ``[steps, poisson_draws, newton_iters, negativity_events]``.  Shared
    Poisson draws are booked on the fine leg.
    """
    if kind not in KINDS:
        raise ConfigError(f"unknown coupling kind {kind!r}")
    nsteps = substeps(net, h_fine)
    fine = np.empty((n, net.d), np.int64)
    coarse = np.empty((n, net.d), np.int64)
    fc = np.zeros(4, np.int64)
    cc = np.zeros(4, np.int64)
    st, _ = _core.run_coupled(KINDS[kind], fine, coarse, np.asarray(net.x0, np.int64), float(h_fine), nsteps,
                              as_generator(rng), *cfg.args(), _core.pack(net), fc, cc)
    check_status(st, f"{kind} coupling")
    return fine, coarse, fc, cc


def _one(net, kind, h_fine, rng, cfg, g) -> CoupledResult:
    g = observable(net) if g is None else g
    fine, coarse, fc, cc = coupled_finals(net, kind, 1, h_fine, rng, cfg)
    legs = [PathResult(x[0], int(c[0]), int(c[1]), int(c[2]), int(c[3])) for x, c in ((fine, fc), (coarse, cc))]
    return CoupledResult(legs[0], legs[1], float(evaluate(g, fine)[0] - evaluate(g, coarse)[0]))


def coupled_ssi_ssi(net: ReactionNetwork, h_fine: float, rng, cfg: NewtonConfig = DEFAULT_NEWTON,
                    g=None) -> CoupledResult:
    """SSI-TL fine path (step ``h_fine``) coupled with an SSI-TL coarse path (step ``2 h_fine``)."""
    return _one(net, "imp-imp", h_fine, rng, cfg, g)


def coupled_exp_ssi(net: ReactionNetwork, h_fine: float, rng, cfg: NewtonConfig = DEFAULT_NEWTON,
                    g=None) -> CoupledResult:
    """Explicit-TL fine path coupled with an SSI-TL coarse path."""
    return _one(net, "exp-imp", h_fine, rng, cfg, g)


def coupled_exp_exp(net: ReactionNetwork, h_fine: float, rng, g=None) -> CoupledResult:
    """Two explicit-TL paths on consecutive meshes."""
    return _one(net, "exp-exp", h_fine, rng, DEFAULT_NEWTON, g)
