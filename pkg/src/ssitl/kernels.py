"""Single-path simulation: SSA, explicit tau-leap, split-step implicit tau-leap
and the rounding drift-implicit baseline.

The step functions are thin wrappers over the compiled kernels in
:mod:`ssitl._core`, so a path assembled from repeated ``ssi_tl_step`` calls
consumes exactly the same random draws as :func:`simulate_path`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from . import _core
from .errors import (
    BudgetError,
    ConfigError,
    LinearSolveError,
    NewtonConvergenceError,
    PoissonOverflowError,
)
from .model import ReactionNetwork, _check_dim

Method = Literal["ssa", "explicit", "ssi", "rounding-implicit"]
METHODS: dict[str, int] = {
    "ssa": _core.METHOD_SSA,
    "explicit": _core.METHOD_EXPLICIT,
    "ssi": _core.METHOD_SSI,
    "rounding-implicit": _core.METHOD_ROUNDING,
}


@dataclass(frozen=True)
class NewtonConfig:
    """Newton iteration for the drift-implicit solve.

    In ``"tolerance"`` mode iteration stops once
    ``tau * max_j |nu_j|_inf * |a_j(y_prev) - a_j(y)|`` drops below
    ``tol * (1 + |a(z)|_inf * tau)``; ``max_iters`` is then a hard cap.  In
    ``"fixed"`` mode exactly ``max_iters`` iterations run.
    """

    mode: Literal["tolerance", "fixed"] = "tolerance"
    max_iters: int = 50
    tol: float = 1e-8
    initial_guess: Literal["current", "initial"] = "current"

    def __post_init__(self):
        if self.mode not in ("tolerance", "fixed"):
            raise ConfigError(f"unknown Newton mode {self.mode!r}")
        if self.initial_guess not in ("current", "initial"):
            raise ConfigError(f"unknown Newton initial guess {self.initial_guess!r}")
        if int(self.max_iters) < 1:
            raise ConfigError("max_iters must be >= 1")
        if not self.tol > 0:
            raise ConfigError("tol must be positive")

    @classmethod
    def fixed(cls, iterations: int = 3, initial_guess="current") -> "NewtonConfig":
        return cls(mode="fixed", max_iters=iterations, initial_guess=initial_guess)

    def args(self):
        return (self.mode == "fixed", int(self.max_iters), float(self.tol), self.initial_guess == "initial")


DEFAULT_NEWTON = NewtonConfig()


@dataclass
class PathResult:
    final_state: np.ndarray
    steps: int
    poisson_draws: int
    newton_iters_total: int
    negativity_events: int
    times: np.ndarray | None = field(default=None, repr=False)
    trajectory: np.ndarray | None = field(default=None, repr=False)

    def __eq__(self, other):
        if not isinstance(other, PathResult):
            return NotImplemented
        same = (
            np.array_equal(self.final_state, other.final_state)
            and (self.steps, self.poisson_draws, self.newton_iters_total, self.negativity_events)
            == (other.steps, other.poisson_draws, other.newton_iters_total, other.negativity_events)
        )
        for a, b in ((self.times, other.times), (self.trajectory, other.trajectory)):
            same = same and ((a is None and b is None) or (a is not None and b is not None and np.array_equal(a, b)))
        return same


def as_generator(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


def check_status(status: int, what: str = "") -> None:
    if status == _core.OK:
        return
    where = f" in {what}" if what else ""
    if status == _core.SINGULAR:
        raise LinearSolveError(f"singular Newton matrix{where}")
    if status == _core.NO_CONVERGENCE:
        raise NewtonConvergenceError(f"Newton iteration did not converge{where}")
    if status == _core.OVERFLOW:
        raise PoissonOverflowError(f"propensity overflow: Poisson mean above {_core.MAX_POISSON_MEAN:g}{where}")
    if status == _core.BUDGET:
        raise BudgetError(f"event budget exceeded{where}")
    raise RuntimeError(f"unknown kernel status {status}")


def mesh(T: float, h: float) -> tuple[int, float]:
    """Number of steps and final step length for a uniform mesh of [0, T]."""
    if not h > 0:
        raise ConfigError(f"step size must be positive, got {h}")
    ratio = T / h
    nfull = math.floor(ratio + 1e-9)
    if nfull == 0:
        return 1, T
    rem = T - nfull * h
    if rem > 1e-12 * T:
        return nfull + 1, rem
    return nfull, h


def level_step(net: ReactionNetwork, level: int) -> float:
    return net.T / 2.0**level


def _x(net, x):
    _check_dim(net, x)
    return np.array(x, dtype=np.int64)


def _leap(method: int, net, x, tau, rng, cfg: NewtonConfig) -> np.ndarray:
    if not tau > 0:
        raise ConfigError(f"tau must be positive, got {tau}")
    x = _x(net, x)
    packed = _core.pack(net)
    bufs = _core._buffers(net.J, net.d)
    counters = np.zeros(4, np.int64)
    st = _core.step(method, x, float(tau), as_generator(rng), *cfg.args(), np.asarray(net.x0, np.int64),
                    packed, bufs, np.empty(net.J), counters)
    check_status(st)
    return x


def explicit_tl_step(net: ReactionNetwork, x, tau: float, rng) -> np.ndarray:
    """One explicit tau-leap: ``x + sum_j Poisson(a_j(x) tau) nu_j``, negatives projected to 0."""
    return _leap(_core.METHOD_EXPLICIT, net, x, tau, rng, DEFAULT_NEWTON)


def ssi_tl_step(net: ReactionNetwork, x, tau: float, rng, cfg: NewtonConfig = DEFAULT_NEWTON) -> np.ndarray:
    """One split-step implicit tau-leap.

    Solves the drift-implicit equation for the real intermediate state ``y``
    and then fires ``Poisson(a_j(y) tau)`` counts from ``x``, so the result
    stays on the integer lattice.
    """
    return _leap(_core.METHOD_SSI, net, x, tau, rng, cfg)


def rounding_drift_implicit_step(net: ReactionNetwork, x, tau: float, rng, cfg: NewtonConfig = DEFAULT_NEWTON,
                                 poisson=None) -> np.ndarray:
    """Drift-implicit tau-leap with explicit noise and rounded firing counts.

    ``poisson`` optionally fixes the Poisson draws ``P_j(a_j(x) tau)``
    (one non-negative integer per channel) instead of sampling them.
    """
    if not tau > 0:
        raise ConfigError(f"tau must be positive, got {tau}")
    x = _x(net, x)
    forced = np.full(net.J, -1, np.int64)
    if poisson is not None:
        forced[:] = np.asarray(poisson, dtype=np.int64)
        if np.any(forced < 0):
            raise ConfigError("forced Poisson counts must be non-negative")
    counters = np.zeros(4, np.int64)
    st = _core.rounding_step(x, float(tau), as_generator(rng), forced, *cfg.args(), np.asarray(net.x0, np.int64),
                             _core.pack(net), _core._buffers(net.J, net.d), np.empty(net.J), counters)
    check_status(st, "rounding drift-implicit step")
    if np.any(x < 0):
        np.maximum(x, 0, out=x)
    return x


def newton_solve_drift(net: ReactionNetwork, z, tau: float, cfg: NewtonConfig = DEFAULT_NEWTON,
                       full_output: bool = False):
    """Solve ``y = z + tau * sum_j a_j(y) nu_j`` by Newton's method.

    Each iteration solves ``(I - tau * drift_jacobian(y)) delta = residual``
    by a dense pivoted factorisation.  With ``full_output`` the iteration
    count is returned alongside ``y``.
    """
    _check_dim(net, z)
    if tau < 0:
        raise ConfigError("tau must be non-negative")
    coef, exps, chan, nu, nu_f, nu_inf = _core.pack(net)
    zf = np.asarray(z, dtype=np.float64).copy()
    fixed, max_iters, tol_rel, guess_x0 = cfg.args()
    a = net.law(zf)
    tol = tol_rel * (1.0 + np.abs(a).max() * tau)
    y = np.asarray(net.x0, dtype=np.float64).copy() if guess_x0 else zf.copy()
    J, d = net.J, net.d
    iters, st = _core.newton(zf, float(tau), y, fixed, max_iters, tol, coef, exps, chan, nu_f, nu_inf,
                             np.empty(J), np.empty(J), np.empty((J, d)), np.empty((d, d)), np.empty(d))
    check_status(st, "drift-implicit solve")
    return (y, iters) if full_output else y


def ssa_path(net: ReactionNetwork, rng, record: bool = False, n_record: int = 201,
             max_events: int = 10**9) -> PathResult:
    """Exact Gillespie path on [0, T].

    With ``record`` the piecewise-constant path is sampled at ``n_record``
    equally spaced times including 0 and T.
    """
    grid = np.linspace(0.0, net.T, n_record) if record else np.empty(0)
    rec = np.zeros((1, len(grid), net.d), np.int64)
    out = np.empty((1, net.d), np.int64)
    counters = np.zeros(4, np.int64)
    st, _ = _core.run_ssa(out, np.asarray(net.x0, np.int64), net.T, as_generator(rng), int(max_events), grid,
                          rec, _core.pack(net), counters)
    check_status(st, "SSA")
    return PathResult(out[0], int(counters[0]), int(counters[1]), 0, 0,
                      times=grid if record else None, trajectory=rec[0] if record else None)


def simulate_path(net: ReactionNetwork, method: Method, h: float | None, rng,
                  cfg: NewtonConfig = DEFAULT_NEWTON, record: bool = False) -> PathResult:
    """Run one path of ``method`` on the uniform mesh of [0, T] with step ``h``.

    The last step is shortened to land on T.  ``h`` is ignored for ``"ssa"``.
    """
    if method not in METHODS:
        raise ConfigError(f"unknown method {method!r}")
    if method == "ssa":
        return ssa_path(net, rng, record=record)
    nsteps, tau_last = mesh(net.T, h)
    gen = as_generator(rng)
    counters = np.zeros(4, np.int64)
    x0 = np.asarray(net.x0, np.int64)
    if record:
        traj = np.empty((nsteps + 1, net.d), np.int64)
        st = _core.run_trajectory(METHODS[method], traj, x0, float(h), nsteps, float(tau_last), gen, *cfg.args(),
                                  _core.pack(net), counters)
        check_status(st, f"{method} path")
        times = np.minimum(np.arange(nsteps + 1) * float(h), net.T)
        times[-1] = net.T
        final = traj[-1].copy()
    else:
        out = np.empty((1, net.d), np.int64)
        st, _ = _core.run_paths(METHODS[method], out, x0, float(h), nsteps, float(tau_last), gen, *cfg.args(),
                                _core.pack(net), counters)
        check_status(st, f"{method} path")
        final, times, traj = out[0], None, None
    return PathResult(final, int(counters[0]), int(counters[1]), int(counters[2]), int(counters[3]),
                      times=times, trajectory=traj)


def simulate_finals(net: ReactionNetwork, method: Method, n: int, h: float | None, rng,
                    cfg: NewtonConfig = DEFAULT_NEWTON) -> tuple[np.ndarray, np.ndarray]:
    """Final states of ``n`` independent paths plus summed counters
    ``[steps, poisson_draws, newton_iters, negativity_events]``."""
    gen = as_generator(rng)
    out = np.empty((n, net.d), np.int64)
    counters = np.zeros(4, np.int64)
    x0 = np.asarray(net.x0, np.int64)
    if method == "ssa":
        st, _ = _core.run_ssa(out, x0, net.T, gen, 10**9, np.empty(0), np.zeros((n, 0, net.d), np.int64),
                              _core.pack(net), counters)
    else:
        nsteps, tau_last = mesh(net.T, h)
        st, _ = _core.run_paths(METHODS[method], out, x0, float(h), nsteps, float(tau_last), gen, *cfg.args(),
                                _core.pack(net), counters)
    check_status(st, f"{method} paths")
    return out, counters
