"""Linearised stability limit of the explicit tau-leap and its mesh level."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, LevelRangeError, NumericalError
from .model import ReactionNetwork, drift_jacobian


@dataclass(frozen=True)
class StabilityReport:
    eigenvalues: tuple[complex, ...]
    tau_limit: float  # math.inf when no eigenvalue has negative real part
    has_positive_real_part: bool
    ref_state: tuple[float, ...]

    @property
    def bounded(self) -> bool:
        return math.isfinite(self.tau_limit)


def tau_limit_from_eigenvalues(eigs) -> float:
    """``min(-2 Re(l) / |l|^2)`` over eigenvalues with negative real part."""
    lim = math.inf
    for lam in np.atleast_1d(np.asarray(eigs, dtype=complex)):
        if lam.real < 0:
            lim = min(lim, -2.0 * lam.real / abs(lam) ** 2)
    return lim


def _report_at(net: ReactionNetwork, y) -> StabilityReport:
    A = drift_jacobian(net, y)
    try:
        eigs = np.linalg.eigvals(A)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"eigenvalue computation failed: {exc}") from exc
    if not np.all(np.isfinite(eigs)):
        raise NumericalError("non-finite eigenvalues of the drift Jacobian")
    eigs = sorted((complex(e) for e in eigs), key=lambda z: (z.real, z.imag))
    return StabilityReport(
        eigenvalues=tuple(eigs),
        tau_limit=tau_limit_from_eigenvalues(eigs),
        has_positive_real_part=any(e.real > 0 for e in eigs),
        ref_state=tuple(float(v) for v in y),
    )


def ode_path(net: ReactionNetwork, n_steps: int = 4096) -> np.ndarray:
    """Explicit Euler path of the mean-field ODE ``y' = sum_j a_j(y) nu_j``.

    The nominal step ``T / n_steps`` is subdivided wherever it would exceed
    half of the local stability limit, so the path itself stays stable.
    Returns the states at the ``n_steps + 1`` nominal grid points.
    """
    nu = net.nu.astype(np.float64)
    h = net.T / n_steps
    y = np.asarray(net.x0, dtype=np.float64)
    out = np.empty((n_steps + 1, net.d))
    out[0] = y
    for k in range(n_steps):
        left = h
        while left > 0:
            lim = _report_at(net, y).tau_limit
            dt = min(left, 0.5 * lim)
            y = np.maximum(y + dt * (net.law(np.maximum(y, 0.0)) @ nu), 0.0)
            left -= dt
        out[k + 1] = y
    return out


def stability_report(net: ReactionNetwork, ref_state=None, along_ode: bool = False,
                     n_steps: int = 4096) -> StabilityReport:
    """Eigenvalues of the drift Jacobian and the explicit step-size limit.

    By default the Jacobian is taken at ``ref_state`` (``x0`` if omitted).
    With ``along_ode`` every grid state of :func:`ode_path` is examined and
    the report with the smallest limit is returned.
    """
    if along_ode:
        worst = None
        for y in ode_path(net, n_steps):
            r = _report_at(net, y)
            if worst is None or r.tau_limit < worst.tau_limit:
                worst = r
        return worst
    y = net.x0 if ref_state is None else ref_state
    y = np.asarray(y, dtype=np.float64)
    if y.shape != (net.d,):
        raise ConfigError(f"reference state must have length {net.d}")
    return _report_at(net, y)


def coarsest_stable_level(tau_limit: float, T: float, safety: float = 1.0, max_level: int = 60) -> int:
    """Smallest level ``l >= 0`` with ``T / 2**l < safety * tau_limit``."""
    if not 0 < safety <= 1:
        raise ConfigError(f"safety must lie in (0, 1], got {safety}")
    if not tau_limit > 0 or not T > 0:
        raise ConfigError("tau_limit and T must be positive")
    bound = safety * tau_limit
    for level in range(max_level + 1):
        if T / 2.0**level < bound:
            return level
    raise LevelRangeError(f"no level up to {max_level} resolves tau_limit {tau_limit:g}")
