"""Multilevel hybrid SSI-TL / explicit-TL estimator.

The hierarchy for interface level ``L_int`` is

* a single SSI-TL level at ``L_c_imp``,
* SSI-TL/SSI-TL couplings on ``L_c_imp + 1 .. L_int - 1``,
* an explicit/SSI-TL coupling at ``L_int``,
* explicit/explicit couplings on ``L_int + 1 .. L``.

When the finest level needed by the bias criterion does not exceed the
explicit method's coarsest stable level, the hierarchy is pure SSI-TL.
"""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np
from scipy import stats as sps

from ..coupling import observable
from ..errors import ConfigError, FitError, LevelRangeError, SSITLError, StageError
from ..kernels import DEFAULT_NEWTON, NewtonConfig
from ..model import ReactionNetwork
from ..stability import coarsest_stable_level, stability_report
from .cost import CostModel, calibrate_cost_model
from .fitting import (
    LevelStats,
    allocate_samples,
    fit_and_extrapolate,
    select_finest_level,
    stat_error_bound,
)
from .sampling import BOOTSTRAP, PILOT, PRODUCTION, TOPUP, Accumulator, sample, stream

log = logging.getLogger(__name__)

MODES = ("auto", "ssi", "hybrid", "explicit", "mc")


@dataclass(frozen=True)
class EstimatorConfig:
    theta: float = 0.5
    C_alpha: float = 1.96
    L_c_imp: int = 0
    safety: float = 1.0
    mode: str = "auto"
    L_int: int | None = None  # forces the interface level in hybrid mode
    target_cv: float = 0.1
    batch: int = 10_000
    pilot_budget: int = 1_000_000
    bias_z: float = 2.0
    pilot_levels: int = 3
    measure_above_exp: int = 2  # implicit and mixed couplings are measured up to L_c_exp + this
    max_level: int = 30
    max_topups: int = 5
    n_bootstrap: int = 200
    cost_mode: str = "proxy"
    cost_model: CostModel | None = None
    newton: NewtonConfig = DEFAULT_NEWTON
    workers: int = 1
    control_variate: Callable | None = None  # reserved; not applied

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}")
        if not 0 < self.theta < 1:
            raise ConfigError("theta must lie in (0, 1)")
        if not self.C_alpha > 0:
            raise ConfigError("C_alpha must be positive")
        if self.L_c_imp < 0:
            raise ConfigError("L_c_imp must be >= 0")
        if self.batch < 1 or self.pilot_budget < self.batch:
            raise ConfigError("need batch >= 1 and pilot_budget >= batch")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")


def bootstrap_cv(values: np.ndarray, rng: np.random.Generator, n_resamples: int = 200) -> float:
    """Coefficient of variation of the sample variance, by bootstrap."""
    values = np.asarray(values, dtype=np.float64)
    if values.size < 2:
        return math.inf
    v = values.var(ddof=1)
    if v == 0:
        return 0.0
    res = sps.bootstrap((values,), lambda x, axis: np.var(x, ddof=1, axis=axis), n_resamples=n_resamples,
                        vectorized=True, method="percentile", rng=rng,
                        batch=max(1, int(2e7 // values.size)))
    return float(res.standard_error / v)


def _kurtosis(values) -> float:
    if values is None or values.size < 2:
        return math.nan
    c = values - values.mean()
    m2 = (c**2).mean()
    return float((c**4).mean() / m2**2) if m2 > 0 else math.nan


def _stats_from(acc: Accumulator, level: int, kind: str, cv: float, converged: bool) -> LevelStats:
    steps = acc.n * 2**level
    return LevelStats(
        level=level,
        coupling_kind=kind,
        mean_diff=acc.mean,
        var_diff=acc.var,
        cost=acc.work / steps if steps else math.nan,
        n_samples=acc.n,
        bootstrap_cv=cv,
        converged=converged,
        kurtosis=_kurtosis(acc.values),
        work=acc.work,
        negativity_events=int(acc.counters[3]),
        values=acc.values,
    )


def estimate_level_stats(net: ReactionNetwork, level: int, kind: str, g=None, seed: int = 0,
                         target_cv: float = 0.1, batch: int = 10_000, budget: int = 1_000_000,
                         cfg: NewtonConfig = DEFAULT_NEWTON, workers: int = 1, n_bootstrap: int = 200,
                         min_samples: int = 0, _acc: Accumulator | None = None) -> LevelStats:
    """Sample ``kind`` at ``level`` in batches until the bootstrap CV of the
    variance reaches ``target_cv`` (and at least ``min_samples`` are drawn)
    or ``budget`` samples are spent.
    """
    g = observable(net) if g is None else g
    acc = _acc if _acc is not None else Accumulator(values=np.empty(0))
    want = max(batch, min_samples) if _acc is None else max(acc.n, min_samples)
    rnd = 0
    while True:
        want = min(want, budget)
        if want > acc.n:
            nb = -(-acc.n // batch)
            more = sample(net, kind, level, g, want - acc.n, seed, PILOT, cfg, batch, nb, workers, keep=True)
            acc = acc.merge(more)
        cv = bootstrap_cv(acc.values, stream(seed, BOOTSTRAP, kind, level, rnd), n_bootstrap)
        rnd += 1
        done = cv <= target_cv and acc.n >= min_samples
        if done or acc.n >= budget:
            return _stats_from(acc, level, kind, cv, done)
        grow = (cv / target_cv) ** 2 if math.isfinite(cv) else 2.0
        want = max(int(math.ceil(acc.n * min(grow * 1.1, 16.0))), acc.n + batch, min_samples)


class StatsProvider:
    """Pilot statistics measured on demand and cached, with log-linear
    extrapolation above the highest measured level of each coupling kind."""

    def __init__(self, net: ReactionNetwork, g, config: EstimatorConfig, seed: int):
        self.net, self.g, self.config, self.seed = net, g, config, seed
        self.measured: dict[tuple[str, int], LevelStats] = {}
        self.caps: dict[str, int] = {}

    def measure(self, kind: str, level: int, min_samples: int = 0) -> LevelStats:
        key = (kind, level)
        c = self.config
        old = self.measured.get(key)
        if old is not None and old.n_samples >= min_samples:
            return old
        acc = None
        if old is not None:
            acc = Accumulator(old.n_samples, old.mean_diff, old.var_diff * max(old.n_samples - 1, 0))
            acc.values = old.values
            acc.counters = np.array([0, 0, old.work, old.negativity_events], np.int64)
        s = estimate_level_stats(self.net, level, kind, self.g, self.seed, c.target_cv, c.batch,
                                 max(c.pilot_budget, min_samples), c.newton, c.workers, c.n_bootstrap,
                                 min_samples, acc)
        self.measured[key] = s
        return s

    def levels(self, kind: str) -> list[int]:
        return sorted(lv for k, lv in self.measured if k == kind)

    def fit(self, kind: str):
        lv = self.levels(kind)[-self.config.pilot_levels:]
        return fit_and_extrapolate([self.measured[(kind, x)] for x in lv], [])

    def _cap(self, kind: str) -> int:
        return self.caps.get(kind, -1)

    def get(self, kind: str, level: int) -> LevelStats | None:
        if (kind, level) in self.measured:
            return self.measured[(kind, level)]
        if level <= self._cap(kind):
            return self.measure(kind, level)
        return None

    def variance(self, kind: str, level: int) -> float:
        s = self.get(kind, level)
        if s is not None:
            return s.var_diff
        try:
            return self.fit(kind).var_at(level)
        except FitError:
            lv = self.levels(kind)
            if not lv:
                raise
            # too few positive variances to fit: carry the last measured value
            return self.measured[(kind, lv[-1])].var_diff

    def bias(self, kind: str, level: int) -> float:
        s = self.get(kind, level)
        if s is not None:
            return s.bias_bound(self.config.bias_z)
        return self.fit(kind).bias_at(level)

    @property
    def pilot_work(self) -> int:
        return int(sum(s.work for s in self.measured.values()))


def _resolve(provider: StatsProvider, kind: str, level: int, bound: float) -> LevelStats:
    """Add samples at ``level`` while its point estimate meets ``bound`` but the
    upper confidence bound does not yet."""
    c = provider.config
    s = provider.measure(kind, level)
    while abs(s.mean_diff) < bound <= s.bias_bound(c.bias_z) and s.n_samples < c.pilot_budget:
        gap = bound - abs(s.mean_diff)
        need = int(math.ceil((c.bias_z * math.sqrt(s.var_diff) / gap) ** 2 * 1.2))
        need = min(max(need, 2 * s.n_samples), c.pilot_budget)
        s = provider.measure(kind, level, min_samples=need)
    return s


def sequential_finest_level(provider: StatsProvider, kind: str, first: int, cap: int, TOL: float,
                            theta: float) -> tuple[int, dict[int, float], bool]:
    """Raise the top pilot level until a measured level meets the bias bound.

    Returns ``(L, bias_map, measured)``.  Measured levels contribute the upper
    bound ``|mean| + z SE``; once ``cap`` is reached the fit over the top
    pilot levels is extrapolated up to ``max_level``.
    """
    c = provider.config
    bound = (1.0 - theta) * TOL
    top = min(first + c.pilot_levels - 1, cap)
    for lv in range(first, top + 1):
        provider.measure(kind, lv)
    while True:
        for lv in range(first, top + 1):
            s = _resolve(provider, kind, lv, bound)
            if s.bias_bound(c.bias_z) < bound:
                bias = {x: provider.measured[(kind, x)].bias_bound(c.bias_z) for x in range(first, lv + 1)}
                return lv, bias, True
        if top >= cap:
            break
        top += 1
        provider.measure(kind, top)
    bias = {x: provider.measured[(kind, x)].bias_bound(c.bias_z) for x in range(first, top + 1)}
    try:
        fit = provider.fit(kind)
    except FitError as exc:
        raise LevelRangeError(f"no measured {kind} level meets the bias bound and the fit failed: {exc}") from exc
    for lv in range(top + 1, c.max_level + 1):
        bias[lv] = fit.bias_at(lv)
    return select_finest_level(TOL, theta, bias), bias, False


def hierarchy(L_c_imp: int, L_int: int | None, L: int) -> list[tuple[int, str]]:
    """``(level, kind)`` pairs of the estimator terms; ``L_int=None`` gives pure SSI-TL."""
    out = [(L_c_imp, "single-implicit")]
    top_imp = L if L_int is None else L_int - 1
    out += [(lv, "imp-imp") for lv in range(L_c_imp + 1, top_imp + 1)]
    if L_int is not None:
        out.append((L_int, "exp-imp"))
        out += [(lv, "exp-exp") for lv in range(L_int + 1, L + 1)]
    return out


def _plan_numbers(terms, provider: StatsProvider, cost: CostModel, TOL, config: EstimatorConfig):
    V = np.array([provider.variance(k, lv) for lv, k in terms])
    C = np.array([cost.step_cost(k) for lv, k in terms])
    h = np.array([2.0**-lv for lv, k in terms])
    N = allocate_samples(V, C, h, TOL, config.theta, config.C_alpha)
    return V, C, h, N, float((C * N / h).sum())


def select_interface_level(net: ReactionNetwork, candidates, provider, TOL: float, L: int | None = None,
                           cost_model: CostModel | None = None, config: EstimatorConfig | None = None,
                           L_c_imp: int = 0) -> tuple[int, dict[int, float]]:
    """Interface level minimising the planned work; ties go to the smallest candidate.

    ``provider`` is a :class:`StatsProvider` or any object with a
    ``variance(kind, level)`` method.  Returns ``(L_int, work_by_candidate)``.
    """
    candidates = sorted(int(x) for x in candidates)
    if not candidates:
        raise ConfigError("no interface candidates")
    config = config or EstimatorConfig()
    cost_model = cost_model or calibrate_cost_model(net, cfg=config.newton)
    L = max(candidates) if L is None else L
    works = {}
    for li in candidates:
        if not L_c_imp < li <= L:
            raise ConfigError(f"interface level {li} must lie in ({L_c_imp}, {L}]")
        works[li] = _plan_numbers(hierarchy(L_c_imp, li, L), provider, cost_model, TOL, config)[4]
    best = min(candidates, key=lambda x: (works[x], x))
    return best, works


@dataclass
class MLMCPlan:
    mode: str
    TOL: float
    L_c_imp: int
    L_c_exp: int
    L_int: int | None
    L: int
    terms: list[tuple[int, str]]
    N: list[int]
    V: list[float]
    C: list[float]
    theta: float
    C_alpha: float
    cost_model: CostModel
    bias_estimate: float
    bias_from_measurement: bool
    planned_work: float
    tau_limit: float
    fits: dict = field(default_factory=dict)
    interface_work: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        if any(n < 1 for n in self.N):
            raise ConfigError("all sample counts must be >= 1")
        if not 0 < self.theta < 1:
            raise ConfigError("theta must lie in (0, 1)")

    def as_dict(self) -> dict:
        d = asdict(self)
        d["terms"] = [list(t) for t in self.terms]
        d["cost_model"] = self.cost_model.as_dict()
        d["interface_work"] = {str(k): v for k, v in self.interface_work.items()}
        return d


@dataclass
class LevelResult:
    level: int
    kind: str
    n_samples: int
    mean_diff: float
    var_diff: float
    cost: float
    contribution: float


@dataclass
class EstimateResult:
    estimate: float
    per_level: list[LevelResult]
    stat_error_bound: float
    bias_estimate: float
    work_proxy: float
    wall_time: float
    plan: MLMCPlan
    measured_work: int = 0
    pilot_work: int = 0
    topups: int = 0
    negativity_events: int = 0
    seed: int = 0

    def manifest(self) -> dict:
        return {
            "estimate": self.estimate,
            "stat_error_bound": self.stat_error_bound,
            "bias_estimate": self.bias_estimate,
            "work_proxy": self.work_proxy,
            "measured_work": self.measured_work,
            "pilot_work": self.pilot_work,
            "wall_time_s": self.wall_time,
            "topups": self.topups,
            "negativity_events": self.negativity_events,
            "seed": self.seed,
            "plan": self.plan.as_dict(),
            "levels": [asdict(r) for r in self.per_level],
        }

    def manifest_json(self) -> str:
        return json.dumps(self.manifest(), indent=2, sort_keys=True, default=_json_default)

    def levels_csv(self) -> str:
        rows = ["level,kind,n_samples [count],mean_diff [molecules],var_diff [molecules^2],"
                "cost [proxy units/step],contribution [molecules]"]
        for r in self.per_level:
            rows.append(f"{r.level},{r.kind},{r.n_samples},{r.mean_diff!r},{r.var_diff!r},{r.cost!r},"
                        f"{r.contribution!r}")
        return "\n".join(rows) + "\n"


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, NewtonConfig):
        return asdict(o)
    return str(o)


class _Stage:
    def __init__(self, name: str):
        self.name = name

    def __enter__(self):
        return self

    def __exit__(self, et, ev, tb):
        if ev is not None and isinstance(ev, Exception) and not isinstance(ev, StageError):
            raise StageError(self.name, ev) from ev
        return False


def plan_estimator(net: ReactionNetwork, g=None, TOL: float = 0.05, config: EstimatorConfig | None = None,
                   seed: int = 0, provider: StatsProvider | None = None) -> tuple[MLMCPlan, StatsProvider]:
    """Pilot sampling, level selection, interface choice and allocation."""
    config = config or EstimatorConfig()
    if not TOL > 0:
        raise ConfigError(f"TOL must be positive, got {TOL}")
    g = observable(net) if g is None else g
    provider = provider or StatsProvider(net, g, config, seed)
    theta = config.theta
    Lci = config.L_c_imp

    with _Stage("stability"):
        rep = stability_report(net)
        L_c_exp = (coarsest_stable_level(rep.tau_limit, net.T, config.safety) if rep.bounded else Lci)
        L_c_exp = max(L_c_exp, Lci)

    with _Stage("calibration"):
        cost = config.cost_model or calibrate_cost_model(net, cfg=config.newton, seed=seed,
                                                         mode=config.cost_mode)

    hi = max(L_c_exp, Lci + config.pilot_levels) + config.measure_above_exp
    provider.caps.update({"imp-imp": hi, "exp-imp": hi, "exp-exp": L_c_exp + config.pilot_levels})
    diagnostics: dict = {}
    fits: dict = {}
    mode = config.mode

    if mode == "explicit":
        with _Stage("pilot"):
            L, bias, measured = sequential_finest_level(provider, "exp-exp", L_c_exp + 1,
                                                        L_c_exp + config.pilot_levels, TOL, theta)
            provider.measure("single-explicit", L_c_exp)
        terms = [(L_c_exp, "single-explicit")] + [(lv, "exp-exp") for lv in range(L_c_exp + 1, L + 1)]
        L_int = None
    else:
        with _Stage("pilot"):
            s0 = provider.measure("single-implicit", Lci)
            if mode == "hybrid":
                for lv in range(Lci + 1, Lci + 1 + config.pilot_levels):
                    provider.measure("imp-imp", lv)
                L_imp, bias, measured = None, {}, False
            else:
                cap = max(L_c_exp, Lci + config.pilot_levels)
                L_imp, bias, measured = sequential_finest_level(provider, "imp-imp", Lci + 1, cap, TOL, theta)
            s1 = provider.measured.get(("imp-imp", Lci + 1))
            if s1 is not None and s0.var_diff > 0:
                ratio = s1.var_diff / s0.var_diff
                diagnostics["coarsest_variance_ratio"] = ratio
                diagnostics["coarsest_variance_condition"] = bool(ratio < 0.5)
        use_hybrid = mode == "hybrid" or (mode == "auto" and L_imp > L_c_exp)
        if mode == "mc":
            L_int = None
            L = L_imp
            with _Stage("pilot"):
                provider.measure("single-implicit", L)
            terms = [(L, "single-implicit")]
        elif not use_hybrid:
            L, L_int = L_imp, None
            terms = hierarchy(Lci, None, L)
        else:
            with _Stage("pilot"):
                L, bias, measured = sequential_finest_level(provider, "exp-exp", L_c_exp + 1,
                                                            L_c_exp + config.pilot_levels, TOL, theta)
                L = max(L, L_c_exp + 1)
                first_int = max(L_c_exp, Lci + 1)
                for lv in range(first_int, first_int + config.pilot_levels):
                    provider.measure("exp-imp", lv)
            with _Stage("interface"):
                if config.L_int is not None:
                    L_int = config.L_int
                    if not Lci < L_int <= L:
                        raise ConfigError(f"L_int={L_int} must lie in ({Lci}, {L}]")
                    _, works = select_interface_level(net, [L_int], provider, TOL, L, cost, config, Lci)
                else:
                    cands = list(range(first_int, L + 1))
                    L_int, works = select_interface_level(net, cands, provider, TOL, L, cost, config, Lci)
            fits["interface_work"] = works
            terms = hierarchy(Lci, L_int, L)

    with _Stage("fit"):
        for kind in ("imp-imp", "exp-exp", "exp-imp"):
            if len(provider.levels(kind)) >= 3:
                try:
                    f = provider.fit(kind)
                    fits[kind] = {"bias_slope": f.bias_slope, "var_slope": f.var_slope,
                                  "levels": provider.levels(kind)[-config.pilot_levels:]}
                except FitError as exc:
                    fits[kind] = {"error": str(exc)}

    with _Stage("allocation"):
        if mode == "mc":
            s = provider.measured[("single-implicit", L)]
            V = np.array([s.var_diff])
            C = np.array([cost.step_cost("single-implicit")])
            h = np.array([2.0**-L])
            N = allocate_samples(V, C, h, TOL, theta, config.C_alpha)
            W = float((C * N / h).sum())
        else:
            V, C, h, N, W = _plan_numbers(terms, provider, cost, TOL, config)

    interface_work = fits.pop("interface_work", {})
    plan = MLMCPlan(
        mode=mode if mode != "auto" else ("hybrid" if L_int is not None else "ssi"),
        TOL=TOL,
        L_c_imp=Lci,
        L_c_exp=L_c_exp,
        L_int=L_int,
        L=L,
        terms=terms,
        N=[int(n) for n in N],
        V=[float(v) for v in V],
        C=[float(c) for c in C],
        theta=theta,
        C_alpha=config.C_alpha,
        cost_model=cost,
        bias_estimate=float(bias.get(L, math.nan)) if bias else math.nan,
        bias_from_measurement=measured,
        planned_work=W,
        tau_limit=rep.tau_limit,
        fits=fits,
        interface_work=interface_work,
        diagnostics=diagnostics,
    )
    return plan, provider


def execute_plan(net: ReactionNetwork, plan: MLMCPlan, g=None, config: EstimatorConfig | None = None,
                 seed: int = 0) -> tuple[list[Accumulator], int]:
    """Production sampling of every term, topped up until the realised bound holds."""
    config = config or EstimatorConfig()
    g = observable(net) if g is None else g
    accs = []
    for (lv, kind), n in zip(plan.terms, plan.N):
        accs.append(sample(net, kind, lv, g, n, seed, PRODUCTION, config.newton, config.batch,
                           workers=config.workers))
    topups = 0
    target = plan.theta * plan.TOL
    while topups < config.max_topups:
        Vr = np.array([a.var for a in accs])
        Nr = np.array([a.n for a in accs])
        if stat_error_bound(Vr, Nr, plan.C_alpha) <= target:
            break
        topups += 1
        Nnew = allocate_samples(Vr, np.array(plan.C), np.array([2.0**-lv for lv, _ in plan.terms]), plan.TOL,
                                plan.theta, plan.C_alpha)
        for i, ((lv, kind), want) in enumerate(zip(plan.terms, Nnew)):
            extra = int(want) - accs[i].n
            if extra > 0:
                # top-up batches live in their own stream family, one block of indices per round
                more = sample(net, kind, lv, g, extra, seed, TOPUP, config.newton, config.batch,
                              first_batch=topups * 1_000_000, workers=config.workers)
                accs[i] = accs[i].merge(more)
    return accs, topups


def run_estimator(net: ReactionNetwork, g=None, TOL: float = 0.05, config: EstimatorConfig | None = None,
                  seed: int = 0) -> EstimateResult:
    """Plan and run the estimator; failures are wrapped in :class:`StageError` naming the stage."""
    t0 = time.perf_counter()
    config = config or EstimatorConfig()
    g = observable(net) if g is None else g
    plan, provider = plan_estimator(net, g, TOL, config, seed)
    with _Stage("sampling"):
        accs, topups = execute_plan(net, plan, g, config, seed)
    per_level = []
    for (lv, kind), a, c in zip(plan.terms, accs, plan.C):
        per_level.append(LevelResult(lv, kind, a.n, a.mean, a.var, c, a.mean))
    V = np.array([a.var for a in accs])
    N = np.array([a.n for a in accs])
    h = np.array([2.0**-lv for lv, _ in plan.terms])
    result = EstimateResult(
        estimate=float(sum(a.mean for a in accs)),
        per_level=per_level,
        stat_error_bound=stat_error_bound(V, N, plan.C_alpha),
        bias_estimate=plan.bias_estimate,
        work_proxy=float((np.array(plan.C) * N / h).sum()),
        wall_time=time.perf_counter() - t0,
        plan=plan,
        measured_work=int(sum(a.work for a in accs)),
        pilot_work=provider.pilot_work,
        topups=topups,
        negativity_events=int(sum(a.counters[3] for a in accs)),
        seed=seed,
    )
    log.info("estimate %.6g +- %.3g (L=%d, L_int=%s, work %.3g)", result.estimate, result.stat_error_bound,
             plan.L, plan.L_int, result.work_proxy)
    return result


def safe_run(*args, **kwargs) -> EstimateResult:
    try:
        return run_estimator(*args, **kwargs)
    except StageError:
        raise
    except SSITLError as exc:
        raise StageError("estimator", exc) from exc


__all__ = [
    "EstimatorConfig",
    "MLMCPlan",
    "EstimateResult",
    "LevelResult",
    "StatsProvider",
    "bootstrap_cv",
    "estimate_level_stats",
    "execute_plan",
    "hierarchy",
    "plan_estimator",
    "run_estimator",
    "select_interface_level",
    "sequential_finest_level",
]
