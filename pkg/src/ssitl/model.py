"""Reaction network model: channels, propensities, Jacobians, model files.

Every propensity law is compiled to a table of monomials
``coef * prod_k x_k**e_k`` tagged with its channel.  Mass-action laws use the
combinatorial convention ``c * prod_i binom(x_i, r_i)`` so a dimerisation
``2S -> P`` with constant ``c`` evaluates to ``c * x * (x - 1) / 2``.  A model
file may instead give an explicit polynomial, which overrides mass action.

Channel indices are 0-based throughout the Python API.
"""

from __future__ import annotations

import json
import math
import os
import re
from dataclasses import dataclass, field
from functools import cached_property
from importlib import resources
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from .errors import ModelSemanticError, ModelSyntaxError, UnsupportedLawError

MAX_REACTANT_ORDER = 3
_IDENT = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")


@dataclass(frozen=True)
class ReactionChannel:
    """One reaction channel.

    ``reactants`` and ``products`` hold the per-species multiplicities, so the
    state-change vector is ``products - reactants``.  ``propensity`` is an
    optional polynomial in the species names; when given it replaces the
    mass-action law built from ``rate`` and ``reactants``.
    """

    reactants: tuple[int, ...]
    products: tuple[int, ...]
    rate: float
    propensity: str | None = None
    stoich: tuple[int, ...] = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "reactants", tuple(int(v) for v in self.reactants))
        object.__setattr__(self, "products", tuple(int(v) for v in self.products))
        object.__setattr__(self, "rate", float(self.rate))
        if len(self.reactants) != len(self.products):
            raise ModelSemanticError("reactant and product vectors differ in length")
        stoich = tuple(p - r for r, p in zip(self.reactants, self.products))
        object.__setattr__(self, "stoich", stoich)
        if not any(stoich):
            raise ModelSemanticError("channel has a zero state-change vector")
        if not math.isfinite(self.rate) or self.rate < 0:
            raise ModelSemanticError(f"rate constant must be finite and >= 0, got {self.rate}")
        if any(r < 0 for r in self.reactants) or any(p < 0 for p in self.products):
            raise ModelSemanticError("stoichiometric orders must be non-negative")
        if self.propensity is None and sum(self.reactants) > MAX_REACTANT_ORDER:
            raise ModelSemanticError(
                f"mass-action reactant order {sum(self.reactants)} exceeds {MAX_REACTANT_ORDER}"
            )


@dataclass(frozen=True)
class PolyTable:
    """Flat monomial table shared by all channels of a network."""

    coef: np.ndarray  # (M,) float64
    exps: np.ndarray  # (M, d) int64
    chan: np.ndarray  # (M,) int64


@dataclass(frozen=True)
class ReactionNetwork:
    species: tuple[str, ...]
    channels: tuple[ReactionChannel, ...]
    x0: tuple[int, ...]
    T: float

    def __post_init__(self):
        object.__setattr__(self, "species", tuple(self.species))
        object.__setattr__(self, "channels", tuple(self.channels))
        if not self.species:
            raise ModelSemanticError("network needs at least one species")
        if len(set(self.species)) != len(self.species):
            raise ModelSemanticError("duplicate species names")
        for name in self.species:
            if not _IDENT.match(name):
                raise ModelSemanticError(f"species name {name!r} is not an identifier")
        if not self.channels:
            raise ModelSemanticError("network needs at least one reaction channel")
        d = len(self.species)
        for j, ch in enumerate(self.channels):
            if len(ch.stoich) != d:
                raise ModelSemanticError(f"reaction {j}: stoichiometry has length {len(ch.stoich)}, expected {d}")
        x0 = []
        for v in self.x0:
            if isinstance(v, bool) or not float(v).is_integer() or v < 0:
                raise ModelSemanticError(f"initial counts must be non-negative integers, got {v!r}")
            x0.append(int(v))
        if len(x0) != d:
            raise ModelSemanticError(f"initial state has length {len(x0)}, expected {d}")
        object.__setattr__(self, "x0", tuple(x0))
        T = float(self.T)
        if not math.isfinite(T) or T <= 0:
            raise ModelSemanticError(f"final time must be positive, got {self.T}")
        object.__setattr__(self, "T", T)
        self.poly  # compile eagerly so law errors surface at construction

    @property
    def d(self) -> int:
        return len(self.species)

    @property
    def J(self) -> int:
        return len(self.channels)

    @cached_property
    def nu(self) -> np.ndarray:
        """State-change vectors as a (J, d) integer matrix."""
        nu = np.array([ch.stoich for ch in self.channels], dtype=np.int64)
        nu.setflags(write=False)
        return nu

    @cached_property
    def poly(self) -> PolyTable:
        coef, exps, chan = [], [], []
        for j, ch in enumerate(self.channels):
            for e, c in _channel_terms(ch, self.species, j):
                coef.append(c)
                exps.append(e)
                chan.append(j)
        table = PolyTable(
            coef=np.array(coef, dtype=np.float64),
            exps=np.array(exps, dtype=np.int64).reshape(len(coef), self.d),
            chan=np.array(chan, dtype=np.int64),
        )
        for arr in (table.coef, table.exps, table.chan):
            arr.setflags(write=False)
        return table

    def index(self, name: str) -> int:
        try:
            return self.species.index(name)
        except ValueError:
            raise ModelSemanticError(f"unknown species {name!r}") from None

    # vectorised law evaluation, used by the Python-level API and the tests

    def law(self, y) -> np.ndarray:
        """Raw polynomial laws at a real state ``y`` (no clamping)."""
        y = np.asarray(y, dtype=np.float64)
        mono = self.poly.coef * np.prod(y ** self.poly.exps, axis=-1)
        out = np.zeros(self.J)
        np.add.at(out, self.poly.chan, mono)
        return out

    def law_gradient(self, y) -> np.ndarray:
        """Analytic (J, d) gradient of the raw laws at ``y``."""
        y = np.asarray(y, dtype=np.float64)
        p = self.poly
        grad = np.zeros((self.J, self.d))
        for k in range(self.d):
            e = p.exps.copy()
            mult = e[:, k].astype(np.float64)
            e[:, k] = np.maximum(e[:, k] - 1, 0)
            vals = p.coef * mult * np.prod(y ** e, axis=-1)
            np.add.at(grad[:, k], p.chan, vals)
        return grad

    def lattice_rates(self, x) -> np.ndarray:
        """Propensities at an integer state, with the non-negativity convention."""
        x = np.asarray(x)
        a = np.maximum(self.law(np.maximum(x, 0)), 0.0)
        a[np.any(x + self.nu < 0, axis=1)] = 0.0
        return a


@dataclass
class PathState:
    x: np.ndarray
    t: float = 0.0
    negativity_events: int = 0

    def project(self) -> None:
        """Clip negative components to zero, counting the event once per call."""
        if np.any(self.x < 0):
            self.negativity_events += 1
            np.maximum(self.x, 0, out=self.x)


def _check_dim(net: ReactionNetwork, x, what="state"):
    if np.ndim(x) != 1 or len(x) != net.d:
        raise ModelSemanticError(f"{what} has shape {np.shape(x)}, expected ({net.d},)")


def _check_channel(net: ReactionNetwork, j: int):
    if not 0 <= j < net.J:
        raise ModelSemanticError(f"channel index {j} out of range 0..{net.J - 1}")


def propensity(net: ReactionNetwork, j: int, x) -> float:
    """Propensity of channel ``j`` at lattice state ``x``.

    The law is evaluated at ``max(x, 0)`` and clamped at zero; it is zero
    outright when firing ``j`` would leave the non-negative orthant.
    """
    _check_channel(net, j)
    _check_dim(net, x)
    return float(net.lattice_rates(x)[j])


def propensity_gradient(net: ReactionNetwork, j: int, y) -> np.ndarray:
    _check_channel(net, j)
    _check_dim(net, y)
    return net.law_gradient(y)[j]


def drift_jacobian(net: ReactionNetwork, y) -> np.ndarray:
    """Jacobian of the drift ``sum_j nu_j a_j(y)``: entry (i, k) is ``sum_j nu_j^i da_j/dx_k``."""
    _check_dim(net, y)
    return net.nu.T.astype(np.float64) @ net.law_gradient(y)


# --- law compilation -------------------------------------------------------


def _channel_terms(ch: ReactionChannel, species: Sequence[str], j: int):
    import sympy

    symbols = [sympy.Symbol(s) for s in species]
    if ch.propensity is None:
        expr = sympy.Float(ch.rate) if ch.rate != int(ch.rate) else sympy.Integer(int(ch.rate))
        for sym, r in zip(symbols, ch.reactants):
            expr *= sympy.binomial(sym, r).expand(func=True)
    else:
        expr = _parse_polynomial(ch.propensity, species, symbols, j)
    try:
        poly = sympy.Poly(sympy.expand(expr), *symbols)
    except sympy.PolynomialError as exc:
        raise UnsupportedLawError(f"reaction {j}: propensity is not a polynomial: {exc}") from None
    terms = [(tuple(int(e) for e in exps), float(c)) for exps, c in poly.terms() if c != 0]
    return terms or [((0,) * len(species), 0.0)]


def _parse_polynomial(text: str, species, symbols, j: int):
    import sympy
    from sympy.parsing.sympy_parser import parse_expr, standard_transformations
    from tokenize import TokenError

    local = dict(zip(species, symbols))
    try:
        expr = parse_expr(text, local_dict=local, transformations=standard_transformations)
    except (SyntaxError, TokenError) as exc:
        col = getattr(exc, "offset", None)
        raise ModelSyntaxError(f"reaction {j}: cannot parse propensity {text!r}: {exc}", 1, col) from None
    unknown = {str(s) for s in expr.free_symbols} - set(species)
    if unknown:
        raise ModelSemanticError(f"reaction {j}: propensity references undeclared species {sorted(unknown)}")
    if not isinstance(expr, sympy.Expr):
        raise UnsupportedLawError(f"reaction {j}: propensity {text!r} is not an expression")
    return expr


# --- model files -----------------------------------------------------------


def _locate(text: str, needle: str) -> tuple[int | None, int | None]:
    pos = text.find(needle)
    if pos < 0:
        return None, None
    line = text.count("\n", 0, pos) + 1
    return line, pos - (text.rfind("\n", 0, pos) + 1) + 1


def _counts(mapping: Any, species: Sequence[str], where: str) -> list[int]:
    if mapping is None:
        mapping = {}
    if not isinstance(mapping, Mapping):
        raise ModelSemanticError(f"{where} must be an object of species -> order")
    out = [0] * len(species)
    for name, order in mapping.items():
        if name not in species:
            raise ModelSemanticError(f"{where} references undeclared species {name!r}")
        if isinstance(order, bool) or not isinstance(order, (int, float)) or order < 0 or order != int(order):
            raise ModelSemanticError(f"{where}: order of {name!r} must be a non-negative integer")
        out[species.index(name)] = int(order)
    return out


def network_from_dict(doc: Mapping[str, Any], *, text: str | None = None) -> ReactionNetwork:
    if not isinstance(doc, Mapping):
        raise ModelSemanticError("model document must be a JSON object")
    for key in ("species", "initial", "T", "reactions"):
        if key not in doc:
            raise ModelSemanticError(f"missing top-level field {key!r}")
    species = doc["species"]
    if not isinstance(species, list) or not all(isinstance(s, str) for s in species):
        raise ModelSemanticError("'species' must be a list of names")
    initial = doc["initial"]
    if not isinstance(initial, list):
        raise ModelSemanticError("'initial' must be a list of integers")
    if len(initial) != len(species):
        raise ModelSemanticError(f"'initial' has {len(initial)} entries for {len(species)} species")
    for v in initial:
        if isinstance(v, bool) or not isinstance(v, int):
            raise ModelSemanticError(f"initial counts must be integers, got {v!r}")
    T = doc["T"]
    if isinstance(T, bool) or not isinstance(T, (int, float)):
        raise ModelSemanticError("'T' must be a number")
    reactions = doc["reactions"]
    if not isinstance(reactions, list):
        raise ModelSemanticError("'reactions' must be a list")
    channels = []
    for j, rx in enumerate(reactions):
        if not isinstance(rx, Mapping):
            raise ModelSemanticError(f"reaction {j} must be an object")
        rate = rx.get("rate", 1.0 if "propensity" in rx else None)
        if rate is None:
            raise ModelSemanticError(f"reaction {j}: missing 'rate'")
        if isinstance(rate, bool) or not isinstance(rate, (int, float)):
            raise ModelSemanticError(f"reaction {j}: 'rate' must be a number")
        if rate < 0:
            raise ModelSemanticError(f"reaction {j}: negative rate constant {rate}")
        prop = rx.get("propensity")
        if prop is not None and not isinstance(prop, str):
            raise ModelSemanticError(f"reaction {j}: 'propensity' must be a string")
        reac = _counts(rx.get("reactants"), species, f"reaction {j} reactants")
        prod = _counts(rx.get("products"), species, f"reaction {j} products")
        try:
            channels.append(ReactionChannel(reac, prod, rate, prop))
        except ModelSemanticError as exc:
            raise ModelSemanticError(f"reaction {j}: {exc}") from None
    try:
        return ReactionNetwork(tuple(species), tuple(channels), tuple(initial), T)
    except ModelSyntaxError as exc:
        if text is not None:
            bad = reactions[int(re.search(r"reaction (\d+)", str(exc)).group(1))].get("propensity", "")
            line, col = _locate(text, json.dumps(bad))
            if line is not None:
                raise ModelSyntaxError(str(exc).split(" (line")[0], line, col + (exc.column or 0)) from None
        raise


def parse_model(source: str | os.PathLike | Mapping[str, Any]) -> ReactionNetwork:
    """Build a validated network from JSON text, a file path or a decoded document."""
    if isinstance(source, Mapping):
        return network_from_dict(source)
    if isinstance(source, os.PathLike):
        text = Path(source).read_text()
    else:
        text = source
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelSyntaxError(exc.msg, exc.lineno, exc.colno) from None
    return network_from_dict(doc, text=text)


def network_to_dict(net: ReactionNetwork) -> dict[str, Any]:
    reactions = []
    for ch in net.channels:
        rx: dict[str, Any] = {
            "rate": ch.rate,
            "reactants": {s: r for s, r in zip(net.species, ch.reactants) if r},
            "products": {s: p for s, p in zip(net.species, ch.products) if p},
        }
        if ch.propensity is not None:
            rx["propensity"] = ch.propensity
        reactions.append(rx)
    return {"species": list(net.species), "initial": list(net.x0), "T": net.T, "reactions": reactions}


def dump_model(net: ReactionNetwork) -> str:
    return json.dumps(network_to_dict(net), indent=2) + "\n"


EXAMPLES = ("example1", "example2")


def load_model(spec: str | os.PathLike) -> ReactionNetwork:
    """Load a model file, or one of the bundled examples by name."""
    if isinstance(spec, str) and spec in EXAMPLES:
        text = resources.files("ssitl.models").joinpath(f"{spec}.json").read_text()
        return parse_model(text)
    return parse_model(Path(spec))
