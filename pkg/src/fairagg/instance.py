"""Problem data: prosumers, market rules, scenario sets, JSON round-tripping.

Instance files are UTF-8 JSON::

    {
      "market": {"horizon": 5, "p_da": [...], "p_bal": [...], "w_min": 11, "big_m_da": 17},
      "prosumers": [{"e_min": 0, "e_max": 5, "e_total": 10}, ...],
      "scenarios": {"seed": 7, "generator": "numpy.PCG64",
                    "probabilities": [...], "prices": [[...], ...]}
    }

``big_m_da`` and ``scenarios`` are optional.  Prices are $/MWh and energies MWh.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

log = logging.getLogger(__name__)


class InstanceError(Exception):
    pass


class ParseError(InstanceError):
    """The file is not valid JSON or does not follow the instance schema."""


class ValidationError(InstanceError):
    """One or more data invariants are violated; ``problems`` lists them all."""

    def __init__(self, problems: Sequence[str]):
        self.problems = list(problems)
        super().__init__("invalid instance:\n  - " + "\n  - ".join(self.problems))


@dataclass(frozen=True)
class ProsumerSpec:
    id: int
    e_min: float
    e_max: float
    e_total: float


@dataclass(frozen=True)
class MarketSpec:
    horizon: int
    p_da: tuple[float, ...]
    p_bal: tuple[float, ...]
    w_min: float
    big_m_da: float


@dataclass(frozen=True)
class DeterministicInstance:
    prosumers: tuple[ProsumerSpec, ...]
    market: MarketSpec

    @property
    def n_agents(self) -> int:
        return len(self.prosumers)

    @property
    def horizon(self) -> int:
        return self.market.horizon

    @property
    def p_da(self) -> np.ndarray:
        return np.array(self.market.p_da, dtype=float)

    @property
    def p_bal(self) -> np.ndarray:
        return np.array(self.market.p_bal, dtype=float)

    def subset(self, agents: Sequence[int]) -> "DeterministicInstance":
        """Instance restricted to ``agents`` (positions), re-indexed from 0."""
        chosen = tuple(replace(self.prosumers[a], id=k) for k, a in enumerate(agents))
        if not chosen:
            raise ValueError("a sub-instance needs at least one prosumer")
        big_m = sum(p.e_max for p in chosen)
        return DeterministicInstance(chosen, replace(self.market, big_m_da=big_m))


@dataclass(frozen=True)
class ScenarioSet:
    prices: tuple[tuple[float, ...], ...]
    probabilities: tuple[float, ...]
    seed: int | None = None
    generator: str | None = None

    @property
    def n_scenarios(self) -> int:
        return len(self.prices)

    def price_matrix(self) -> np.ndarray:
        """(n_scenarios, T) balancing prices."""
        return np.array(self.prices, dtype=float)

    def weights(self) -> np.ndarray:
        return np.array(self.probabilities, dtype=float)


@dataclass(frozen=True)
class StochasticInstance:
    base: DeterministicInstance
    scenario_set: ScenarioSet = field()

    @property
    def n_agents(self) -> int:
        return self.base.n_agents

    @property
    def horizon(self) -> int:
        return self.base.horizon


# --- validation -----------------------------------------------------------


def _check_deterministic(inst: DeterministicInstance) -> list[str]:
    problems = []
    mk = inst.market
    T = mk.horizon
    if T < 1:
        problems.append(f"horizon must be >= 1 (got {T})")
    for name in ("p_da", "p_bal"):
        vec = getattr(mk, name)
        if len(vec) != T:
            problems.append(f"market.{name} has length {len(vec)}, expected horizon {T}")
        bad = [t for t, p in enumerate(vec) if not (math.isfinite(p) and p >= 0)]
        if bad:
            problems.append(f"market.{name} must be finite and >= 0 (stages {bad})")
    if not (math.isfinite(mk.w_min) and mk.w_min > 0):
        problems.append(f"market.w_min must be > 0 (got {mk.w_min})")
    if not inst.prosumers:
        problems.append("at least one prosumer is required")
    total_emax = 0.0
    for p in inst.prosumers:
        tag = f"prosumer {p.id}"
        vals = (p.e_min, p.e_max, p.e_total)
        if not all(math.isfinite(v) for v in vals):
            problems.append(f"{tag}: energies must be finite")
            continue
        if p.e_min < 0:
            problems.append(f"{tag}: e_min={p.e_min} is negative")
        if p.e_min > p.e_max:
            problems.append(f"{tag}: e_min={p.e_min} exceeds e_max={p.e_max}")
        if p.e_total > T * p.e_max:
            problems.append(f"{tag}: e_total={p.e_total} exceeds T*e_max={T * p.e_max}")
        if p.e_total < T * p.e_min:
            # Not a feasibility issue: the total-demand row is then implied by e_min.
            log.info("%s: e_total=%g is below T*e_min=%g; the total requirement is slack", tag, p.e_total, T * p.e_min)
        total_emax += p.e_max
    if mk.big_m_da < total_emax - 1e-12:
        problems.append(f"market.big_m_da={mk.big_m_da} is below the sum of e_max ({total_emax})")
    return problems


def _check_scenarios(sc: ScenarioSet, T: int) -> list[str]:
    problems = []
    if sc.n_scenarios < 1:
        problems.append("scenario set is empty")
    if len(sc.probabilities) != sc.n_scenarios:
        problems.append(f"{len(sc.probabilities)} probabilities for {sc.n_scenarios} scenarios")
    if any(not (p > 0) for p in sc.probabilities):
        problems.append("scenario probabilities must be > 0")
    if sc.probabilities and abs(math.fsum(sc.probabilities) - 1.0) > 1e-12:
        problems.append(f"scenario probabilities sum to {math.fsum(sc.probabilities)!r}, not 1")
    for k, row in enumerate(sc.prices):
        if len(row) != T:
            problems.append(f"scenario {k} has {len(row)} prices, expected horizon {T}")
        if any(not (math.isfinite(p) and p >= 0) for p in row):
            problems.append(f"scenario {k} has negative or non-finite prices")
    return problems


def validate(inst: DeterministicInstance | StochasticInstance) -> None:
    """Raise ValidationError listing every violated invariant."""
    if isinstance(inst, StochasticInstance):
        problems = _check_deterministic(inst.base) + _check_scenarios(inst.scenario_set, inst.base.horizon)
    else:
        problems = _check_deterministic(inst)
    if problems:
        raise ValidationError(problems)


# --- construction -----------------------------------------------------------


def make_instance(
    p_da: Sequence[float],
    p_bal: Sequence[float],
    w_min: float,
    prosumers: Sequence[tuple[float, float, float]],
    big_m_da: float | None = None,
) -> DeterministicInstance:
    """Build and validate an instance from plain numbers; prosumers are (e_min, e_max, e_total)."""
    specs = tuple(ProsumerSpec(i, float(a), float(b), float(c)) for i, (a, b, c) in enumerate(prosumers))
    if big_m_da is None:
        big_m_da = sum(p.e_max for p in specs)
    market = MarketSpec(len(p_da), tuple(map(float, p_da)), tuple(map(float, p_bal)), float(w_min), float(big_m_da))
    inst = DeterministicInstance(specs, market)
    validate(inst)
    return inst


PAPER_PROSUMERS = ((0.0, 5.0, 10.0), (5.0, 5.0, 25.0), (0.0, 4.0, 8.0), (2.0, 3.0, 15.0))


def paper_toy_instance() -> DeterministicInstance:
    """Four consumers, five stages, minimum day-ahead volume 11 MWh."""
    return make_instance(
        p_da=(2, 16, 1, 10, 1),
        p_bal=(6, 25, 5, 15, 5),
        w_min=11,
        prosumers=PAPER_PROSUMERS,
    )


STOCHASTIC_P_DA = (3, 3, 7, 4, 2, 10, 7, 4, 7.5, 8)


def paper_stochastic_instance(n_scenarios: int, seed: int) -> StochasticInstance:
    """Ten-stage instance with balancing prices drawn uniformly in [0.35, 5] x day-ahead price.

    The base ``p_bal`` is set to the sampling mean 2.675 * p_da; stochastic
    models never read it.
    """
    from .stochastic import sample_balancing_prices

    if n_scenarios < 1:
        raise ValueError("n_scenarios must be >= 1")
    p_da = np.array(STOCHASTIC_P_DA, dtype=float)
    base = make_instance(p_da, 2.675 * p_da, 12, PAPER_PROSUMERS)
    inst = StochasticInstance(base, sample_balancing_prices(p_da, n_scenarios, seed))
    validate(inst)
    return inst


# --- JSON -------------------------------------------------------------------


def _num(x, where: str) -> float:
    if isinstance(x, bool) or not isinstance(x, (int, float)):
        raise ParseError(f"{where}: expected a number, got {x!r}")
    return float(x)


def _vec(x, where: str) -> tuple[float, ...]:
    if not isinstance(x, list):
        raise ParseError(f"{where}: expected a list of numbers")
    return tuple(_num(v, f"{where}[{k}]") for k, v in enumerate(x))


def from_dict(doc: dict) -> DeterministicInstance | StochasticInstance:
    if not isinstance(doc, dict):
        raise ParseError("top level must be a JSON object")
    try:
        mk = doc["market"]
        pros = doc["prosumers"]
    except KeyError as exc:
        raise ParseError(f"missing top-level key {exc.args[0]!r}") from None
    if not isinstance(mk, dict) or not isinstance(pros, list):
        raise ParseError("'market' must be an object and 'prosumers' a list")
    try:
        horizon = mk["horizon"]
        p_da = _vec(mk["p_da"], "market.p_da")
        p_bal = _vec(mk["p_bal"], "market.p_bal")
        w_min = mk["w_min"]
    except KeyError as exc:
        raise ParseError(f"market: missing key {exc.args[0]!r}") from None
    if isinstance(horizon, bool) or not isinstance(horizon, int):
        raise ParseError("market.horizon must be an integer")
    if isinstance(w_min, list):
        ws = _vec(w_min, "market.w_min")
        if len(set(ws)) > 1:
            raise ParseError("market.w_min must be constant across stages")
        w_min = ws[0] if ws else float("nan")
    w_min = _num(w_min, "market.w_min")
    specs = []
    for i, p in enumerate(pros):
        if not isinstance(p, dict):
            raise ParseError(f"prosumers[{i}] must be an object")
        try:
            specs.append(
                ProsumerSpec(
                    i,
                    _num(p["e_min"], f"prosumers[{i}].e_min"),
                    _num(p["e_max"], f"prosumers[{i}].e_max"),
                    _num(p["e_total"], f"prosumers[{i}].e_total"),
                )
            )
        except KeyError as exc:
            raise ParseError(f"prosumers[{i}]: missing key {exc.args[0]!r}") from None
    big_m = mk.get("big_m_da")
    big_m = sum(s.e_max for s in specs) if big_m is None else _num(big_m, "market.big_m_da")
    base = DeterministicInstance(tuple(specs), MarketSpec(horizon, p_da, p_bal, w_min, big_m))
    if "scenarios" not in doc:
        validate(base)
        return base
    sc = doc["scenarios"]
    if not isinstance(sc, dict) or "prices" not in sc:
        raise ParseError("'scenarios' must be an object with a 'prices' list")
    prices = sc["prices"]
    if not isinstance(prices, list):
        raise ParseError("scenarios.prices must be a list of lists")
    rows = tuple(_vec(r, f"scenarios.prices[{k}]") for k, r in enumerate(prices))
    probs = sc.get("probabilities")
    probs = tuple([1.0 / len(rows)] * len(rows)) if probs is None else _vec(probs, "scenarios.probabilities")
    seed = sc.get("seed")
    if seed is not None and (isinstance(seed, bool) or not isinstance(seed, int)):
        raise ParseError("scenarios.seed must be an integer")
    inst = StochasticInstance(base, ScenarioSet(rows, probs, seed, sc.get("generator")))
    validate(inst)
    return inst


def to_dict(inst: DeterministicInstance | StochasticInstance) -> dict:
    base = inst.base if isinstance(inst, StochasticInstance) else inst
    mk = base.market
    doc = {
        "market": {
            "horizon": mk.horizon,
            "p_da": list(mk.p_da),
            "p_bal": list(mk.p_bal),
            "w_min": mk.w_min,
            "big_m_da": mk.big_m_da,
        },
        "prosumers": [{"e_min": p.e_min, "e_max": p.e_max, "e_total": p.e_total} for p in base.prosumers],
    }
    if isinstance(inst, StochasticInstance):
        sc = inst.scenario_set
        doc["scenarios"] = {
            "seed": sc.seed,
            "generator": sc.generator,
            "probabilities": list(sc.probabilities),
            "prices": [list(r) for r in sc.prices],
        }
    return doc


def dumps(inst: DeterministicInstance | StochasticInstance) -> str:
    """Canonical serialization (sorted keys, fixed separators)."""
    return json.dumps(to_dict(inst), sort_keys=True, indent=1, allow_nan=False) + "\n"


def loads(text: str) -> DeterministicInstance | StochasticInstance:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"malformed JSON: {exc}") from None
    return from_dict(doc)


def load_instance(path: str | Path) -> DeterministicInstance | StochasticInstance:
    """Read and validate an instance file.

    Returns a StochasticInstance when the file carries a ``scenarios`` block.
    """
    try:
        text = Path(path).read_text(encoding="utf-8")
    except UnicodeDecodeError as exc:
        raise ParseError(f"{path}: not UTF-8 ({exc})") from None
    return loads(text)


def save_instance(inst: DeterministicInstance | StochasticInstance, path: str | Path) -> None:
    Path(path).write_text(dumps(inst), encoding="utf-8")


def instance_hash(inst: DeterministicInstance | StochasticInstance) -> str:
    return hashlib.sha256(dumps(inst).encode("utf-8")).hexdigest()
