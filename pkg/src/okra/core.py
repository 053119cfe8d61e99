"""Domain types, validation, and instance serialization.

An instance is a sequence of divisible items to be packed online into a set
of capacitated knapsacks.  Each item carries a size (demand cap on the total
packed fraction), one rate limit per knapsack, and a concave value model
whose marginal value is bounded between the setup's floor and ceiling.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

# Absolute tolerance on constraint checks, applied to quantities normalized
# by the natural scale (prices by the ceiling, amounts by capacity).
TOL = 1e-9

AGGREGATE = "aggregate"
SEPARABLE = "separable"

STANDARD = "standard"
RELAXED = "relaxed"


class ParseError(ValueError):
    """Malformed serialized input (missing field, bad number, bad shape)."""


class ValidationError(ValueError):
    """An instance violates the model assumptions."""

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class InvalidSetupError(ValueError):
    """Setup breaks a precondition (e.g. ceiling below floor)."""


@dataclass(frozen=True)
class Setup:
    """Knapsack capacities plus the floor/ceiling on marginal values.

    ``spread`` is the ceiling-to-floor ratio; every competitive guarantee in
    this package is a function of it alone.
    """

    capacities: tuple[float, ...]
    lower_bound: float
    upper_bound: float

    def __post_init__(self):
        object.__setattr__(self, "capacities", tuple(float(c) for c in self.capacities))

    @property
    def num_knapsacks(self) -> int:
        return len(self.capacities)

    @property
    def spread(self) -> float:
        return self.upper_bound / self.lower_bound

    def violations(self) -> list[str]:
        out = []
        if not self.capacities:
            out.append("setup: no knapsacks")
        if any(c <= 0 or not math.isfinite(c) for c in self.capacities):
            out.append("setup: every capacity must be positive and finite")
        if not (self.lower_bound > 0):
            out.append("setup: lower bound must be positive")
        if self.upper_bound < self.lower_bound:
            out.append("setup: upper bound below lower bound (spread < 1)")
        return out

    def require_valid(self):
        bad = self.violations()
        if bad:
            raise InvalidSetupError("; ".join(bad))


LINEAR = "linear"
QUADRATIC = "quadratic"
GENERAL_CONCAVE = "general_concave"


@dataclass(frozen=True)
class ValueFunction:
    """Concave, non-decreasing value of a packed amount, zero at zero.

    kinds:
      linear           v(x) = slope * x
      quadratic        v(x) = a*x - b*x^2   (b >= 0)
      general_concave  derivative tabulated on a uniform grid over
                       [0, domain_max]; the value is the exact integral of
                       the piecewise-linear derivative.
    """

    kind: str
    slope: float | None = None
    a: float | None = None
    b: float | None = None
    derivative_grid: tuple[float, ...] | None = None
    domain_max: float | None = None

    # -- evaluation ---------------------------------------------------------

    def value(self, x: float) -> float:
        if self.kind == LINEAR:
            return self.slope * x
        if self.kind == QUADRATIC:
            return self.a * x - self.b * x * x
        return self._general_value(x)

    def derivative(self, x: float) -> float:
        if self.kind == LINEAR:
            return self.slope
        if self.kind == QUADRATIC:
            return self.a - 2.0 * self.b * x
        return self._general_derivative(x)

    def derivative_array(self, xs: np.ndarray) -> np.ndarray:
        if self.kind == LINEAR:
            return np.full_like(xs, self.slope, dtype=float)
        if self.kind == QUADRATIC:
            return self.a - 2.0 * self.b * np.asarray(xs, dtype=float)
        grid = np.asarray(self.derivative_grid, dtype=float)
        nodes = np.linspace(0.0, self.domain_max, len(grid))
        return np.interp(xs, nodes, grid)

    def demand_at(self, price: float, cap: float, strict: bool = False) -> float:
        """Largest x in [0, cap] whose marginal value is >= price (> if strict).

        This is the maximizer of value(x) - price*x over [0, cap], resolving
        ties toward the larger amount (or the smaller one when strict).
        """
        if cap <= 0:
            return 0.0
        if self.kind == LINEAR:
            take = self.slope > price if strict else self.slope >= price
            return cap if take else 0.0
        if self.kind == QUADRATIC:
            if self.b <= 0:
                take = self.a > price if strict else self.a >= price
                return cap if take else 0.0
            return min(max((self.a - price) / (2.0 * self.b), 0.0), cap)
        return self._general_demand(price, cap, strict)

    # -- general-concave internals ------------------------------------------

    def _nodes(self) -> tuple[np.ndarray, np.ndarray]:
        grid = np.asarray(self.derivative_grid, dtype=float)
        return np.linspace(0.0, self.domain_max, len(grid)), grid

    def _general_derivative(self, x: float) -> float:
        nodes, grid = self._nodes()
        return float(np.interp(x, nodes, grid))

    def _general_value(self, x: float) -> float:
        nodes, grid = self._nodes()
        x = min(max(x, 0.0), self.domain_max)
        h = nodes[1] - nodes[0]
        k = int(x // h)
        k = min(k, len(nodes) - 2)
        # full panels are trapezoids; the last partial panel integrates the
        # linear interpolant exactly
        full = 0.5 * h * float(np.sum(grid[:k] + grid[1 : k + 1])) if k > 0 else 0.0
        t = x - nodes[k]
        d0 = grid[k]
        slope = (grid[k + 1] - grid[k]) / h
        part = d0 * t + 0.5 * slope * t * t
        return full + part

    def _general_demand(self, price: float, cap: float, strict: bool) -> float:
        nodes, grid = self._nodes()
        cap = min(cap, self.domain_max)
        op = np.greater if strict else np.greater_equal
        ok = op(grid, price)
        if not ok[0]:
            return 0.0
        if ok.all():
            return cap
        k = int(np.argmin(ok))  # first node where the derivative drops below
        d0, d1 = grid[k - 1], grid[k]
        h = nodes[1] - nodes[0]
        if d1 == d0:
            x = nodes[k] if not strict else nodes[k - 1]
        else:
            x = nodes[k - 1] + h * (d0 - price) / (d0 - d1)
        return min(max(x, 0.0), cap)


def linear_value(slope: float) -> ValueFunction:
    return ValueFunction(kind=LINEAR, slope=float(slope))


def quadratic_value(a: float, b: float, domain_max: float | None = None) -> ValueFunction:
    return ValueFunction(kind=QUADRATIC, a=float(a), b=float(b), domain_max=domain_max)


def general_concave_value(derivative_grid, domain_max: float) -> ValueFunction:
    return ValueFunction(
        kind=GENERAL_CONCAVE,
        derivative_grid=tuple(float(d) for d in derivative_grid),
        domain_max=float(domain_max),
    )


@dataclass(frozen=True)
class Item:
    """One arrival: size, per-knapsack rate limits, and its value model.

    ``value`` is a single ValueFunction in aggregate mode and a tuple with
    one entry per knapsack in separable mode.  A zero rate limit marks a
    knapsack as unavailable to the item.
    """

    size: float
    rate_limits: tuple[float, ...]
    value: ValueFunction | tuple[ValueFunction, ...]

    def __post_init__(self):
        object.__setattr__(self, "rate_limits", tuple(float(y) for y in self.rate_limits))

    @property
    def is_separable(self) -> bool:
        return isinstance(self.value, tuple)

    def value_of(self, fractions) -> float:
        if self.is_separable:
            return sum(vf.value(y) for vf, y in zip(self.value, fractions))
        return self.value.value(float(sum(fractions)))


@dataclass(frozen=True)
class Instance:
    setup: Setup
    items: tuple[Item, ...]
    value_mode: str = AGGREGATE

    def __post_init__(self):
        object.__setattr__(self, "items", tuple(self.items))


@dataclass(frozen=True)
class Assignment:
    """Per-knapsack packed fractions decided for one item."""

    fractions: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "fractions", tuple(float(y) for y in self.fractions))

    @property
    def total(self) -> float:
        return float(sum(self.fractions))


class KnapsackState:
    """Mutable per-run utilization vector; owned by a single run loop."""

    __slots__ = ("utilizations",)

    def __init__(self, num_knapsacks: int):
        self.utilizations = np.zeros(num_knapsacks, dtype=float)

    def copy(self) -> "KnapsackState":
        out = KnapsackState(len(self.utilizations))
        out.utilizations = self.utilizations.copy()
        return out

    def apply(self, assignment: Assignment):
        self.utilizations += np.asarray(assignment.fractions, dtype=float)


@dataclass(frozen=True)
class RunResult:
    assignments: tuple[Assignment, ...]
    final_state: KnapsackState
    total_value: float
    per_item_values: tuple[float, ...]


# ---------------------------------------------------------------------------
# validation
# ---------------------------------------------------------------------------

_DERIV_GRID = 1001  # sample points per value function when validating


def _value_fn_violations(vf, lo, hi, span, label, regime, relax_c, tol):
    """Check one value function over [0, span] against the declared regime."""
    out = []
    if span <= 0:
        return out
    xs = np.linspace(0.0, span, _DERIV_GRID)
    d = vf.derivative_array(xs)
    if np.any(np.diff(d) > tol):
        out.append(f"{label}: derivative increases (value not concave)")
    if abs(vf.value(0.0)) > tol * max(1.0, hi * span):
        out.append(f"{label}: value at zero is nonzero")
    if np.max(d) > hi + tol:
        out.append(f"{label}: derivative exceeds U")
    if regime == STANDARD:
        if np.min(d) < lo - tol:
            out.append(f"{label}: derivative below L")
    else:
        if not (lo - tol <= d[0] <= hi + tol):
            out.append(f"{label}: initial derivative outside [L, U]")
        if np.min(d) < -tol:
            out.append(f"{label}: value decreasing")
        if vf.value(span) / span < lo / relax_c - tol:
            out.append(f"{label}: average value below L/c")
    return out


def validate_instance(instance: Instance, regime: str = STANDARD, relax_c: float = 1.0) -> list[str]:
    """Return a list of human-readable violations; empty iff the instance is valid.

    ``regime`` selects which bound the marginal values must satisfy:
    "standard" keeps every derivative inside [L, U]; "relaxed" only pins the
    initial derivative to [L, U] and the average value to at least L/c.
    """
    out = list(instance.setup.violations())
    if out:
        return out
    setup = instance.setup
    lo, hi = setup.lower_bound, setup.upper_bound
    m = setup.num_knapsacks
    tol = TOL * max(1.0, hi)
    if instance.value_mode not in (AGGREGATE, SEPARABLE):
        out.append(f"instance: unknown value mode {instance.value_mode!r}")
        return out
    for n, item in enumerate(instance.items):
        if not (item.size > 0 and math.isfinite(item.size)):
            out.append(f"item {n}: size must be positive and finite")
            continue
        if len(item.rate_limits) != m:
            out.append(f"item {n}: {len(item.rate_limits)} rate limits for {m} knapsacks")
            continue
        if any(y < 0 or not math.isfinite(y) for y in item.rate_limits):
            out.append(f"item {n}: negative rate limit")
        if instance.value_mode == AGGREGATE:
            if item.is_separable:
                out.append(f"item {n}: per-knapsack values in aggregate mode")
                continue
            out.extend(
                _value_fn_violations(item.value, lo, hi, item.size, f"item {n}", regime, relax_c, tol)
            )
        else:
            if not item.is_separable or len(item.value) != m:
                out.append(f"item {n}: separable mode needs one value function per knapsack")
                continue
            for j, vf in enumerate(item.value):
                span = min(item.size, item.rate_limits[j])
                out.extend(
                    _value_fn_violations(vf, lo, hi, span, f"item {n} knapsack {j}", regime, relax_c, tol)
                )
    return out


def assignment_violations(item: Item, assignment: Assignment, capacities, before) -> list[str]:
    """Constraint checks for a single decided assignment (used in tests/harnesses)."""
    out = []
    ys = assignment.fractions
    if len(ys) != len(capacities):
        return ["assignment length mismatch"]
    if sum(ys) > item.size + TOL * max(1.0, item.size):
        out.append("demand exceeded")
    for j, y in enumerate(ys):
        if y < -TOL:
            out.append(f"negative fraction on knapsack {j}")
        if y > item.rate_limits[j] + TOL * max(1.0, item.rate_limits[j]):
            out.append(f"rate limit exceeded on knapsack {j}")
        if before[j] + y > capacities[j] + TOL * max(1.0, capacities[j]):
            out.append(f"capacity exceeded on knapsack {j}")
    return out


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------


def _value_to_obj(vf: ValueFunction) -> dict:
    if vf.kind == LINEAR:
        return {"kind": "linear", "slope": vf.slope}
    if vf.kind == QUADRATIC:
        obj = {"kind": "quadratic", "a": vf.a, "b": vf.b}
        if vf.domain_max is not None:
            obj["domain_max"] = vf.domain_max
        return obj
    return {
        "kind": "general_concave",
        "derivative": list(vf.derivative_grid),
        "domain_max": vf.domain_max,
    }


def _num(obj, key, where):
    if key not in obj:
        raise ParseError(f"{where}: missing field {key!r}")
    v = obj[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ParseError(f"{where}: field {key!r} is not a number")
    return float(v)


def _value_from_obj(obj, size, where) -> ValueFunction:
    if not isinstance(obj, dict) or "kind" not in obj:
        raise ParseError(f"{where}: value must be an object with a 'kind'")
    kind = obj["kind"]
    if kind == "linear":
        return linear_value(_num(obj, "slope", where))
    if kind == "quadratic":
        dom = _num(obj, "domain_max", where) if "domain_max" in obj else size
        return quadratic_value(_num(obj, "a", where), _num(obj, "b", where), dom)
    if kind == "general_concave":
        if "derivative" not in obj:
            raise ParseError(f"{where}: missing field 'derivative'")
        dom = _num(obj, "domain_max", where) if "domain_max" in obj else size
        grid = obj["derivative"]
        if not isinstance(grid, list) or len(grid) < 2:
            raise ParseError(f"{where}: derivative grid needs at least 2 points")
        return general_concave_value([_ensure_num(g, where) for g in grid], dom)
    raise ParseError(f"{where}: unknown value kind {kind!r}")


def _ensure_num(v, where):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ParseError(f"{where}: non-numeric value")
    return float(v)


def instance_to_obj(instance: Instance) -> dict:
    items = []
    for item in instance.items:
        if item.is_separable:
            val = [_value_to_obj(vf) for vf in item.value]
        else:
            val = _value_to_obj(item.value)
        items.append({"size": item.size, "rate_limits": list(item.rate_limits), "value": val})
    return {
        "setup": {
            "capacities": list(instance.setup.capacities),
            "L": instance.setup.lower_bound,
            "U": instance.setup.upper_bound,
        },
        "mode": instance.value_mode,
        "items": items,
    }


def instance_from_obj(obj: dict) -> Instance:
    if "setup" not in obj:
        raise ParseError("instance: missing field 'setup'")
    s = obj["setup"]
    caps = s.get("capacities")
    if not isinstance(caps, list) or not caps:
        raise ParseError("setup: missing or empty 'capacities'")
    setup = Setup(
        capacities=tuple(_ensure_num(c, "setup.capacities") for c in caps),
        lower_bound=_num(s, "L", "setup"),
        upper_bound=_num(s, "U", "setup"),
    )
    mode = obj.get("mode", AGGREGATE)
    if mode not in (AGGREGATE, SEPARABLE):
        raise ParseError(f"instance: unknown mode {mode!r}")
    items = []
    for n, io_ in enumerate(obj.get("items", [])):
        where = f"item {n}"
        size = _num(io_, "size", where)
        rl = io_.get("rate_limits")
        if not isinstance(rl, list):
            raise ParseError(f"{where}: missing field 'rate_limits'")
        if len(rl) != setup.num_knapsacks:
            raise ParseError(
                f"{where}: {len(rl)} rate limits for {setup.num_knapsacks} knapsacks"
            )
        rates = tuple(_ensure_num(y, where) for y in rl)
        raw = io_.get("value")
        if isinstance(raw, list):
            value = tuple(_value_from_obj(v, size, where) for v in raw)
        else:
            value = _value_from_obj(raw, size, where)
        items.append(Item(size=size, rate_limits=rates, value=value))
    return Instance(setup=setup, items=tuple(items), value_mode=mode)


def save_instance(instance: Instance, path, fmt: str = "json"):
    if fmt == "json":
        with open(path, "w") as f:
            json.dump(instance_to_obj(instance), f, sort_keys=True, indent=1)
            f.write("\n")
        return
    if fmt != "csv":
        raise ValueError(f"unknown format {fmt!r}")
    if instance.value_mode != AGGREGATE:
        raise ValueError("csv format only supports aggregate instances")
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["size", "rate_limits", "kind", "slope", "a", "b"])
        for item in instance.items:
            vf = item.value
            rl = ";".join(repr(y) for y in item.rate_limits)
            if vf.kind == LINEAR:
                w.writerow([repr(item.size), rl, "linear", repr(vf.slope), "", ""])
            elif vf.kind == QUADRATIC:
                w.writerow([repr(item.size), rl, "quadratic", "", repr(vf.a), repr(vf.b)])
            else:
                raise ValueError("csv format only supports linear/quadratic values")


def load_instance(path, fmt: str = "json", setup: Setup | None = None, validate: bool = True) -> Instance:
    """Load an instance from JSON (self-contained) or CSV (setup supplied by caller).

    JSON round-trips save_instance bit-exactly.  A failing parse reports the
    byte offset; a structurally sound but invalid instance raises
    ValidationError listing every violated rule.
    """
    if fmt == "json":
        with open(path) as f:
            text = f.read()
        try:
            obj = json.loads(text)
        except json.JSONDecodeError as e:
            raise ParseError(f"parse error at byte offset {e.pos}: {e.msg}") from e
        inst = instance_from_obj(obj)
    elif fmt == "csv":
        if setup is None:
            raise ValueError("csv instances carry no setup; pass one explicitly")
        items = []
        with open(path, newline="") as f:
            reader = csv.DictReader(f)
            for n, row in enumerate(reader):
                where = f"row {n + 2}"  # header is row 1
                try:
                    size = float(row["size"])
                    rates = tuple(float(t) for t in row["rate_limits"].split(";") if t != "")
                except (KeyError, TypeError) as e:
                    raise ParseError(f"{where}: missing field") from e
                except ValueError as e:
                    raise ParseError(f"{where}: non-numeric value") from e
                if len(rates) != setup.num_knapsacks:
                    raise ParseError(
                        f"{where}: {len(rates)} rate limits for {setup.num_knapsacks} knapsacks"
                    )
                kind = row.get("kind", "linear")
                try:
                    if kind == "linear":
                        vf = linear_value(float(row["slope"]))
                    elif kind == "quadratic":
                        vf = quadratic_value(float(row["a"]), float(row["b"]), size)
                    else:
                        raise ParseError(f"{where}: unknown value kind {kind!r}")
                except ValueError as e:
                    raise ParseError(f"{where}: non-numeric value") from e
                items.append(Item(size=size, rate_limits=rates, value=vf))
        inst = Instance(setup=setup, items=tuple(items), value_mode=AGGREGATE)
    else:
        raise ValueError(f"unknown format {fmt!r}")
    if validate:
        bad = validate_instance(inst)
        if bad:
            raise ValidationError(bad)
    return inst


# ---------------------------------------------------------------------------
# canonical report formatting
# ---------------------------------------------------------------------------


def _canon(value, out):
    if value is None or value is True or value is False:
        out.append("null" if value is None else ("true" if value else "false"))
    elif isinstance(value, str):
        out.append(json.dumps(value))
    elif isinstance(value, bool):
        out.append("true" if value else "false")
    elif isinstance(value, int):
        out.append(str(value))
    elif isinstance(value, float):
        if math.isnan(value) or math.isinf(value):
            out.append(json.dumps("inf" if value > 0 else ("-inf" if value < 0 else "nan")))
        else:
            out.append(format(value, ".12g"))
    elif isinstance(value, dict):
        out.append("{")
        for i, key in enumerate(sorted(value)):
            if i:
                out.append(",")
            out.append(json.dumps(str(key)))
            out.append(":")
            _canon(value[key], out)
        out.append("}")
    elif isinstance(value, (list, tuple, np.ndarray)):
        out.append("[")
        for i, v in enumerate(value):
            if i:
                out.append(",")
            _canon(v, out)
        out.append("]")
    elif isinstance(value, (np.floating,)):
        _canon(float(value), out)
    elif isinstance(value, (np.integer,)):
        _canon(int(value), out)
    else:
        raise TypeError(f"cannot canonicalize {type(value)!r}")


def dumps_canonical(obj) -> str:
    """Deterministic JSON: sorted keys, floats at 12 significant digits."""
    out: list[str] = []
    _canon(obj, out)
    return "".join(out)
