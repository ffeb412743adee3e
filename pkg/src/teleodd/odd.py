"""Operational design domain definitions and containment checking.

An ODD is a named conjunction of per-attribute constraints over a flat,
dot-namespaced key space (``env.rain_mm_h``, ``conn.latency_ms``, ...).
Definitions live in plain-text files with one declaration per line:

    name odd_highway
    # intervals are closed; the unit token is kept for display only
    attr conn.latency_ms in [0, 250] ms
    attr scenery.road_type in {highway, rural}
    attr scenery.construction required false
    hysteresis conn.latency_ms 0.1

Containment is evaluated against a ``DomainSnapshot`` (one measurement per
key). Every constrained key must be present in the snapshot; a missing key
is an evaluation error, never a silent pass. Re-entry after a violation is
debounced by a per-key hysteresis band expressed as a fraction of the
constraint width.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace

DEFAULT_HYSTERESIS = 0.05

INTERVAL = "interval"
SET = "set"
BOOL = "bool"
EMPTY = "empty"

_IDENT = re.compile(r"^[A-Za-z_][A-Za-z0-9_.\-]*$")


class OddSyntaxError(ValueError):
    """Raised on malformed definition text, with line/column context."""

    def __init__(self, message: str, line: int, column: int = 1):
        super().__init__(f"line {line}, col {column}: {message}")
        self.line = line
        self.column = column


class OddEvaluationError(KeyError):
    """Raised when a snapshot cannot be judged against a definition."""

    def __init__(self, key: str, reason: str):
        super().__init__(f"{key}: {reason}")
        self.key = key
        self.reason = reason


@dataclass(frozen=True)
class OddAttribute:
    """One constraint: closed interval, enumerated set, or boolean requirement.

    ``kind == EMPTY`` marks a contradictory constraint (nothing satisfies
    it); it only arises from intersecting disjoint definitions.
    """

    key: str
    kind: str
    lo: float = 0.0
    hi: float = 0.0
    unit: str = ""
    members: frozenset[str] = frozenset()
    required: bool = False

    def __post_init__(self):
        if self.kind == INTERVAL and self.lo > self.hi:
            raise ValueError(f"{self.key}: inverted interval [{self.lo}, {self.hi}]")
        if self.kind == SET and not self.members:
            raise ValueError(f"{self.key}: enumerated set must be non-empty")

    def describe(self) -> str:
        if self.kind == INTERVAL:
            unit = f" {self.unit}" if self.unit else ""
            return f"in [{self.lo!r}, {self.hi!r}]{unit}"
        if self.kind == SET:
            return "in {" + ",".join(sorted(self.members)) + "}"
        if self.kind == BOOL:
            return f"required {str(self.required).lower()}"
        return "in {}"

    def satisfied_by(self, value) -> bool:
        if self.kind == INTERVAL:
            v = _as_number(self.key, value)
            return self.lo <= v <= self.hi
        if self.kind == SET:
            return _as_token(value) in self.members
        if self.kind == BOOL:
            return _as_bool(self.key, value) == self.required
        return False

    def margin_for(self, value) -> float:
        """Signed distance to the nearest border, normalized to [-1, 1].

        Positive means inside. Interval margins divide by the width; set
        and boolean constraints have no meaningful distance and report
        +/-1. A zero-width interval reports 0 on exact match, -1 otherwise.
        """
        if self.kind == INTERVAL:
            v = _as_number(self.key, value)
            width = self.hi - self.lo
            if width == 0.0:
                return 0.0 if v == self.lo else -1.0
            if self.lo <= v <= self.hi:
                dist = min(v - self.lo, self.hi - v)
            else:
                dist = -min(abs(v - self.lo), abs(v - self.hi))
            return max(-1.0, min(1.0, dist / width))
        if self.kind == EMPTY:
            return -1.0
        return 1.0 if self.satisfied_by(value) else -1.0


def _as_number(key: str, value) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise OddEvaluationError(key, f"expected a number, got {value!r}")
    return float(value)


def _as_bool(key: str, value) -> bool:
    if isinstance(value, bool):
        return value
    raise OddEvaluationError(key, f"expected a boolean, got {value!r}")


def _as_token(value) -> str:
    if isinstance(value, bool):
        return str(value).lower()
    return str(value)


@dataclass(frozen=True)
class OddDefinition:
    """A named set of attribute constraints plus per-key hysteresis bands."""

    name: str
    attributes: dict[str, OddAttribute] = field(default_factory=dict)
    hysteresis: dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if not self.name or not _IDENT.match(self.name):
            raise ValueError(f"invalid definition name {self.name!r}")
        for key, frac in self.hysteresis.items():
            if key not in self.attributes:
                raise ValueError(f"hysteresis for undeclared key {key}")
            if not 0.0 <= frac < 0.5:
                raise ValueError(f"hysteresis for {key} must be in [0, 0.5)")

    def band_for(self, key: str) -> float:
        return self.hysteresis.get(key, DEFAULT_HYSTERESIS)

    def bands(self) -> dict[str, float]:
        return {k: self.band_for(k) for k in self.attributes}

    @property
    def is_empty(self) -> bool:
        return any(a.kind == EMPTY for a in self.attributes.values())


@dataclass(frozen=True)
class DomainSnapshot:
    """Measured attribute values at one simulator tick."""

    tick: int
    values: dict[str, object] = field(default_factory=dict)


@dataclass(frozen=True)
class ContainmentVerdict:
    """Outcome of judging a snapshot; ``violated`` holds (key, measured,
    constraint description) for every failing key, and ``margin`` the
    normalized border distance per constrained key (negative = outside)."""

    inside: bool
    violated: tuple[tuple[str, object, str], ...] = ()
    margin: dict[str, float] = field(default_factory=dict)

    def violated_keys(self) -> tuple[str, ...]:
        return tuple(entry[0] for entry in self.violated)


def parse_odd_definition(text: str) -> OddDefinition:
    name = ""
    attributes: dict[str, OddAttribute] = {}
    hysteresis: dict[str, float] = {}
    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        fields = line.split(None, 1)
        head, rest = fields[0], (fields[1] if len(fields) > 1 else "")
        if head == "name":
            if name:
                raise OddSyntaxError("duplicate name declaration", lineno)
            if not rest or not _IDENT.match(rest.strip()):
                raise OddSyntaxError(f"invalid name {rest!r}", lineno)
            name = rest.strip()
        elif head == "attr":
            attr = _parse_attr(rest, lineno, raw_line)
            if attr.key in attributes:
                raise OddSyntaxError(f"duplicate key {attr.key}", lineno,
                                     raw_line.find(attr.key) + 1)
            attributes[attr.key] = attr
        elif head == "hysteresis":
            parts = rest.split()
            if len(parts) != 2:
                raise OddSyntaxError("expected: hysteresis <key> <fraction>", lineno)
            key, frac_text = parts
            if key in hysteresis:
                raise OddSyntaxError(f"duplicate hysteresis for {key}", lineno)
            try:
                frac = float(frac_text)
            except ValueError:
                raise OddSyntaxError(f"bad fraction {frac_text!r}", lineno,
                                     raw_line.find(frac_text) + 1) from None
            hysteresis[key] = frac
        else:
            raise OddSyntaxError(f"unknown declaration {head!r}", lineno,
                                 raw_line.find(head) + 1)
    if not name:
        raise OddSyntaxError("missing name declaration", max(1, len(text.splitlines())))
    try:
        return OddDefinition(name, attributes, hysteresis)
    except ValueError as exc:
        raise OddSyntaxError(str(exc), len(text.splitlines())) from None


def _parse_attr(rest: str, lineno: int, raw_line: str) -> OddAttribute:
    col = lambda token: raw_line.find(token) + 1
    parts = rest.split(None, 1)
    if len(parts) != 2:
        raise OddSyntaxError("expected: attr <key> <constraint>", lineno)
    key, spec = parts[0], parts[1].strip()
    if not _IDENT.match(key):
        raise OddSyntaxError(f"invalid key {key!r}", lineno, col(key))
    if spec.startswith("required"):
        value = spec[len("required"):].strip()
        if value not in ("true", "false"):
            raise OddSyntaxError(f"required takes true|false, got {value!r}",
                                 lineno, col(value) if value else 1)
        return OddAttribute(key, BOOL, required=(value == "true"))
    if not spec.startswith("in"):
        raise OddSyntaxError(f"unknown constraint {spec!r}", lineno, col(spec))
    body = spec[2:].strip()
    if body.startswith("["):
        match = re.match(r"^\[([^,\]]+),([^,\]]+)\]\s*(\S*)$", body)
        if not match:
            raise OddSyntaxError(f"malformed interval {body!r}", lineno, col(body))
        lo_t, hi_t, unit = match.group(1).strip(), match.group(2).strip(), match.group(3)
        try:
            lo, hi = float(lo_t), float(hi_t)
        except ValueError:
            raise OddSyntaxError(f"non-numeric bound in {body!r}", lineno, col(body)) from None
        if not (lo == lo and hi == hi) or abs(lo) == float("inf") or abs(hi) == float("inf"):
            raise OddSyntaxError("interval bounds must be finite", lineno, col(body))
        if lo > hi:
            raise OddSyntaxError(f"inverted interval [{lo_t}, {hi_t}]", lineno, col(body))
        return OddAttribute(key, INTERVAL, lo=lo, hi=hi, unit=unit)
    if body.startswith("{"):
        match = re.match(r"^\{([^}]*)\}$", body)
        if not match:
            raise OddSyntaxError(f"malformed set {body!r}", lineno, col(body))
        inner = match.group(1).strip()
        if not inner:
            return OddAttribute(key, EMPTY)
        members = frozenset(m.strip() for m in inner.split(","))
        if any(not m for m in members):
            raise OddSyntaxError(f"empty member in {body!r}", lineno, col(body))
        return OddAttribute(key, SET, members=members)
    raise OddSyntaxError(f"unknown constraint body {body!r}", lineno, col(body))


def serialize_odd_definition(odd: OddDefinition) -> str:
    """Canonical text form: name first, then attrs and hysteresis lines,
    keys sorted lexicographically. parse(serialize(d)) reproduces d."""
    lines = [f"name {odd.name}"]
    for key in sorted(odd.attributes):
        lines.append(f"attr {key} {odd.attributes[key].describe()}")
    for key in sorted(odd.hysteresis):
        lines.append(f"hysteresis {key} {odd.hysteresis[key]!r}")
    return "\n".join(lines) + "\n"


def contains(odd: OddDefinition, snap: DomainSnapshot) -> ContainmentVerdict:
    """Judge a snapshot: inside iff every constraint holds. Missing keys
    raise OddEvaluationError rather than defaulting either way."""
    violated = []
    margins = {}
    for key in sorted(odd.attributes):
        attr = odd.attributes[key]
        if attr.kind == EMPTY:
            value = snap.values.get(key)
            violated.append((key, value, attr.describe()))
            margins[key] = -1.0
            continue
        if key not in snap.values:
            raise OddEvaluationError(key, "missing from snapshot")
        value = snap.values[key]
        margins[key] = attr.margin_for(value)
        if not attr.satisfied_by(value):
            violated.append((key, value, attr.describe()))
    return ContainmentVerdict(inside=not violated, violated=tuple(violated),
                              margin=margins)


def distance_to_border(odd: OddDefinition, snap: DomainSnapshot) -> dict[str, float]:
    """Normalized signed margin per constrained key (positive = inside)."""
    margins = {}
    for key in sorted(odd.attributes):
        attr = odd.attributes[key]
        if attr.kind == EMPTY:
            margins[key] = -1.0
            continue
        if key not in snap.values:
            raise OddEvaluationError(key, "missing from snapshot")
        margins[key] = attr.margin_for(snap.values[key])
    return margins


def apply_hysteresis(prev: ContainmentVerdict, raw: ContainmentVerdict,
                     margins: dict[str, float],
                     band: dict[str, float] | float) -> ContainmentVerdict:
    """Debounce verdict flapping near a border.

    inside -> outside flips immediately. outside -> inside only once every
    previously violated key has recovered to a margin of at least its band;
    until then the verdict stays outside and unrecovered keys stay listed.
    Keys held in the dead zone report margin 0 so that sign and membership
    stay consistent.
    """
    band_for = (lambda k: band) if isinstance(band, (int, float)) else \
        (lambda k: band.get(k, DEFAULT_HYSTERESIS))
    raw_violated = {entry[0]: entry for entry in raw.violated}
    latched = {}
    for entry in prev.violated:
        key = entry[0]
        if key in raw_violated:
            continue
        if margins.get(key, 1.0) < band_for(key):
            latched[key] = entry
    if not raw.inside or latched:
        violated = tuple(raw.violated) + tuple(
            latched[k] for k in sorted(latched))
        out_margin = dict(raw.margin)
        for key in latched:
            if key in out_margin:
                out_margin[key] = min(out_margin[key], 0.0)
        return ContainmentVerdict(inside=False, violated=violated,
                                  margin=out_margin)
    return raw


def intersect(a: OddDefinition, b: OddDefinition) -> OddDefinition:
    """Per-key conjunction of two definitions.

    Shared interval keys must agree on units. Contradictory constraints
    (disjoint intervals or sets, opposing boolean requirements) yield the
    empty marker for that key instead of an error, so the result is a
    definition no snapshot satisfies. Hysteresis bands merge by taking the
    wider (stickier) of the two.
    """
    attributes = dict(a.attributes)
    for key, battr in b.attributes.items():
        if key not in attributes:
            attributes[key] = battr
            continue
        attributes[key] = _conjoin(attributes[key], battr)
    hysteresis = dict(a.hysteresis)
    for key, frac in b.hysteresis.items():
        hysteresis[key] = max(hysteresis.get(key, 0.0), frac)
    hysteresis = {k: v for k, v in hysteresis.items() if k in attributes}
    name = "-and-".join(sorted(set(a.name.split("-and-")) |
                               set(b.name.split("-and-"))))
    return OddDefinition(name, attributes, hysteresis)


def _conjoin(x: OddAttribute, y: OddAttribute) -> OddAttribute:
    if x.kind == EMPTY or y.kind == EMPTY:
        return OddAttribute(x.key, EMPTY)
    if x.kind != y.kind:
        raise ValueError(f"{x.key}: cannot intersect {x.kind} with {y.kind}")
    if x.kind == INTERVAL:
        if x.unit and y.unit and x.unit != y.unit:
            raise ValueError(f"{x.key}: unit mismatch {x.unit!r} vs {y.unit!r}")
        lo, hi = max(x.lo, y.lo), min(x.hi, y.hi)
        if lo > hi:
            return OddAttribute(x.key, EMPTY)
        return OddAttribute(x.key, INTERVAL, lo=lo, hi=hi,
                            unit=x.unit or y.unit)
    if x.kind == SET:
        members = x.members & y.members
        if not members:
            return OddAttribute(x.key, EMPTY)
        return OddAttribute(x.key, SET, members=members)
    if x.required != y.required:
        return OddAttribute(x.key, EMPTY)
    return x


def spans(outer: OddDefinition, inner: OddDefinition) -> bool:
    """True when outer's feasible region contains inner's, checked
    per-attribute: every key outer constrains must be constrained at least
    as tightly by inner."""
    if inner.is_empty:
        return True
    for key, oattr in outer.attributes.items():
        iattr = inner.attributes.get(key)
        if iattr is None:
            return False
        if oattr.kind == EMPTY:
            if iattr.kind != EMPTY:
                return False
            continue
        if iattr.kind == EMPTY:
            continue
        if oattr.kind != iattr.kind:
            return False
        if oattr.kind == INTERVAL:
            if not (oattr.lo <= iattr.lo and iattr.hi <= oattr.hi):
                return False
        elif oattr.kind == SET:
            if not iattr.members <= oattr.members:
                return False
        elif oattr.required != iattr.required:
            return False
    return True


def normalize(odd: OddDefinition) -> OddDefinition:
    """Stable canonical form (currently: drop redundant default bands)."""
    hysteresis = {k: v for k, v in odd.hysteresis.items()
                  if v != DEFAULT_HYSTERESIS}
    return replace(odd, hysteresis=hysteresis)
