"""Parametrized networks of priced timed automata.

A model document is JSON (see ``docs/model-format.md``).  Parsing yields a
:class:`ParametrizedModel`; every ``#range``/``#booleanmatrix`` placeholder in
it becomes one dimension of the :class:`ParameterSpace`.  Picking an
assignment and calling :func:`instantiate` produces a concrete
:class:`Network` with every constant folded and every name resolved to a
slot, ready for simulation.
"""

from __future__ import annotations

import itertools
import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterator, Mapping, Sequence, Union

from .expr import (
    COMPARISONS,
    FLIP,
    Binary,
    Expr,
    ExprError,
    Index,
    Lit,
    Name,
    Param,
    Unary,
    apply_binary,
    apply_unary,
    names as expr_names,
    parse_assignment,
    parse_expr,
    unparse,
)

CARDINALITY_LIMIT = 2**31
DEFAULT_INT_RANGE = (-32768, 32767)
TIME = "time"


class ModelError(ValueError):
    """Semantic error; ``path`` locates the offending element."""

    def __init__(self, message: str, path: str = ""):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


class ModelSyntaxError(ModelError):
    def __init__(self, message: str, line: int | None = None, column: int | None = None, path: str = ""):
        self.line = line
        self.column = column
        loc = f"line {line}, column {column}: " if line is not None else ""
        super().__init__(loc + message, path)


# --------------------------------------------------------------------------
# parametrized model types


@dataclass(frozen=True)
class Placeholder:
    kind: str  # "range" | "booleanmatrix"
    args: tuple
    symmetric: bool = False
    zero_diagonal: bool = False
    spelling: str = ""  # "binarymatrix" when written with the alias

    def text(self) -> str:
        if self.kind == "range":
            return f"#range({', '.join(unparse(a) for a in self.args)})"
        word = self.spelling or "booleanmatrix"
        parts = [unparse(a) for a in self.args]
        if self.symmetric:
            parts.append("symmetric")
        if self.zero_diagonal:
            parts.append("zerodiag")
        return f"#{word}({', '.join(parts)})"


@dataclass(frozen=True)
class ClockBound:
    clock: str
    op: str
    bound: Expr


@dataclass(frozen=True)
class Location:
    name: str
    invariant: tuple = ()
    rates: tuple = ()  # ((clock, Expr), ...)
    exp_rate: tuple | None = None  # (Expr, Expr)


@dataclass(frozen=True)
class Sync:
    kind: str  # "!" or "?"
    channel: Expr


@dataclass(frozen=True)
class Update:
    target: Expr
    value: Expr


@dataclass(frozen=True)
class Edge:
    source: str
    target: str
    clock_guard: tuple = ()
    guard: Expr | None = None
    sync: Sync | None = None
    resets: tuple = ()
    updates: tuple = ()
    weight: Expr = Lit(1)


@dataclass(frozen=True)
class VarDecl:
    name: str
    dims: tuple = ()
    init: Expr = Lit(0)
    lo: Expr = Lit(DEFAULT_INT_RANGE[0])
    hi: Expr = Lit(DEFAULT_INT_RANGE[1])


@dataclass(frozen=True)
class ChannelDecl:
    name: str
    kind: str  # "handshake" | "broadcast"
    dims: tuple = ()


@dataclass(frozen=True)
class Template:
    name: str
    parameters: tuple
    clocks: tuple
    variables: tuple
    locations: tuple
    initial: str
    edges: tuple


@dataclass(frozen=True)
class InstanceDecl:
    template: str
    args: tuple = ()
    name: str | None = None
    count: Expr | None = None
    index: str | None = None


@dataclass(frozen=True)
class ConstDecl:
    name: str
    value: Any  # Expr, Param, or a matrix as tuple of tuples


@dataclass(frozen=True)
class ParametrizedModel:
    constants: tuple = ()
    channels: tuple = ()
    clocks: tuple = ()
    variables: tuple = ()
    templates: tuple = ()
    instances: tuple = ()
    parameters: tuple = ()  # ((name, Placeholder), ...) in document order
    key_order: tuple = ()

    def template(self, name: str) -> Template:
        for t in self.templates:
            if t.name == name:
                return t
        raise KeyError(name)


# --------------------------------------------------------------------------
# parameter spaces


@dataclass(frozen=True)
class IntRange:
    lo: int
    hi: int

    @property
    def cardinality(self) -> int:
        return self.hi - self.lo + 1

    def value(self, k: int) -> int:
        return self.lo + k

    def __contains__(self, v) -> bool:
        return isinstance(v, int) and not isinstance(v, bool) and self.lo <= v <= self.hi


@dataclass(frozen=True)
class BooleanMatrix:
    n: int
    symmetric: bool = False
    zero_diagonal: bool = False

    @property
    def free_entries(self) -> tuple:
        out = []
        for i in range(self.n):
            start = i if self.symmetric else 0
            for j in range(start, self.n):
                if self.zero_diagonal and i == j:
                    continue
                out.append((i, j))
        return tuple(out)

    @property
    def cardinality(self) -> int:
        return 2 ** len(self.free_entries)

    def value(self, k: int) -> tuple:
        """k-th matrix: free entries in row-major order, first entry most significant."""
        free = self.free_entries
        m = [[False] * self.n for _ in range(self.n)]
        nbits = len(free)
        for pos, (i, j) in enumerate(free):
            bit = bool((k >> (nbits - 1 - pos)) & 1)
            m[i][j] = bit
            if self.symmetric:
                m[j][i] = bit
        return tuple(tuple(row) for row in m)

    def __contains__(self, v) -> bool:
        try:
            rows = [tuple(bool(x) for x in row) for row in v]
        except TypeError:
            return False
        if len(rows) != self.n or any(len(r) != self.n for r in rows):
            return False
        for i in range(self.n):
            if self.zero_diagonal and rows[i][i]:
                return False
            if self.symmetric and any(rows[i][j] != rows[j][i] for j in range(self.n)):
                return False
        return True


Domain = Union[IntRange, BooleanMatrix]


@dataclass(frozen=True)
class ParameterSpace:
    domains: tuple = ()  # ((name, Domain), ...)

    @property
    def names(self) -> tuple:
        return tuple(n for n, _ in self.domains)

    @property
    def cardinality(self) -> int:
        c = 1
        for _, d in self.domains:
            c *= d.cardinality
        return c

    def __getitem__(self, name: str) -> Domain:
        for n, d in self.domains:
            if n == name:
                return d
        raise KeyError(name)

    def __len__(self) -> int:
        return len(self.domains)


class Assignments(Sequence):
    """Lazy lexicographic enumeration; the first parameter varies slowest."""

    def __init__(self, space: ParameterSpace):
        self.space = space
        self._len = space.cardinality

    def __len__(self) -> int:
        return self._len

    def __getitem__(self, k):
        if isinstance(k, slice):
            return [self[i] for i in range(*k.indices(self._len))]
        if k < 0:
            k += self._len
        if not 0 <= k < self._len:
            raise IndexError(k)
        out = {}
        for name, dom in reversed(self.space.domains):
            k, digit = divmod(k, dom.cardinality)
            out[name] = dom.value(digit)
        return {n: out[n] for n in self.space.names}

    def __iter__(self) -> Iterator[dict]:
        for k in range(self._len):
            yield self[k]


def parameter_space(pm: ParametrizedModel) -> ParameterSpace:
    env = _constant_env(pm, {}, skip_params=True)
    domains = []
    for name, ph in pm.parameters:
        path = f"parameter {name}"
        args = [_fold_int(a, env, path) for a in ph.args]
        if ph.kind == "range":
            if len(args) != 2:
                raise ModelError("#range takes two arguments", path)
            if args[0] > args[1]:
                raise ModelError(f"empty range {args[0]}..{args[1]}", path)
            domains.append((name, IntRange(args[0], args[1])))
        else:
            if len(args) == 2 and args[0] != args[1]:
                raise ModelError("boolean matrices must be square", path)
            if len(args) not in (1, 2) or args[0] < 1:
                raise ModelError("matrix size must be a positive integer", path)
            domains.append((name, BooleanMatrix(args[0], ph.symmetric, ph.zero_diagonal)))
    return ParameterSpace(tuple(domains))


def enumerate_assignments(space: ParameterSpace) -> Assignments:
    if space.cardinality > CARDINALITY_LIMIT:
        raise OverflowError(f"parameter space has {space.cardinality} points (limit {CARDINALITY_LIMIT})")
    return Assignments(space)


# --------------------------------------------------------------------------
# parsing

_PLACEHOLDER = re.compile(r"^\s*#\s*(range|booleanmatrix|binarymatrix)\s*\((.*)\)\s*$", re.S)
_CLOCK_OPS = ("<", "<=", ">", ">=")


def _is_placeholder(value) -> bool:
    return isinstance(value, str) and value.lstrip().startswith("#")


def _split_args(text: str) -> list[str]:
    parts, depth, cur = [], 0, []
    for ch in text:
        if ch in "([":
            depth += 1
        elif ch in ")]":
            depth -= 1
        if ch == "," and depth == 0:
            parts.append("".join(cur))
            cur = []
        else:
            cur.append(ch)
    parts.append("".join(cur))
    return [p.strip() for p in parts if p.strip()]


def parse_placeholder(text: str, path: str = "") -> Placeholder:
    m = _PLACEHOLDER.match(text)
    if not m:
        raise ModelSyntaxError(f"malformed placeholder {text!r}", path=path)
    word, body = m.group(1), m.group(2)
    parts = _split_args(body)
    flags = {p for p in parts if p in ("symmetric", "zerodiag")}
    args = tuple(_expr(p, path) for p in parts if p not in flags)
    if word == "range":
        if flags or len(args) != 2:
            raise ModelSyntaxError("#range takes exactly two arguments", path=path)
        return Placeholder("range", args)
    if len(args) not in (1, 2):
        raise ModelSyntaxError(f"#{word} takes one or two size arguments", path=path)
    return Placeholder(
        "booleanmatrix", args, "symmetric" in flags, "zerodiag" in flags,
        "binarymatrix" if word == "binarymatrix" else "",
    )


def _expr(value, path: str) -> Expr:
    if isinstance(value, bool):
        return Lit(value)
    if isinstance(value, int):
        return Lit(value)
    if isinstance(value, str):
        try:
            return parse_expr(value)
        except ExprError as e:
            raise ModelSyntaxError(str(e), column=e.column, path=path) from None
    raise ModelSyntaxError(f"expected an expression, got {value!r}", path=path)


class _Reader:
    def __init__(self):
        self.parameters: list[tuple[str, Placeholder]] = []

    def value(self, raw, path: str, allow_param: bool = True) -> Expr:
        if _is_placeholder(raw):
            if not allow_param:
                raise ModelError("placeholder not allowed here", path)
            ph = parse_placeholder(raw, path)
            if ph.kind != "range":
                raise ModelError("boolean-matrix placeholders may only define constants", path)
            self.parameters.append((path, ph))
            return Param(path)
        return _expr(raw, path)

    def clock_bounds(self, raw, clocks: set, path: str) -> tuple:
        if raw is None:
            return ()
        if isinstance(raw, str):
            node = _expr(raw, path)
            conj = _conjuncts(node, path)
            out = []
            for atom in conj:
                out.append(self._bound_from_atom(atom, clocks, path))
            return tuple(out)
        if not isinstance(raw, list):
            raise ModelSyntaxError("clock constraint must be a string or a list", path=path)
        out = []
        for k, item in enumerate(raw):
            p = f"{path}[{k}]"
            if not isinstance(item, dict) or set(item) - {"clock", "op", "bound"}:
                raise ModelSyntaxError("clock bound needs keys clock, op, bound", path=p)
            clock, op = item.get("clock"), item.get("op")
            if op not in _CLOCK_OPS:
                raise ModelError(f"clock bound operator must be one of {_CLOCK_OPS}", p)
            if clock not in clocks:
                raise ModelError(f"unknown clock {clock!r}", p)
            out.append(ClockBound(clock, op, self.value(item.get("bound"), f"{p}.bound")))
        return tuple(out)

    def _bound_from_atom(self, atom, clocks, path) -> ClockBound:
        if not (isinstance(atom, Binary) and atom.op in COMPARISONS):
            raise ModelError(f"clock constraint must be a comparison: {unparse(atom)!r}", path)
        op = atom.op
        left, right = atom.left, atom.right
        if isinstance(right, Name) and right.id in clocks and not (isinstance(left, Name) and left.id in clocks):
            left, right, op = right, left, FLIP[op]
        if not (isinstance(left, Name) and left.id in clocks):
            raise ModelError(f"unknown clock in {unparse(atom)!r}", path)
        if op not in _CLOCK_OPS:
            raise ModelError(f"clock bound operator must be one of {_CLOCK_OPS}", path)
        return ClockBound(left.id, op, right)


def _conjuncts(node, path) -> list:
    if isinstance(node, Binary) and node.op == "&&":
        return _conjuncts(node.left, path) + _conjuncts(node.right, path)
    if isinstance(node, Binary) and node.op == "||":
        raise ModelError("disjunctive clock guard (clock constraints must be conjunctions)", path)
    if isinstance(node, Unary) and node.op == "!":
        raise ModelError("negated clock guard (clock constraints must be conjunctions)", path)
    return [node]


def _as_list(v, path: str) -> list:
    """A single string stands for a one-element list."""
    if isinstance(v, str):
        return [v]
    if not isinstance(v, list) or not all(isinstance(x, str) for x in v):
        raise ModelError("expected a string or a list of strings", path)
    return v


def _expect_keys(obj, allowed: set, path: str, required: Sequence[str] = ()):
    if not isinstance(obj, dict):
        raise ModelSyntaxError("expected an object", path=path)
    extra = set(obj) - allowed
    if extra:
        raise ModelError(f"unknown keys {sorted(extra)}", path)
    for key in required:
        if key not in obj:
            raise ModelError(f"missing key {key!r}", path)


def _ident(value, path) -> str:
    if not isinstance(value, str) or not re.fullmatch(r"[A-Za-z_][A-Za-z_0-9]*", value):
        raise ModelSyntaxError(f"invalid identifier {value!r}", path=path)
    return value


def _dims(reader: _Reader, raw, path) -> tuple:
    if raw is None:
        return ()
    if not isinstance(raw, list):
        raw = [raw]
    return tuple(reader.value(d, f"{path}[{k}]", allow_param=False) for k, d in enumerate(raw))


def _var_decls(reader: _Reader, raw, path) -> tuple:
    out = []
    seen = set()
    for k, item in enumerate(raw or []):
        p = f"{path}[{k}]"
        _expect_keys(item, {"name", "size", "init", "range"}, p, ["name"])
        name = _ident(item["name"], f"{p}.name")
        if name in seen:
            raise ModelError(f"duplicate variable {name!r}", p)
        seen.add(name)
        lo, hi = (Lit(DEFAULT_INT_RANGE[0]), Lit(DEFAULT_INT_RANGE[1]))
        if "range" in item:
            rng = item["range"]
            if not isinstance(rng, list) or len(rng) != 2:
                raise ModelSyntaxError("range must be [lo, hi]", path=f"{p}.range")
            lo = reader.value(rng[0], f"{p}.range[0]", allow_param=False)
            hi = reader.value(rng[1], f"{p}.range[1]", allow_param=False)
        out.append(VarDecl(
            name, _dims(reader, item.get("size"), f"{p}.size"),
            reader.value(item.get("init", 0), f"{p}.init"), lo, hi,
        ))
    return tuple(out)


def _sync(reader: _Reader, raw, path) -> Sync | None:
    if raw is None:
        return None
    if not isinstance(raw, str) or not raw.strip() or raw.strip()[-1] not in "!?":
        raise ModelSyntaxError("sync must look like 'chan!' or 'chan[i]?'", path=path)
    text = raw.strip()
    return Sync(text[-1], _expr(text[:-1], path))


def _template(reader: _Reader, raw, path, channel_names: set, global_clocks: set) -> Template:
    _expect_keys(raw, {"name", "parameters", "clocks", "variables", "locations", "initial", "edges"}, path,
                 ["name", "locations"])
    name = _ident(raw["name"], f"{path}.name")
    path = f"templates.{name}"
    params = tuple(_ident(p, f"{path}.parameters") for p in raw.get("parameters", []))
    clocks = tuple(_ident(c, f"{path}.clocks") for c in raw.get("clocks", []))
    if len(set(clocks)) != len(clocks):
        raise ModelError("duplicate clock names", f"{path}.clocks")
    if set(clocks) & global_clocks or TIME in global_clocks:
        raise ModelError("template clock shadows a global clock", f"{path}.clocks")
    variables = _var_decls(reader, raw.get("variables"), f"{path}.variables")
    all_clocks = set(clocks) | global_clocks
    locs = []
    loc_names = set()
    for k, lraw in enumerate(raw["locations"]):
        _expect_keys(lraw, {"name", "invariant", "rates", "exp_rate"}, f"{path}.locations[{k}]", ["name"])
        lname = _ident(lraw["name"], f"{path}.locations[{k}].name")
        lp = f"{path}.{lname}"
        if lname in loc_names:
            raise ModelError(f"duplicate location {lname!r}", lp)
        loc_names.add(lname)
        inv = reader.clock_bounds(lraw.get("invariant"), all_clocks, f"{lp}.invariant")
        rates = []
        for c, r in (lraw.get("rates") or {}).items():
            if c not in clocks:
                raise ModelError(f"rate for unknown clock {c!r}", f"{lp}.rates")
            rexpr = reader.value(r, f"{lp}.rates.{c}")
            if isinstance(rexpr, Lit) and (isinstance(rexpr.value, float) or rexpr.value < 0):
                raise ModelError("rates must be non-negative integers", f"{lp}.rates.{c}")
            rates.append((c, rexpr))
        exp = lraw.get("exp_rate")
        if exp is not None:
            if not isinstance(exp, list) or len(exp) != 2:
                raise ModelSyntaxError("exp_rate must be [i, j]", path=f"{lp}.exp_rate")
            exp = (reader.value(exp[0], f"{lp}.exp_rate.0"), reader.value(exp[1], f"{lp}.exp_rate.1"))
            declared = dict(rates)
            for b in inv:
                r = declared.get(b.clock, Lit(1))
                if b.op in ("<", "<=") and isinstance(r, Lit) and r.value > 0:
                    raise ModelError("exp_rate on a location whose invariant bounds time", lp)
        locs.append(Location(lname, inv, tuple(rates), exp))
    if not locs:
        raise ModelError("template has no locations", path)
    initial = raw.get("initial", locs[0].name)
    if initial not in loc_names:
        raise ModelError(f"initial location {initial!r} does not exist", f"{path}.initial")
    edges = []
    for k, eraw in enumerate(raw.get("edges", [])):
        ep = f"{path}.edges[{k}]"
        _expect_keys(eraw, {"from", "to", "clock_guard", "guard", "sync", "reset", "update", "weight"}, ep,
                     ["from", "to"])
        for end in ("from", "to"):
            if eraw[end] not in loc_names:
                raise ModelError(f"edge endpoint {eraw[end]!r} is not a location", f"{ep}.{end}")
        cg = reader.clock_bounds(eraw.get("clock_guard"), all_clocks, f"{ep}.clock_guard")
        guard = eraw.get("guard")
        guard = None if guard is None else reader.value(guard, f"{ep}.guard", allow_param=False)
        sync = _sync(reader, eraw.get("sync"), f"{ep}.sync")
        if sync is not None:
            base = sync.channel
            while isinstance(base, Index):
                base = base.base
            if not isinstance(base, Name) or base.id not in channel_names:
                raise ModelError(f"unknown channel in sync {eraw['sync']!r}", f"{ep}.sync")
        resets = []
        for c in _as_list(eraw.get("reset", []), f"{ep}.reset"):
            if c not in all_clocks:
                raise ModelError(f"reset of unknown clock {c!r}", f"{ep}.reset")
            resets.append(c)
        updates = []
        for j, u in enumerate(_as_list(eraw.get("update", []), f"{ep}.update")):
            try:
                lhs, rhs = parse_assignment(u)
            except ExprError as e:
                raise ModelSyntaxError(str(e), column=e.column, path=f"{ep}.update[{j}]") from None
            updates.append(Update(lhs, rhs))
        weight = reader.value(eraw.get("weight", 1), f"{ep}.weight")
        if isinstance(weight, Lit) and (isinstance(weight.value, float) or weight.value < 1):
            raise ModelError("edge weight must be a positive integer", f"{ep}.weight")
        edges.append(Edge(eraw["from"], eraw["to"], cg, guard, sync, tuple(resets), tuple(updates), weight))
    return Template(name, params, clocks, variables, tuple(locs), initial, tuple(edges))


_TOP_KEYS = ("constants", "channels", "clocks", "variables", "templates", "instances")


def parse_model(text: Union[str, bytes, Mapping]) -> ParametrizedModel:
    """Parse a model document (JSON text or an already decoded mapping)."""
    if isinstance(text, (str, bytes)):
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as e:
            raise ModelSyntaxError(e.msg, e.lineno, e.colno) from None
    else:
        doc = text
    if not isinstance(doc, dict):
        raise ModelSyntaxError("model document must be a JSON object")
    extra = set(doc) - set(_TOP_KEYS)
    if extra:
        raise ModelError(f"unknown top-level keys {sorted(extra)}")
    reader = _Reader()
    result: dict[str, Any] = {}
    # channel names are needed while reading templates, whatever the key order
    channel_names = set()
    for k, c in enumerate(doc.get("channels", [])):
        _expect_keys(c, {"name", "kind", "size"}, f"channels[{k}]", ["name"])
        channel_names.add(_ident(c["name"], f"channels[{k}].name"))
    global_clocks = set()
    for c in doc.get("clocks", []):
        global_clocks.add(_ident(c, "clocks"))
    if TIME in global_clocks:
        raise ModelError("'time' is the implicit global clock", "clocks")
    for key in doc:
        raw = doc[key]
        if key == "constants":
            if not isinstance(raw, dict):
                raise ModelSyntaxError("constants must be an object", path="constants")
            consts = []
            for name, value in raw.items():
                p = f"constants.{_ident(name, 'constants')}"
                if _is_placeholder(value):
                    ph = parse_placeholder(value, p)
                    reader.parameters.append((name, ph))
                    consts.append(ConstDecl(name, Param(name)))
                elif isinstance(value, list):
                    rows = []
                    for row in value:
                        if not isinstance(row, list):
                            rows = None
                            break
                        rows.append(tuple(row))
                    if rows is None:
                        consts.append(ConstDecl(name, tuple(value)))
                    else:
                        consts.append(ConstDecl(name, tuple(rows)))
                else:
                    consts.append(ConstDecl(name, _expr(value, p)))
            result["constants"] = tuple(consts)
        elif key == "channels":
            chans = []
            for k, c in enumerate(raw):
                kind = c.get("kind", "handshake")
                if kind not in ("handshake", "broadcast"):
                    raise ModelError("channel kind must be handshake or broadcast", f"channels[{k}].kind")
                chans.append(ChannelDecl(c["name"], kind, _dims(reader, c.get("size"), f"channels[{k}].size")))
            result["channels"] = tuple(chans)
        elif key == "clocks":
            result["clocks"] = tuple(raw)
        elif key == "variables":
            result["variables"] = _var_decls(reader, raw, "variables")
        elif key == "templates":
            temps = []
            names = set()
            for k, t in enumerate(raw):
                tmpl = _template(reader, t, f"templates[{k}]", channel_names, global_clocks)
                if tmpl.name in names:
                    raise ModelError(f"duplicate template {tmpl.name!r}", f"templates[{k}]")
                names.add(tmpl.name)
                temps.append(tmpl)
            result["templates"] = tuple(temps)
        elif key == "instances":
            insts = []
            for k, item in enumerate(raw):
                p = f"instances[{k}]"
                _expect_keys(item, {"template", "args", "name", "count", "index"}, p, ["template"])
                count = item.get("count")
                index = item.get("index")
                if (count is None) != (index is None):
                    raise ModelError("count and index go together", p)
                insts.append(InstanceDecl(
                    item["template"],
                    tuple(reader.value(a, f"{p}.args[{j}]") for j, a in enumerate(item.get("args", []))),
                    item.get("name"),
                    None if count is None else reader.value(count, f"{p}.count"),
                    index,
                ))
            result["instances"] = tuple(insts)
    pm = ParametrizedModel(parameters=tuple(reader.parameters), key_order=tuple(doc), **result)
    _check_static(pm)
    return pm


def _check_static(pm: ParametrizedModel) -> None:
    templates = {t.name: t for t in pm.templates}
    if not pm.instances:
        raise ModelError("model declares no instances", "instances")
    for k, inst in enumerate(pm.instances):
        p = f"instances[{k}]"
        if inst.template not in templates:
            raise ModelError(f"unknown template {inst.template!r}", p)
        t = templates[inst.template]
        if len(inst.args) != len(t.parameters):
            raise ModelError(
                f"template {t.name} takes {len(t.parameters)} arguments, {len(inst.args)} given", p)
    names = [n for n, _ in pm.parameters]
    if len(set(names)) != len(names):
        raise ModelError("duplicate parameter names")


def load_model(path) -> ParametrizedModel:
    return parse_model(Path(path).read_text(encoding="utf-8"))


# --------------------------------------------------------------------------
# serialization


def _ser(e) -> Any:
    if isinstance(e, Param):
        raise AssertionError("handled by caller")
    if isinstance(e, Lit) and isinstance(e.value, (int, bool)):
        return e.value
    return unparse(e)


def serialize_model(pm: ParametrizedModel) -> dict:
    """Inverse of :func:`parse_model`; ``parse_model(serialize_model(pm)) == pm``."""
    params = dict(pm.parameters)

    def val(e):
        if isinstance(e, Param):
            return params[e.name].text()
        return _ser(e)

    def bounds(bs):
        return [{"clock": b.clock, "op": b.op, "bound": val(b.bound)} for b in bs]

    def vars_(vs):
        out = []
        for v in vs:
            d = {"name": v.name}
            if v.dims:
                d["size"] = [val(x) for x in v.dims]
            d["init"] = val(v.init)
            d["range"] = [val(v.lo), val(v.hi)]
            out.append(d)
        return out

    doc: dict[str, Any] = {}
    for key in pm.key_order or _TOP_KEYS:
        if key == "constants":
            c = {}
            for decl in pm.constants:
                v = decl.value
                if isinstance(v, tuple):
                    c[decl.name] = [list(r) if isinstance(r, tuple) else r for r in v]
                else:
                    c[decl.name] = val(v)
            doc["constants"] = c
        elif key == "channels":
            doc["channels"] = [
                {"name": c.name, "kind": c.kind, **({"size": [val(x) for x in c.dims]} if c.dims else {})}
                for c in pm.channels
            ]
        elif key == "clocks":
            doc["clocks"] = list(pm.clocks)
        elif key == "variables":
            doc["variables"] = vars_(pm.variables)
        elif key == "templates":
            temps = []
            for t in pm.templates:
                locs = []
                for loc in t.locations:
                    d = {"name": loc.name}
                    if loc.invariant:
                        d["invariant"] = bounds(loc.invariant)
                    if loc.rates:
                        d["rates"] = {c: val(r) for c, r in loc.rates}
                    if loc.exp_rate is not None:
                        d["exp_rate"] = [val(loc.exp_rate[0]), val(loc.exp_rate[1])]
                    locs.append(d)
                edges = []
                for e in t.edges:
                    d = {"from": e.source, "to": e.target}
                    if e.clock_guard:
                        d["clock_guard"] = bounds(e.clock_guard)
                    if e.guard is not None:
                        d["guard"] = unparse(e.guard)
                    if e.sync is not None:
                        d["sync"] = unparse(e.sync.channel) + e.sync.kind
                    if e.resets:
                        d["reset"] = list(e.resets)
                    if e.updates:
                        d["update"] = [f"{unparse(u.target)} := {unparse(u.value)}" for u in e.updates]
                    d["weight"] = val(e.weight)
                    edges.append(d)
                temps.append({
                    "name": t.name, "parameters": list(t.parameters), "clocks": list(t.clocks),
                    "variables": vars_(t.variables), "locations": locs, "initial": t.initial, "edges": edges,
                })
            doc["templates"] = temps
        elif key == "instances":
            out = []
            for i in pm.instances:
                d = {"template": i.template, "args": [val(a) for a in i.args]}
                if i.name is not None:
                    d["name"] = i.name
                if i.count is not None:
                    d["count"] = val(i.count)
                    d["index"] = i.index
                out.append(d)
            doc["instances"] = out
    return doc


def dumps_model(pm: ParametrizedModel) -> str:
    return json.dumps(serialize_model(pm), indent=2)


# --------------------------------------------------------------------------
# resolved expression nodes (only appear inside a Network)


@dataclass(frozen=True)
class VarRef:
    slot: int
    name: str


@dataclass(frozen=True)
class VarElem:
    base: int
    dims: tuple
    indices: tuple
    name: str


@dataclass(frozen=True)
class ConstElem:
    table: tuple
    indices: tuple
    name: str


@dataclass(frozen=True)
class ClockRef:
    index: int
    name: str


@dataclass(frozen=True)
class LocIs:
    instance: int
    location: int
    name: str


# --------------------------------------------------------------------------
# folding


def _fold(e, env: Mapping[str, Any], path: str, resolve=None):
    """Fold constants; ``resolve`` maps leftover names to runtime nodes."""
    if isinstance(e, Lit):
        return e
    if isinstance(e, Param):
        if e.name not in env:
            raise ModelError(f"parameter {e.name!r} is not assigned", path)
        return Lit(env[e.name])
    if isinstance(e, Name):
        if e.id in env:
            v = env[e.id]
            return v if isinstance(v, tuple) else Lit(v)
        if resolve is not None:
            r = resolve(e.id)
            if r is not None:
                return r
        raise ModelError(f"unknown identifier {e.id!r}", path)
    if isinstance(e, Index):
        base = _fold(e.base, env, path, resolve)
        idx = _fold(e.index, env, path, resolve)
        if isinstance(base, tuple):
            if isinstance(idx, Lit):
                try:
                    if idx.value < 0:
                        raise IndexError
                    v = base[idx.value]
                except (IndexError, TypeError):
                    raise ModelError(f"index {idx.value} out of bounds in {unparse(e)!r}", path) from None
                return v if isinstance(v, tuple) else Lit(v)
            return ConstElem(base, (idx,), unparse(e.base))
        if isinstance(base, ConstElem):
            return ConstElem(base.table, base.indices + (idx,), base.name)
        if isinstance(base, VarElem):
            if len(base.indices) >= len(base.dims):
                raise ModelError(f"too many indices in {unparse(e)!r}", path)
            node = VarElem(base.base, base.dims, base.indices + (idx,), base.name)
            if len(node.indices) == len(node.dims) and all(isinstance(i, Lit) for i in node.indices):
                slot = _flat(node, path)
                return VarRef(slot, f"{node.name}{''.join(f'[{i.value}]' for i in node.indices)}")
            return node
        raise ModelError(f"cannot index {unparse(e.base)!r}", path)
    if isinstance(e, Unary):
        a = _fold(e.operand, env, path, resolve)
        if isinstance(a, Lit):
            return Lit(apply_unary(e.op, a.value))
        return Unary(e.op, a)
    if isinstance(e, Binary):
        a = _fold(e.left, env, path, resolve)
        b = _fold(e.right, env, path, resolve)
        if isinstance(a, Lit) and isinstance(b, Lit):
            try:
                return Lit(apply_binary(e.op, a.value, b.value))
            except ZeroDivisionError:
                raise ModelError(f"division by zero in {unparse(e)!r}", path) from None
        if isinstance(a, tuple) or isinstance(b, tuple):
            raise ModelError(f"array used as a value in {unparse(e)!r}", path)
        return Binary(e.op, a, b)
    if isinstance(e, (VarRef, VarElem, ConstElem, ClockRef, LocIs)):
        return e
    raise ModelError(f"unsupported expression {e!r}", path)


def _flat(node: VarElem, path: str) -> int:
    slot = 0
    for i, d in zip(node.indices, node.dims):
        if not 0 <= i.value < d:
            raise ModelError(f"index {i.value} out of bounds for {node.name}", path)
        slot = slot * d + i.value
    return node.base + slot


def _fold_int(e, env, path) -> int:
    v = _fold(e, env, path)
    if not isinstance(v, Lit) or isinstance(v.value, float):
        raise ModelError(f"expected an integer constant, got {unparse(e) if not isinstance(e, Param) else e.name}", path)
    return int(v.value)


def _constant_env(pm: ParametrizedModel, assignment: Mapping, skip_params: bool = False) -> dict:
    env: dict[str, Any] = {}
    skipped: set[str] = set()  # parameters, and constants depending on them, when skip_params
    for decl in pm.constants:
        v = decl.value
        p = f"constants.{decl.name}"
        if isinstance(v, Param):
            if skip_params:
                skipped.add(decl.name)
                continue
            env[decl.name] = assignment[decl.name]
        elif skip_params and not isinstance(v, tuple) and expr_names(v) & skipped:
            skipped.add(decl.name)
        elif isinstance(v, tuple):
            env[decl.name] = v
        else:
            folded = _fold(v, env, p)
            if not isinstance(folded, (Lit, tuple)):
                raise ModelError("constant must fold to a value", p)
            env[decl.name] = folded if isinstance(folded, tuple) else folded.value
    return env


# --------------------------------------------------------------------------
# networks


@dataclass(frozen=True)
class LocNet:
    name: str
    invariant: tuple  # ((clock, op, bound), ...)
    rates: tuple  # ((clock, rate), ...) for the owning instance's clocks
    exp_rate: tuple | None
    edges: tuple  # EdgeNet, initiating and receiving alike


@dataclass(frozen=True)
class EdgeNet:
    source: int
    target: int
    clock_guard: tuple  # ((clock, op, bound), ...)
    guard: Any  # resolved expression or None
    sync: tuple | None  # (kind, channel expression)
    resets: tuple
    updates: tuple  # ((lvalue, expression), ...)
    weight: int


@dataclass(frozen=True)
class InstanceNet:
    name: str
    template: str
    clocks: tuple  # global indices of own clocks
    clock_names: tuple
    locations: tuple
    initial: int
    variables: tuple  # ((local name, base slot, dims), ...)

    def location_index(self, name: str) -> int:
        for k, loc in enumerate(self.locations):
            if loc.name == name:
                return k
        raise KeyError(name)


@dataclass(frozen=True)
class Network:
    instances: tuple
    clock_names: tuple  # index 0 is the global "time"
    global_clocks: tuple  # indices of clocks with rate 1 everywhere (time included)
    var_names: tuple
    var_init: tuple
    var_lo: tuple
    var_hi: tuple
    arrays: tuple  # ((name, base, dims), ...) for global and local arrays
    channel_kinds: tuple  # per flat channel index
    channel_names: tuple
    assignment: tuple = field(default=())
    constants: tuple = field(default=())  # ((name, value), ...) folded environment

    def instance_index(self, name: str) -> int:
        for k, inst in enumerate(self.instances):
            if inst.name == name:
                return k
        raise KeyError(name)

    def clock_rate(self, clock: int, inst: int, loc: int) -> int:
        if clock in self.global_clocks:
            return 1
        for c, r in self.instances[inst].locations[loc].rates:
            if c == clock:
                return r
        return 1

    def clock_owner(self, clock: int) -> int | None:
        for k, inst in enumerate(self.instances):
            if clock in inst.clocks:
                return k
        return None


def _check_assignment(space: ParameterSpace, assignment: Mapping) -> dict:
    names = set(space.names)
    given = set(assignment)
    if names != given:
        missing, extra = sorted(names - given), sorted(given - names)
        raise ModelError(f"assignment mismatch (missing {missing}, unexpected {extra})")
    out = {}
    for name, dom in space.domains:
        v = assignment[name]
        if isinstance(dom, BooleanMatrix) and not isinstance(v, tuple):
            v = tuple(tuple(bool(x) for x in row) for row in v)
        elif isinstance(dom, BooleanMatrix):
            v = tuple(tuple(bool(x) for x in row) for row in v)
        if v not in dom:
            raise ModelError(f"value {v!r} outside the domain of {name}")
        out[name] = v
    return out


def instantiate(pm: ParametrizedModel, assignment: Mapping | None = None) -> Network:
    """Substitute an assignment and fold everything into a concrete Network."""
    assignment = dict(assignment or {})
    space = parameter_space(pm)
    assignment = _check_assignment(space, assignment)
    env = _constant_env(pm, assignment)
    inline = {n: v for n, v in assignment.items() if n not in env}
    genv = {**env, **inline}

    var_names: list[str] = []
    var_init: list[int] = []
    var_lo: list[int] = []
    var_hi: list[int] = []
    arrays: list[tuple] = []

    def declare(decls, prefix: str, scope_env, path: str) -> dict:
        scope = {}
        for v in decls:
            p = f"{path}.{v.name}"
            dims = tuple(_fold_int(d, scope_env, p) for d in v.dims)
            if any(d < 1 for d in dims):
                raise ModelError("array dimensions must be positive", p)
            lo, hi = _fold_int(v.lo, scope_env, p), _fold_int(v.hi, scope_env, p)
            init = _fold_int(v.init, scope_env, p)
            if not lo <= init <= hi:
                raise ModelError(f"initial value {init} outside range [{lo}, {hi}]", p)
            base = len(var_names)
            size = 1
            for d in dims:
                size *= d
            full = prefix + v.name
            if dims:
                for idx in itertools.product(*(range(d) for d in dims)):
                    var_names.append(full + "".join(f"[{i}]" for i in idx))
                arrays.append((full, base, dims))
            else:
                var_names.append(full)
            var_init.extend([init] * size)
            var_lo.extend([lo] * size)
            var_hi.extend([hi] * size)
            scope[v.name] = (base, dims, full)
        return scope

    global_vars = declare(pm.variables, "", genv, "variables")

    channel_kinds: list[str] = []
    channel_names: list[str] = []
    channels: dict[str, tuple] = {}
    for c in pm.channels:
        dims = tuple(_fold_int(d, genv, f"channels.{c.name}") for d in c.dims)
        base = len(channel_kinds)
        if dims:
            for idx in itertools.product(*(range(d) for d in dims)):
                channel_kinds.append(c.kind)
                channel_names.append(c.name + "".join(f"[{i}]" for i in idx))
        else:
            channel_kinds.append(c.kind)
            channel_names.append(c.name)
        channels[c.name] = (base, dims)

    clock_names = [TIME]
    global_clock_idx = {TIME: 0}
    for c in pm.clocks:
        global_clock_idx[c] = len(clock_names)
        clock_names.append(c)

    templates = {t.name: t for t in pm.templates}
    expanded: list[tuple[Template, tuple, str]] = []
    for k, decl in enumerate(pm.instances):
        p = f"instances[{k}]"
        t = templates[decl.template]
        if decl.count is None:
            rounds = [None]
        else:
            n = _fold_int(decl.count, genv, f"{p}.count")
            if n < 0:
                raise ModelError("negative instance count", p)
            rounds = list(range(n))
        for r in rounds:
            ienv = dict(genv)
            if r is not None:
                ienv[decl.index] = r
            args = tuple(_fold_int(a, ienv, f"{p}.args") for a in decl.args)
            if decl.name is not None and r is None:
                name = decl.name
            elif t.parameters:
                name = f"{t.name}({', '.join(str(a) for a in args)})"
            elif r is not None:
                name = f"{t.name}({r})"
            else:
                name = t.name
            expanded.append((t, args, name))
    seen = set()
    for _, _, name in expanded:
        if name in seen:
            raise ModelError(f"duplicate instance name {name!r}", "instances")
        seen.add(name)

    # allocate clocks and local variables first so every slot is known
    layouts = []
    for t, args, name in expanded:
        tenv = dict(genv)
        tenv.update(zip(t.parameters, args))
        own_clocks = {}
        for c in t.clocks:
            own_clocks[c] = len(clock_names)
            clock_names.append(f"{name}.{c}")
        local_vars = declare(t.variables, f"{name}.", tenv, f"{name}.variables")
        layouts.append((t, args, name, tenv, own_clocks, local_vars))

    instances = []
    for t, args, name, tenv, own_clocks, local_vars in layouts:
        path = name
        clocks = {**global_clock_idx, **own_clocks}

        def resolve(ident, local_vars=local_vars):
            for scope in (local_vars, global_vars):
                if ident in scope:
                    base, dims, full = scope[ident]
                    if dims:
                        return VarElem(base, dims, (), full)
                    return VarRef(base, full)
            return None

        def expr(e, p):
            return _fold(e, tenv, p, resolve)

        def int_const(e, p):
            v = expr(e, p)
            if not isinstance(v, Lit) or isinstance(v.value, float):
                raise ModelError("expected a constant integer", p)
            return int(v.value)

        def bounds(bs, p):
            out = []
            for b in bs:
                out.append((clocks[b.clock], b.op, int_const(b.bound, p)))
            return tuple(out)

        loc_index = {loc.name: k for k, loc in enumerate(t.locations)}
        edges_by_loc: list[list] = [[] for _ in t.locations]
        for k, e in enumerate(t.edges):
            ep = f"{path}.edges[{k}]"
            guard = None if e.guard is None else expr(e.guard, f"{ep}.guard")
            if isinstance(guard, Lit) and guard.value:
                guard = None
            sync = None
            if e.sync is not None:
                sync = (e.sync.kind, _channel_expr(e.sync.channel, channels, tenv, resolve, f"{ep}.sync",
                                                   len(channel_kinds)))
            resets = []
            for c in e.resets:
                if c == TIME:
                    raise ModelError("the global clock 'time' cannot be reset", ep)
                resets.append(clocks[c])
            updates = []
            for j, u in enumerate(e.updates):
                up = f"{ep}.update[{j}]"
                lhs = expr(u.target, up)
                if not isinstance(lhs, (VarRef, VarElem)) or (isinstance(lhs, VarElem) and len(lhs.indices) != len(lhs.dims)):
                    raise ModelError(f"cannot assign to {unparse(u.target)!r}", up)
                updates.append((lhs, expr(u.value, up)))
            weight = int_const(e.weight, f"{ep}.weight")
            if weight < 1:
                raise ModelError(f"edge weight {weight} must be >= 1", f"{ep}.weight")
            edges_by_loc[loc_index[e.source]].append(EdgeNet(
                loc_index[e.source], loc_index[e.target], bounds(e.clock_guard, f"{ep}.clock_guard"),
                guard, sync, tuple(resets), tuple(updates), weight,
            ))

        locs = []
        for k, loc in enumerate(t.locations):
            lp = f"{path}.{loc.name}"
            rates = {c: 1 for c in t.clocks}
            for c, r in loc.rates:
                rv = int_const(r, f"{lp}.rates.{c}")
                if rv < 0:
                    raise ModelError(f"negative rate {rv}", f"{lp}.rates.{c}")
                rates[c] = rv
            inv = bounds(loc.invariant, f"{lp}.invariant")
            rate_of = {own_clocks[c]: r for c, r in rates.items()}
            bounded = any(op in ("<", "<=") and rate_of.get(c, 1) > 0 for c, op, _ in inv)
            exp = None
            if loc.exp_rate is not None:
                if bounded:
                    raise ModelError("exp_rate on a location whose invariant bounds time", lp)
                i, j = (int_const(x, f"{lp}.exp_rate") for x in loc.exp_rate)
                if i < 1 or j < 1:
                    raise ModelError(f"exponential rate {i}:{j} must have positive terms", lp)
                exp = (i, j)
            initiating = [e for e in edges_by_loc[k] if e.sync is None or e.sync[0] == "!"]
            if initiating and not bounded and exp is None:
                raise ModelError("unbounded location with outgoing edges needs an exp_rate", lp)
            locs.append(LocNet(loc.name, inv, tuple((own_clocks[c], r) for c, r in rates.items()), exp,
                               tuple(edges_by_loc[k])))

        init = loc_index[t.initial]
        for c, op, b in locs[init].invariant:
            if not apply_binary(op, 0, b):
                raise ModelError("initial location violates its invariant", f"{path}.{t.initial}")
        instances.append(InstanceNet(
            name, t.name, tuple(own_clocks.values()), tuple(t.clocks), tuple(locs), init,
            tuple((n, base, dims) for n, (base, dims, _) in local_vars.items()),
        ))

    return Network(
        instances=tuple(instances),
        clock_names=tuple(clock_names),
        global_clocks=tuple(global_clock_idx.values()),
        var_names=tuple(var_names),
        var_init=tuple(var_init),
        var_lo=tuple(var_lo),
        var_hi=tuple(var_hi),
        arrays=tuple(arrays),
        channel_kinds=tuple(channel_kinds),
        channel_names=tuple(channel_names),
        assignment=tuple(sorted(assignment.items())),
        constants=tuple((k, v) for k, v in env.items()),
    )


def _channel_expr(e, channels, tenv, resolve, path, total):
    idx = []
    while isinstance(e, Index):
        idx.append(e.index)
        e = e.base
    idx.reverse()
    base, dims = channels[e.id]
    if len(idx) != len(dims):
        raise ModelError(f"channel {e.id} expects {len(dims)} indices", path)
    flat = Lit(base)
    stride = 1
    for i, d in reversed(list(zip(idx, dims))):
        folded = _fold(i, tenv, path, resolve)
        if isinstance(folded, Lit) and not 0 <= folded.value < d:
            raise ModelError(f"channel index {folded.value} out of bounds", path)
        term = folded if stride == 1 else Binary("*", folded, Lit(stride))
        flat = _fold(Binary("+", flat, term), {}, path)
        stride *= d
    return flat
