"""Cost-bounded reachability queries ``Pr[c <= C](<> phi)``."""

from __future__ import annotations

import re
from dataclasses import dataclass

from .expr import (
    COMPARISONS,
    NEGATE,
    Binary,
    ExprError,
    Index,
    Lit,
    Member,
    Name,
    Unary,
    apply_binary,
    apply_unary,
    c_div,
    parse_expr,
)
from .model import (
    TIME,
    ClockRef,
    ConstElem,
    LocIs,
    ModelError,
    Network,
    VarElem,
    VarRef,
    _fold,
)

MAX_CONJUNCTS = 4096


class QueryError(ValueError):
    pass


@dataclass(frozen=True)
class LocAtom:
    instance: int
    location: int
    positive: bool


@dataclass(frozen=True)
class CmpAtom:
    left: object
    op: str
    right: object
    timed: bool  # mentions a clock, so its truth can change during a delay


@dataclass(frozen=True)
class Formula:
    text: str
    observer: int
    observer_name: str
    bound: float
    predicate: object
    dnf: tuple  # tuple of conjunctions, each a tuple of atoms


_QUERY = re.compile(r"^\s*Pr\s*\[\s*(?P<obs>.+?)\s*<=\s*(?P<bound>[0-9]+(?:\.[0-9]*)?)\s*\]\s*"
                    r"\(\s*<>\s*(?P<pred>.*)\)\s*$", re.S)


def parse_query(text: str, net: Network) -> Formula:
    m = _QUERY.match(text)
    if not m:
        raise QueryError(f"query must look like 'Pr[time<=C](<> predicate)': {text!r}")
    try:
        obs_node = parse_expr(m.group("obs"))
        pred_node = parse_expr(m.group("pred"))
    except ExprError as e:
        raise QueryError(str(e)) from None
    resolver = _Resolver(net)
    obs = resolver.resolve(obs_node)
    if not isinstance(obs, ClockRef):
        raise QueryError(f"observer {m.group('obs')!r} is not a clock")
    _check_observer(net, obs)
    pred = resolver.resolve(pred_node)
    bound = float(m.group("bound"))
    return Formula(text.strip(), obs.index, obs.name, bound, pred, to_dnf(pred))


def _check_observer(net: Network, obs: ClockRef) -> None:
    for inst in net.instances:
        for loc in inst.locations:
            for e in loc.edges:
                if obs.index in e.resets:
                    raise QueryError(f"observer clock {obs.name} is reset in {inst.name}.{loc.name}")
    owner = net.clock_owner(obs.index)
    if owner is not None:
        inst = net.instances[owner]
        for k, loc in enumerate(inst.locations):
            if net.clock_rate(obs.index, owner, k) != 1:
                raise QueryError(f"observer clock {obs.name} does not have rate 1 in {inst.name}.{loc.name}")


class _Resolver:
    def __init__(self, net: Network):
        self.net = net
        self.env = dict(net.constants)
        self.global_vars = {}
        for name, base, dims in net.arrays:
            if "." not in name:
                self.global_vars[name] = (base, dims)
        for slot, name in enumerate(net.var_names):
            if "." not in name and "[" not in name:
                self.global_vars[name] = (slot, ())
        self.global_clocks = {net.clock_names[c]: c for c in net.global_clocks}

    def member(self, node: Member):
        if node.args is None:
            name = node.instance
        else:
            args = []
            for a in node.args:
                v = _fold(self.resolve(a), self.env, "query")
                if not isinstance(v, Lit):
                    raise QueryError(f"instance arguments must be constant in {node.instance}(...)")
                args.append(str(int(v.value)))
            name = f"{node.instance}({', '.join(args)})"
        try:
            k = self.net.instance_index(name)
        except KeyError:
            raise QueryError(f"unknown instance {name!r}") from None
        inst = self.net.instances[k]
        for j, loc in enumerate(inst.locations):
            if loc.name == node.member:
                return LocIs(k, j, f"{name}.{node.member}")
        for c, cname in zip(inst.clocks, inst.clock_names):
            if cname == node.member:
                return ClockRef(c, f"{name}.{cname}")
        for vname, base, dims in inst.variables:
            if vname == node.member:
                full = f"{name}.{vname}"
                return VarElem(base, dims, (), full) if dims else VarRef(base, full)
        raise QueryError(f"{name} has no location, clock or variable {node.member!r}")

    def name(self, node: Name):
        ident = node.id
        if ident == TIME:
            return ClockRef(0, TIME)
        if ident in self.global_clocks:
            return ClockRef(self.global_clocks[ident], ident)
        if ident in self.global_vars:
            base, dims = self.global_vars[ident]
            return VarElem(base, dims, (), ident) if dims else VarRef(base, ident)
        if ident in self.env:
            v = self.env[ident]
            return v if isinstance(v, tuple) else Lit(v)
        for k, inst in enumerate(self.net.instances):
            if inst.name == ident:
                raise QueryError(f"instance {ident!r} used without a member")
        raise QueryError(f"unknown identifier {ident!r}")

    def resolve(self, node):
        if isinstance(node, Member):
            return self.member(node)
        if isinstance(node, Name):
            return self.name(node)
        try:
            if isinstance(node, Index):
                return _fold(Index(self.resolve(node.base), self.resolve(node.index)), {}, "query")
            if isinstance(node, Unary):
                return _fold(Unary(node.op, self.resolve(node.operand)), {}, "query")
            if isinstance(node, Binary):
                return _fold(Binary(node.op, self.resolve(node.left), self.resolve(node.right)), {}, "query")
        except ModelError as e:
            raise QueryError(str(e)) from None
        return node


def has_clock(node) -> bool:
    if isinstance(node, ClockRef):
        return True
    if isinstance(node, Unary):
        return has_clock(node.operand)
    if isinstance(node, Binary):
        return has_clock(node.left) or has_clock(node.right)
    if isinstance(node, (VarElem, ConstElem)):
        return any(has_clock(i) for i in node.indices)
    return False


def _nnf(node, neg: bool):
    if isinstance(node, Unary) and node.op == "!":
        return _nnf(node.operand, not neg)
    if isinstance(node, Binary) and node.op in ("&&", "||"):
        kind = "and" if (node.op == "&&") != neg else "or"
        return (kind, [_nnf(node.left, neg), _nnf(node.right, neg)])
    if isinstance(node, Binary) and node.op in COMPARISONS:
        op = NEGATE[node.op] if neg else node.op
        return CmpAtom(node.left, op, node.right, has_clock(node))
    if isinstance(node, LocIs):
        return LocAtom(node.instance, node.location, not neg)
    if isinstance(node, Lit):
        return Lit(bool(node.value) != neg)
    if has_clock(node):
        raise QueryError("clock-valued expression used as a condition")
    return CmpAtom(node, "==" if neg else "!=", Lit(0), False)


def _dnf(tree) -> list:
    if isinstance(tree, tuple):
        kind, parts = tree
        subs = [_dnf(p) for p in parts]
        if kind == "or":
            return [c for s in subs for c in s]
        out = [[]]
        for s in subs:
            out = [a + b for a in out for b in s]
            if len(out) > MAX_CONJUNCTS:
                raise QueryError("predicate too large in disjunctive normal form")
        return out
    if isinstance(tree, Lit):
        return [[]] if tree.value else []
    if isinstance(tree, CmpAtom) and tree.timed and tree.op == "!=":
        return [[CmpAtom(tree.left, "<", tree.right, True)], [CmpAtom(tree.left, ">", tree.right, True)]]
    return [[tree]]


def to_dnf(pred) -> tuple:
    dnf = tuple(tuple(c) for c in _dnf(_nnf(pred, False)))
    for conj in dnf:
        for atom in conj:
            if isinstance(atom, CmpAtom) and atom.timed:
                linearize(Binary("-", atom.left, atom.right))
    return dnf


def linearize(e):
    """Split an expression into (clock-free part, {clock: integer coefficient})."""
    if isinstance(e, ClockRef):
        return Lit(0), {e.index: 1}
    if isinstance(e, Binary) and e.op in ("+", "-"):
        ca, ka = linearize(e.left)
        cb, kb = linearize(e.right)
        sign = 1 if e.op == "+" else -1
        k = dict(ka)
        for c, v in kb.items():
            k[c] = k.get(c, 0) + sign * v
        return Binary(e.op, ca, cb), k
    if isinstance(e, Unary) and e.op == "-":
        c, k = linearize(e.operand)
        return Unary("-", c), {x: -v for x, v in k.items()}
    if isinstance(e, Binary) and e.op == "*":
        ca, ka = linearize(e.left)
        cb, kb = linearize(e.right)
        if ka and kb:
            raise QueryError("product of clocks in a query")
        if ka or kb:
            k, scalar = (ka, e.right) if ka else (kb, e.left)
            if not isinstance(scalar, Lit):
                raise QueryError("clock coefficients must be integer literals")
            return Binary("*", ca if ka else cb, scalar), {x: v * scalar.value for x, v in k.items()}
        return e, {}
    if has_clock(e):
        raise QueryError("clock used non-linearly in a query")
    return e, {}


def evaluate(node, V, X, L):
    """Direct evaluation of a resolved expression on concrete valuations."""
    if isinstance(node, Lit):
        return node.value
    if isinstance(node, VarRef):
        return V[node.slot]
    if isinstance(node, ClockRef):
        return X[node.index]
    if isinstance(node, LocIs):
        return L[node.instance] == node.location
    if isinstance(node, VarElem):
        slot = 0
        for i, d in zip(node.indices, node.dims):
            iv = evaluate(i, V, X, L)
            if not 0 <= iv < d:
                raise IndexError(f"index {iv} out of bounds for {node.name}")
            slot = slot * d + iv
        return V[node.base + slot]
    if isinstance(node, ConstElem):
        t = node.table
        for i in node.indices:
            iv = evaluate(i, V, X, L)
            if iv < 0:
                raise IndexError(f"index {iv} out of bounds for {node.name}")
            t = t[iv]
        return t
    if isinstance(node, Unary):
        return apply_unary(node.op, evaluate(node.operand, V, X, L))
    if isinstance(node, Binary):
        if node.op == "&&":
            return bool(evaluate(node.left, V, X, L)) and bool(evaluate(node.right, V, X, L))
        if node.op == "||":
            return bool(evaluate(node.left, V, X, L)) or bool(evaluate(node.right, V, X, L))
        a, b = evaluate(node.left, V, X, L), evaluate(node.right, V, X, L)
        if node.op == "/" and isinstance(a, int) and isinstance(b, int):
            return c_div(a, b)
        return apply_binary(node.op, a, b)
    raise TypeError(f"cannot evaluate {node!r}")
