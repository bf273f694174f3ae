"""Property and hypothesis expression language.

Grammar (lowest to highest precedence)::

    expr     := 'forall' IDENT ':' 'address' '::' expr | disj
    disj     := conj ('||' conj)*
    conj     := cmp ('&&' cmp)*
    cmp      := arith (CMPOP arith)*          ; chains desugar: a <= b < c == a <= b && b < c
    arith    := term (('+' | '-') term)*
    term     := unary (('*' | '/') unary)*
    unary    := '!' unary | power
    power    := postfix ('^' postfix)?
    postfix  := primary ('[' expr ']')*
    primary  := NUMBER | 'old' '(' expr ')' | 'sum' '(' expr ')' | '(' expr ')'
              | IDENT ('.' IDENT)*

Unicode ``∧ ∨ ¬ ≤ ≥ ≠`` are accepted as aliases.  Arithmetic is exact
(unbounded integers); 256-bit wraparound only exists in the VC functions
``evmadd``/``evmsub``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Protocol, Union

# ---------------------------------------------------------------------- AST


@dataclass(frozen=True)
class Num:
    value: int


@dataclass(frozen=True)
class Ref:
    parts: tuple[str, ...]


@dataclass(frozen=True)
class Index:
    base: "Expr"
    index: "Expr"


@dataclass(frozen=True)
class Old:
    expr: "Expr"


@dataclass(frozen=True)
class Sum:
    expr: "Expr"


@dataclass(frozen=True)
class Forall:
    var: str
    sort: str
    body: "Expr"


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Not:
    expr: "Expr"


Expr = Union[Num, Ref, Index, Old, Sum, Forall, BinOp, Not]

ARITH_OPS = ("+", "-", "*", "/")
CMP_OPS = ("<", "<=", "==", "!=", ">=", ">")
BOOL_OPS = ("&&", "||")


class SpecError(Exception):
    pass


class SpecSyntaxError(SpecError):
    def __init__(self, message: str, position: int):
        self.position = position
        super().__init__(f"{message} at position {position}")


class UnknownOperator(SpecSyntaxError):
    pass


class UnboundName(SpecError):
    pass


class ShadowedName(SpecError):
    pass


class NotConcretelyEvaluable(SpecError):
    pass


class SpecTypeError(SpecError):
    pass


# ------------------------------------------------------------------- lexer

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<num>0[xX][0-9a-fA-F]+|\d+)
  | (?P<ident>[A-Za-z_$][\w$]*)
  | (?P<op>::|==>|&&|\|\||==|!=|<=|>=|:=|[<>+\-*/^!()\[\].:,∧∨¬≤≥≠])
  | (?P<bad>.)
    """,
    re.VERBOSE,
)

_UNICODE_OPS = {"∧": "&&", "∨": "||", "¬": "!", "≤": "<=", "≥": ">=", "≠": "!="}


@dataclass
class _Tok:
    kind: str
    text: str
    pos: int


def _tokenize(text: str) -> list[_Tok]:
    toks = []
    for m in _TOKEN_RE.finditer(text):
        kind = m.lastgroup
        if kind == "ws":
            continue
        if kind == "bad":
            raise UnknownOperator(f"unexpected character {m.group()!r}", m.start())
        val = m.group()
        if kind == "op":
            val = _UNICODE_OPS.get(val, val)
            if val in ("==>", ":="):
                raise UnknownOperator(f"operator {val!r} is not part of the language", m.start())
        toks.append(_Tok(kind, val, m.start()))
    toks.append(_Tok("eof", "", len(text)))
    return toks


# ------------------------------------------------------------------ parser


class _Parser:
    def __init__(self, text: str):
        self.toks = _tokenize(text)
        self.i = 0

    @property
    def cur(self) -> _Tok:
        return self.toks[self.i]

    def accept(self, text: str) -> bool:
        if self.cur.kind in ("op", "ident") and self.cur.text == text:
            self.i += 1
            return True
        return False

    def expect(self, text: str) -> None:
        if not self.accept(text):
            raise SpecSyntaxError(f"expected {text!r}, found {self.cur.text or 'end of input'!r}", self.cur.pos)

    def ident(self) -> str:
        tok = self.cur
        if tok.kind != "ident":
            raise SpecSyntaxError(f"expected a name, found {tok.text or 'end of input'!r}", tok.pos)
        self.i += 1
        return tok.text

    def parse(self) -> Expr:
        if self.cur.kind == "eof":
            raise SpecSyntaxError("empty expression", 0)
        e = self.expr()
        if self.cur.kind != "eof":
            raise SpecSyntaxError(f"unexpected {self.cur.text!r}", self.cur.pos)
        return e

    def expr(self) -> Expr:
        if self.cur.kind == "ident" and self.cur.text == "forall":
            self.i += 1
            var = self.ident()
            self.expect(":")
            sort_tok = self.cur
            sort = self.ident()
            if sort != "address":
                raise SpecSyntaxError(f"quantifiers range over address only, not {sort!r}", sort_tok.pos)
            self.expect("::")
            return Forall(var, sort, self.expr())
        return self.disj()

    def disj(self) -> Expr:
        e = self.conj()
        while self.accept("||"):
            e = BinOp("||", e, self.conj())
        return e

    def conj(self) -> Expr:
        e = self.cmp()
        while self.accept("&&"):
            e = BinOp("&&", e, self.cmp())
        return e

    def cmp(self) -> Expr:
        first = self.arith()
        links = []
        while self.cur.kind == "op" and self.cur.text in CMP_OPS:
            op = self.cur.text
            self.i += 1
            links.append((op, self.arith()))
        if not links:
            return first
        out = None
        left = first
        for op, right in links:
            part = BinOp(op, left, right)
            out = part if out is None else BinOp("&&", out, part)
            left = right
        return out

    def arith(self) -> Expr:
        e = self.term()
        while self.cur.kind == "op" and self.cur.text in ("+", "-"):
            op = self.cur.text
            self.i += 1
            e = BinOp(op, e, self.term())
        return e

    def term(self) -> Expr:
        e = self.unary()
        while self.cur.kind == "op" and self.cur.text in ("*", "/"):
            op = self.cur.text
            self.i += 1
            e = BinOp(op, e, self.unary())
        return e

    def unary(self) -> Expr:
        if self.accept("!"):
            return Not(self.unary())
        return self.power()

    def power(self) -> Expr:
        tok = self.cur
        base = self.postfix()
        if self.accept("^"):
            exp_tok = self.cur
            exp = self.postfix()
            if not isinstance(base, Num) or not isinstance(exp, Num):
                raise SpecSyntaxError("'^' is only defined on integer literals", exp_tok.pos)
            if exp.value > 4096:
                raise SpecSyntaxError("exponent too large", exp_tok.pos)
            del tok
            return Num(base.value ** exp.value)
        return base

    def postfix(self) -> Expr:
        e = self.primary()
        while self.accept("["):
            idx = self.expr()
            self.expect("]")
            e = Index(e, idx)
        return e

    def primary(self) -> Expr:
        tok = self.cur
        if tok.kind == "num":
            self.i += 1
            return Num(int(tok.text, 0))
        if self.accept("("):
            e = self.expr()
            self.expect(")")
            return e
        if tok.kind == "ident":
            if tok.text in ("old", "sum") and self.toks[self.i + 1].text == "(":
                self.i += 2
                inner = self.expr()
                self.expect(")")
                return Old(inner) if tok.text == "old" else Sum(inner)
            if tok.text == "forall":
                raise SpecSyntaxError("parenthesize a nested forall", tok.pos)
            parts = [self.ident()]
            while self.accept("."):
                parts.append(self.ident())
            return Ref(tuple(parts))
        raise SpecSyntaxError(f"unexpected {tok.text or 'end of input'!r}", tok.pos)


@lru_cache(maxsize=1024)
def parse_spec(text: str) -> Expr:
    return _Parser(text).parse()


# ----------------------------------------------------------------- printer

_PREC = {"||": 1, "&&": 2, "<": 3, "<=": 3, "==": 3, "!=": 3, ">=": 3, ">": 3,
         "+": 4, "-": 4, "*": 5, "/": 5}


def _fmt_num(v: int) -> str:
    if v >= 256 and v & (v - 1) == 0:
        return f"2^{v.bit_length() - 1}"
    return str(v)


def print_spec(e: Expr) -> str:
    """Canonical text; ``parse_spec(print_spec(e)) == e`` for every parsed ``e``."""
    return _print(e, 0)


def _print(e: Expr, ctx: int) -> str:
    if isinstance(e, Num):
        return _fmt_num(e.value)
    if isinstance(e, Ref):
        return ".".join(e.parts)
    if isinstance(e, Index):
        return f"{_print(e.base, 9)}[{_print(e.index, 0)}]"
    if isinstance(e, Old):
        return f"old({_print(e.expr, 0)})"
    if isinstance(e, Sum):
        return f"sum({_print(e.expr, 0)})"
    if isinstance(e, Not):
        return f"!{_print(e.expr, 8)}"
    if isinstance(e, Forall):
        s = f"forall {e.var}:{e.sort} :: {_print(e.body, 0)}"
        return f"({s})" if ctx > 0 else s
    if isinstance(e, BinOp):
        p = _PREC[e.op]
        if p == 3:
            # comparisons never chain after desugaring, so both sides bind tighter
            s = f"{_print(e.left, 4)} {e.op} {_print(e.right, 4)}"
        elif p <= 2:
            s = f"{_print(e.left, p)} {e.op} {_print(e.right, p + 1)}"
        else:
            s = f"{_print(e.left, p)} {e.op} {_print(e.right, p + 1)}"
        return f"({s})" if p < ctx else s
    raise TypeError(e)


def canonical(text: str) -> str:
    """Whitespace- and layout-normalized form used as theorem identity."""
    return print_spec(parse_spec(text))


def conjuncts(e: Expr) -> list[Expr]:
    if isinstance(e, BinOp) and e.op == "&&":
        return conjuncts(e.left) + conjuncts(e.right)
    return [e]


def walk(e: Expr):
    yield e
    if isinstance(e, (Index,)):
        yield from walk(e.base)
        yield from walk(e.index)
    elif isinstance(e, (Old, Sum, Not)):
        yield from walk(e.expr)
    elif isinstance(e, Forall):
        yield from walk(e.body)
    elif isinstance(e, BinOp):
        yield from walk(e.left)
        yield from walk(e.right)


def is_concretely_evaluable(e: Expr) -> bool:
    for node in walk(e):
        if isinstance(node, (Forall, Sum, Old)):
            return False
        if isinstance(node, BinOp) and node.op == "/":
            return False
    return True


# -------------------------------------------------------- concrete evaluation


class StateReader(Protocol):
    def var_arity(self, contract: int, name: str) -> int | None:
        """0 for a scalar, k for a k-level mapping, None if the contract lacks ``name``."""

    def read(self, contract: int, name: str, indices: tuple[int, ...]) -> int:
        ...


@dataclass
class EvalContext:
    params: dict[str, int]
    state: StateReader
    this: int
    sender: int
    origin: int
    derived: dict[str, int] = field(default_factory=dict)
    # bare-name resolutions; state does not change while a context is in use
    _resolved: dict[str, object] = field(default_factory=dict, init=False, repr=False, compare=False)

    def derive(self, name: str, value: int) -> None:
        self.derived[name] = value
        self._resolved.clear()


@dataclass(frozen=True)
class _MapRef:
    contract: int
    name: str
    indices: tuple[int, ...]
    arity: int


_ENV_NAMES = {("msg", "sender"), ("tx", "origin"), ("this",)}


def _resolve_bare(name: str, ctx: EvalContext):
    try:
        return ctx._resolved[name]
    except KeyError:
        pass
    value = ctx._resolved[name] = _resolve_uncached(name, ctx)
    return value


def _resolve_uncached(name: str, ctx: EvalContext):
    in_params, in_derived = name in ctx.params, name in ctx.derived
    arity = ctx.state.var_arity(ctx.this, name)
    found = in_params + in_derived + (arity is not None)
    if found == 0:
        raise UnboundName(f"unbound name {name!r}")
    if found > 1:
        kinds = [k for k, hit in (("param", in_params), ("derived", in_derived), ("state", arity is not None)) if hit]
        raise ShadowedName(f"name {name!r} is ambiguous between {', '.join(kinds)}")
    if in_params:
        return ctx.params[name]
    if in_derived:
        return ctx.derived[name]
    return ctx.state.read(ctx.this, name, ()) if arity == 0 else _MapRef(ctx.this, name, (), arity)


def _state_ref(contract: int, name: str, ctx: EvalContext):
    arity = ctx.state.var_arity(contract, name)
    if arity is None:
        raise UnboundName(f"no state variable {name!r} at {contract:#x}")
    if arity == 0:
        return ctx.state.read(contract, name, ())
    return _MapRef(contract, name, (), arity)


def _eval_ref(parts: tuple[str, ...], ctx: EvalContext):
    if parts == ("msg", "sender"):
        return ctx.sender
    if parts == ("tx", "origin"):
        return ctx.origin
    if parts == ("this",):
        return ctx.this
    if len(parts) == 1:
        return _resolve_bare(parts[0], ctx)
    if len(parts) == 2:
        head, var = parts
        contract = ctx.this if head == "this" else _resolve_bare(head, ctx)
        if isinstance(contract, _MapRef):
            raise SpecTypeError(f"{head!r} is a mapping, not an address")
        return _state_ref(contract, var, ctx)
    raise UnboundName(f"cannot resolve {'.'.join(parts)!r}")


def _int(v) -> int:
    if type(v) is int:
        return v
    if isinstance(v, bool) or isinstance(v, _MapRef):
        raise SpecTypeError(f"expected an integer, got {v!r}")
    return v


def _index(ref, key, ctx: EvalContext):
    if not isinstance(ref, _MapRef):
        raise SpecTypeError("indexing a non-mapping")
    indices = ref.indices + (_int(key),)
    if len(indices) == ref.arity:
        return ctx.state.read(ref.contract, ref.name, indices)
    return _MapRef(ref.contract, ref.name, indices, ref.arity)


# Concrete evaluation compiles an expression into one Python function.  Each
# node is typed as "int", "bool" or "ref" (a state or parameter reference whose
# type is only known at run time); mismatches visible in the syntax are
# rejected up front and "ref" operands are checked by ``_int`` when evaluated.

_ENV_SOURCE = {("msg", "sender"): "ctx.sender", ("tx", "origin"): "ctx.origin", ("this",): "ctx.this"}
_PY_OPS = {"&&": "and", "||": "or", "==": "==", "!=": "!=", "<": "<", "<=": "<=", ">": ">", ">=": ">=",
           "+": "+", "-": "-", "*": "*"}


def _gen(e: Expr, consts: list) -> tuple[str, str]:
    if isinstance(e, Num):
        consts.append(e.value)
        return f"_c{len(consts) - 1}", "int"
    if isinstance(e, Ref):
        if e.parts in _ENV_SOURCE:
            return _ENV_SOURCE[e.parts], "int"
        if len(e.parts) == 1:
            name = repr(e.parts[0])
            return f"(_k[{name}] if {name} in _k else _resolve_bare({name}, ctx))", "ref"
        return f"_eval_ref({e.parts!r}, ctx)", "ref"
    if isinstance(e, Index):
        base, _ = _gen(e.base, consts)
        key, kind = _gen(e.index, consts)
        if kind == "bool":
            raise SpecTypeError("boolean used as a mapping key")
        return f"_index({base}, {key}, ctx)", "ref"
    if isinstance(e, Not):
        inner, kind = _gen(e.expr, consts)
        if kind != "bool":
            raise SpecTypeError(f"expected a boolean under '!', got {print_spec(e.expr)!r}")
        return f"(not {inner})", "bool"
    if isinstance(e, BinOp):
        (left, lk), (right, rk) = _gen(e.left, consts), _gen(e.right, consts)
        op = e.op
        if op in ("&&", "||"):
            if lk != "bool" or rk != "bool":
                raise SpecTypeError(f"operands of {op!r} must be boolean")
            return f"({left} {_PY_OPS[op]} {right})", "bool"
        if op in ("==", "!=") and lk == rk == "bool":
            return f"({left} {op} {right})", "bool"
        if "bool" in (lk, rk):
            raise SpecTypeError(f"{op!r} between a boolean and an integer")
        left = left if lk == "int" else f"_int({left})"
        right = right if rk == "int" else f"_int({right})"
        return f"({left} {_PY_OPS[op]} {right})", "bool" if op in CMP_OPS else "int"
    raise NotConcretelyEvaluable(f"{type(e).__name__} cannot be evaluated concretely")


@lru_cache(maxsize=2048)
def _build(e: Expr, want: str) -> Callable[[EvalContext], object]:
    if not is_concretely_evaluable(e):
        raise NotConcretelyEvaluable(f"{print_spec(e)!r} uses forall/sum/old or division")
    consts: list[int] = []
    src, kind = _gen(e, consts)
    if want == "int" and kind == "ref":
        src = f"_int({src})"
    elif kind != want:
        raise SpecTypeError(f"expected {'a boolean' if want == 'bool' else 'an integer'}, got {print_spec(e)!r}")
    env = {"_int": _int, "_index": _index, "_resolve_bare": _resolve_bare, "_eval_ref": _eval_ref}
    env.update((f"_c{i}", v) for i, v in enumerate(consts))
    exec(f"def _run(ctx):\n    _k = ctx._resolved\n    return {src}\n", env)
    return env["_run"]


def compile_hypothesis(e: Expr) -> Callable[[EvalContext], bool]:
    return _build(e, "bool")


@lru_cache(maxsize=1024)
def _compile_text(text: str) -> Callable[[EvalContext], bool]:
    return compile_hypothesis(parse_spec(text))


def eval_hypothesis(expr: Expr | str, ctx: EvalContext) -> bool:
    if isinstance(expr, str):
        return _compile_text(expr)(ctx)
    return compile_hypothesis(expr)(ctx)


def eval_value(expr: Expr | str, ctx: EvalContext) -> int:
    """Evaluate an integer-valued, concretely evaluable expression (derived names)."""
    if isinstance(expr, str):
        expr = parse_spec(expr)
    return _build(expr, "int")(ctx)


# ---------------------------------------------------- declarations/assignments

_DECL_RE = re.compile(r"^\s*var\s+(.+?)\s*:\s*(address|uint256)\s*;?\s*$")
_ASSIGN_RE = re.compile(r"^\s*([A-Za-z_$][\w$]*)\s*:=\s*(.+?)\s*;?\s*$")


def parse_declaration(text: str) -> list[tuple[str, str]]:
    """``var factory, pair: address`` -> ``[("factory", "address"), ("pair", "address")]``."""
    m = _DECL_RE.match(text)
    if not m:
        raise SpecSyntaxError(f"bad declaration {text!r}", 0)
    names = [n.strip() for n in m.group(1).split(",")]
    for n in names:
        if not re.fullmatch(r"[A-Za-z_$][\w$]*", n):
            raise SpecSyntaxError(f"bad declared name {n!r}", 0)
    return [(n, m.group(2)) for n in names]


def parse_assignment(text: str) -> tuple[str, Expr]:
    m = _ASSIGN_RE.match(text)
    if not m:
        raise SpecSyntaxError(f"bad assignment {text!r}", 0)
    return m.group(1), parse_spec(m.group(2))


# ---------------------------------------------------------------- lowering

ROLES = ("hypothesis", "invariant-pre", "invariant-post", "postcondition")

_NAMED_CONSTANTS = {0: "Zero", 1 << 8: "TwoE8", 1 << 16: "TwoE16", 1 << 64: "TwoE64",
                    1 << 160: "TwoE160", 1 << 255: "TwoE255", 1 << 256: "TwoE256"}


def vc_literal(value: int) -> str:
    return _NAMED_CONSTANTS.get(value, str(value))


@dataclass
class ClassVar:
    """What lowering needs to know about one storage variable of a class."""

    arity: int
    value_sort: str  # 'uint256' | 'address'


@dataclass
class LoweringContext:
    entry_class: str
    this_ref: str
    params: dict[str, str]
    class_vars: Callable[[str], dict[str, ClassVar]]
    class_of: Callable[[str], str | None] = lambda name: None
    derived: dict[str, str] = field(default_factory=dict)
    sender_ref: str = "tx_origin"
    origin_ref: str = "tx_origin"


@dataclass
class Lowered:
    statements: list[tuple[str, str]] = field(default_factory=list)  # (assume|assert, expr)
    defvars: list[tuple[str, str, str]] = field(default_factory=list)  # (name, sort, init)
    snapshots: list[tuple[str, str, str]] = field(default_factory=list)
    globals_used: set[tuple[str, str]] = field(default_factory=set)


@dataclass
class _L:
    text: str
    sort: str  # int | bool | real | map
    prec: int = 10
    map_info: tuple[str, str, int, int] | None = None  # class, var, arity, applied


class _Lowerer:
    def __init__(self, ctx: LoweringContext, role: str, out: Lowered):
        self.ctx = ctx
        self.role = role
        self.out = out
        self.bound: dict[str, str] = {}

    def _paren(self, x: _L, prec: int) -> str:
        return f"({x.text})" if x.prec < prec else x.text

    def _state(self, cls: str, ref: str, var: str) -> _L:
        info = self.ctx.class_vars(cls).get(var)
        if info is None:
            raise UnboundName(f"class {cls} has no state variable {var!r}")
        self.out.globals_used.add((cls, var))
        text = f"{cls}.{var}[{ref}]"
        if info.arity == 0:
            return _L(text, "int")
        return _L(text, "map", map_info=(cls, var, info.arity, 0))

    def _bare(self, name: str) -> _L:
        if name in self.bound:
            return _L(name, "int")
        hits = []
        if name in self.ctx.params:
            hits.append("param")
        if name in self.ctx.derived:
            hits.append("derived")
        evars = self.ctx.class_vars(self.ctx.entry_class)
        if name in evars:
            hits.append("state")
        if not hits:
            raise UnboundName(f"unbound name {name!r}")
        if len(hits) > 1:
            raise ShadowedName(f"name {name!r} is ambiguous between {', '.join(hits)}")
        if hits[0] != "state":
            return _L(name, "int")
        info = evars[name]
        if info.arity == 0 and self.role in ("hypothesis", "invariant-pre"):
            init = self._state(self.ctx.entry_class, self.ctx.this_ref, name).text
            if all(d[0] != name for d in self.out.defvars):
                self.out.defvars.append((name, info.value_sort, init))
            return _L(name, "int")
        return self._state(self.ctx.entry_class, self.ctx.this_ref, name)

    def ref(self, parts: tuple[str, ...]) -> _L:
        if parts == ("msg", "sender"):
            return _L(self.ctx.sender_ref, "int")
        if parts == ("tx", "origin"):
            return _L(self.ctx.origin_ref, "int")
        if parts == ("this",):
            return _L(self.ctx.this_ref, "int")
        if len(parts) == 1:
            return self._bare(parts[0])
        if len(parts) == 2:
            head, var = parts
            if head == "this":
                return self._state(self.ctx.entry_class, self.ctx.this_ref, var)
            base = self._bare(head)
            cls = self.ctx.class_of(head)
            if cls is None:
                raise UnboundName(f"cannot determine the contract class of {head!r}")
            return self._state(cls, base.text, var)
        raise UnboundName(f"cannot resolve {'.'.join(parts)!r}")

    def lower(self, e: Expr, top: bool = False) -> _L:
        if isinstance(e, Num):
            return _L(vc_literal(e.value), "int")
        if isinstance(e, Ref):
            return self.ref(e.parts)
        if isinstance(e, Index):
            base = self.lower(e.base)
            if base.sort != "map" or base.map_info is None:
                raise SpecTypeError("indexing a non-mapping")
            idx = self._as_int(self.lower(e.index))
            cls, var, arity, applied = base.map_info
            text = f"{base.text}[{idx.text}]"
            if applied + 1 == arity:
                return _L(text, "int")
            return _L(text, "map", map_info=(cls, var, arity, applied + 1))
        if isinstance(e, Sum):
            inner = self.lower(e.expr)
            if inner.sort != "map" or inner.map_info is None or inner.map_info[2] - inner.map_info[3] != 1:
                raise SpecTypeError("sum() takes a single-level mapping")
            return _L(f"sum({inner.text})", "int")
        if isinstance(e, Old):
            if self.role not in ("postcondition", "invariant-post"):
                raise SpecTypeError("old() only appears in postconditions")
            inner = _Lowerer(self.ctx, "invariant-pre", self.out)
            inner.bound = dict(self.bound)
            val = inner.lower(e.expr)
            if val.sort == "map":
                raise SpecTypeError("old() of a whole mapping is not supported")
            name = "old_" + re.sub(r"_+", "_", re.sub(r"\W", "_", print_spec(e.expr))).strip("_")
            if all(s[0] != name for s in self.out.snapshots):
                sort = "bool" if val.sort == "bool" else "real" if val.sort == "real" else "uint256"
                self.out.snapshots.append((name, sort, val.text))
            return _L(name, val.sort)
        if isinstance(e, Not):
            inner = self._as_bool(self.lower(e.expr))
            return _L(f"!{self._paren(inner, 9)}", "bool", 8)
        if isinstance(e, Forall):
            saved = self.bound.get(e.var)
            self.bound[e.var] = e.sort
            body = self._as_bool(self.lower(e.body))
            if saved is None:
                del self.bound[e.var]
            else:
                self.bound[e.var] = saved
            text = f"forall {e.var}:{e.sort} :: {body.text}"
            return _L(text if top else f"({text})", "bool", 10)
        if isinstance(e, BinOp):
            return self.binop(e)
        raise TypeError(e)

    def _as_int(self, x: _L) -> _L:
        if x.sort not in ("int", "real"):
            raise SpecTypeError(f"expected a number: {x.text}")
        return x

    def _as_bool(self, x: _L) -> _L:
        if x.sort != "bool":
            raise SpecTypeError(f"expected a boolean: {x.text}")
        return x

    def _real(self, x: _L) -> _L:
        return x if x.sort == "real" else _L(f"real({x.text})", "real")

    def binop(self, e: BinOp) -> _L:
        l, r = self.lower(e.left), self.lower(e.right)
        op = e.op
        if op in BOOL_OPS:
            l, r = self._as_bool(l), self._as_bool(r)
            p = 2 if op == "&&" else 1
            # Boogie rejects mixing && and || without parentheses
            lt = l.text if l.prec > 2 or l.prec == p else f"({l.text})"
            rt = r.text if r.prec > 2 else f"({r.text})"
            return _L(f"{lt} {op} {rt}", "bool", p)
        if op in CMP_OPS:
            if op in ("==", "!=") and l.sort == "bool" and r.sort == "bool":
                return _L(f"{self._paren(l, 4)} {op} {self._paren(r, 4)}", "bool", 3)
            l, r = self._as_int(l), self._as_int(r)
            if "real" in (l.sort, r.sort):
                l, r = self._real(l), self._real(r)
            return _L(f"{self._paren(l, 4)} {op} {self._paren(r, 4)}", "bool", 3)
        l, r = self._as_int(l), self._as_int(r)
        if op == "/":
            l, r = self._real(l), self._real(r)
            return _L(f"{self._paren(l, 5)} / {self._paren(r, 6)}", "real", 5)
        sort = "real" if "real" in (l.sort, r.sort) else "int"
        if sort == "real":
            l, r = self._real(l), self._real(r)
        p = 4 if op in ("+", "-") else 5
        return _L(f"{self._paren(l, p)} {op} {self._paren(r, p + 1)}", sort, p)


def lower_to_vc(expr: Expr | str, role: str, ctx: LoweringContext, out: Lowered | None = None) -> Lowered:
    """Lower a property into assume/assert fragments for the VC.

    hypothesis and invariant-pre become assumes (hypotheses are split at top-level
    conjunctions), invariant-post and postcondition become asserts.  Bare scalar
    state names in pre roles become def-vars snapshotted at entry; ``old(e)``
    becomes a snapshot variable.
    """
    if role not in ROLES:
        raise ValueError(f"unknown role {role!r}")
    if isinstance(expr, str):
        expr = parse_spec(expr)
    out = out if out is not None else Lowered()
    kind = "assume" if role in ("hypothesis", "invariant-pre") else "assert"
    if role == "hypothesis" and not is_concretely_evaluable(expr):
        raise NotConcretelyEvaluable("hypotheses must be quantifier-, sum-, old- and division-free")
    parts = conjuncts(expr) if role == "hypothesis" else [expr]
    lowerer = _Lowerer(ctx, role, out)
    for part in parts:
        x = lowerer._as_bool(lowerer.lower(part, top=True))
        out.statements.append((kind, x.text))
    return out
