"""A small verifier for the Boogie subset emitted by :mod:`tct.vcgen`, using z3.

Supported: ``type`` synonyms, ``const``, ``axiom``, ``function`` declarations,
global ``var`` with ``where`` clauses, and one or more straight-line
procedures made of ``var`` declarations, assignments (including nested map
updates), ``assume``, ``assert`` and ``havoc``.  Expressions cover integer,
real and boolean arithmetic, map select/store, function application,
``if-then-else`` and ``forall``/``exists``.

Output imitates Boogie's summary line so the generic command bridge can
parse it::

    vc.bpl(57,3): Error: this assertion could not be proved
    Boogie program verifier finished with 0 verified, 1 error

Run as ``python -m tct.z3check FILE [--timeout SECONDS]``.
"""

from __future__ import annotations

import argparse
import re
import sys
import time
from dataclasses import dataclass, field

import z3


class BplError(Exception):
    pass


# ------------------------------------------------------------------- lexer

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+|//[^\n]*|/\*.*?\*/)
  | (?P<num>\d+)
  | (?P<ident>[A-Za-z_$#'.?^`~][\w$#'.?^`~]*)
  | (?P<op><==>|==>|::|:=|==|!=|<=|>=|&&|\|\||[-+*/<>!()\[\]{},;:=])
    """,
    re.VERBOSE | re.DOTALL,
)

_KEYWORDS = {"type", "const", "axiom", "function", "returns", "var", "where", "procedure",
             "modifies", "assume", "assert", "havoc", "forall", "exists", "if", "then",
             "else", "true", "false", "div", "mod", "real", "int", "bool", "unique",
             "implementation", "requires", "ensures"}


@dataclass
class Tok:
    kind: str
    text: str
    line: int
    col: int


def tokenize(src: str) -> list[Tok]:
    toks = []
    pos = 0
    line = 1
    line_start = 0
    while pos < len(src):
        m = _TOKEN_RE.match(src, pos)
        if not m:
            raise BplError(f"line {line}: unexpected character {src[pos]!r}")
        text = m.group()
        if m.lastgroup != "ws":
            toks.append(Tok(m.lastgroup, text, line, pos - line_start + 1))
        nl = text.count("\n")
        if nl:
            line += nl
            line_start = pos + text.rfind("\n") + 1
        pos = m.end()
    toks.append(Tok("eof", "", line, 1))
    return toks


# --------------------------------------------------------------------- AST
# expressions are tuples: ("int", n) ("bool", b) ("id", name) ("sel", m, [idx])
# ("store", m, [idx], v) ("call", f, [args]) ("un", op, e) ("bin", op, a, b)
# ("ite", c, a, b) ("q", kind, [(name, type)], body)
# types: ("int",) ("bool",) ("real",) ("named", name) ("map", [dom], rng)


@dataclass
class Stmt:
    kind: str  # assign | assume | assert | havoc
    line: int
    col: int
    lhs: tuple | None = None
    expr: tuple | None = None
    names: list[str] = field(default_factory=list)


@dataclass
class Program:
    types: dict[str, tuple] = field(default_factory=dict)
    consts: dict[str, tuple] = field(default_factory=dict)
    functions: dict[str, tuple[list[tuple], tuple]] = field(default_factory=dict)
    axioms: list[tuple] = field(default_factory=list)
    globals: dict[str, tuple[tuple, tuple | None]] = field(default_factory=dict)
    procedures: list[tuple[str, list[tuple[str, tuple, tuple | None]], list[Stmt]]] = field(default_factory=list)


class Parser:
    def __init__(self, src: str):
        self.toks = tokenize(src)
        self.i = 0

    @property
    def cur(self) -> Tok:
        return self.toks[self.i]

    def peek(self, k: int = 1) -> Tok:
        return self.toks[min(self.i + k, len(self.toks) - 1)]

    def at(self, text: str) -> bool:
        return self.cur.text == text and self.cur.kind in ("op", "ident")

    def accept(self, text: str) -> bool:
        if self.at(text):
            self.i += 1
            return True
        return False

    def expect(self, text: str) -> Tok:
        if not self.at(text):
            t = self.cur
            raise BplError(f"line {t.line}: expected {text!r}, found {t.text!r}")
        tok = self.cur
        self.i += 1
        return tok

    def ident(self) -> str:
        t = self.cur
        if t.kind != "ident":
            raise BplError(f"line {t.line}: expected identifier, found {t.text!r}")
        self.i += 1
        return t.text

    # -- declarations

    def program(self) -> Program:
        prog = Program()
        while self.cur.kind != "eof":
            if self.accept("type"):
                name = self.ident()
                self.expect("=")
                prog.types[name] = self.type_()
                self.expect(";")
            elif self.accept("const"):
                self.accept("unique")
                names = self.idents()
                self.expect(":")
                t = self.type_()
                self.expect(";")
                for n in names:
                    prog.consts[n] = t
            elif self.accept("axiom"):
                prog.axioms.append(self.expr())
                self.expect(";")
            elif self.accept("function"):
                name = self.ident()
                self.expect("(")
                params = self.typed_idents(")") if not self.at(")") else []
                self.expect(")")
                self.expect("returns")
                self.expect("(")
                if self.cur.kind == "ident" and self.peek().text == ":":
                    self.ident()
                    self.expect(":")
                ret = self.type_()
                self.expect(")")
                self.expect(";")
                prog.functions[name] = ([t for _, t in params], ret)
            elif self.accept("var"):
                for name, t, where in self.var_decl():
                    prog.globals[name] = (t, where)
            elif self.accept("procedure"):
                prog.procedures.append(self.procedure())
            else:
                t = self.cur
                raise BplError(f"line {t.line}: unexpected {t.text!r} at top level")
        return prog

    def idents(self) -> list[str]:
        names = [self.ident()]
        while self.accept(","):
            names.append(self.ident())
        return names

    def typed_idents(self, closer: str) -> list[tuple[str, tuple]]:
        out = []
        while True:
            names = self.idents()
            self.expect(":")
            t = self.type_()
            out += [(n, t) for n in names]
            if not self.accept(","):
                return out

    def var_decl(self) -> list[tuple[str, tuple, tuple | None]]:
        names = self.idents()
        self.expect(":")
        t = self.type_()
        where = self.expr() if self.accept("where") else None
        self.expect(";")
        return [(n, t, where) for n in names]

    def type_(self) -> tuple:
        if self.accept("["):
            dom = [self.type_()]
            while self.accept(","):
                dom.append(self.type_())
            self.expect("]")
            return ("map", dom, self.type_())
        name = self.ident()
        if name in ("int", "bool", "real"):
            return (name,)
        return ("named", name)

    def procedure(self):
        name = self.ident()
        self.expect("(")
        self.expect(")")
        while self.at("modifies") or self.at("requires") or self.at("ensures"):
            kw = self.cur.text
            self.i += 1
            if kw == "modifies":
                if not self.at(";"):
                    self.idents()
            else:
                raise BplError(f"line {self.cur.line}: {kw} clauses are not supported")
            self.expect(";")
        self.expect("{")
        locals_: list[tuple[str, tuple, tuple | None]] = []
        body: list[Stmt] = []
        while not self.accept("}"):
            tok = self.cur
            if self.accept("var"):
                if body:
                    raise BplError(f"line {tok.line}: declarations must precede statements")
                locals_ += self.var_decl()
            elif self.accept("assume"):
                body.append(Stmt("assume", tok.line, tok.col, expr=self.expr()))
                self.expect(";")
            elif self.accept("assert"):
                body.append(Stmt("assert", tok.line, tok.col, expr=self.expr()))
                self.expect(";")
            elif self.accept("havoc"):
                body.append(Stmt("havoc", tok.line, tok.col, names=self.idents()))
                self.expect(";")
            else:
                lhs = self.postfix()
                self.expect(":=")
                body.append(Stmt("assign", tok.line, tok.col, lhs=lhs, expr=self.expr()))
                self.expect(";")
        return name, locals_, body

    # -- expressions (Boogie precedence, loosest first)

    def expr(self) -> tuple:
        e = self.implies()
        while self.accept("<==>"):
            e = ("bin", "<==>", e, self.implies())
        return e

    def implies(self) -> tuple:
        e = self.logic()
        if self.accept("==>"):
            return ("bin", "==>", e, self.implies())
        return e

    def logic(self) -> tuple:
        e = self.rel()
        op = None
        while self.at("&&") or self.at("||"):
            nxt = self.cur.text
            if op is not None and nxt != op:
                raise BplError(f"line {self.cur.line}: mixing && and || needs parentheses")
            op = nxt
            self.i += 1
            e = ("bin", op, e, self.rel())
        return e

    def rel(self) -> tuple:
        e = self.add()
        if self.cur.text in ("==", "!=", "<", "<=", ">", ">=") and self.cur.kind == "op":
            op = self.cur.text
            self.i += 1
            e = ("bin", op, e, self.add())
        return e

    def add(self) -> tuple:
        e = self.mul()
        while self.cur.kind == "op" and self.cur.text in ("+", "-"):
            op = self.cur.text
            self.i += 1
            e = ("bin", op, e, self.mul())
        return e

    def mul(self) -> tuple:
        e = self.unary()
        while (self.cur.kind == "op" and self.cur.text in ("*", "/")) or self.at("div") or self.at("mod"):
            op = self.cur.text
            self.i += 1
            e = ("bin", op, e, self.unary())
        return e

    def unary(self) -> tuple:
        if self.accept("!"):
            return ("un", "!", self.unary())
        if self.accept("-"):
            return ("un", "-", self.unary())
        return self.postfix()

    def postfix(self) -> tuple:
        e = self.primary()
        while self.accept("["):
            idx = [self.expr()]
            while self.accept(","):
                idx.append(self.expr())
            if self.accept(":="):
                v = self.expr()
                self.expect("]")
                e = ("store", e, idx, v)
            else:
                self.expect("]")
                e = ("sel", e, idx)
        return e

    def primary(self) -> tuple:
        t = self.cur
        if t.kind == "num":
            self.i += 1
            return ("int", int(t.text))
        if self.accept("("):
            if self.at("forall") or self.at("exists"):
                kind = self.cur.text
                self.i += 1
                binders = self.typed_idents("::")
                self.expect("::")
                body = self.expr()
                self.expect(")")
                return ("q", kind, binders, body)
            e = self.expr()
            self.expect(")")
            return e
        if self.at("forall") or self.at("exists"):
            kind = self.cur.text
            self.i += 1
            binders = self.typed_idents("::")
            self.expect("::")
            return ("q", kind, binders, self.expr())
        if self.accept("true"):
            return ("bool", True)
        if self.accept("false"):
            return ("bool", False)
        if self.accept("if"):
            c = self.expr()
            self.expect("then")
            a = self.expr()
            self.expect("else")
            return ("ite", c, a, self.expr())
        if self.accept("real"):
            self.expect("(")
            e = self.expr()
            self.expect(")")
            return ("call", "real", [e])
        if t.kind == "ident":
            name = self.ident()
            if self.accept("("):
                args = []
                if not self.at(")"):
                    args.append(self.expr())
                    while self.accept(","):
                        args.append(self.expr())
                self.expect(")")
                return ("call", name, args)
            return ("id", name)
        raise BplError(f"line {t.line}: unexpected {t.text!r} in expression")


# ------------------------------------------------------------- translation


class Translator:
    def __init__(self, prog: Program):
        self.prog = prog
        self.funcs: dict[str, z3.FuncDeclRef] = {}
        self.consts: dict[str, z3.ExprRef] = {}
        for name, t in prog.consts.items():
            self.consts[name] = z3.Const(name, self.sort(t))
        # "axiom C == <closed integer term>" pins C to a literal, which keeps
        # products of such constants out of nonlinear arithmetic
        self.values: dict[str, int] = {}
        for ax in prog.axioms:
            if ax[0] == "bin" and ax[1] == "==" and ax[2][0] == "id" and ax[2][1] in prog.consts:
                v = self._closed_int(ax[3])
                if v is not None:
                    self.values[ax[2][1]] = v
        for name, (dom, rng) in prog.functions.items():
            if dom:
                self.funcs[name] = z3.Function(name, *[self.sort(d) for d in dom], self.sort(rng))
            else:
                self.consts[name] = z3.Const(name, self.sort(rng))

    def _closed_int(self, e: tuple) -> int | None:
        if e[0] == "int":
            return e[1]
        if e[0] == "id":
            return self.values.get(e[1])
        if e[0] == "bin" and e[1] in ("+", "-", "*"):
            a, b = self._closed_int(e[2]), self._closed_int(e[3])
            if a is None or b is None:
                return None
            return a + b if e[1] == "+" else a - b if e[1] == "-" else a * b
        return None

    def sort(self, t: tuple) -> z3.SortRef:
        kind = t[0]
        if kind == "int":
            return z3.IntSort()
        if kind == "bool":
            return z3.BoolSort()
        if kind == "real":
            return z3.RealSort()
        if kind == "named":
            if t[1] not in self.prog.types:
                raise BplError(f"unknown type {t[1]}")
            return self.sort(self.prog.types[t[1]])
        if kind == "map":
            dom, rng = t[1], t[2]
            if len(dom) != 1:
                raise BplError("multi-index maps are not supported")
            return z3.ArraySort(self.sort(dom[0]), self.sort(rng))
        raise BplError(f"bad type {t}")

    def expr(self, e: tuple, env: dict[str, z3.ExprRef]) -> z3.ExprRef:
        k = e[0]
        if k == "int":
            return z3.IntVal(e[1])
        if k == "bool":
            return z3.BoolVal(e[1])
        if k == "id":
            name = e[1]
            if name in env:
                return env[name]
            if name in self.values:
                return z3.IntVal(self.values[name])
            if name in self.consts:
                return self.consts[name]
            raise BplError(f"undeclared identifier {name}")
        if k == "sel":
            m = self.expr(e[1], env)
            for i in e[2]:
                m = z3.Select(m, self.expr(i, env))
            return m
        if k == "store":
            m = self.expr(e[1], env)
            if len(e[2]) != 1:
                raise BplError("multi-index map update is not supported")
            return z3.Store(m, self.expr(e[2][0], env), self.expr(e[3], env))
        if k == "call":
            name, args = e[1], [self.expr(a, env) for a in e[2]]
            if name == "real":
                return z3.ToReal(args[0])
            if name not in self.funcs:
                if name in self.consts and not args:
                    return self.consts[name]
                raise BplError(f"undeclared function {name}")
            return self.funcs[name](*args)
        if k == "un":
            a = self.expr(e[2], env)
            return z3.Not(a) if e[1] == "!" else -a
        if k == "bin":
            op = e[1]
            a, b = self.expr(e[2], env), self.expr(e[3], env)
            if op == "&&":
                return z3.And(a, b)
            if op == "||":
                return z3.Or(a, b)
            if op == "==>":
                return z3.Implies(a, b)
            if op == "<==>":
                return a == b
            if op == "==":
                return a == b
            if op == "!=":
                return a != b
            if op == "<":
                return a < b
            if op == "<=":
                return a <= b
            if op == ">":
                return a > b
            if op == ">=":
                return a >= b
            if op == "+":
                return a + b
            if op == "-":
                return a - b
            if op == "*":
                return a * b
            if op == "/":
                return z3.ToReal(a) / z3.ToReal(b) if a.is_int() or b.is_int() else a / b
            if op == "div":
                return a / b
            if op == "mod":
                return a % b
        if k == "ite":
            return z3.If(self.expr(e[1], env), self.expr(e[2], env), self.expr(e[3], env))
        if k == "q":
            inner = dict(env)
            bound = []
            for name, t in e[2]:
                v = z3.Const(name, self.sort(t))
                inner[name] = v
                bound.append(v)
            body = self.expr(e[3], inner)
            return z3.ForAll(bound, body) if e[1] == "forall" else z3.Exists(bound, body)
        raise BplError(f"bad expression {e}")


@dataclass
class Outcome:
    verified: bool
    failures: list[Stmt]
    unknown: bool = False
    timed_out: bool = False


def _assign_target(lhs: tuple, value: z3.ExprRef, env: dict[str, z3.ExprRef], tr: Translator) -> tuple[str, z3.ExprRef]:
    if lhs[0] == "id":
        return lhs[1], value
    if lhs[0] == "sel":
        base = lhs[1]
        (idx,) = lhs[2]
        m = tr.expr(base, env)
        new = z3.Store(m, tr.expr(idx, env), value)
        return _assign_target(base, new, env, tr)
    raise BplError("bad assignment target")


DEFAULT_MAX_INSTANCES = 100_000


def check_program(prog: Program, timeout_s: float = 60.0,
                  max_instances: int = DEFAULT_MAX_INSTANCES) -> list[tuple[str, Outcome]]:
    """Check every assert of every procedure.

    An assert is verified only when its negation is unsat.  ``max_instances``
    bounds quantifier instantiation; running out of it, like any other
    ``unknown``, counts as a failed assert.  Only exhausting ``timeout_s``
    marks the outcome as timed out.
    """
    tr = Translator(prog)
    results = []
    for name, locals_, body in prog.procedures:
        # e-matching only, as Boogie configures z3: an assert the triggers
        # cannot discharge comes back unknown instead of searching for a model
        solver = z3.Solver()
        solver.set("timeout", int(timeout_s * 1000))
        solver.set("mbqi", False)
        solver.set("qi.max_instances", max_instances)
        started = time.monotonic()
        for ax in prog.axioms:
            solver.add(tr.expr(ax, {}))
        env: dict[str, z3.ExprRef] = {}
        versions: dict[str, int] = {}

        def fresh(var: str, t: tuple) -> z3.ExprRef:
            versions[var] = versions.get(var, -1) + 1
            return z3.Const(f"{var}@{versions[var]}", tr.sort(t))

        types: dict[str, tuple] = {}
        for g, (t, _) in prog.globals.items():
            env[g] = fresh(g, t)
            types[g] = t
        for g, (t, where) in prog.globals.items():
            if where is not None:
                solver.add(tr.expr(where, env))
        for var, t, where in locals_:
            env[var] = fresh(var, t)
            types[var] = t
            if where is not None:
                solver.add(tr.expr(where, env))
        failures = []
        unknown = timed_out = False
        for st in body:
            if st.kind == "assume":
                solver.add(tr.expr(st.expr, env))
            elif st.kind == "assert":
                cond = tr.expr(st.expr, env)
                remaining = timeout_s - (time.monotonic() - started)
                solver.set("timeout", max(1, int(remaining * 1000)))
                solver.push()
                solver.add(z3.Not(cond))
                res = solver.check()
                solver.pop()
                if res != z3.unsat:
                    failures.append(st)
                    if res == z3.unknown:
                        unknown = True
                        if time.monotonic() - started >= timeout_s:
                            timed_out = True
                solver.add(cond)
            elif st.kind == "havoc":
                for n in st.names:
                    env[n] = fresh(n, types[n])
            else:
                value = tr.expr(st.expr, env)
                var, new = _assign_target(st.lhs, value, env, tr)
                if var not in types:
                    raise BplError(f"line {st.line}: assignment to undeclared {var}")
                v = fresh(var, types[var])
                solver.add(v == new)
                env[var] = v
        results.append((name, Outcome(not failures, failures, unknown, timed_out)))
    return results


def check_text(text: str, timeout_s: float = 60.0,
               max_instances: int = DEFAULT_MAX_INSTANCES) -> list[tuple[str, Outcome]]:
    return check_program(Parser(text).program(), timeout_s, max_instances)


def main(argv: list[str] | None = None) -> int:
    ap = argparse.ArgumentParser(prog="python -m tct.z3check", description=__doc__.split("\n")[0])
    ap.add_argument("file")
    ap.add_argument("--timeout", type=float, default=60.0, help="seconds per procedure")
    ap.add_argument("--max-instances", type=int, default=DEFAULT_MAX_INSTANCES,
                    help="quantifier instantiation budget per procedure")
    args = ap.parse_args(argv)
    try:
        with open(args.file) as fh:
            results = check_text(fh.read(), args.timeout, args.max_instances)
    except (OSError, BplError) as exc:
        print(f"{args.file}: parse error: {exc}")
        return 2
    verified = errors = 0
    for name, out in results:
        if out.verified:
            verified += 1
            continue
        errors += 1
        if out.timed_out:
            print(f"{args.file}: Verification of '{name}' timed out")
        for st in out.failures:
            print(f"{args.file}({st.line},{st.col}): Error: this assertion could not be proved")
    print(f"\nBoogie program verifier finished with {verified} verified, {errors} error{'s' if errors != 1 else ''}")
    return 0 if errors == 0 else 1


if __name__ == "__main__":
    sys.exit(main())
